#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      cli
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Command line entry point of the isct toolset: simulate,
#              cohort, records, twins, optimize and trial
# COPYRIGHT:   (C) 2026 by the isct.treatment developers
#
# This program is free software; you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation; either version 2 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
############################################################################

import argparse
import os
import shutil
import sys

import numpy as np
import yaml

from . import __version__
from .cohort import (
    filter_plausible,
    generate_cohort,
    load_bounds,
    load_cohort,
    save_cohort,
)
from .config import read_yaml, resolve_input
from .errors import (
    CheckpointIncompatibleError,
    SimulationDivergedError,
    ValidationError,
)
from .isct_lib import BUILTIN_MODELS, EXIT_CODES, SEARCH_DEFAULTS
from .messages import _, configure, fatal, message, verbose
from .model import load_model
from .monitors import load_properties
from .records import (
    apply_exclusion,
    ingest,
    load_exclusion_criteria,
    save_records,
    synthesise_record,
)
from .search import (
    FEASIBLE_BUDGET_EXHAUSTED,
    OPTIMAL,
    SearchConfig,
    load_menu,
    load_plan,
    optimise,
    save_plan,
)
from .simulation import SimulationConfig, load_doses, simulate
from .trial import run as run_trial
from .twins import compute_twins, load_match_config, load_twin_sets, save_twin_sets

# set global variables
rm_files = []
rm_dirs = []

SEARCH_EXIT_CODES = {
    OPTIMAL: EXIT_CODES["SUCCESS"],
    FEASIBLE_BUDGET_EXHAUSTED: EXIT_CODES["FEASIBLE"],
}


def cleanup():
    """Remove half-written outputs"""
    for path in rm_files:
        if os.path.isfile(path):
            os.remove(path)
    for path in rm_dirs:
        if os.path.isdir(path):
            shutil.rmtree(path, ignore_errors=True)


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser reporting usage errors with the validation exit code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CODES["VALIDATION"], f"{self.prog}: error: {message}\n")


def _input(path):
    return resolve_input(path) if path else None


def _output(path):
    """Check that the directory of an output file exists"""
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise ValidationError(f"output directory <{directory}> does not exist")
    return path


def _write(path, writer, *args):
    """Write an output file via a temporary file in the same directory"""
    tmp = f"{path}.tmp{os.getpid()}"
    rm_files.append(tmp)
    writer(*args, tmp)
    os.replace(tmp, path)
    rm_files.remove(tmp)
    message(_(f"Written <{path}>"))


def _model(name):
    if name in BUILTIN_MODELS:
        return load_model(name)
    return load_model(resolve_input(name))


def _cohort_and_model(args):
    """Cohort of --cohort and its model, or the --model override"""
    path = _input(args.cohort)
    model = _model(args.model) if args.model else None
    cohort = load_cohort(path, model)
    return cohort, model or load_model(cohort.model_name)


def _simulation_config(args):
    data = {}
    if getattr(args, "simulation", None):
        data.update(read_yaml(_input(args.simulation), "simulation config") or {})
    for key in ("method", "step", "output_grid"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return SimulationConfig.from_dict(data)


def _workers(args):
    return 1 if args.workers is None else args.workers


def _ids(text):
    return [item.strip() for item in text.split(",") if item.strip()] if text else None


def _times(value):
    """Sample times from a comma separated list or a file, one per line"""
    try:
        return [float(t) for t in _ids(value)]
    except ValueError:
        pass
    path = _input(value)
    try:
        times = np.loadtxt(path, dtype=float, comments="#", ndmin=1)
    except ValueError as err:
        raise ValidationError(f"cannot read sample times from <{path}>: {err}")
    return [float(t) for t in times]


def cmd_simulate(args):
    model = _model(args.model)
    cfg = _simulation_config(args)
    out = _output(args.out)
    params = list(model.default_params())
    if args.cohort:
        if not args.vp:
            raise ValidationError("--cohort needs --vp")
        params = list(load_cohort(_input(args.cohort), model).get(args.vp).params)
    if args.params:
        overrides = read_yaml(_input(args.params), "parameter file") or {}
        for name, value in overrides.items():
            if name not in model.param_names:
                raise ValidationError(f"unknown parameter <{name}>")
            params[model.param_names.index(name)] = float(value)
    doses = []
    if args.doses:
        doses.extend(load_doses(_input(args.doses)))
    if args.plan:
        doses.extend(load_plan(_input(args.plan)).to_doses())
    trajectory = simulate(
        model, params, model.initial_state(), doses, float(args.horizon), cfg
    )
    _write(out, trajectory.to_csv)
    return EXIT_CODES["SUCCESS"]


def cmd_cohort_gen(args):
    model = _model(args.model)
    out = _output(args.out)
    spread = {}
    if args.spread:
        spread = read_yaml(_input(args.spread), "spread file") or {}
    cohort = generate_cohort(
        model, model.default_params(), spread, args.size, args.seed
    )
    _write(out, save_cohort, cohort)
    return EXIT_CODES["SUCCESS"]


def cmd_cohort_filter(args):
    cohort, model = _cohort_and_model(args)
    bounds = load_bounds(_input(args.bounds))
    out = _output(args.out)
    kept = filter_plausible(
        cohort,
        model,
        bounds,
        float(args.horizon),
        _simulation_config(args),
        _workers(args),
    )
    _write(out, save_cohort, kept)
    return EXIT_CODES["SUCCESS"]


def cmd_records_validate(args):
    records_path = _input(args.records)
    model = _model(args.model) if args.model else None
    criteria = None
    if args.exclusion:
        criteria = load_exclusion_criteria(_input(args.exclusion))
    records = ingest(records_path, model)
    summary = {
        "patients": len(records),
        "measurements": sum(len(record.measurements) for record in records),
    }
    if criteria is not None:
        kept, excluded = apply_exclusion(records, criteria)
        summary["kept"] = [record.patient_id for record in kept]
        summary["excluded"] = {
            record.patient_id: reason.value for record, reason in excluded
        }
    yaml.safe_dump(summary, sys.stdout, sort_keys=False)
    return EXIT_CODES["SUCCESS"]


def cmd_records_synth(args):
    cohort, model = _cohort_and_model(args)
    out = _output(args.out)
    doses = load_doses(_input(args.doses)) if args.doses else []
    if args.times:
        times = _times(args.times)
    else:
        times = [float(day) for day in range(args.days + 1)]
    vp_ids = _ids(args.vp) or list(cohort.ids)
    records = [
        synthesise_record(
            cohort.get(vp_id),
            model,
            times,
            args.noise,
            args.seed + index,
            observables=_ids(args.observables),
            doses=doses,
            cfg=_simulation_config(args),
        )
        for index, vp_id in enumerate(vp_ids)
    ]
    _write(out, save_records, records)
    return EXIT_CODES["SUCCESS"]


def cmd_twins(args):
    cohort, model = _cohort_and_model(args)
    records_path = _input(args.records)
    match = load_match_config(_input(args.config))
    out = _output(args.out)
    cfg = _simulation_config(args)
    twin_sets = [
        compute_twins(cohort, record, model, match, cfg, _workers(args))
        for record in ingest(records_path, model)
    ]
    _write(out, save_twin_sets, twin_sets)
    return EXIT_CODES["SUCCESS"]


def _optimise_twins(args, cohort):
    if args.vp:
        return [cohort.get(vp_id) for vp_id in _ids(args.vp)]
    if not args.twin_set:
        raise ValidationError("optimize needs --twin-set or --vp")
    twin_sets = load_twin_sets(_input(args.twin_set))
    if args.patient is None:
        if len(twin_sets) != 1:
            raise ValidationError("twin set file holds several patients, use --patient")
        twin_set = next(iter(twin_sets.values()))
    elif args.patient in twin_sets:
        twin_set = twin_sets[args.patient]
    else:
        raise ValidationError(f"no twin set of patient <{args.patient}>")
    if not twin_set.has_twin:
        raise ValidationError(f"patient <{twin_set.patient_id}> has no digital twin")
    return [cohort.get(vp_id) for vp_id in twin_set.accepted_ids]


def cmd_optimize(args):
    cohort, model = _cohort_and_model(args)
    properties = load_properties(_input(args.properties))
    menu = load_menu(_input(args.menu))
    out = _output(args.out) if args.out else None
    twins = _optimise_twins(args, cohort)
    cfg = SearchConfig(
        args.horizon,
        menu,
        "all-accepted-twins" if args.robust == "all" else "best-twin",
        args.budget,
        args.decision_order,
        args.backtracking,
        _simulation_config(args),
    )
    result = optimise(model, twins, properties, cfg)
    summary = {
        "status": result.status,
        "twins": [vp.id for vp in (twins if args.robust == "all" else twins[:1])],
        "cost": None
        if result.plan is None
        else {
            "goal_time": result.cost.goal_time,
            "total_drug": result.cost.total_drug,
            "length_used": result.cost.length_used,
        },
        "stats": {
            "nodes_expanded": result.stats.nodes_expanded,
            "days_simulated": result.stats.days_simulated,
            "backjumps": result.stats.backjumps,
            "prunes": result.stats.prunes,
        },
    }
    yaml.safe_dump(summary, sys.stdout, sort_keys=False)
    if result.plan is not None and out:
        _write(out, save_plan, result.plan)
    return SEARCH_EXIT_CODES.get(result.status, EXIT_CODES["INFEASIBLE"])


def cmd_trial_run(args):
    out = _output(os.path.abspath(args.out))
    workers = args.workers if args.trial_workers is None else args.trial_workers
    run_trial(args.config, out, workers=workers, seed=args.seed, rm_dirs=rm_dirs)
    return EXIT_CODES["SUCCESS"]


def _add_seed_flag(parser):
    # SUPPRESS keeps a --seed given before the subcommand
    parser.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="Seed (default 0)"
    )


def _add_simulation_flags(parser):
    parser.add_argument("--simulation", help="YAML file with integrator settings")
    parser.add_argument("--method", choices=["rk4-fixed", "rkf45-adaptive"])
    parser.add_argument("--step", type=float, help="Integrator step (days)")
    parser.add_argument("--output-grid", type=float, help="Sample spacing (days)")


def build_parser():
    """Argument parser of all subcommands"""
    parser = ArgumentParser(
        prog="isct", description="In-silico clinical trials of personalised treatments"
    )
    parser.add_argument("--version", action="version", version=f"isct {__version__}")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Verbosity of the messages on standard error",
    )
    parser.add_argument(
        "--seed", type=int, help="Seed of stochastic components (default 0)"
    )
    parser.add_argument(
        "--workers", type=int, help="Parallel workers, 0 for all physical cores"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="Simulate a model")
    sim.add_argument("--model", required=True, help="Built-in model name or model file")
    sim.add_argument("--horizon", type=float, required=True, help="Horizon (days)")
    sim.add_argument("--out", required=True, help="Trajectory CSV")
    sim.add_argument("--doses", help="CSV time,drug,amount")
    sim.add_argument("--plan", help="Plan CSV day,drug,amount")
    sim.add_argument("--cohort", help="Cohort file to take --vp from")
    sim.add_argument("--vp", help="Virtual patient id")
    sim.add_argument("--params", help="YAML mapping of parameter overrides")
    _add_simulation_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    cohort = commands.add_parser("cohort", help="Virtual patient cohorts")
    cohort_cmds = cohort.add_subparsers(dest="action", required=True)
    gen = cohort_cmds.add_parser("gen", help="Generate a cohort")
    gen.add_argument("--model", required=True)
    gen.add_argument("--n", "--size", dest="size", type=int, required=True)
    _add_seed_flag(gen)
    gen.add_argument("--spread", help="YAML mapping parameter -> relative half-width")
    gen.add_argument("--out", required=True, help="Cohort file")
    gen.set_defaults(func=cmd_cohort_gen)
    filt = cohort_cmds.add_parser("filter", help="Keep plausible members")
    filt.add_argument("--cohort", required=True)
    filt.add_argument(
        "--bounds", required=True, help="YAML mapping observable -> [min, max]"
    )
    filt.add_argument("--horizon", type=float, required=True)
    filt.add_argument("--model")
    filt.add_argument("--out", required=True)
    _add_simulation_flags(filt)
    filt.set_defaults(func=cmd_cohort_filter)

    records = commands.add_parser("records", help="Clinical records")
    records_cmds = records.add_subparsers(dest="action", required=True)
    validate = records_cmds.add_parser("validate", help="Check a records CSV")
    validate.add_argument("--records", required=True)
    validate.add_argument("--model")
    validate.add_argument("--exclusion", help="YAML exclusion criteria")
    validate.set_defaults(func=cmd_records_validate)
    synth = records_cmds.add_parser("synth", help="Synthesise records from a cohort")
    synth.add_argument("--cohort", required=True)
    synth.add_argument("--vp", help="Comma separated virtual patient ids (default all)")
    synth.add_argument(
        "--times", help="File of sample times (days), or a comma separated list"
    )
    synth.add_argument("--days", type=int, default=14, help="Daily samples 0..days")
    synth.add_argument("--noise", type=float, default=0.0, help="Relative noise")
    synth.add_argument("--observables", help="Comma separated observables")
    synth.add_argument("--doses", help="CSV time,drug,amount")
    synth.add_argument("--model")
    synth.add_argument("--out", required=True)
    _add_seed_flag(synth)
    _add_simulation_flags(synth)
    synth.set_defaults(func=cmd_records_synth)

    twins = commands.add_parser("twins", help="Compute digital twins")
    twins.add_argument("--cohort", required=True)
    twins.add_argument("--records", required=True)
    twins.add_argument("--config", required=True, help="YAML match config")
    twins.add_argument("--model")
    twins.add_argument("--out", required=True, help="Twin set CSV")
    _add_simulation_flags(twins)
    twins.set_defaults(func=cmd_twins)

    opt = commands.add_parser("optimize", help="Search an optimal treatment plan")
    opt.add_argument("--twin-set", help="Twin set CSV")
    opt.add_argument("--patient", help="Patient of the twin set file")
    opt.add_argument("--vp", help="Comma separated twin ids instead of a twin set")
    opt.add_argument("--cohort", required=True)
    opt.add_argument("--properties", required=True)
    opt.add_argument("--menu", required=True)
    opt.add_argument("--horizon", type=int, required=True)
    opt.add_argument("--robust", choices=["best", "all"], default="best")
    opt.add_argument("--budget", type=int, default=SEARCH_DEFAULTS["node_budget"])
    opt.add_argument(
        "--decision-order",
        choices=["descending-dose", "ascending-dose"],
        default=SEARCH_DEFAULTS["decision_order"],
    )
    opt.add_argument(
        "--backtracking",
        choices=["backjump", "chronological"],
        default=SEARCH_DEFAULTS["backtracking"],
    )
    opt.add_argument("--model")
    opt.add_argument("--out", help="Plan CSV")
    _add_simulation_flags(opt)
    opt.set_defaults(func=cmd_optimize)

    trial = commands.add_parser("trial", help="In-silico clinical trials")
    trial_cmds = trial.add_subparsers(dest="action", required=True)
    run = trial_cmds.add_parser("run", help="Run a trial")
    run.add_argument("--config", required=True, help="Trial config YAML")
    run.add_argument("--out", required=True, help="Report directory")
    run.add_argument(
        "--workers",
        dest="trial_workers",
        type=int,
        help="Patients processed in parallel",
    )
    run.set_defaults(func=cmd_trial_run)
    return parser


def _run(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure(args.log_level)
    if args.seed is None:
        args.seed = 0
        message(_("No --seed given, using seed 0"))
    else:
        verbose(f"Using seed {args.seed}")
    try:
        return args.func(args)
    except ValidationError as err:
        fatal(str(err), EXIT_CODES["VALIDATION"])
    except SimulationDivergedError as err:
        fatal(str(err), EXIT_CODES["INFEASIBLE"])
    except CheckpointIncompatibleError as err:
        fatal(str(err), EXIT_CODES["INTERNAL"])
    except Exception as err:  # pylint: disable=broad-except
        fatal(_(f"internal error: {err!r}"), EXIT_CODES["INTERNAL"])


def dispatch(argv=None):
    """Run the isct command line

    Args:
        argv (list): Arguments without the program name

    Returns:
        int: Exit code; 0 success, 1 validation error, 2 infeasible, 3
             internal error, 4 feasible plan without optimality proof
    """
    try:
        return _run(sys.argv[1:] if argv is None else list(argv))
    except SystemExit as exc:
        if exc.code is None:
            return EXIT_CODES["SUCCESS"]
        return exc.code if isinstance(exc.code, int) else EXIT_CODES["VALIDATION"]
