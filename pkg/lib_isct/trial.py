#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      trial
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Multi-arm in-silico clinical trials on digital twins of
#              clinical records
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

import hashlib
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .cohort import generate_cohort, load_cohort
from .config import file_sha256, read_yaml, resolve_input
from .errors import ConfigError, TrialStageError, ValidationError
from .isct_lib import BUILTIN_MODELS, COMPARATOR_DAILY_DOSE
from .messages import _, message, verbose, warning
from .model import load_model
from .monitors import properties_from_data, validate_properties
from .parallel import map_in_threadpool
from .records import ExclusionCriteria, ExclusionReason, apply_exclusion, ingest
from .search import (
    DoseMenu,
    SearchConfig,
    TreatmentPlan,
    evaluate_plan,
    load_plan,
    optimise,
)
from .simulation import SimulationConfig
from .twins import MatchConfig, compute_twins, save_twin_sets

EVALUATION_TWIN_RULES = ("top-accepted", "all-accepted")
STRATEGIES = ("fixed", "personalised")
ROW_COLUMNS = [
    "patient_id",
    "arm",
    "status",
    "success",
    "goal_time",
    "total_drug",
    "length_used",
    "nodes_expanded",
    "twin_count",
    "evaluated_twins",
    "excluded_reason",
]
AGGREGATE_COLUMNS = [
    "arm",
    "n",
    "successes",
    "success_rate",
    "mean_goal_time",
    "median_goal_time",
    "mean_total_drug",
    "median_total_drug",
]
VERDICT_COLUMNS = ["patient_id", "arm", "vp_id", "property", "status", "witness"]


@dataclass(frozen=True)
class TrialArm:
    """A treatment strategy

    Attributes:
        name (str): Unique arm name
        strategy (str): "fixed" or "personalised"
        plan (TreatmentPlan): Plan of a fixed arm
        search (SearchConfig): Search settings of a personalised arm
    """

    name: str
    strategy: str
    plan: TreatmentPlan = None
    search: SearchConfig = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"arm <{self.name}> has unknown strategy <{self.strategy}>"
            )
        if self.strategy == "fixed" and self.plan is None:
            raise ConfigError(f"fixed arm <{self.name}> has no plan")
        if self.strategy == "personalised" and self.search is None:
            raise ConfigError(f"personalised arm <{self.name}> has no search settings")


@dataclass(frozen=True)
class TrialConfig:
    """Everything a trial run needs, with inputs already loaded

    Attributes:
        model (ModelDefinition): Patient model
        cohort (Cohort): Virtual patients
        records_path (str): Clinical records CSV
        exclusion (ExclusionCriteria): Patient exclusion criteria
        match (MatchConfig): Digital twin matching settings
        properties (list): Invariants and goals
        horizon (int): Treatment days
        menu (DoseMenu): Allowed daily amounts
        arms (tuple): TrialArm entries, at least one fixed
        evaluation_twin (str): "top-accepted" or "all-accepted"
        seed (int): Seed of the stochastic components
        workers (int): Patients processed in parallel
        simulation (SimulationConfig): Integrator settings
        trajectories (bool): Keep per-patient trajectories for the report
        provenance (dict): Hashes of the config and its input files
    """

    model: object
    cohort: object
    records_path: str
    exclusion: ExclusionCriteria
    match: MatchConfig
    properties: list
    horizon: int
    menu: DoseMenu
    arms: tuple
    evaluation_twin: str = "top-accepted"
    seed: int = 0
    workers: int = 1
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    trajectories: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.arms) < 2:
            raise ConfigError("a trial needs at least two arms")
        names = [arm.name for arm in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError("arm names must be unique")
        if not any(arm.strategy == "fixed" for arm in self.arms):
            raise ConfigError("a trial needs a fixed comparator arm")
        if self.evaluation_twin not in EVALUATION_TWIN_RULES:
            raise ConfigError(f"unknown evaluation twin rule <{self.evaluation_twin}>")
        self.menu.check_model(self.model)
        self.cohort.check_model(self.model)
        validate_properties(self.properties, self.model, float(self.horizon))
        for arm in self.arms:
            if arm.plan is not None:
                arm.plan.check_menu(self.menu)
                if arm.plan.horizon != self.horizon:
                    raise ConfigError(
                        f"plan of arm <{arm.name}> covers {arm.plan.horizon} "
                        f"days, the trial {self.horizon}"
                    )


@dataclass(frozen=True)
class TrialRow:
    """One patient under one arm; twin_count counts the accepted twins,
    evaluated_twins those the arm was scored on"""

    patient_id: str
    arm: str
    status: str
    success: bool
    goal_time: float = None
    total_drug: float = None
    length_used: int = None
    nodes_expanded: int = 0
    twin_count: int = 0
    evaluated_twins: int = 0
    excluded_reason: str = None

    @property
    def excluded(self):
        return self.excluded_reason is not None


@dataclass
class TrialReport:
    rows: list
    aggregates: list
    provenance: dict
    twin_sets: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)


def _section(data, key, base, what):
    """Inline mapping or the content of a referenced YAML file"""
    value = data.get(key)
    if isinstance(value, str):
        path = resolve_input(value, base)
        return read_yaml(path, what), path
    return value, None


def load_trial_config(path, workers=None, seed=None):
    """Read a trial config file

    Relative paths inside the file refer to its directory.

    Args:
        path (str): Trial config YAML
        workers (int): Overrides the configured worker count
        seed (int): Overrides the configured seed

    Returns:
        TrialConfig: The loaded trial
    """
    path = resolve_input(path)
    base = os.path.dirname(os.path.abspath(path))
    data = read_yaml(path, "trial config")
    if not isinstance(data, dict):
        raise ConfigError(f"trial config <{path}> must be a mapping")
    return trial_config_from_dict(
        data, base, file_sha256(path), workers=workers, seed=seed
    )


def trial_config_from_dict(data, base, config_hash=None, workers=None, seed=None):
    """Build a TrialConfig from a loaded config mapping"""
    known = {
        "model",
        "cohort",
        "records",
        "exclusion",
        "match",
        "properties",
        "horizon",
        "menu",
        "arms",
        "evaluation_twin",
        "seed",
        "workers",
        "simulation",
        "trajectories",
    }
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown trial settings {unknown}")
    for key in ("model", "cohort", "records", "properties", "horizon", "menu", "arms"):
        if key not in data:
            raise ConfigError(f"trial config lacks <{key}>")
    inputs = {}

    def track(kind, file_path):
        if file_path is not None:
            inputs[kind] = file_sha256(file_path)

    seed = int(data.get("seed", 0) if seed is None else seed)
    model_ref = str(data["model"])
    if model_ref in BUILTIN_MODELS:
        model = load_model(model_ref)
    else:
        model_path = resolve_input(model_ref, base)
        model = load_model(model_path)
        track("model", model_path)
    simulation = SimulationConfig.from_dict(data.get("simulation"))
    if isinstance(data["cohort"], dict):
        spec = dict(data["cohort"])
        cohort = generate_cohort(
            model,
            model.default_params(),
            dict(spec.get("spread") or {}),
            int(spec.get("size", 1)),
            int(spec.get("seed", seed)),
        )
    else:
        cohort_path = resolve_input(data["cohort"], base)
        cohort = load_cohort(cohort_path, model)
        track("cohort", cohort_path)
    records_path = resolve_input(data["records"], base)
    track("records", records_path)
    exclusion, exclusion_path = _section(data, "exclusion", base, "exclusion criteria")
    track("exclusion", exclusion_path)
    match, match_path = _section(data, "match", base, "match config")
    track("match", match_path)
    properties, properties_path = _section(data, "properties", base, "property file")
    track("properties", properties_path)
    menu, menu_path = _section(data, "menu", base, "dose menu")
    track("menu", menu_path)
    menu = DoseMenu.from_dict(menu)
    horizon = int(data["horizon"])
    arms = []
    for entry in data["arms"] or []:
        entry = dict(entry)
        name = str(entry.get("name", ""))
        strategy = str(entry.get("strategy", ""))
        if strategy == "fixed":
            if "plan" in entry:
                plan_path = resolve_input(entry["plan"], base)
                track(f"plan:{name}", plan_path)
                plan = load_plan(plan_path)
            else:
                plan = TreatmentPlan.constant(
                    menu, entry.get("daily_dose", COMPARATOR_DAILY_DOSE), horizon
                )
            arms.append(TrialArm(name, strategy, plan=plan))
        else:
            settings = {"horizon": horizon, **(entry.get("search") or {})}
            arms.append(
                TrialArm(
                    name,
                    strategy,
                    search=SearchConfig.from_dict(settings, menu, simulation),
                )
            )
    if config_hash is None:
        config_hash = hashlib.sha256(
            yaml.safe_dump(data, sort_keys=True).encode("utf-8")
        ).hexdigest()
    return TrialConfig(
        model=model,
        cohort=cohort,
        records_path=records_path,
        exclusion=ExclusionCriteria.from_dict(exclusion),
        match=MatchConfig.from_dict(match),
        properties=properties_from_data(properties),
        horizon=horizon,
        menu=menu,
        arms=tuple(arms),
        evaluation_twin=str(data.get("evaluation_twin", "top-accepted")),
        seed=seed,
        workers=int(data.get("workers", 1) if workers is None else workers),
        simulation=simulation,
        trajectories=bool(data.get("trajectories", False)),
        provenance={
            "config_sha256": config_hash,
            "inputs": dict(sorted(inputs.items())),
        },
    )


def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except ValidationError as err:
        raise TrialStageError(name, err)


def _evaluation_twins(cfg, twins):
    if cfg.evaluation_twin == "top-accepted":
        return twins[:1]
    return twins


def _run_arm(cfg, arm, record, twins):
    """Rows, verdict rows and trajectory of one patient under one arm"""
    evaluation = _evaluation_twins(cfg, twins)
    nodes = 0
    if arm.strategy == "fixed":
        plan = arm.plan
        status = None
    else:
        result = optimise(cfg.model, twins, cfg.properties, arm.search)
        nodes = result.stats.nodes_expanded
        plan = result.plan
        status = result.status
    outcome = None
    if plan is not None:
        outcome = evaluate_plan(
            cfg.model, evaluation, cfg.properties, plan, cfg.simulation
        )
    success = outcome is not None and outcome.feasible
    if status is None:
        status = "feasible" if success else "infeasible"
    row = TrialRow(
        record.patient_id,
        arm.name,
        status,
        success,
        outcome.cost.goal_time if success else None,
        outcome.cost.total_drug if success else None,
        outcome.cost.length_used if success else None,
        nodes,
        len(twins),
        len(evaluation),
    )
    verdicts = []
    trajectory = None
    if outcome is not None:
        for vp, results in zip(evaluation, outcome.verdicts):
            for verdict in results:
                verdicts.append(
                    (
                        record.patient_id,
                        arm.name,
                        vp.id,
                        verdict.property,
                        verdict.status.value,
                        verdict.witness,
                    )
                )
        trajectory = outcome.trajectories[0]
    if not success:
        verbose(f"Arm <{arm.name}> failed on <{record.patient_id}>: {status}")
    return row, verdicts, trajectory


def _run_patient(cfg, record, twin_set):
    twins = [cfg.cohort.get(vp_id) for vp_id in twin_set.accepted_ids]
    return [_run_arm(cfg, arm, record, twins) for arm in cfg.arms]


def run_trial(cfg):
    """Run every arm on every admitted patient

    Records are ingested and filtered by the exclusion criteria, digital
    twins are computed, patients without a twin are excluded and every
    remaining patient is treated by every arm on its evaluation twins.

    Args:
        cfg (TrialConfig): The trial

    Returns:
        TrialReport: Rows in patient order (arms in config order), per arm
                     aggregates and provenance
    """
    records = _stage("ingest", ingest, cfg.records_path, cfg.model)
    kept, excluded = _stage("exclusion", apply_exclusion, records, cfg.exclusion)
    message(_(f"Computing digital twins of {len(kept)} patients"))
    twin_sets = _stage(
        "twins",
        map_in_threadpool,
        lambda record: compute_twins(
            cfg.cohort, record, cfg.model, cfg.match, cfg.simulation
        ),
        kept,
        cfg.workers,
    )
    excluded_rows = [
        TrialRow(record.patient_id, "", "excluded", False, excluded_reason=reason.value)
        for record, reason in excluded
    ]
    admitted = []
    for record, twin_set in zip(kept, twin_sets):
        if twin_set.has_twin:
            admitted.append((record, twin_set))
        else:
            warning(_(f"Patient <{record.patient_id}> has no digital twin"))
            excluded_rows.append(
                TrialRow(
                    record.patient_id,
                    "",
                    "excluded",
                    False,
                    excluded_reason=ExclusionReason.NO_DIGITAL_TWIN.value,
                )
            )
    message(_(f"Running {len(cfg.arms)} arms on {len(admitted)} patients"))
    results = _stage(
        "arms",
        map_in_threadpool,
        lambda item: _run_patient(cfg, *item),
        admitted,
        cfg.workers,
    )
    rows = list(excluded_rows)
    verdicts = []
    trajectories = {}
    for (record, _twin_set), arm_results in zip(admitted, results):
        for arm, (row, arm_verdicts, trajectory) in zip(cfg.arms, arm_results):
            rows.append(row)
            verdicts.extend(arm_verdicts)
            if cfg.trajectories and trajectory is not None:
                trajectories[(record.patient_id, arm.name)] = trajectory
    arm_order = {arm.name: index for index, arm in enumerate(cfg.arms)}
    rows.sort(key=lambda row: (row.patient_id, arm_order.get(row.arm, -1)))
    provenance = {
        **cfg.provenance,
        "seed": cfg.seed,
        "version": __version__,
        "patients": {
            "ingested": len(records),
            "admitted": len(admitted),
            "excluded": len(excluded_rows),
        },
    }
    return TrialReport(
        rows,
        summarise(rows, [arm.name for arm in cfg.arms]),
        provenance,
        twin_sets=list(twin_sets),
        verdicts=verdicts,
        trajectories=trajectories,
    )


def lower_median(values):
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def summarise(rows, arms=None):
    """Per-arm aggregates of trial rows

    Excluded rows do not count. Means and lower medians of goal time and
    total drug are taken over successful rows only.

    Args:
        rows (list): TrialRow entries
        arms (list): Arm names in report order, by default in order of
                     first appearance

    Returns:
        list: One dict per arm with the AGGREGATE_COLUMNS keys
    """
    if not rows:
        raise ValidationError("cannot summarise a trial without rows")
    evaluated = [row for row in rows if not row.excluded]
    if arms is None:
        arms = list(dict.fromkeys(row.arm for row in evaluated))
    aggregates = []
    for arm in arms:
        arm_rows = [row for row in evaluated if row.arm == arm]
        wins = [row for row in arm_rows if row.success]
        goal_times = [row.goal_time for row in wins]
        drugs = [row.total_drug for row in wins]
        aggregates.append(
            {
                "arm": arm,
                "n": len(arm_rows),
                "successes": len(wins),
                "success_rate": len(wins) / len(arm_rows) if arm_rows else None,
                "mean_goal_time": float(np.mean(goal_times)) if wins else None,
                "median_goal_time": lower_median(goal_times) if wins else None,
                "mean_total_drug": float(np.mean(drugs)) if wins else None,
                "median_total_drug": lower_median(drugs) if wins else None,
            }
        )
    return aggregates


def _rows_frame(rows):
    return pd.DataFrame(
        [
            (
                row.patient_id,
                row.arm,
                row.status,
                row.success,
                row.goal_time,
                row.total_drug,
                row.length_used,
                row.nodes_expanded,
                row.twin_count,
                row.evaluated_twins,
                row.excluded_reason,
            )
            for row in rows
        ],
        columns=ROW_COLUMNS,
    ).astype({"length_used": "Int64"})


def _summary(report):
    return {
        "engine": "isct",
        "provenance": report.provenance,
        "aggregates": report.aggregates,
    }


def write_report(report, out_dir, rm_dirs=None):
    """Write the report files into out_dir

    The files are written to a temporary directory inside out_dir and
    moved into place once all of them are complete.

    Args:
        report (TrialReport): Trial outcome
        out_dir (str): Output directory, created when missing
        rm_dirs (list): Collects the temporary directory for cleanup at exit

    Returns:
        list: Paths of the written files
    """
    os.makedirs(out_dir, exist_ok=True)
    tmp_dir = tempfile.mkdtemp(prefix=".isct_trial_", dir=out_dir)
    if rm_dirs is not None:
        rm_dirs.append(tmp_dir)
    try:
        _rows_frame(report.rows).to_csv(
            os.path.join(tmp_dir, "rows.csv"), index=False
        )
        pd.DataFrame(report.aggregates, columns=AGGREGATE_COLUMNS).to_csv(
            os.path.join(tmp_dir, "aggregates.csv"), index=False
        )
        pd.DataFrame(report.verdicts, columns=VERDICT_COLUMNS).to_csv(
            os.path.join(tmp_dir, "verdicts.csv"), index=False
        )
        save_twin_sets(report.twin_sets, os.path.join(tmp_dir, "twins.csv"))
        summary_path = os.path.join(tmp_dir, "summary.yaml")
        with open(summary_path, "w", encoding="utf-8") as stream:
            yaml.safe_dump(_summary(report), stream, sort_keys=False)
        if report.trajectories:
            os.makedirs(os.path.join(tmp_dir, "trajectories"))
            for (patient_id, arm), trajectory in sorted(report.trajectories.items()):
                trajectory.to_csv(
                    os.path.join(tmp_dir, "trajectories", f"{patient_id}__{arm}.csv")
                )
        written = []
        for name in sorted(os.listdir(tmp_dir)):
            target = os.path.join(out_dir, name)
            if os.path.isdir(target):
                shutil.rmtree(target)
            os.replace(os.path.join(tmp_dir, name), target)
            written.append(target)
    finally:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        if rm_dirs is not None and tmp_dir in rm_dirs:
            rm_dirs.remove(tmp_dir)
    message(_(f"Trial report written to <{out_dir}>"))
    return written


def run(config_path, out_dir, workers=None, seed=None, rm_dirs=None):
    """Load a trial config, run the trial and write its report"""
    cfg = _stage("config", load_trial_config, config_path, workers=workers, seed=seed)
    report = run_trial(cfg)
    write_report(report, out_dir, rm_dirs)
    return report
