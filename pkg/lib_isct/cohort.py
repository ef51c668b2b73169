#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      cohort
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Virtual patients, seeded cohort generation, plausibility
#              filtering and cohort files
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

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import CohortFileError, SimulationDivergedError, ValidationError
from .messages import _, message, warning
from .model import load_model
from .parallel import map_in_threadpool
from .simulation import simulate

PROVENANCE_KINDS = ("reference", "perturbed", "imported")


@dataclass(frozen=True)
class VirtualPatient:
    """A full parameter assignment of a model

    Attributes:
        id (str): Identifier, unique within a cohort
        params (tuple): Parameter values in model order
        provenance (dict): {"kind": reference|perturbed|imported} plus
                           "seed" and "index" for perturbed members
    """

    id: str
    params: tuple
    provenance: dict = field(default_factory=lambda: {"kind": "imported"})

    def __post_init__(self):
        if not all(math.isfinite(value) for value in self.params):
            raise ValidationError(f"virtual patient <{self.id}> has non-finite params")
        if self.provenance.get("kind") not in PROVENANCE_KINDS:
            raise ValidationError(
                f"unknown provenance <{self.provenance.get('kind')}> of "
                f"<{self.id}>"
            )

    # provenance is a dict, hash on id and params only
    def __hash__(self):
        return hash((self.id, self.params))


@dataclass(frozen=True)
class Cohort:
    model_name: str
    members: tuple
    seed: int = None

    def __post_init__(self):
        ids = [vp.id for vp in self.members]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"cohort of <{self.model_name}> has duplicate ids")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def ids(self):
        return tuple(vp.id for vp in self.members)

    def get(self, vp_id):
        for vp in self.members:
            if vp.id == vp_id:
                return vp
        raise ValidationError(f"no virtual patient <{vp_id}> in the cohort")

    def check_model(self, model):
        """Raise unless every member is a parameter vector of model"""
        if model.name != self.model_name:
            raise ValidationError(
                f"cohort is for model <{self.model_name}>, not <{model.name}>"
            )
        for vp in self.members:
            if len(vp.params) != len(model.params):
                raise ValidationError(
                    f"virtual patient <{vp.id}> has {len(vp.params)} params, "
                    f"model <{model.name}> has {len(model.params)}"
                )


def vp_id(index):
    return f"vp{index:05d}"


def spread_vector(model, spread):
    """Per-parameter relative half-widths from a name -> value mapping"""
    spread = dict(spread or {})
    unknown = sorted(set(spread) - set(model.param_names))
    if unknown:
        raise ValidationError(f"spread names unknown params {unknown}")
    values = np.array([float(spread.get(name, 0.0)) for name in model.param_names])
    if np.any(~np.isfinite(values)) or np.any(values < 0) or np.any(values >= 1):
        raise ValidationError("spread entries must lie in [0, 1)")
    return values


def generate_cohort(model, reference, spread, n, seed):
    """Generate a cohort by uniform relative perturbation of a reference

    Member 0 is the unperturbed reference; member k >= 1 draws every
    parameter j independently and uniformly from
    [ref_j (1 - spread_j), ref_j (1 + spread_j)].

    Args:
        model (ModelDefinition): Model the cohort belongs to
        reference (sequence): Reference parameter vector
        spread (sequence or dict): Relative half-widths in [0, 1), as a
                                   vector in model order or a name mapping
        n (int): Number of members
        seed (int): Seed of the random stream

    Returns:
        Cohort: The generated cohort
    """
    reference = np.asarray(reference, dtype=float)
    if reference.size == 0:
        raise ValidationError("reference parameter vector is empty")
    if reference.size != len(model.params):
        raise ValidationError(
            f"reference has {reference.size} params, model <{model.name}> "
            f"has {len(model.params)}"
        )
    if isinstance(spread, dict):
        spread = spread_vector(model, spread)
    spread = np.asarray(spread, dtype=float)
    if spread.shape != reference.shape:
        raise ValidationError("spread and reference differ in length")
    if np.any(spread < 0) or np.any(spread >= 1):
        raise ValidationError("spread entries must lie in [0, 1)")
    if int(n) < 1:
        raise ValidationError(f"cohort size must be at least 1, got {n}")
    rng = np.random.default_rng(int(seed))
    draws = rng.uniform(-1.0, 1.0, size=(int(n) - 1, reference.size))
    members = [
        VirtualPatient(
            vp_id(0), tuple(float(v) for v in reference), {"kind": "reference"}
        )
    ]
    for index, draw in enumerate(draws, start=1):
        params = reference * (1.0 + spread * draw)
        members.append(
            VirtualPatient(
                vp_id(index),
                tuple(float(v) for v in params),
                {"kind": "perturbed", "seed": int(seed), "index": index},
            )
        )
    return Cohort(model.name, tuple(members), int(seed))


def _plausibility_check(model, vp, bounds, horizon, cfg):
    try:
        trajectory = simulate(
            model, vp.params, model.initial_state(), [], horizon, cfg
        )
    except SimulationDivergedError as err:
        return False, err.time
    for name, low, high in bounds:
        values = trajectory.observable(name)
        if not np.all(np.isfinite(values) & (values >= low) & (values <= high)):
            return False, None
    return True, None


def filter_plausible(cohort, model, plausibility, horizon, cfg, workers=1):
    """Keep the members whose drug-free observables stay within bounds

    Args:
        cohort (Cohort): Cohort to filter
        model (ModelDefinition): Model of the cohort
        plausibility (list): (observable, min, max) triples
        horizon (float): Simulated span in days
        cfg (SimulationConfig): Integrator settings
        workers (int): Number of parallel simulations

    Returns:
        Cohort: The plausible members in their original order
    """
    cohort.check_model(model)
    bounds = []
    for name, low, high in plausibility:
        low, high = float(low), float(high)
        if math.isnan(low) or math.isnan(high) or low > high:
            raise ValidationError(f"invalid plausibility bounds for <{name}>")
        if name not in model.observable_names:
            raise ValidationError(f"unknown observable <{name}> in bounds")
        bounds.append((name, low, high))
    results = map_in_threadpool(
        lambda vp: _plausibility_check(model, vp, bounds, horizon, cfg),
        cohort.members,
        workers,
    )
    kept = []
    for vp, (ok, diverged_at) in zip(cohort.members, results):
        if ok:
            kept.append(vp)
        elif diverged_at is not None:
            warning(
                _(
                    f"Virtual patient <{vp.id}> diverged at t={diverged_at} "
                    "and is excluded"
                )
            )
    message(_(f"{len(kept)} of {len(cohort)} virtual patients are plausible"))
    return Cohort(cohort.model_name, tuple(kept), cohort.seed)


def load_bounds(path):
    """Read plausibility bounds: mapping observable -> [min, max]"""
    try:
        with open(path, encoding="utf-8") as stream:
            data = yaml.safe_load(stream) or {}
    except (OSError, yaml.YAMLError) as err:
        raise ValidationError(f"cannot read bounds file <{path}>: {err}")
    if not isinstance(data, dict):
        raise ValidationError(f"bounds file <{path}> must be a mapping")
    bounds = []
    for name, pair in data.items():
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ValidationError(f"bounds of <{name}> must be [min, max]")
        low = -math.inf if pair[0] is None else float(pair[0])
        high = math.inf if pair[1] is None else float(pair[1])
        bounds.append((str(name), low, high))
    return bounds


def save_cohort(cohort, path):
    """Write a cohort file (YAML, floats in round-trip precision)"""
    data = {
        "model": cohort.model_name,
        "seed": cohort.seed,
        "size": len(cohort),
        "members": [
            {
                "id": vp.id,
                "provenance": dict(vp.provenance),
                "params": [float(value) for value in vp.params],
            }
            for vp in cohort.members
        ],
    }
    with open(path, "w", encoding="utf-8") as stream:
        yaml.safe_dump(data, stream, sort_keys=False)


def load_cohort(path, model=None):
    """Read a cohort file

    Args:
        path (str): Cohort file
        model (ModelDefinition): Model to check the cohort against; by
                                 default the model named in the file is
                                 loaded

    Returns:
        Cohort: The cohort
    """
    try:
        with open(path, encoding="utf-8") as stream:
            data = yaml.safe_load(stream)
    except OSError as err:
        raise CohortFileError(f"cannot read cohort file <{path}>: {err}")
    except yaml.YAMLError as err:
        raise CohortFileError(f"cohort file <{path}> is not valid YAML: {err}")
    if not isinstance(data, dict) or not {"model", "size", "members"} <= set(data):
        raise CohortFileError(f"cohort file <{path}> lacks model, size or members")
    members = data["members"] or []
    if not isinstance(members, list) or len(members) != data["size"]:
        raise CohortFileError(
            f"cohort file <{path}> declares {data['size']} members but holds "
            f"{len(members) if isinstance(members, list) else 'no list of'}"
        )
    if model is None:
        try:
            model = load_model(str(data["model"]))
        except ValidationError as err:
            raise CohortFileError(f"unknown model <{data['model']}>: {err}")
    elif model.name != data["model"]:
        raise CohortFileError(
            f"cohort file is for model <{data['model']}>, not <{model.name}>"
        )
    vps = []
    for entry in members:
        try:
            params = tuple(float(value) for value in entry["params"])
            vp = VirtualPatient(
                str(entry["id"]),
                params,
                dict(entry.get("provenance") or {"kind": "imported"}),
            )
        except (KeyError, TypeError, ValueError, ValidationError) as err:
            raise CohortFileError(f"malformed member in <{path}>: {err}")
        if len(params) != len(model.params):
            raise CohortFileError(
                f"member <{vp.id}> has {len(params)} params, model "
                f"<{model.name}> has {len(model.params)}"
            )
        vps.append(vp)
    seed = data.get("seed")
    try:
        return Cohort(model.name, tuple(vps), None if seed is None else int(seed))
    except ValidationError as err:
        raise CohortFileError(str(err))
