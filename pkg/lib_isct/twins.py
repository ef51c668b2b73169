#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      twins
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Scores virtual patients against clinical records and selects
#              the digital twins of a patient
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

import pandas as pd
import yaml

from .errors import ConfigError, SimulationDivergedError, ValidationError
from .isct_lib import MATCH_DEFAULTS
from .messages import _, verbose, warning
from .parallel import map_in_threadpool
from .records import sample_horizon
from .simulation import DoseEvent, SimulationConfig, simulate

SCORES = ("mean-normalised-abs-error",)
TWIN_COLUMNS = [
    "patient_id",
    "vp_id",
    "rank",
    "score",
    "matched_fraction",
    "accepted",
]


@dataclass(frozen=True)
class Tolerance:
    rel: float = MATCH_DEFAULTS["rel"]
    abs: float = MATCH_DEFAULTS["abs"]

    def __post_init__(self):
        for value in (self.rel, self.abs):
            if not math.isfinite(value) or value < 0:
                raise ValidationError("tolerances must be finite and >= 0")


@dataclass(frozen=True)
class MatchConfig:
    """How virtual patients are matched against a clinical record

    Attributes:
        tolerances (dict): Observable name -> Tolerance
        default_tolerance (Tolerance): Used for observables not listed
        min_matched_fraction (float): Acceptance threshold in [0, 1]
        score (str): Scoring metric
        context_doses (tuple): DoseEvent entries the patient received
                               while measured
    """

    tolerances: dict = field(default_factory=dict)
    default_tolerance: Tolerance = Tolerance()
    min_matched_fraction: float = MATCH_DEFAULTS["min_matched_fraction"]
    score: str = SCORES[0]
    context_doses: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.min_matched_fraction <= 1.0:
            raise ValidationError("min_matched_fraction must lie in [0, 1]")
        if self.score not in SCORES:
            raise ValidationError(f"unknown score <{self.score}>")

    def tolerance(self, observable):
        return self.tolerances.get(observable, self.default_tolerance)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = sorted(
            set(data)
            - {
                "tolerance",
                "min_matched_fraction",
                "score",
                "context_doses",
            }
        )
        if unknown:
            raise ConfigError(f"unknown match settings {unknown}")
        tolerances = {}
        default = Tolerance()
        for name, tol in (data.get("tolerance") or {}).items():
            tol = Tolerance(
                float(tol.get("rel", MATCH_DEFAULTS["rel"])),
                float(tol.get("abs", MATCH_DEFAULTS["abs"])),
            )
            if name == "default":
                default = tol
            else:
                tolerances[str(name)] = tol
        doses = tuple(
            DoseEvent(float(d["time"]), str(d["drug"]), float(d["amount"]))
            for d in data.get("context_doses") or []
        )
        return cls(
            tolerances,
            default,
            float(
                data.get(
                    "min_matched_fraction", MATCH_DEFAULTS["min_matched_fraction"]
                )
            ),
            str(data.get("score", SCORES[0])),
            doses,
        )


def load_match_config(path):
    try:
        with open(path, encoding="utf-8") as stream:
            return MatchConfig.from_dict(yaml.safe_load(stream))
    except (OSError, yaml.YAMLError, KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"cannot read match config <{path}>: {err}")


@dataclass(frozen=True)
class TwinScore:
    vp_id: str
    score: float
    matched_fraction: float


@dataclass(frozen=True)
class TwinSet:
    """Ranked virtual patients for one patient

    Attributes:
        patient_id (str): Patient the twins belong to
        ranked (tuple): TwinScore entries by ascending score, then vp id
        accepted (tuple): Ranked entries meeting the acceptance threshold
    """

    patient_id: str
    ranked: tuple
    accepted: tuple

    @property
    def has_twin(self):
        return bool(self.accepted)

    @property
    def accepted_ids(self):
        return tuple(entry.vp_id for entry in self.accepted)


def normalised_errors(simulated, measured, tolerances):
    """|sim - meas| / max(abs_tol, rel_tol * |meas|) per measurement"""
    errors = []
    for sim, meas, tol in zip(simulated, measured, tolerances):
        diff = abs(sim - meas)
        denom = max(tol.abs, tol.rel * abs(meas))
        if math.isnan(diff):
            errors.append(math.inf)
        elif denom == 0:
            errors.append(0.0 if diff == 0 else math.inf)
        else:
            errors.append(diff / denom)
    return errors


def match_score(vp, record, model, cfg, sim_cfg=None):
    """Score a virtual patient against a clinical record

    The virtual patient is simulated under the context doses, its
    observables are interpolated at the measurement times and compared
    with the measured values.

    Returns:
        tuple: (score, matched fraction); a diverging simulation scores
               (inf, 0.0)
    """
    sim_cfg = sim_cfg or SimulationConfig()
    unknown = sorted(set(record.observables) - set(model.observable_names))
    if unknown:
        raise ValidationError(
            f"record <{record.patient_id}> has observables {unknown} unknown "
            f"to model <{model.name}>"
        )
    times = [m.time for m in record.measurements]
    try:
        trajectory = simulate(
            model,
            vp.params,
            model.initial_state(),
            list(cfg.context_doses),
            sample_horizon(times, sim_cfg),
            sim_cfg,
        )
    except SimulationDivergedError as err:
        warning(
            _(
                f"Virtual patient <{vp.id}> diverged at t={err.time} while "
                f"matching <{record.patient_id}>"
            )
        )
        return math.inf, 0.0
    simulated = [0.0] * len(times)
    for name in record.observables:
        index = [i for i, m in enumerate(record.measurements) if m.observable == name]
        values = trajectory.at(name, [times[i] for i in index])
        for i, value in zip(index, values):
            simulated[i] = float(value)
    errors = normalised_errors(
        simulated,
        [m.value for m in record.measurements],
        [cfg.tolerance(m.observable) for m in record.measurements],
    )
    score = sum(errors) / len(errors)
    fraction = sum(1 for err in errors if err <= 1.0) / len(errors)
    return score, fraction


def rank_scores(scores):
    """Sort TwinScore entries by score, ties broken by vp id"""
    return tuple(sorted(scores, key=lambda entry: (entry.score, entry.vp_id)))


def compute_twins(cohort, record, model, cfg, sim_cfg=None, workers=1):
    """Score every cohort member and select the digital twins

    Args:
        cohort (Cohort): Virtual patients
        record (ClinicalRecord): Patient measurements
        model (ModelDefinition): Model of the cohort
        cfg (MatchConfig): Matching settings
        sim_cfg (SimulationConfig): Integrator settings
        workers (int): Number of parallel scorings

    Returns:
        TwinSet: Ranked members and accepted twins
    """
    if not len(cohort):
        raise ValidationError("cannot compute digital twins from an empty cohort")
    cohort.check_model(model)
    results = map_in_threadpool(
        lambda vp: match_score(vp, record, model, cfg, sim_cfg),
        cohort.members,
        workers,
    )
    ranked = rank_scores(
        TwinScore(vp.id, score, fraction)
        for vp, (score, fraction) in zip(cohort.members, results)
    )
    accepted = tuple(
        entry
        for entry in ranked
        if math.isfinite(entry.score)
        and entry.matched_fraction >= cfg.min_matched_fraction
    )
    verbose(
        f"Patient <{record.patient_id}>: {len(accepted)} of {len(ranked)} "
        "virtual patients accepted as digital twins"
    )
    return TwinSet(record.patient_id, ranked, accepted)


def save_twin_sets(twin_sets, path):
    """Write twin sets as CSV, one row per ranked virtual patient"""
    rows = []
    for twin_set in twin_sets:
        accepted = set(twin_set.accepted_ids)
        for rank, entry in enumerate(twin_set.ranked, start=1):
            rows.append(
                (
                    twin_set.patient_id,
                    entry.vp_id,
                    rank,
                    entry.score,
                    entry.matched_fraction,
                    entry.vp_id in accepted,
                )
            )
    pd.DataFrame(rows, columns=TWIN_COLUMNS).to_csv(path, index=False)


def load_twin_sets(path):
    """Read twin sets written by save_twin_sets()

    Returns:
        dict: patient id -> TwinSet
    """
    try:
        frame = pd.read_csv(
            path, dtype={"patient_id": str, "vp_id": str}, float_precision="round_trip"
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ValidationError(f"cannot read twin set file <{path}>: {err}")
    if list(frame.columns) != TWIN_COLUMNS:
        raise ValidationError(f"twin set file <{path}> has an unexpected header")
    twin_sets = {}
    for patient_id, group in frame.groupby("patient_id", sort=True):
        group = group.sort_values("rank")
        ranked = tuple(
            TwinScore(row.vp_id, float(row.score), float(row.matched_fraction))
            for row in group.itertuples(index=False)
        )
        accepted_ids = set(group.loc[group["accepted"].astype(bool), "vp_id"])
        accepted = tuple(entry for entry in ranked if entry.vp_id in accepted_ids)
        twin_sets[patient_id] = TwinSet(patient_id, ranked, accepted)
    return twin_sets
