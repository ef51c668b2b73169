#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      records
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Clinical records: ingestion, exclusion criteria and
#              synthetic records from virtual patients
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
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
import yaml

from .errors import (
    ConfigError,
    RecordParseError,
    UnitMismatchError,
    ValidationError,
)
from .isct_lib import EXCLUSION_REASONS
from .messages import _, message, verbose
from .simulation import SimulationConfig, simulate

RECORD_COLUMNS = ["patient_id", "time_days", "observable", "value", "unit"]

ExclusionReason = Enum("ExclusionReason", EXCLUSION_REASONS, type=str)


@dataclass(frozen=True, order=True)
class Measurement:
    time: float
    observable: str
    value: float
    unit: str


@dataclass(frozen=True)
class ClinicalRecord:
    """Measurements of one patient, sorted by time

    Metadata is informative only and does not take part in comparisons.
    """

    patient_id: str
    measurements: tuple
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.measurements:
            raise ValidationError(
                f"record of <{self.patient_id}> has no measurements"
            )
        times = [m.time for m in self.measurements]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValidationError(
                f"measurements of <{self.patient_id}> are not sorted by time"
            )

    @property
    def span(self):
        return self.measurements[-1].time - self.measurements[0].time

    @property
    def observables(self):
        return sorted({m.observable for m in self.measurements})

    def count(self, observable):
        return sum(1 for m in self.measurements if m.observable == observable)


@dataclass(frozen=True)
class ExclusionCriteria:
    """Patient-level exclusion criteria

    Criteria are checked in the order required observables, minimum
    measurement counts, minimum span; the first violated one is reported.
    """

    min_measurements: dict = field(default_factory=dict)
    required_observables: frozenset = frozenset()
    min_span: float = 0.0

    def __post_init__(self):
        for name, count in self.min_measurements.items():
            if int(count) < 0:
                raise ValidationError(
                    f"minimum measurement count of <{name}> is negative"
                )
        if not math.isfinite(self.min_span) or self.min_span < 0:
            raise ValidationError("min_span must be a non-negative number")

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = sorted(
            set(data) - {"min_measurements", "required_observables", "min_span"}
        )
        if unknown:
            raise ConfigError(f"unknown exclusion criteria {unknown}")
        return cls(
            {
                str(name): int(count)
                for name, count in (data.get("min_measurements") or {}).items()
            },
            frozenset(str(name) for name in data.get("required_observables") or []),
            float(data.get("min_span", 0.0)),
        )

    def to_dict(self):
        return {
            "min_measurements": dict(sorted(self.min_measurements.items())),
            "required_observables": sorted(self.required_observables),
            "min_span": self.min_span,
        }


def load_exclusion_criteria(path):
    try:
        with open(path, encoding="utf-8") as stream:
            return ExclusionCriteria.from_dict(yaml.safe_load(stream))
    except (OSError, yaml.YAMLError, TypeError, ValueError) as err:
        raise ConfigError(f"cannot read exclusion criteria <{path}>: {err}")


def _parse_float(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise RecordParseError(line, f"{column} <{text}> is not a number")
    if not math.isfinite(value):
        raise RecordParseError(line, f"{column} <{text}> is not finite")
    return value


def ingest(path, model=None):
    """Read clinical records from CSV

    The CSV has the header patient_id,time_days,observable,value,unit.

    Args:
        path (str): CSV file
        model (ModelDefinition): When given, observables must be declared
                                 by the model and units must match

    Returns:
        list: One ClinicalRecord per patient id, sorted by patient id
    """
    try:
        # blank lines are kept so that row positions stay physical lines
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, skip_blank_lines=False
        )
    except pd.errors.ParserError as err:
        found = re.search(r"line (\d+)", str(err))
        raise RecordParseError(
            int(found.group(1)) if found else 1, f"cannot read <{path}>: {err}"
        )
    except (OSError, pd.errors.EmptyDataError) as err:
        raise RecordParseError(1, f"cannot read <{path}>: {err}")
    frame = frame.fillna("")
    if list(frame.columns) != RECORD_COLUMNS:
        raise RecordParseError(
            1,
            f"header must be {','.join(RECORD_COLUMNS)}, "
            f"got {','.join(frame.columns)}",
        )
    by_patient = {}
    for index, row in enumerate(frame.itertuples(index=False)):
        line = index + 2
        if not any(str(item).strip() for item in row):
            continue
        patient_id = row.patient_id.strip()
        if not patient_id:
            raise RecordParseError(line, "empty patient_id")
        time = _parse_float(row.time_days, line, "time_days")
        if time < 0:
            raise RecordParseError(line, f"negative time {time}")
        value = _parse_float(row.value, line, "value")
        observable = row.observable.strip()
        unit = row.unit.strip()
        if model is not None:
            if observable not in model.observable_names:
                raise RecordParseError(
                    line,
                    f"observable <{observable}> is unknown to model <{model.name}>",
                )
            expected = model.observable_unit(observable)
            if unit != expected:
                raise UnitMismatchError(
                    f"line {line}: unit <{unit}> of <{observable}> differs "
                    f"from the expected unit <{expected}>"
                )
        by_patient.setdefault(patient_id, []).append(
            Measurement(time, observable, value, unit)
        )
    records = [
        ClinicalRecord(patient_id, tuple(sorted(measurements)))
        for patient_id, measurements in sorted(by_patient.items())
    ]
    verbose(f"Ingested {len(records)} records from <{path}>")
    return records


def save_records(records, path):
    """Write records in the CSV format read by ingest()"""
    rows = [
        (record.patient_id, m.time, m.observable, m.value, m.unit)
        for record in records
        for m in record.measurements
    ]
    frame = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    frame = frame.astype({"time_days": float, "value": float})
    frame.to_csv(path, index=False)


def exclusion_reason(record, criteria):
    """First criterion the record violates, or None"""
    observables = set(record.observables)
    if not criteria.required_observables <= observables:
        return ExclusionReason.REQUIRED_OBSERVABLE
    for name, count in sorted(criteria.min_measurements.items()):
        if record.count(name) < count:
            return ExclusionReason.MIN_MEASUREMENTS
    if record.span < criteria.min_span:
        return ExclusionReason.MIN_SPAN
    return None


def apply_exclusion(records, criteria):
    """Split records into kept and excluded ones

    Returns:
        tuple: (kept records, [(record, ExclusionReason)]), both in input
               order
    """
    kept, excluded = [], []
    for record in records:
        reason = exclusion_reason(record, criteria)
        if reason is None:
            kept.append(record)
        else:
            excluded.append((record, reason))
    if excluded:
        message(
            _(f"{len(excluded)} of {len(kept) + len(excluded)} records excluded")
        )
    return kept, excluded


def sample_horizon(times, cfg):
    """Smallest grid-aligned horizon covering every sample time"""
    last = max(times)
    steps = max(1, math.ceil(last / cfg.output_grid - 1e-9))
    return cfg.grid_time(steps)


def synthesise_record(
    vp,
    model,
    sample_times,
    noise_rel,
    seed,
    observables=None,
    doses=(),
    cfg=None,
    patient_id=None,
):
    """Synthesise a clinical record from a virtual patient

    Every observable is sampled at every sample time; values are the
    (linearly interpolated) simulated observable times (1 + eps) with eps
    drawn uniformly from [-noise_rel, noise_rel].

    Args:
        vp (VirtualPatient): The generating virtual patient
        model (ModelDefinition): Its model
        sample_times (sequence): Measurement times (days)
        noise_rel (float): Relative noise half-width, >= 0
        seed (int): Seed of the noise stream
        observables (sequence): Observables to sample, all by default
        doses (sequence): DoseEvent entries the patient received
        cfg (SimulationConfig): Integrator settings
        patient_id (str): Record id, defaults to "patient-<vp id>"

    Returns:
        ClinicalRecord: The synthetic record
    """
    cfg = cfg or SimulationConfig()
    times = [float(t) for t in sample_times]
    if not times or any(not math.isfinite(t) or t < 0 for t in times):
        raise ValidationError("sample times must be non-negative numbers")
    noise_rel = float(noise_rel)
    if not math.isfinite(noise_rel) or noise_rel < 0:
        raise ValidationError(f"noise must be >= 0, got {noise_rel}")
    names = list(observables or model.observable_names)
    trajectory = simulate(
        model,
        vp.params,
        model.initial_state(),
        list(doses),
        sample_horizon(times, cfg),
        cfg,
    )
    rng = np.random.default_rng(int(seed))
    eps = rng.uniform(-noise_rel, noise_rel, size=(len(times), len(names)))
    columns = [trajectory.at(name, times) for name in names]
    measurements = [
        Measurement(
            time,
            name,
            float(columns[j][i] * (1.0 + eps[i, j])),
            model.observable_unit(name),
        )
        for i, time in enumerate(times)
        for j, name in enumerate(names)
    ]
    return ClinicalRecord(
        patient_id or f"patient-{vp.id}",
        tuple(sorted(measurements)),
        {"vp": vp.id, "noise": repr(noise_rel), "seed": str(seed)},
    )
