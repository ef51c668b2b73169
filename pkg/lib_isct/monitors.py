#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      monitors
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Treatment invariants and goals over trajectories, checked
#              offline on whole trajectories and online segment by segment
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

"""Invariants and goals.

An invariant with window [t0, t1] must hold at every grid point of the
window; it is violated at the first grid point where it does not. A goal
with deadline D and sustain S is satisfied when its predicate holds at
every grid point of [s, s + S] for some grid point s with s + S <= D; the
witness is the smallest such s. An unsatisfiable goal is violated with
the deadline as witness.

Predicates are evaluated at grid points only.
"""

import math
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import sympy
import yaml
from sympy.polys.polyerrors import PolificationFailed, PolynomialError

from .errors import ConfigError, ContractError, ModelError, ValidationError
from .expressions import identifiers
from .expressions import parse as parse_expression
from .isct_lib import DOWNREGULATION_DEFAULTS, TIME_EPS

OPERATORS = ("<=", ">=")
KINDS = ("invariant", "goal")


class Status(str, Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    PENDING = "pending"


_COMPARISON = re.compile(r"<=|>=|==|!=|<|>|=")


def _linear(expr, names, text):
    """Linear form of an expression as ({name: coefficient}, constant)"""
    if not names:
        return {}, float(expr)
    symbols = [sympy.Symbol(name) for name in names]
    try:
        poly = sympy.Poly(expr, *symbols)
    except (PolificationFailed, PolynomialError):
        raise ModelError(f"predicate <{text}> is not a linear inequality")
    if poly.total_degree() > 1:
        raise ModelError(f"predicate <{text}> is not a linear inequality")
    coefs = {
        name: float(poly.coeff_monomial(symbol))
        for name, symbol in zip(names, symbols)
    }
    return coefs, float(poly.coeff_monomial(1))


@dataclass(frozen=True)
class Predicate:
    """Linear inequality sum(c_i * obs_i) + constant  op  rhs

    Attributes:
        coefficients (tuple): (observable, coefficient) pairs
        op (str): "<=" or ">="
        rhs (float): Right hand side
        constant (float): Constant term of the left hand side
    """

    coefficients: tuple
    op: str
    rhs: float
    constant: float = 0.0

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise ValidationError(f"unknown comparison <{self.op}>")
        values = [c for _name, c in self.coefficients] + [self.rhs, self.constant]
        if not all(math.isfinite(value) for value in values):
            raise ValidationError("predicate coefficients must be finite")

    @classmethod
    def parse(cls, text):
        """Parse an inequality such as "2*L - F <= 3" """
        text = str(text).strip()
        ops = _COMPARISON.findall(text)
        if len(ops) != 1 or ops[0] not in OPERATORS:
            raise ModelError(f"predicate <{text}> must be one <= or >= comparison")
        left, right = _COMPARISON.split(text)
        expr = parse_expression(left, functions=False) - parse_expression(
            right, functions=False
        )
        names = identifiers(left)
        names += [name for name in identifiers(right) if name not in names]
        coefs, const = _linear(expr, names, text)
        return cls(
            tuple((name, c) for name, c in coefs.items() if c != 0.0),
            ops[0],
            -const,
        )

    @property
    def observables(self):
        return tuple(name for name, _c in self.coefficients)

    def evaluate(self, trajectory):
        """Truth value at every row of a trajectory; NaN rows are false"""
        lhs = np.full(len(trajectory), self.constant, dtype=float)
        for name, coef in self.coefficients:
            lhs = lhs + coef * trajectory.observable(name)
        if self.op == "<=":
            return lhs <= self.rhs
        return lhs >= self.rhs

    def __str__(self):
        terms = []
        for name, coef in self.coefficients:
            sign = "-" if coef < 0 else "+"
            mag = abs(coef)
            term = name if mag == 1.0 else f"{mag!r}*{name}"
            terms.append((sign, term))
        if self.constant or not terms:
            sign = "-" if self.constant < 0 else "+"
            terms.append((sign, repr(abs(self.constant))))
        text = " ".join(f"{s} {t}" for s, t in terms)
        text = text[2:] if text.startswith("+ ") else "-" + text[2:]
        return f"{text} {self.op} {self.rhs!r}"


@dataclass(frozen=True)
class Property:
    """An invariant or a goal

    Attributes:
        name (str): Identifier
        kind (str): "invariant" or "goal"
        predicate (Predicate): The inequality
        window (tuple): Invariant window (t0, t1); t1 None means up to the
                        horizon
        deadline (float): Goal deadline (days)
        sustain (float): Goal sustain duration (days)
    """

    name: str
    kind: str
    predicate: Predicate
    window: tuple = (0.0, None)
    deadline: float = None
    sustain: float = 0.0

    def __post_init__(self):
        if not str(self.name).isidentifier():
            raise ValidationError(f"property name <{self.name}> is no identifier")
        if self.kind not in KINDS:
            raise ValidationError(f"unknown property kind <{self.kind}>")
        if self.kind == "invariant":
            t0, t1 = self.window
            if not math.isfinite(t0) or t0 < 0 or (t1 is not None and t1 < t0):
                raise ValidationError(
                    f"invalid window {list(self.window)} of <{self.name}>"
                )
        else:
            if self.deadline is None or not math.isfinite(self.deadline):
                raise ValidationError(f"goal <{self.name}> needs a deadline")
            if self.deadline < 0:
                raise ValidationError(f"deadline of <{self.name}> is negative")
            if not math.isfinite(self.sustain) or self.sustain < 0:
                raise ValidationError(f"sustain of <{self.name}> must be >= 0")

    @property
    def is_goal(self):
        return self.kind == "goal"

    def end(self, horizon):
        """Last time the property looks at"""
        if self.is_goal:
            return self.deadline
        return horizon if self.window[1] is None else self.window[1]

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kind = str(data.get("kind", ""))
        predicate = data.get("predicate")
        if isinstance(predicate, dict):
            predicate = Predicate(
                tuple(
                    (str(n), float(c))
                    for n, c in (predicate.get("coefficients") or {}).items()
                ),
                str(predicate.get("op")),
                float(predicate.get("rhs")),
                float(predicate.get("constant", 0.0)),
            )
        else:
            predicate = Predicate.parse(predicate)
        if kind == "invariant":
            window = data.get("window") or [0.0, None]
            if len(window) != 2:
                raise ValidationError("window must be [t0, t1]")
            return cls(
                str(data["name"]),
                kind,
                predicate,
                (float(window[0]), None if window[1] is None else float(window[1])),
            )
        return cls(
            str(data["name"]),
            kind,
            predicate,
            deadline=float(data["deadline"]),
            sustain=float(data.get("sustain", 0.0)),
        )

    def to_dict(self):
        data = {"name": self.name, "kind": self.kind, "predicate": str(self.predicate)}
        if self.is_goal:
            data["deadline"] = self.deadline
            data["sustain"] = self.sustain
        else:
            data["window"] = list(self.window)
        return data


@dataclass(frozen=True)
class Verdict:
    property: str
    status: Status
    witness: float = None

    @property
    def final(self):
        return self.status is not Status.PENDING


def validate_properties(properties, model=None, horizon=None):
    """Raise unless names are unique, observables known, ends within horizon"""
    names = [prop.name for prop in properties]
    if len(set(names)) != len(names):
        raise ValidationError("property names must be unique")
    for prop in properties:
        if model is not None:
            unknown = sorted(
                set(prop.predicate.observables) - set(model.observable_names)
            )
            if unknown:
                raise ValidationError(
                    f"property <{prop.name}> uses observables {unknown} unknown "
                    f"to model <{model.name}>"
                )
        if horizon is not None and prop.end(horizon) > horizon + TIME_EPS:
            raise ContractError(
                f"property <{prop.name}> ends at {prop.end(horizon)}, after "
                f"the horizon {horizon}"
            )


def _check_invariant(prop, times, truth, horizon):
    t0 = prop.window[0]
    t1 = prop.end(horizon)
    inside = (times >= t0 - TIME_EPS) & (times <= t1 + TIME_EPS)
    failed = np.flatnonzero(inside & ~truth)
    if failed.size:
        return Verdict(prop.name, Status.VIOLATED, float(times[failed[0]]))
    return Verdict(prop.name, Status.SATISFIED)


def _check_goal(prop, times, truth):
    for i, start in enumerate(times):
        if start + prop.sustain > prop.deadline + TIME_EPS:
            break
        stop = np.searchsorted(times, start + prop.sustain + TIME_EPS, side="right")
        if truth[i:stop].all():
            return Verdict(prop.name, Status.SATISFIED, float(start))
    return Verdict(prop.name, Status.VIOLATED, float(prop.deadline))


def check(trajectory, properties):
    """Evaluate properties on a complete trajectory

    Args:
        trajectory (Trajectory): Trajectory starting at t=0
        properties (list): Property entries

    Returns:
        list: One final Verdict per property, in property order
    """
    horizon = float(trajectory.times[-1])
    validate_properties(properties, horizon=horizon)
    verdicts = []
    for prop in properties:
        truth = prop.predicate.evaluate(trajectory)
        if prop.is_goal:
            verdicts.append(_check_goal(prop, trajectory.times, truth))
        else:
            verdicts.append(_check_invariant(prop, trajectory.times, truth, horizon))
    return verdicts


@dataclass
class _Progress:
    status: Status = Status.PENDING
    witness: float = None
    run_start: float = None


@dataclass
class MonitorState:
    """Online evaluation of properties over a trajectory fed in segments

    Attributes:
        properties (tuple): Monitored properties
        grid (float): Output grid of the fed trajectory (days)
        horizon (float): Last grid time that will be fed
    """

    properties: tuple
    grid: float
    horizon: float
    next_time: float = 0.0
    progress: list = field(default=None)

    def __post_init__(self):
        self.properties = tuple(self.properties)
        validate_properties(self.properties, horizon=self.horizon)
        if self.progress is None:
            self.progress = [_Progress() for _prop in self.properties]

    @property
    def finished(self):
        return self.next_time > self.horizon + TIME_EPS

    def verdicts(self):
        return [
            Verdict(prop.name, prog.status, prog.witness)
            for prop, prog in zip(self.properties, self.progress)
        ]

    @property
    def any_violated(self):
        return any(prog.status is Status.VIOLATED for prog in self.progress)

    def first_violation(self):
        """Violated verdict with the earliest witness, or None"""
        violated = [v for v in self.verdicts() if v.status is Status.VIOLATED]
        if not violated:
            return None
        return min(violated, key=lambda verdict: verdict.witness)

    @property
    def goals_satisfied(self):
        return all(
            prog.status is Status.SATISFIED
            for prop, prog in zip(self.properties, self.progress)
            if prop.is_goal
        )

    def snapshot(self):
        return (
            self.next_time,
            tuple((p.status, p.witness, p.run_start) for p in self.progress),
        )

    def restore(self, snapshot):
        self.next_time = snapshot[0]
        self.progress = [_Progress(*entry) for entry in snapshot[1]]

    def _point_invariant(self, prop, prog, time, holds):
        if time < prop.window[0] - TIME_EPS:
            return
        end = prop.end(self.horizon)
        if time <= end + TIME_EPS and not holds:
            prog.status, prog.witness = Status.VIOLATED, time
        elif time >= end - TIME_EPS:
            prog.status = Status.SATISFIED

    def _point_goal(self, prop, prog, time, holds):
        if holds:
            if prog.run_start is None:
                if time + prop.sustain > prop.deadline + TIME_EPS:
                    prog.status, prog.witness = Status.VIOLATED, prop.deadline
                    return
                prog.run_start = time
            if time >= prog.run_start + prop.sustain - TIME_EPS:
                prog.status, prog.witness = Status.SATISFIED, prog.run_start
            return
        if (
            prog.run_start is not None
            and time > prog.run_start + prop.sustain + TIME_EPS
        ):
            prog.status, prog.witness = Status.SATISFIED, prog.run_start
            return
        prog.run_start = None
        if time + self.grid + prop.sustain > prop.deadline + TIME_EPS:
            prog.status, prog.witness = Status.VIOLATED, prop.deadline

    def feed(self, segment):
        """Advance the monitors over a trajectory segment

        Args:
            segment (Trajectory): Rows continuing the fed prefix

        Returns:
            list: Verdicts after the segment; pending properties are final
                  once the horizon has been fed
        """
        if not len(segment):
            return self.verdicts()
        times = segment.times
        expected = self.next_time + self.grid * np.arange(len(times))
        if np.any(np.abs(times - expected) > TIME_EPS):
            raise ContractError(
                f"segment starting at t={times[0]} does not continue the "
                f"monitored trajectory at t={self.next_time}"
            )
        if times[-1] > self.horizon + TIME_EPS:
            raise ContractError(
                f"segment ends at t={times[-1]}, after the horizon {self.horizon}"
            )
        for prop, prog in zip(self.properties, self.progress):
            if prog.status is not Status.PENDING:
                continue
            truth = prop.predicate.evaluate(segment)
            point = self._point_goal if prop.is_goal else self._point_invariant
            for time, holds in zip(times, truth):
                point(prop, prog, float(time), bool(holds))
                if prog.status is not Status.PENDING:
                    break
        self.next_time = float(times[-1]) + self.grid
        if self.finished:
            self._finalise()
        return self.verdicts()

    def _finalise(self):
        for prop, prog in zip(self.properties, self.progress):
            if prog.status is not Status.PENDING:
                continue
            if prop.is_goal:
                prog.status, prog.witness = Status.VIOLATED, prop.deadline
            else:
                prog.status = Status.SATISFIED

    def earliest_goal_time(self):
        """Lower bound on the latest goal witness any continuation reaches

        Returns:
            float: inf when a goal is violated, 0.0 without goals
        """
        bound = 0.0
        for prop, prog in zip(self.properties, self.progress):
            if not prop.is_goal:
                continue
            if prog.status is Status.VIOLATED:
                return math.inf
            if prog.status is Status.SATISFIED:
                bound = max(bound, prog.witness)
            elif prog.run_start is not None:
                bound = max(bound, prog.run_start)
            else:
                bound = max(bound, self.next_time)
        return bound


def feed(state, segment):
    """Feed a segment into a monitor state

    Returns:
        tuple: (the advanced MonitorState, verdicts after the segment)
    """
    verdicts = state.feed(segment)
    return state, verdicts


def goal_time(verdicts, properties):
    """Latest witness over satisfied goals, 0.0 without goals"""
    kinds = {prop.name: prop.kind for prop in properties}
    times = [
        verdict.witness
        for verdict in verdicts
        if kinds[verdict.property] == "goal"
    ]
    return max(times, default=0.0)


def default_properties(**overrides):
    """Downregulation property set of the surrogate model

    Goal: hormone <= theta sustained for sustain days before deadline.
    Invariants: floor observable >= f_min and cumulative dose <= d_max
    throughout.
    """
    unknown = sorted(set(overrides) - set(DOWNREGULATION_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown downregulation settings {unknown}")
    cfg = {**DOWNREGULATION_DEFAULTS, **overrides}
    return [
        Property(
            "downregulated",
            "goal",
            Predicate(((cfg["hormone"], 1.0),), "<=", float(cfg["theta"])),
            deadline=float(cfg["deadline"]),
            sustain=float(cfg["sustain"]),
        ),
        Property(
            "floor",
            "invariant",
            Predicate(((cfg["floor_observable"], 1.0),), ">=", float(cfg["f_min"])),
        ),
        Property(
            "max_dose",
            "invariant",
            Predicate(((cfg["dose_observable"], 1.0),), "<=", float(cfg["d_max"])),
        ),
    ]


def properties_from_data(data):
    """Properties from a loaded property file or inline config"""
    if isinstance(data, dict):
        if "defaults" in data:
            return default_properties(**(data["defaults"] or {}))
        data = data.get("properties")
    if not isinstance(data, list):
        raise ConfigError("properties must be a list")
    try:
        properties = [Property.from_dict(entry) for entry in data]
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"malformed property: {err}")
    validate_properties(properties)
    return properties


def load_properties(path):
    """Read a property file

    The file either lists properties under "properties" or selects the
    downregulation set with optional overrides under "defaults".
    """
    try:
        with open(path, encoding="utf-8") as stream:
            data = yaml.safe_load(stream)
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read property file <{path}>: {err}")
    return properties_from_data(data)


def save_properties(properties, path):
    with open(path, "w", encoding="utf-8") as stream:
        yaml.safe_dump(
            {"properties": [prop.to_dict() for prop in properties]},
            stream,
            sort_keys=False,
        )
