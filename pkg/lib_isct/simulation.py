#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      simulation
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Deterministic simulation of ODE patient models under impulse
#              dose inputs with checkpoint and resume
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

"""Simulation of patient models.

Time is measured in days. The output grid is the set of points
``k * output_grid``; integration restarts at every grid point and every
dose time, so any segmentation of a run into checkpointed pieces performs
exactly the same floating point operations as the uninterrupted run.

Rows are left limits: the row at grid point t holds the state reached at t
before the doses scheduled exactly at t are applied. Applied doses are
recorded as jumps on the trajectory.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    CheckpointIncompatibleError,
    ContractError,
    SimulationDivergedError,
    ValidationError,
)
from .expressions import EVALUATION_ERRORS
from .isct_lib import SIMULATION_DEFAULTS, TIME_EPS
from .messages import verbose

METHODS = ("rk4-fixed", "rkf45-adaptive")

# Fehlberg 4(5) tableau
_RKF_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RKF_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_RKF_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_MIN_ADAPTIVE_STEP = 1e-12


@dataclass(frozen=True)
class DoseEvent:
    time: float
    drug: str
    amount: float


@dataclass(frozen=True)
class SimulationConfig:
    """Integrator settings

    Args:
        method (str): "rk4-fixed" or "rkf45-adaptive"
        step (float): Fixed step, or initial step of the adaptive method (days)
        rel_tol (float): Relative tolerance of the adaptive method
        abs_tol (float): Absolute tolerance of the adaptive method
        output_grid (float): Distance between stored samples (days)
    """

    method: str = SIMULATION_DEFAULTS["method"]
    step: float = SIMULATION_DEFAULTS["step"]
    rel_tol: float = SIMULATION_DEFAULTS["rel_tol"]
    abs_tol: float = SIMULATION_DEFAULTS["abs_tol"]
    output_grid: float = SIMULATION_DEFAULTS["output_grid"]

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(
                f"unknown integration method <{self.method}>, "
                f"expected one of {', '.join(METHODS)}"
            )
        for name in ("step", "rel_tol", "abs_tol", "output_grid"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive number")
        if self.step > self.output_grid + TIME_EPS:
            raise ValidationError(
                f"step {self.step} exceeds the output grid {self.output_grid}"
            )

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = sorted(set(data) - set(SIMULATION_DEFAULTS))
        if unknown:
            raise ValidationError(f"unknown simulation settings {unknown}")
        return cls(
            method=str(data.get("method", SIMULATION_DEFAULTS["method"])),
            **{
                key: float(data.get(key, SIMULATION_DEFAULTS[key]))
                for key in ("step", "rel_tol", "abs_tol", "output_grid")
            },
        )

    def to_dict(self):
        return {
            "method": self.method,
            "step": self.step,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "output_grid": self.output_grid,
        }

    def grid_index(self, time, what="time"):
        """Index k of the grid point k*output_grid equal to time"""
        index = int(round(time / self.output_grid))
        if abs(index * self.output_grid - time) > TIME_EPS or index < 0:
            raise ContractError(
                f"{what} {time} is not on the output grid "
                f"(spacing {self.output_grid})"
            )
        return index

    def grid_time(self, index):
        return index * self.output_grid


@dataclass(frozen=True)
class DoseJump:
    """A dose application: state before and after the impulse"""

    time: float
    before: tuple
    after: tuple


@dataclass
class Trajectory:
    """Sampled simulation output

    Attributes:
        times (np.ndarray): Strictly increasing sample times (days)
        states (np.ndarray): One row per time, one column per state
        observables (np.ndarray): Observables derived row by row
        state_names (tuple): Column names of states
        observable_names (tuple): Column names of observables
        jumps (tuple): DoseJump entries applied within the covered times
    """

    times: np.ndarray
    states: np.ndarray
    observables: np.ndarray
    state_names: tuple
    observable_names: tuple
    jumps: tuple = field(default=())

    def __len__(self):
        return len(self.times)

    @property
    def has_negative_states(self):
        return bool(np.any(self.states < 0))

    def state(self, name):
        return self.states[:, self.state_names.index(name)]

    def observable(self, name):
        if name not in self.observable_names:
            raise ValidationError(f"trajectory has no observable <{name}>")
        return self.observables[:, self.observable_names.index(name)]

    def at(self, name, times):
        """Linearly interpolate an observable at arbitrary times"""
        times = np.asarray(times, dtype=float)
        if times.size and (
            times.min() < self.times[0] - TIME_EPS
            or times.max() > self.times[-1] + TIME_EPS
        ):
            raise ContractError(
                f"times outside the simulated span "
                f"[{self.times[0]}, {self.times[-1]}]"
            )
        return np.interp(times, self.times, self.observable(name))

    def concat(self, segment):
        """Append a segment that continues this trajectory"""
        if len(segment) and segment.times[0] <= self.times[-1]:
            raise ContractError("segment does not continue the trajectory")
        return Trajectory(
            np.concatenate([self.times, segment.times]),
            np.vstack([self.states, segment.states]),
            np.vstack([self.observables, segment.observables]),
            self.state_names,
            self.observable_names,
            self.jumps + segment.jumps,
        )

    def to_frame(self):
        columns = ["time", *self.state_names, *self.observable_names]
        data = np.column_stack([self.times, self.states, self.observables])
        return pd.DataFrame(data, columns=columns)

    def to_csv(self, path):
        """Write the trajectory as CSV: time, states, observables"""
        self.to_frame().to_csv(path, index=False)


@dataclass(frozen=True)
class Checkpoint:
    """Resumable simulation state at a grid point (left limit)

    Attributes:
        time (float): Grid time of the checkpoint (days)
        index (int): Grid index of time
        state (tuple): State vector before doses scheduled at time
        signature (str): Hash of model, params and simulation config
        extra (object): Caller data carried along, ignored here
    """

    time: float
    index: int
    state: tuple
    signature: str
    extra: object = None


def simulation_signature(model, params, cfg):
    """Identify the (model, params, config) a checkpoint belongs to"""
    text = "|".join(
        [
            model.fingerprint,
            ",".join(repr(float(value)) for value in params),
            repr(sorted(cfg.to_dict().items())),
        ]
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _check_params(model, params):
    params = tuple(float(value) for value in params)
    if len(params) != len(model.params):
        raise ValidationError(
            f"model <{model.name}> has {len(model.params)} params, "
            f"got {len(params)}"
        )
    return params


def initial_checkpoint(model, params, init, cfg, extra=None):
    """Checkpoint at t=0 holding the initial state"""
    params = _check_params(model, params)
    init = tuple(float(value) for value in init)
    if len(init) != len(model.states):
        raise ValidationError(
            f"model <{model.name}> has {len(model.states)} states, "
            f"got {len(init)} initial values"
        )
    return Checkpoint(
        0.0, 0, init, simulation_signature(model, params, cfg), extra
    )


def _prepare_doses(model, doses, cfg):
    """Validate doses and group them by time

    Returns:
        list: Sorted (time, {state index: increment}) pairs; simultaneous
              doses on one compartment are summed in a canonical order
    """
    events = []
    for dose in doses:
        if dose.drug not in model.drug_names:
            raise ValidationError(
                f"unknown drug <{dose.drug}> for model <{model.name}>"
            )
        drug = model.drug(dose.drug)
        amount = float(dose.amount)
        time = float(dose.time)
        if not math.isfinite(amount) or amount < 0:
            raise ValidationError(
                f"dose of <{dose.drug}> at t={dose.time} has invalid amount "
                f"{dose.amount}"
            )
        if not math.isfinite(time) or time < 0:
            raise ValidationError(f"dose time {dose.time} is invalid")
        # snap to the grid so doses at grid points split nothing
        index = round(time / cfg.output_grid)
        if abs(index * cfg.output_grid - time) <= TIME_EPS:
            time = cfg.grid_time(index)
        events.append((time, drug.name, amount, drug))
    events.sort(key=lambda event: event[:3])
    grouped = []
    for time, _name, amount, drug in events:
        if not grouped or grouped[-1][0] != time:
            grouped.append((time, {}))
        increments = grouped[-1][1]
        for target in (drug.target, drug.tally):
            if target is None:
                continue
            idx = model.state_names.index(target)
            increments[idx] = increments.get(idx, 0.0) + amount
    return grouped


def _rk4(rhs, params, y, a, b, step):
    steps = max(1, math.ceil((b - a) / step - TIME_EPS))
    h = (b - a) / steps
    half = h / 2
    sixth = h / 6
    for i in range(steps):
        t = a + i * h
        try:
            k1 = rhs(t, y, params)
            y2 = [yi + half * ki for yi, ki in zip(y, k1)]
            k2 = rhs(t + half, y2, params)
            y3 = [yi + half * ki for yi, ki in zip(y, k2)]
            k3 = rhs(t + half, y3, params)
            y4 = [yi + h * ki for yi, ki in zip(y, k3)]
            k4 = rhs(t + h, y4, params)
        except EVALUATION_ERRORS:
            raise SimulationDivergedError(t)
        y = [
            yi + sixth * (c1 + 2 * c2 + 2 * c3 + c4)
            for yi, c1, c2, c3, c4 in zip(y, k1, k2, k3, k4)
        ]
        if not all(map(math.isfinite, y)):
            raise SimulationDivergedError(t + h)
    return y


def _rkf45(rhs, params, y, a, b, cfg):
    t = a
    h = min(cfg.step, b - a)
    while t < b:
        last = t + h >= b - TIME_EPS
        if last:
            h = b - t
        try:
            ks = []
            for c, row in zip(_RKF_C, _RKF_A):
                yi = [
                    y[j] + h * sum(coef * k[j] for coef, k in zip(row, ks))
                    for j in range(len(y))
                ]
                ks.append(rhs(t + c * h, yi, params))
        except EVALUATION_ERRORS:
            raise SimulationDivergedError(t)
        y4 = [
            y[j] + h * sum(coef * k[j] for coef, k in zip(_RKF_B4, ks))
            for j in range(len(y))
        ]
        y5 = [
            y[j] + h * sum(coef * k[j] for coef, k in zip(_RKF_B5, ks))
            for j in range(len(y))
        ]
        if not all(map(math.isfinite, y5)):
            raise SimulationDivergedError(t + h)
        err = max(
            abs(hi - lo) / (cfg.abs_tol + cfg.rel_tol * max(abs(y0), abs(hi)))
            for y0, hi, lo in zip(y, y5, y4)
        )
        if err <= 1.0:
            t = b if last else t + h
            y = y5
        factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err**-0.2))
        h = min(h * factor, cfg.output_grid)
        if t < b and h < _MIN_ADAPTIVE_STEP:
            raise SimulationDivergedError(t, "adaptive step size underflow")
    return y


def _integrate(model, params, y, a, b, cfg):
    if b - a <= TIME_EPS:
        return y
    if cfg.method == "rk4-fixed":
        return _rk4(model.rhs_function, params, y, a, b, cfg.step)
    return _rkf45(model.rhs_function, params, y, a, b, cfg)


def evaluate_observables(model, row, params=None):
    """Observable values of one state row

    Non-finite inputs or failing expressions yield NaN entries instead of
    raising; callers test with np.isfinite.
    """
    row = [float(value) for value in row]
    if len(row) != len(model.states):
        raise ValidationError(
            f"row has {len(row)} values, model <{model.name}> has "
            f"{len(model.states)} states"
        )
    params = (
        tuple(model.default_params())
        if params is None
        else _check_params(model, params)
    )
    try:
        return np.array(model.observable_function(row, params), dtype=float)
    except EVALUATION_ERRORS:
        values = []
        for func in model.single_observable_functions:
            try:
                values.append(func(row, params)[0])
            except EVALUATION_ERRORS:
                values.append(math.nan)
        return np.array(values, dtype=float)


def _observable_matrix(model, rows, params):
    if not model.observables:
        return np.zeros((len(rows), 0))
    return np.array(
        [evaluate_observables(model, row, params) for row in rows]
    ).reshape(len(rows), len(model.observables))


def head_trajectory(model, params, cp):
    """Single-row trajectory holding the checkpoint state"""
    return Trajectory(
        np.array([cp.time]),
        np.array([cp.state], dtype=float),
        _observable_matrix(model, [cp.state], _check_params(model, params)),
        model.state_names,
        model.observable_names,
    )


def resume(model, params, cp, doses, until, cfg):
    """Continue a simulation from a checkpoint up to a later grid point

    Doses with time in [cp.time, until) are applied; the returned segment
    holds the rows of the grid points in (cp.time, until].

    Args:
        model (ModelDefinition): The patient model
        params (sequence): Parameter vector
        cp (Checkpoint): Start of the segment
        doses (list): DoseEvent entries (others are ignored)
        until (float): End time, a grid point after cp.time
        cfg (SimulationConfig): Integrator settings

    Returns:
        tuple: (Trajectory segment, Checkpoint at until)
    """
    params = _check_params(model, params)
    if cp.signature != simulation_signature(model, params, cfg):
        raise CheckpointIncompatibleError(
            f"checkpoint at t={cp.time} belongs to another model, parameter "
            "set or simulation config"
        )
    end = cfg.grid_index(until, "resume target")
    if end <= cp.index:
        raise ContractError(
            f"resume target {until} is not after checkpoint time {cp.time}"
        )
    grid_end = cfg.grid_time(end)
    events = [
        event
        for event in _prepare_doses(model, doses, cfg)
        if cp.time - TIME_EPS <= event[0] < grid_end - TIME_EPS
    ]
    y = list(cp.state)
    times, rows, jumps = [], [], []
    pos = 0
    for k in range(cp.index, end):
        a = cfg.grid_time(k)
        b = cfg.grid_time(k + 1)
        cur = a
        while pos < len(events) and events[pos][0] < b - TIME_EPS:
            time, increments = events[pos]
            time = max(time, a)
            y = _integrate(model, params, y, cur, time, cfg)
            before = tuple(y)
            for idx, amount in sorted(increments.items()):
                y[idx] = y[idx] + amount
            jumps.append(DoseJump(time, before, tuple(y)))
            cur = time
            pos += 1
        y = _integrate(model, params, y, cur, b, cfg)
        times.append(b)
        rows.append(tuple(y))
    states = np.array(rows, dtype=float).reshape(len(rows), len(model.states))
    segment = Trajectory(
        np.array(times, dtype=float),
        states,
        _observable_matrix(model, rows, params),
        model.state_names,
        model.observable_names,
        tuple(jumps),
    )
    return segment, Checkpoint(grid_end, end, tuple(y), cp.signature, cp.extra)


def simulate(model, params, init, doses, horizon, cfg):
    """Simulate a model over [0, horizon] on the output grid

    Doses at the horizon do not change any row; they are recorded as the
    last jumps.

    Args:
        model (ModelDefinition): The patient model
        params (sequence): Parameter vector in model order
        init (sequence): Initial state vector
        doses (list): DoseEvent entries in any order
        horizon (float): End time in days
        cfg (SimulationConfig): Integrator settings

    Returns:
        Trajectory: Samples at 0, grid, 2*grid, ..., horizon
    """
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValidationError(f"horizon must be positive, got {horizon}")
    cfg.grid_index(horizon, "horizon")
    for dose in doses:
        if float(dose.time) > horizon + TIME_EPS:
            raise ValidationError(
                f"dose of <{dose.drug}> at t={dose.time} is after the "
                f"horizon {horizon}"
            )
    cp = initial_checkpoint(model, params, init, cfg)
    head = head_trajectory(model, params, cp)
    segment, _cp = resume(model, params, cp, doses, horizon, cfg)
    trajectory = head.concat(segment)
    y = [float(value) for value in trajectory.states[-1]]
    for time, increments in _prepare_doses(model, doses, cfg):
        if time < horizon - TIME_EPS:
            continue
        before = tuple(y)
        for idx, amount in sorted(increments.items()):
            y[idx] = y[idx] + amount
        trajectory.jumps = trajectory.jumps + (DoseJump(time, before, tuple(y)),)
    if trajectory.has_negative_states:
        verbose(f"Simulation of <{model.name}> reached negative states")
    return trajectory


def load_doses(path):
    """Read dose events from CSV with the header time,drug,amount"""
    try:
        frame = pd.read_csv(path, dtype={"drug": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ValidationError(f"cannot read doses <{path}>: {err}")
    if list(frame.columns) != ["time", "drug", "amount"]:
        raise ValidationError(f"dose file <{path}> must have columns time,drug,amount")
    return [
        DoseEvent(float(row.time), str(row.drug), float(row.amount))
        for row in frame.itertuples(index=False)
    ]
