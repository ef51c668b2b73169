#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      search
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Optimal per-day treatment plans by depth-first search with
#              incremental simulation, online monitoring, backjumping and
#              branch-and-bound
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

"""Treatment search.

A plan fixes one amount per drug for every day 0 .. horizon-1, applied at
the start of the day. Plans are compared by the lexicographic cost
(latest goal achievement time, total drug, days up to the last dose).
Among plans of equal cost the one enumerated first wins, where days are
enumerated in order and the amounts of a day in decision order.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import pandas as pd
import yaml

from .errors import (
    ConfigError,
    SearchSpaceTooLarge,
    SimulationDivergedError,
    ValidationError,
)
from .isct_lib import ORACLE_LEAF_LIMIT, SEARCH_DEFAULTS, TIME_EPS
from .messages import _, verbose, warning
from .monitors import (
    MonitorState,
    Status,
    Verdict,
    check,
    goal_time,
    validate_properties,
)
from .simulation import (
    DoseEvent,
    SimulationConfig,
    head_trajectory,
    initial_checkpoint,
    resume,
    simulate,
)

ROBUSTNESS = ("best-twin", "all-accepted-twins")
DECISION_ORDERS = ("descending-dose", "ascending-dose")
BACKTRACKING = ("backjump", "chronological")
PLAN_COLUMNS = ["day", "drug", "amount"]

OPTIMAL = "optimal"
FEASIBLE_BUDGET_EXHAUSTED = "feasible-budget-exhausted"
INFEASIBLE = "infeasible"
INFEASIBLE_BUDGET_EXHAUSTED = "infeasible-budget-exhausted"


class Cost(NamedTuple):
    goal_time: float
    total_drug: float
    length_used: float


INFEASIBLE_COST = Cost(math.inf, math.inf, math.inf)


@dataclass(frozen=True)
class DoseMenu:
    """Allowed daily amounts per drug

    Attributes:
        amounts (dict): Drug name -> strictly ascending tuple containing 0
    """

    amounts: dict

    def __post_init__(self):
        if not self.amounts:
            raise ValidationError("dose menu is empty")
        for drug, values in self.amounts.items():
            values = tuple(float(v) for v in values)
            if 0.0 not in values:
                raise ValidationError(f"dose menu of <{drug}> lacks 0")
            if any(not math.isfinite(v) or v < 0 for v in values):
                raise ValidationError(
                    f"dose menu of <{drug}> has invalid amounts"
                )
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValidationError(
                    f"dose menu of <{drug}> is not strictly ascending"
                )

    @property
    def drugs(self):
        return tuple(sorted(self.amounts))

    def options(self, order):
        """Per-day decisions, one amount per drug, in decision order"""
        if order not in DECISION_ORDERS:
            raise ValidationError(f"unknown decision order <{order}>")
        per_drug = []
        for drug in self.drugs:
            values = [float(v) for v in self.amounts[drug]]
            if order == "descending-dose":
                values.reverse()
            per_drug.append(values)
        return [tuple(option) for option in itertools.product(*per_drug)]

    def contains(self, drug, amount):
        return drug in self.amounts and float(amount) in [
            float(v) for v in self.amounts[drug]
        ]

    def check_model(self, model):
        unknown = sorted(set(self.amounts) - set(model.drug_names))
        if unknown:
            raise ValidationError(
                f"dose menu names drugs {unknown} unknown to model <{model.name}>"
            )

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("dose menu must map drugs to amount lists")
        try:
            return cls(
                {
                    str(drug): tuple(float(v) for v in values)
                    for drug, values in data.items()
                }
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(f"malformed dose menu: {err}")

    def to_dict(self):
        return {drug: list(self.amounts[drug]) for drug in self.drugs}


def load_menu(path):
    try:
        with open(path, encoding="utf-8") as stream:
            return DoseMenu.from_dict(yaml.safe_load(stream))
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read dose menu <{path}>: {err}")


def plan_total(decisions):
    """Total drug of a decision sequence, summed day by day"""
    total = 0.0
    for option in decisions:
        total = total + sum(option)
    return total


def plan_length(decisions):
    """Number of days up to and including the last day with a dose"""
    used = 0
    for day, option in enumerate(decisions):
        if any(option):
            used = day + 1
    return used


@dataclass(frozen=True)
class TreatmentPlan:
    """Daily dosing decisions

    Attributes:
        drugs (tuple): Drug names, the column order of decisions
        decisions (tuple): One tuple of amounts per day
    """

    drugs: tuple
    decisions: tuple

    def __post_init__(self):
        if not self.decisions:
            raise ValidationError("treatment plan has no days")
        for day, option in enumerate(self.decisions):
            if len(option) != len(self.drugs):
                raise ValidationError(
                    f"day {day} of the plan has {len(option)} amounts for "
                    f"{len(self.drugs)} drugs"
                )

    @property
    def horizon(self):
        return len(self.decisions)

    @property
    def total_drug(self):
        return plan_total(self.decisions)

    @property
    def length_used(self):
        return plan_length(self.decisions)

    def to_doses(self):
        """DoseEvent entries at integer days; zero amounts are omitted"""
        return [
            DoseEvent(float(day), drug, float(amount))
            for day, option in enumerate(self.decisions)
            for drug, amount in zip(self.drugs, option)
            if amount != 0
        ]

    def check_menu(self, menu):
        if tuple(self.drugs) != menu.drugs:
            raise ValidationError(
                f"plan drugs {list(self.drugs)} differ from the menu drugs "
                f"{list(menu.drugs)}"
            )
        for day, option in enumerate(self.decisions):
            for drug, amount in zip(self.drugs, option):
                if not menu.contains(drug, amount):
                    raise ValidationError(
                        f"day {day}: {amount} of <{drug}> is not on the menu"
                    )

    @classmethod
    def constant(cls, menu, daily, horizon):
        """Plan giving every menu drug the same amount every day"""
        option = tuple(float(daily) for _drug in menu.drugs)
        return cls(menu.drugs, tuple(option for _day in range(int(horizon))))


def save_plan(plan, path):
    """Write a plan as CSV day,drug,amount, zero amounts included"""
    rows = [
        (day, drug, float(amount))
        for day, option in enumerate(plan.decisions)
        for drug, amount in zip(plan.drugs, option)
    ]
    pd.DataFrame(rows, columns=PLAN_COLUMNS).to_csv(path, index=False)


def load_plan(path):
    """Read a plan CSV; days missing for a drug count as zero"""
    try:
        frame = pd.read_csv(path, dtype={"drug": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ValidationError(f"cannot read plan <{path}>: {err}")
    if list(frame.columns) != PLAN_COLUMNS or frame.empty:
        raise ValidationError(f"plan <{path}> must have columns day,drug,amount")
    days = frame["day"]
    if (days < 0).any() or (days != days.round()).any():
        raise ValidationError(f"plan <{path}> has invalid days")
    drugs = tuple(sorted(set(frame["drug"])))
    horizon = int(days.max()) + 1
    table = [[0.0] * len(drugs) for _day in range(horizon)]
    for row in frame.itertuples(index=False):
        table[int(row.day)][drugs.index(row.drug)] = float(row.amount)
    return TreatmentPlan(drugs, tuple(tuple(option) for option in table))


@dataclass(frozen=True)
class SearchConfig:
    """Settings of a treatment search

    Attributes:
        horizon (int): Number of decision days
        menu (DoseMenu): Allowed daily amounts
        robustness (str): "best-twin" or "all-accepted-twins"
        node_budget (int): Largest number of decision nodes simulated
        decision_order (str): "descending-dose" or "ascending-dose"
        backtracking (str): "backjump" or "chronological"
        simulation (SimulationConfig): Integrator settings
    """

    horizon: int
    menu: DoseMenu
    robustness: str = SEARCH_DEFAULTS["robustness"]
    node_budget: int = SEARCH_DEFAULTS["node_budget"]
    decision_order: str = SEARCH_DEFAULTS["decision_order"]
    backtracking: str = SEARCH_DEFAULTS["backtracking"]
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError(
                f"horizon must be a positive integer, got {self.horizon}"
            )
        if int(self.node_budget) < 1:
            raise ValidationError("node budget must be at least 1")
        for value, allowed in (
            (self.robustness, ROBUSTNESS),
            (self.decision_order, DECISION_ORDERS),
            (self.backtracking, BACKTRACKING),
        ):
            if value not in allowed:
                raise ValidationError(
                    f"<{value}> is not one of {', '.join(allowed)}"
                )
        self.simulation.grid_index(1.0, "day length")

    @classmethod
    def from_dict(cls, data, menu, simulation=None):
        data = dict(data or {})
        unknown = sorted(set(data) - {"horizon", *SEARCH_DEFAULTS})
        if unknown:
            raise ConfigError(f"unknown search settings {unknown}")
        if "horizon" not in data:
            raise ConfigError("search settings lack a horizon")
        return cls(
            int(data["horizon"]),
            menu,
            str(data.get("robustness", SEARCH_DEFAULTS["robustness"])),
            int(data.get("node_budget", SEARCH_DEFAULTS["node_budget"])),
            str(data.get("decision_order", SEARCH_DEFAULTS["decision_order"])),
            str(data.get("backtracking", SEARCH_DEFAULTS["backtracking"])),
            simulation or SimulationConfig(),
        )


@dataclass
class SearchStats:
    nodes_expanded: int = 0
    days_simulated: int = 0
    backjumps: int = 0
    prunes: int = 0


@dataclass(frozen=True)
class SearchResult:
    status: str
    plan: TreatmentPlan
    cost: Cost
    stats: SearchStats

    @property
    def found(self):
        return self.plan is not None


@dataclass(frozen=True)
class PlanEvaluation:
    """Outcome of simulating one plan on a set of twins

    Attributes:
        feasible (bool): Every property satisfied on every twin
        cost (Cost): Cost of the plan, INFEASIBLE_COST when infeasible
        verdicts (tuple): Verdict lists, one per twin
        trajectories (tuple): Trajectories, None for diverged twins
    """

    feasible: bool
    cost: Cost
    verdicts: tuple
    trajectories: tuple


def _twin_list(twins, robustness):
    twins = list(twins) if isinstance(twins, (list, tuple)) else [twins]
    if not twins:
        raise ValidationError("no twin to optimise for")
    if robustness == "best-twin":
        return twins[:1]
    return twins


def evaluate_plan(model, twins, properties, plan, sim_cfg):
    """Simulate a full plan on every twin and check all properties

    Args:
        model (ModelDefinition): Patient model
        twins (list): VirtualPatient entries
        properties (list): Property entries
        plan (TreatmentPlan): Plan to evaluate
        sim_cfg (SimulationConfig): Integrator settings

    Returns:
        PlanEvaluation: Verdicts, trajectories and cost
    """
    twins = _twin_list(twins, "all-accepted-twins")
    doses = plan.to_doses()
    verdicts, trajectories = [], []
    feasible = True
    for vp in twins:
        try:
            trajectory = simulate(
                model, vp.params, model.initial_state(), doses, plan.horizon, sim_cfg
            )
        except SimulationDivergedError as err:
            verbose(f"Plan diverged on <{vp.id}> at t={err.time}")
            verdicts.append(
                [Verdict(prop.name, Status.VIOLATED, err.time) for prop in properties]
            )
            trajectories.append(None)
            feasible = False
            continue
        result = check(trajectory, properties)
        feasible = feasible and all(v.status is Status.SATISFIED for v in result)
        verdicts.append(result)
        trajectories.append(trajectory)
    if feasible:
        cost = Cost(
            max(goal_time(result, properties) for result in verdicts),
            plan.total_drug,
            plan.length_used,
        )
    else:
        cost = INFEASIBLE_COST
    return PlanEvaluation(feasible, cost, tuple(verdicts), tuple(trajectories))


def exhaustive_oracle(model, twins, properties, cfg):
    """Evaluate every plan of the search space

    Independent reference for optimise(): every leaf is simulated over
    the full horizon and checked offline.

    Returns:
        SearchResult: status "optimal" or "infeasible"
    """
    cfg.menu.check_model(model)
    twins = _twin_list(twins, cfg.robustness)
    validate_properties(properties, model, float(cfg.horizon))
    options = cfg.menu.options(cfg.decision_order)
    size = len(options) ** cfg.horizon
    if size > ORACLE_LEAF_LIMIT:
        raise SearchSpaceTooLarge(size, ORACLE_LEAF_LIMIT)
    stats = SearchStats()
    best, best_cost = None, INFEASIBLE_COST
    for decisions in itertools.product(options, repeat=cfg.horizon):
        plan = TreatmentPlan(cfg.menu.drugs, decisions)
        outcome = evaluate_plan(model, twins, properties, plan, cfg.simulation)
        stats.nodes_expanded += 1
        stats.days_simulated += cfg.horizon * len(twins)
        if outcome.feasible and outcome.cost < best_cost:
            best, best_cost = plan, outcome.cost
    return SearchResult(OPTIMAL if best else INFEASIBLE, best, best_cost, stats)


@dataclass
class Frame:
    """One decision day on the search trail

    Attributes:
        day (int): Decision day
        options (list): Decisions of the day in decision order
        next (int): Index of the next untried option
        checkpoints (list): Per-twin checkpoints at the start of day
        snapshots (list): Per-twin monitor snapshots after the row of day
        drug (float): Total drug given before day
        length (int): Used plan length before day
    """

    day: int
    options: list
    checkpoints: list
    snapshots: list
    drug: float
    length: int
    next: int = 0

    @property
    def has_untried(self):
        return self.next < len(self.options)

    @property
    def choice(self):
        return self.options[self.next - 1]


def backjump_target(violation, trail):
    """Trail depth to resume after a violation

    Args:
        violation (Verdict): Violated verdict with witness time t
        trail (list): Frame entries, one per decided day

    Returns:
        int: Depth of the latest day before t with untried options, 0 when
             there is none
    """
    for depth in range(len(trail) - 1, -1, -1):
        frame = trail[depth]
        if frame.day < violation.witness - TIME_EPS and frame.has_untried:
            return depth
    return 0


class _Search:
    """Depth-first search state of one optimise() call"""

    def __init__(self, model, twins, properties, cfg):
        self.model = model
        self.twins = twins
        self.properties = list(properties)
        self.cfg = cfg
        self.options = cfg.menu.options(cfg.decision_order)
        self.zero = tuple(0.0 for _drug in cfg.menu.drugs)
        self.stats = SearchStats()
        self.best = None
        self.best_cost = INFEASIBLE_COST
        self.monitors = [
            MonitorState(
                self.properties, cfg.simulation.output_grid, float(cfg.horizon)
            )
            for _vp in twins
        ]

    def _doses(self, day, option):
        return [
            DoseEvent(float(day), drug, amount)
            for drug, amount in zip(self.cfg.menu.drugs, option)
            if amount != 0
        ]

    def _advance(self, index, cp, day, option):
        """Simulate one day on one twin and feed its monitor

        Returns:
            Checkpoint: State at the start of the next day
        """
        vp = self.twins[index]
        segment, cp = resume(
            self.model,
            vp.params,
            cp,
            self._doses(day, option),
            float(day + 1),
            self.cfg.simulation,
        )
        self.stats.days_simulated += 1
        self.monitors[index].feed(segment)
        return cp

    def _violation(self):
        violated = [
            verdict
            for verdict in (monitor.first_violation() for monitor in self.monitors)
            if verdict is not None
        ]
        if not violated:
            return None
        return min(violated, key=lambda verdict: verdict.witness)

    def _goal_bound(self):
        return max(monitor.earliest_goal_time() for monitor in self.monitors)

    def _goals_satisfied(self):
        return all(monitor.goals_satisfied for monitor in self.monitors)

    def _zero_tail(self, checkpoints, start):
        """Complete the plan with zero doses from day start

        Returns:
            bool: True when every property ends satisfied on every twin
        """
        for index, cp in enumerate(checkpoints):
            for day in range(start, self.cfg.horizon):
                try:
                    cp = self._advance(index, cp, day, self.zero)
                except SimulationDivergedError:
                    return False
                if self.monitors[index].any_violated:
                    return False
        return True

    def _offer(self, prefix, drug, length):
        decisions = tuple(prefix) + tuple(
            self.zero for _day in range(self.cfg.horizon - len(prefix))
        )
        cost = Cost(self._goal_bound(), drug, length)
        if cost < self.best_cost:
            self.best = TreatmentPlan(self.cfg.menu.drugs, decisions)
            self.best_cost = cost
            verbose(f"New incumbent with cost {tuple(cost)}")

    def _root(self):
        checkpoints = []
        for vp, monitor in zip(self.twins, self.monitors):
            cp = initial_checkpoint(
                self.model, vp.params, self.model.initial_state(), self.cfg.simulation
            )
            monitor.feed(head_trajectory(self.model, vp.params, cp))
            checkpoints.append(cp)
        if self._violation() is not None:
            return None
        frame = Frame(
            0,
            self.options,
            checkpoints,
            [monitor.snapshot() for monitor in self.monitors],
            0.0,
            0,
        )
        if self._goals_satisfied():
            if self._zero_tail(checkpoints, 0):
                self._offer((), 0.0, 0)
            self._restore(frame)
        return frame

    def _restore(self, frame):
        for monitor, snapshot in zip(self.monitors, frame.snapshots):
            monitor.restore(snapshot)

    def _on_violation(self, violation, trail):
        if self.cfg.backtracking != "backjump":
            return
        target = backjump_target(violation, trail)
        if target < len(trail) - 1:
            self.stats.backjumps += 1
            del trail[target + 1 :]

    def run(self):
        root = self._root()
        if root is None:
            return False
        trail = [root]
        exhausted = False
        while trail:
            frame = trail[-1]
            if not frame.has_untried:
                trail.pop()
                continue
            option = self.options[frame.next]
            frame.next += 1
            drug = frame.drug + sum(option)
            length = frame.day + 1 if any(option) else frame.length
            self._restore(frame)
            if Cost(self._goal_bound(), drug, length) >= self.best_cost:
                self.stats.prunes += 1
                continue
            if self.stats.nodes_expanded >= self.cfg.node_budget:
                exhausted = True
                break
            self.stats.nodes_expanded += 1
            checkpoints = []
            try:
                for index, cp in enumerate(frame.checkpoints):
                    checkpoints.append(self._advance(index, cp, frame.day, option))
            except SimulationDivergedError as err:
                verbose(f"Day {frame.day} diverged at t={err.time}")
                self._on_violation(
                    Verdict("diverged", Status.VIOLATED, float(frame.day + 1)), trail
                )
                continue
            violation = self._violation()
            if violation is not None:
                self._on_violation(violation, trail)
                continue
            if Cost(self._goal_bound(), drug, length) >= self.best_cost:
                self.stats.prunes += 1
                continue
            prefix = [entry.choice for entry in trail]
            day = frame.day + 1
            if day == self.cfg.horizon:
                self._offer(prefix, drug, length)
                continue
            child = Frame(
                day,
                self.options,
                checkpoints,
                [monitor.snapshot() for monitor in self.monitors],
                drug,
                length,
            )
            if self._goals_satisfied():
                if self._zero_tail(checkpoints, day):
                    self._offer(prefix, drug, length)
                    continue
                self._restore(child)
            trail.append(child)
        return exhausted


def optimise(model, twins, properties, cfg):
    """Search the cost-minimal treatment plan

    Days are decided in order; each decision simulates only its day from
    the checkpoint of the previous day and feeds the monitors. Violated
    properties cut the branch, partial plans whose lower bound cost
    reaches the incumbent are pruned, and once every goal is satisfied
    the remaining days are first tried without doses.

    Args:
        model (ModelDefinition): Patient model
        twins (VirtualPatient or list): Twin(s) to plan for; best-twin uses
                                        the first one only
        properties (list): Invariants and goals
        cfg (SearchConfig): Search settings

    Returns:
        SearchResult: Status, plan, cost and statistics
    """
    cfg.menu.check_model(model)
    twins = _twin_list(twins, cfg.robustness)
    validate_properties(properties, model, float(cfg.horizon))
    for vp in twins:
        if len(vp.params) != len(model.params):
            raise ValidationError(
                f"twin <{vp.id}> has {len(vp.params)} params, model "
                f"<{model.name}> has {len(model.params)}"
            )
    search = _Search(model, twins, properties, cfg)
    exhausted = search.run()
    if exhausted:
        status = (
            FEASIBLE_BUDGET_EXHAUSTED if search.best else INFEASIBLE_BUDGET_EXHAUSTED
        )
        warning(
            _(
                f"Node budget of {cfg.node_budget} exhausted, search result is "
                f"{status}"
            )
        )
    else:
        status = OPTIMAL if search.best else INFEASIBLE
    verbose(
        f"Search {status}: {search.stats.nodes_expanded} nodes, "
        f"{search.stats.days_simulated} days simulated, "
        f"{search.stats.backjumps} backjumps, {search.stats.prunes} prunes"
    )
    return SearchResult(status, search.best, search.best_cost, search.stats)
