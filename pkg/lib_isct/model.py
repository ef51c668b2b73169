#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      model
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     ODE patient model definitions and the model definition
#              file format
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
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import yaml

from .errors import ModelError
from .expressions import compile_vector, referenced_names
from .isct_lib import BUILTIN_MODELS

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


@dataclass(frozen=True)
class StateDef:
    name: str
    unit: str
    init: float


@dataclass(frozen=True)
class ParamDef:
    name: str
    unit: str
    value: float


@dataclass(frozen=True)
class DrugDef:
    """A drug administered as impulses into a target compartment

    The optional tally state is incremented by the same amount and keeps
    track of the cumulative administered dose.
    """

    name: str
    unit: str
    target: str
    tally: str = None


@dataclass(frozen=True)
class ObservableDef:
    name: str
    expr: str
    unit: str = ""


@dataclass(frozen=True)
class ModelDefinition:
    """ODE patient model: states, parameters, drugs, observables and rhs

    Args:
        name (str): Model identifier
        states (tuple): StateDef entries in vector order
        params (tuple): ParamDef entries in vector order
        drugs (tuple): DrugDef entries
        observables (tuple): ObservableDef entries
        rhs (tuple): One derivative expression per state, in state order
    """

    name: str
    states: tuple
    params: tuple
    drugs: tuple = ()
    observables: tuple = ()
    rhs: tuple = field(default=())

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Check the model invariants, raise ModelError on violation"""
        if not self.name:
            raise ModelError("model name is empty")
        if not self.states:
            raise ModelError(f"model <{self.name}> declares no states")
        for kind, entries in (
            ("state", self.states),
            ("param", self.params),
            ("drug", self.drugs),
            ("observable", self.observables),
        ):
            names = [entry.name for entry in entries]
            dupes = sorted({name for name in names if names.count(name) > 1})
            if dupes:
                raise ModelError(
                    f"duplicate {kind} name(s) {', '.join(dupes)} in model "
                    f"<{self.name}>"
                )
        clash = set(self.state_names) & set(self.param_names)
        clash |= {"t"} & (set(self.state_names) | set(self.param_names))
        if clash:
            raise ModelError(
                f"names {sorted(clash)} of <{self.name}> are used twice or "
                "shadow the time variable t"
            )
        for state in self.states:
            if not math.isfinite(state.init):
                raise ModelError(f"initial value of <{state.name}> is not finite")
        for param in self.params:
            if not math.isfinite(param.value):
                raise ModelError(f"default of param <{param.name}> is not finite")
        for drug in self.drugs:
            for role, target in (("target", drug.target), ("tally", drug.tally)):
                if target is not None and target not in self.state_names:
                    raise ModelError(
                        f"{role} <{target}> of drug <{drug.name}> is not a state"
                    )
        if len(self.rhs) != len(self.states):
            raise ModelError(
                f"model <{self.name}> has {len(self.states)} states but "
                f"{len(self.rhs)} rhs expressions"
            )
        known = set(self.state_names) | set(self.param_names)
        for state, expr in zip(self.states, self.rhs):
            unknown = referenced_names(expr) - known - {"t"}
            if unknown:
                raise ModelError(
                    f"rhs of <{state.name}> references undeclared "
                    f"{sorted(unknown)}"
                )
        for obs in self.observables:
            unknown = referenced_names(obs.expr) - known
            if unknown:
                raise ModelError(
                    f"observable <{obs.name}> references undeclared "
                    f"{sorted(unknown)}"
                )

    @property
    def state_names(self):
        return tuple(state.name for state in self.states)

    @property
    def param_names(self):
        return tuple(param.name for param in self.params)

    @property
    def drug_names(self):
        return tuple(drug.name for drug in self.drugs)

    @property
    def observable_names(self):
        return tuple(obs.name for obs in self.observables)

    def default_params(self):
        return np.array([param.value for param in self.params], dtype=float)

    def initial_state(self):
        return np.array([state.init for state in self.states], dtype=float)

    def drug(self, name):
        for drug in self.drugs:
            if drug.name == name:
                return drug
        raise ModelError(f"unknown drug <{name}> for model <{self.name}>")

    def observable_unit(self, name):
        for obs in self.observables:
            if obs.name == name:
                return obs.unit
        raise ModelError(f"unknown observable <{name}> for model <{self.name}>")

    def _slots(self):
        slots = {name: ("y", i) for i, name in enumerate(self.state_names)}
        slots.update({name: ("p", i) for i, name in enumerate(self.param_names)})
        slots["t"] = ("t", None)
        return slots

    # compiled functions are cached on first use; the dataclass is frozen so
    # the cached value stays consistent with the definition
    @cached_property
    def rhs_function(self):
        """f(t, y, p) -> tuple of derivatives"""
        return compile_vector(self.rhs, self._slots(), ("t", "y", "p"))

    @cached_property
    def observable_function(self):
        """f(y, p) -> tuple of observable values"""
        slots = self._slots()
        del slots["t"]
        return compile_vector(
            [obs.expr for obs in self.observables], slots, ("y", "p")
        )

    @cached_property
    def single_observable_functions(self):
        slots = self._slots()
        del slots["t"]
        return tuple(
            compile_vector([obs.expr], slots, ("y", "p"))
            for obs in self.observables
        )

    @cached_property
    def fingerprint(self):
        """Stable hash of the definition, used for checkpoint signatures"""
        text = yaml.safe_dump(model_to_dict(self), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def model_to_dict(model):
    """Serialise a model definition to plain data"""
    drugs = []
    for drug in model.drugs:
        entry = {"name": drug.name, "unit": drug.unit, "target": drug.target}
        if drug.tally is not None:
            entry["tally"] = drug.tally
        drugs.append(entry)
    return {
        "name": model.name,
        "states": [
            {"name": s.name, "unit": s.unit, "init": float(s.init)}
            for s in model.states
        ],
        "params": [
            {"name": p.name, "unit": p.unit, "value": float(p.value)}
            for p in model.params
        ],
        "drugs": drugs,
        "observables": [
            {"name": o.name, "expr": o.expr, "unit": o.unit}
            for o in model.observables
        ],
        "rhs": {s.name: expr for s, expr in zip(model.states, model.rhs)},
    }


def model_from_dict(data):
    """Build a model definition from plain data (as read from YAML)"""
    if not isinstance(data, dict):
        raise ModelError("model definition must be a mapping")
    try:
        states = tuple(
            StateDef(str(s["name"]), str(s.get("unit", "")), float(s["init"]))
            for s in data["states"]
        )
        params = tuple(
            ParamDef(str(p["name"]), str(p.get("unit", "")), float(p["value"]))
            for p in data.get("params") or []
        )
        drugs = tuple(
            DrugDef(
                str(d["name"]),
                str(d.get("unit", "")),
                str(d["target"]),
                None if d.get("tally") is None else str(d["tally"]),
            )
            for d in data.get("drugs") or []
        )
        observables = tuple(
            ObservableDef(str(o["name"]), str(o["expr"]), str(o.get("unit", "")))
            for o in data.get("observables") or []
        )
        rhs_map = data["rhs"]
        name = str(data["name"])
    except (KeyError, TypeError, ValueError) as err:
        raise ModelError(f"malformed model definition: {err}")
    if not isinstance(rhs_map, dict):
        raise ModelError("rhs must map state names to expressions")
    missing = [s.name for s in states if s.name not in rhs_map]
    extra = sorted(set(rhs_map) - {s.name for s in states})
    if missing or extra:
        raise ModelError(
            f"rhs entries do not match states (missing {missing}, "
            f"unknown {extra})"
        )
    rhs = tuple(str(rhs_map[s.name]) for s in states)
    return ModelDefinition(name, states, params, drugs, observables, rhs)


def load_model(name_or_path):
    """Load a built-in model by name or a model definition file

    Args:
        name_or_path (str): Built-in model name (e.g. "surrogate") or path
                            to a YAML model definition

    Returns:
        ModelDefinition: The loaded model
    """
    if name_or_path in BUILTIN_MODELS:
        path = os.path.join(DATA_DIR, BUILTIN_MODELS[name_or_path])
    else:
        path = name_or_path
    if not os.path.isfile(path):
        raise ModelError(f"model <{name_or_path}> is neither built in nor a file")
    with open(path, encoding="utf-8") as stream:
        try:
            data = yaml.safe_load(stream)
        except yaml.YAMLError as err:
            raise ModelError(f"cannot read model file <{path}>: {err}")
    return model_from_dict(data)


def save_model(model, path):
    """Write a model definition file"""
    with open(path, "w", encoding="utf-8") as stream:
        yaml.safe_dump(model_to_dict(model), stream, sort_keys=False)
