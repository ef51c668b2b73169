#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      isct test
# AUTHOR(S):   isct.treatment developers
# PURPOSE:     Test base for the isct library
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
#############################################################################

import os
import shutil
import tempfile
from unittest import TestCase

import numpy as np

from lib_isct.cohort import generate_cohort
from lib_isct.model import load_model, model_from_dict
from lib_isct.simulation import DoseEvent, Trajectory


class IsctTestBase(TestCase):
    """Base test class for the isct library"""

    model_name = "surrogate"
    # relative half-width applied to every parameter of generated cohorts
    spread = 0.2
    cohort_size = 10
    cohort_seed = 1
    pid = os.getpid()
    tmp_dir = None
    model = None

    @classmethod
    # pylint: disable=invalid-name
    def setUpClass(cls):
        """Set up class method to load the model and create a temporary
        directory"""
        cls.model = load_model(cls.model_name)
        cls.tmp_dir = tempfile.mkdtemp(prefix=f"isct_test_{cls.pid}_")

    @classmethod
    # pylint: disable=invalid-name
    def tearDownClass(cls):
        """Tear down class method to remove the temporary directory"""
        if cls.tmp_dir is not None:
            shutil.rmtree(cls.tmp_dir, ignore_errors=True)
            cls.tmp_dir = None

    def tmp_path(self, name):
        return os.path.join(self.tmp_dir, name)

    def write_text(self, name, text):
        path = self.tmp_path(name)
        with open(path, "w", encoding="utf-8") as stream:
            stream.write(text)
        return path

    @classmethod
    def cohort(cls, size=None, seed=None, spread=None):
        """Cohort of the test model, every parameter perturbed alike"""
        spread = cls.spread if spread is None else spread
        return generate_cohort(
            cls.model,
            cls.model.default_params(),
            np.full(len(cls.model.params), spread),
            cls.cohort_size if size is None else size,
            cls.cohort_seed if seed is None else seed,
        )

    @staticmethod
    def context_doses(amount=1.0, days=5):
        """Daily agonist doses a patient received while being measured"""
        return [DoseEvent(float(day), "agonist", amount) for day in range(days)]

    @staticmethod
    def toy_model(name, states, rhs, params=None, drugs=None, observables=None):
        """Model from compact arguments

        Args:
            name (str): Model name
            states (dict): State name -> initial value
            rhs (dict): State name -> derivative expression
            params (dict): Parameter name -> value
            drugs (list): Drug mappings as in a model file
            observables (dict): Observable name -> expression, by default
                                one observable per state
        """
        observables = observables or {state: state for state in states}
        return model_from_dict(
            {
                "name": name,
                "states": [{"name": s, "init": v} for s, v in states.items()],
                "params": [
                    {"name": p, "value": v} for p, v in (params or {}).items()
                ],
                "drugs": drugs or [],
                "observables": [
                    {"name": o, "expr": e} for o, e in observables.items()
                ],
                "rhs": rhs,
            }
        )

    def decay_model(self):
        """dx/dt = -k x with k = 1"""
        return self.toy_model("decay", {"x": 1.0}, {"x": "-k*x"}, {"k": 1.0})

    def blowup_model(self):
        """dx/dt = x^2 with a bolus drug; x = 1 diverges one day later"""
        return self.toy_model(
            "blowup",
            {"x": 0.0, "given": 0.0},
            {"x": "x*x", "given": "0"},
            drugs=[{"name": "bolus", "target": "x", "tally": "given"}],
        )

    @staticmethod
    def trajectory(times, **observables):
        """Trajectory without states holding the given observable columns"""
        times = np.asarray(times, dtype=float)
        names = tuple(sorted(observables))
        values = np.column_stack(
            [np.asarray(observables[name], dtype=float) for name in names]
        ).reshape(len(times), len(names))
        return Trajectory(times, np.zeros((len(times), 0)), values, (), names)

    @staticmethod
    def slice_trajectory(trajectory, start, stop):
        """Rows start..stop-1 of a trajectory"""
        return Trajectory(
            trajectory.times[start:stop],
            trajectory.states[start:stop],
            trajectory.observables[start:stop],
            trajectory.state_names,
            trajectory.observable_names,
        )

    def assertTrajectoryEqual(self, first, second, msg=None):
        """Bit-exact comparison of two trajectories"""
        # pylint: disable=invalid-name
        for name in ("times", "states", "observables"):
            self.assertTrue(
                np.array_equal(getattr(first, name), getattr(second, name)),
                msg or f"Trajectories differ in their {name}",
            )
