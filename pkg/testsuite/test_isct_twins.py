#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      isct test twins
# AUTHOR(S):   isct.treatment developers
# PURPOSE:     Tests of digital twin computation
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

import math
import unittest
from dataclasses import replace

import numpy as np

from isct_test_base import IsctTestBase
from lib_isct.cohort import Cohort, VirtualPatient
from lib_isct.errors import ConfigError, ValidationError
from lib_isct.records import ClinicalRecord, Measurement, synthesise_record
from lib_isct.simulation import SimulationConfig, simulate
from lib_isct.twins import (
    MatchConfig,
    Tolerance,
    compute_twins,
    load_match_config,
    load_twin_sets,
    match_score,
    save_twin_sets,
)


class TwinsTestBase(IsctTestBase):
    """Records synthesised under context doses"""

    sample_times = [float(day) for day in range(15)]
    cfg = MatchConfig(context_doses=tuple(IsctTestBase.context_doses()))

    def record(self, vp, noise=0.0, seed=0, observables=None):
        return synthesise_record(
            vp,
            self.model,
            self.sample_times,
            noise,
            seed,
            observables=observables,
            doses=self.cfg.context_doses,
        )


class TestMatchScore(TwinsTestBase):
    """Test class for scoring and ranking"""

    def test_noise_free_record(self):
        """The generating virtual patient ranks first with score zero"""
        cohort = self.cohort(size=20)
        for vp in cohort:
            twin_set = compute_twins(cohort, self.record(vp), self.model, self.cfg)
            self.assertEqual(twin_set.ranked[0].vp_id, vp.id)
            self.assertEqual(twin_set.ranked[0].score, 0.0)
            self.assertEqual(twin_set.ranked[0].matched_fraction, 1.0)
            self.assertIn(vp.id, twin_set.accepted_ids)

    def test_noisy_record(self):
        """Under 5% noise the generator is among the best five in 18 of 20"""
        print("Running noisy twin recovery on 200 virtual patients...")
        cohort = self.cohort(size=200, seed=4)
        rng = np.random.default_rng(17)
        hits = 0
        for trial in range(20):
            vp = cohort.members[int(rng.integers(1, len(cohort)))]
            twin_set = compute_twins(
                cohort, self.record(vp, 0.05, trial), self.model, self.cfg, workers=2
            )
            top = [entry.vp_id for entry in twin_set.ranked[:5]]
            hits += vp.id in top
        print(f"Running noisy twin recovery finished: {hits} of 20.")
        self.assertGreaterEqual(hits, 18)

    def test_scaled_record(self):
        """Doubled hormone levels are matched by no virtual patient"""
        cohort = self.cohort(size=30)
        clean = self.record(cohort.members[0], observables=["L", "F"])
        doubled = ClinicalRecord(
            "doubled",
            tuple(replace(m, value=2.0 * m.value) for m in clean.measurements),
        )
        twin_set = compute_twins(cohort, doubled, self.model, self.cfg)
        self.assertFalse(twin_set.has_twin)
        self.assertLess(
            max(entry.matched_fraction for entry in twin_set.ranked),
            self.cfg.min_matched_fraction,
        )

    def test_brute_force_scores(self):
        cohort = self.cohort(size=8)
        record = self.record(cohort.members[5], 0.05, 3)
        twin_set = compute_twins(cohort, record, self.model, self.cfg)
        sim_cfg = SimulationConfig()
        expected = {}
        for vp in cohort:
            trajectory = simulate(
                self.model,
                vp.params,
                self.model.initial_state(),
                list(self.cfg.context_doses),
                14.0,
                sim_cfg,
            )
            errors = []
            for m in record.measurements:
                sim = np.interp(
                    m.time, trajectory.times, trajectory.observable(m.observable)
                )
                if m.value == 0:
                    errors.append(0.0 if sim == 0 else math.inf)
                else:
                    errors.append(abs(sim - m.value) / (0.1 * abs(m.value)))
            expected[vp.id] = sum(errors) / len(errors)
        order = sorted(expected, key=lambda vp_id: (expected[vp_id], vp_id))
        self.assertEqual([entry.vp_id for entry in twin_set.ranked], order)
        for entry in twin_set.ranked:
            self.assertAlmostEqual(entry.score, expected[entry.vp_id])

    def test_permutation_invariance(self):
        cohort = self.cohort(size=12)
        record = self.record(cohort.members[2], 0.05, 8)
        reversed_cohort = Cohort(cohort.model_name, tuple(reversed(cohort.members)))
        self.assertEqual(
            compute_twins(cohort, record, self.model, self.cfg),
            compute_twins(reversed_cohort, record, self.model, self.cfg),
        )

    def test_tolerance_monotonicity(self):
        """Looser tolerances never shrink the accepted set"""
        cohort = self.cohort(size=40)
        record = self.record(cohort.members[7], 0.05, 9)
        previous = set()
        for rel in (0.02, 0.05, 0.1, 0.2, 0.5):
            cfg = replace(self.cfg, default_tolerance=Tolerance(rel, 0.0))
            accepted = set(
                compute_twins(cohort, record, self.model, cfg).accepted_ids
            )
            self.assertTrue(previous <= accepted, f"accepted set shrank at rel={rel}")
            previous = accepted
        self.assertIn(cohort.members[7].id, previous)

    def test_diverging_member(self):
        model = self.toy_model("quadratic", {"x": 1.0}, {"x": "a*x*x"}, {"a": 1.0})
        cohort = Cohort(
            model.name,
            (VirtualPatient("vp00000", (1.0,)), VirtualPatient("vp00001", (0.0,))),
        )
        record = ClinicalRecord(
            "p", tuple(Measurement(float(t), "x", 1.0, "") for t in range(11))
        )
        score, fraction = match_score(cohort.members[0], record, model, MatchConfig())
        self.assertEqual(score, math.inf)
        self.assertEqual(fraction, 0.0)
        twin_set = compute_twins(cohort, record, model, MatchConfig())
        self.assertEqual(twin_set.accepted_ids, ("vp00001",))
        self.assertEqual(twin_set.ranked[-1].vp_id, "vp00000")

    def test_invalid_inputs(self):
        record = self.record(self.cohort(size=1).members[0])
        with self.assertRaises(ValidationError):
            compute_twins(Cohort(self.model.name, ()), record, self.model, self.cfg)
        foreign = ClinicalRecord("p", (Measurement(0.0, "E2", 1.0, "pg/mL"),))
        with self.assertRaises(ValidationError):
            compute_twins(self.cohort(size=2), foreign, self.model, self.cfg)

    def test_workers(self):
        cohort = self.cohort(size=16)
        record = self.record(cohort.members[4], 0.05, 1)
        self.assertEqual(
            compute_twins(cohort, record, self.model, self.cfg, workers=1),
            compute_twins(cohort, record, self.model, self.cfg, workers=3),
        )


class TestTwinFiles(TwinsTestBase):
    """Test class for match settings and twin set files"""

    def test_twin_set_round_trip(self):
        cohort = self.cohort(size=10)
        twin_sets = [
            compute_twins(cohort, self.record(vp, 0.05, i), self.model, self.cfg)
            for i, vp in enumerate(cohort.members[:3])
        ]
        path = self.tmp_path("twins.csv")
        save_twin_sets(twin_sets, path)
        loaded = load_twin_sets(path)
        self.assertEqual(sorted(loaded), sorted(ts.patient_id for ts in twin_sets))
        for twin_set in twin_sets:
            self.assertEqual(loaded[twin_set.patient_id], twin_set)

    def test_match_config(self):
        path = self.write_text(
            "match.yaml",
            "tolerance:\n"
            "  default: {rel: 0.2}\n"
            "  F: {rel: 0.05, abs: 0.5}\n"
            "min_matched_fraction: 0.9\n"
            "context_doses:\n"
            "  - {time: 0, drug: agonist, amount: 1.5}\n",
        )
        cfg = load_match_config(path)
        self.assertEqual(cfg.default_tolerance, Tolerance(0.2, 0.0))
        self.assertEqual(cfg.tolerance("F"), Tolerance(0.05, 0.5))
        self.assertEqual(cfg.tolerance("L"), Tolerance(0.2, 0.0))
        self.assertEqual(cfg.min_matched_fraction, 0.9)
        self.assertEqual(cfg.context_doses[0].amount, 1.5)
        with self.assertRaises(ConfigError):
            MatchConfig.from_dict({"rank_by": "rmse"})
        with self.assertRaises(ValidationError):
            MatchConfig(min_matched_fraction=1.5)


if __name__ == "__main__":
    unittest.main()
