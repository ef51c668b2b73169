#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      isct test records
# AUTHOR(S):   isct.treatment developers
# PURPOSE:     Tests of clinical records and exclusion criteria
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

import unittest

import numpy as np

from isct_test_base import IsctTestBase
from lib_isct.errors import (
    ConfigError,
    RecordParseError,
    UnitMismatchError,
    ValidationError,
)
from lib_isct.records import (
    ClinicalRecord,
    ExclusionCriteria,
    ExclusionReason,
    Measurement,
    apply_exclusion,
    ingest,
    load_exclusion_criteria,
    save_records,
    synthesise_record,
)
from lib_isct.simulation import SimulationConfig, simulate

HEADER = "patient_id,time_days,observable,value,unit\n"


class TestIngest(IsctTestBase):
    """Test class for reading clinical records"""

    def test_one_patient(self):
        path = self.write_text(
            "one.csv", HEADER + "p1,0,L,10.5,IU/L\np1,1,F,11.25,IU/L\n"
        )
        records = ingest(path)
        self.assertEqual(len(records), 1)
        self.assertEqual(records[0].patient_id, "p1")
        self.assertEqual(
            records[0].measurements,
            (Measurement(0.0, "L", 10.5, "IU/L"), Measurement(1.0, "F", 11.25, "IU/L")),
        )

    def test_sorted_by_time(self):
        path = self.write_text(
            "unsorted.csv",
            HEADER + "p2,3,L,4,IU/L\np1,2,L,9,IU/L\np2,1,L,8,IU/L\np2,2,L,6,IU/L\n",
        )
        records = ingest(path, self.model)
        self.assertEqual([record.patient_id for record in records], ["p1", "p2"])
        self.assertEqual([m.time for m in records[1].measurements], [1.0, 2.0, 3.0])

    def test_parse_error_line(self):
        path = self.write_text(
            "broken.csv", HEADER + "p1,0,L,10,IU/L\np1,1,L,ten,IU/L\n"
        )
        with self.assertRaises(RecordParseError) as ctx:
            ingest(path)
        self.assertEqual(ctx.exception.line, 3)
        self.assertIn("line 3", str(ctx.exception))

    def test_blank_lines_keep_line_numbers(self):
        path = self.write_text(
            "blank.csv", HEADER + "p1,0,L,10,IU/L\n\np1,1,L,ten,IU/L\n"
        )
        with self.assertRaises(RecordParseError) as ctx:
            ingest(path)
        self.assertEqual(ctx.exception.line, 4)
        clean = self.write_text(
            "blank_ok.csv", HEADER + "p1,0,L,10,IU/L\n\np1,1,L,9,IU/L\n\n"
        )
        self.assertEqual(len(ingest(clean)[0].measurements), 2)

    def test_extra_field_line(self):
        path = self.write_text(
            "wide.csv", HEADER + "p1,0,L,10,IU/L\np1,1,L,9,IU/L,extra\n"
        )
        with self.assertRaises(RecordParseError) as ctx:
            ingest(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_bad_header(self):
        path = self.write_text("header.csv", "id,time,obs,value,unit\np1,0,L,1,IU/L\n")
        with self.assertRaises(RecordParseError):
            ingest(path)

    def test_model_checks(self):
        unit = self.write_text("unit.csv", HEADER + "p1,0,L,10,mIU/mL\n")
        with self.assertRaises(UnitMismatchError) as ctx:
            ingest(unit, self.model)
        self.assertIn("IU/L", str(ctx.exception))
        unknown = self.write_text("unknown.csv", HEADER + "p1,0,E2,100,pg/mL\n")
        with self.assertRaises(RecordParseError):
            ingest(unknown, self.model)
        # without a model any observable is accepted
        self.assertEqual(len(ingest(unknown)), 1)

    def test_round_trip(self):
        records = [
            ClinicalRecord(
                "a",
                (
                    Measurement(0.0, "L", 0.1 + 0.2, "IU/L"),
                    Measurement(1.5, "F", 1 / 3, "IU/L"),
                ),
            ),
            ClinicalRecord("b", (Measurement(2.0, "L", 7.0, "IU/L"),)),
        ]
        path = self.tmp_path("records.csv")
        save_records(records, path)
        self.assertEqual(ingest(path, self.model), records)

    def test_empty_record(self):
        with self.assertRaises(ValidationError):
            ClinicalRecord("p", ())


class TestExclusion(IsctTestBase):
    """Test class for exclusion criteria"""

    observables = ("L", "F", "D")
    cases = 1000

    @staticmethod
    def record(patient_id, times, observable="L"):
        return ClinicalRecord(
            patient_id,
            tuple(Measurement(float(t), observable, 1.0, "IU/L") for t in times),
        )

    def test_empty_criteria(self):
        records = [self.record("a", [0]), self.record("b", [0, 3])]
        kept, excluded = apply_exclusion(records, ExclusionCriteria())
        self.assertEqual(kept, records)
        self.assertEqual(excluded, [])

    def test_min_span(self):
        record = self.record("a", [0, 5])
        kept, excluded = apply_exclusion([record], ExclusionCriteria(min_span=10))
        self.assertEqual(kept, [])
        self.assertEqual(excluded, [(record, ExclusionReason.MIN_SPAN)])
        self.assertEqual(excluded[0][1].value, "min-span")

    def test_min_measurements(self):
        record = self.record("a", [0, 5])
        criteria = ExclusionCriteria(min_measurements={"L": 3})
        _kept, excluded = apply_exclusion([record], criteria)
        self.assertEqual(excluded[0][1], ExclusionReason.MIN_MEASUREMENTS)

    def test_first_violated_criterion(self):
        record = self.record("a", [0, 1])
        criteria = ExclusionCriteria(
            min_measurements={"L": 5},
            required_observables=frozenset({"F"}),
            min_span=10,
        )
        _kept, excluded = apply_exclusion([record], criteria)
        self.assertEqual(excluded[0][1], ExclusionReason.REQUIRED_OBSERVABLE)

    def test_load_criteria(self):
        path = self.write_text(
            "exclusion.yaml",
            "min_measurements: {L: 3}\nrequired_observables: [L, F]\nmin_span: 7\n",
        )
        criteria = load_exclusion_criteria(path)
        self.assertEqual(criteria.min_measurements, {"L": 3})
        self.assertEqual(criteria.required_observables, frozenset({"L", "F"}))
        self.assertEqual(criteria.min_span, 7.0)
        self.assertEqual(ExclusionCriteria.from_dict(criteria.to_dict()), criteria)
        bad = self.write_text("bad_exclusion.yaml", "max_age: 40\n")
        with self.assertRaises(ConfigError):
            load_exclusion_criteria(bad)

    def expected_reason(self, record, criteria):
        """First violated criterion, recomputed from the measurements"""
        present = {m.observable for m in record.measurements}
        if any(name not in present for name in criteria.required_observables):
            return ExclusionReason.REQUIRED_OBSERVABLE
        for name, count in criteria.min_measurements.items():
            if len([m for m in record.measurements if m.observable == name]) < count:
                return ExclusionReason.MIN_MEASUREMENTS
        times = [m.time for m in record.measurements]
        if max(times) - min(times) < criteria.min_span:
            return ExclusionReason.MIN_SPAN
        return None

    def random_record(self, rng, patient_id):
        count = int(rng.integers(1, 8))
        measurements = sorted(
            Measurement(
                float(rng.integers(0, 15)),
                str(rng.choice(self.observables)),
                float(rng.uniform(0, 20)),
                "IU/L",
            )
            for _m in range(count)
        )
        return ClinicalRecord(patient_id, tuple(measurements))

    def random_criteria(self, rng):
        names = [str(name) for name in self.observables]
        return ExclusionCriteria(
            min_measurements={
                name: int(rng.integers(0, 4)) for name in names if rng.random() < 0.4
            },
            required_observables=frozenset(
                name for name in names if rng.random() < 0.3
            ),
            min_span=float(rng.choice([0.0, 2.0, 5.0, 10.0])),
        )

    def test_partition(self):
        """Kept and excluded records partition the input"""
        print(f"Running {self.cases} randomised exclusion cases...")
        rng = np.random.default_rng(2026)
        for case in range(self.cases):
            records = [
                self.random_record(rng, f"p{case}_{i}")
                for i in range(int(rng.integers(0, 6)))
            ]
            criteria = self.random_criteria(rng)
            kept, excluded = apply_exclusion(records, criteria)
            self.assertEqual(len(kept) + len(excluded), len(records))
            for record, reason in excluded:
                self.assertIsInstance(reason, ExclusionReason)
                self.assertEqual(reason, self.expected_reason(record, criteria))
            for record in kept:
                self.assertIsNone(self.expected_reason(record, criteria))
            excluded_records = [record for record, _reason in excluded]
            self.assertEqual(kept, [r for r in records if r in kept])
            self.assertEqual(
                excluded_records, [r for r in records if r in excluded_records]
            )
        print("Running randomised exclusion cases finished.")


class TestSynthesiseRecord(IsctTestBase):
    """Test class for synthetic clinical records"""

    cfg = SimulationConfig()
    times = [float(day) for day in range(15)]

    def test_noise_free_samples(self):
        vp = self.cohort().members[3]
        doses = self.context_doses()
        record = synthesise_record(vp, self.model, self.times, 0.0, 1, doses=doses)
        trajectory = simulate(
            self.model, vp.params, self.model.initial_state(), doses, 14.0, self.cfg
        )
        for m in record.measurements:
            self.assertEqual(
                m.value, trajectory.observable(m.observable)[int(m.time)]
            )
            self.assertEqual(m.unit, self.model.observable_unit(m.observable))
        self.assertEqual(len(record.measurements), 15 * len(self.model.observables))
        self.assertEqual(record.metadata["vp"], vp.id)

    def test_same_seed(self):
        vp = self.cohort().members[1]
        first = synthesise_record(vp, self.model, self.times, 0.1, 5)
        second = synthesise_record(vp, self.model, self.times, 0.1, 5)
        third = synthesise_record(vp, self.model, self.times, 0.1, 6)
        self.assertEqual(first, second)
        self.assertNotEqual(first, third)

    def test_noise_statistics(self):
        """Relative errors are uniform on [-0.05, 0.05]"""
        vp = self.cohort().members[0]
        times = np.linspace(0.0, 30.0, 1000)
        clean = synthesise_record(vp, self.model, times, 0.0, 3, observables=["F"])
        noisy = synthesise_record(vp, self.model, times, 0.05, 3, observables=["F"])
        eps = np.array(
            [
                n.value / c.value - 1.0
                for n, c in zip(noisy.measurements, clean.measurements)
            ]
        )
        self.assertEqual(len(eps), 1000)
        self.assertTrue(np.all(np.abs(eps) <= 0.05 + 1e-12))
        self.assertAlmostEqual(np.mean(np.abs(eps)), 0.025, delta=0.0025)

    def test_invalid_arguments(self):
        vp = self.cohort().members[0]
        with self.assertRaises(ValidationError):
            synthesise_record(vp, self.model, self.times, -0.1, 0)
        with self.assertRaises(ValidationError):
            synthesise_record(vp, self.model, [], 0.0, 0)


if __name__ == "__main__":
    unittest.main()
