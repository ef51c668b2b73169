#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      isct test cli
# AUTHOR(S):   isct.treatment developers
# PURPOSE:     Tests of the isct command line
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

import contextlib
import io
import os
import unittest
from unittest import mock

import yaml

from isct_test_base import IsctTestBase
from lib_isct.cli import dispatch
from lib_isct.cohort import generate_cohort, load_cohort
from lib_isct.config import resolve_input
from lib_isct.errors import ConfigError
from lib_isct.model import save_model
from lib_isct.records import ingest, save_records, synthesise_record
from lib_isct.search import load_plan
from lib_isct.twins import load_twin_sets

GOAL_PROPERTIES = """properties:
  - {name: dosed, kind: goal, predicate: "dose_total >= 1", deadline: 3}
"""
LOW_PROPERTIES = """properties:
  - {name: low, kind: invariant, predicate: "L <= 1"}
"""


class TestIsctCli(IsctTestBase):
    """Test class for the isct command line"""

    @classmethod
    # pylint: disable=invalid-name
    def setUpClass(cls):
        super().setUpClass()
        cls.spread_file = os.path.join(cls.tmp_dir, "spread.yaml")
        with open(cls.spread_file, "w", encoding="utf-8") as stream:
            yaml.safe_dump({param.name: 0.2 for param in cls.model.params}, stream)
        cls.cohort_file = os.path.join(cls.tmp_dir, "cohort.yaml")
        code, _out = cls.isct(
            "--seed", "3", "cohort", "gen", "--model", "surrogate",
            "--size", "6", "--spread", cls.spread_file, "--out", cls.cohort_file,
        )  # fmt: skip
        if code != 0:
            raise RuntimeError("cohort generation failed")
        cls.menu_file = os.path.join(cls.tmp_dir, "menu.yaml")
        with open(cls.menu_file, "w", encoding="utf-8") as stream:
            stream.write("agonist: [0, 1, 2]\n")

    @staticmethod
    def isct(*argv):
        """Run the command line, returning exit code and standard output"""
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = dispatch([str(arg) for arg in argv])
        return code, stdout.getvalue()

    def optimize(self, properties, *extra):
        path = self.write_text("properties.yaml", properties)
        return self.isct(
            "optimize", "--cohort", self.cohort_file, "--vp", "vp00000",
            "--properties", path, "--menu", self.menu_file, "--horizon", "3",
            *extra,
        )  # fmt: skip

    def test_version(self):
        code, out = self.isct("--version")
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), "isct 1.0.0")

    def test_usage_errors(self):
        self.assertEqual(self.isct("fly")[0], 1)
        self.assertEqual(self.isct("simulate", "--model", "surrogate", "--fast")[0], 1)
        self.assertEqual(self.isct()[0], 1)

    def test_simulate(self):
        out = self.tmp_path("trajectory.csv")
        code, _out = self.isct(
            "simulate", "--model", "surrogate", "--horizon", "30", "--out", out
        )
        self.assertEqual(code, 0)
        with open(out, encoding="utf-8") as stream:
            lines = stream.read().splitlines()
        self.assertEqual(len(lines), 32)
        self.assertFalse(os.path.exists(f"{out}.tmp{os.getpid()}"))

    def test_simulate_cohort_member(self):
        out = self.tmp_path("member.csv")
        code, _out = self.isct(
            "simulate", "--model", "surrogate", "--horizon", "3", "--out", out,
            "--cohort", self.cohort_file, "--vp", "vp00004", "--method",
            "rkf45-adaptive",
        )  # fmt: skip
        self.assertEqual(code, 0)
        code, _out = self.isct(
            "simulate", "--model", "surrogate", "--horizon", "3", "--out", out,
            "--cohort", self.cohort_file, "--vp", "vp09999",
        )  # fmt: skip
        self.assertEqual(code, 1)

    def test_diverging_simulation(self):
        model_file = self.tmp_path("blowup.yaml")
        save_model(self.blowup_model(), model_file)
        doses = self.write_text("bolus.csv", "time,drug,amount\n0,bolus,1\n")
        code, _out = self.isct(
            "simulate", "--model", model_file, "--horizon", "5", "--doses", doses,
            "--out", self.tmp_path("blowup.csv"),
        )  # fmt: skip
        self.assertEqual(code, 2)

    def test_missing_paths(self):
        code, _out = self.isct(
            "simulate", "--model", "surrogate", "--horizon", "3",
            "--out", self.tmp_path("no_such_dir/out.csv"),
        )  # fmt: skip
        self.assertEqual(code, 1)
        code, _out = self.isct(
            "optimize", "--cohort", self.tmp_path("missing.yaml"), "--vp", "vp00000",
            "--properties", "x.yaml", "--menu", self.menu_file, "--horizon", "3",
        )  # fmt: skip
        self.assertEqual(code, 1)

    def test_cohort_seed(self):
        first, second, third = (self.tmp_path(f"seed{i}.yaml") for i in range(3))
        for path, seed in ((first, 7), (second, 7), (third, 8)):
            code, _out = self.isct(
                "--seed", seed, "cohort", "gen", "--model", "surrogate",
                "--size", "4", "--spread", self.spread_file, "--out", path,
            )  # fmt: skip
            self.assertEqual(code, 0)
        self.assertEqual(load_cohort(first), load_cohort(second))
        self.assertNotEqual(load_cohort(first), load_cohort(third))

    def test_cohort_filter(self):
        bounds = self.write_text("bounds.yaml", "L: [0, 100]\n")
        out = self.tmp_path("filtered.yaml")
        code, _out = self.isct(
            "--workers", "2", "cohort", "filter", "--cohort", self.cohort_file,
            "--bounds", bounds, "--horizon", "5", "--out", out,
        )  # fmt: skip
        self.assertEqual(code, 0)
        self.assertEqual(load_cohort(out), load_cohort(self.cohort_file))

    def test_subcommand_seed_and_times_file(self):
        """Cohort and record commands take --n, --seed and a times file"""
        cohort_file = self.tmp_path("n_cohort.yaml")
        code, _out = self.isct(
            "cohort", "gen", "--model", "surrogate", "--n", "5", "--seed", "3",
            "--spread", self.spread_file, "--out", cohort_file,
        )  # fmt: skip
        self.assertEqual(code, 0)
        with open(self.spread_file, encoding="utf-8") as stream:
            spread = yaml.safe_load(stream)
        cohort = load_cohort(cohort_file)
        self.assertEqual(
            cohort,
            generate_cohort(self.model, self.model.default_params(), spread, 5, 3),
        )
        times = self.write_text("times.txt", "# sample days\n0\n1.5\n3\n7\n")
        records = self.tmp_path("times_records.csv")
        code, _out = self.isct(
            "records", "synth", "--vp", "vp00002", "--cohort", cohort_file,
            "--times", times, "--noise", "0.05", "--seed", "4", "--out", records,
        )  # fmt: skip
        self.assertEqual(code, 0)
        expected = synthesise_record(
            cohort.get("vp00002"), self.model, [0.0, 1.5, 3.0, 7.0], 0.05, 4
        )
        self.assertEqual(ingest(records), [expected])
        code, _out = self.isct(
            "records", "synth", "--vp", "vp00002", "--cohort", cohort_file,
            "--times", self.tmp_path("no_times.txt"), "--out", records,
        )  # fmt: skip
        self.assertEqual(code, 1)

    def test_optimize_infeasible(self):
        code, out = self.optimize(LOW_PROPERTIES)
        self.assertEqual(code, 2)
        self.assertEqual(yaml.safe_load(out)["status"], "infeasible")

    def test_optimize_optimal(self):
        plan = self.tmp_path("plan.csv")
        code, out = self.optimize(GOAL_PROPERTIES, "--out", plan)
        self.assertEqual(code, 0)
        summary = yaml.safe_load(out)
        self.assertEqual(summary["status"], "optimal")
        self.assertEqual(summary["cost"]["total_drug"], 1.0)
        self.assertEqual(load_plan(plan).decisions, ((1.0,), (0.0,), (0.0,)))

    def test_optimize_budget(self):
        code, out = self.optimize(GOAL_PROPERTIES, "--budget", "1")
        self.assertEqual(code, 4)
        self.assertEqual(yaml.safe_load(out)["status"], "feasible-budget-exhausted")

    def test_config_dir(self):
        """Relative inputs fall back to the configuration directory"""
        with open(self.tmp_path("isct_cli_menu.yaml"), "w", encoding="utf-8") as stream:
            stream.write("agonist: [0, 1]\n")
        with mock.patch.dict(os.environ, {"ISCT_CONFIG_DIR": self.tmp_dir}):
            self.assertEqual(
                resolve_input("isct_cli_menu.yaml"),
                os.path.normpath(self.tmp_path("isct_cli_menu.yaml")),
            )
            path = self.write_text("properties.yaml", GOAL_PROPERTIES)
            code, _out = self.isct(
                "optimize", "--cohort", self.cohort_file, "--vp", "vp00000",
                "--properties", path, "--menu", "isct_cli_menu.yaml",
                "--horizon", "3",
            )  # fmt: skip
            self.assertEqual(code, 0)
        with mock.patch.dict(os.environ, {"ISCT_CONFIG_DIR": ""}):
            with self.assertRaises(ConfigError):
                resolve_input("isct_cli_menu.yaml")

    def test_records_and_twins(self):
        """Synthesised records find their generating twin"""
        doses = self.write_text(
            "context.csv",
            "time,drug,amount\n" + "".join(f"{d},agonist,1\n" for d in range(5)),
        )
        records = self.tmp_path("records.csv")
        code, _out = self.isct(
            "records", "synth", "--cohort", self.cohort_file, "--vp", "vp00002",
            "--doses", doses, "--observables", "L,F", "--out", records,
        )  # fmt: skip
        self.assertEqual(code, 0)
        self.assertEqual(
            [record.patient_id for record in ingest(records)], ["patient-vp00002"]
        )
        match = self.write_text(
            "match.yaml",
            "context_doses:\n"
            + "".join(
                f"  - {{time: {d}, drug: agonist, amount: 1}}\n" for d in range(5)
            ),
        )
        twins = self.tmp_path("twins.csv")
        code, _out = self.isct(
            "twins", "--cohort", self.cohort_file, "--records", records,
            "--config", match, "--out", twins,
        )  # fmt: skip
        self.assertEqual(code, 0)
        twin_set = load_twin_sets(twins)["patient-vp00002"]
        self.assertEqual(twin_set.ranked[0].vp_id, "vp00002")
        self.assertEqual(twin_set.ranked[0].score, 0.0)
        properties = self.write_text("twin_properties.yaml", GOAL_PROPERTIES)
        code, out = self.isct(
            "optimize", "--cohort", self.cohort_file, "--twin-set", twins,
            "--properties", properties, "--menu", self.menu_file, "--horizon", "3",
        )  # fmt: skip
        self.assertEqual(code, 0)
        self.assertEqual(yaml.safe_load(out)["twins"], ["vp00002"])

    def test_records_validate(self):
        records = self.tmp_path("validate.csv")
        cohort = load_cohort(self.cohort_file)
        save_records(
            [
                synthesise_record(vp, self.model, [0.0, 2.0, 10.0], 0.0, 0)
                for vp in cohort.members[:2]
            ]
            + [synthesise_record(cohort.members[2], self.model, [0.0, 1.0], 0.0, 0)],
            records,
        )
        exclusion = self.write_text("exclusion.yaml", "min_span: 5\n")
        code, out = self.isct(
            "records", "validate", "--records", records, "--model", "surrogate",
            "--exclusion", exclusion,
        )  # fmt: skip
        self.assertEqual(code, 0)
        summary = yaml.safe_load(out)
        self.assertEqual(summary["patients"], 3)
        self.assertEqual(summary["excluded"], {"patient-vp00002": "min-span"})

    def test_trial_run(self):
        directory = self.tmp_path("cli_trial")
        os.makedirs(directory)
        cohort = load_cohort(self.cohort_file)
        save_records(
            [
                synthesise_record(vp, self.model, range(15), 0.0, 0, ["L", "F"])
                for vp in cohort.members[1:3]
            ],
            os.path.join(directory, "records.csv"),
        )
        config = {
            "model": "surrogate",
            "cohort": self.cohort_file,
            "records": "records.csv",
            "properties": {"defaults": {"theta": 9.0, "deadline": 5.0}},
            "horizon": 5,
            "menu": self.menu_file,
            "arms": [
                {"name": "comparator", "strategy": "fixed"},
                {"name": "personalised", "strategy": "personalised"},
            ],
        }
        config_file = os.path.join(directory, "trial.yaml")
        with open(config_file, "w", encoding="utf-8") as stream:
            yaml.safe_dump(config, stream)
        out_dir = os.path.join(directory, "report")
        code, _out = self.isct(
            "trial", "run", "--config", config_file, "--out", out_dir,
            "--workers", "2",
        )  # fmt: skip
        self.assertEqual(code, 0)
        self.assertIn("rows.csv", os.listdir(out_dir))
        self.assertFalse(
            [name for name in os.listdir(out_dir) if name.startswith(".isct_trial_")]
        )


if __name__ == "__main__":
    unittest.main()
