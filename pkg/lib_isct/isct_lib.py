#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      isct_lib
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Engine defaults and constants for the isct toolset
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

# numerical slack when comparing times on the output grid (days)
TIME_EPS = 1e-9

# environment variable naming the default configuration directory
CONFIG_DIR_ENV = "ISCT_CONFIG_DIR"

# models shipped with the library, resolved by name
BUILTIN_MODELS = {
    "surrogate": "surrogate.yaml",
}

SIMULATION_DEFAULTS = {
    "method": "rk4-fixed",
    "step": 0.25,
    "rel_tol": 1e-6,
    "abs_tol": 1e-9,
    "output_grid": 1.0,
}

# downregulation case study on the surrogate model; engine defaults,
# not clinical values
DOWNREGULATION_DEFAULTS = {
    "hormone": "L",
    "theta": 3.0,
    "sustain": 2.0,
    "deadline": 8.0,
    "floor_observable": "F",
    "f_min": 5.0,
    "dose_observable": "dose_total",
    "d_max": 20.0,
}

SEARCH_DEFAULTS = {
    "robustness": "best-twin",
    "node_budget": 200000,
    "decision_order": "descending-dose",
    "backtracking": "backjump",
}

# exhaustive enumeration refuses plan spaces with more leaves
ORACLE_LEAF_LIMIT = 10**6

MATCH_DEFAULTS = {
    "rel": 0.1,
    "abs": 0.0,
    "min_matched_fraction": 0.8,
}

# constant daily dose of the comparator arm
COMPARATOR_DAILY_DOSE = 1.0

EXCLUSION_REASONS = {
    "REQUIRED_OBSERVABLE": "required-observable",
    "MIN_MEASUREMENTS": "min-measurements",
    "MIN_SPAN": "min-span",
    "NO_DIGITAL_TWIN": "no-digital-twin",
}

EXIT_CODES = {
    "SUCCESS": 0,
    "VALIDATION": 1,
    "INFEASIBLE": 2,
    "INTERNAL": 3,
    "FEASIBLE": 4,
}
