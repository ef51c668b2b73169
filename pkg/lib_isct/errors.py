#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      errors
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Exception hierarchy of the isct.treatment library
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


class IsctError(Exception):
    """Base class of all errors raised by the library"""


class ValidationError(IsctError):
    """Malformed input, configuration or violated operation precondition"""


class ConfigError(ValidationError):
    """Invalid or unreadable configuration file"""


class ModelError(ValidationError):
    """Invalid model definition"""


class ContractError(ValidationError):
    """Operation called outside of its contract"""


class CohortFileError(ValidationError):
    """Cohort file does not match the expected schema"""


class UnitMismatchError(ValidationError):
    """Measurement unit differs from the unit the model declares"""


class RecordParseError(ValidationError):
    """Clinical record file could not be parsed

    Args:
        line (int): 1-based line number in the source file
        msg (str): Description of the problem
    """

    def __init__(self, line, msg):
        self.line = line
        super().__init__(f"line {line}: {msg}")


class SearchSpaceTooLarge(ValidationError):
    """Exhaustive enumeration refused

    Args:
        size (int): Number of leaves the enumeration would visit
        limit (int): Largest admissible number of leaves
    """

    def __init__(self, size, limit):
        self.size = size
        self.limit = limit
        super().__init__(
            f"plan space has {size} leaves, more than the limit of {limit}"
        )


class SimulationDivergedError(IsctError):
    """Non-finite state reached during integration

    Args:
        time (float): Simulation time (days) at which the state blew up
    """

    def __init__(self, time, msg=None):
        self.time = time
        super().__init__(msg or f"simulation diverged at t={time!r} days")


class CheckpointIncompatibleError(IsctError):
    """Checkpoint was produced by another model, parameter set or config"""


class TrialStageError(ValidationError):
    """A trial stage failed and the trial was aborted

    Args:
        stage (str): Name of the failed stage
        cause (Exception): The error raised by the stage
    """

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"trial stage <{stage}> failed: {cause}")
