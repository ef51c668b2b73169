#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      messages
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Message, warning and fatal error output of the isct toolset
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

import logging
import sys
from gettext import gettext as _

LOGGER = logging.getLogger("isct")

__all__ = ["_", "configure", "fatal", "message", "verbose", "warning"]


def configure(level="INFO"):
    """Attach a stderr handler to the isct logger

    Args:
        level (str): Name of the logging level, e.g. "INFO" or "DEBUG"
    """
    numeric = logging.getLevelName(str(level).upper())
    if not isinstance(numeric, int):
        raise ValueError(f"unknown log level <{level}>")
    for handler in list(LOGGER.handlers):
        LOGGER.removeHandler(handler)
    # resolve sys.stderr at configure time so redirected streams are honoured
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    LOGGER.addHandler(handler)
    LOGGER.setLevel(numeric)
    LOGGER.propagate = False


def message(msg):
    """Print an informative message"""
    LOGGER.info(msg)


def verbose(msg):
    """Print a message only shown with --log-level DEBUG"""
    LOGGER.debug(msg)


def warning(msg):
    """Print a warning"""
    LOGGER.warning(msg)


def fatal(msg, exit_code=1):
    """Print an error and terminate the running tool

    Only the command line layer calls this; library code raises.

    Args:
        msg (str): Error text
        exit_code (int): Process exit code
    """
    LOGGER.error(msg)
    sys.exit(exit_code)
