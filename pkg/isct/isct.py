#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      isct
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Runs in-silico clinical trials: simulates patient models,
#              generates virtual patient cohorts, computes digital twins of
#              clinical records and searches optimal personalised treatments
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

import atexit
import os
import sys

# import module library
path = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if not os.path.isdir(os.path.join(path, "lib_isct")):
    sys.exit("ERROR: Unable to find the isct library directory.")
sys.path.append(path)
try:
    from lib_isct.cli import cleanup, dispatch
except Exception as imp_err:
    sys.exit(f"ERROR: isct library could not be imported: {imp_err}")


if __name__ == "__main__":
    atexit.register(cleanup)
    sys.exit(dispatch(sys.argv[1:]))
