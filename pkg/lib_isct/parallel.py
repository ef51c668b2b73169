#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      parallel
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Order preserving thread pool for per-patient and per-member
#              work
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

from multiprocessing.pool import ThreadPool

import psutil

from .errors import ValidationError
from .messages import verbose


def resolve_workers(workers):
    """Number of workers to use; 0 selects the physical core count"""
    workers = int(workers)
    if workers < 0:
        raise ValidationError(f"number of workers must be >= 0, got {workers}")
    if workers == 0:
        workers = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
        verbose(f"Using {workers} workers")
    return workers


def map_in_threadpool(func, items, workers=1):
    """Apply func to every item, results in the order of items

    Args:
        func (function): Function of one argument
        items (iterable): Inputs
        workers (int): Pool size; 1 runs inline, 0 uses all physical cores

    Returns:
        list: func(item) for every item
    """
    items = list(items)
    workers = resolve_workers(workers)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    pool = ThreadPool(min(workers, len(items)))
    try:
        output = pool.map(func, items)
    finally:
        pool.close()
        pool.join()
    return output
