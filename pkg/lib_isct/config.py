#!/usr/bin/env python3
#
############################################################################
#
# MODULE:      config
# AUTHOR(S):   isct.treatment developers
#
# PURPOSE:     Locating and reading configuration files
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
import os

import yaml

from .errors import ConfigError
from .isct_lib import CONFIG_DIR_ENV


def resolve_input(path, base=None):
    """Locate an input file

    Absolute paths are taken as they are. Relative paths are looked up
    relative to base (the directory of the referencing config file, or
    the working directory), then in the directory named by ISCT_CONFIG_DIR.

    Args:
        path (str): Path as given by the user or a config file
        base (str): Directory relative paths refer to

    Returns:
        str: Path of an existing file
    """
    path = os.path.expanduser(str(path))
    if os.path.isabs(path):
        candidates = [path]
    else:
        candidates = [os.path.join(base or os.getcwd(), path)]
        config_dir = os.environ.get(CONFIG_DIR_ENV)
        if config_dir:
            candidates.append(os.path.join(config_dir, path))
    for candidate in candidates:
        if os.path.isfile(candidate):
            return os.path.normpath(candidate)
    raise ConfigError(f"input file <{path}> not found")


def read_yaml(path, what="config"):
    try:
        with open(path, encoding="utf-8") as stream:
            return yaml.safe_load(stream)
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read {what} <{path}>: {err}")


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as stream:
        for chunk in iter(lambda: stream.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
