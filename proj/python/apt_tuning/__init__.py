"""Adaptive prompt tuning over frozen embedding banks (C++ core)."""

import os

_extension_dir = os.environ.get("APT_TUNING_EXTENSION_DIR")
if _extension_dir:
    __path__.append(_extension_dir)

from ._apt import *  # noqa: E402,F401,F403
from ._apt import AptError, __doc__  # noqa: E402,F401
