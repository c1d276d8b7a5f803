"""Python bindings for the claimlm C++ core."""

from ._claimlm import *  # noqa: F401,F403
from ._claimlm import ClaimlmError, __doc__  # noqa: F401

__version__ = "0.1.0"
