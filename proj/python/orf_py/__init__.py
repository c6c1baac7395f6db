"""Leverage-score random Fourier features with projected SGD.

Thin re-export of the compiled ``_orf`` extension.
"""

from ._orf import *  # noqa: F401,F403
from ._orf import __doc__  # noqa: F401
