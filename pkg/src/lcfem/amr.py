"""Fixed-fraction element flagging."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["FlagSet", "flag_top_fraction"]


@dataclass
class FlagSet:
    """Refinement flags chosen before hanging-node closure."""

    flags: np.ndarray
    fraction: float

    @property
    def count(self):
        return int(np.count_nonzero(self.flags))

    def __len__(self):
        return len(self.flags)


def flag_top_fraction(estimates, fraction=0.4):
    """Flag the ``ceil(fraction * N)`` cells with the largest estimates.

    Parameters
    ----------
    estimates : ElementEstimates or array_like
        Per-cell estimator values (an object with a ``theta`` attribute or
        a plain array).
    fraction : float
        Share of cells to flag, ``0 < fraction <= 1``.

    Returns
    -------
    FlagSet
        Equal values are ranked by ascending cell id, so the result is
        deterministic.
    """
    theta = np.asarray(getattr(estimates, "theta", estimates), dtype=float)
    if theta.ndim != 1 or theta.size == 0:
        raise ValueError("no element estimates to flag")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = theta.size
    count = min(n, math.ceil(fraction * n - 1e-12))
    # lexsort: last key is primary -> sort by -theta, then by id
    order = np.lexsort((np.arange(n), -theta))
    flags = np.zeros(n, dtype=bool)
    flags[order[:count]] = True
    return FlagSet(flags=flags, fraction=float(fraction))
