"""
Partition Module
Quantile-spaced partition of the support of x
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.errors import BinCountError, DataError, EvaluationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QuantilePartition:
    """
    Bins [tau_{j-1}, tau_j), the last one closed.

    ``J`` is the effective number of bins after coincident knots were
    merged; ``requested_J`` is what the caller asked for.
    """

    knots: np.ndarray
    widths: np.ndarray
    counts: np.ndarray
    requested_J: int

    @property
    def J(self):
        return self.widths.shape[0]

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def lower(self):
        return float(self.knots[0])

    @property
    def upper(self):
        return float(self.knots[-1])

    def as_dict(self):
        return {
            'J': self.J,
            'requested_J': self.requested_J,
            'knots': self.knots.tolist(),
            'widths': self.widths.tolist(),
            'counts': self.counts.tolist(),
            'quasi_uniformity': quasi_uniformity_ratio(self),
        }


def _readonly(a):
    a.setflags(write=False)
    return a


def build_partition(data, sort, J):
    """
    Quantile-spaced partition with knots at order statistics x_(floor(jn/J))

    Args:
        data: Dataset
        sort: SortIndex of data
        J: Requested number of bins

    Returns:
        QuantilePartition: partition (J possibly reduced on ties)
    """
    n = data.n
    J = int(J)
    if J < 1:
        raise BinCountError(f"Number of bins must be positive (got {J})")
    if sort.distinct_count < 2:
        raise DataError("x takes a single value; the support cannot be partitioned")
    if J > n or J > sort.distinct_count:
        raise BinCountError(
            f"J={J} exceeds the number of distinct x values ({sort.distinct_count}); "
            f"choose J <= {min(n, sort.distinct_count)}"
        )

    xs = data.x[sort.perm]
    # 1-based order statistics, floor as in the partition definition
    idx = (np.arange(1, J) * n) // J
    assert idx.size == 0 or idx.min() >= 1
    knots = np.concatenate(([xs[0]], xs[idx - 1], [xs[-1]]))
    knots = np.unique(knots)

    J_eff = knots.size - 1
    if J_eff < J:
        logger.warning("Coincident quantile knots merged: J reduced from %d to %d", J, J_eff)

    counts = np.bincount(_bin_index_unchecked(knots, data.x), minlength=J_eff)
    part = QuantilePartition(
        knots=_readonly(knots.astype(float)),
        widths=_readonly(np.diff(knots).astype(float)),
        counts=_readonly(counts.astype(np.int64)),
        requested_J=J,
    )
    logger.info("Partition built: J=%d, ratio=%.3f", part.J, quasi_uniformity_ratio(part))
    return part


def _bin_index_unchecked(knots, x):
    j = np.searchsorted(knots, x, side="right") - 1
    return np.clip(j, 0, knots.size - 2)


def bin_index(part, x):
    """
    0-based bin index of each point in x (vectorized)

    Raises:
        EvaluationError: if any point lies outside [tau_0, tau_J]
    """
    x = np.asarray(x, dtype=float)
    outside = (x < part.knots[0]) | (x > part.knots[-1]) | ~np.isfinite(x)
    if np.any(outside):
        bad = x[outside].flat[0]
        raise EvaluationError(
            f"Evaluation point {bad} outside support [{part.lower}, {part.upper}]"
        )
    return _bin_index_unchecked(part.knots, x)


def locate_bin(part, x0):
    """
    Bin containing x0

    Args:
        part: QuantilePartition
        x0: Scalar evaluation point

    Returns:
        int: bin index j in 1..J (left-closed bins, last bin closed)
    """
    return int(bin_index(part, np.array([x0]))[0]) + 1


def bin_centers(part):
    return 0.5 * (part.knots[:-1] + part.knots[1:])


def quasi_uniformity_ratio(part):
    """Largest over smallest bin width"""
    return float(part.widths.max() / part.widths.min())
