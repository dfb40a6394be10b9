"""Per-snapshot summary statistics for populations and atomic measures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidInputError
from .measures import AtomicMeasure


@dataclass(frozen=True)
class SnapshotStats:
    """The conserved/tracked quantities recorded along a trajectory."""

    mass: float
    mean: float
    variance: float
    min: float
    max: float


def snapshot_stats(positions, weights=None) -> SnapshotStats:
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size == 0:
        raise InvalidInputError("cannot summarize an empty state")
    if weights is None:
        m = float(positions.size)
        mean = float(positions.mean())
        var = float(np.mean((positions - mean) ** 2))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        m = float(weights.sum())
        if m <= 0.0:
            raise InvalidInputError("snapshot stats require positive total mass")
        mean = float(np.dot(positions, weights) / m)
        var = float(np.dot((positions - mean) ** 2, weights) / m)
    return SnapshotStats(mass=m, mean=mean, variance=var,
                         min=float(positions.min()), max=float(positions.max()))


@dataclass(frozen=True)
class SummaryStats:
    mass: float
    mean: float
    variance: float
    min: float
    max: float
    deciles: tuple  # 10% .. 90%
    gini: Optional[float]  # None when undefined (negative values present)

    def as_dict(self) -> dict:
        return {
            "mass": self.mass, "mean": self.mean, "variance": self.variance,
            "min": self.min, "max": self.max,
            "deciles": list(self.deciles), "gini": self.gini,
        }


def weighted_quantiles(positions, weights, qs) -> np.ndarray:
    """Step-CDF quantiles: smallest x with F(x) >= q * mass."""
    order = np.argsort(positions, kind="stable")
    p = positions[order]
    cw = np.cumsum(weights[order])
    total = cw[-1]
    idx = np.searchsorted(cw, np.asarray(qs) * total, side="left")
    idx = np.clip(idx, 0, p.size - 1)
    return p[idx]


def gini_coefficient(positions, weights=None) -> Optional[float]:
    """Gini index from the sorted-values formula,
    sum_ij w_i w_j |x_i - x_j| / (2 m sum_i w_i x_i).
    Returns None (undefined) when any value is negative or the mean is not
    positive."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size == 0:
        raise InvalidInputError("gini of empty input")
    if weights is None:
        weights = np.ones_like(positions)
    else:
        weights = np.asarray(weights, dtype=np.float64)
    if (positions < 0.0).any():
        return None
    order = np.argsort(positions, kind="stable")
    x = positions[order]
    w = weights[order]
    m = w.sum()
    sx = np.dot(w, x)
    if sx <= 0.0 or m <= 0.0:
        return None
    wcum = np.cumsum(w) - w          # sum of weights strictly before i
    xcum = np.cumsum(w * x) - w * x  # weighted position sum strictly before i
    pair_abs_diff = 2.0 * np.dot(w, x * wcum - xcum)
    return float(pair_abs_diff / (2.0 * m * sx))


def summarize(data: Union[np.ndarray, AtomicMeasure, list]) -> SummaryStats:
    """Full descriptive statistics for raw values or a nonnegative measure."""
    if isinstance(data, AtomicMeasure):
        if not data.is_nonnegative:
            raise InvalidInputError("summarize requires a nonnegative measure")
        positions, weights = data.positions, data.weights
    else:
        positions = np.asarray(data, dtype=np.float64)
        weights = None
    if positions.size == 0:
        raise InvalidInputError("cannot summarize empty input")
    base = snapshot_stats(positions, weights)
    qs = np.arange(1, 10) / 10.0
    if weights is None:
        deciles = np.quantile(positions, qs)
    else:
        deciles = weighted_quantiles(positions, weights, qs)
    return SummaryStats(mass=base.mass, mean=base.mean, variance=base.variance,
                        min=base.min, max=base.max,
                        deciles=tuple(float(d) for d in deciles),
                        gini=gini_coefficient(positions, weights))
