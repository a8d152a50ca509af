"""
Histogram (plug-in) entropy and mutual information in nats, and Pearson
correlation.

Binning: ``n_bins`` equal-width bins over [lo, hi]. With
``per_channel_min_max`` the range is the channel's own min/max; a constant
channel falls entirely into bin 0. Bin of x is floor((x - lo) / (hi - lo) * n)
clipped to [0, n - 1], so the upper edge is closed and, for fixed ranges,
out-of-range samples land in the edge bins.

Probabilities come from integer counts divided by N, so I(x; x) == H(x) to
the last bit.
"""
from typing import Tuple

import numpy as np

from ibac.config import BinningConfig
from ibac.errors import DegenerateCorrelationError, NonFiniteError, ShapeError


def _vector(samples, name: str) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D sample vector, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ShapeError(f"{name} is empty")
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{name} contains non-finite samples")
    return x


def bin_range(samples: np.ndarray, binning: BinningConfig) -> Tuple[float, float]:
    if binning.range_mode == "fixed":
        return float(binning.range[0]), float(binning.range[1])
    return float(samples.min()), float(samples.max())


def bin_indices(samples, binning: BinningConfig = BinningConfig()) -> np.ndarray:
    x = _vector(samples, "samples")
    lo, hi = bin_range(x, binning)
    n = binning.n_bins
    if hi <= lo:
        return np.zeros(x.shape[0], dtype=np.int64)
    idx = np.floor((x - lo) / (hi - lo) * n)
    return np.clip(idx, 0, n - 1).astype(np.int64)


def entropy_from_indices(idx: np.ndarray, n_bins: int) -> float:
    counts = np.bincount(idx, minlength=n_bins)
    p = counts[counts > 0] / idx.shape[0]
    return float(-np.sum(p * np.log(p)))


def mutual_information_from_indices(ix: np.ndarray, iy: np.ndarray, n_bins: int) -> float:
    n = ix.shape[0]
    joint = np.bincount(ix * n_bins + iy, minlength=n_bins * n_bins).reshape(n_bins, n_bins)
    u, v = np.nonzero(joint)
    p_uv = joint[u, v] / n
    p_u = joint.sum(axis=1)[u] / n
    p_v = joint.sum(axis=0)[v] / n
    mi = float(np.sum(p_uv * (np.log(p_uv) - np.log(p_u) - np.log(p_v))))
    # plug-in MI is nonnegative; clip rounding residue
    return max(mi, 0.0)


def entropy(samples, binning: BinningConfig = BinningConfig()) -> float:
    """Plug-in entropy -sum p_k ln p_k over occupied bins, p_k = c_k / N."""
    return entropy_from_indices(bin_indices(samples, binning), binning.n_bins)


def mutual_information(x, y, binning: BinningConfig = BinningConfig()) -> float:
    """Plug-in I(x; y) over the joint histogram; empty cells contribute nothing."""
    x = _vector(x, "x")
    y = _vector(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"x has {x.shape[0]} samples, y has {y.shape[0]}")
    return mutual_information_from_indices(bin_indices(x, binning), bin_indices(y, binning), binning.n_bins)


def pearson(x, y) -> float:
    x = _vector(x, "x")
    y = _vector(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"x has {x.shape[0]} samples, y has {y.shape[0]}")
    if x.shape[0] < 2:
        raise ShapeError("pearson needs at least 2 samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateCorrelationError("correlation undefined for a zero-variance input")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise DegenerateCorrelationError("correlation undefined for a zero-variance input")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))
