"""
Dynamic equal-mass discretization of continuous latent conditionals.

Each latent dimension is split into ``n_bins`` intervals of equal mass under
its conditional prior, and a latent is represented by the index of its
interval. Reconstruction always uses the interval's median point (the
"center" in mass), never the mean.
"""
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .ans_core import DEFAULT_PRECISION, MAX_PRECISION, quantize
from .codecs import categorical_codec

DEFAULT_BINS_LOG2 = 12
DEFAULT_N_BINS = 1 << DEFAULT_BINS_LOG2
BISECTION_STEPS = 60
SPAN_TOLERANCE = 1e-9


class DiscretizationGrid(NamedTuple):
    """Bin edges (..., n_bins + 1) and centers (..., n_bins)."""
    edges: np.ndarray
    centers: np.ndarray

    @property
    def n_bins(self):
        return self.centers.shape[-1]

    @property
    def batch_shape(self):
        return self.centers.shape[:-1]


def _check_n_bins(n_bins):
    n_bins = int(n_bins)
    if n_bins < 2 or n_bins > 1 << 16 or n_bins & (n_bins - 1):
        raise ValueError("n_bins must be a power of two in [2, 2^16]")
    return n_bins


def _bracket(cdf, lo_target, hi_target, support):
    a, b = support
    lo = -1.0 if np.isinf(a) else a
    hi = 1.0 if np.isinf(b) else b
    for _ in range(1100):
        if np.isinf(a) and np.any(cdf(np.float64(lo)) > lo_target):
            lo *= 2
        elif np.isinf(b) and np.any(cdf(np.float64(hi)) < hi_target):
            hi *= 2
        else:
            return lo, hi
    raise ValueError("cdf does not span (0, 1)")


def inverse_cdf(cdf, targets, support=(-np.inf, np.inf), steps=BISECTION_STEPS):
    """Bisection quantiles; ``cdf`` may broadcast extra leading dimensions."""
    targets = np.asarray(targets, dtype=np.float64)
    lo, hi = _bracket(cdf, targets.min(), targets.max(), support)
    lo = np.full(targets.shape, lo)
    hi = np.full(targets.shape, hi)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def make_equal_mass_bins(conditional_cdf, n_bins, support=(-np.inf, np.inf)):
    """Grid with edge k at cdf^-1(k/n) and center k at cdf^-1((k + 1/2)/n)."""
    n_bins = _check_n_bins(n_bins)
    lo, hi = support
    c_lo = np.asarray(conditional_cdf(np.float64(lo)))
    c_hi = np.asarray(conditional_cdf(np.float64(hi)))
    if np.any(np.abs(c_lo) > SPAN_TOLERANCE) or np.any(np.abs(c_hi - 1) > SPAN_TOLERANCE):
        raise ValueError("cdf does not span (0, 1) over the support")
    inner = inverse_cdf(conditional_cdf, np.arange(1, n_bins) / n_bins, support)
    centers = inverse_cdf(conditional_cdf, (np.arange(n_bins) + 0.5) / n_bins, support)
    shape = np.broadcast(inner[..., :1], centers[..., :1]).shape[:-1]
    inner = np.broadcast_to(inner, shape + (n_bins - 1,))
    centers = np.broadcast_to(centers, shape + (n_bins,))
    edges = np.concatenate([np.full(shape + (1,), lo), inner, np.full(shape + (1,), hi)], -1)
    return DiscretizationGrid(edges, np.ascontiguousarray(centers))


@lru_cache(maxsize=None)
def standard_grid(family_cls, n_bins):
    """Equal-mass grid of the standard member (loc 0, scale 1) of a family."""
    grid = make_equal_mass_bins(family_cls.standard_cdf, n_bins)
    grid.edges.setflags(write=False)
    grid.centers.setflags(write=False)
    return grid


def conditional_grid(dist, n_bins):
    """Per-dimension grids of a location-scale distribution.

    Quantiles are affine-equivariant, so each grid is the standard grid
    mapped through loc + scale * u. Computed afresh for every conditional.
    """
    std = standard_grid(type(dist), _check_n_bins(n_bins))
    loc = np.asarray(dist.loc, dtype=np.float64)[..., None]
    scale = np.asarray(dist.scale, dtype=np.float64)[..., None]
    if np.any(~np.isfinite(loc)) or np.any(~(scale > 0)) or np.any(~np.isfinite(scale)):
        raise ValueError("conditional parameters must be finite with positive scale")
    with np.errstate(invalid="ignore"):
        edges = loc + scale * std.edges
    return DiscretizationGrid(edges, loc + scale * std.centers)


def bin_masses(grid, posterior):
    """Mass of each bin under ``posterior``.

    ``posterior`` is either a distribution with ``edge_masses`` or a plain
    monotone cdf callable.
    """
    if hasattr(posterior, "edge_masses"):
        p = type(posterior)(np.asarray(posterior.loc)[..., None],
                            np.asarray(posterior.scale)[..., None])
        masses = p.edge_masses(grid.edges)
    else:
        masses = np.diff(np.asarray(posterior(grid.edges), dtype=np.float64), axis=-1)
    if np.any(masses < 0) or not np.all(np.isfinite(masses)):
        raise ValueError("posterior cdf is not monotone: negative bin mass")
    return masses


def default_latent_precision(n_bins):
    return min(MAX_PRECISION, max(DEFAULT_PRECISION, int(n_bins).bit_length() - 1 + 12))


def posterior_index_distribution(grid, posterior, precision=None):
    if precision is None:
        precision = default_latent_precision(grid.n_bins)
    masses = bin_masses(grid, posterior)
    # A posterior far outside the prior can underflow every bin.
    empty = masses.sum(axis=-1, keepdims=True) <= 0
    if np.any(empty):
        masses = np.where(empty, 1.0, masses)
    return quantize(masses, precision)


def posterior_index_codec(grid, posterior, precision=None):
    """Codec over bin indices with masses given by the posterior."""
    return categorical_codec(posterior_index_distribution(grid, posterior, precision))


def index_to_center(grid, indices):
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= grid.n_bins):
        raise ValueError("bin index out of range")
    if grid.centers.ndim == 1:
        return grid.centers[indices]
    return np.take_along_axis(grid.centers, indices[..., None], -1)[..., 0]
