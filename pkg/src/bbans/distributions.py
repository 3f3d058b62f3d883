"""
Continuous location-scale families and 8-bit discretized observation models.

Every family is symmetric, so upper-tail masses are computed through the
standard cdf of the negated argument; this keeps tiny tail masses accurate.
"""
from typing import NamedTuple

import numpy as np
from scipy.special import expit, ndtr

from .ans_core import quantize

N_PIXEL_VALUES = 256
_LOG_2PI = np.log(2 * np.pi)


class _LocScale(NamedTuple):
    loc: np.ndarray
    scale: np.ndarray

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.loc) / self.scale

    def cdf(self, x):
        return self.standard_cdf(self.standardize(x))

    def sf(self, x):
        return self.standard_cdf(-self.standardize(x))

    def interval_mass(self, lo, hi):
        """P(lo < Z <= hi), computed on the tail side that avoids cancellation."""
        u_lo, u_hi = self.standardize(lo), self.standardize(hi)
        upper = u_lo > 0
        a = np.where(upper, -u_hi, u_lo)
        b = np.where(upper, -u_lo, u_hi)
        return self.standard_cdf(b) - self.standard_cdf(a)

    def edge_masses(self, edges):
        """Masses of consecutive bins along the last axis of ``edges``.

        Same tail-side rule as :meth:`interval_mass`, with each edge's cdf
        evaluated once.
        """
        u = self.standardize(edges)
        c, s = self.standard_cdf(u), self.standard_cdf(-u)
        return np.where(u[..., :-1] > 0, s[..., :-1] - s[..., 1:], c[..., 1:] - c[..., :-1])

    def sample(self, rng, shape=None):
        if shape is None:
            shape = np.broadcast(self.loc, self.scale).shape
        return self.loc + self.scale * self.standard_sample(rng, shape)

    @property
    def shape(self):
        return np.broadcast(self.loc, self.scale).shape


class Gaussian(_LocScale):
    family = "gaussian"

    @staticmethod
    def standard_cdf(u):
        return ndtr(u)

    @staticmethod
    def standard_sample(rng, shape):
        return rng.standard_normal(shape)

    def logpdf(self, x):
        u = self.standardize(x)
        return -0.5 * (u * u + _LOG_2PI) - np.log(self.scale)


class Logistic(_LocScale):
    family = "logistic"

    @staticmethod
    def standard_cdf(u):
        return expit(u)

    @staticmethod
    def standard_sample(rng, shape):
        p = rng.random(shape)
        return np.log(p) - np.log1p(-p)

    def logpdf(self, x):
        u = self.standardize(x)
        return -np.abs(u) - 2 * np.log1p(np.exp(-np.abs(u))) - np.log(self.scale)


class Uniform01:
    """Standard uniform on (0, 1); handy for grid tests."""
    family = "uniform"

    @staticmethod
    def standard_cdf(u):
        return np.clip(u, 0.0, 1.0)


def _pixel_edges():
    edges = np.arange(N_PIXEL_VALUES + 1, dtype=np.float64) - 0.5
    edges[0], edges[-1] = -np.inf, np.inf
    return edges


class DiscretizedPixels:
    """Continuous density on the real line binned to the values 0..255.

    Bin k covers (k - 0.5, k + 0.5]; the outer bins absorb the tails.
    """

    def __init__(self, continuous):
        self.continuous = continuous

    @property
    def shape(self):
        return self.continuous.shape

    def pmf_table(self):
        """Masses with a trailing axis of 256 values."""
        edges = _pixel_edges()
        c = self.continuous
        loc, scale = np.asarray(c.loc)[..., None], np.asarray(c.scale)[..., None]
        return np.maximum(type(c)(loc, scale).edge_masses(edges), 0.0)

    def quantized(self, precision):
        return quantize(self.pmf_table(), precision)

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)
        lo = np.where(x <= 0, -np.inf, x - 0.5)
        hi = np.where(x >= N_PIXEL_VALUES - 1, np.inf, x + 0.5)
        return np.log(np.maximum(self.continuous.interval_mass(lo, hi), 1e-300))

    def sample(self, rng):
        table = self.pmf_table()
        cum = np.cumsum(table, axis=-1)
        u = rng.random(table.shape[:-1] + (1,)) * cum[..., -1:]
        return np.minimum((cum < u).sum(axis=-1), N_PIXEL_VALUES - 1).astype(np.int64)


def discretized_logistic(loc, scale):
    return DiscretizedPixels(Logistic(np.asarray(loc, float), np.asarray(scale, float)))


def discretized_gaussian(loc, scale):
    return DiscretizedPixels(Gaussian(np.asarray(loc, float), np.asarray(scale, float)))


class GaussianDensityPixels(DiscretizedPixels):
    """Codes with discretized Gaussian masses but scores with the density.

    Used by the conjugate model so that its likelihood term is the
    continuous one the closed-form marginal refers to.
    """

    def log_prob(self, x):
        return self.continuous.logpdf(np.asarray(x, dtype=np.float64))

