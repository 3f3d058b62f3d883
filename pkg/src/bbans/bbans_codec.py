"""
Bits-back coding with ANS for hierarchical latent variable models.

The message head for an observation of shape ``s`` is a pair
``(x_lanes, (z1_lanes, ..., zL_lanes))`` so every tensor is pushed or popped
in one vectorized step. Encoding an observation x runs

    i_L <- Q_L(. | x), ..., i_1 <- Q_1(. | i_{2:L}, x)   (pops, top-down)
    x -> p(. | z(i_{1:L}))
    i_{1:L} -> U(n_bins)                                    (one push)

where every Q_l is the approximate posterior integrated over the equal-mass
bins of the conditional prior p(z_l | z_{l+1:L}). Decoding runs the exact
mirror image.
"""
from dataclasses import dataclass
from math import ceil
from typing import NamedTuple, Optional

import numpy as np

from .ans_core import DEFAULT_PRECISION, WORD_BITS
from .codecs import ViewLens, categorical_codec, uniform_codec, view_codec
from .discretization import (DEFAULT_N_BINS, conditional_grid,
                             default_latent_precision, index_to_center,
                             posterior_index_distribution)
from .distributions import N_PIXEL_VALUES
from .vector_ans import (HEAD_DIST_PRECISION, LOW_CHUNKS, MANTISSA_BITS,
                         content_bits, flatten, lane_count, seeded_message,
                         empty_message, unflatten)

X_LENS = ViewLens((0,))
Z_LENS = ViewLens((1,), flat=True)


def layer_lens(layer):
    return ViewLens((1, layer - 1))


class LatentHierarchyModel:
    """Interface of a top-down hierarchical latent model.

    Layers are numbered 1 (nearest the data) to ``depth``. ``upper`` is
    always the tuple ``(z_{l+1}, ..., z_L)`` of already reconstructed
    latents above layer l, so a posterior for layer l simply has no way to
    see any latent below it. A bottom-up posterior such as
    q(z_2 | z_1, x) cannot be written against this interface.
    """
    depth = 1

    def latent_shapes(self, obs_shape):
        """Shapes of layers 1..depth for an observation of ``obs_shape``."""
        raise NotImplementedError

    def prior(self, layer, upper, obs_shape):
        """Location-scale distribution of p(z_layer | upper)."""
        raise NotImplementedError

    def posterior(self, layer, upper, x):
        """Location-scale distribution of q(z_layer | upper, x)."""
        raise NotImplementedError

    def likelihood(self, latents, obs_shape):
        """Pixel model p(x | z_1..z_L) with ``pmf_table`` and ``log_prob``."""
        raise NotImplementedError


def bbans_shape(model, obs_shape):
    obs_shape = tuple(int(d) for d in obs_shape)
    return (obs_shape, tuple(tuple(s) for s in model.latent_shapes(obs_shape)))


def check_observation(x):
    x = np.asarray(x)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError("observations must be non-empty H x W x C arrays")
    if not np.issubdtype(x.dtype, np.integer) or x.min() < 0 or x.max() >= N_PIXEL_VALUES:
        raise ValueError("observation values must be integers in [0, 256)")
    return x.astype(np.int64)


class PushInfo(NamedTuple):
    """Ideal code lengths, in bits, of each stage of one push."""
    posterior_bits: float  # sum of log 1/Q_l(i_l), bits taken back
    likelihood_bits: float  # log 1/p(x | z)
    prior_bits: float  # log n_bins per latent dimension

    @property
    def net_bits(self):
        return self.likelihood_bits + self.prior_bits - self.posterior_bits


def _settings(n_bins, latent_precision):
    if latent_precision is None:
        latent_precision = default_latent_precision(n_bins)
    return int(n_bins), latent_precision


def bbans_push_with_info(msg, x, model, n_bins=DEFAULT_N_BINS,
                         precision=DEFAULT_PRECISION, latent_precision=None):
    x = check_observation(x)
    n_bins, latent_precision = _settings(n_bins, latent_precision)
    upper, indices, q_bits = (), [], 0.0
    for layer in range(model.depth, 0, -1):
        grid = conditional_grid(model.prior(layer, upper, x.shape), n_bins)
        q = posterior_index_distribution(grid, model.posterior(layer, upper, x),
                                         latent_precision)
        msg, i = view_codec(layer_lens(layer), categorical_codec(q)).pop(msg)
        q_bits += q.information_bits(i)
        indices.insert(0, i)
        upper = (index_to_center(grid, i),) + upper
    lik = model.likelihood(upper, x.shape).quantized(precision)
    msg = view_codec(X_LENS, categorical_codec(lik)).push(msg, x)
    flat = np.concatenate([i.ravel() for i in indices])
    msg = view_codec(Z_LENS, uniform_codec(n_bins)).push(msg, flat)
    prior_bits = flat.size * np.log2(n_bins)
    return msg, PushInfo(q_bits, lik.information_bits(x), float(prior_bits))


def bbans_push(msg, x, model, n_bins=DEFAULT_N_BINS, precision=DEFAULT_PRECISION,
               latent_precision=None):
    """Push observation ``x`` onto a message shaped by :func:`bbans_shape`."""
    return bbans_push_with_info(msg, x, model, n_bins, precision, latent_precision)[0]


def bbans_pop(msg, model, n_bins=DEFAULT_N_BINS, precision=DEFAULT_PRECISION,
              latent_precision=None):
    """Exact inverse of :func:`bbans_push`; returns ``(msg, x)``."""
    n_bins, latent_precision = _settings(n_bins, latent_precision)
    obs_shape = msg.head[0].shape
    shapes = model.latent_shapes(obs_shape)
    msg, flat = view_codec(Z_LENS, uniform_codec(n_bins)).pop(msg)
    sizes = np.cumsum([int(np.prod(s)) for s in shapes])[:-1]
    indices = [part.reshape(s) for part, s in zip(np.split(flat, sizes), shapes)]
    upper, contexts, grids = (), {}, {}
    for layer in range(model.depth, 0, -1):
        grid = conditional_grid(model.prior(layer, upper, obs_shape), n_bins)
        contexts[layer], grids[layer] = upper, grid
        upper = (index_to_center(grid, indices[layer - 1]),) + upper
    lik = model.likelihood(upper, obs_shape).quantized(precision)
    msg, x = view_codec(X_LENS, categorical_codec(lik)).pop(msg)
    for layer in range(1, model.depth + 1):
        q = posterior_index_distribution(
            grids[layer], model.posterior(layer, contexts[layer], x), latent_precision)
        msg = view_codec(layer_lens(layer), categorical_codec(q)).push(msg, indices[layer - 1])
    return msg, x.astype(np.uint8)


# Worst case bits a single grow step can pull per new lane, plus slack for
# the rounding of each pop (a pop at precision r removes < r + 0.01 bits
# from a lane holding at least 32 bits).
_GROW_BITS_PER_LANE = HEAD_DIST_PRECISION + (64 - 1 - MANTISSA_BITS) + 0.01 * (LOW_CHUNKS + 1)


def pop_demand_words(model, obs_shape, n_bins=DEFAULT_N_BINS, latent_precision=None,
                     from_lanes=1):
    """Upper bound on stream words consumed by growing the head from
    ``from_lanes`` lanes and then running the posterior pops of one push.

    A lane holds fewer than 64 bits and at least 32 before each pop, so a
    lane that loses R bits pulls at most 1 + R/32 words.
    """
    n_bins, latent_precision = _settings(n_bins, latent_precision)
    shape = bbans_shape(model, obs_shape)
    lanes = lane_count(shape)
    latent_dims = sum(int(np.prod(s)) for s in shape[1])
    bits = max(lanes - from_lanes, 0) * _GROW_BITS_PER_LANE
    bits += latent_dims * (latent_precision + 0.01)
    return lanes + ceil(bits / WORD_BITS) + 1


@dataclass(frozen=True)
class SeedPolicy:
    """How the first posterior pops get their bits.

    ``error`` starts from an empty message, so the first pop fails loudly.
    ``counted-random-seed`` pushes ``words`` random words (the worst-case
    demand when None) drawn from ``rng_seed``; these bits are reported.
    """
    mode: str = "counted-random-seed"
    words: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("error", "counted-random-seed"):
            raise ValueError(f"unknown seed mode {self.mode!r}")

    def seed_words(self, demand):
        if self.mode == "error":
            return np.empty(0, dtype=np.uint32)
        n = demand if self.words is None else self.words
        rng = np.random.default_rng(self.rng_seed)
        return rng.integers(0, 1 << 32, size=n, dtype=np.uint64).astype(np.uint32)


class ChainResult(NamedTuple):
    words: np.ndarray
    image_bits: list
    seed_bits: int
    obs_shape: tuple

    @property
    def total_bits(self):
        return WORD_BITS * len(self.words)

    @property
    def net_bits(self):
        """Everything written beyond the seed, including flatten overhead."""
        return self.total_bits - self.seed_bits


def chain_compress(images, model, policy=SeedPolicy(), n_bins=DEFAULT_N_BINS,
                   precision=DEFAULT_PRECISION, latent_precision=None):
    """BB-ANS push a sequence of equally shaped images onto one message."""
    images = [check_observation(x) for x in images]
    if not images:
        raise ValueError("chain_compress needs at least one image")
    obs_shape = images[0].shape
    if any(x.shape != obs_shape for x in images):
        raise ValueError("chained images must share one shape")
    shape = bbans_shape(model, obs_shape)
    seed = policy.seed_words(pop_demand_words(model, obs_shape, n_bins, latent_precision))
    msg = seeded_message(seed, shape) if len(seed) else empty_message(shape)
    image_bits = []
    for x in images:
        before = content_bits(msg)
        msg = bbans_push(msg, x, model, n_bins, precision, latent_precision)
        image_bits.append(content_bits(msg) - before)
    return ChainResult(flatten(msg), image_bits, WORD_BITS * len(seed), obs_shape)


def chain_decompress(words, model, obs_shape, count, n_bins=DEFAULT_N_BINS,
                     precision=DEFAULT_PRECISION, latent_precision=None):
    """Pop ``count`` images; they come back in reverse push order.

    Returns ``(images, msg)`` where ``msg`` holds whatever was left, i.e.
    the seed.
    """
    msg = unflatten(words, bbans_shape(model, obs_shape))
    images = []
    for _ in range(count):
        msg, x = bbans_pop(msg, model, n_bins, precision, latent_precision)
        images.append(x)
    return images, msg


class ElboEstimate(NamedTuple):
    bits_per_dim: float
    stderr: float
    n_samples: int


def log_weights(model, x, n_samples, rng):
    """Samples of log p(x, z) - log q(z | x), in nats, with continuous z."""
    x = check_observation(x)
    out = np.empty(n_samples)
    for s in range(n_samples):
        upper, logw = (), 0.0
        for layer in range(model.depth, 0, -1):
            p = model.prior(layer, upper, x.shape)
            q = model.posterior(layer, upper, x)
            z = q.sample(rng)
            logw += float(np.sum(p.logpdf(z) - q.logpdf(z)))
            upper = (z,) + upper
        out[s] = logw + float(np.sum(model.likelihood(upper, x.shape).log_prob(x)))
    return out


def elbo_estimate(model, x, n_samples=1, rng=None):
    """Monte Carlo negative ELBO in bits per dimension with its standard error."""
    rng = np.random.default_rng(rng)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    w = log_weights(model, x, n_samples, rng)
    scale = np.size(x) * np.log(2)
    stderr = float(np.std(w, ddof=1) / np.sqrt(n_samples) / scale) if n_samples > 1 else float("nan")
    return ElboEstimate(float(-w.mean() / scale), stderr, n_samples)
