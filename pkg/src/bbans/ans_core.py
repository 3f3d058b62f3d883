"""
Scalar range-variant ANS (rANS) with a 64-bit head and a stack of 32-bit words.

The message is an immutable value ``ScalarAnsState(head, stream, nwords)``
where ``stream`` is a cons list ``(word, rest)`` ending in ``()``; the first
element of the cons list is the top of the stack. Every operation returns a
new state, so old states stay valid.

Symbols are coded under a :class:`QuantizedDistribution`, i.e. integer
frequencies summing to ``2**precision``. No floating point is used inside
``push``/``pop``.
"""
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

RANS_L = 1 << 32  # lower bound of the head interval [2^32, 2^64)
HEAD_BITS = 64
WORD_BITS = 32
WORD_MASK = (1 << WORD_BITS) - 1
MAX_PRECISION = 24
DEFAULT_PRECISION = 16


class InsufficientBitsError(ValueError):
    """Raised when a pop needs more words than the stream holds.

    In a bits-back chain this means the initial buffer was too small.
    """


@dataclass(frozen=True, eq=False)
class QuantizedDistribution:
    """Integer frequencies summing to ``2**precision``.

    ``frequencies`` may carry leading batch dimensions, in which case the
    last axis indexes symbols and each leading index is an independent
    distribution (one per ANS lane).
    """
    frequencies: np.ndarray
    precision: int
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=np.int64)
        if freqs.ndim == 0 or freqs.shape[-1] == 0:
            raise ValueError("distribution needs at least one symbol")
        if not 1 <= self.precision <= MAX_PRECISION:
            raise ValueError(f"precision must be in [1, {MAX_PRECISION}]")
        if np.any(freqs < 1):
            raise ValueError("every frequency must be >= 1")
        if np.any(freqs.sum(axis=-1) != 1 << self.precision):
            raise ValueError("frequencies must sum to 2**precision")
        cum = np.cumsum(freqs, axis=-1) - freqs
        freqs.setflags(write=False)
        cum.setflags(write=False)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "cumulative", cum)

    @property
    def n_symbols(self):
        return self.frequencies.shape[-1]

    @property
    def batch_shape(self):
        return self.frequencies.shape[:-1]

    def __eq__(self, other):
        return (isinstance(other, QuantizedDistribution)
                and self.precision == other.precision
                and self.frequencies.shape == other.frequencies.shape
                and bool(np.all(self.frequencies == other.frequencies)))

    def __hash__(self):
        return hash((self.precision, self.frequencies.tobytes()))

    # Python-int tables for the scalar coder; built lazily.
    @property
    def _tables(self):
        tables = self.__dict__.get("_tables_cache")
        if tables is None:
            if self.frequencies.ndim != 1:
                raise ValueError("scalar coding needs an unbatched distribution")
            tables = (self.frequencies.tolist(), self.cumulative.tolist())
            object.__setattr__(self, "_tables_cache", tables)
        return tables

    def symbol_for_slot(self, slot):
        """Symbol s with cumulative[s] <= slot < cumulative[s] + frequencies[s]."""
        _, cum = self._tables
        return bisect_right(cum, slot) - 1

    def probabilities(self):
        return self.frequencies / float(1 << self.precision)

    def information_bits(self, symbols):
        """log2(2^r / freq[s]) for each symbol, summed over the given symbols."""
        symbols = np.asarray(symbols, dtype=np.int64)
        if self.frequencies.ndim == 1:
            f = self.frequencies[symbols]
        else:
            f = np.take_along_axis(self.frequencies, symbols[..., None], -1)[..., 0]
        return float(np.sum(self.precision - np.log2(f)))


def quantize(pmf, precision=DEFAULT_PRECISION):
    """Integerize a pmf so it sums to ``2**precision`` with every mass >= 1.

    One unit is reserved per symbol; the remaining ``2**precision - K`` units
    are apportioned by largest remainder, ties going to the lowest index.
    Works row-wise over any leading batch dimensions.
    """
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim == 0:
        raise ValueError("pmf must be at least one-dimensional")
    if not 1 <= precision <= MAX_PRECISION:
        raise ValueError(f"precision must be in [1, {MAX_PRECISION}]")
    k = p.shape[-1]
    if k > 1 << precision:
        raise ValueError(
            f"alphabet of {k} symbols cannot fit in precision {precision}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("pmf entries must be finite and nonnegative")
    total = p.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("pmf needs at least one strictly positive entry")
    spare = (1 << precision) - k
    ideal = p / total * spare
    base = np.floor(ideal).astype(np.int64)
    leftover = spare - base.sum(axis=-1, keepdims=True)
    frac = ideal - base
    # The leftover largest remainders get one more unit. Rather than a full
    # argsort, find the cut value and fill ties at the cut from the left.
    cut = np.take_along_axis(np.sort(frac, axis=-1), np.clip(k - leftover, 0, k - 1), -1)
    above = frac > cut
    need = leftover - above.sum(axis=-1, keepdims=True)
    at_cut = frac == cut
    extra = above | (at_cut & (np.cumsum(at_cut, axis=-1) <= need))
    freqs = 1 + base + (extra & (leftover > 0))
    return QuantizedDistribution(freqs, precision)


class ScalarAnsState(NamedTuple):
    head: int
    stream: tuple  # cons list (word, rest), top of stack first
    nwords: int


def empty_state():
    return ScalarAnsState(RANS_L, (), 0)


def seeded_state(words):
    """Empty head over a stream holding ``words`` (listed top first)."""
    stream = ()
    for w in reversed(list(words)):
        stream = (int(w) & WORD_MASK, stream)
    return ScalarAnsState(RANS_L, stream, len(words))


def push(state, symbol, dist):
    freqs, cum = dist._tables
    freq, start = freqs[symbol], cum[symbol]
    r = dist.precision
    x, stream, n = state
    if x >= freq << (HEAD_BITS - r):
        stream = (x & WORD_MASK, stream)
        n += 1
        x >>= WORD_BITS
    x = ((x // freq) << r) + x % freq + start
    return ScalarAnsState(x, stream, n)


def pop(state, dist):
    freqs, cum = dist._tables
    r = dist.precision
    x, stream, n = state
    slot = x & ((1 << r) - 1)
    symbol = bisect_right(cum, slot) - 1
    x = freqs[symbol] * (x >> r) + slot - cum[symbol]
    if x < RANS_L:
        if not stream:
            raise InsufficientBitsError(
                "stream exhausted; the bits-back chain needs a larger initial buffer")
        word, stream = stream
        x = (x << WORD_BITS) | word
        n -= 1
    return ScalarAnsState(x, stream, n), symbol


def flatten(state):
    """Serialize to uint32 words: head (high, low) then the stream, top first."""
    x, stream, n = state
    out = np.empty(n + 2, dtype=np.uint32)
    out[0], out[1] = x >> WORD_BITS, x & WORD_MASK
    i = 2
    while stream:
        out[i], stream = stream
        i += 1
    return out


def unflatten(words):
    words = np.asarray(words, dtype=np.uint32)
    if len(words) < 2:
        raise ValueError("need at least two words for the head")
    head = int(words[0]) << WORD_BITS | int(words[1])
    if head < RANS_L:
        raise ValueError("head word is below the normalization interval")
    state = seeded_state(words[2:].tolist())
    return state._replace(head=head)


def bit_length(state):
    """Serialized size in bits: 64 for the head plus 32 per stream word."""
    return HEAD_BITS + WORD_BITS * state.nwords


def content_bits(state):
    """Information held by the message: log2(head) + 32 per stream word."""
    return float(np.log2(float(state.head))) + WORD_BITS * state.nwords
