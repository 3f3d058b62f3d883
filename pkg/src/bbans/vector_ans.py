"""
Vectorized rANS with a shaped head.

A :class:`ShapedMessage` holds a head, which is either a uint64 numpy array
(one ANS lane per element) or a nested tuple of such arrays, plus a single
shared :class:`Stream` of 32-bit words. Lanes that renormalize during a push
write their words in ascending flat-lane order; pops read them back in
descending order, so results are bit-exact and independent of how the lane
arithmetic is scheduled.

Heads are resized by folding: half of the lanes are encoded onto the other
half under a head-value distribution with p(h) proportional to 1/h, and grown
by the inverse operation (decoding new lanes from existing ones).
"""
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .ans_core import (HEAD_BITS, RANS_L, WORD_BITS, WORD_MASK,
                       InsufficientBitsError, QuantizedDistribution, quantize)

_U64_WORD_BITS = np.uint64(WORD_BITS)
_U64_WORD_MASK = np.uint64(WORD_MASK)
_U64_ONE = np.uint64(1)


class Stream:
    """Persistent LIFO stack of uint32 words.

    Each node holds a chunk whose *last* element is nearest the top.
    """
    __slots__ = ("chunk", "below", "size")

    def __init__(self, chunk, below, size):
        self.chunk = chunk
        self.below = below
        self.size = size

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"Stream(size={self.size})"


EMPTY_STREAM = Stream(np.empty(0, dtype=np.uint32), None, 0)


def stream_push(stream, words):
    words = np.asarray(words, dtype=np.uint32)
    if words.size == 0:
        return stream
    return Stream(words, stream, stream.size + words.size)


def stream_pop(stream, n):
    """Remove the top ``n`` words; returns them ordered deepest first."""
    if n == 0:
        return stream, EMPTY_STREAM.chunk
    if n > stream.size:
        raise InsufficientBitsError(
            f"need {n} words but the stream holds {stream.size}; "
            "the bits-back chain needs a larger initial buffer")
    pieces = []
    need = n
    while need:
        chunk = stream.chunk
        if len(chunk) > need:
            cut = len(chunk) - need
            pieces.append(chunk[cut:])
            stream = Stream(chunk[:cut], stream.below, stream.size - need)
            need = 0
        else:
            pieces.append(chunk)
            need -= len(chunk)
            stream = stream.below
    if len(pieces) == 1:
        return stream, pieces[0]
    return stream, np.concatenate(pieces[::-1])


def stream_words(stream):
    """All words, top of stack first."""
    parts = []
    while stream is not None and stream.size:
        parts.append(stream.chunk[::-1])
        stream = stream.below
    if not parts:
        return np.empty(0, dtype=np.uint32)
    return np.concatenate(parts)


def stream_from_words(words):
    """Inverse of :func:`stream_words` (``words`` listed top first)."""
    words = np.asarray(words, dtype=np.uint32)
    return stream_push(EMPTY_STREAM, words[::-1].copy())


# Head structure helpers. A shape is either a tuple of ints (a leaf) or a
# tuple of shapes.

def is_leaf_shape(shape):
    return all(isinstance(d, (int, np.integer)) for d in shape)


def lane_count(shape):
    if is_leaf_shape(shape):
        return int(np.prod(shape, dtype=np.int64))
    return sum(lane_count(s) for s in shape)


def head_shape(head):
    if isinstance(head, np.ndarray):
        return head.shape
    return tuple(head_shape(h) for h in head)


def head_leaves(head):
    if isinstance(head, np.ndarray):
        return [head]
    return [leaf for h in head for leaf in head_leaves(h)]


def ravel_head(head):
    leaves = head_leaves(head)
    if len(leaves) == 1:
        return leaves[0].ravel()
    return np.concatenate([leaf.ravel() for leaf in leaves])


def unravel_head(flat, shape):
    def build(shape, offset):
        if is_leaf_shape(shape):
            n = lane_count(shape)
            return flat[offset:offset + n].reshape(shape), offset + n
        parts = []
        for s in shape:
            part, offset = build(s, offset)
            parts.append(part)
        return tuple(parts), offset
    head, used = build(tuple(shape), 0)
    if used != len(flat):
        raise ValueError(f"shape {shape} has {used} lanes, head has {len(flat)}")
    return head


def normalize_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    shape = tuple(shape)
    if is_leaf_shape(shape):
        return tuple(int(d) for d in shape)
    return tuple(normalize_shape(s) for s in shape)


class ShapedMessage(NamedTuple):
    head: object  # uint64 ndarray or nested tuple of them
    stream: Stream

    @property
    def shape(self):
        return head_shape(self.head)

    @property
    def lanes(self):
        return sum(leaf.size for leaf in head_leaves(self.head))


def empty_message(shape):
    """Every lane at the bottom of the interval, empty stream."""
    shape = normalize_shape(shape)
    flat = np.full(lane_count(shape), RANS_L, dtype=np.uint64)
    return ShapedMessage(unravel_head(flat, shape), EMPTY_STREAM)


def seeded_message(words, shape=(1,)):
    """Single empty lane over a stream of seed words, grown to ``shape``."""
    msg = ShapedMessage(np.full((1,), RANS_L, dtype=np.uint64),
                        stream_from_words(words))
    return reshape_head(msg, shape)


def bit_length(msg):
    """Serialized size if lanes were written out naively: 64 per lane + 32 per word."""
    return HEAD_BITS * msg.lanes + WORD_BITS * msg.stream.size


def content_bits(msg):
    """log2 of every lane plus 32 per stream word."""
    lanes = ravel_head(msg.head)
    return float(np.sum(np.log2(lanes.astype(np.float64)))) + WORD_BITS * msg.stream.size


def messages_equal(a, b):
    if head_shape(a.head) != head_shape(b.head):
        return False
    if not np.array_equal(ravel_head(a.head), ravel_head(b.head)):
        return False
    return np.array_equal(stream_words(a.stream), stream_words(b.stream))


# Raw lane arithmetic.

def push_raw(head, stream, starts, freqs, precisions):
    """Push one symbol per lane given its (start, freq) slot range.

    ``starts``, ``freqs`` and ``precisions`` broadcast against ``head``;
    precisions must be in [1, 24].
    """
    starts = np.asarray(starts, dtype=np.uint64)
    freqs = np.asarray(freqs, dtype=np.uint64)
    precisions = np.asarray(precisions, dtype=np.uint64)
    renorm = (head >> (np.uint64(HEAD_BITS) - precisions)) >= freqs
    if np.any(renorm):
        stream = stream_push(stream, (head[renorm] & _U64_WORD_MASK).astype(np.uint32))
        head = np.where(renorm, head >> _U64_WORD_BITS, head)
    quot, rem = np.divmod(head, freqs)
    return (quot << precisions) + rem + starts, stream


def pop_raw(head, stream, precisions):
    """First half of a pop: returns the slots and a function to finish it."""
    precisions = np.asarray(precisions, dtype=np.uint64)
    slots = head & ((_U64_ONE << precisions) - _U64_ONE)

    def finish(starts, freqs):
        starts = np.asarray(starts, dtype=np.uint64)
        freqs = np.asarray(freqs, dtype=np.uint64)
        new = freqs * (head >> precisions) + slots - starts
        refill = new < np.uint64(RANS_L)
        n = int(np.count_nonzero(refill))
        rest = stream
        if n:
            rest, words = stream_pop(stream, n)
            new[refill] = (new[refill] << _U64_WORD_BITS) | words.astype(np.uint64)
        return new, rest
    return slots, finish


def _dist_slots(dist, symbols):
    symbols = np.asarray(symbols, dtype=np.int64)
    if dist.frequencies.ndim == 1:
        return dist.cumulative[symbols], dist.frequencies[symbols]
    idx = symbols[..., None]
    return (np.take_along_axis(dist.cumulative, idx, -1)[..., 0],
            np.take_along_axis(dist.frequencies, idx, -1)[..., 0])


def lookup_symbols(dist, slots):
    """Vectorized inverse-CDF lookup of quantized slots."""
    slots = np.asarray(slots).astype(np.int64)
    cum = dist.cumulative
    if cum.ndim == 1:
        return np.searchsorted(cum, slots, side="right") - 1
    k = cum.shape[-1]
    rows = cum.reshape(-1, k)
    row = np.arange(rows.shape[0], dtype=np.int64)
    offsets = row << dist.precision
    flat_cum = (rows + offsets[:, None]).ravel()
    hits = np.searchsorted(flat_cum, slots.ravel() + offsets, side="right") - 1
    return (hits - row * k).reshape(slots.shape)


def _check_dist(head, dist):
    if dist.frequencies.ndim > 1 and dist.batch_shape != head.shape:
        raise ValueError(
            f"distribution batch shape {dist.batch_shape} != head shape {head.shape}")


def vpush(msg, symbols, dist):
    """Push ``symbols`` (shaped like the head) under ``dist``.

    ``dist`` is one :class:`QuantizedDistribution` broadcast over all lanes,
    or a batched one with one row per lane.
    """
    head = msg.head
    if not isinstance(head, np.ndarray):
        raise TypeError("vpush needs an array head; use a view codec for nested heads")
    symbols = np.asarray(symbols)
    if symbols.shape != head.shape:
        raise ValueError(f"symbols shape {symbols.shape} != head shape {head.shape}")
    _check_dist(head, dist)
    if np.any(symbols < 0) or np.any(symbols >= dist.n_symbols):
        raise ValueError("symbol out of range for distribution")
    starts, freqs = _dist_slots(dist, symbols)
    head, stream = push_raw(head, msg.stream, starts, freqs, dist.precision)
    return ShapedMessage(head, stream)


def vpop(msg, dist):
    head = msg.head
    if not isinstance(head, np.ndarray):
        raise TypeError("vpop needs an array head; use a view codec for nested heads")
    _check_dist(head, dist)
    slots, finish = pop_raw(head, msg.stream, dist.precision)
    symbols = lookup_symbols(dist, slots)
    starts, freqs = _dist_slots(dist, symbols)
    head, stream = finish(starts, freqs)
    return ShapedMessage(head, stream), symbols


# Head-value codec used for folding: p(h) ~ 1/h on [2^32, 2^64).
# A value is split into its exponent e = floor(log2 h), the next
# MANTISSA_BITS bits below the leading one (together the "bucket"), and
# e - MANTISSA_BITS low bits coded uniformly in LOW_CHUNKS pieces.

MANTISSA_BITS = 7
HEAD_DIST_PRECISION = 20
LOW_CHUNKS = 4
_N_EXPONENTS = HEAD_BITS - WORD_BITS


@lru_cache(maxsize=None)
def head_value_distribution():
    """Quantized 1/h mass over (exponent, top mantissa bits) buckets."""
    j = np.arange(1 << MANTISSA_BITS, dtype=np.float64)
    per_exponent = 1.0 / ((1 << MANTISSA_BITS) + j + 0.5)
    return quantize(np.tile(per_exponent, _N_EXPONENTS), HEAD_DIST_PRECISION)


def _bit_length(values):
    x = values.copy()
    n = np.zeros(values.shape, dtype=np.int64)
    for s in (32, 16, 8, 4, 2, 1):
        big = (x >> np.uint64(s)) != 0
        n += s * big
        x = np.where(big, x >> np.uint64(s), x)
    return n + (x != 0)


def _low_chunk_sizes(low_bits):
    return [(low_bits + i) // LOW_CHUNKS for i in range(LOW_CHUNKS)]


def push_head_values(head, stream, values):
    """Encode lane values ``values`` (each in [2^32, 2^64)) onto lanes ``head``."""
    exponent = _bit_length(values) - 1
    low_bits = (exponent - MANTISSA_BITS).astype(np.uint64)
    mant = (values >> low_bits) & np.uint64((1 << MANTISSA_BITS) - 1)
    bucket = (exponent - WORD_BITS) * (1 << MANTISSA_BITS) + mant.astype(np.int64)
    low = values & ((_U64_ONE << low_bits) - _U64_ONE)
    offset = np.zeros_like(low_bits)
    for size in _low_chunk_sizes(low_bits):
        chunk = (low >> offset) & ((_U64_ONE << size) - _U64_ONE)
        head, stream = push_raw(head, stream, chunk, 1, size)
        offset = offset + size
    dist = head_value_distribution()
    starts, freqs = _dist_slots(dist, bucket)
    return push_raw(head, stream, starts, freqs, dist.precision)


def pop_head_values(head, stream):
    """Inverse of :func:`push_head_values`; returns (head, stream, values)."""
    dist = head_value_distribution()
    slots, finish = pop_raw(head, stream, dist.precision)
    bucket = lookup_symbols(dist, slots)
    head, stream = finish(*_dist_slots(dist, bucket))
    exponent = bucket // (1 << MANTISSA_BITS) + WORD_BITS
    mant = (bucket % (1 << MANTISSA_BITS)).astype(np.uint64)
    low_bits = (exponent - MANTISSA_BITS).astype(np.uint64)
    sizes = _low_chunk_sizes(low_bits)
    offsets = [sum(sizes[:i], np.zeros_like(low_bits)) for i in range(LOW_CHUNKS)]
    low = np.zeros(head.shape, dtype=np.uint64)
    for size, offset in zip(sizes[::-1], offsets[::-1]):
        slots, finish = pop_raw(head, stream, size)
        head, stream = finish(slots, 1)
        low |= slots << offset
    values = (_U64_ONE << exponent.astype(np.uint64)) | (mant << low_bits) | low
    return head, stream, values


def fold_schedule(n_from, n_to):
    """Lane counts visited when folding ``n_from`` lanes down to ``n_to``."""
    if n_to < 1 or n_from < n_to:
        raise ValueError("fold needs n_from >= n_to >= 1")
    counts = [n_from]
    while counts[-1] > n_to:
        counts.append(max((counts[-1] + 1) // 2, n_to))
    return counts


def _fold(flat, stream, m):
    k = len(flat) - m
    lower, stream = push_head_values(flat[:k], stream, flat[m:])
    return np.concatenate([lower, flat[k:m]]), stream


def _grow(flat, stream, n):
    m = len(flat)
    k = n - m
    lower, stream, values = pop_head_values(flat[:k], stream)
    return np.concatenate([lower, flat[k:m], values]), stream


def resize_lanes(flat, stream, n):
    """Fold or grow a flat lane vector to exactly ``n`` lanes.

    Returns (flat, stream, steps).
    """
    m = len(flat)
    if n < m:
        counts = fold_schedule(m, n)
        for target in counts[1:]:
            flat, stream = _fold(flat, stream, target)
    elif n > m:
        counts = fold_schedule(n, m)[::-1]
        for target in counts[1:]:
            flat, stream = _grow(flat, stream, target)
    else:
        counts = [m]
    return flat, stream, len(counts) - 1


def reshape_head(msg, new_shape):
    """Change the head to ``new_shape`` by folding or growing lanes."""
    new_shape = normalize_shape(new_shape)
    flat = ravel_head(msg.head)
    if head_shape(msg.head) == new_shape:
        return msg
    flat, stream, _ = resize_lanes(flat, msg.stream, lane_count(new_shape))
    return ShapedMessage(unravel_head(flat, new_shape), stream)


def flatten(msg):
    """Fold the head to one lane and serialize: head (high, low), then stream top first."""
    flat = ravel_head(msg.head)
    flat, stream, _ = resize_lanes(flat, msg.stream, 1)
    head = int(flat[0])
    out = np.empty(2 + stream.size, dtype=np.uint32)
    out[0], out[1] = head >> WORD_BITS, head & WORD_MASK
    out[2:] = stream_words(stream)
    return out


def unflatten(words, shape=(1,)):
    words = np.asarray(words, dtype=np.uint32)
    if len(words) < 2:
        raise InsufficientBitsError("need at least two words for the head")
    head = int(words[0]) << WORD_BITS | int(words[1])
    if head < RANS_L:
        raise ValueError("head word is below the normalization interval")
    msg = ShapedMessage(np.array([head], dtype=np.uint64), stream_from_words(words[2:]))
    return reshape_head(msg, shape)
