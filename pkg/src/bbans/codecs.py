"""
Composable codecs. A codec is a ``(push, pop)`` pair over a ShapedMessage:

    push(message, value) -> message
    pop(message) -> (message, value)

and ``pop`` must exactly undo ``push``. Primitive codecs act on a message
whose head is a single array shaped like the value; ``view_codec`` points a
codec at one part of a nested head.
"""
from typing import Callable, NamedTuple, Optional

import numpy as np

from .ans_core import DEFAULT_PRECISION, MAX_PRECISION, quantize
from .vector_ans import (ShapedMessage, head_shape, pop_raw, push_raw, ravel_head,
                         unravel_head, vpop, vpush)

CDF_TOLERANCE = 1e-9


class Codec(NamedTuple):
    push: Callable
    pop: Callable
    shape: Optional[tuple] = None


def categorical_codec(dist):
    """Codec for symbols under a (possibly per-lane) QuantizedDistribution.

    A table whose frequencies are all equal is exactly uniform over a
    power-of-two alphabet and is coded as such, so it produces the same
    words as :func:`uniform_codec`.
    """
    f = dist.frequencies
    if f.size and np.all(f == f.flat[0]):
        return uniform_codec(f.shape[-1])

    def push(message, symbols):
        return vpush(message, symbols, dist)

    def pop(message):
        return vpop(message, dist)
    return Codec(push, pop, dist.batch_shape or None)


def uniform_codec(n, precision=None):
    """Integers in [0, n) with equal mass.

    For a power of two with no explicit precision every symbol costs exactly
    log2(n) bits. Otherwise the uniform pmf is quantized at ``precision``.
    """
    n = int(n)
    if not 1 <= n <= 1 << MAX_PRECISION:
        raise ValueError(f"uniform alphabet size must be in [1, 2^{MAX_PRECISION}]")
    if n == 1:
        def push(message, symbols):
            if np.any(np.asarray(symbols) != 0):
                raise ValueError("only symbol 0 exists in a 1-symbol alphabet")
            return message

        def pop(message):
            return message, np.zeros(np.shape(message.head), dtype=np.int64)
        return Codec(push, pop)
    bits = n.bit_length() - 1
    if precision is None and n == 1 << bits:
        def push(message, symbols):
            symbols = np.asarray(symbols)
            if symbols.shape != message.head.shape:
                raise ValueError("symbols must match the head shape")
            if np.any(symbols < 0) or np.any(symbols >= n):
                raise ValueError("symbol out of range")
            head, stream = push_raw(message.head, message.stream, symbols, 1, bits)
            return ShapedMessage(head, stream)

        def pop(message):
            slots, finish = pop_raw(message.head, message.stream, bits)
            head, stream = finish(slots, 1)
            return ShapedMessage(head, stream), slots.astype(np.int64)
        return Codec(push, pop)
    if precision is None:
        precision = min(MAX_PRECISION, max(DEFAULT_PRECISION, n.bit_length() + 8))
    return categorical_codec(quantize(np.ones(n), precision))


def discretized_continuous_codec(cdf, bin_edges, precision=DEFAULT_PRECISION):
    """Codec over bin indices with masses cdf(edge[k+1]) - cdf(edge[k])."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.shape[-1] < 2 or np.any(np.diff(edges, axis=-1) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    c = np.asarray(cdf(edges), dtype=np.float64)
    if np.any(np.abs(c[..., 0]) > CDF_TOLERANCE) or np.any(np.abs(c[..., -1] - 1) > CDF_TOLERANCE):
        raise ValueError("cdf must be 0 at the first edge and 1 at the last")
    masses = np.diff(c, axis=-1)
    if np.any(masses < 0):
        raise ValueError("cdf is not monotone: negative bin mass")
    return categorical_codec(quantize(masses, precision))


def serial_compose(codecs):
    """Push values through ``codecs`` in order; pop them back in reverse."""
    codecs = list(codecs)

    def push(message, values):
        values = list(values)
        if len(values) != len(codecs):
            raise ValueError(f"expected {len(codecs)} values, got {len(values)}")
        for codec, value in zip(codecs, values):
            message = codec.push(message, value)
        return message

    def pop(message):
        values = []
        for codec in reversed(codecs):
            message, value = codec.pop(message)
            values.append(value)
        return message, values[::-1]
    return Codec(push, pop)


class ViewLens(NamedTuple):
    """Addresses part of a nested head.

    ``path`` walks into nested tuples; ``index`` optionally selects a region
    of the leaf array reached (any numpy basic index, e.g. a slice). With
    ``flat`` the addressed sub-head, nested or not, is seen as one 1-d array
    of its lanes in depth-first order.
    """
    path: tuple = ()
    index: object = None
    flat: bool = False

    def get(self, head):
        for p in self.path:
            head = head[p]
        if self.flat:
            return ravel_head(head).copy()
        if self.index is not None:
            if not isinstance(head, np.ndarray):
                raise TypeError("index lenses need an array at the end of the path")
            head = np.ascontiguousarray(head[self.index])
        return head

    def set(self, head, value):
        return self._set(head, self.path, value)

    def _set(self, head, path, value):
        if not path:
            if self.flat:
                return unravel_head(value, head_shape(head))
            if self.index is None:
                return value
            out = head.copy()
            out[self.index] = value
            return out
        parts = list(head)
        parts[path[0]] = self._set(head[path[0]], path[1:], value)
        return tuple(parts)


def view_codec(lens, inner):
    """Apply ``inner`` to the sub-head addressed by ``lens``."""
    def push(message, value):
        sub = ShapedMessage(lens.get(message.head), message.stream)
        sub = inner.push(sub, value)
        return ShapedMessage(lens.set(message.head, sub.head), sub.stream)

    def pop(message):
        sub = ShapedMessage(lens.get(message.head), message.stream)
        sub, value = inner.pop(sub)
        return ShapedMessage(lens.set(message.head, sub.head), sub.stream), value
    return Codec(push, pop)


def autoregressive_compose(step, order):
    """Sequence codec where element k is coded by ``step(key_k, prefix)``.

    ``order`` lists the keys in decode order and ``prefix`` holds the values
    of all earlier keys. Push walks the order backwards so that pop can walk
    it forwards, feeding each decoded value into the next context.
    """
    order = list(order)

    def push(message, values):
        values = list(values)
        if len(values) != len(order):
            raise ValueError(f"expected {len(order)} values, got {len(values)}")
        for k in reversed(range(len(order))):
            message = step(order[k], values[:k]).push(message, values[k])
        return message

    def pop(message):
        values = []
        for key in order:
            message, value = step(key, values).pop(message)
            values.append(value)
        return message, values
    return Codec(push, pop)
