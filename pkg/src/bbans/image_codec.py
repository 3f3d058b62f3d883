"""
Variable-size image coding and dataset archives.

Between images the coder head is a single lane (``INIT_SHAPE``). To code an
image the head is grown to the BB-ANS shape for that image, the image is
pushed, the head is folded back to one lane and finally the image shape is
pushed with a uniform codec, so a decoder can read the shape first.

A dataset archive starts its bits-back chain from a :class:`PatchPlan`: a
few images coded with a non-latent fallback codec to build up the stream,
then stages that code images as patches of growing size, then full images.
"""
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .ans_core import DEFAULT_PRECISION, RANS_L, WORD_BITS, WORD_MASK, quantize
from .bbans_codec import (bbans_pop, bbans_push, bbans_shape, check_observation,
                          pop_demand_words)
from .codecs import Codec, uniform_codec
from .discretization import DEFAULT_N_BINS
from .distributions import N_PIXEL_VALUES
from .vector_ans import (EMPTY_STREAM, ShapedMessage, content_bits, flatten,
                         head_shape, lane_count, normalize_shape, ravel_head,
                         resize_lanes, stream_from_words, stream_pop, stream_push,
                         unflatten, unravel_head)

INIT_SHAPE = (1,)
MAX_SIDE = 1 << 16
MAX_CHANNELS = 4
FALLBACK_PRECISION = 16

TAG_FALLBACK, TAG_FULL, TAG_PATCHED = 0, 1, 2
_TAG_CODEC = uniform_codec(4)
_SIDE_CODEC = uniform_codec(MAX_SIDE)
_CHANNEL_CODEC = uniform_codec(MAX_CHANNELS)


class PlanError(ValueError):
    """A patch plan cannot be executed, e.g. the buffer is too small."""


class ImageHeader(NamedTuple):
    height: int
    width: int
    channels: int

    @classmethod
    def of(cls, x):
        if np.ndim(x) != 3:
            raise ValueError("images must be H x W x C arrays")
        header = cls(*(int(d) for d in np.shape(x)))
        header.validate()
        return header

    def validate(self):
        if not (1 <= self.height <= MAX_SIDE and 1 <= self.width <= MAX_SIDE
                and 1 <= self.channels <= MAX_CHANNELS):
            raise ValueError(
                f"image shape {tuple(self)} outside 1..{MAX_SIDE} x 1..{MAX_SIDE} x 1..{MAX_CHANNELS}")


def _lane(value):
    return np.array([value], dtype=np.int64)


def push_header(msg, header):
    header.validate()
    msg = _SIDE_CODEC.push(msg, _lane(header.height - 1))
    msg = _SIDE_CODEC.push(msg, _lane(header.width - 1))
    return _CHANNEL_CODEC.push(msg, _lane(header.channels - 1))


def pop_header(msg):
    msg, c = _CHANNEL_CODEC.pop(msg)
    msg, w = _SIDE_CODEC.pop(msg)
    msg, h = _SIDE_CODEC.pop(msg)
    return msg, ImageHeader(int(h[0]) + 1, int(w[0]) + 1, int(c[0]) + 1)


def resize_coder(msg, shape, log=None):
    """Fold or grow the head to ``shape``; appends the step count to ``log``."""
    shape = normalize_shape(shape)
    if head_shape(msg.head) == shape:
        if log is not None:
            log.append(0)
        return msg
    flat, stream, steps = resize_lanes(ravel_head(msg.head), msg.stream, lane_count(shape))
    if log is not None:
        log.append(steps)
    return ShapedMessage(unravel_head(flat, shape), stream)


def _check_init(msg):
    if head_shape(msg.head) != INIT_SHAPE:
        raise ValueError(f"coder must be at its initial size {INIT_SHAPE}")


@dataclass(frozen=True)
class CoderSettings:
    n_bins: int = DEFAULT_N_BINS
    precision: int = DEFAULT_PRECISION
    latent_precision: Optional[int] = None


def _push_latent(msg, x, model, cfg, log):
    msg = resize_coder(msg, bbans_shape(model, x.shape), log)
    msg = bbans_push(msg, x, model, cfg.n_bins, cfg.precision, cfg.latent_precision)
    return resize_coder(msg, INIT_SHAPE, log)


def _pop_latent(msg, obs_shape, model, cfg, log):
    msg = resize_coder(msg, bbans_shape(model, obs_shape), log)
    msg, x = bbans_pop(msg, model, cfg.n_bins, cfg.precision, cfg.latent_precision)
    return resize_coder(msg, INIT_SHAPE, log), x


def encode_image_variable(msg, x, model, settings=CoderSettings(), resize_log=None):
    """Push an image of any supported shape; the head is one lane before and after."""
    _check_init(msg)
    header = ImageHeader.of(x)
    msg = _push_latent(msg, check_observation(x), model, settings, resize_log)
    return push_header(msg, header)


def decode_image_variable(msg, model, settings=CoderSettings(), resize_log=None):
    _check_init(msg)
    msg, header = pop_header(msg)
    return _pop_latent(msg, tuple(header), model, settings, resize_log)


class Patch(NamedTuple):
    row: int
    col: int
    pixels: np.ndarray


def patch_grid(height, width, side):
    """Row-major (row, col, h, w) tiles; edge tiles keep the remainder."""
    if side < 1:
        raise ValueError("patch side must be positive")
    return [(r, c, min(side, height - r), min(side, width - c))
            for r in range(0, height, side) for c in range(0, width, side)]


def partition_into_patches(x, side):
    x = np.asarray(x)
    return [Patch(r, c, x[r:r + h, c:c + w]) for r, c, h, w in patch_grid(x.shape[0], x.shape[1], side)]


def reassemble(patches, shape, dtype=np.uint8):
    out = np.zeros(shape, dtype=dtype)
    for r, c, pixels in patches:
        out[r:r + pixels.shape[0], c:c + pixels.shape[1]] = pixels
    return out


# Order-0 adaptive byte model, coded on the single init lane with a plain
# Python loop. Counts start at one per value and see every earlier byte.

def _adaptive_distributions(values):
    counts = np.ones((len(values), N_PIXEL_VALUES), dtype=np.float64)
    if len(values) > 1:
        onehot = np.zeros((len(values) - 1, N_PIXEL_VALUES))
        onehot[np.arange(len(values) - 1), values[:-1]] = 1
        counts[1:] += np.cumsum(onehot, axis=0)
    return quantize(counts, FALLBACK_PRECISION)


def _lane_value(msg):
    return int(msg.head[0])


def order0_fallback_codec():
    """Adaptive order-0 byte codec for whole images (shape included)."""
    r = FALLBACK_PRECISION

    def push(msg, x):
        _check_init(msg)
        header = ImageHeader.of(x)
        values = np.asarray(x).astype(np.int64).ravel()
        dist = _adaptive_distributions(values)
        freqs = np.take_along_axis(dist.frequencies, values[:, None], 1)[:, 0].tolist()
        starts = np.take_along_axis(dist.cumulative, values[:, None], 1)[:, 0].tolist()
        head, out = _lane_value(msg), []
        for f, s in zip(freqs[::-1], starts[::-1]):
            if head >= f << (64 - r):
                out.append(head & WORD_MASK)
                head >>= WORD_BITS
            head = ((head // f) << r) + head % f + s
        stream = stream_push(msg.stream, np.array(out, dtype=np.uint32))
        msg = ShapedMessage(np.array([head], dtype=np.uint64), stream)
        return push_header(msg, header)

    def pop(msg):
        _check_init(msg)
        msg, header = pop_header(msg)
        n = header.height * header.width * header.channels
        head, stream = _lane_value(msg), msg.stream
        counts = np.ones(N_PIXEL_VALUES)
        values = np.empty(n, dtype=np.int64)
        mask = (1 << r) - 1
        for t in range(n):
            dist = quantize(counts, r)
            freqs, cum = dist._tables
            slot = head & mask
            v = dist.symbol_for_slot(slot)
            head = freqs[v] * (head >> r) + slot - cum[v]
            if head < RANS_L:
                stream, word = stream_pop(stream, 1)
                head = (head << WORD_BITS) | int(word[0])
            values[t] = v
            counts[v] += 1
        msg = ShapedMessage(np.array([head], dtype=np.uint64), stream)
        return msg, values.reshape(tuple(header)).astype(np.uint8)
    return Codec(push, pop, INIT_SHAPE)


# Patch plans.

@dataclass(frozen=True)
class PatchStage:
    """``side`` None means whole images; ``count`` None means "until the
    buffer can already afford the next stage"."""
    side: Optional[int] = None
    count: Optional[int] = None

    @property
    def label(self):
        return "full" if self.side is None else f"patch{self.side}"


@dataclass(frozen=True)
class PatchPlan:
    fallback_count: int = 0
    stages: tuple = (PatchStage(),)
    seed_words: Optional[int] = None  # None: enough for the first latent image

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        self.validate()

    def validate(self):
        if self.fallback_count < 0:
            raise PlanError("fallback count must be >= 0")
        if self.seed_words is not None and self.seed_words < 0:
            raise PlanError("seed words must be >= 0")
        if not self.stages or self.stages[-1].side is not None:
            raise PlanError("the last stage must code full images")
        sides = [s.side for s in self.stages[:-1]]
        if any(s is None for s in sides):
            raise PlanError("only the last stage may code full images")
        if any(s < 1 for s in sides) or sides != sorted(sides):
            raise PlanError("patch sides must be positive and nondecreasing")
        if any(s.count is not None and s.count < 1 for s in self.stages):
            raise PlanError("stage counts must be >= 1")
        if self.stages[-1].count is not None:
            raise PlanError("the full-image stage runs to the end and takes no count")

    @classmethod
    def parse(cls, text):
        """Read the key-value plan format::

            fallback = 2
            seed_words = auto
            stage = 8 count 10
            stage = 16 until-buffer
            stage = full
        """
        fallback, seed, stages = 0, None, []
        for number, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PlanError(f"line {number}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                if key == "fallback":
                    fallback = int(value)
                elif key == "seed_words":
                    seed = None if value == "auto" else int(value)
                elif key == "stage":
                    stages.append(_parse_stage(value))
                else:
                    raise PlanError(f"line {number}: unknown key {key!r}")
            except ValueError as err:
                if isinstance(err, PlanError):
                    raise
                raise PlanError(f"line {number}: {err}") from None
        return cls(fallback, tuple(stages) or (PatchStage(),), seed)

    def to_text(self):
        lines = [f"fallback = {self.fallback_count}",
                 f"seed_words = {'auto' if self.seed_words is None else self.seed_words}"]
        for s in self.stages:
            side = "full" if s.side is None else str(s.side)
            if s.side is None:
                lines.append(f"stage = {side}")
            else:
                lines.append(f"stage = {side} " + (f"count {s.count}" if s.count else "until-buffer"))
        return "\n".join(lines) + "\n"


def _parse_stage(value):
    m = re.fullmatch(r"(full|\d+)(?:\s+(count\s+(\d+)|until-buffer))?", value)
    if not m:
        raise PlanError(f"bad stage {value!r}")
    side = None if m.group(1) == "full" else int(m.group(1))
    count = int(m.group(3)) if m.group(3) else None
    return PatchStage(side, count)


class ImageRecord(NamedTuple):
    index: int
    stage: str
    dims: int
    bits: float


@dataclass
class RateReport:
    seed_bits: int = 0
    records: list = field(default_factory=list)
    total_bits: int = 0
    resize_steps: list = field(default_factory=list)

    @property
    def image_bits(self):
        return sum(r.bits for r in self.records)

    @property
    def overhead_bits(self):
        """Final head and rounding: total minus seed minus per-image content."""
        return self.total_bits - self.seed_bits - self.image_bits

    def stage_summary(self):
        """label -> (images, mean bits/dim, standard error)."""
        out = {}
        for label in dict.fromkeys(r.stage for r in self.records):
            rates = np.array([r.bits / r.dims for r in self.records if r.stage == label])
            se = float(rates.std(ddof=1) / np.sqrt(len(rates))) if len(rates) > 1 else float("nan")
            out[label] = (len(rates), float(rates.mean()), se)
        return out


def _stage_demand(stage, shape, model, cfg):
    if stage.side is None:
        patch = shape
    else:
        patch = (min(stage.side, shape[0]), min(stage.side, shape[1]), shape[2])
    return pop_demand_words(model, patch, cfg.n_bins, cfg.latent_precision)


class _Scheduler:
    def __init__(self, plan, model, cfg):
        self.plan, self.model, self.cfg = plan, model, cfg
        self.stage, self.used = 0, 0

    def choose(self, shape, buffer_words):
        stages = self.plan.stages
        while self.stage < len(stages) - 1:
            current = stages[self.stage]
            if current.count is not None:
                advance = self.used >= current.count
            else:
                advance = buffer_words >= _stage_demand(stages[self.stage + 1], shape, self.model, self.cfg)
            if not advance:
                break
            self.stage, self.used = self.stage + 1, 0
        self.used += 1
        return stages[self.stage]


def _require(msg, shape, model, cfg):
    need = pop_demand_words(model, shape, cfg.n_bins, cfg.latent_precision)
    if msg.stream.size < need:
        raise PlanError(
            f"bits-back buffer holds {msg.stream.size} words but coding a "
            f"{'x'.join(map(str, shape))} block may pop {need}; "
            "code more fallback images or use a smaller first patch size")


def _push_patched(msg, x, side, model, cfg, log):
    patches = partition_into_patches(x, side)
    for patch in reversed(patches):
        _require(msg, patch.pixels.shape, model, cfg)
        msg = _push_latent(msg, patch.pixels, model, cfg, log)
    return msg


def _pop_patched(msg, shape, side, model, cfg, log):
    patches = []
    for r, c, h, w in patch_grid(shape[0], shape[1], side):
        msg, pixels = _pop_latent(msg, (h, w, shape[2]), model, cfg, log)
        patches.append(Patch(r, c, pixels))
    return msg, reassemble(patches, shape)


def compress_dataset(images, model, plan=PatchPlan(), fallback=None,
                     settings=CoderSettings(), rng_seed=0):
    """Code ``images`` into one flattened word array; returns ``(words, report)``.

    Images are pushed in order, so the decoder recovers them last first.
    """
    fallback = fallback or order0_fallback_codec()
    images = [check_observation(x).astype(np.uint8) for x in images]
    for x in images:
        ImageHeader.of(x)
    report = RateReport()
    seed = plan.seed_words
    if seed is None:
        latent = images[plan.fallback_count:]
        seed = 0 if plan.fallback_count or not latent else max(
            _stage_demand(plan.stages[0], x.shape, model, settings) for x in latent)
    rng = np.random.default_rng(rng_seed)
    seed_words = rng.integers(0, 1 << 32, size=seed, dtype=np.uint64).astype(np.uint32)
    msg = ShapedMessage(np.array([RANS_L], dtype=np.uint64), stream_from_words(seed_words))
    report.seed_bits = WORD_BITS * seed
    scheduler = _Scheduler(plan, model, settings)
    for index, x in enumerate(images):
        before = content_bits(msg)
        if index < plan.fallback_count:
            label = "fallback"
            msg = fallback.push(msg, x)
            tag = TAG_FALLBACK
        else:
            stage = scheduler.choose(x.shape, msg.stream.size)
            label = stage.label
            if stage.side is None or stage.side >= max(x.shape[:2]):
                _require(msg, x.shape, model, settings)
                msg = encode_image_variable(msg, x, model, settings, report.resize_steps)
                tag = TAG_FULL
            else:
                msg = _push_patched(msg, x, stage.side, model, settings, report.resize_steps)
                msg = push_header(msg, ImageHeader.of(x))
                msg = _SIDE_CODEC.push(msg, _lane(stage.side - 1))
                tag = TAG_PATCHED
        msg = _TAG_CODEC.push(msg, _lane(tag))
        report.records.append(ImageRecord(index, label, x.size, content_bits(msg) - before))
    words = flatten(msg)
    report.total_bits = WORD_BITS * len(words)
    return words, report


def decompress_dataset(words, model, count, fallback=None, settings=CoderSettings()):
    """Inverse of :func:`compress_dataset`; images come back in original order."""
    fallback = fallback or order0_fallback_codec()
    msg = unflatten(words, INIT_SHAPE)
    images = []
    for _ in range(count):
        msg, tag = _TAG_CODEC.pop(msg)
        tag = int(tag[0])
        if tag == TAG_FALLBACK:
            msg, x = fallback.pop(msg)
        elif tag == TAG_FULL:
            msg, x = decode_image_variable(msg, model, settings)
        elif tag == TAG_PATCHED:
            msg, side = _SIDE_CODEC.pop(msg)
            msg, header = pop_header(msg)
            msg, x = _pop_patched(msg, tuple(header), int(side[0]) + 1, model, settings, None)
        else:
            raise ValueError(f"corrupt archive: unknown image tag {tag}")
        images.append(x)
    return images[::-1], msg


def empty_init_message():
    return ShapedMessage(np.array([RANS_L], dtype=np.uint64), EMPTY_STREAM)
