"""Reduced-size invariant checks behind ``hllc selftest``."""
import numpy as np

from . import ans_core, vector_ans
from .bbans_codec import bbans_pop, bbans_push, bbans_shape
from .container import Archive, pack, unpack
from .discretization import bin_masses, conditional_grid
from .distributions import Gaussian, Logistic
from .image_codec import compress_dataset, decompress_dataset
from .toy_models import MODEL_IDS, model_from_id, parameter_digest, sample_image


def _scalar_roundtrip(rng):
    dist = ans_core.quantize(rng.random(37) + 0.01, 14)
    symbols = rng.integers(0, 37, 500).tolist()
    state = ans_core.seeded_state(rng.integers(0, 1 << 32, 8).tolist())
    start = state
    for s in symbols:
        state = ans_core.push(state, s, dist)
    for s in reversed(symbols):
        state, got = ans_core.pop(state, dist)
        assert got == s
    assert state == start


def _vector_roundtrip(rng):
    dist = ans_core.quantize(rng.random((6, 5, 11)) + 0.01, 16)
    msg = vector_ans.seeded_message(rng.integers(0, 1 << 32, 64, dtype=np.uint64), (6, 5))
    symbols = [rng.integers(0, 11, (6, 5)) for _ in range(20)]
    m = msg
    for s in symbols:
        m = vector_ans.vpush(m, s, dist)
    for s in reversed(symbols):
        m, got = vector_ans.vpop(m, dist)
        assert np.array_equal(got, s)
    assert vector_ans.messages_equal(m, msg)


def _fold_roundtrip(rng):
    words = rng.integers(0, 1 << 32, 3000, dtype=np.uint64)
    msg = vector_ans.seeded_message(words, (37,))
    flat = vector_ans.flatten(msg)
    assert np.array_equal(vector_ans.flatten(vector_ans.unflatten(flat, (37,))), flat)
    assert np.array_equal(flat[2:], words.astype(np.uint32)) and flat[0] == 1 and flat[1] == 0


def _equal_mass(rng):
    for family in (Gaussian, Logistic):
        dist = family(rng.normal(0, 3, 50), np.exp(rng.normal(0, 1, 50)))
        for n in (2, 16, 4096):
            masses = bin_masses(conditional_grid(dist, n), dist)
            assert np.abs(masses - 1 / n).max() <= 1e-6


def _bbans_roundtrip(model_id, rng):
    model = model_from_id(model_id)
    x = sample_image(model, (5, 6, 2), rng)
    words = rng.integers(0, 1 << 32, 2000, dtype=np.uint64)
    msg = vector_ans.seeded_message(words, bbans_shape(model, x.shape))
    pushed = bbans_push(msg, x, model, n_bins=256)
    back, y = bbans_pop(pushed, model, n_bins=256)
    assert np.array_equal(x, y) and vector_ans.messages_equal(back, msg)


def _archive_roundtrip(rng):
    model = model_from_id(2)
    images = [sample_image(model, shape, rng) for shape in ((4, 4, 1), (9, 3, 3), (1, 1, 1))]
    words, _ = compress_dataset(images, model)
    archive = unpack(pack(Archive(2, 16, 12, len(images), words)))
    out, _ = decompress_dataset(archive.words, model, archive.count)
    assert all(np.array_equal(a, b) for a, b in zip(images, out))


def run_checks(seed, digests):
    """Returns a list of (name, passed, detail)."""
    rng = np.random.default_rng(seed)
    checks = [("ans-scalar-roundtrip", lambda: _scalar_roundtrip(rng)),
              ("ans-vector-roundtrip", lambda: _vector_roundtrip(rng)),
              ("fold-flatten-roundtrip", lambda: _fold_roundtrip(rng)),
              ("equal-mass-grids", lambda: _equal_mass(rng))]
    checks += [(f"bbans-roundtrip-model-{i}", lambda i=i: _bbans_roundtrip(i, rng)) for i in sorted(MODEL_IDS)]
    checks.append(("archive-roundtrip", lambda: _archive_roundtrip(rng)))
    results = []
    for name, check in checks:
        try:
            check()
            results.append((name, True, ""))
        except Exception as err:  # a selftest reports every failure
            results.append((name, False, f"{type(err).__name__}: {err}"))
    for i in sorted(MODEL_IDS):
        digest = parameter_digest(model_from_id(i))
        expected = digests.get(i)
        results.append((f"model-digest-{i}", digest == expected, digest))
    return results
