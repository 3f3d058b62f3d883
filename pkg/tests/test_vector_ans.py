import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbans import ans_core as ac
from bbans import vector_ans as va
from bbans.ans_core import InsufficientBitsError, quantize


def seed_words(n, seed=0):
    return np.random.default_rng(seed).integers(0, 1 << 32, n, dtype=np.uint64).astype(np.uint32)


def test_single_lane_matches_scalar():
    rng = np.random.default_rng(0)
    dist = quantize(rng.random(30), 13)
    symbols = rng.integers(0, 30, 2000)
    state = ac.empty_state()
    msg = va.empty_message((1,))
    for s in symbols.tolist():
        state = ac.push(state, s, dist)
        msg = va.vpush(msg, np.array([s]), dist)
    assert int(msg.head[0]) == state.head
    assert np.array_equal(va.stream_words(msg.stream), ac.flatten(state)[2:])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 30), st.integers(2, 40))
def test_vpush_vpop_inverse_per_lane_dists(seed, steps, k):
    rng = np.random.default_rng(seed)
    shape = (3, 4, 2)
    dists = [quantize(rng.random(shape + (k,)) ** 4 + 1e-4, int(rng.integers(6, 25)))
             for _ in range(steps)]
    symbols = [rng.integers(0, k, shape) for _ in range(steps)]
    start = va.seeded_message(seed_words(100, seed), shape)
    msg = start
    for s, d in zip(symbols, dists):
        msg = va.vpush(msg, s, d)
        assert np.all(msg.head >= np.uint64(ac.RANS_L))
    for s, d in zip(reversed(symbols), reversed(dists)):
        msg, got = va.vpop(msg, d)
        assert np.array_equal(got, s)
    assert va.messages_equal(msg, start)


def test_renormalized_words_follow_lane_order():
    # Every lane renormalizes on this push; words appear in ascending lane order.
    head = np.array([(1 << 63) + i for i in range(5)], dtype=np.uint64)
    msg = va.ShapedMessage(head, va.EMPTY_STREAM)
    dist = ac.QuantizedDistribution(np.array([1, 255]), 8)
    out = va.vpush(msg, np.zeros(5, dtype=np.int64), dist)
    assert va.stream_words(out.stream)[::-1].tolist() == list(range(5))


def test_vpush_shape_checks():
    msg = va.empty_message((2, 3))
    dist = quantize(np.ones((3, 2, 4)), 8)
    with pytest.raises(ValueError):
        va.vpush(msg, np.zeros((2, 3), dtype=int), dist)
    with pytest.raises(ValueError):
        va.vpush(msg, np.zeros((3, 2), dtype=int), quantize(np.ones(4), 8))
    with pytest.raises(ValueError):
        va.vpush(msg, np.full((2, 3), 4), quantize(np.ones(4), 8))


def test_uniform_symbols_cost_exactly_their_bits():
    msg = va.seeded_message(seed_words(4096 * 3), (4096,))
    dist = quantize(np.ones(256), 8)
    before = va.content_bits(msg)
    syms = np.random.default_rng(1).integers(0, 256, 4096)
    after = va.vpush(msg, syms, dist)
    assert va.content_bits(after) - before == pytest.approx(4096 * 8, abs=1e-6)
    grown = 32 * (len(va.flatten(after)) - len(va.flatten(msg)))
    assert abs(grown - 4096 * 8) <= 64 + 32 * (1 + 12)


def test_uniform_pops_are_uniform():
    n = 100_000
    msg = va.seeded_message(seed_words(3 * n, 2), (n,))
    dist = quantize(np.ones(16), 4)
    _, symbols = va.vpop(msg, dist)
    counts = np.bincount(symbols, minlength=16)
    expected = n / 16
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 37.70  # chi-square(15) upper 0.1% point
    assert np.all(np.abs(counts - expected) <= 3 * np.sqrt(expected * 15 / 16))


def test_head_value_distribution_is_valid():
    d = va.head_value_distribution()
    assert d.frequencies.min() >= 1 and d.frequencies.sum() == 1 << d.precision
    # Mass per exponent is constant, as p(h) ~ 1/h puts equal mass on each octave.
    per_exponent = d.frequencies.reshape(32, -1).sum(axis=1)
    assert per_exponent.max() - per_exponent.min() <= 128


@pytest.mark.parametrize("values", [
    [1 << 32, (1 << 64) - 1, (1 << 40) + 12345, 3 << 50],
])
def test_head_value_codec_inverse(values):
    values = np.array(values, dtype=np.uint64)
    head = va.seeded_message(seed_words(50), (4,)).head
    start = va.seeded_message(seed_words(50), (4,))
    h, s = va.push_head_values(start.head, start.stream, values)
    h2, s2, got = va.pop_head_values(h, s)
    assert np.array_equal(got, values)
    assert np.array_equal(h2, head)


def halving_steps(n):
    steps = 0
    while n > 1:
        n = (n + 1) // 2
        steps += 1
    return steps


@pytest.mark.parametrize("k", [0, 1, 3, 6, 10])
def test_fold_power_of_two_takes_k_steps(k):
    msg = va.seeded_message(seed_words(3 << k), (1 << k,))
    _, _, steps = va.resize_lanes(va.ravel_head(msg.head), msg.stream, 1)
    assert steps == k


@pytest.mark.parametrize("n", [1, 2, 3, 17, 100, 1023, 1025])
def test_fold_step_count_matches_halving_oracle(n):
    assert len(va.fold_schedule(n, 1)) - 1 == halving_steps(n)


def test_reshape_same_shape_is_identity():
    msg = va.seeded_message(seed_words(100), (4, 5))
    assert va.reshape_head(msg, (4, 5)) is msg


def test_shrink_then_grow_recovers_message():
    msg = va.seeded_message(seed_words(3000), (64,))
    shrunk = va.reshape_head(msg, (1,))
    assert va.messages_equal(va.reshape_head(shrunk, (64,)), msg)


def test_reshape_between_nested_shapes():
    msg = va.seeded_message(seed_words(3000), ((6, 5, 3), ((3, 3, 1), (2, 2, 1))))
    other = va.reshape_head(msg, (7, 3))
    assert other.shape == (7, 3)
    assert va.messages_equal(va.reshape_head(other, msg.shape), msg)


def test_flatten_fresh_message_is_tiny():
    assert len(va.flatten(va.empty_message((1,)))) <= 3


@pytest.mark.parametrize("shape", [(1,), (17,), (32, 32, 3), ((5, 5, 1), ((3, 3, 1),))])
def test_flatten_roundtrip_across_shapes(shape):
    msg = va.seeded_message(seed_words(8000, 3), shape)
    dist = quantize(np.random.default_rng(4).random(9), 12)
    leaf = va.head_leaves(msg.head)[0]
    if isinstance(msg.head, np.ndarray):
        msg = va.vpush(msg, np.random.default_rng(5).integers(0, 9, leaf.shape), dist)
    words = va.flatten(msg)
    back = va.unflatten(words, shape)
    assert va.messages_equal(back, msg)
    assert np.array_equal(va.flatten(back), words)


def test_grow_from_random_seed_gives_valid_lanes():
    msg = va.unflatten(np.concatenate([[1, 0], seed_words(20000, 6)]), (32, 32, 3))
    lanes = va.ravel_head(msg.head)
    assert lanes.size == 3072 and np.all(lanes >= np.uint64(1 << 32))


def test_unflatten_needs_enough_words():
    with pytest.raises(InsufficientBitsError):
        va.unflatten(np.array([1, 0, 5, 6], dtype=np.uint32), (32, 32, 3))
    with pytest.raises(InsufficientBitsError):
        va.unflatten(np.array([1], dtype=np.uint32))
    with pytest.raises(ValueError):
        va.unflatten(np.array([0, 7], dtype=np.uint32))


def test_folded_flatten_beats_naive_serialization():
    seed = seed_words(200_000, 7)
    msg = va.seeded_message(seed, (4096,))
    naive = 4096 * 64
    overhead = 32 * len(va.flatten(msg)) - 32 * len(seed)
    assert overhead < 0.01 * naive


@pytest.mark.parametrize("lanes", [2, 64, 4096])
def test_rate_neutral_vectorization(lanes):
    rng = np.random.default_rng(lanes)
    dist = quantize(rng.random(50) ** 2 + 1e-3, 16)
    steps = max(1, 20_000 // lanes)
    symbols = rng.choice(50, (steps, lanes), p=dist.probabilities())
    seed = seed_words(lanes * 3 + 100, 8)
    vec = va.seeded_message(seed, (lanes,))
    for row in symbols:
        vec = va.vpush(vec, row, dist)
    scalar = ac.seeded_state(seed.tolist())
    for s in symbols.T.ravel().tolist():
        scalar = ac.push(scalar, s, dist)
    diff = 32 * len(va.flatten(vec)) - 32 * len(ac.flatten(scalar))
    assert abs(diff) <= 32 * (1 + np.ceil(np.log2(lanes)))


def test_messages_are_persistent():
    dist = quantize(np.ones(4), 2)
    base = va.seeded_message(seed_words(10), (3,))
    a = va.vpush(base, np.array([0, 1, 2]), dist)
    b = va.vpush(base, np.array([3, 3, 3]), dist)
    assert va.messages_equal(va.vpop(a, dist)[0], base)
    assert va.messages_equal(va.vpop(b, dist)[0], base)


def test_stream_pop_across_chunks():
    s = va.stream_push(va.stream_push(va.EMPTY_STREAM, [1, 2, 3]), [4, 5])
    rest, words = va.stream_pop(s, 4)
    assert words.tolist() == [2, 3, 4, 5] and rest.size == 1
    assert va.stream_words(s).tolist() == [5, 4, 3, 2, 1]
    with pytest.raises(InsufficientBitsError):
        va.stream_pop(s, 6)
