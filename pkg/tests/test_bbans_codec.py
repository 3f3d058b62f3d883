import numpy as np
import pytest

from bbans import vector_ans as va
from bbans.ans_core import InsufficientBitsError
from bbans.bbans_codec import (LatentHierarchyModel, SeedPolicy, bbans_pop, bbans_push,
                               bbans_push_with_info, bbans_shape, chain_compress,
                               chain_decompress, check_observation, elbo_estimate,
                               pop_demand_words)
from bbans.distributions import Gaussian
from bbans.toy_models import (LinearGaussianToy, ToyHierarchy, exact_log_marginal,
                              sample_images)

N_BINS = 256  # small grids keep the module tests quick


def seeded_for(model, obs_shape, seed=0, extra=0):
    n = pop_demand_words(model, obs_shape, N_BINS) + extra
    words = np.random.default_rng(seed).integers(0, 1 << 32, n, dtype=np.uint64)
    return va.seeded_message(words, bbans_shape(model, obs_shape))


@pytest.mark.parametrize("depth", [1, 2, 3])
@pytest.mark.parametrize("obs_shape", [(1, 1, 1), (8, 8, 1), (16, 16, 3)])
def test_inverse_law(depth, obs_shape):
    model = ToyHierarchy(depth)
    rng = np.random.default_rng(depth)
    x = rng.integers(0, 256, obs_shape)
    msg = seeded_for(model, obs_shape)
    pushed = bbans_push(msg, x, model, N_BINS)
    back, got = bbans_pop(pushed, model, N_BINS)
    assert np.array_equal(got, x) and got.dtype == np.uint8
    assert va.messages_equal(back, msg)


def test_exhaustive_single_pixel_two_layers():
    model = ToyHierarchy(2)
    msg = seeded_for(model, (1, 1, 1), extra=4)
    for v in range(256):
        x = np.full((1, 1, 1), v)
        back, got = bbans_pop(bbans_push(msg, x, model, N_BINS), model, N_BINS)
        assert int(got[0, 0, 0]) == v
        assert va.messages_equal(back, msg)


def test_default_bins_inverse():
    model = ToyHierarchy(2)
    x = sample_images(model, (8, 8, 1), 1, seed=3)[0]
    words = np.random.default_rng(1).integers(0, 1 << 32, pop_demand_words(model, (8, 8, 1)),
                                              dtype=np.uint64)
    msg = va.seeded_message(words, bbans_shape(model, (8, 8, 1)))
    back, got = bbans_pop(bbans_push(msg, x, model), model)
    assert np.array_equal(got, x) and va.messages_equal(back, msg)


@pytest.mark.parametrize("depth", [1, 3])
def test_net_length_identity(depth):
    model = ToyHierarchy(depth)
    msg = seeded_for(model, (16, 16, 1), extra=200)
    for x in sample_images(model, (16, 16, 1), 5, seed=depth):
        pushed, info = bbans_push_with_info(msg, x, model, N_BINS)
        delta = va.content_bits(pushed) - va.content_bits(msg)
        assert abs(delta - info.net_bits) <= 64
        assert info.prior_bits == 8 * sum(np.prod(s) for s in model.latent_shapes(x.shape))
        msg = pushed


def test_observation_checks():
    with pytest.raises(ValueError):
        check_observation(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        check_observation(np.full((2, 2, 1), 256))
    with pytest.raises(ValueError):
        check_observation(np.full((2, 2, 1), 0.5))


def test_error_seed_policy_fails_on_first_pop():
    model = ToyHierarchy(1)
    x = np.zeros((4, 4, 1), dtype=np.uint8)
    with pytest.raises(InsufficientBitsError):
        chain_compress([x], model, SeedPolicy("error"), n_bins=N_BINS)
    with pytest.raises(ValueError):
        SeedPolicy("free-bits")


def test_seed_demand_is_sufficient_and_counted():
    model = ToyHierarchy(3)
    for shape in [(1, 1, 1), (5, 9, 3), (16, 16, 1)]:
        imgs = sample_images(model, shape, 1, seed=7)
        result = chain_compress(imgs, model, n_bins=N_BINS)
        assert result.seed_bits == 32 * pop_demand_words(model, shape, N_BINS)
        assert result.total_bits == result.seed_bits + result.net_bits


def test_chain_is_lifo_and_restores_seed():
    model = ToyHierarchy(2)
    imgs = sample_images(model, (8, 8, 1), 6, seed=11)
    policy = SeedPolicy(rng_seed=5)
    result = chain_compress(imgs, model, policy, n_bins=N_BINS)
    assert len(result.image_bits) == 6
    out, rest = chain_decompress(result.words, model, (8, 8, 1), 6, n_bins=N_BINS)
    assert all(np.array_equal(a, b) for a, b in zip(out, imgs[::-1]))
    seed = policy.seed_words(pop_demand_words(model, (8, 8, 1), N_BINS))
    assert va.messages_equal(rest, va.seeded_message(seed, bbans_shape(model, (8, 8, 1))))


@pytest.mark.parametrize("depth", [1, 3])
@pytest.mark.parametrize("shape", [(8, 8, 1), (16, 16, 3)])
def test_single_image_chain_length(depth, shape):
    model = ToyHierarchy(depth)
    x = sample_images(model, shape, 1, seed=2)
    result = chain_compress(x, model, n_bins=N_BINS)
    # Total = seed + one push; folding to one lane only rounds words.
    lanes = va.lane_count(bbans_shape(model, shape))
    assert abs(result.net_bits - result.image_bits[0]) <= 64 + 32 * (1 + np.ceil(np.log2(lanes)))


def test_chain_rejects_mixed_shapes():
    model = ToyHierarchy(1)
    with pytest.raises(ValueError):
        chain_compress([np.zeros((2, 2, 1), np.uint8), np.zeros((3, 2, 1), np.uint8)], model)
    with pytest.raises(ValueError):
        chain_compress([], model)


def test_wrong_model_breaks_roundtrip():
    enc, dec = ToyHierarchy(2, seed=0), ToyHierarchy(2, seed=1)
    imgs = sample_images(enc, (8, 8, 1), 3, seed=4)
    result = chain_compress(imgs, enc, n_bins=N_BINS)
    try:
        out, _ = chain_decompress(result.words, dec, (8, 8, 1), 3, n_bins=N_BINS)
    except (ValueError, InsufficientBitsError):
        return
    assert not all(np.array_equal(a, b) for a, b in zip(out, imgs[::-1]))


def test_elbo_is_reproducible():
    model = ToyHierarchy(2)
    x = sample_images(model, (8, 8, 1), 1)[0]
    a = elbo_estimate(model, x, 1, rng=9)
    b = elbo_estimate(model, x, 1, rng=9)
    assert a == b or (a.bits_per_dim == b.bits_per_dim and np.isnan(a.stderr))
    assert elbo_estimate(model, x, 20, rng=1).stderr > 0
    with pytest.raises(ValueError):
        elbo_estimate(model, x, 0)


@pytest.mark.parametrize("shape", [(1, 1, 1), (6, 6, 1), (5, 7, 3)])
def test_linear_gaussian_elbo_is_marginal(shape):
    model = LinearGaussianToy()
    x = sample_images(model, shape, 1, seed=8)[0]
    est = elbo_estimate(model, x, 30, rng=0)
    assert abs(est.bits_per_dim - exact_log_marginal(model, x)) <= 3 * est.stderr + 1e-9


class _FlatLikelihood:
    def log_prob(self, x):
        return np.zeros(np.shape(x))


class _DeterministicLikelihood(LinearGaussianToy):
    """Same latents, but x is a certain outcome given z."""

    def likelihood(self, latents, obs_shape):
        return _FlatLikelihood()


def test_deterministic_likelihood_elbo_is_kl():
    model = _DeterministicLikelihood()
    x = sample_images(LinearGaussianToy(), (4, 4, 1), 1, seed=3)[0]
    q = model.posterior(1, (), x)
    m, s = q.loc, q.scale
    kl = float(np.sum(0.5 * (m ** 2 + s ** 2 - 1) - np.log(s)))  # KL(q || N(0, 1)), nats
    est = elbo_estimate(model, x, 4000, rng=2)
    assert abs(est.bits_per_dim - kl / (x.size * np.log(2))) <= 4 * est.stderr


def test_interface_is_top_down():
    # A posterior for layer l receives only the layers above it.
    seen = []

    class Probe(ToyHierarchy):
        def posterior(self, layer, upper, x):
            seen.append((layer, len(upper)))
            return super().posterior(layer, upper, x)

    model = Probe(3)
    msg = seeded_for(model, (4, 4, 1))
    bbans_push(msg, np.zeros((4, 4, 1), dtype=np.uint8), model, N_BINS)
    assert seen == [(3, 0), (2, 1), (1, 2)]
    with pytest.raises(NotImplementedError):
        LatentHierarchyModel().posterior(1, (), None)


def test_posterior_scales_positive():
    model = ToyHierarchy(3)
    x = sample_images(model, (9, 9, 2), 1)[0]
    upper = ()
    for layer in (3, 2, 1):
        q = model.posterior(layer, upper, x)
        assert isinstance(q, Gaussian)
        assert np.all(np.isfinite(q.loc)) and np.all(q.scale > 0)
        upper = (q.loc,) + upper
