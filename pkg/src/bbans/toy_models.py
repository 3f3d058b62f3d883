"""
Fixed-parameter, fully convolutional latent models for 8-bit images.

Parameters are generated from a named integer seed with SplitMix64 and are
location independent, so one model scores images of any height and width.
Layer l has one channel and spatial size ceil(H / 2^l) x ceil(W / 2^l).

ToyHierarchy
    z_L ~ N(0, 1); z_l | z_{l+1:L} ~ N(mu_l, sigma_l) with mu_l, sigma_l
    given by 3x3 zero-padded convolutions of the upsampled parent and
    grandparent. Pixels follow a discretized logistic whose location is
    127.5 + 60 tanh(h), where h sums 3x3 convolutions of every latent layer.
    The posterior is Gaussian: the prior combined with a pooled, inverted
    reading of x, which only needs z_{l+1:L} and x.

LinearGaussianToy
    z ~ N(0, 1) per 2x2 block; x = b + a z + N(0, s^2) per pixel. The
    posterior is exact and the marginal is available in closed form.
"""
import hashlib
from typing import NamedTuple

import numpy as np

from .bbans_codec import LatentHierarchyModel
from .distributions import (N_PIXEL_VALUES, DiscretizedPixels, Gaussian,
                            GaussianDensityPixels, Logistic)

MAX_CHANNELS = 4
PIXEL_CENTER = 127.5
PIXEL_RANGE = 60.0
LIKELIHOOD_SCALE = 5.0
LATENT_SCALE = 0.6
OUTPUT_GAIN = (0.6, 0.45, 0.35)  # weight of each latent layer in the pixel map
PARENT_GAIN = 0.8
GRANDPARENT_GAIN = 0.3
_EVIDENCE_CLIP = 0.97


def _splitmix64(x):
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def uniform_params(seed, name, shape, low=-1.0, high=1.0):
    """Deterministic uniforms on [low, high) keyed by (seed, name)."""
    key = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    base = np.uint64(int.from_bytes(key[:8], "little"))
    n = int(np.prod(shape, dtype=np.int64))
    with np.errstate(over="ignore"):
        counters = base + np.arange(n, dtype=np.uint64)
    u = (_splitmix64(counters) >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return (low + (high - low) * u).reshape(shape)


def latent_spatial_shapes(obs_shape, depth):
    h, w = obs_shape[:2]
    shapes = []
    for _ in range(depth):
        h, w = -(-h // 2), -(-w // 2)
        shapes.append((h, w, 1))
    return shapes


def upsample_to(z, shape):
    """Nearest-neighbour upsampling by powers of two, cropped to ``shape``."""
    fy = -(-shape[0] // z.shape[0])
    fx = -(-shape[1] // z.shape[1])
    return np.repeat(np.repeat(z, fy, axis=0), fx, axis=1)[:shape[0], :shape[1]]


def pool_to(a, shape):
    """Block means over the pixels each coarse cell covers (partial blocks at edges)."""
    fy = -(-a.shape[0] // shape[0])
    fx = -(-a.shape[1] // shape[1])
    h, w = shape[0] * fy, shape[1] * fx
    padded = np.zeros((h, w) + a.shape[2:])
    count = np.zeros((h, w))
    padded[:a.shape[0], :a.shape[1]] = a
    count[:a.shape[0], :a.shape[1]] = 1
    sums = padded.reshape(shape[0], fy, shape[1], fx, *a.shape[2:]).sum(axis=(1, 3))
    counts = count.reshape(shape[0], fy, shape[1], fx).sum(axis=(1, 3))
    return sums / counts.reshape(counts.shape + (1,) * (a.ndim - 2)), counts


def conv3x3(features, weights):
    """Zero-padded 3x3 convolution: (H, W, Cin) x (3, 3, Cin, Cout) -> (H, W, Cout)."""
    h, w, _ = features.shape
    padded = np.pad(features, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros((h, w, weights.shape[-1]))
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + h, dx:dx + w] @ weights[dy, dx]
    return out


def _center_kernel(seed, name, cin, cout, center, spread):
    k = uniform_params(seed, name, (3, 3, cin, cout), -spread, spread)
    k[1, 1] += center
    return k


class ToyHierarchy(LatentHierarchyModel):
    def __init__(self, depth=2, seed=0):
        if depth not in (1, 2, 3):
            raise ValueError("depth must be 1, 2 or 3")
        self.depth = depth
        self.seed = seed
        self.channels = (1,) * depth
        p = {}
        for l in range(1, depth):
            cin = min(2, depth - l)
            center = np.array([PARENT_GAIN, GRANDPARENT_GAIN][:cin])[:, None]
            p[f"prior_mean_{l}"] = _center_kernel(seed, f"prior_mean_{l}", cin, 1, center, 0.08)
            p[f"prior_scale_{l}"] = uniform_params(seed, f"prior_scale_{l}", (3, 3, cin, 1), -0.3, 0.3)
            p[f"prior_bias_{l}"] = uniform_params(seed, f"prior_bias_{l}", (2,), -0.1, 0.1)
        gamma = uniform_params(seed, "pixel_gain", (MAX_CHANNELS,), 0.8, 1.2)
        for k in range(1, depth + 1):
            kern = uniform_params(seed, f"pixel_kernel_{k}", (3, 3, 1, MAX_CHANNELS), -0.06, 0.06)
            kern[1, 1, 0] += gamma
            p[f"pixel_kernel_{k}"] = OUTPUT_GAIN[k - 1] * kern
        p["pixel_gain"] = gamma
        p["pixel_bias"] = uniform_params(seed, "pixel_bias", (MAX_CHANNELS,), -0.2, 0.2)
        p["pixel_scale"] = uniform_params(seed, "pixel_scale", (MAX_CHANNELS,), -0.25, 0.25)
        for arr in p.values():
            arr.setflags(write=False)
        self.params = p
        self._evidence_gain, self._evidence_var = self._evidence_constants()

    def _evidence_constants(self):
        # Layer l is read from x through its own gain plus the part of the
        # lower layers it explains via their prior means.
        gains, noise = [], []
        for l in range(1, self.depth + 1):
            lower = range(1, l)
            gains.append(OUTPUT_GAIN[l - 1]
                         + sum(OUTPUT_GAIN[k - 1] * PARENT_GAIN ** (l - k) for k in lower))
            noise.append(sum((OUTPUT_GAIN[k - 1] * LATENT_SCALE) ** 2 / 4 ** (l - k) for k in lower))
        return gains, noise

    def latent_shapes(self, obs_shape):
        return latent_spatial_shapes(obs_shape, self.depth)

    def prior(self, layer, upper, obs_shape):
        shape = self.latent_shapes(obs_shape)[layer - 1]
        if layer == self.depth:
            return Gaussian(np.zeros(shape), np.ones(shape))
        context = np.concatenate([upsample_to(z, shape) for z in upper[:2]], axis=-1)
        p = self.params
        bias = p[f"prior_bias_{layer}"]
        mean = conv3x3(context, p[f"prior_mean_{layer}"]) + bias[0]
        log_scale = 0.25 * np.tanh(conv3x3(context, p[f"prior_scale_{layer}"]) + bias[1])
        return Gaussian(mean, LATENT_SCALE * np.exp(log_scale))

    def _pixel_preactivation(self, latents, obs_shape):
        h, w, c = obs_shape
        pre = np.broadcast_to(self.params["pixel_bias"][:c], (h, w, c)).copy()
        for k, z in enumerate(latents, start=1):
            pre += conv3x3(upsample_to(z, (h, w)), self.params[f"pixel_kernel_{k}"][..., :c])
        return pre

    def likelihood(self, latents, obs_shape):
        if len(obs_shape) != 3 or not 1 <= obs_shape[2] <= MAX_CHANNELS:
            raise ValueError(f"observations need 1..{MAX_CHANNELS} channels")
        pre = self._pixel_preactivation(latents, obs_shape)
        t = np.tanh(pre)
        scale = LIKELIHOOD_SCALE * np.exp(self.params["pixel_scale"][:obs_shape[2]] * t)
        return DiscretizedPixels(Logistic(PIXEL_CENTER + PIXEL_RANGE * t, scale))

    def posterior(self, layer, upper, x):
        x = np.asarray(x, dtype=np.float64)
        h, w, c = x.shape
        prior = self.prior(layer, upper, x.shape)
        t = np.clip((x - PIXEL_CENTER) / PIXEL_RANGE, -_EVIDENCE_CLIP, _EVIDENCE_CLIP)
        p = self.params
        reading = (np.arctanh(t) - p["pixel_bias"][:c]) / p["pixel_gain"][:c]
        reading = reading.mean(axis=-1, keepdims=True)
        for k, z in enumerate(upper, start=layer + 1):
            reading -= OUTPUT_GAIN[k - 1] * upsample_to(z, (h, w))
        shape = prior.loc.shape
        pooled, counts = pool_to(reading, shape[:2])
        gain = self._evidence_gain[layer - 1]
        pixel_noise = 0.06 / c
        noise = (self._evidence_var[layer - 1] + pixel_noise / counts[..., None]) / gain ** 2
        precision = 1.0 / prior.scale ** 2 + 1.0 / noise
        mean = (prior.loc / prior.scale ** 2 + pooled / gain / noise) / precision
        return Gaussian(mean, 1.0 / np.sqrt(precision))


class LinearGaussianToy(LatentHierarchyModel):
    """Conjugate single-layer model with exact posterior and marginal."""
    depth = 1

    def __init__(self, offset=PIXEL_CENTER, gain=40.0, noise=6.0):
        if not noise > 0:
            raise ValueError("noise scale must be positive")
        self.offset, self.gain, self.noise = float(offset), float(gain), float(noise)
        self.params = {"linear": np.array([self.offset, self.gain, self.noise])}

    def latent_shapes(self, obs_shape):
        return latent_spatial_shapes(obs_shape, 1)

    def prior(self, layer, upper, obs_shape):
        shape = self.latent_shapes(obs_shape)[0]
        return Gaussian(np.zeros(shape), np.ones(shape))

    def likelihood(self, latents, obs_shape):
        h, w, c = obs_shape
        mean = self.offset + self.gain * upsample_to(latents[0], (h, w))
        mean = np.broadcast_to(mean, (h, w, c))
        return GaussianDensityPixels(Gaussian(mean, np.full((h, w, c), self.noise)))

    def _block_stats(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = self.latent_shapes(x.shape)[0]
        mean, counts = pool_to((x - self.offset).sum(axis=-1, keepdims=True), shape[:2])
        n = counts[..., None] * x.shape[2]
        return mean * counts[..., None], n  # block sums of (x - b) and child counts

    def posterior(self, layer, upper, x):
        sums, n = self._block_stats(x)
        ratio = self.gain / self.noise ** 2
        precision = 1.0 + n * self.gain * ratio
        return Gaussian(ratio * sums / precision, 1.0 / np.sqrt(precision))


def exact_log_marginal(model, x):
    """-log2 p(x) per dimension under a LinearGaussianToy (density of x).

    Each latent block of n values is N(b 1, a^2 11^T + s^2 I). The quadratic
    form splits into the scatter about the block mean, divided by s^2, plus
    the block sum term, which stays accurate as s -> 0.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x - model.offset
    sums, n = model._block_stats(x)
    block_mean = upsample_to(sums / n, x.shape[:2])
    scatter, counts = pool_to(((d - block_mean) ** 2).sum(axis=-1, keepdims=True), sums.shape[:2])
    scatter = scatter * counts[..., None]
    s2, a2 = model.noise ** 2, model.gain ** 2
    log_det = (n - 1) * np.log(s2) + np.log(s2 + n * a2)
    quad = scatter / s2 + sums ** 2 / (n * (s2 + n * a2))
    log_p = -0.5 * (n * np.log(2 * np.pi) + log_det + quad)
    return float(-log_p.sum() / (x.size * np.log(2)))


class ModelSpec(NamedTuple):
    name: str
    depth: int = 1
    seed: int = 0


def build_toy_model(spec, depth=None, seed=0):
    """Build a model from a ModelSpec, or from a name plus keyword options."""
    if isinstance(spec, str):
        spec = ModelSpec(spec, depth or 1, seed)
    if spec.name == "toy":
        return ToyHierarchy(spec.depth, spec.seed)
    if spec.name == "linear-gaussian":
        if spec.depth != 1:
            raise ValueError("the linear-Gaussian model has depth 1")
        return LinearGaussianToy()
    raise ValueError(f"unknown model {spec.name!r}")


def parameter_digest(model):
    h = hashlib.sha256()
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


# Container model ids.
MODEL_IDS = {
    1: ModelSpec("toy", 1, 0),
    2: ModelSpec("toy", 2, 0),
    3: ModelSpec("toy", 3, 0),
    4: ModelSpec("linear-gaussian", 1, 0),
}

# sha256 of the generated parameters; a mismatch means the generator or a
# constant changed.
MODEL_DIGESTS = {
    1: "30883d6409cbe4e836a9a2dbd17bae0cce9197c6ddad9ac7d748487af9e021ea",
    2: "0800ea2377d459c54a24c30c98f87b2c4a6ff49efb57d3b507318c7bc6467020",
    3: "9c3f92817e4268e9809476dd37f29344a258d16048a25eb4c40b6dd4673207a5",
    4: "7670c3a8730b6bab2138901d7976f73f7d445400b77bd04f22fbf2a561adf883",
}


def model_from_id(model_id):
    if model_id not in MODEL_IDS:
        raise ValueError(f"unknown model id {model_id}")
    return build_toy_model(MODEL_IDS[model_id])


def verify_digest(model_id, model=None):
    model = model_from_id(model_id) if model is None else model
    return parameter_digest(model) == MODEL_DIGESTS[model_id]


def sample_image(model, obs_shape, rng):
    """Ancestral sample of x with continuous latents."""
    upper = ()
    for layer in range(model.depth, 0, -1):
        upper = (model.prior(layer, upper, obs_shape).sample(rng),) + upper
    x = model.likelihood(upper, tuple(obs_shape)).sample(rng)
    return np.clip(x, 0, N_PIXEL_VALUES - 1).astype(np.uint8)


def sample_images(model, obs_shape, n, seed=0):
    rng = np.random.default_rng(seed)
    return [sample_image(model, obs_shape, rng) for _ in range(n)]
