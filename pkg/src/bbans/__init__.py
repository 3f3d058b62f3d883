"""Vectorized ANS and bits-back coding for hierarchical latent models."""
from .ans_core import InsufficientBitsError, QuantizedDistribution, quantize
from .bbans_codec import (LatentHierarchyModel, SeedPolicy, bbans_pop, bbans_push,
                          bbans_shape, chain_compress, chain_decompress, elbo_estimate)
from .codecs import (Codec, ViewLens, autoregressive_compose, categorical_codec,
                     discretized_continuous_codec, serial_compose, uniform_codec,
                     view_codec)
from .discretization import (DiscretizationGrid, index_to_center, make_equal_mass_bins,
                             posterior_index_codec)
from .image_codec import (PatchPlan, PatchStage, compress_dataset, decode_image_variable,
                          decompress_dataset, encode_image_variable,
                          partition_into_patches)
from .toy_models import (LinearGaussianToy, ToyHierarchy, build_toy_model,
                         exact_log_marginal)
from .vector_ans import ShapedMessage, flatten, unflatten
