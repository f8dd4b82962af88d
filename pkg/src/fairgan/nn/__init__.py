"""Network building blocks: spectral norm, conditional batch norm, resnet
generator and projection discriminator, checkpoint archive format."""

from .spectral import SpectralNormState, spectral_normalize, SNLinear, SNConv2d
from .layers import (
    ConditionalBatchNorm2d,
    UnconditionalBatchNorm2d,
    conditional_batch_norm,
    GenBlock,
    DiscBlock,
    DiscStemBlock,
    ImageTrunk,
)
from .generator import Generator, GeneratorSpec, OutcomeConditioning
from .discriminator import (
    Discriminator,
    DiscriminatorSpec,
    DiscriminatorOutputs,
    ImageOnlyOutputs,
    projection_logit,
)
from .checkpoint import (
    FORMAT_VERSION,
    encode_spec,
    save_archive,
    load_archive,
    state_dict_to_arrays,
    arrays_to_state_dict,
    rng_state_to_array,
    rng_state_from_array,
)
from .init import init_module

__all__ = [
    "SpectralNormState",
    "spectral_normalize",
    "SNLinear",
    "SNConv2d",
    "ConditionalBatchNorm2d",
    "UnconditionalBatchNorm2d",
    "conditional_batch_norm",
    "GenBlock",
    "DiscBlock",
    "DiscStemBlock",
    "ImageTrunk",
    "Generator",
    "GeneratorSpec",
    "OutcomeConditioning",
    "Discriminator",
    "DiscriminatorSpec",
    "DiscriminatorOutputs",
    "ImageOnlyOutputs",
    "projection_logit",
    "FORMAT_VERSION",
    "encode_spec",
    "save_archive",
    "load_archive",
    "state_dict_to_arrays",
    "arrays_to_state_dict",
    "rng_state_to_array",
    "rng_state_from_array",
    "init_module",
]
