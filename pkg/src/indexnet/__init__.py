"""Learned index functions for guided downsampling and upsampling."""

from .errors import ConfigError, ContractError, DimensionError, FormatError, TrainingError
from .guided import expand_holistic, indexed_pool, indexed_upsample
from .index_networks import (
    Family,
    IndexMaps,
    IndexNetConfig,
    Normalization,
    build_indexnet,
    normalize,
    param_count,
)
from .samplers import SamplerId, SamplerPair, build_pair
from .tensor import Parameter, Tensor, backward, no_grad, precision

__version__ = "0.1.0"
