"""Index-guided pooling and upsampling."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ops
from .errors import ContractError, DimensionError
from .tensor import Tensor


def expand_holistic(index: Tensor, channels: int) -> Tensor:
    """Copy a one-channel index map across ``channels``; the adjoint sums over channels."""
    return ops.expand_channels(index, channels)


def _match_channels(x: Tensor, index: Tensor, op: str) -> Tensor:
    c, ci = x.shape[1], index.shape[1]
    if ci == c:
        return index
    if ci == 1:
        return expand_holistic(index, c)
    raise DimensionError(f"{op}: index has {ci} channels (axis 1); expected 1 or {c}")


def indexed_pool(x: Tensor, enc_index: Tensor, k: int = 2) -> Tensor:
    """Weighted sum of each k x k window of ``x`` with its index weights.

    Computed as elementwise product, k x k average pooling and a k*k rescale.
    """
    if enc_index.shape[0] != x.shape[0] or enc_index.shape[2:] != x.shape[2:]:
        raise DimensionError(
            f"indexed_pool: index shape {enc_index.shape} does not match features {x.shape}"
        )
    index = _match_channels(x, enc_index, "indexed_pool")
    return ops.scale(ops.avg_pool(ops.mul(x, index), k, k), float(k * k))


def indexed_upsample(d: Tensor, dec_index: Tensor, k: int = 2) -> Tensor:
    """Nearest-neighbour upsample ``d`` by k, then weight every output by its index."""
    n, _, h, w = d.shape
    if dec_index.shape[0] != n or dec_index.shape[2:] != (h * k, w * k):
        raise DimensionError(
            f"indexed_upsample: index spatial size {dec_index.shape[2:]} is not {k}x that of {d.shape[2:]}"
        )
    index = _match_channels(d, dec_index, "indexed_upsample")
    return ops.mul(ops.nearest_upsample(d, k), index)


@dataclass
class StageSideInfo:
    """What a downsampling stage hands to its mirrored upsampling stage."""

    source_shape: tuple[int, int]
    decoder_index: Tensor | None = None
    argmax: object = None
    encoder_index: Tensor | None = None
    _consumed: bool = field(default=False, repr=False)

    def consume(self) -> StageSideInfo:
        if self._consumed:
            raise ContractError("stage side information was already consumed by an upsampling stage")
        self._consumed = True
        return self
