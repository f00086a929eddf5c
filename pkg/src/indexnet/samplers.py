"""Classical resampling operators written as index functions, and the down/up pairings.

The region-level functions (:func:`index_max`, :func:`index_avg`,
:func:`index_weighted`, :func:`index_ps`) operate on plain ``k x k`` arrays and
serve as oracles. The module classes are the factor-2 downsamplers and
upsamplers used inside the reconstruction network.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .guided import StageSideInfo, indexed_pool, indexed_upsample
from .index_networks import IndexNet
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import Tensor

# ---------------------------------------------------------------------------
# index functions over a single region


def index_max(region) -> np.ndarray:
    """Binary map with a single 1 at the first maximum (row-major scan)."""
    region = np.asarray(region)
    if region.size == 0:
        raise DimensionError("index_max: region is empty")
    out = np.zeros(region.shape, dtype=np.float64)
    out.flat[int(np.argmax(region))] = 1.0
    return out


def index_avg(region) -> np.ndarray:
    """All-ones map: average pooling (with 1/k^2) or nearest-neighbour upsampling."""
    return np.ones(np.asarray(region).shape, dtype=np.float64)


def index_weighted(region, weights) -> np.ndarray:
    """``W * 1(x in X)``: fixed W gives bilinear interpolation, learned W deconvolution."""
    region, weights = np.asarray(region), np.asarray(weights, dtype=np.float64)
    if region.shape != weights.shape:
        raise DimensionError(f"index_weighted: weights {weights.shape} do not match region {region.shape}")
    return weights * index_avg(region)


def index_ps(cell) -> np.ndarray:
    """Arrange an ``r*r`` vector into an ``r x r`` block, element ``m*r + n`` at row m, column n."""
    cell = np.asarray(cell).reshape(-1)
    r = int(round(np.sqrt(cell.size)))
    if r * r != cell.size:
        raise DimensionError(f"index_ps: channel count {cell.size} is not a perfect square")
    out = np.empty((r, r), dtype=cell.dtype)
    for m in range(r):
        for n in range(r):
            out[m, n] = cell[m * r + n]
    return out


def pool_with_index(x: np.ndarray, index_fn, k: int = 2, scale: float = 1.0) -> np.ndarray:
    """Downsample a 2-D array by ``sum(index_fn(region) * region) * scale`` per window."""
    h, w = x.shape
    out = np.empty((h // k, w // k), dtype=np.float64)
    for i in range(h // k):
        for j in range(w // k):
            region = x[i * k : (i + 1) * k, j * k : (j + 1) * k]
            out[i, j] = (index_fn(region) * region).sum() * scale
    return out


def upsample_with_weights(d: np.ndarray, weights: np.ndarray, stride: int) -> np.ndarray:
    """Place ``weights * d[i, j]`` at every stride-spaced offset and sum overlaps (a 2-D deconvolution)."""
    h, w = d.shape
    kh, kw = weights.shape
    out = np.zeros(((h - 1) * stride + kh, (w - 1) * stride + kw), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            out[i * stride : i * stride + kh, j * stride : j * stride + kw] += (
                index_weighted(np.empty((kh, kw)), weights) * d[i, j]
            )
    return out


def bilinear_kernel(factor: int = 2) -> np.ndarray:
    """Weights for which :func:`upsample_with_weights` on an edge-padded input equals bilinear upsampling."""
    size = 2 * factor
    center = (size - 1) / 2.0
    taps = 1.0 - np.abs(np.arange(size) - center) / factor
    return np.outer(taps, taps)


def bilinear_via_weights(d: np.ndarray, factor: int = 2) -> np.ndarray:
    """Half-pixel bilinear upsampling through the weighted index function (factor 2)."""
    if factor != 2:
        raise ConfigError("bilinear_via_weights is defined for factor 2")
    padded = np.pad(d, 1, mode="edge")
    full = upsample_with_weights(padded, bilinear_kernel(2), 2)
    h, w = d.shape
    return full[3 : 3 + 2 * h, 3 : 3 + 2 * w]


def max_index_map(x: np.ndarray, k: int = 2) -> np.ndarray:
    """Apply :func:`index_max` to every k x k window of an (N, C, H, W) array."""
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for i in range(0, h, k):
                for j in range(0, w, k):
                    out[b, ch, i : i + k, j : j + k] = index_max(x[b, ch, i : i + k, j : j + k])
    return out


def uniform_index_map(shape, k: int = 2) -> np.ndarray:
    """``index_avg / k^2`` tiled over a full map."""
    return np.full(shape, 1.0 / (k * k))


# ---------------------------------------------------------------------------
# downsamplers: forward(x) -> (y, side_info)


class Downsampler(Module):
    factor = 2

    def out_channels(self, c: int) -> int:
        return c

    def _side(self, x: Tensor, **kw) -> StageSideInfo:
        return StageSideInfo(source_shape=x.shape[2:], **kw)


class AvgPoolDown(Downsampler):
    def forward(self, x):
        return ops.avg_pool(x, 2, 2), self._side(x)


class ConvDown(Downsampler):
    """Learnable 2x2 stride-2 convolution, channel preserving."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv = Conv2d(channels, channels, 2, rng, stride=2, bias=True)

    def forward(self, x):
        return self.conv(x), self._side(x)


class SpaceToDepthDown(Downsampler):
    def out_channels(self, c: int) -> int:
        return 4 * c

    def forward(self, x):
        return ops.space_to_depth(x, 2), self._side(x)


class MaxPoolDown(Downsampler):
    def forward(self, x):
        y, argmax = ops.max_pool_with_argmax(x, 2, 2)
        return y, self._side(x, argmax=argmax)


class IndexedPoolDown(Downsampler):
    """Runs the stage's index network and pools with the encoder map."""

    def __init__(self, indexnet: IndexNet):
        self.indexnet = indexnet

    def forward(self, x):
        maps = self.indexnet(x)
        k = self.indexnet.cfg.k
        y = indexed_pool(x, maps.encoder_index, k)
        return y, self._side(x, decoder_index=maps.decoder_index, encoder_index=maps.encoder_index)


# ---------------------------------------------------------------------------
# upsamplers: forward(d, side_info) -> x


class Upsampler(Module):
    factor = 2
    uses_side_info = False

    def out_channels(self, c: int) -> int:
        return c


class NearestUp(Upsampler):
    def forward(self, d, side=None):
        return ops.nearest_upsample(d, 2)


class BilinearUp(Upsampler):
    def forward(self, d, side=None):
        return ops.bilinear_upsample(d, 2)


class DeconvUp(Upsampler):
    """Learnable 2x2 stride-2 transposed convolution."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.deconv = ConvTranspose2d(channels, channels, 2, rng, stride=2, bias=True)

    def forward(self, d, side=None):
        return self.deconv(d)


class DepthToSpaceUp(Upsampler):
    def out_channels(self, c: int) -> int:
        if c % 4:
            raise ConfigError(f"depth-to-space needs channels divisible by 4, got {c}")
        return c // 4

    def forward(self, d, side=None):
        return ops.depth_to_space(d, 2)


class MaxUnpoolUp(Upsampler):
    uses_side_info = True

    def forward(self, d, side):
        side = side.consume()
        return ops.max_unpool(d, side.argmax, side.source_shape)


class IndexedUp(Upsampler):
    uses_side_info = True

    def __init__(self, k: int = 2):
        self.k = k

    def forward(self, d, side):
        side = side.consume()
        return indexed_upsample(d, side.decoder_index, self.k)


# ---------------------------------------------------------------------------
# pairings


class SamplerId(str, enum.Enum):
    AVGPOOL_NN = "avgpool_nn"
    CONV_BILINEAR = "conv_bilinear"
    S2D_D2S = "s2d_d2s"
    CONV_DECONV = "conv_deconv"
    MAXPOOL_UNPOOL = "maxpool_unpool"
    IP_IU = "ip_iu"
    IP_BILINEAR = "ip_bilinear"

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @property
    def needs_indexnet(self) -> bool:
        return self in (SamplerId.IP_IU, SamplerId.IP_BILINEAR)


_DISPLAY = {
    SamplerId.AVGPOOL_NN: "AvgPool-NN",
    SamplerId.CONV_BILINEAR: "Conv/2-Bilinear",
    SamplerId.S2D_D2S: "S2D-D2S",
    SamplerId.CONV_DECONV: "Conv/2-Deconv/2",
    SamplerId.MAXPOOL_UNPOOL: "MaxPool-MaxUnpool",
    SamplerId.IP_IU: "IP-IU",
    SamplerId.IP_BILINEAR: "IP-Bilinear",
}

GUIDED = frozenset({SamplerId.MAXPOOL_UNPOOL, SamplerId.IP_IU})


@dataclass
class SamplerPair:
    id: SamplerId
    down: Downsampler
    up: Upsampler
    carries_side_info: bool


def build_pair(
    pair_id: SamplerId | str,
    channels: int = 1,
    rng: np.random.Generator | None = None,
    indexnet: IndexNet | None = None,
) -> SamplerPair:
    """Factor-2 down/up operators for one stage with ``channels`` feature channels."""
    pid = SamplerId(pair_id)
    rng = np.random.default_rng(0) if rng is None else rng
    if pid.needs_indexnet and indexnet is None:
        raise ConfigError(f"{pid.value} needs an index network")
    if pid is SamplerId.AVGPOOL_NN:
        down, up = AvgPoolDown(), NearestUp()
    elif pid is SamplerId.CONV_BILINEAR:
        down, up = ConvDown(channels, rng), BilinearUp()
    elif pid is SamplerId.S2D_D2S:
        down, up = SpaceToDepthDown(), DepthToSpaceUp()
    elif pid is SamplerId.CONV_DECONV:
        down, up = ConvDown(channels, rng), DeconvUp(channels, rng)
    elif pid is SamplerId.MAXPOOL_UNPOOL:
        down, up = MaxPoolDown(), MaxUnpoolUp()
    elif pid is SamplerId.IP_IU:
        down, up = IndexedPoolDown(indexnet), IndexedUp(indexnet.cfg.k)
    else:
        down, up = IndexedPoolDown(indexnet), BilinearUp()
    return SamplerPair(pid, down, up, carries_side_info=pid in GUIDED)
