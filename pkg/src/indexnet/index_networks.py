"""Learnable index networks.

An index network maps an encoder feature map ``(N, C, H, W)`` to raw index
logits of shape ``(N, 1, H, W)`` (holistic) or ``(N, C, H, W)`` (depthwise);
:func:`normalize` turns logits into the encoder map used for pooling and the
decoder map used for upsampling.

Depthwise networks have k*k columns, one per position inside a k x k window.
The columns are fused into single convolutions whose output channel
``c * k*k + j`` holds column ``j`` for feature channel ``c``, which is exactly
the layout :func:`~indexnet.ops.depth_to_space` interleaves back to full
resolution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .errors import ConfigError, DimensionError
from .nn import BatchNorm2d, Conv2d, Module
from .tensor import Tensor


class Family(str, enum.Enum):
    HIN = "hin"
    O2O_MODELWISE = "o2o_modelwise"
    O2O_SHARED = "o2o_shared_stagewise"
    O2O_UNSHARED = "o2o_unshared_stagewise"
    M2O = "m2o"

    @property
    def is_depthwise(self) -> bool:
        return self is not Family.HIN


class Normalization(str, enum.Enum):
    """Encoder/decoder normalisation pairs; the value names encoder then decoder."""

    SIG_SIG = "sig_sig"
    SOFT_SOFT = "soft_soft"
    SOFTSIG_SOFT = "softsig_soft"
    SIGSOFT_SIG = "sigsoft_sig"


VARIANTS = ("linear", "nl", "nl_c")

_FAMILY_ALIASES = {
    "hin": Family.HIN,
    "o2o_modelwise": Family.O2O_MODELWISE,
    "modelwise": Family.O2O_MODELWISE,
    "o2o_shared_stagewise": Family.O2O_SHARED,
    "o2o_shared": Family.O2O_SHARED,
    "shared": Family.O2O_SHARED,
    "o2o_unshared_stagewise": Family.O2O_UNSHARED,
    "o2o_unshared": Family.O2O_UNSHARED,
    "unshared": Family.O2O_UNSHARED,
    "m2o": Family.M2O,
}


def parse_family(name: str) -> Family:
    try:
        return _FAMILY_ALIASES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown IndexNet family {name!r}; expected one of {sorted(_FAMILY_ALIASES)}") from None


@dataclass(frozen=True)
class IndexNetConfig:
    family: Family
    nonlinear: bool = False
    context: bool = False
    k: int = 2
    channels: int = 32
    normalization: Normalization = Normalization.SIGSOFT_SIG

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"region size k must be positive, got {self.k}")
        if self.context and self.k % 2:
            raise ConfigError("weak context needs an even k so that padding k/2 keeps the grid aligned")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")

    @classmethod
    def from_variant(cls, family: str | Family, variant: str, **kw) -> IndexNetConfig:
        fam = family if isinstance(family, Family) else parse_family(family)
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        return cls(fam, nonlinear=variant != "linear", context=variant == "nl_c", **kw)

    @classmethod
    def parse(cls, label: str, **kw) -> IndexNetConfig:
        """Parse labels such as ``m2o_nl_c`` or ``hin_linear``."""
        for variant in ("nl_c", "nl", "linear"):
            suffix = "_" + variant
            if label.endswith(suffix):
                return cls.from_variant(label[: -len(suffix)], variant, **kw)
        raise ConfigError(f"cannot parse IndexNet label {label!r}; expected <family>_<linear|nl|nl_c>")

    @property
    def variant(self) -> str:
        if not self.nonlinear:
            return "linear_c" if self.context else "linear"
        return "nl_c" if self.context else "nl"

    @property
    def label(self) -> str:
        return f"{self.family.value}_{self.variant}"

    @property
    def first_kernel(self) -> int:
        return 2 * self.k if self.context else self.k

    @property
    def first_padding(self) -> int:
        return self.k // 2 if self.context else 0

    def with_channels(self, channels: int) -> IndexNetConfig:
        return replace(self, channels=channels)


@dataclass
class IndexMaps:
    encoder_index: Tensor
    decoder_index: Tensor


class IndexNet(Module):
    """Base class; subclasses implement :meth:`logits`."""

    channel_agnostic = False

    def __init__(self, cfg: IndexNetConfig):
        self.cfg = cfg

    def _check_input(self, x: Tensor) -> None:
        k = self.cfg.k
        if not self.channel_agnostic and x.shape[1] != self.cfg.channels:
            raise DimensionError(
                f"{self.cfg.label}: input has {x.shape[1]} channels (axis 1), network built for {self.cfg.channels}"
            )
        for axis in (2, 3):
            if x.shape[axis] % k:
                raise DimensionError(
                    f"{self.cfg.label}: spatial axis {axis} has size {x.shape[axis]}, not divisible by k={k}"
                )

    def logits(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor) -> IndexMaps:
        return normalize(self.logits(x), self.cfg)


class HIN(IndexNet):
    """One index channel shared by all feature channels."""

    def __init__(self, cfg: IndexNetConfig, rng: np.random.Generator):
        super().__init__(cfg)
        c, kk = cfg.channels, cfg.k * cfg.k
        kernel, pad = cfg.first_kernel, cfg.first_padding
        if cfg.nonlinear:
            self.conv1 = Conv2d(c, 2 * c, kernel, rng, stride=cfg.k, padding=pad, bias=False)
            self.bn = BatchNorm2d(2 * c)
            self.conv2 = Conv2d(2 * c, kk, 1, rng, bias=False)
        else:
            self.conv1 = Conv2d(c, kk, kernel, rng, stride=cfg.k, padding=pad, bias=False)

    def logits(self, x: Tensor) -> Tensor:
        self._check_input(x)
        y = self.conv1(x)
        if self.cfg.nonlinear:
            y = self.conv2(ops.relu(self.bn(y)))
        return ops.depth_to_space(y, self.cfg.k)


class O2OSharedDIN(IndexNet):
    """Depthwise index network whose local index function is shared by all channels.

    Channels are folded into the batch axis so one ``k x k x 1`` kernel per
    column sees every feature slice. Serves both the modelwise and the shared
    stagewise families; they differ only in how many instances a model holds.
    """

    channel_agnostic = True

    def __init__(self, cfg: IndexNetConfig, rng: np.random.Generator):
        super().__init__(cfg)
        kk = cfg.k * cfg.k
        kernel, pad = cfg.first_kernel, cfg.first_padding
        if cfg.nonlinear:
            self.conv1 = Conv2d(1, 2 * kk, kernel, rng, stride=cfg.k, padding=pad, bias=False)
            self.bn = BatchNorm2d(2 * kk)
            self.conv2 = Conv2d(2 * kk, kk, 1, rng, groups=kk, bias=False)
        else:
            self.conv1 = Conv2d(1, kk, kernel, rng, stride=cfg.k, padding=pad, bias=False)

    def logits(self, x: Tensor) -> Tensor:
        self._check_input(x)
        n, c, h, w = x.shape
        k = self.cfg.k
        y = self.conv1(ops.reshape(x, (n * c, 1, h, w)))
        if self.cfg.nonlinear:
            y = self.conv2(ops.relu(self.bn(y)))
        y = ops.reshape(y, (n, c * k * k, h // k, w // k))
        return ops.depth_to_space(y, k)


class O2OUnsharedDIN(IndexNet):
    """Depthwise index network with a private local index function per channel (grouped convs)."""

    def __init__(self, cfg: IndexNetConfig, rng: np.random.Generator):
        super().__init__(cfg)
        c, kk = cfg.channels, cfg.k * cfg.k
        kernel, pad = cfg.first_kernel, cfg.first_padding
        if cfg.nonlinear:
            self.conv1 = Conv2d(c, 2 * kk * c, kernel, rng, stride=cfg.k, padding=pad, groups=c, bias=False)
            self.bn = BatchNorm2d(2 * kk * c)
            self.conv2 = Conv2d(2 * kk * c, kk * c, 1, rng, groups=kk * c, bias=False)
        else:
            self.conv1 = Conv2d(c, kk * c, kernel, rng, stride=cfg.k, padding=pad, groups=c, bias=False)

    def logits(self, x: Tensor) -> Tensor:
        self._check_input(x)
        y = self.conv1(x)
        if self.cfg.nonlinear:
            y = self.conv2(ops.relu(self.bn(y)))
        return ops.depth_to_space(y, self.cfg.k)


class M2ODIN(IndexNet):
    """Depthwise index network where every index channel sees all feature channels."""

    def __init__(self, cfg: IndexNetConfig, rng: np.random.Generator):
        super().__init__(cfg)
        c, kk = cfg.channels, cfg.k * cfg.k
        kernel, pad = cfg.first_kernel, cfg.first_padding
        if cfg.nonlinear:
            # hidden channel j*2C + h belongs to column j
            self.conv1 = Conv2d(c, 2 * c * kk, kernel, rng, stride=cfg.k, padding=pad, bias=False)
            self.bn = BatchNorm2d(2 * c * kk)
            self.conv2 = Conv2d(2 * c * kk, c * kk, 1, rng, groups=kk, bias=False)
            # conv2 emits column-major j*C + c; reorder to c*kk + j
            self._order = (np.arange(kk)[None, :] * c + np.arange(c)[:, None]).reshape(-1)
        else:
            self.conv1 = Conv2d(c, c * kk, kernel, rng, stride=cfg.k, padding=pad, bias=False)

    def logits(self, x: Tensor) -> Tensor:
        self._check_input(x)
        y = self.conv1(x)
        if self.cfg.nonlinear:
            y = ops.take_channels(self.conv2(ops.relu(self.bn(y))), self._order)
        return ops.depth_to_space(y, self.cfg.k)


_CLASSES = {
    Family.HIN: HIN,
    Family.O2O_MODELWISE: O2OSharedDIN,
    Family.O2O_SHARED: O2OSharedDIN,
    Family.O2O_UNSHARED: O2OUnsharedDIN,
    Family.M2O: M2ODIN,
}


def build_indexnet(cfg: IndexNetConfig, rng: np.random.Generator) -> IndexNet:
    return _CLASSES[cfg.family](cfg, rng)


def hin_forward(net: HIN, x: Tensor) -> Tensor:
    if net.cfg.family is not Family.HIN:
        raise ConfigError(f"hin_forward needs a HIN, got {net.cfg.family.value}")
    return net.logits(x)


def din_forward(net: IndexNet, x: Tensor) -> Tensor:
    if not net.cfg.family.is_depthwise:
        raise ConfigError("din_forward needs a depthwise index network")
    return net.logits(x)


def normalize(logits: Tensor, cfg: IndexNetConfig) -> IndexMaps:
    k = cfg.k
    mode = cfg.normalization
    for axis in (2, 3):
        if logits.shape[axis] % k:
            raise DimensionError(f"normalize: spatial axis {axis} = {logits.shape[axis]} not divisible by k={k}")
    if mode is Normalization.SIGSOFT_SIG:
        dec = ops.sigmoid(logits)
        return IndexMaps(ops.region_softmax(dec, k), dec)
    if mode is Normalization.SIG_SIG:
        dec = ops.sigmoid(logits)
        return IndexMaps(dec, dec)
    if mode is Normalization.SOFT_SOFT:
        soft = ops.region_softmax(logits, k)
        return IndexMaps(soft, soft)
    if mode is Normalization.SOFTSIG_SOFT:
        soft = ops.region_softmax(logits, k)
        return IndexMaps(ops.sigmoid(soft), soft)
    raise ConfigError(f"unknown normalization {mode!r}")


# ---------------------------------------------------------------------------
# model complexity


def param_count(cfg: IndexNetConfig) -> int:
    """Trainable parameters of one index network, BN layers excluded."""
    net = build_indexnet(cfg, np.random.default_rng(0))
    return net.num_parameters(include_bn=False)


def table1_count(cfg: IndexNetConfig) -> tuple[int, str]:
    """Closed-form count and formula as tabulated for each family/variant.

    For the nonlinear unshared stagewise family the tabulated formula
    ``(K*K*2C + 2C*C)*4`` assumes a dense second layer; compare with
    :func:`grouped_unshared_count`.
    """
    k, c, fam = cfg.k, cfg.channels, cfg.family
    kernel = "2K*2K" if cfg.context else "K*K"
    kk = cfg.first_kernel**2  # K*K, or 2K*2K with weak context
    cols = cfg.k * cfg.k
    if fam is Family.HIN:
        if not cfg.nonlinear:
            return kk * c * cols, f"{kernel}*C*4"
        return kk * c * 2 * c + 2 * c * cols, f"{kernel}*C*2C+2C*4"
    if fam in (Family.O2O_MODELWISE, Family.O2O_SHARED):
        if not cfg.nonlinear:
            return kk * cols, f"({kernel})*4"
        return (kk * 2 + 2) * cols, f"({kernel}*2+2)*4"
    if fam is Family.O2O_UNSHARED:
        if not cfg.nonlinear:
            return kk * c * cols, f"({kernel}*C)*4"
        return (kk * 2 * c + 2 * c * c) * cols, f"({kernel}*2C+2C*C)*4"
    if not cfg.nonlinear:
        return kk * c * c * cols, f"({kernel}*C*C)*4"
    return (kk * c * 2 * c + 2 * c * c) * cols, f"({kernel}*C*2C+2C*C)*4"


def grouped_unshared_count(cfg: IndexNetConfig) -> tuple[int, str]:
    """Count for the nonlinear unshared stagewise network as built here (grouped 2->1 pointwise layer)."""
    kernel = "2K*2K" if cfg.context else "K*K"
    kk = cfg.first_kernel**2
    c, cols = cfg.channels, cfg.k * cfg.k
    return (kk * 2 * c + 2 * c) * cols, f"({kernel}*2C+2C)*4"


def documented_count(cfg: IndexNetConfig) -> tuple[int, str]:
    """The closed-form count this package's networks are expected to match."""
    if cfg.family is Family.O2O_UNSHARED and cfg.nonlinear:
        return grouped_unshared_count(cfg)
    return table1_count(cfg)


# ---------------------------------------------------------------------------
# stage sharing


class StageRegistry:
    """Index networks attached to each downsampling stage of a model."""

    def __init__(self, cfg: IndexNetConfig, stage_channels: list[int], rng: np.random.Generator):
        self.cfg = cfg
        self.stages: list[tuple[str, IndexNet]] = []
        if cfg.family is Family.O2O_MODELWISE:
            shared = build_indexnet(cfg, rng)
            for i, _ in enumerate(stage_channels):
                self.stages.append((f"stage{i + 1}", shared))
        else:
            for i, c in enumerate(stage_channels):
                self.stages.append((f"stage{i + 1}", build_indexnet(cfg.with_channels(c), rng)))

    def __getitem__(self, i: int) -> IndexNet:
        return self.stages[i][1]

    def __len__(self) -> int:
        return len(self.stages)

    def unique(self) -> list[IndexNet]:
        out, seen = [], set()
        for _, net in self.stages:
            if id(net) not in seen:
                seen.add(id(net))
                out.append(net)
        return out
