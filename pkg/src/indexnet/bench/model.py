"""The encoder-decoder reconstruction network.

Layer sequence ``C(32)-D-C(64)-D-C(128)-D-C(256)-C(128)-U-C(64)-U-C(32)-U-C(1)``,
where ``C(n)`` is a 3x3 convolution with BN and ReLU (the last one is a bare
convolution) and each ``D``/``U`` pair comes from :func:`~indexnet.samplers.build_pair`.
Downsampling stage ``i`` hands its side information to upsampling stage ``4 - i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError
from ..guided import StageSideInfo
from ..index_networks import IndexNetConfig, StageRegistry
from ..nn import Conv2d, ConvBNReLU, Module
from ..samplers import SamplerId, SamplerPair, build_pair
from ..tensor import Tensor

ENCODER_WIDTHS = (32, 64, 128)
BOTTLENECK_WIDTH = 256
DECODER_WIDTHS = (128, 64, 32)


@dataclass(frozen=True)
class ReconNetSpec:
    pair: SamplerId
    indexnet: IndexNetConfig | None = None
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pair", SamplerId(self.pair))
        if self.pair.needs_indexnet and self.indexnet is None:
            raise ConfigError(f"{self.pair.value} requires an IndexNet configuration")
        if not self.pair.needs_indexnet and self.indexnet is not None:
            raise ConfigError(f"{self.pair.value} does not use an IndexNet")

    @property
    def label(self) -> str:
        return "-" if self.indexnet is None else self.indexnet.label


class ReconNet(Module):
    def __init__(self, spec: ReconNetSpec, rng: np.random.Generator):
        self.spec = spec
        self.registry = None
        if spec.indexnet is not None:
            self.registry = StageRegistry(spec.indexnet, list(ENCODER_WIDTHS), rng)
            self.indexnets = self.registry.unique()

        self.pairs: list[SamplerPair] = []
        self.encoder: list[ConvBNReLU] = []
        c = spec.in_channels
        for i, width in enumerate(ENCODER_WIDTHS):
            self.encoder.append(ConvBNReLU(c, width, rng))
            net = self.registry[i] if self.registry is not None else None
            self.pairs.append(build_pair(spec.pair, width, rng, indexnet=net))
            c = self.pairs[-1].down.out_channels(width)
        self.bottleneck = [ConvBNReLU(c, BOTTLENECK_WIDTH, rng), ConvBNReLU(BOTTLENECK_WIDTH, DECODER_WIDTHS[0], rng)]

        self.decoder: list[Module] = []
        c = DECODER_WIDTHS[0]
        for stage, width in zip((2, 1, 0), DECODER_WIDTHS[1:] + (None,)):
            c = self.pairs[stage].up.out_channels(c)
            if width is None:
                self.head = Conv2d(c, 1, 3, rng, padding=1, bias=True)
            else:
                self.decoder.append(ConvBNReLU(c, width, rng))
                c = width
        self.downs = [p.down for p in self.pairs]
        self.ups = [p.up for p in self.pairs]
        self.last_side_info: list[StageSideInfo] = []

    def forward(
        self, x: Tensor, side_transform: Callable[[int, StageSideInfo], StageSideInfo] | None = None
    ) -> Tensor:
        """``side_transform(stage, side)`` may replace a stage's side information before upsampling."""
        sides = []
        h = x
        for conv, down in zip(self.encoder, self.downs):
            h, side = down(conv(h))
            sides.append(side)
        self.last_side_info = sides
        for conv in self.bottleneck:
            h = conv(h)
        for j, stage in enumerate((2, 1, 0)):
            side = sides[stage]
            if side_transform is not None:
                side = side_transform(stage, side)
            h = self.ups[stage](h, side)
            h = self.decoder[j](h) if j < len(self.decoder) else self.head(h)
        return h

    def trunk_parameters(self) -> list[tuple[str, int]]:
        """(name, size) of parameters outside the down/up operators and index networks."""
        sampler = {id(p) for m in self.downs + self.ups for p in m.parameters()}
        return [(n, p.data.size) for n, p in self.named_parameters() if id(p) not in sampler]


def build_recon_net(spec: ReconNetSpec, rng: np.random.Generator | int = 0) -> ReconNet:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return ReconNet(spec, rng)
