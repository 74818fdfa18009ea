"""Multi-scale discriminator: subnetworks of increasing depth that share
their shallow trunk.  Depth controls receptive field; the deepest branch
must cover the whole image, which is asserted at construction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .engine import Tensor
from .nn import Conv2d, Module

N_TAPS = 3


def receptive_field(depths, kernel: int, stride: int) -> list[int]:
    """RF of the last conv layer per subnetwork, by the standard recurrence
    RF_l = RF_{l-1} + (kernel - 1) * prod of earlier strides."""
    if kernel < 1 or stride < 1:
        raise ValueError("kernel and stride must be >= 1")
    out = []
    for depth in depths:
        rf, jump = 1, 1
        for _ in range(depth):
            rf += (kernel - 1) * jump
            jump *= stride
        out.append(rf)
    return out


@dataclass
class DiscriminatorConfig:
    n_d: int = 3
    shared_depth: int = 2
    depths: tuple[int, ...] = (3, 4, 5)
    kernel: int = 4
    stride: int = 2
    image_side: int = 64
    base_width: int = 32
    width_cap: int = 256

    def __post_init__(self):
        self.depths = tuple(self.depths)
        if self.n_d < 1 or len(self.depths) != self.n_d:
            raise ValueError(f"need n_d >= 1 matching depths, got n_d={self.n_d}, depths={self.depths}")
        if list(self.depths) != sorted(set(self.depths)):
            raise ValueError("depths must be strictly increasing")
        if self.shared_depth >= min(self.depths):
            raise ValueError("shared_depth must be smaller than every subnetwork depth")
        if min(self.depths) < N_TAPS:
            raise ValueError(f"every subnetwork needs >= {N_TAPS} conv layers for feature taps")
        rf = receptive_field(self.depths, self.kernel, self.stride)[-1]
        if rf < self.image_side:
            raise ValueError(
                f"deepest receptive field {rf} does not cover image side {self.image_side}")
        if self.image_side % (self.stride ** max(self.depths)):
            raise ValueError("image side must be divisible by stride^max_depth")


@dataclass
class DiscriminatorOutput:
    scores: list  # one scalar Tensor per subnetwork, in (0,1)
    score_maps: list  # one [.., 1, h, w] Tensor per subnetwork
    taps: list  # per subnetwork, the last N_TAPS conv activations


class MultiScaleDiscriminator(Module):
    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.config = config
        c = config
        in_ch = 4  # condition + RGB

        def width(layer):
            return min(c.base_width << layer, c.width_cap)

        self.trunk = []
        ch = in_ch
        for l in range(c.shared_depth):
            conv = self.add_child(f"trunk{l}", Conv2d(ch, width(l), c.kernel, stride=c.stride,
                                                      pad=(c.kernel - 1) // 2, rng=rng))
            self.trunk.append(conv)
            ch = width(l)
        self.branches = []
        self.heads = []
        for i, depth in enumerate(c.depths):
            layers = []
            bch = ch
            for l in range(c.shared_depth, depth):
                conv = self.add_child(f"branch{i}_{l}", Conv2d(bch, width(l), c.kernel, stride=c.stride,
                                                               pad=(c.kernel - 1) // 2, rng=rng))
                layers.append(conv)
                bch = width(l)
            self.branches.append(layers)
            self.heads.append(self.add_child(f"head{i}", Conv2d(bch, 1, 1, rng=rng)))

    def __call__(self, x_cond: Tensor, y: Tensor, update_sn: bool = True) -> DiscriminatorOutput:
        if x_cond.shape[-2:] != y.shape[-2:]:
            raise E.EngineError(
                f"discriminator: condition extents {x_cond.shape[-2:]} do not match image {y.shape[-2:]}")
        s = self.config.image_side
        if y.shape[-2:] != (s, s):
            raise E.EngineError(f"discriminator: expected {s}x{s} input, got {y.shape[-2:]}")
        h = E.concat([x_cond, y], axis=y.ndim - 3)
        shared_acts = []
        for conv in self.trunk:
            h = E.leaky_relu(conv(h, update_sn), 0.2)
            shared_acts.append(h)
        scores, score_maps, taps = [], [], []
        for layers, head in zip(self.branches, self.heads):
            acts = list(shared_acts)
            b = h
            for conv in layers:
                b = E.leaky_relu(conv(b, update_sn), 0.2)
                acts.append(b)
            smap = E.sigmoid(head(b, update_sn))
            per_sample = E.mean_last_axes(smap, 3) if smap.ndim == 4 else E.mean(smap)
            scores.append(per_sample)
            score_maps.append(smap)
            taps.append(acts[-N_TAPS:])
        return DiscriminatorOutput(scores=scores, score_maps=score_maps, taps=taps)
