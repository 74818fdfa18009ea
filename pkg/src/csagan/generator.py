"""Encoder-decoder generator built from masked residual units.

Every block re-reads the condition image at its own resolution and skip
connections tie mirrored encoder/decoder levels.  The attention module sits
in front of the last decoder block, which runs at half the output
resolution so the N x N attention stays affordable; a final upsample+conv
head produces the RGB image.  The forward pass is deterministic: there is
no noise input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .attention import Csam
from .engine import Tensor
from .nn import Conv2d, Module


@dataclass
class GeneratorConfig:
    base_channels: int = 32
    n_down: int = 4
    image_side: int = 64
    csam_enabled: bool = True
    channel_cap: int = 256

    def __post_init__(self):
        if self.n_down < 2:
            raise ValueError("n_down must be >= 2")
        if self.image_side % (1 << self.n_down):
            raise ValueError(f"image_side {self.image_side} not divisible by 2^{self.n_down}")
        if self.base_channels < 8:
            raise ValueError("base_channels must be >= 8")

    def channels(self, level: int) -> int:
        return min(self.base_channels << level, self.channel_cap)

    def pyramid_scales(self) -> list[int]:
        return [1 << l for l in range(self.n_down + 1)]


class MruBlock(Module):
    """Gated residual unit: two sigmoid gates computed from the features and
    the condition decide how much of the transformed branch passes through."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, slope: float = 0.0):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.slope = slope  # 0 -> relu, else leaky
        self.conv_m = self.add_child("conv_m", Conv2d(c_in + 1, c_in, 3, rng=rng))
        self.conv_z = self.add_child("conv_z", Conv2d(c_in + 1, c_out, 3, rng=rng))
        self.conv_n = self.add_child("conv_n", Conv2d(c_in + 1, c_out, 3, rng=rng))
        self.proj = self.add_child("proj", Conv2d(c_in, c_out, 1, rng=rng)) if c_in != c_out else None

    def __call__(self, x: Tensor, cond: Tensor, update_sn: bool = True) -> Tensor:
        if x.shape[-2:] != cond.shape[-2:]:
            raise E.EngineError(
                f"mru: condition extents {cond.shape[-2:]} do not match features {x.shape[-2:]}")
        ax = x.ndim - 3
        xc = E.concat([x, cond], axis=ax)
        m = E.sigmoid(self.conv_m(xc, update_sn))
        z = E.concat([E.mul(m, x), cond], axis=ax)
        z = self.conv_z(z, update_sn)
        z = E.relu(z) if self.slope == 0.0 else E.leaky_relu(z, self.slope)
        n = E.sigmoid(self.conv_n(xc, update_sn))
        passed = self.proj(x, update_sn) if self.proj is not None else x
        one_minus_n = E.add(E.neg(n), E.tensor(np.ones(())))
        return E.add(E.mul(one_minus_n, passed), E.mul(n, z))


class Generator(Module):
    def __init__(self, config: GeneratorConfig, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.config = config
        nd = config.n_down
        self.enc = []
        c_prev = 1
        for l in range(nd):
            blk = self.add_child(f"enc{l}", MruBlock(c_prev, config.channels(l), rng, slope=0.2))
            self.enc.append(blk)
            c_prev = config.channels(l)
        self.bottleneck = self.add_child("bottleneck", MruBlock(c_prev, config.channels(nd), rng, slope=0.2))
        # decoder blocks for levels nd-1 .. 1; level 0 is the upsample+head
        self.dec = {}
        self.up_convs = {}
        c_prev = config.channels(nd)
        for l in reversed(range(1, nd)):
            self.up_convs[l] = self.add_child(f"up{l}", Conv2d(c_prev, config.channels(l), 3, rng=rng))
            self.dec[l] = self.add_child(f"dec{l}", MruBlock(2 * config.channels(l), config.channels(l), rng))
            c_prev = config.channels(l)
        self.up_convs[0] = self.add_child("up0", Conv2d(c_prev, config.channels(0), 3, rng=rng))
        self.csam = self.add_child("csam", Csam(2 * config.channels(1), rng)) if config.csam_enabled else None
        self.head = self.add_child("head", Conv2d(2 * config.channels(0), 3, 3, rng=rng))

    def csam_parameter_names(self) -> set[str]:
        if self.csam is None:
            return set()
        return {"csam." + k for k in self.csam.named_parameters()}

    def __call__(self, pyramid: list[Tensor], update_sn: bool = True, use_csam: bool | None = None) -> Tensor:
        """pyramid: condition at scales 1, 2, ..., 2^n_down (fine to coarse)."""
        nd = self.config.n_down
        if len(pyramid) != nd + 1:
            raise E.EngineError(f"generator: expected {nd + 1} pyramid levels, got {len(pyramid)}")
        side = self.config.image_side
        for l, lvl in enumerate(pyramid):
            want = side >> l
            if lvl.shape[-2:] != (want, want):
                raise E.EngineError(f"generator: pyramid level {l} is {lvl.shape[-2:]}, expected {(want, want)}")
        if use_csam is None:
            use_csam = self.csam is not None

        x = pyramid[0]
        skips = []
        for l, blk in enumerate(self.enc):
            x = blk(x, pyramid[l], update_sn)
            skips.append(x)
            x = E.avg_pool(x, 2)
        x = self.bottleneck(x, pyramid[nd], update_sn)
        for l in reversed(range(1, nd)):
            x = _upsample_conv(self.up_convs[l], x, update_sn)
            x = E.concat([x, skips[l]], axis=x.ndim - 3)
            if l == 1 and use_csam and self.csam is not None:
                x = self.csam(x, pyramid[l])
            x = self.dec[l](x, pyramid[l], update_sn)
        x = _upsample_conv(self.up_convs[0], x, update_sn)
        x = E.concat([x, skips[0]], axis=x.ndim - 3)
        return E.tanh(self.head(x, update_sn))


def _upsample_conv(conv: Conv2d, x: Tensor, update_sn: bool) -> Tensor:
    # nearest-neighbor resize then conv, avoiding checkerboard artifacts
    return E.leaky_relu(conv(E.upsample_nearest(x, 2), update_sn), 0.2)
