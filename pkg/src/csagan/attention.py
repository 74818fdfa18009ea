"""Conditional self-attention over all spatial positions.

The feature map is channel-concatenated with the resized condition image,
projected by three 1x1 convolutions (f, g, h), and an N x N row-stochastic
attention map mixes the h-projection.  The mixed response is scaled by a
trainable gamma (starting at exactly 0, so the module begins as the
identity) and added back to the input features.
"""
from __future__ import annotations

import numpy as np

from . import engine as E
from .engine import Tensor
from .nn import Conv2d, Module


class Csam(Module):
    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.c_hat = max(1, channels // 8)
        c_in = channels + 1
        # 1x1 projections; no bias so attention depends only on content
        self.f = self.add_child("f", Conv2d(c_in, self.c_hat, 1, rng=rng, sn=False, bias=False))
        self.g = self.add_child("g", Conv2d(c_in, self.c_hat, 1, rng=rng, sn=False, bias=False))
        self.h = self.add_child("h", Conv2d(c_in, channels, 1, rng=rng, sn=False, bias=False))
        self.gamma = self.add_param("gamma", E.parameter(np.zeros(())))

    def _check(self, a: Tensor, x_cond: Tensor) -> None:
        if a.shape[-2:] != x_cond.shape[-2:]:
            raise E.EngineError(
                f"csam: condition extents {x_cond.shape[-2:]} do not match features {a.shape[-2:]}")
        if x_cond.shape[-3] != 1:
            raise E.EngineError("csam: condition must have a single channel")

    def attention(self, a: Tensor, x_cond: Tensor) -> Tensor:
        """The N x N map; entry [j, i] weights position i for output j."""
        self._check(a, x_cond)
        cat = E.concat([a, x_cond], axis=a.ndim - 3)
        h, w = a.shape[-2], a.shape[-1]
        n = h * w
        lead = a.shape[:-3]
        f = E.reshape(self.f(cat), lead + (self.c_hat, n))
        g = E.reshape(self.g(cat), lead + (self.c_hat, n))
        scores = E.matmul(E.transpose_last(f), g)      # [i, j] = f_i . g_j
        return E.softmax_rows(E.transpose_last(scores))

    def __call__(self, a: Tensor, x_cond: Tensor) -> Tensor:
        self._check(a, x_cond)
        b = self.attention(a, x_cond)
        cat = E.concat([a, x_cond], axis=a.ndim - 3)
        hgt, wid = a.shape[-2], a.shape[-1]
        n = hgt * wid
        lead = a.shape[:-3]
        hproj = E.reshape(self.h(cat), lead + (self.channels, n))
        r = E.matmul(hproj, E.transpose_last(b))       # r_j = sum_i b[j,i] h_i
        r = E.reshape(r, lead + (self.channels, hgt, wid))
        return E.add(a, E.mul(r, self.gamma))
