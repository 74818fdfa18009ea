"""Layer building blocks on top of the tensor engine."""
from __future__ import annotations

import numpy as np

from . import engine as E
from .engine import Tensor


class Module:
    """Composite with named children, parameters and spectral states."""

    def __init__(self):
        self._children: dict[str, "Module"] = {}
        self._params: dict[str, Tensor] = {}
        self._sn_states: dict[str, E.SpectralState] = {}

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def add_param(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for cname, child in self._children.items():
            out.update(child.named_parameters(prefix + cname + "."))
        return out

    def named_spectral_states(self, prefix: str = "") -> dict[str, E.SpectralState]:
        out = {}
        for name, s in self._sn_states.items():
            out[prefix + name] = s
        for cname, child in self._children.items():
            out.update(child.named_spectral_states(prefix + cname + "."))
        return out


class Conv2d(Module):
    """Convolution with optional spectral normalization and bias.

    Spectral norm reshapes the kernel to (C_out) x (C_in*k*k) for power
    iteration; u is warmed up 5 steps at init and advanced once per
    forward with update_sn=True.
    """

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, pad: int | None = None,
                 rng: np.random.Generator | None = None, sn: bool = True, bias: bool = True,
                 gain: float = 1.0):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        fan_in = c_in * k * k
        std = gain / np.sqrt(fan_in)
        self.weight = self.add_param("w", E.parameter(rng.standard_normal((c_out, c_in, k, k)) * std))
        self.bias = self.add_param("b", E.parameter(np.zeros((c_out, 1, 1)))) if bias else None
        self.sn = sn
        if sn:
            wmat = self.weight.data.reshape(c_out, -1)
            self._sn_states["sn_u"] = E.init_spectral_state(c_out, rng, warmup_matrix=wmat)

    def __call__(self, x: Tensor, update_sn: bool = True) -> Tensor:
        w = self.weight
        if self.sn:
            wmat = E.reshape(w, (self.c_out, -1))
            wmat_sn, _ = E.spectral_normalize(wmat, self._sn_states["sn_u"], update=update_sn)
            w = E.reshape(wmat_sn, w.shape)
        y = E.conv2d(x, w, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            y = E.add(y, self.bias)
        return y
