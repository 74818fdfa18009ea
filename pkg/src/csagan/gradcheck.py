"""Central finite-difference verification of every differentiable piece:
engine ops, the attention module, one gated residual block, one
discriminator branch, and each loss term.  Run at 64-bit only."""
from __future__ import annotations

import numpy as np

from . import engine as E
from .attention import Csam
from .discriminator import DiscriminatorConfig, MultiScaleDiscriminator
from .engine import Tensor
from .generator import MruBlock
from .losses import (LossWeights, adversarial_loss, feature_matching_loss,
                     l1_loss, total_objective)

FD_STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-3, np.abs(analytic) + np.abs(numeric))
    return float((np.abs(analytic - numeric) / denom).max())


def check_gradients(build, leaves: dict[str, Tensor], eps: float = FD_STEP,
                    max_coords: int = 24, seed: int = 1234) -> float:
    """build() -> scalar Tensor from the given leaves; returns the max
    relative error between reverse-mode and central-difference gradients.

    For leaves with more than max_coords entries a random coordinate subset
    is perturbed; small leaves are checked exhaustively."""
    if E.get_precision() != "f64":
        raise RuntimeError("gradient checks require f64 precision")
    loss = build()
    E.backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in leaves.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in leaves.items():
        t.data = np.asarray(t.data)  # 0-d arithmetic can demote to numpy scalars
        flat = t.data.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        if flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        else:
            coords = np.arange(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = build().item()
            flat[i] = orig - eps
            down = build().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            worst = max(worst, relative_error(np.asarray(an_flat[i]), np.asarray(fd)))
    return worst


# ---------------------------------------------------------------------------
# individual checks; each returns max relative error

def _rng(seed):
    return np.random.default_rng(seed)


def check_conv2d(seed=0):
    rng = _rng(seed)
    x = Tensor(rng.standard_normal((2, 6, 6)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    return check_gradients(lambda: E.mean(E.mul(E.conv2d(x, w, stride=1, pad=1),
                                                Tensor(rng2_weights((3, 6, 6), seed)))),
                           {"x": x, "w": w})


def rng2_weights(shape, seed):
    return _rng(seed + 1000).standard_normal(shape)


def check_elementwise(seed=0):
    rng = _rng(seed)
    x = Tensor(rng.standard_normal((4, 5)) * 0.7)
    y = Tensor(rng.standard_normal((4, 5)) * 0.7 + 2.5)

    def build():
        a = E.leaky_relu(x, 0.2)
        b = E.sigmoid(E.mul(x, y))
        c = E.tanh(E.add(a, b))
        d = E.log(E.clamp_floor(y, 1e-3))
        return E.mean(E.add(E.absolute(c), E.mul(d, b)))

    return check_gradients(build, {"x": x, "y": y})


def check_softmax(seed=0):
    rng = _rng(seed)
    x = Tensor(rng.standard_normal((5, 5)))
    w = rng2_weights((5, 5), seed)
    return check_gradients(lambda: E.mean(E.mul(E.softmax_rows(x), Tensor(w))), {"x": x})


def check_matmul_concat(seed=0):
    rng = _rng(seed)
    a = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((4, 5)))
    c = Tensor(rng.standard_normal((3, 5)))

    def build():
        m = E.matmul(a, b)
        cat = E.concat([m, c], axis=1)
        return E.mean(E.absolute(cat))

    return check_gradients(build, {"a": a, "b": b, "c": c})


def check_resize_ops(seed=0):
    rng = _rng(seed)
    x = Tensor(rng.standard_normal((2, 4, 4)))
    w = rng2_weights((2, 8, 8), seed)

    def build():
        up = E.upsample_nearest(x, 2)
        down = E.avg_pool(up, 2)
        return E.add(E.mean(E.mul(up, Tensor(w))), E.mean(E.mul(down, x)))

    return check_gradients(build, {"x": x})


def check_spectral(seed=0):
    rng = _rng(seed)
    w = Tensor(rng.standard_normal((4, 6)))
    state = E.init_spectral_state(4, rng, warmup_matrix=w.data, warmup_iterations=30)
    probe = rng2_weights((4, 6), seed)

    def build():
        w_sn, _ = E.spectral_normalize(w, state, update=False)
        return E.mean(E.mul(w_sn, Tensor(probe)))

    return check_gradients(build, {"w": w})


def check_random_graph(seed=0):
    """A wired graph mixing ten op kinds, including a twice-consumed tensor."""
    rng = _rng(seed)
    x = Tensor(rng.standard_normal((3, 4)) * 0.5)
    y = Tensor(rng.standard_normal((4, 4)) * 0.5)

    def build():
        a = E.matmul(x, y)                 # 1 matmul
        b = E.tanh(a)                      # 2 tanh
        c = E.add(b, E.neg(a))             # 3,4 add/neg, a consumed twice
        d = E.sigmoid(c)                   # 5
        e = E.concat([d, b], axis=0)       # 6
        f = E.leaky_relu(e, 0.2)           # 7
        g = E.softmax_rows(f)              # 8
        h = E.absolute(E.sub(g, E.mul(f, f)))  # 9 abs/sub/mul
        return E.mean(h)                   # 10 mean

    return check_gradients(build, {"x": x, "y": y})


def check_csam(seed=0):
    rng = _rng(seed)
    csam = Csam(4, rng=rng)
    csam.gamma.data = np.asarray(0.3)
    for p in csam.named_parameters().values():
        p.data = p.data + 0.05 * _rng(seed + 2).standard_normal(p.data.shape)
    a = Tensor(rng.standard_normal((4, 6, 6)))
    x = Tensor(rng.standard_normal((1, 6, 6)))
    leaves = {"a": a, **csam.named_parameters()}
    probe = rng2_weights((4, 6, 6), seed)
    return check_gradients(lambda: E.mean(E.mul(csam(a, x), Tensor(probe))), leaves)


def check_mru(seed=0):
    rng = _rng(seed)
    blk = MruBlock(3, 4, rng)
    x = Tensor(rng.standard_normal((3, 4, 4)))
    cond = Tensor(rng.standard_normal((1, 4, 4)))
    leaves = {"x": x, **blk.named_parameters()}
    probe = rng2_weights((4, 4, 4), seed)
    return check_gradients(lambda: E.mean(E.mul(blk(x, cond, update_sn=False), Tensor(probe))),
                           leaves)


def check_discriminator_branch(seed=0):
    rng = _rng(seed)
    cfg = DiscriminatorConfig(n_d=1, shared_depth=2, depths=(4,), kernel=4, stride=2, image_side=16)
    disc = MultiScaleDiscriminator(cfg, rng=rng)
    x = Tensor(rng.standard_normal((1, 16, 16)) * 0.3)
    y = Tensor(rng.standard_normal((3, 16, 16)) * 0.3)
    leaves = {"y": y, **{k: p for k, p in disc.named_parameters().items() if k.endswith(".w")}}

    def build():
        out = disc(x, y, update_sn=False)
        return E.log(E.clamp_floor(out.scores[0], 1e-7))

    return check_gradients(build, leaves)


def check_adversarial_loss(seed=0):
    rng = _rng(seed)
    r = Tensor(rng.uniform(0.2, 0.8, size=(3,)))
    f = Tensor(rng.uniform(0.2, 0.8, size=(3,)))
    return check_gradients(lambda: adversarial_loss([r], [f]), {"r": r, "f": f})


def check_l1_loss(seed=0):
    rng = _rng(seed)
    y = Tensor(rng.standard_normal((3, 5)))
    yh = Tensor(rng.standard_normal((3, 5)))
    return check_gradients(lambda: l1_loss(y, yh), {"y": y, "yh": yh})


def check_fm_loss(seed=0):
    rng = _rng(seed)
    taps_f = [[Tensor(rng.standard_normal((2, 3, 3))) for _ in range(3)] for _ in range(2)]
    taps_r = [[Tensor(rng.standard_normal((2, 3, 3))) for _ in range(3)] for _ in range(2)]
    leaves = {f"f{i}{q}": taps_f[i][q] for i in range(2) for q in range(3)}
    return check_gradients(lambda: feature_matching_loss(taps_f, taps_r), leaves)


def check_total_objective(seed=0):
    rng = _rng(seed)
    adv = Tensor(rng.standard_normal(()))
    l1 = Tensor(np.abs(rng.standard_normal(())))
    fm = Tensor(np.abs(rng.standard_normal(())))
    return check_gradients(lambda: total_objective(adv, l1, fm, LossWeights()),
                           {"adv": adv, "l1": l1, "fm": fm})


ALL_CHECKS = [
    ("conv2d", check_conv2d),
    ("elementwise", check_elementwise),
    ("softmax_rows", check_softmax),
    ("matmul_concat", check_matmul_concat),
    ("resize_ops", check_resize_ops),
    ("spectral_normalize", check_spectral),
    ("random_graph", check_random_graph),
    ("csam", check_csam),
    ("mru", check_mru),
    ("discriminator_branch", check_discriminator_branch),
    ("adversarial_loss", check_adversarial_loss),
    ("l1_loss", check_l1_loss),
    ("feature_matching_loss", check_fm_loss),
    ("total_objective", check_total_objective),
]


def run_all(seed: int = 0) -> list[tuple[str, float, bool]]:
    old = E.get_precision()
    E.set_precision("f64")
    try:
        results = []
        for name, fn in ALL_CHECKS:
            err = fn(seed)
            results.append((name, err, err < TOLERANCE))
        return results
    finally:
        E.set_precision(old)
