"""The training objective: adversarial, L1, and feature-matching terms.

All functions accept engine Tensors and return scalar Tensors so they can
sit inside the recorded graph.  A probability floor keeps the logarithms
finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor

PROB_FLOOR = 1e-7


class LossError(ValueError):
    pass


@dataclass
class LossWeights:
    lam: float = 100.0  # L1 weight
    mu: float = 1.0     # feature-matching weight


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


def _check_probs(t: Tensor, what: str) -> None:
    if (t.data < 0).any() or (t.data > 1).any():
        raise LossError(f"{what} outside [0,1]")


def _log_mean(scores: Tensor) -> Tensor:
    return E.mean(E.log(E.clamp_floor(scores, PROB_FLOOR)))


def adversarial_loss(real_scores, fake_scores) -> Tensor:
    """Value of the minimax game, averaged over subnetworks:
    (1/N_D) sum_i [E log D_i(x,y) + E log(1 - D_i(x,G(x)))].
    The discriminator ascends this; the generator uses g_adversarial_loss."""
    real_scores = [_as_tensor(s) for s in real_scores]
    fake_scores = [_as_tensor(s) for s in fake_scores]
    if len(real_scores) != len(fake_scores) or not real_scores:
        raise LossError("score lists must be non-empty and the same length")
    one = Tensor(np.ones(()))
    terms = []
    for r, f in zip(real_scores, fake_scores):
        _check_probs(r, "real score")
        _check_probs(f, "fake score")
        terms.append(E.add(_log_mean(r), _log_mean(E.sub(one, f))))
    acc = terms[0]
    for t in terms[1:]:
        acc = E.add(acc, t)
    return E.mul(acc, Tensor(np.asarray(1.0 / len(terms))))


def g_adversarial_loss(fake_scores) -> Tensor:
    """Non-saturating generator surrogate: mean_i of -log D_i(x, G(x))."""
    fake_scores = [_as_tensor(s) for s in fake_scores]
    terms = []
    for f in fake_scores:
        _check_probs(f, "fake score")
        terms.append(E.neg(_log_mean(f)))
    acc = terms[0]
    for t in terms[1:]:
        acc = E.add(acc, t)
    return E.mul(acc, Tensor(np.asarray(1.0 / len(terms))))


def l1_loss(y: Tensor, y_hat: Tensor) -> Tensor:
    y, y_hat = _as_tensor(y), _as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise LossError(f"l1_loss: shape mismatch {y.shape} vs {y_hat.shape}")
    return E.mean(E.absolute(E.sub(y, y_hat)))


def feature_matching_loss(taps_fake, taps_real) -> Tensor:
    """Mean over subnetworks and tapped layers of the per-element L1 gap
    between discriminator activations on generated vs real images."""
    if len(taps_fake) != len(taps_real) or not taps_fake:
        raise LossError("tap structures must be non-empty and congruent")
    n_d = len(taps_fake)
    terms = []
    for fake_list, real_list in zip(taps_fake, taps_real):
        if len(fake_list) != len(real_list) or not fake_list:
            raise LossError("tap structures must be congruent per subnetwork")
        for f, r in zip(fake_list, real_list):
            f, r = _as_tensor(f), _as_tensor(r)
            if f.shape != r.shape:
                raise LossError(f"feature tap shape mismatch {f.shape} vs {r.shape}")
            terms.append(E.mean(E.absolute(E.sub(f, r))))
    n_q = len(taps_fake[0])
    acc = terms[0]
    for t in terms[1:]:
        acc = E.add(acc, t)
    return E.mul(acc, Tensor(np.asarray(1.0 / (n_d * n_q))))


def total_objective(adv: Tensor, l1: Tensor, fm: Tensor, w: LossWeights) -> Tensor:
    adv, l1, fm = _as_tensor(adv), _as_tensor(l1), _as_tensor(fm)
    for name, t in (("adv", adv), ("l1", l1), ("fm", fm)):
        if not np.isfinite(t.data).all():
            raise LossError(f"total_objective: non-finite {name} component")
    return E.add(E.add(adv, E.mul(l1, Tensor(np.asarray(w.lam)))),
                 E.mul(fm, Tensor(np.asarray(w.mu))))
