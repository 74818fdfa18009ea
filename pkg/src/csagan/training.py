"""Three-stage adversarial training with two-timescale Adam updates.

Stage 1 trains generator and discriminator without the attention module,
stage 2 trains only the attention parameters with everything else frozen,
stage 3 fine-tunes the whole model at reduced rates.  Learning rates halve
their stage at the configured fraction and multiply by the decay factor.
"""
from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import engine as E
from . import linemap
from .discriminator import MultiScaleDiscriminator
from .engine import Tensor
from .generator import Generator
from .losses import (LossWeights, adversarial_loss, feature_matching_loss,
                     g_adversarial_loss, l1_loss, total_objective)

TRACE_FIELDS = ["step", "stage", "loss_D", "loss_G_adv", "loss_L1", "loss_FM", "lr_G", "lr_D"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class StagePlan:
    stage: int
    epochs: int
    lr_g: float
    lr_d: float
    decay_at: float = 0.5
    decay_factor: float = 0.1

    def lr_at(self, epoch: int) -> tuple[float, float]:
        """Learning rates for a 0-based epoch index within the stage."""
        half = math.ceil(self.epochs * self.decay_at)
        f = self.decay_factor if epoch >= half else 1.0
        return self.lr_g * f, self.lr_d * f


def default_stage_plans(epochs=(100, 100, 50), lr_g=1e-4, lr_d=4e-4,
                        decay_at=0.5, decay_factor=0.1) -> list[StagePlan]:
    return [
        StagePlan(1, epochs[0], lr_g, lr_d, decay_at, decay_factor),
        StagePlan(2, epochs[1], lr_g, lr_d, decay_at, decay_factor),
        StagePlan(3, epochs[2], lr_g * 0.1, lr_d * 0.1, decay_at, decay_factor),
    ]


def pairs_to_batch(pairs, scales) -> tuple[list[Tensor], Tensor]:
    """pairs: (distance field [H,W], photo [3,H,W]) -> pyramid tensors and
    target batch."""
    levels = {s: [] for s in scales}
    photos = []
    for field, photo in pairs:
        for s, lvl in linemap.build_condition_pyramid(field, scales):
            levels[s].append(lvl[None])
        photos.append(photo)
    pyramid = [Tensor(np.stack(levels[s])) for s in sorted(scales)]
    return pyramid, Tensor(np.stack(photos))


def params_hash(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].data.tobytes())
    return h.hexdigest()


class Trainer:
    def __init__(self, gen: Generator, disc: MultiScaleDiscriminator,
                 weights: LossWeights | None = None, seed: int = 0,
                 batch_size: int = 8, run_dir=None):
        self.gen = gen
        self.disc = disc
        self.weights = weights or LossWeights()
        self.seed = seed
        self.batch_size = batch_size
        self.run_dir = run_dir
        self.g_params = gen.named_parameters()
        self.d_params = disc.named_parameters()
        self.adam_g = {k: E.adam_state_for(p.data) for k, p in self.g_params.items()}
        self.adam_d = {k: E.adam_state_for(p.data) for k, p in self.d_params.items()}
        self.stage = 0     # last completed-or-running stage
        self.epoch = 0     # epochs finished within the current stage
        self.step = 0      # global optimizer-step pairs
        self.trace: list[dict] = []

    # -- parameter selection per stage ---------------------------------
    def trainable_g(self, stage: int) -> dict[str, Tensor]:
        csam = self.gen.csam_parameter_names()
        if stage == 1:
            return {k: p for k, p in self.g_params.items() if k not in csam}
        if stage == 2:
            return {k: p for k, p in self.g_params.items() if k in csam}
        return dict(self.g_params)

    def trainable_d(self, stage: int) -> dict[str, Tensor]:
        return {} if stage == 2 else dict(self.d_params)

    # -- single steps ---------------------------------------------------
    def _zero_grads(self):
        for p in self.g_params.values():
            p.grad = None
        for p in self.d_params.values():
            p.grad = None

    def _apply(self, params: dict[str, Tensor], states, lr: float):
        for name, p in params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, states[name] = E.adam_step(p.data, grad, states[name], lr)

    def d_step(self, pyramid, target, stage: int, lr_d: float) -> float:
        use_csam = stage >= 2
        fake = self.gen(pyramid, update_sn=False, use_csam=use_csam)
        fake = fake.detach()
        out_real = self.disc(pyramid[0], target, update_sn=True)
        out_fake = self.disc(pyramid[0], fake, update_sn=False)
        adv = adversarial_loss(out_real.scores, out_fake.scores)
        loss_d = E.neg(adv)
        if not np.isfinite(loss_d.data):
            raise TrainingDiverged(f"discriminator loss is {loss_d.data} at step {self.step}")
        self._zero_grads()
        E.backward(loss_d)
        trainable = self.trainable_d(stage)
        if trainable:
            self._apply(trainable, self.adam_d, lr_d)
        return loss_d.item()

    def g_step(self, pyramid, target, stage: int, lr_g: float) -> tuple[float, float, float]:
        use_csam = stage >= 2
        fake = self.gen(pyramid, update_sn=True, use_csam=use_csam)
        out_fake = self.disc(pyramid[0], fake, update_sn=False)
        out_real = self.disc(pyramid[0], target, update_sn=False)
        taps_real = [[t.detach() for t in sub] for sub in out_real.taps]
        adv_g = g_adversarial_loss(out_fake.scores)
        l1 = l1_loss(target, fake)
        fm = feature_matching_loss(out_fake.taps, taps_real)
        loss_g = total_objective(adv_g, l1, fm, self.weights)
        if not np.isfinite(loss_g.data):
            raise TrainingDiverged(f"generator loss is {loss_g.data} at step {self.step}")
        self._zero_grads()
        E.backward(loss_g)
        self._apply(self.trainable_g(stage), self.adam_g, lr_g)
        return adv_g.item(), l1.item(), fm.item()

    def evaluate_batch(self, pyramid, target, stage: int) -> dict[str, float]:
        """Loss components without any parameter or power-iteration update."""
        use_csam = stage >= 2
        fake = self.gen(pyramid, update_sn=False, use_csam=use_csam)
        out_fake = self.disc(pyramid[0], fake, update_sn=False)
        out_real = self.disc(pyramid[0], target, update_sn=False)
        adv = adversarial_loss(out_real.scores, out_fake.scores)
        adv_g = g_adversarial_loss(out_fake.scores)
        l1 = l1_loss(target, fake)
        fm = feature_matching_loss(out_fake.taps, out_real.taps)
        loss_g = total_objective(adv_g, l1, fm, self.weights)
        return {
            "loss_D": -adv.item(),
            "loss_G_adv": adv_g.item(),
            "loss_L1": l1.item(),
            "loss_FM": fm.item(),
            "loss_G": loss_g.item(),
        }

    # -- stage loop ------------------------------------------------------
    def run_stage(self, plan: StagePlan, data: list) -> None:
        """data: list of (distance field, photo) pairs."""
        if plan.stage not in (self.stage, self.stage + 1):
            raise ValueError(f"stage {plan.stage} cannot follow stage {self.stage}")
        if plan.stage == self.stage + 1:
            self.stage = plan.stage
            self.epoch = 0
        if plan.stage == 2 and self.gen.csam is None:
            raise ValueError("stage 2 requires a generator built with csam_enabled")

        frozen_hash = None
        if plan.stage == 2:
            csam = self.gen.csam_parameter_names()
            frozen = {k: p for k, p in self.g_params.items() if k not in csam}
            frozen.update({"D." + k: p for k, p in self.d_params.items()})
            frozen_hash = params_hash(frozen)

        scales = self.gen.config.pyramid_scales()
        while self.epoch < plan.epochs:
            lr_g, lr_d = plan.lr_at(self.epoch)
            order = self._epoch_order(plan.stage, self.epoch, len(data))
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                pyramid, target = pairs_to_batch([data[i] for i in idx], scales)
                loss_d = self.d_step(pyramid, target, plan.stage, lr_d)
                adv_g, l1, fm = self.g_step(pyramid, target, plan.stage, lr_g)
                self.step += 1
                self._log(plan.stage, loss_d, adv_g, l1, fm, lr_g, lr_d)
            self.epoch += 1
            if self.run_dir is not None:
                self.save_checkpoint(os.path.join(self.run_dir, "latest.ckpt"))

        if plan.stage == 2:
            csam = self.gen.csam_parameter_names()
            frozen = {k: p for k, p in self.g_params.items() if k not in csam}
            frozen.update({"D." + k: p for k, p in self.d_params.items()})
            if params_hash(frozen) != frozen_hash:
                raise RuntimeError("stage 2 modified frozen parameters")

    def _epoch_order(self, stage: int, epoch: int, n: int) -> np.ndarray:
        ss = np.random.SeedSequence([self.seed, stage, epoch])
        return np.random.Generator(np.random.PCG64(ss)).permutation(n)

    def _log(self, stage, loss_d, adv_g, l1, fm, lr_g, lr_d):
        row = {"step": self.step, "stage": stage, "loss_D": loss_d, "loss_G_adv": adv_g,
               "loss_L1": l1, "loss_FM": fm, "lr_G": lr_g, "lr_D": lr_d}
        self.trace.append(row)
        if self.run_dir is not None:
            path = os.path.join(self.run_dir, "loss_trace.csv")
            fresh = not os.path.exists(path)
            with open(path, "a", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
                if fresh:
                    w.writeheader()
                w.writerow(row)

    # -- serialization ----------------------------------------------------
    def state_arrays(self) -> tuple[dict[str, np.ndarray], dict]:
        arrays: dict[str, np.ndarray] = {}
        adam_t: dict[str, int] = {}
        for side, params, adam, module in (("g", self.g_params, self.adam_g, self.gen),
                                           ("d", self.d_params, self.adam_d, self.disc)):
            for k, p in params.items():
                arrays[f"{side}:param:{k}"] = p.data
                arrays[f"{side}:adam_m:{k}"] = adam[k].m
                arrays[f"{side}:adam_v:{k}"] = adam[k].v
                adam_t[f"{side}:{k}"] = adam[k].t
            for k, s in module.named_spectral_states().items():
                arrays[f"{side}:sn_u:{k}"] = s.u
        meta = {"stage": self.stage, "epoch": self.epoch, "step": self.step,
                "seed": self.seed, "batch_size": self.batch_size, "adam_t": adam_t,
                "lambda": self.weights.lam, "mu": self.weights.mu}
        return arrays, meta

    def load_state_arrays(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        for side, params, adam, module in (("g", self.g_params, self.adam_g, self.gen),
                                           ("d", self.d_params, self.adam_d, self.disc)):
            for k, p in params.items():
                p.data = arrays[f"{side}:param:{k}"].copy()
                adam[k].m = arrays[f"{side}:adam_m:{k}"].copy()
                adam[k].v = arrays[f"{side}:adam_v:{k}"].copy()
                adam[k].t = int(meta["adam_t"][f"{side}:{k}"])
            for k, s in module.named_spectral_states().items():
                s.u = arrays[f"{side}:sn_u:{k}"].copy()
        self.stage = int(meta["stage"])
        self.epoch = int(meta["epoch"])
        self.step = int(meta["step"])
        self.seed = int(meta["seed"])
        self.batch_size = int(meta["batch_size"])
        self.weights = LossWeights(lam=float(meta["lambda"]), mu=float(meta["mu"]))

    def save_checkpoint(self, path, extra_meta: dict | None = None) -> None:
        from .checkpoint import save_checkpoint
        arrays, meta = self.state_arrays()
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, arrays, meta)

    def load_checkpoint(self, path) -> dict:
        from .checkpoint import load_checkpoint
        arrays, meta = load_checkpoint(path)
        self.load_state_arrays(arrays, meta)
        return meta
