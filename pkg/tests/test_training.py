import numpy as np
import pytest

from csagan import engine as E
from csagan.discriminator import DiscriminatorConfig, MultiScaleDiscriminator
from csagan.generator import Generator, GeneratorConfig
from csagan.losses import LossWeights
from csagan.training import (StagePlan, Trainer, default_stage_plans,
                             pairs_to_batch, params_hash)
from csagan.toydata import make_toy_dataset


SIDE = 16


def _models(seed=0, csam=True):
    rng = np.random.default_rng(seed)
    gcfg = GeneratorConfig(base_channels=8, n_down=2, image_side=SIDE,
                           channel_cap=16, csam_enabled=csam)
    dcfg = DiscriminatorConfig(n_d=2, shared_depth=1, depths=(3, 4), image_side=SIDE,
                               base_width=8, width_cap=16)
    return Generator(gcfg, rng), MultiScaleDiscriminator(dcfg, rng)


def _data(n=8, seed=0):
    from csagan import linemap
    out = []
    for s in make_toy_dataset(n, side=SIDE, seed=seed):
        lines = linemap.extract_linemap(s.prob, tau=0.5, l_min=3)
        out.append((linemap.distance_field(lines), s.photo))
    return out


@pytest.fixture
def trainer(tmp_path):
    gen, disc = _models()
    return Trainer(gen, disc, LossWeights(), seed=11, batch_size=4,
                   run_dir=str(tmp_path))


class TestStagePlan:
    def test_decay_at_half(self):
        plan = StagePlan(1, epochs=10, lr_g=1e-4, lr_d=4e-4)
        assert plan.lr_at(0) == (1e-4, 4e-4)
        assert plan.lr_at(4) == (1e-4, 4e-4)
        assert plan.lr_at(5) == (pytest.approx(1e-5), pytest.approx(4e-5))

    def test_odd_epoch_count_rounds_up(self):
        plan = StagePlan(1, epochs=5, lr_g=1.0, lr_d=1.0)
        assert plan.lr_at(2) == (1.0, 1.0)
        assert plan.lr_at(3) == (pytest.approx(0.1), pytest.approx(0.1))

    def test_default_plans_ttur_and_stage3_rates(self):
        plans = default_stage_plans(epochs=(2, 2, 1), lr_g=1e-4)
        assert [p.stage for p in plans] == [1, 2, 3]
        assert plans[0].lr_d == pytest.approx(4 * plans[0].lr_g)
        assert plans[2].lr_g == pytest.approx(0.1 * plans[0].lr_g)


class TestParameterSelection:
    def test_stage1_excludes_attention(self, trainer):
        names = set(trainer.trainable_g(1))
        assert names and not any(n.startswith("csam.") for n in names)

    def test_stage2_only_attention(self, trainer):
        names = set(trainer.trainable_g(2))
        assert names == trainer.gen.csam_parameter_names()
        assert trainer.trainable_d(2) == {}

    def test_stage3_everything(self, trainer):
        assert set(trainer.trainable_g(3)) == set(trainer.gen.named_parameters())
        assert set(trainer.trainable_d(3)) == set(trainer.disc.named_parameters())


class TestSteps:
    def test_d_step_moves_only_discriminator(self, trainer):
        data = _data(4)
        pyramid, target = pairs_to_batch(data, trainer.gen.config.pyramid_scales())
        g_before = params_hash(trainer.g_params)
        d_before = params_hash(trainer.d_params)
        trainer.d_step(pyramid, target, stage=1, lr_d=1e-3)
        assert params_hash(trainer.g_params) == g_before
        assert params_hash(trainer.d_params) != d_before

    def test_g_step_moves_only_generator(self, trainer):
        data = _data(4)
        pyramid, target = pairs_to_batch(data, trainer.gen.config.pyramid_scales())
        d_before = params_hash(trainer.d_params)
        trainer.g_step(pyramid, target, stage=1, lr_g=1e-3)
        assert params_hash(trainer.d_params) == d_before

    def test_g_step_l1_descends_toward_target(self, trainer):
        # with lambda huge, repeated generator steps must shrink L1
        trainer.weights = LossWeights(lam=100.0, mu=0.0)
        data = _data(4)
        pyramid, target = pairs_to_batch(data, trainer.gen.config.pyramid_scales())
        first = trainer.evaluate_batch(pyramid, target, stage=1)["loss_L1"]
        for _ in range(30):
            trainer.g_step(pyramid, target, stage=1, lr_g=2e-3)
        last = trainer.evaluate_batch(pyramid, target, stage=1)["loss_L1"]
        assert last < first

    def test_evaluate_batch_has_no_side_effects(self, trainer):
        data = _data(4)
        pyramid, target = pairs_to_batch(data, trainer.gen.config.pyramid_scales())
        g_before = params_hash(trainer.g_params)
        r1 = trainer.evaluate_batch(pyramid, target, stage=1)
        r2 = trainer.evaluate_batch(pyramid, target, stage=1)
        assert r1 == r2
        assert params_hash(trainer.g_params) == g_before


class TestStageLoop:
    def test_stage2_keeps_frozen_parameters(self, tmp_path):
        gen, disc = _models()
        tr = Trainer(gen, disc, seed=5, batch_size=4, run_dir=str(tmp_path))
        data = _data(8)
        tr.run_stage(StagePlan(1, 1, 1e-4, 4e-4), data)
        csam = gen.csam_parameter_names()
        frozen = {k: p for k, p in tr.g_params.items() if k not in csam}
        frozen.update({"D." + k: p for k, p in tr.d_params.items()})
        before = params_hash(frozen)
        csam_before = params_hash({k: p for k, p in tr.g_params.items() if k in csam})
        tr.run_stage(StagePlan(2, 2, 1e-3, 4e-3), data)
        assert params_hash(frozen) == before
        assert params_hash({k: p for k, p in tr.g_params.items() if k in csam}) != csam_before

    def test_stage_order_enforced(self, tmp_path):
        gen, disc = _models()
        tr = Trainer(gen, disc, run_dir=str(tmp_path))
        with pytest.raises(ValueError, match="stage"):
            tr.run_stage(StagePlan(2, 1, 1e-4, 4e-4), _data(4))

    def test_stage2_without_attention_rejected(self, tmp_path):
        gen, disc = _models(csam=False)
        tr = Trainer(gen, disc, run_dir=str(tmp_path))
        data = _data(4)
        tr.run_stage(StagePlan(1, 1, 1e-4, 4e-4), data)
        with pytest.raises(ValueError, match="csam"):
            tr.run_stage(StagePlan(2, 1, 1e-4, 4e-4), data)

    def test_trace_written_and_deterministic(self, tmp_path):
        traces = []
        for trial in range(2):
            d = tmp_path / f"run{trial}"
            d.mkdir()
            gen, disc = _models(seed=1)
            tr = Trainer(gen, disc, seed=3, batch_size=4, run_dir=str(d))
            tr.run_stage(StagePlan(1, 2, 1e-4, 4e-4), _data(8, seed=2))
            traces.append([tuple(r.values()) for r in tr.trace])
            assert (d / "loss_trace.csv").exists()
            assert (d / "latest.ckpt").exists()
        assert traces[0] == traces[1]


class TestSerialization:
    def test_round_trip_restores_everything(self, tmp_path):
        gen, disc = _models()
        tr = Trainer(gen, disc, seed=4, batch_size=4, run_dir=str(tmp_path))
        data = _data(8)
        tr.run_stage(StagePlan(1, 1, 1e-4, 4e-4), data)
        arrays, meta = tr.state_arrays()
        snap = {k: v.copy() for k, v in arrays.items()}

        gen2, disc2 = _models(seed=99)
        tr2 = Trainer(gen2, disc2, seed=0, batch_size=2)
        tr2.load_state_arrays(snap, meta)
        arrays2, meta2 = tr2.state_arrays()
        assert meta2 == meta
        for k in arrays:
            np.testing.assert_array_equal(arrays2[k], arrays[k])

    def test_resume_matches_uninterrupted(self, tmp_path):
        # run 2 epochs straight vs 1 epoch, checkpoint, reload, 1 more epoch
        data = _data(8, seed=6)

        gen_a, disc_a = _models(seed=2)
        tr_a = Trainer(gen_a, disc_a, seed=7, batch_size=4)
        tr_a.run_stage(StagePlan(1, 2, 1e-4, 4e-4), data)

        gen_b, disc_b = _models(seed=2)
        tr_b = Trainer(gen_b, disc_b, seed=7, batch_size=4)
        tr_b.run_stage(StagePlan(1, 1, 1e-4, 4e-4), data)
        ckpt = tmp_path / "mid.ckpt"
        tr_b.save_checkpoint(str(ckpt))

        gen_c, disc_c = _models(seed=55)
        tr_c = Trainer(gen_c, disc_c, seed=0, batch_size=1)
        tr_c.load_checkpoint(str(ckpt))
        tr_c.run_stage(StagePlan(1, 2, 1e-4, 4e-4), data)

        a, _ = tr_a.state_arrays()
        c, _ = tr_c.state_arrays()
        for k in a:
            np.testing.assert_array_equal(c[k], a[k])
