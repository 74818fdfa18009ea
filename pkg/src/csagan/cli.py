"""Command-line entry point: preprocess, train, generate, evaluate,
gradcheck, tau-sweep, and report."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import engine as E
from . import gradcheck as GC
from . import linemap, report
from .checkpoint import load_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, load_config, serialize_config
from .discriminator import MultiScaleDiscriminator
from .generator import Generator
from .losses import LossWeights
from .metrics import RandomProjectionProvider, ToyClassifierProvider, evaluate_sets
from .training import StagePlan, Trainer


def _build_parser():
    p = argparse.ArgumentParser(prog="csagan", description="line-to-photo translation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("preprocess", help="photos -> (line map, distance field) pairs")
    pp.add_argument("--in", dest="in_dir", required=True)
    pp.add_argument("--out", dest="out_dir", required=True)
    pp.add_argument("--tau", type=float, default=0.3)
    pp.add_argument("--lmin", type=int, default=10)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--split", type=float, default=0.8)
    pp.add_argument("--side", type=int, default=256)

    tr = sub.add_parser("train", help="run the three-stage training schedule")
    tr.add_argument("--config", default=None)
    tr.add_argument("--data", default=None, help="preprocessed data dir (default: built-in toy set)")
    tr.add_argument("--out", dest="out_dir", required=True)
    tr.add_argument("--toy-count", type=int, default=256)
    tr.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    ge = sub.add_parser("generate", help="line map -> photo with a trained checkpoint")
    ge.add_argument("--ckpt", required=True)
    ge.add_argument("--in", dest="in_png", required=True)
    ge.add_argument("--out", dest="out_png", required=True)

    ev = sub.add_parser("evaluate", help="IS/FID/KID between two image directories")
    ev.add_argument("--real", required=True)
    ev.add_argument("--fake", required=True)
    ev.add_argument("--provider", default="pixels", choices=["pixels", "classifier"])
    ev.add_argument("--out", default=None, help="write the JSON report here (plus a .png figure)")
    ev.add_argument("--side", type=int, default=32)

    gc = sub.add_parser("gradcheck", help="finite-difference suite (forces f64)")
    gc.add_argument("--seed", type=int, default=0)

    ts = sub.add_parser("tau-sweep", help="regenerate outputs at several thresholds")
    ts.add_argument("--in", dest="in_png", required=True)
    ts.add_argument("--out", dest="out_dir", required=True)
    ts.add_argument("--taus", default="0.3,0.6")
    ts.add_argument("--lmin", type=int, default=10)
    ts.add_argument("--ckpt", default=None)

    rp = sub.add_parser("report", help="render figures from a run directory")
    rp.add_argument("--run", required=True)
    return p


def _models_from_config(cfg: RunConfig):
    rng = np.random.default_rng(cfg.seed)
    gen = Generator(cfg.generator_config(), rng=rng)
    disc = MultiScaleDiscriminator(cfg.discriminator_config(), rng=rng)
    return gen, disc


def _pairs_from_dir(data_dir: Path):
    pairs = []
    for csdf in sorted(data_dir.glob("*_field.csdf")):
        photo_path = csdf.with_name(csdf.name.replace("_field.csdf", "_photo.png"))
        if not photo_path.exists():
            continue
        field = linemap.load_distance_field(csdf)
        photo = linemap.load_photo(photo_path)
        pairs.append((field, np.moveaxis(photo, 2, 0) * 2.0 - 1.0))
    return pairs


def _toy_pairs(cfg: RunConfig, count: int):
    from .toydata import make_toy_dataset
    samples = make_toy_dataset(count, side=cfg.image_side, seed=cfg.seed)
    pairs = []
    for s in samples:
        lines = linemap.extract_linemap(s.prob, cfg.tau, cfg.l_min)
        pairs.append((linemap.distance_field(lines), s.photo))
    return pairs


def cmd_preprocess(args) -> int:
    train, test = linemap.make_dataset(args.in_dir, args.split, args.seed, side=args.side)
    out = Path(args.out_dir)
    for split_name, paths in (("train", train), ("test", test)):
        d = out / split_name
        d.mkdir(parents=True, exist_ok=True)
        for p in paths:
            photo = linemap.load_photo(p, side=args.side)
            prob = linemap.detect_edges(photo * 255.0)
            lines = linemap.extract_linemap(prob, args.tau, args.lmin)
            field = linemap.distance_field(lines)
            stem = Path(p).stem
            linemap.save_png(d / f"{stem}_photo.png", photo)
            linemap.save_png(d / f"{stem}_line.png", lines.astype(float))
            linemap.save_distance_field(d / f"{stem}_field.csdf", field)
    print(f"preprocessed {len(train)} train / {len(test)} test images into {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    apply_overrides(cfg, overrides)
    E.set_precision(cfg.precision)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / "lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.close(fd)
    except FileExistsError:
        print(f"error: {out} is locked by another trainer (remove {lock} if stale)", file=sys.stderr)
        return 1
    try:
        (out / "run.cfg").write_text(serialize_config(cfg))
        pairs = _pairs_from_dir(Path(args.data)) if args.data else _toy_pairs(cfg, args.toy_count)
        if not pairs:
            print("error: no training pairs found", file=sys.stderr)
            return 1
        gen, disc = _models_from_config(cfg)
        trainer = Trainer(gen, disc, LossWeights(cfg.loss.lambda_l1, cfg.loss.mu_fm),
                          seed=cfg.seed, batch_size=cfg.train.batch_size, run_dir=str(out))
        t = cfg.train
        plans = [
            StagePlan(1, t.stage1_epochs, t.lr_g, t.lr_d, t.decay_at, t.decay_factor),
            StagePlan(2, t.stage2_epochs, t.lr_g, t.lr_d, t.decay_at, t.decay_factor),
            StagePlan(3, t.stage3_epochs, t.lr_g * 0.1, t.lr_d * 0.1, t.decay_at, t.decay_factor),
        ]
        for plan in plans:
            if plan.stage == 2 and not cfg.generator.csam_enabled:
                continue
            trainer.run_stage(plan, pairs)
            print(f"stage {plan.stage} done at step {trainer.step}")
        trainer.save_checkpoint(out / "final.ckpt", extra_meta={"config": serialize_config(cfg)})
        trace = out / "loss_trace.csv"
        if trace.exists():
            report.loss_curves(trace, out / "loss_curves.png")
        print(f"training complete: {out / 'final.ckpt'}")
        return 0
    finally:
        lock.unlink(missing_ok=True)


def _load_generator(ckpt_path):
    arrays, meta = load_checkpoint(ckpt_path)
    if "config" not in meta:
        raise ConfigError(f"{ckpt_path}: checkpoint carries no config")
    from .config import parse_config
    cfg = parse_config(meta["config"])
    gen, disc = _models_from_config(cfg)
    trainer = Trainer(gen, disc, LossWeights(cfg.loss.lambda_l1, cfg.loss.mu_fm),
                      seed=cfg.seed, batch_size=cfg.train.batch_size)
    trainer.load_state_arrays(arrays, meta)
    return cfg, gen


def _generate_from_field(cfg, gen, field):
    scales = gen.config.pyramid_scales()
    pyramid = [E.Tensor(lvl[None]) for _, lvl in linemap.build_condition_pyramid(field, scales)]
    out = gen(pyramid, update_sn=False)
    return (np.asarray(out.data) + 1.0) / 2.0  # [3,H,W] in [0,1]


def cmd_generate(args) -> int:
    cfg, gen = _load_generator(args.ckpt)
    gray = linemap.load_photo(args.in_png, side=cfg.image_side).mean(axis=2)
    lines = gray > 0.5  # white lines on black
    field = linemap.distance_field(lines)
    img = _generate_from_field(cfg, gen, field)
    linemap.save_png(args.out_png, np.moveaxis(img, 0, 2))
    print(f"wrote {args.out_png}")
    return 0


def cmd_evaluate(args) -> int:
    def load_dir(d):
        paths = sorted(p for p in Path(d).iterdir() if p.suffix.lower() in linemap.IMAGE_EXTS)
        if len(paths) < 2:
            raise linemap.PipelineError(f"need at least 2 images in {d}")
        return np.stack([linemap.load_photo(p, side=args.side) for p in paths])

    real, fake = load_dir(args.real), load_dir(args.fake)
    if args.provider == "pixels":
        provider = RandomProjectionProvider(real.shape[1:])
    else:
        from .toydata import make_toy_dataset
        samples = make_toy_dataset(240, side=args.side, seed=11)
        imgs = np.stack([np.moveaxis((s.photo + 1) / 2, 0, 2) for s in samples])
        labels = np.array([s.label for s in samples])
        provider = ToyClassifierProvider(imgs, labels, n_classes=3)
    result = evaluate_sets(real, fake, provider)
    text = json.dumps({k: result[k] for k in ("is_mean", "is_std", "fid", "kid")}, indent=2)
    print(text)
    if args.out:
        tmp = args.out + ".tmp"
        Path(tmp).write_text(text + "\n")
        os.replace(tmp, args.out)
        report.metrics_bar(result, os.path.splitext(args.out)[0] + ".png")
    return 0


def cmd_gradcheck(args) -> int:
    E.set_precision("f64")
    results = GC.run_all(seed=args.seed)
    ok = True
    for name, err, passed in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name:<24s} max rel err {err:.3e}")
        ok &= passed
    return 0 if ok else 1


def cmd_tau_sweep(args) -> int:
    taus = [float(t) for t in args.taus.split(",") if t.strip()]
    if not taus:
        print("error: no tau values given", file=sys.stderr)
        return 1
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = gen = None
    if args.ckpt:
        cfg, gen = _load_generator(args.ckpt)
    side = cfg.image_side if cfg else None
    photo = linemap.load_photo(args.in_png, side=side)
    prob = linemap.detect_edges(photo * 255.0)
    rows = []
    for tau in taus:
        lines = linemap.extract_linemap(prob, tau, args.lmin)
        field = linemap.distance_field(lines)
        row = {"tau": tau, "line": lines.astype(float), "field": field}
        linemap.save_png(out / f"line_tau{tau:.2f}.png", lines.astype(float))
        linemap.save_distance_field(out / f"field_tau{tau:.2f}.csdf", field)
        if gen is not None:
            img = _generate_from_field(cfg, gen, field)
            row["image"] = np.moveaxis(img, 0, 2)
            linemap.save_png(out / f"gen_tau{tau:.2f}.png", row["image"])
        rows.append(row)
    report.tau_sweep_sheet(rows, out / "tau_sweep.png")
    print(f"wrote {len(rows)} tau levels to {out}")
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    trace = run / "loss_trace.csv"
    if not trace.exists():
        print(f"error: {trace} not found", file=sys.stderr)
        return 1
    report.loss_curves(trace, run / "loss_curves.png")
    print(f"wrote {run / 'loss_curves.png'}")
    return 0


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "tau-sweep": cmd_tau_sweep,
    "report": cmd_report,
}


def cli_dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, linemap.PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
