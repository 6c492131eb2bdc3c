"""Command-line entry point: ``mdir <command> ...``.

Every command that produces artifacts writes them into a run directory along
with ``config.json``, the fully resolved configuration. Exit codes: 0 ok,
2 bad input (missing files, invalid config), 3 numeric failure (NaN loss,
failed gradient check).
"""
import argparse
import filecmp
import json
import logging
import shutil
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .losses import LossWeights
from .net import NetConfig
from .synth.dataset import DatasetError, Manifest, load_image, load_pairs, save_image, synth_dataset
from .synth.degrade import CATEGORIES, DegradationError

log = logging.getLogger("mdir")

EXIT_BAD_INPUT = 2
EXIT_NUMERIC = 3

SYNTH_DEFAULTS = {"per_category": 50, "test_per_category": 10, "size": 64, "seed": 0,
                  "rain_density": 0.04, "snow_density": 0.004, "workers": 1, "procedural": 0}


class UsageError(Exception):
    """Bad input; maps to exit code 2."""


# ------------------------------------------------------------------ config

def _section_defaults():
    from .train import TrainConfig
    return {
        "net": NetConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "loss": asdict(LossWeights()),
        "synth": dict(SYNTH_DEFAULTS),
    }


def load_run_config(path=None, overrides=None):
    """Merge defaults <- JSON file <- CLI overrides; reject unknown keys."""
    cfg = _section_defaults()
    layers = []
    if path:
        try:
            layers.append(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}")
    if overrides:
        layers.append(overrides)
    for layer in layers:
        if not isinstance(layer, dict):
            raise UsageError("config must be a JSON object")
        for section, values in layer.items():
            if section not in cfg:
                raise UsageError(f"unknown config section {section!r} (expected one of {sorted(cfg)})")
            if not isinstance(values, dict):
                raise UsageError(f"config section {section!r} must be an object")
            unknown = set(values) - set(cfg[section])
            if unknown:
                raise UsageError(f"unknown key(s) in {section!r}: {sorted(unknown)}")
            cfg[section].update(values)
    return cfg


def build_configs(cfg):
    from .train import TrainConfig
    try:
        return (NetConfig(**cfg["net"]), TrainConfig(**cfg["train"]), LossWeights(**cfg["loss"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}")


def write_config(run_dir, cfg, command):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **cfg}
    (run_dir / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _overrides(args, mapping):
    """Collect non-None CLI flags into {section: {key: value}}."""
    out = {}
    for attr, (section, key) in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            out.setdefault(section, {})[key] = val
    return out


TRAIN_FLAGS = {
    "seed": ("train", "seed"), "epochs": ("train", "epochs"), "batch_size": ("train", "batch_size"),
    "crop": ("train", "crop"), "lr": ("train", "lr0"), "max_steps": ("train", "max_steps"),
    "classifier_epochs": ("train", "classifier_epochs"), "kernel_size": ("net", "kernel_size"),
    "base_channels": ("net", "base_channels"), "res_blocks": ("net", "res_blocks"),
}


def _read_manifest(path):
    try:
        return Manifest.read(path)
    except DatasetError as exc:
        raise UsageError(str(exc))


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


# ------------------------------------------------------------------ commands

def cmd_synth(args):
    cfg = load_run_config(args.config, _overrides(args, {
        k: ("synth", k) for k in SYNTH_DEFAULTS}))
    s = cfg["synth"]
    if s["per_category"] <= 0 and s["test_per_category"] <= 0:
        raise UsageError("every category would be empty: --per-category must be positive")
    clean_images = None
    if args.clean_dir is None:
        if not s["procedural"]:
            raise UsageError("give --clean-dir or --procedural N")
        from .synth.scenes import make_scenes
        clean_images = [(f"scene{i:04d}", img) for i, img in
                        enumerate(make_scenes(s["procedural"], s["size"], s["seed"]))]
    elif not Path(args.clean_dir).is_dir():
        raise UsageError(f"clean image directory not found: {args.clean_dir}")

    out_dir = Path(args.out_dir)
    target = out_dir
    if args.verify:
        if not (out_dir / "manifest.jsonl").exists():
            raise UsageError(f"nothing to verify: {out_dir} has no manifest")
        target = Path(tempfile.mkdtemp(prefix="mdir-verify-"))
    existed = target.exists()
    try:
        manifest = synth_dataset(args.clean_dir, target, s["per_category"], s["test_per_category"],
                                 size=s["size"], seed=s["seed"], rain_density=s["rain_density"],
                                 snow_density=s["snow_density"], workers=s["workers"],
                                 clean_images=clean_images)
    except (DatasetError, DegradationError) as exc:
        if not existed:
            shutil.rmtree(target, ignore_errors=True)
        raise UsageError(str(exc))
    except BaseException:
        if not existed:
            shutil.rmtree(target, ignore_errors=True)
        raise

    if args.verify:
        files = sorted(p.relative_to(target) for p in target.rglob("*") if p.is_file())
        changed = [f for f in files if not (out_dir / f).exists()
                   or not filecmp.cmp(target / f, out_dir / f, shallow=False)]
        shutil.rmtree(target, ignore_errors=True)
        print(f"{len(changed)} files changed")
        for f in changed[:20]:
            print(f"  {f}")
        return 0 if not changed else 1

    write_config(out_dir, cfg, "synth")
    for split in ("train", "test"):
        counts = manifest.counts(split)
        if counts:
            print(f"{split}: " + ", ".join(f"{c}={counts.get(c, 0)}" for c in CATEGORIES))
    print(f"{len(manifest.entries)} files written to {out_dir}")
    return 0


def cmd_train_classifier(args):
    from .train import save_classifier, train_classifier
    cfg = load_run_config(args.config, _overrides(args, TRAIN_FLAGS))
    _, tcfg, _ = build_configs(cfg)
    manifest = _read_manifest(args.data)
    try:
        train, test = load_pairs(manifest, "train"), load_pairs(manifest, "test")
    except DatasetError as exc:
        raise UsageError(str(exc))
    run_dir = Path(args.run_dir)
    write_config(run_dir, cfg, "train-classifier")
    with open(run_dir / "classifier_log.csv", "w") as f:
        f.write("epoch,loss\n")

        def log_fn(row):
            f.write(f"{row['epoch']},{row['loss']:.9g}\n")
            print(f"epoch {row['epoch']}: loss {row['loss']:.4f}")

        clf, report = train_classifier(train, test, tcfg, log_fn=log_fn)
    save_classifier(run_dir / "classifier.ckpt", clf, {"train_config": tcfg.to_dict()})
    _write_json(run_dir / "report.json", report.to_dict())
    print("F1 " + " ".join(f"{k}={v:.3f}" for k, v in report.f1.items()))
    return 0


def _load_classifier(path):
    from .train import load_classifier
    if path is None:
        return None
    try:
        return load_classifier(path)
    except (CheckpointError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load classifier: {exc}")


def cmd_train(args):
    from .train import evaluate, train_restoration
    flags = dict(TRAIN_FLAGS)
    cfg = load_run_config(args.config, _overrides(args, flags))
    if args.no_ldo:
        cfg["net"]["use_ldo"] = False
    if args.no_cfe:
        cfg["net"]["use_cfe"] = False
    net_cfg, tcfg, weights = build_configs(cfg)
    manifest = _read_manifest(args.data)
    if args.categories:
        manifest = manifest.restrict(args.categories)
    clf = _load_classifier(args.classifier)
    if net_cfg.use_cfe and clf is None:
        raise UsageError("--classifier is required unless --no-cfe is given")
    if args.resume and not Path(args.resume).exists():
        raise UsageError(f"checkpoint not found: {args.resume}")
    try:
        train = load_pairs(manifest, "train")
        test = load_pairs(manifest, "test")
    except DatasetError as exc:
        raise UsageError(str(exc))
    run_dir = Path(args.run_dir)
    write_config(run_dir, cfg, "train")

    t0 = time.time()

    def log_fn(row):
        if row["step"] % args.log_every == 0:
            print(f"step {row['step']}: lr {row['lr']:.3g} loss {row['loss']:.5f}", flush=True)

    result = train_restoration(train, tcfg, net_cfg, classifier=clf, loss_weights=weights,
                               val_pairs=test, run_dir=run_dir, resume=args.resume, log_fn=log_fn)
    report = evaluate(result.net, clf, test)
    doc = {"final": report.to_dict(), "best_val_psnr": result.best_psnr,
           "steps": result.step, "seconds": time.time() - t0}
    _write_json(run_dir / "report.json", doc)
    print(report.table())
    return 0


def _prediction_arrays(manifest, pairs_rows, pred_dir):
    preds = []
    for e in pairs_rows:
        p = Path(pred_dir) / e["degraded"]
        if not p.exists():
            raise UsageError(f"missing prediction {p}")
        preds.append(load_image(p))
    return preds


def cmd_eval(args):
    from .train import evaluate, evaluate_arrays, load_network
    manifest = _read_manifest(args.data)
    try:
        pairs = load_pairs(manifest, args.split)
    except DatasetError as exc:
        raise UsageError(str(exc))
    if args.predictions:
        rows = manifest.split(args.split)
        report = evaluate_arrays(_prediction_arrays(manifest, rows, args.predictions),
                                 pairs.clean, pairs.categories)
        source = {"predictions": str(args.predictions)}
    else:
        if args.checkpoint is None:
            raise UsageError("give --checkpoint or --predictions")
        try:
            net, clf, meta = load_network(args.checkpoint)
        except (CheckpointError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load checkpoint: {exc}")
        report = evaluate(net, clf, pairs)
        source = {"checkpoint": str(args.checkpoint)}
    doc = {**report.to_dict(), **source, "split": args.split}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_json(args.out, doc)
    print(report.table())
    return 0


def cmd_infer(args):
    from .tensor import Tensor, no_grad
    from .train import load_network
    if not Path(args.input).exists():
        raise UsageError(f"input image not found: {args.input}")
    try:
        net, clf, _ = load_network(args.checkpoint)
    except (CheckpointError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}")
    try:
        img = load_image(args.input)
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc}")
    H, W = img.shape[1:]
    if H % 4 or W % 4:
        raise UsageError(f"image size {W}x{H} must be divisible by 4")
    with no_grad():
        out = net(Tensor(img[None]), classifier=clf).finest.data[0]
    if not np.all(np.isfinite(out)):
        print("non-finite output", file=sys.stderr)
        return EXIT_NUMERIC
    save_image(args.output, np.clip(out, 0, 1))
    print(f"wrote {args.output} ({W}x{H})")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    def show(r):
        print(f"{r.kind:9s} {r.name:20s} cases={r.cases:3d} max_rel_err={r.max_rel_error:.2e} "
              f"tol={r.tol:.0e} {'PASS' if r.passed else 'FAIL'} ({r.seconds:.2f}s)", flush=True)

    t0 = time.time()
    results = run_suite(args.cases, args.seed, log=show)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.time() - t0:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_NUMERIC
    return 0


def cmd_ablate(args):
    from .train import KERNEL_SWEEP, format_ablation, run_ablation
    cfg = load_run_config(args.config, _overrides(args, TRAIN_FLAGS))
    net_cfg, tcfg, _ = build_configs(cfg)
    manifest = _read_manifest(args.data)
    clf = _load_classifier(args.classifier)
    if clf is None:
        raise UsageError("--classifier is required (the CFE variant needs it)")
    try:
        train, test = load_pairs(manifest, "train"), load_pairs(manifest, "test")
    except DatasetError as exc:
        raise UsageError(str(exc))
    run_dir = Path(args.run_dir)
    write_config(run_dir, cfg, "ablate")

    def log_fn(row):
        print(f"{row['variant']:24s} seed {row['seed']}: PSNR {row['psnr']:.3f} "
              f"SSIM {row['ssim']:.4f} ({row['seconds']:.0f}s)", flush=True)

    report = run_ablation(train, test, clf, net_cfg, tcfg, seeds=tuple(args.seeds),
                          kernel_sizes=KERNEL_SWEEP if args.kernel_sweep else (), log_fn=log_fn)
    _write_json(run_dir / "report.json", report)
    print(format_ablation(report))
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="mdir", description="Multiple-in-one image restoration toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a balanced mixed-degradation dataset")
    s.add_argument("--clean-dir", help="directory of clean images")
    s.add_argument("--procedural", type=int, help="generate N procedural clean scenes instead")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--per-category", type=int, help="training images per category")
    s.add_argument("--test-per-category", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--rain-density", type=float)
    s.add_argument("--snow-density", type=float)
    s.add_argument("--workers", type=int)
    s.add_argument("--config")
    s.add_argument("--verify", action="store_true",
                   help="regenerate into a temporary directory and report changed files")
    s.set_defaults(func=cmd_synth)

    def train_args(q):
        q.add_argument("--data", required=True, help="dataset directory or manifest.jsonl")
        q.add_argument("--run-dir", required=True)
        q.add_argument("--config")
        q.add_argument("--seed", type=int)
        q.add_argument("--epochs", type=int)
        q.add_argument("--batch-size", type=int)
        q.add_argument("--crop", type=int)
        q.add_argument("--lr", type=float)
        q.add_argument("--max-steps", type=int)
        q.add_argument("--classifier-epochs", type=int)
        q.add_argument("--kernel-size", type=int)
        q.add_argument("--base-channels", type=int)
        q.add_argument("--res-blocks", type=int)

    c = sub.add_parser("train-classifier", help="stage one: train the degradation classifier")
    train_args(c)
    c.set_defaults(func=cmd_train_classifier)

    t = sub.add_parser("train", help="stage two: train the restoration network")
    train_args(t)
    t.add_argument("--classifier", help="classifier checkpoint (required with CFE)")
    t.add_argument("--resume", help="resume from a training checkpoint")
    t.add_argument("--no-ldo", action="store_true")
    t.add_argument("--no-cfe", action="store_true")
    t.add_argument("--categories", nargs="+", choices=list(CATEGORIES),
                   help="train on a subset of categories (one-to-one training)")
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-category PSNR/SSIM on a split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--predictions", help="directory of predicted PNGs mirroring the dataset layout")
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--out", help="write the report JSON here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="restore one image")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--cases", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="Baseline / +LDO / +LDO+CFE comparison over seeds")
    train_args(a)
    a.add_argument("--classifier", required=True)
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    a.add_argument("--kernel-sweep", action="store_true", help="also train k = 7, 5, 3")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    from .train import NumericError
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
