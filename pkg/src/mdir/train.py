"""Two-stage training, evaluation and the ablation harness.

Stage one trains the degradation classifier with BCE. Stage two freezes it
and trains the restoration network end to end on paired random crops.

Batches are a pure function of ``(seed, step)``: the epoch permutation and
the crop offsets are drawn from generators seeded by the step's coordinates.
Resuming from a checkpoint therefore replays exactly the batches the
uninterrupted run would have seen.
"""
import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import CLASSES, DegradationClassifier, bce_multilabel, f1_per_label
from .losses import LossWeights, psnr, ssim, total_loss
from .net import MDIRNet, NetConfig
from .optim import Adam, cosine_lr
from .synth.degrade import CATEGORIES
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

CATEGORY_ORDER = tuple(CATEGORIES)
ABLATION_VARIANTS = (
    ("Baseline", {"use_ldo": False, "use_cfe": False}),
    ("Baseline + LDO", {"use_ldo": True, "use_cfe": False}),
    ("Baseline + LDO + CFE", {"use_ldo": True, "use_cfe": True}),
)
KERNEL_SWEEP = (7, 5, 3)


class NumericError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 100
    lr0: float = 3e-4
    lr_min: float = 1e-6
    crop: int = 64
    seed: int = 0
    classifier_epochs: int = 5
    classifier_lr: float = 2e-3
    classifier_batch_size: int = 1
    eval_every: int = 1          # epochs between validation passes
    save_every: int = 1          # epochs between last.ckpt writes (always saved at the end)
    max_steps: int = 0           # >0 caps the schedule length (smoke runs)
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.lr_min < self.lr0:
            raise ValueError(f"lr_min ({self.lr_min}) must be below lr0 ({self.lr0})")
        if self.crop <= 0 or self.crop % 4:
            raise ValueError(f"crop {self.crop} must be a positive multiple of 4")
        if self.batch_size < 1 or self.classifier_batch_size < 1:
            raise ValueError("batch sizes must be positive")
        if self.epochs < 1 and self.max_steps < 1:
            raise ValueError("need epochs >= 1 or max_steps >= 1")

    @classmethod
    def full_size(cls, **kw):
        return cls(**{"batch_size": 16, "crop": 256, "epochs": 800, **kw})

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# ------------------------------------------------------------------ batching

def steps_per_epoch(n, batch):
    return math.ceil(n / batch)


def batch_indices(n, batch, seed, step):
    epoch, b = divmod(step, steps_per_epoch(n, batch))
    perm = np.random.default_rng([seed, 1, epoch]).permutation(n)
    return perm[b * batch:(b + 1) * batch]


def paired_crop(clean, degraded, idx, crop, rng):
    """Crop the same window from clean and degraded for every index."""
    H, W = clean.shape[-2:]
    if crop > H or crop > W:
        raise ValueError(f"crop {crop} larger than images {H}x{W}")
    ys = rng.integers(0, H - crop + 1, size=len(idx))
    xs = rng.integers(0, W - crop + 1, size=len(idx))
    c = np.stack([clean[i, :, y:y + crop, x:x + crop] for i, y, x in zip(idx, ys, xs)])
    d = np.stack([degraded[i, :, y:y + crop, x:x + crop] for i, y, x in zip(idx, ys, xs)])
    return c, d


def make_batch(pairs, batch, crop, seed, step):
    idx = batch_indices(len(pairs), batch, seed, step)
    rng = np.random.default_rng([seed, 2, step])
    clean, degraded = paired_crop(pairs.clean, pairs.degraded, idx, crop, rng)
    return clean, degraded, pairs.labels[idx]


def total_steps(n, cfg: TrainConfig, epochs=None):
    if cfg.max_steps:
        return cfg.max_steps
    return (cfg.epochs if epochs is None else epochs) * steps_per_epoch(n, cfg.batch_size)


# ------------------------------------------------------------------ stage one

@dataclass
class ClassifierReport:
    epoch_losses: list
    f1: dict
    seconds: float

    def to_dict(self):
        return asdict(self)


def predict_labels(classifier, images, batch=32):
    out = []
    with no_grad():
        for i in range(0, len(images), batch):
            out.append(classifier(Tensor(images[i:i + batch])).logits.data)
    return np.concatenate(out) > 0


def train_classifier(train_pairs, test_pairs, cfg: TrainConfig, log_fn=None):
    """Train the multi-label classifier for ``cfg.classifier_epochs`` epochs."""
    if len(train_pairs) == 0:
        raise ValueError("classifier training split is empty")
    t0 = time.perf_counter()
    clf = DegradationClassifier().initialize(cfg.seed)
    opt = Adam(clf.parameters(), cfg.classifier_lr, cfg.betas, cfg.eps)
    bs = cfg.classifier_batch_size
    spe = steps_per_epoch(len(train_pairs), bs)
    total = cfg.classifier_epochs * spe
    seed = cfg.seed + 7717  # decorrelate from the restoration sampler
    crop = min(cfg.crop, *train_pairs.degraded.shape[-2:])
    losses = []
    for epoch in range(cfg.classifier_epochs):
        acc = 0.0
        for b in range(spe):
            step = epoch * spe + b
            _, x, y = make_batch(train_pairs, bs, crop, seed, step)
            flip = np.random.default_rng([seed, 3, step]).random(len(x)) < 0.5
            x[flip] = x[flip, :, :, ::-1]
            opt.zero_grad()
            loss = bce_multilabel(clf(Tensor(x)).logits, y)
            if not np.isfinite(loss.data):
                raise NumericError(f"classifier loss became {loss.data} at step {step}")
            loss.backward()
            opt.step(cosine_lr(step, total, cfg.classifier_lr, cfg.lr_min))
            acc += float(loss.data)
        losses.append(acc / spe)
        if log_fn:
            log_fn({"epoch": epoch, "loss": losses[-1]})
    f1 = f1_per_label(predict_labels(clf, test_pairs.degraded), test_pairs.labels) if test_pairs else {}
    return clf, ClassifierReport(losses, f1, time.perf_counter() - t0)


def save_classifier(path, clf, meta=None):
    return save_checkpoint(path, clf.state_dict(), {"kind": "classifier", **(meta or {})})


def load_classifier(path):
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") not in ("classifier", "restoration"):
        raise ValueError(f"{path} holds no classifier")
    if meta["kind"] == "restoration":
        arrays = {k[len("classifier/"):]: v for k, v in arrays.items() if k.startswith("classifier/")}
        if not arrays:
            raise ValueError(f"{path} was trained without a classifier")
    clf = DegradationClassifier()
    clf.load_state_dict(arrays)
    return clf.freeze().eval()


# ------------------------------------------------------------------ evaluation

@dataclass
class MetricReport:
    """Per-category mean PSNR/SSIM in fixed category order.

    ``rows[c]`` is None for categories without test images (absent, not
    zero). ``average`` is the mean of the per-category means.
    """
    rows: dict
    average: dict

    def to_dict(self):
        def clean(row):
            if row is None:
                return {"absent": True}
            out = dict(row)
            if math.isinf(out["psnr"]):
                out["psnr"], out["psnr_inf"] = None, True
            return out
        return {"categories": {c: clean(self.rows[c]) for c in CATEGORY_ORDER},
                "average": clean(self.average) if self.average else {"absent": True}}

    def table(self):
        head = "".join(f"{c:>14s}" for c in CATEGORY_ORDER + ("average",))
        cells = []
        for row in [self.rows[c] for c in CATEGORY_ORDER] + [self.average]:
            cells.append(f"{'absent':>14s}" if not row else f"{row['psnr']:>7.3f}/{row['ssim']:.4f}")
        return head + "\n" + "".join(f"{c:>14s}" for c in cells)


def evaluate_arrays(preds, gts, categories):
    """Score predictions against ground truth, grouped by category."""
    per = {c: ([], []) for c in CATEGORY_ORDER}
    for p, g, c in zip(preds, gts, categories):
        if c not in per:
            raise ValueError(f"unknown category {c!r}")
        per[c][0].append(psnr(p, g))
        per[c][1].append(ssim(p, g))
    rows = {}
    for c, (ps, ss) in per.items():
        rows[c] = None if not ps else {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "n": len(ps)}
    present = [r for r in rows.values() if r]
    average = None
    if present:
        average = {"psnr": float(np.mean([r["psnr"] for r in present])),
                   "ssim": float(np.mean([r["ssim"] for r in present])),
                   "n": int(sum(r["n"] for r in present))}
    return MetricReport(rows, average)


def restore(net, classifier, images, batch=4):
    """Run the network on full images; returns the finest prediction, clipped."""
    was = net.training
    net.eval()
    out = []
    with no_grad():
        for i in range(0, len(images), batch):
            x = Tensor(np.asarray(images[i:i + batch], dtype=np.float32))
            out.append(np.clip(net(x, classifier=classifier).finest.data, 0, 1))
    net.train(was)
    return np.concatenate(out)


def evaluate(net, classifier, pairs):
    return evaluate_arrays(restore(net, classifier, pairs.degraded), pairs.clean, pairs.categories)


# ------------------------------------------------------------------ stage two

@dataclass
class TrainResult:
    net: MDIRNet
    step: int
    history: list = field(default_factory=list)        # (step, lr, loss)
    val_history: list = field(default_factory=list)    # (step, avg psnr)
    best_psnr: float = -math.inf


def _training_state(net, opt, classifier):
    arrays = {f"net/{k}": v for k, v in net.state_dict().items()}
    arrays.update({f"adam/{k}": v for k, v in opt.state_dict().items() if k != "t"})
    if classifier is not None:
        arrays.update({f"classifier/{k}": v for k, v in classifier.state_dict().items()})
    return arrays


def save_training_checkpoint(path, net, opt, classifier, cfg, loss_weights, step, best_psnr):
    meta = {
        "kind": "restoration",
        "net_config": net.cfg.to_dict(),
        "train_config": cfg.to_dict(),
        "loss_weights": asdict(loss_weights),
        "step": step,
        "adam_t": opt.t,
        "best_psnr": None if math.isinf(best_psnr) else best_psnr,
        # batches are derived from (seed, step); this is the full sampler state
        "sampler": {"seed": cfg.seed, "next_step": step},
    }
    return save_checkpoint(path, _training_state(net, opt, classifier), meta)


def load_network(path):
    """Load a restoration checkpoint for inference: (net, classifier or None, meta)."""
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "restoration":
        raise ValueError(f"{path} is not a restoration checkpoint")
    net = MDIRNet(NetConfig(**meta["net_config"]))
    net.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("net/")})
    clf = None
    if any(k.startswith("classifier/") for k in arrays):
        clf = DegradationClassifier()
        clf.load_state_dict({k[11:]: v for k, v in arrays.items() if k.startswith("classifier/")})
        clf.freeze().eval()
    return net.eval(), clf, meta


def train_restoration(train_pairs, cfg: TrainConfig, net_cfg: NetConfig = None, classifier=None,
                      loss_weights: LossWeights = None, val_pairs=None, run_dir=None,
                      resume=None, stop_at=None, log_fn=None):
    """Adam on the multi-scale dual-domain loss with a frozen classifier.

    ``resume`` is a checkpoint path; ``stop_at`` ends the run early at that
    step (the schedule still spans the full configured length). With a
    ``run_dir`` the loop writes ``train_log.csv``, ``last.ckpt`` and, when
    validation pairs are given, ``best.ckpt`` (highest average PSNR).
    """
    if len(train_pairs) == 0:
        raise ValueError("restoration training split is empty")
    net_cfg = net_cfg or NetConfig()
    loss_weights = loss_weights or LossWeights()
    if classifier is not None:
        classifier.freeze().eval()
    if net_cfg.use_cfe and classifier is None:
        raise ValueError("conditional embedding needs a trained classifier")

    net = MDIRNet(net_cfg).initialize(cfg.seed).train()
    opt = Adam(net.parameters(), cfg.lr0, cfg.betas, cfg.eps)
    start = 0
    result = TrainResult(net, 0)
    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        net.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("net/")})
        opt = Adam(net.parameters(), cfg.lr0, cfg.betas, cfg.eps)
        opt.load_state_dict({"t": meta["adam_t"],
                             **{k[5:]: v for k, v in arrays.items() if k.startswith("adam/")}})
        start = int(meta["step"])
        if meta.get("best_psnr") is not None:
            result.best_psnr = meta["best_psnr"]

    n = len(train_pairs)
    spe = steps_per_epoch(n, cfg.batch_size)
    total = total_steps(n, cfg)
    end = total if stop_at is None else min(stop_at, total)
    clf_for_net = classifier if net_cfg.use_cfe else None

    writer, fh = None, None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        fh = open(run_dir / "train_log.csv", "a" if resume else "w", newline="")
        writer = csv.writer(fh)
        if not resume:
            writer.writerow(["step", "epoch", "lr", "loss"])

    def checkpoint(name, step):
        if run_dir is not None:
            save_training_checkpoint(run_dir / name, net, opt, classifier, cfg, loss_weights,
                                     step, result.best_psnr)

    try:
        for step in range(start, end):
            clean, degraded, _ = make_batch(train_pairs, cfg.batch_size, cfg.crop, cfg.seed, step)
            lr = cosine_lr(step, total, cfg.lr0, cfg.lr_min)
            opt.zero_grad()
            x = Tensor(degraded)
            out = net(x, classifier=clf_for_net)
            loss = total_loss(out.predictions, Tensor(clean), loss_weights)
            value = float(loss.data)
            if not np.isfinite(value):
                if run_dir is not None:
                    np.savez(run_dir / "nan_batch.npz", clean=clean, degraded=degraded, step=step)
                raise NumericError(f"loss became {value} at step {step}"
                                   + (f"; batch dumped to {run_dir / 'nan_batch.npz'}" if run_dir else ""))
            loss.backward()
            opt.step(lr)
            result.history.append((step, lr, value))
            if writer:
                writer.writerow([step, step // spe, f"{lr:.9g}", f"{value:.9g}"])
            if log_fn:
                log_fn({"step": step, "lr": lr, "loss": value})

            done = step + 1
            if done % spe == 0 or done == end:
                epoch = math.ceil(done / spe)
                if val_pairs is not None and (epoch % cfg.eval_every == 0 or done == total):
                    avg = evaluate(net, classifier, val_pairs).average["psnr"]
                    result.val_history.append((done, avg))
                    if avg > result.best_psnr:
                        result.best_psnr = avg
                        checkpoint("best.ckpt", done)
                if epoch % cfg.save_every == 0 or done == end:
                    checkpoint("last.ckpt", done)
    finally:
        if fh:
            fh.close()
    result.step = end
    return result


def train_psnr(net, classifier, pairs):
    preds = restore(net, classifier if net.cfg.use_cfe else None, pairs.degraded)
    return float(np.mean([psnr(p, g) for p, g in zip(preds, pairs.clean)]))


# ------------------------------------------------------------------ ablation

def _digest(arrays):
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k]).tobytes())
    return h.hexdigest()


def shared_init_audit(net_cfgs, seed):
    """Check that parameters common to all configs start bit-identical."""
    states = [dict(MDIRNet(c).initialize(seed).named_parameters()) for c in net_cfgs]
    common = set(states[0]).intersection(*states[1:])
    digests = {_digest({k: s[k].data for k in common}) for s in states}
    return {"shared_parameters": len(common), "identical": len(digests) == 1}


def run_ablation(train_pairs, test_pairs, classifier, net_cfg: NetConfig, cfg: TrainConfig,
                 seeds=(0, 1, 2), kernel_sizes=(), log_fn=None):
    """Train and evaluate each variant per seed; rows hold per-seed and median scores.

    Variant rows follow the order Baseline, + LDO, + LDO + CFE; the optional
    kernel sweep adds full-model rows for each kernel size.
    """
    variants = [(label, NetConfig(**{**net_cfg.to_dict(), **over})) for label, over in ABLATION_VARIANTS]
    variants += [(f"k={k}", NetConfig(**{**net_cfg.to_dict(), "kernel_size": k})) for k in kernel_sizes]
    audit = {s: shared_init_audit([c for _, c in variants[:len(ABLATION_VARIANTS)]], s) for s in seeds}
    rows = []
    for label, vcfg in variants:
        per_seed = []
        for s in seeds:
            t0 = time.perf_counter()
            run_cfg = TrainConfig(**{**cfg.to_dict(), "seed": s})
            res = train_restoration(train_pairs, run_cfg, vcfg, classifier=classifier)
            report = evaluate(res.net, classifier, test_pairs)
            per_seed.append(report)
            if log_fn:
                log_fn({"variant": label, "seed": s, "psnr": report.average["psnr"],
                        "ssim": report.average["ssim"], "seconds": time.perf_counter() - t0})
        rows.append({
            "variant": label,
            "net_config": vcfg.to_dict(),
            "seeds": list(seeds),
            "psnr": [r.average["psnr"] for r in per_seed],
            "ssim": [r.average["ssim"] for r in per_seed],
            "median_psnr": float(np.median([r.average["psnr"] for r in per_seed])),
            "median_ssim": float(np.median([r.average["ssim"] for r in per_seed])),
            "categories": {c: (None if per_seed[0].rows[c] is None else
                               float(np.median([r.rows[c]["psnr"] for r in per_seed])))
                           for c in CATEGORY_ORDER},
        })
    return {"rows": rows, "init_audit": {str(k): v for k, v in audit.items()}}


def format_ablation(report):
    lines = [f"{'variant':24s}{'median PSNR':>13s}{'median SSIM':>13s}   per-seed PSNR"]
    for r in report["rows"]:
        seeds = " ".join(f"{p:.3f}" for p in r["psnr"])
        lines.append(f"{r['variant']:24s}{r['median_psnr']:>13.3f}{r['median_ssim']:>13.4f}   {seeds}")
    return "\n".join(lines)


__all__ = [
    "ABLATION_VARIANTS", "CATEGORY_ORDER", "CLASSES", "ClassifierReport", "KERNEL_SWEEP",
    "MetricReport", "NumericError", "TrainConfig", "TrainResult", "evaluate", "evaluate_arrays",
    "format_ablation", "load_classifier", "load_network", "make_batch", "paired_crop",
    "restore", "run_ablation", "save_classifier", "save_training_checkpoint",
    "shared_init_audit", "train_classifier", "train_psnr", "train_restoration",
]
