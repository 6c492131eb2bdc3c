"""Balanced seven-category dataset synthesis and manifest I/O.

Layout::

    out_dir/
      clean/<stem>.png               clean images at the working resolution
      <category>/{train,test}/<j>_<stem>.png
      manifest.jsonl                 one JSON object per degraded image

Every image's randomness is derived from ``(seed, split, category, index)``,
so serial and parallel runs write identical bytes.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..classifier import encode_labels
from .degrade import CATEGORIES, DegradationSpec, apply_mixed, sample_spec

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
SPLITS = ("train", "test")


class DatasetError(RuntimeError):
    pass


def load_image(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def save_image(path, img):
    arr = np.clip(np.asarray(img, dtype=np.float64), 0, 1)
    u8 = np.round(arr * 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u8, "RGB").save(path, format="PNG")


def center_square(img, size):
    """Center-crop to a square and resize to ``size`` x ``size``."""
    _, H, W = img.shape
    s = min(H, W)
    y0, x0 = (H - s) // 2, (W - s) // 2
    crop = img[:, y0:y0 + s, x0:x0 + s]
    if s == size:
        return crop.copy()
    u8 = np.round(np.clip(crop, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    out = Image.fromarray(u8).resize((size, size), Image.BICUBIC)
    return np.asarray(out, dtype=np.float32).transpose(2, 0, 1) / 255.0


@dataclass
class Manifest:
    root: Path
    entries: list = field(default_factory=list)

    def split(self, name):
        return [e for e in self.entries if e["split"] == name]

    def categories(self, split=None):
        rows = self.entries if split is None else self.split(split)
        return sorted({e["category"] for e in rows})

    def counts(self, split=None):
        rows = self.entries if split is None else self.split(split)
        out = {}
        for e in rows:
            out[e["category"]] = out.get(e["category"], 0) + 1
        return out

    def restrict(self, categories):
        cats = set(categories)
        return Manifest(self.root, [e for e in self.entries if e["category"] in cats])

    def path(self, rel):
        return self.root / rel

    def write(self, path=None):
        path = Path(path or self.root / "manifest.jsonl")
        with open(path, "w") as f:
            for e in self.entries:
                f.write(json.dumps(e, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        if not path.exists():
            raise DatasetError(f"manifest not found: {path}")
        with open(path) as f:
            entries = [json.loads(line) for line in f if line.strip()]
        return cls(path.parent, entries)


def list_clean_images(clean_dir):
    clean_dir = Path(clean_dir)
    if not clean_dir.is_dir():
        raise DatasetError(f"clean image directory not found: {clean_dir}")
    files = sorted(p for p in clean_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    images = []
    for p in files:
        try:
            images.append((p.stem, load_image(p)))
        except OSError as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
    if not images:
        raise DatasetError(f"no readable images in {clean_dir}")
    return images


def _pools(n_images, n_train, n_test, seed):
    perm = np.random.default_rng([seed, 7919]).permutation(n_images)
    if n_test and n_images > n_test:
        test_pool, train_pool = perm[:n_test], perm[n_test:]
    else:
        if n_test:
            log.warning("only %d clean images: train and test share content", n_images)
        test_pool = train_pool = perm
    return {"train": train_pool, "test": test_pool}


def _job_seed(seed, split, cat, j):
    return int(np.random.SeedSequence([seed, SPLITS.index(split), list(CATEGORIES).index(cat), j])
               .generate_state(1)[0])


def _make_one(job):
    clean, spec_dict, out_path = job
    degraded = apply_mixed(clean, DegradationSpec.from_dict(spec_dict))
    save_image(out_path, degraded)
    return out_path


def synth_dataset(clean_dir, out_dir, n_train, n_test=0, size=64, seed=0,
                  rain_density=0.04, snow_density=0.004, workers=1, clean_images=None):
    """Write a balanced dataset; returns the :class:`Manifest`.

    ``clean_images`` may be given directly as ``[(stem, array), ...]`` instead
    of reading ``clean_dir``.
    """
    if n_train <= 0 and n_test <= 0:
        raise DatasetError("every category would be empty: per-category counts must be positive")
    out_dir = Path(out_dir)
    images = clean_images if clean_images is not None else list_clean_images(clean_dir)
    images = [(stem, center_square(img, size)) for stem, img in images]
    for stem, img in images:
        save_image(out_dir / "clean" / f"{stem}.png", img)
    # reload so training pairs see exactly the quantized clean pixels
    clean = {stem: load_image(out_dir / "clean" / f"{stem}.png") for stem, _ in images}
    stems = [s for s, _ in images]
    pools = _pools(len(stems), n_train, n_test, seed)

    entries, jobs = [], []
    for split, count in (("train", n_train), ("test", n_test)):
        pool = pools[split]
        for cat, types in CATEGORIES.items():
            for j in range(count):
                stem = stems[pool[j % len(pool)]]
                s = _job_seed(seed, split, cat, j)
                spec = sample_spec(types, np.random.default_rng(s), seed=s,
                                   rain_density=rain_density, snow_density=snow_density)
                rel = f"{cat}/{split}/{j:05d}_{stem}.png"
                jobs.append((clean[stem], spec.to_dict(), out_dir / rel))
                entries.append({
                    "clean": f"clean/{stem}.png",
                    "degraded": rel,
                    "category": cat,
                    "labels": encode_labels(types).astype(int).tolist(),
                    "params": spec.to_dict(),
                    "seed": s,
                    "split": split,
                })
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            list(ex.map(_make_one, jobs, chunksize=8))
    else:
        for job in jobs:
            _make_one(job)
    manifest = Manifest(out_dir, entries)
    manifest.write()
    return manifest


@dataclass
class Pairs:
    clean: np.ndarray      # (N, 3, H, W) float32
    degraded: np.ndarray   # (N, 3, H, W) float32
    labels: np.ndarray     # (N, 4) float32
    categories: list

    def __len__(self):
        return len(self.categories)


def load_pairs(manifest: Manifest, split, categories=None):
    rows = manifest.split(split)
    if categories is not None:
        rows = [e for e in rows if e["category"] in set(categories)]
    if not rows:
        raise DatasetError(f"split {split!r} is empty")
    cache = {}

    def get(rel):
        if rel not in cache:
            cache[rel] = load_image(manifest.path(rel))
        return cache[rel]

    clean = np.stack([get(e["clean"]) for e in rows])
    degraded = np.stack([load_image(manifest.path(e["degraded"])) for e in rows])
    labels = np.array([e["labels"] for e in rows], dtype=np.float32)
    return Pairs(clean, degraded, labels, [e["category"] for e in rows])
