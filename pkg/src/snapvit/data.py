"""Datasets: procedural shapes, image directories and packed binary files.

Every loader yields float32 images of shape (N, C, H, W) in [0, 1] plus
integer labels.
"""

import dataclasses
import os

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, FormatError
from .serialization import DATA_MAGIC, json_record, read_file, record_json, write_file

SHAPES = ("rectangle", "ellipse", "h_stripes", "v_stripes", "d_stripes", "triangle", "cross", "ring")
IMAGE_EXTENSIONS = (".ppm", ".pgm", ".png")


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic-shapes"
    image_size: int = 32
    n_samples: int = 512
    seed: int = 0
    n_classes: int = 8
    paths: tuple = ()

    def __post_init__(self):
        if self.kind not in ("synthetic-shapes", "image-dir", "packed-binary"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "synthetic-shapes" and not 1 <= self.n_classes <= len(SHAPES):
            raise ConfigError(f"synthetic data supports 1..{len(SHAPES)} classes")
        if self.kind != "synthetic-shapes" and not self.paths:
            raise ConfigError(f"{self.kind} datasets need at least one path")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["paths"] = list(self.paths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["paths"] = tuple(d.get("paths", ()))
        return cls(**d)


@dataclasses.dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray = None

    def __len__(self):
        return len(self.images)

    def split(self, *sizes):
        """Consecutive disjoint slices of the requested sizes."""
        if sum(sizes) > len(self):
            raise DataError(f"need {sum(sizes)} samples, dataset has {len(self)}")
        out, lo = [], 0
        for n in sizes:
            labels = None if self.labels is None else self.labels[lo:lo + n]
            out.append(Dataset(self.images[lo:lo + n], labels))
            lo += n
        return out


def _render(shape, size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    ry, rx = rng.uniform(0.18, 0.4, size=2) * size
    period = rng.uniform(3.0, 7.0)
    phase = rng.uniform(0.0, period)
    dy, dx = (yy - cy) / ry, (xx - cx) / rx
    inside = (np.abs(dy) <= 1) & (np.abs(dx) <= 1)
    if shape == "rectangle":
        m = inside
    elif shape == "ellipse":
        m = dy**2 + dx**2 <= 1
    elif shape == "h_stripes":
        m = ((yy + phase) % period) < period / 2
    elif shape == "v_stripes":
        m = ((xx + phase) % period) < period / 2
    elif shape == "d_stripes":
        m = ((xx + yy + phase) % (1.5 * period)) < 0.75 * period
    elif shape == "triangle":
        m = inside & (dy >= 2 * np.abs(dx) - 1)
    elif shape == "cross":
        m = inside & ((np.abs(dy) < 0.3) | (np.abs(dx) < 0.3))
    elif shape == "ring":
        r = dy**2 + dx**2
        m = (r <= 1) & (r >= 0.45)
    else:
        raise ConfigError(f"unknown shape {shape!r}")
    return m


def synth_dataset(spec):
    """Round-robin classes; sample ``i`` depends only on ``(seed, i)``."""
    if spec.kind != "synthetic-shapes":
        raise ConfigError("synth_dataset needs a synthetic-shapes spec")
    size = spec.image_size
    images = np.empty((spec.n_samples, 3, size, size), dtype=np.float32)
    labels = np.arange(spec.n_samples, dtype=np.int64) % spec.n_classes
    for i in range(spec.n_samples):
        rng = np.random.default_rng([spec.seed, i])
        m = _render(SHAPES[labels[i]], size, rng)
        fg = rng.uniform(0.0, 1.0, size=3)
        bg = rng.uniform(0.0, 1.0, size=3)
        while np.abs(fg - bg).sum() < 0.6:
            bg = rng.uniform(0.0, 1.0, size=3)
        img = np.where(m[None], fg[:, None, None], bg[:, None, None])
        img = img + rng.normal(0.0, 0.04, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels)


def load_image_dirs(paths, image_size):
    """Images under ``<path>/<class name>/``; class ids follow sorted names across paths."""
    entries = []
    for root in paths:
        if not os.path.isdir(root):
            raise DataError(f"not a directory: {root}")
        for cls in sorted(os.listdir(root)):
            d = os.path.join(root, cls)
            if not os.path.isdir(d):
                continue
            for f in sorted(os.listdir(d)):
                if f.lower().endswith(IMAGE_EXTENSIONS):
                    entries.append((cls, os.path.join(d, f)))
    if not entries:
        raise DataError(f"no images found under {list(paths)}")
    classes = sorted({c for c, _ in entries})
    index = {c: i for i, c in enumerate(classes)}
    images = np.empty((len(entries), 3, image_size, image_size), dtype=np.float32)
    labels = np.empty(len(entries), dtype=np.int64)
    for i, (cls, path) in enumerate(entries):
        with Image.open(path) as im:
            im = im.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
            images[i] = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
        labels[i] = index[cls]
    return Dataset(images, labels)


def write_packed(path, dataset):
    """Store images as 8-bit (N, C, H, W) plus int64 labels."""
    imgs = np.clip(np.rint(dataset.images * 255.0), 0, 255).astype(np.uint8)
    records = [("__meta__", json_record({"n": len(dataset), "has_labels": dataset.labels is not None})),
               ("images", imgs)]
    if dataset.labels is not None:
        records.append(("labels", np.asarray(dataset.labels, dtype=np.int64)))
    write_file(path, DATA_MAGIC, records)


def read_packed(path):
    recs = dict(read_file(path, DATA_MAGIC))
    if "__meta__" not in recs or "images" not in recs:
        raise FormatError(f"{path}: packed dataset lacks its meta or images record")
    meta = record_json(recs["__meta__"])
    if meta.get("has_labels") != ("labels" in recs):
        raise FormatError(f"{path}: labels record does not match the header")
    images = recs["images"].astype(np.float32) / 255.0
    return Dataset(images, recs.get("labels"))


def load_dataset(spec):
    if spec.kind == "synthetic-shapes":
        return synth_dataset(spec)
    if spec.kind == "image-dir":
        ds = load_image_dirs(spec.paths, spec.image_size)
    else:
        parts = [read_packed(p) for p in spec.paths]
        labels = None
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        ds = Dataset(np.concatenate([p.images for p in parts]), labels)
    if spec.n_samples and spec.n_samples < len(ds):
        ds = ds.split(spec.n_samples)[0]
    return ds
