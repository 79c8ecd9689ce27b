"""Multi-crop self-supervised loss used as the label-free gradient source.

The teacher is the frozen model itself: global crops pass through an untracked
forward, so only the student (local crop) branch reaches the tape.
"""

import dataclasses
import math

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .imaging import resize_window
from .vit import forward


@dataclasses.dataclass(frozen=True)
class CropSpec:
    n_global: int = 2
    n_local: int = 10
    global_scale: tuple = (0.25, 1.0)
    local_scale: tuple = (0.05, 0.25)
    global_size: int = 32
    local_size: int = 16

    def __post_init__(self):
        if self.n_global < 1 or self.n_local < 1:
            raise ConfigError("crop counts must be at least 1")
        for name in ("global_scale", "local_scale"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi <= 1.0:
                raise ConfigError(f"{name} must satisfy 0 < min <= max <= 1, got {(lo, hi)}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["global_scale"] = tuple(d["global_scale"])
        d["local_scale"] = tuple(d["local_scale"])
        return cls(**d)


@dataclasses.dataclass
class SslHead:
    """Prototype projection on L2-normalised embeddings plus temperatures."""

    weight: np.ndarray  # (n_prototypes, d_model)
    tau_teacher: float = 0.04
    tau_student: float = 0.1
    center: np.ndarray = None

    def __post_init__(self):
        if self.center is None:
            self.center = np.zeros(self.weight.shape[0])

    @classmethod
    def from_weights(cls, weights, **kwargs):
        return cls(weights["ssl_head.weight"], **kwargs)

    def teacher_probs(self, emb):
        """Centered, sharpened softmax over prototypes (no gradient)."""
        z = emb / np.maximum(np.linalg.norm(emb, axis=-1, keepdims=True), 1e-12)
        logits = (z @ self.weight.T - self.center) / self.tau_teacher
        logits = logits - logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=-1, keepdims=True)

    def student_log_probs(self, emb):
        z = ad.l2_normalize(ad.as_node(emb), axis=-1)
        logits = ad.linear(z, ad.Node(self.weight.astype(z.value.dtype)))
        return ad.log_softmax(logits / self.tau_student, axis=-1)


def _random_window(h, w, scale, rng, ratio=(3.0 / 4.0, 4.0 / 3.0), attempts=10):
    area = h * w
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(attempts):
        target = area * rng.uniform(*scale)
        aspect = math.exp(rng.uniform(*log_ratio))
        cw = math.sqrt(target * aspect)
        ch = math.sqrt(target / aspect)
        if 0 < cw <= w and 0 < ch <= h:
            top = rng.uniform(0.0, h - ch)
            left = rng.uniform(0.0, w - cw)
            return top, left, ch, cw
    return 0.0, 0.0, float(h), float(w)


def multi_crop(image, spec, rng):
    """Random-resized crops of one (C, H, W) image.

    Returns ``(globals, locals)`` lists of (C, s, s) arrays. Only random
    resized cropping is applied; there is no flip or colour jitter.
    """
    _, h, w = image.shape
    if min(h, w) < 1:
        raise ConfigError("empty image")
    globals_, locals_ = [], []
    for _ in range(spec.n_global):
        top, left, ch, cw = _random_window(h, w, spec.global_scale, rng)
        globals_.append(resize_window(image, top, left, ch, cw, spec.global_size, spec.global_size))
    for _ in range(spec.n_local):
        top, left, ch, cw = _random_window(h, w, spec.local_scale, rng)
        locals_.append(resize_window(image, top, left, ch, cw, spec.local_size, spec.local_size))
    return globals_, locals_


def batch_crops(images, spec, rng):
    """Crop every image; returns per-view stacks (N, C, s, s)."""
    per_image = [multi_crop(img, spec, rng) for img in images]
    globals_ = [np.stack([g[k] for g, _ in per_image]) for k in range(spec.n_global)]
    locals_ = [np.stack([l[m] for _, l in per_image]) for m in range(spec.n_local)]
    return globals_, locals_


def soft_cross_entropy(teacher_probs, student_log_probs):
    """Mean over the batch of ``-sum_j p_t[j] log p_s[j]`` (student may be tracked)."""
    n = teacher_probs.shape[0]
    t = ad.Node(teacher_probs.astype(student_log_probs.value.dtype))
    return ad.sum(t * student_log_probs) * (-1.0 / n)


def ssl_loss(weights, head, globals_, locals_, tape=None):
    """Sum over (global, local) view pairs of teacher-student soft cross-entropy.

    Averaged over the batch. Teacher distributions come from global crops with
    the centre subtracted and temperature ``tau_teacher``; student
    distributions from local crops at ``tau_student``.
    """
    n_g, n_l = len(globals_), len(locals_)
    n = globals_[0].shape[0]
    teacher_emb = forward(weights, None, np.concatenate(globals_), tape=None)
    p_t = head.teacher_probs(np.asarray(teacher_emb, dtype=np.float64))
    p_t = p_t.reshape(n_g, n, -1).sum(axis=0)  # sum over teacher views

    student_emb = forward(weights, None, np.concatenate(locals_), tape=tape)
    log_p_s = head.student_log_probs(student_emb)
    # tile the summed teacher distribution against every local view
    return soft_cross_entropy(np.tile(p_t, (n_l, 1)), log_p_s) * float(n_l)


def cross_entropy_loss(weights, images, labels, tape=None):
    """Supervised alternative gradient source through the classifier head."""
    emb = forward(weights, None, images, tape=tape)
    emb = ad.as_node(emb)
    if tape is not None:
        w = tape.param("head.weight", weights["head.weight"])
        b = tape.param("head.bias", weights["head.bias"])
    else:
        w, b = ad.Node(weights["head.weight"]), ad.Node(weights["head.bias"])
    logp = ad.log_softmax(ad.linear(emb, w, b), axis=-1)
    onehot = np.zeros(logp.shape, dtype=logp.value.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.sum(ad.Node(onehot) * logp) * (-1.0 / len(labels))
