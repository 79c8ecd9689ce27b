"""A small ViT briefly trained on synthetic shapes, used as the desk-scale subject."""

import numpy as np

from .autodiff import GradTape
from .data import DatasetSpec, synth_dataset
from .ssl import cross_entropy_loss
from .vit import ViTConfig, init_weights


def toy_config(n_classes=8):
    return ViTConfig(image_size=32, patch_size=8, n_channels=3, d_model=64, n_layers=4,
                     n_heads=4, d_key=16, d_ff=128, n_classes=n_classes)


def _adam(params, grads, state, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    state["t"] += 1
    t = state["t"]
    for k, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state["m"].setdefault(k, np.zeros_like(g))
        v = state["v"].setdefault(k, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        if wd and params[k].ndim > 1:
            step = step + lr * wd * params[k]
        params[k] = (params[k] - step).astype(params[k].dtype)


def train_toy(seed=0, steps=1500, batch_size=32, lr=2e-3, n_train=2048, log=None):
    """Supervised cross-entropy training; returns (weights, training dataset)."""
    cfg = toy_config()
    weights = init_weights(cfg, seed=seed)
    data = synth_dataset(DatasetSpec(n_samples=n_train, seed=10_000 + seed))
    rng = np.random.default_rng(seed)
    state = {"t": 0, "m": {}, "v": {}}
    for step in range(steps):
        idx = rng.choice(n_train, size=batch_size, replace=False)
        tape = GradTape()
        loss = cross_entropy_loss(weights, data.images[idx], data.labels[idx], tape=tape)
        grads = tape.backward(loss)
        # cosine decay
        cur = lr * 0.5 * (1 + np.cos(np.pi * step / steps))
        _adam(weights.params, grads, state, cur, wd=0.01)
        if log is not None and (step % 50 == 0 or step == steps - 1):
            log(step, float(loss.value))
    return weights, data
