"""Post-pruning weight correction by sequential second-order compensation.

Each pruned input column of an output-side matrix is removed in turn and its
contribution is redistributed over the columns not yet processed, using the
upper Cholesky factor of the inverse damped input Hessian.
"""

import dataclasses
import warnings

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import cholesky_inverse, cholesky_lower
from .vit import DEFAULT_CAPS, compact, forward


@dataclasses.dataclass
class LayerCalibration:
    """Damped input Hessian ``H = X X^T + lam I`` of one linear layer."""

    hessian: np.ndarray  # damped, (d_in, d_in)
    damping: float
    n_samples: int
    dead: np.ndarray  # inputs that were identically zero

    @classmethod
    def from_inputs(cls, x, percdamp=0.01):
        """``x`` holds one input vector per row, shape (N, d_in)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionError(f"calibration inputs must be (N, d_in), got {x.shape}")
        return cls.from_gram(x.T @ x, len(x), percdamp)

    @classmethod
    def from_gram(cls, gram, n_samples, percdamp=0.01):
        h = np.array(gram, dtype=np.float64)
        diag = np.diag(h).copy()
        dead = diag == 0
        h[dead, dead] = 1.0
        # damping is taken from the undamped diagonal
        lam = percdamp * float(diag.sum()) / len(diag)
        if lam <= 0:
            lam = percdamp
        h[np.diag_indices_from(h)] += lam
        return cls(0.5 * (h + h.T), lam, n_samples, dead)

    def inverse_factor(self):
        """Upper Cholesky factor U of H^{-1} (H^{-1} = U^T U)."""
        return cholesky_lower(cholesky_inverse(self.hessian)).T


def correct_layer(w, pruned_cols, calib, block=128):
    """Zero ``pruned_cols`` of ``w`` (d_out, d_in) and compensate the rest.

    Columns are visited left to right in blocks of ``block``; inside a block
    every update is applied immediately, and the accumulated block error is
    pushed to later blocks at the block boundary.
    """
    if block < 1:
        raise ContractError("block size must be at least 1")
    w0 = np.asarray(w)
    out_dtype = w0.dtype
    w = np.array(w0, dtype=np.float64)
    d_in = w.shape[1]
    pruned = np.zeros(d_in, dtype=bool)
    pruned[np.asarray(pruned_cols, dtype=np.int64)] = True
    if calib.hessian.shape != (d_in, d_in):
        raise DimensionError(f"calibration is {calib.hessian.shape}, layer has {d_in} inputs")
    if not pruned.any():
        return w0.copy()
    u = calib.inverse_factor()
    for i1 in range(0, d_in, block):
        i2 = min(i1 + block, d_in)
        w1 = w[:, i1:i2]
        err1 = np.zeros_like(w1)
        u1 = u[i1:i2, i1:i2]
        for i in range(i2 - i1):
            if not pruned[i1 + i]:
                continue
            e = w1[:, i] / u1[i, i]
            w1[:, i:] -= np.outer(e, u1[i, i:])
            err1[:, i] = e
        w[:, i1:i2] = w1
        w[:, i2:] -= err1 @ u[i1:i2, i2:]
    w[:, pruned] = 0.0
    return w.astype(out_dtype)


def reconstruction_error(w_ref, w_new, x):
    """``||(w_ref - w_new) x^T||_F`` for inputs ``x`` stored as rows."""
    diff = np.asarray(w_ref, np.float64) - np.asarray(w_new, np.float64)
    return float(np.linalg.norm(np.asarray(x, np.float64) @ diff.T))


def _capture(weights, images, key, batch_size=256):
    parts = []
    for lo in range(0, len(images), batch_size):
        cap = {}
        forward(weights, None, images[lo:lo + batch_size], capture=cap)
        parts.append(np.asarray(cap[key], dtype=np.float64))
    return np.concatenate(parts)


def correct_model(weights, mask, images, n_calib=256, block=128, percdamp=0.01,
                  caps=DEFAULT_CAPS, on_layer=None):
    """Correct every pruned layer in depth order, then compact.

    Inputs of each layer are recollected from the partially corrected model,
    so upstream corrections are seen downstream. ``on_layer(name, x, w_before,
    w_after)`` is called once per corrected matrix.
    """
    cfg = weights.config
    mask.validate(cfg, caps)
    if mask.is_all_keep():
        return weights.copy()
    images = images[:n_calib]
    widest = max(cfg.n_heads * cfg.d_key, cfg.d_ff)
    if len(images) * cfg.n_tokens < widest:
        warnings.warn(f"{len(images) * cfg.n_tokens} calibration vectors for a {widest}-wide layer",
                      stacklevel=2)
    work = weights.copy()
    p = work.params
    dk = cfg.d_key
    for l in range(cfg.n_layers):
        b = f"blocks.{l}."
        dead_heads = np.flatnonzero(~mask.heads[l])
        if dead_heads.size:
            cols = (dead_heads[:, None] * dk + np.arange(dk)).ravel()
            x = _capture(work, images, ("attn", l))
            name = b + "attn.proj.weight"
            before = p[name]
            p[name] = correct_layer(before, cols, LayerCalibration.from_inputs(x, percdamp), block)
            for m in ("attn.q.weight", "attn.k.weight", "attn.v.weight"):
                p[b + m] = p[b + m].copy()
                p[b + m][cols] = 0
            if on_layer is not None:
                on_layer(name, x, before, p[name])
        dead = np.flatnonzero(~mask.ffn[l])
        if dead.size:
            x = _capture(work, images, ("ffn", l))
            name = b + "ffn.out.weight"
            before = p[name]
            p[name] = correct_layer(before, dead, LayerCalibration.from_inputs(x, percdamp), block)
            # inputs feeding dead neurons are irrelevant; zero them without compensation
            p[b + "ffn.in.weight"] = p[b + "ffn.in.weight"].copy()
            p[b + "ffn.in.weight"][dead] = 0
            p[b + "ffn.in.bias"] = p[b + "ffn.in.bias"].copy()
            p[b + "ffn.in.bias"][dead] = 0
            if on_layer is not None:
                on_layer(name, x, before, p[name])
    return compact(work, mask, caps)
