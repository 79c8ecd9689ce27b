"""Image resampling helpers shared by the model and the crop pipeline."""

import numpy as np


def bilinear_matrix(n_out, n_in, start=0.0, length=None):
    """Row-stochastic matrix resampling a 1-D signal window to ``n_out`` points.

    The window ``[start, start + length)`` of an ``n_in``-sample axis is mapped
    with half-pixel centres (``align_corners=False``). The full window at equal
    size is the identity exactly.
    """
    if length is None:
        length = n_in
    out = np.zeros((n_out, n_in))
    step = length / n_out
    for i in range(n_out):
        src = start + (i + 0.5) * step - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        out[i, lo] += 1.0 - frac
        if frac > 0.0:
            out[i, hi] += frac
    return out


def resize_window(image, top, left, height, width, out_h, out_w):
    """Bilinearly resample a window of a (C, H, W) image to (C, out_h, out_w)."""
    rows = bilinear_matrix(out_h, image.shape[1], top, height)
    cols = bilinear_matrix(out_w, image.shape[2], left, width)
    out = np.einsum("ij,cjk,lk->cil", rows, image, cols, optimize=True)
    return out.astype(image.dtype, copy=False)


def resize(image, out_h, out_w):
    return resize_window(image, 0.0, 0.0, image.shape[1], image.shape[2], out_h, out_w)


def patchify(images, patch):
    """(N, C, H, W) -> (N, n_patch, C * patch * patch), patches in row-major order."""
    n, c, h, w = images.shape
    gh, gw = h // patch, w // patch
    x = images.reshape(n, c, gh, patch, gw, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(n, gh * gw, c * patch * patch)
