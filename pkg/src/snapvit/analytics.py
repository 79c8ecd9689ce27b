"""Theoretical FLOPs, linear CKA and k-NN evaluation of embeddings."""

import dataclasses
import json

import numpy as np

from .errors import ContractError, DegenerateInputError
from .tensor import floor_eigenvalues
from .vit import Kind, forward


@dataclasses.dataclass
class FlopsReport:
    embeddings: int
    attention: list  # per layer: dict(qkv, qk_logits, softmax, reduction, projection)
    ffn: list  # per layer
    logits: int

    @property
    def total(self):
        return self.embeddings + sum(sum(a.values()) for a in self.attention) + sum(self.ffn) + self.logits

    @property
    def gflops(self):
        return self.total / 1e9

    @property
    def gmacs(self):
        return self.total / 2e9

    def to_dict(self):
        return {
            "embeddings": self.embeddings,
            "attention": self.attention,
            "ffn": self.ffn,
            "logits": self.logits,
            "total": self.total,
            "gflops": round(self.gflops, 1),
            "gmacs": round(self.gmacs, 1),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def head_flops(config):
    """FLOPs one attention head contributes per layer."""
    n, d, dk = config.n_tokens, config.d_model, config.d_key
    return 2 * n * 3 * d * dk + 2 * n * n * dk + 3 * n * n + 2 * n * n * dk + 2 * n * dk * d


def neuron_flops(config):
    """FLOPs one FFN hidden neuron contributes (both projections)."""
    return 4 * config.n_tokens * config.d_model


def flops_for_widths(config, widths):
    """FLOPs with ``widths[l] = (surviving heads, surviving FFN neurons)``.

    The FFN row generalises ``16 n d^2`` (which assumes a 4d hidden width)
    to ``4 n d d_ff``.
    """
    n, d, dk = config.n_tokens, config.d_model, config.d_key
    emb = 2 * config.n_patch * config.patch_size**2 * config.n_channels * d
    logits = 2 * d * config.n_classes
    attention, ffn = [], []
    for heads, width in widths:
        inner = dk * heads
        attention.append({
            "qkv": 2 * n * 3 * d * inner,
            "qk_logits": 2 * n * n * inner,
            "softmax": 3 * heads * n * n,
            "reduction": 2 * n * n * inner,
            "projection": 2 * n * inner * d,
        })
        ffn.append(4 * n * d * width)
    return FlopsReport(emb, attention, ffn, logits)


def flops(config, mask=None):
    if mask is None:
        widths = [(config.n_heads, config.d_ff)] * config.n_layers
    else:
        widths = [(int(h.sum()), int(f.sum())) for h, f in zip(mask.heads, mask.ffn)]
    return flops_for_widths(config, widths)


def flops_of_weights(weights):
    cfg = weights.config
    return flops_for_widths(cfg, [(weights.n_heads(l), weights.d_ff(l)) for l in range(cfg.n_layers)])


def _centered_gram(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError("CKA needs an (N, p) matrix with N >= 2")
    xc = x - x.mean(axis=0, keepdims=True)
    k = xc @ xc.T
    norm = np.linalg.norm(k)
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateInputError("activation matrix has zero variance")
    return k / norm


def linear_cka(x, y):
    """Linear CKA ``||Y~^T X~||_F^2 / (||X~^T X~||_F ||Y~^T Y~||_F)``."""
    if len(x) != len(y):
        raise ContractError("CKA inputs need the same number of rows")
    return float(np.sum(_centered_gram(x) * _centered_gram(y)))


@dataclasses.dataclass
class CkaMatrix:
    matrix: np.ndarray  # raw pairwise CKA
    sigma0: np.ndarray  # eigenvalue-floored, PD
    n_samples: int


def unit_activations(weights, images, census, batch_size=256):
    """Token-mean-pooled activations per unit, each (N, p)."""
    per_unit = [[] for _ in census.units]
    for lo in range(0, len(images), batch_size):
        cap = {}
        forward(weights, None, images[lo:lo + batch_size], capture=cap)
        for u, unit in enumerate(census.units):
            if unit.kind == Kind.HEAD:
                act = cap[("heads", unit.layer)][:, unit.index].mean(axis=1)
            else:
                ffn = cap[("ffn", unit.layer)]
                n = len(images[lo:lo + batch_size])
                act = ffn.reshape(n, -1, ffn.shape[-1]).mean(axis=1)
            per_unit[u].append(np.asarray(act, dtype=np.float64))
    return [np.concatenate(a) for a in per_unit]


def cka_sigma_init(weights, images, n_samples, census, floor=1e-6):
    """Pairwise linear CKA between unit activations, floored to PD."""
    acts = unit_activations(weights, images[:n_samples], census)
    grams = [_centered_gram(a) for a in acts]
    b = len(grams)
    m = np.empty((b, b))
    for i in range(b):
        m[i, i] = float(np.sum(grams[i] * grams[i]))
        for j in range(i + 1, b):
            m[i, j] = m[j, i] = float(np.sum(grams[i] * grams[j]))
    return CkaMatrix(m, floor_eigenvalues(m, floor), min(n_samples, len(images)))


def _l2n(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)


def knn_predict(train_emb, train_labels, test_emb, k=20):
    """Majority vote among the k nearest L2-normalised training embeddings.

    A tie in vote counts goes to the tied class whose member is nearest.
    """
    train_labels = np.asarray(train_labels)
    if k < 1 or k > len(train_labels):
        raise ContractError(f"k must be in [1, {len(train_labels)}], got {k}")
    tr, te = _l2n(train_emb), _l2n(test_emb)
    # squared distance between unit vectors is 2 - 2 cos
    dist = 2.0 - 2.0 * te @ tr.T
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    preds = np.empty(len(te), dtype=train_labels.dtype)
    for i, idx in enumerate(nearest):
        labels = train_labels[idx]
        classes, counts = np.unique(labels, return_counts=True)
        tied = set(classes[counts == counts.max()])
        preds[i] = next(lab for lab in labels if lab in tied)
    return preds


def knn_eval(train_emb, train_labels, test_emb, test_labels, k=20):
    """Top-1 accuracy of k-NN majority voting."""
    preds = knn_predict(train_emb, train_labels, test_emb, k)
    return float(np.mean(preds == np.asarray(test_labels)))
