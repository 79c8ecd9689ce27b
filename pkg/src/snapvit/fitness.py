"""Label-free fitness: PCA-projected cosine similarity to the original model."""

import dataclasses

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .pruner import SparsityRequest, extract_mask, fuse_scores, rank
from .vit import DEFAULT_CAPS, compact, embed


@dataclasses.dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (d, k), orthonormal columns
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self):
        return self.components.shape[1]

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components


def fit_pca(embeddings, k):
    """Top-k principal axes of centred data from the covariance eigendecomposition."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("PCA expects an (N, d) matrix")
    n, d = x.shape
    if not 1 <= k < n or k > d:
        raise DimensionError(f"need 1 <= k < N and k <= d, got k={k}, N={n}, d={d}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:k]
    w, v = w[order], v[:, order]
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(v[np.abs(v).argmax(axis=0), np.arange(k)])
    v = v * np.where(flip == 0, 1.0, flip)
    return PcaModel(mean, v, np.maximum(w, 0.0))


def cosine_rows(a, b):
    """Per-row cosine similarity; identical rows score exactly 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = np.sum(a * b, axis=1)
    den = np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1))
    sim = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    same = np.all(a == b, axis=1)
    sim[same] = 1.0
    return sim


@dataclasses.dataclass
class FitnessContext:
    """Frozen reference embeddings, their PCA and the sparsity grid."""

    images: np.ndarray
    reference: np.ndarray  # (N_S, d) original-model embeddings
    pca: PcaModel
    grid: tuple
    reference_proj: np.ndarray = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.size == 0 or np.any(g < 0) or np.any(g >= 1) or np.any(np.diff(g) <= 0):
            raise ConfigError(f"sparsity grid must be strictly increasing in [0, 1), got {self.grid}")
        self.grid = tuple(float(s) for s in g)
        if self.reference_proj is None:
            self.reference_proj = self.pca.transform(self.reference)


def build_context(weights, images, pca_k=32, grid=(0.1, 0.3, 0.5, 0.6)):
    """Embed the evaluation set once with the unpruned model and fit the PCA."""
    ref = embed(weights, images)
    return FitnessContext(images, ref, fit_pca(ref, pca_k), tuple(grid))


def similarity(ctx, weights, mask):
    """Mean per-sample cosine between PCA projections of pruned and reference embeddings."""
    if mask.is_all_keep():
        pruned = ctx.reference
    else:
        pruned = embed(compact(weights, mask, caps=None), ctx.images)
    return float(cosine_rows(ctx.pca.transform(pruned), ctx.reference_proj).mean())


def model_similarity(ctx, pruned_weights):
    """Like :func:`similarity` for a model that is already compacted."""
    pruned = embed(pruned_weights, ctx.images)
    return float(cosine_rows(ctx.pca.transform(pruned), ctx.reference_proj).mean())


def candidate_fitness(ctx, weights, local, census, c, caps=None, basis="params"):
    """Average similarity over the grid for factors ``c``; higher is better."""
    caps = DEFAULT_CAPS if caps is None else caps
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (census.n_units,):
        raise ContractError(f"factor vector must have {census.n_units} entries")
    ranking = rank(fuse_scores(local, c, census), census)
    sims = []
    for s in ctx.grid:
        mask, _ = extract_mask(ranking, SparsityRequest(s, basis), census, caps)
        sims.append(similarity(ctx, weights, mask))
    return float(np.mean(sims))
