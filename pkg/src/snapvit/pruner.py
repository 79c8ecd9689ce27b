"""Score fusion, global ranking and elastic mask extraction."""

import dataclasses

import numpy as np

from .analytics import flops, head_flops, neuron_flops
from .curvature import aggregate_to_structures
from .errors import ConfigError, ContractError, InfeasibleSparsityError
from .vit import DEFAULT_CAPS, Kind, PruneMask

BASES = ("structures", "params", "flops")


@dataclasses.dataclass(frozen=True)
class SparsityRequest:
    target: float
    basis: str = "params"

    def __post_init__(self):
        if not 0.0 <= self.target < 1.0:
            raise ConfigError(f"sparsity must lie in [0, 1), got {self.target}")
        if self.basis not in BASES:
            raise ConfigError(f"basis must be one of {BASES}, got {self.basis!r}")


@dataclasses.dataclass
class StructureRanking:
    """Census indices ordered from least to most important, plus provenance."""

    order: np.ndarray
    scores: np.ndarray  # fused score per census structure
    factors: np.ndarray  # winning block factors c
    local: np.ndarray  # local score per census structure
    mu: np.ndarray
    A: np.ndarray
    provenance: dict = dataclasses.field(default_factory=dict)

    def structures(self, census):
        return [census.structures[i] for i in self.order]


def fuse_scores(local, c, census):
    """``local[s] * c[unit(s)]``; structures without a unit keep factor 1."""
    scores = np.asarray(getattr(local, "score", local), dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (census.n_units,):
        raise ContractError(f"expected {census.n_units} factors, got shape {c.shape}")
    if scores.shape != (len(census),):
        raise ContractError(f"expected {len(census)} local scores, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)) or not np.all(np.isfinite(c)):
        raise ContractError("scores and factors must be finite")
    m = census.membership
    factor = np.where(m >= 0, c[np.maximum(m, 0)], 1.0)
    return scores * factor


def rank(fused, census):
    """Ascending order of fused scores; ties fall back to census order."""
    fused = np.asarray(fused, dtype=np.float64)
    if not np.all(np.isfinite(fused)):
        raise ContractError("fused scores must be finite")
    return np.argsort(fused, kind="stable")


def structure_costs(census, basis):
    """Per-structure budget weight and the basis total."""
    cfg = census.config
    is_head = census.is_head()
    if basis == "structures":
        return np.ones(len(census), dtype=np.int64), len(census)
    if basis == "params":
        w = census.owned_params()
        return w, int(w.sum())
    if basis == "flops":
        w = np.where(is_head, head_flops(cfg), neuron_flops(cfg)).astype(np.int64)
        return w, flops(cfg).total
    raise ConfigError(f"unknown basis {basis!r}")


def extract_mask(ranking, request, census, caps=DEFAULT_CAPS):
    """Drop structures in ranking order until the budget reaches the target.

    Structures whose removal would break their layer's minimum are skipped.
    Returns ``(mask, achieved_sparsity)``; the overshoot is below the weight of
    the last structure dropped.
    """
    order = getattr(ranking, "order", ranking)
    cfg = census.config
    weights, total = structure_costs(census, request.basis)
    target = request.target * total
    min_h, min_f = caps.min_heads(cfg.n_heads), caps.min_ffn(cfg.d_ff)
    kept_h = [cfg.n_heads] * cfg.n_layers
    kept_f = [cfg.d_ff] * cfg.n_layers
    keep = np.ones(len(census), dtype=bool)
    removed = 0
    tol = 1e-12 * total
    structures = census.structures
    for idx in order:
        if removed >= target - tol:
            break
        s = structures[idx]
        if s.kind == Kind.HEAD:
            if kept_h[s.layer] <= min_h:
                continue
            kept_h[s.layer] -= 1
        else:
            if kept_f[s.layer] <= min_f:
                continue
            kept_f[s.layer] -= 1
        keep[idx] = False
        removed += int(weights[idx])
    if removed < target - tol:
        binding = [(l, "heads") for l in range(cfg.n_layers) if kept_h[l] <= min_h]
        binding += [(l, "ffn") for l in range(cfg.n_layers) if kept_f[l] <= min_f]
        first = binding[0] if binding else None
        raise InfeasibleSparsityError(
            f"sparsity {request.target} ({request.basis}) exceeds the feasible maximum "
            f"{removed / total:.4f}; binding constraint: layer {first[0]} {first[1]}"
            if first else f"sparsity {request.target} infeasible",
            binding=binding,
        )
    return PruneMask.from_keep_vector(census, keep), removed / total


def max_sparsity(census, basis="params", caps=DEFAULT_CAPS):
    """Largest sparsity the caps allow."""
    cfg = census.config
    weights, total = structure_costs(census, basis)
    is_head = census.is_head()
    per_layer_h = cfg.n_heads - caps.min_heads(cfg.n_heads)
    per_layer_f = cfg.d_ff - caps.min_ffn(cfg.d_ff)
    w_h = weights[is_head][0] if is_head.any() else 0
    w_f = weights[~is_head][0] if (~is_head).any() else 0
    return cfg.n_layers * (per_layer_h * int(w_h) + per_layer_f * int(w_f)) / total


def magnitude_scores(weights, census):
    """Baseline: mean squared weight over each structure's owned slices."""
    sq = {k: np.asarray(v, dtype=np.float64) ** 2 for k, v in weights.params.items()}
    return aggregate_to_structures(sq, census, loss_kind="magnitude")
