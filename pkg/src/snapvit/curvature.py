"""Diagonal curvature proxy from squared gradients, aggregated per structure."""

import dataclasses

import numpy as np

from .autodiff import GradTape
from .errors import CensusError, ContractError, DataError
from .ssl import CropSpec, SslHead, batch_crops, cross_entropy_loss, ssl_loss
from .vit import Kind, structure_census


@dataclasses.dataclass
class LocalScores:
    score: np.ndarray  # one non-negative value per census structure
    n_samples_used: int
    loss_kind: str = "ssl"


def accumulate_squared_gradients(grad_fn, batches, names=None):
    """Sum over batches of the element-wise squared batch gradient.

    ``grad_fn(batch)`` must return ``{name: gradient of the batch-mean loss}``.
    """
    total = None
    for batch in batches:
        grads = grad_fn(batch)
        if names is not None:
            grads = {k: grads[k] for k in names}
        if total is None:
            total = {k: np.asarray(g, dtype=np.float64) ** 2 for k, g in grads.items()}
        else:
            for k, g in grads.items():
                total[k] += np.asarray(g, dtype=np.float64) ** 2
    if total is None:
        raise DataError("no batches to accumulate")
    return total


def _batches(n_samples, batch_size):
    return [(i, min(i + batch_size, n_samples)) for i in range(0, n_samples, batch_size)]


def local_diag_hessian(weights, head, images, n_samples, batch_size=16, rng=None,
                       crop_spec=None, loss_kind="ssl", labels=None):
    """Per-parameter squared-gradient map for every prunable weight.

    Gradients of the batch-mean loss are squared and summed over batches of
    ``batch_size`` drawn in order from the first ``n_samples`` images.
    """
    if n_samples < 1:
        raise ContractError("n_samples must be at least 1")
    if len(images) == 0:
        raise DataError("empty dataset")
    if n_samples > len(images):
        raise DataError(f"requested {n_samples} samples, dataset has {len(images)}")
    if loss_kind not in ("ssl", "ce"):
        raise ContractError(f"unknown loss kind {loss_kind!r}")
    if loss_kind == "ce" and labels is None:
        raise DataError("cross-entropy gradients need labels")
    rng = np.random.default_rng(0) if rng is None else rng
    crop_spec = CropSpec() if crop_spec is None else crop_spec
    names = weights.prunable_names()

    def grad_fn(bounds):
        lo, hi = bounds
        tape = GradTape()
        if loss_kind == "ssl":
            g, l = batch_crops(images[lo:hi], crop_spec, rng)
            loss = ssl_loss(weights, head, g, l, tape=tape)
        else:
            loss = cross_entropy_loss(weights, images[lo:hi], np.asarray(labels[lo:hi]), tape=tape)
        return tape.backward(loss)

    return accumulate_squared_gradients(grad_fn, _batches(n_samples, batch_size), names)


def aggregate_to_structures(param_scores, census, n_samples_used=0, loss_kind="ssl"):
    """Mean of the squared-gradient entries each structure owns."""
    cfg = census.config
    dk = cfg.d_key
    out = np.empty(len(census))
    for i, s in enumerate(census.structures):
        b = f"blocks.{s.layer}."
        try:
            if s.kind == Kind.HEAD:
                rows = slice(s.index * dk, (s.index + 1) * dk)
                parts = [param_scores[b + "attn.q.weight"][rows],
                         param_scores[b + "attn.k.weight"][rows],
                         param_scores[b + "attn.v.weight"][rows],
                         param_scores[b + "attn.proj.weight"][:, rows]]
            else:
                j = s.index
                parts = [param_scores[b + "ffn.in.weight"][j],
                         param_scores[b + "ffn.in.bias"][j:j + 1],
                         param_scores[b + "ffn.out.weight"][:, j]]
        except (KeyError, IndexError) as exc:
            raise CensusError(f"no scores for structure {s}: {exc}") from None
        count = sum(p.size for p in parts)
        if count == 0:
            raise CensusError(f"structure {s} owns no parameters")
        out[i] = sum(float(p.sum()) for p in parts) / count
    return LocalScores(out, n_samples_used, loss_kind)


def local_scores(weights, images, n_samples, batch_size=16, seed=0, crop_spec=None,
                 loss_kind="ssl", labels=None, head=None):
    """Squared-gradient proxy aggregated to structures in one call."""
    head = SslHead.from_weights(weights) if head is None else head
    rng = np.random.default_rng(seed)
    ps = local_diag_hessian(weights, head, images, n_samples, batch_size, rng,
                            crop_spec, loss_kind, labels)
    return aggregate_to_structures(ps, structure_census(weights.config), n_samples, loss_kind)
