"""Single-shot search driver and the ranking artifact format."""

import concurrent.futures
import os

import numpy as np

from .analytics import cka_sigma_init
from .config import RunConfig
from .curvature import aggregate_to_structures, local_diag_hessian
from .errors import ConfigError, FormatError, InfeasibleSparsityError
from .fitness import build_context, candidate_fitness
from .pruner import StructureRanking, fuse_scores, max_sparsity, rank
from .serialization import RANKING_MAGIC, decode, encode, json_record, record_json
from .ssl import SslHead
from .vit import ViTConfig, structure_census
from .xnes import XNES

FORMAT_VERSION = 1


def resolve_threads(threads=None):
    """SNAPVIT_THREADS wins over the argument; default is the core count."""
    env = os.environ.get("SNAPVIT_THREADS")
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"SNAPVIT_THREADS must be an integer, got {env!r}") from None
    if threads is None or threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def _evaluate(pool, fn, candidates):
    if pool is None:
        return np.array([fn(c) for c in candidates])
    return np.array(list(pool.map(fn, candidates)))


def run_snapvit(weights, dataset, config=None, on_iteration=None, threads=1):
    """Local scores, xNES over block factors, then the fused global ranking.

    The first ``n_samples_grad`` images feed the gradients, the next
    ``n_samples_fitness`` the fitness, so the two sets are disjoint.
    ``on_iteration(t, best_so_far, generation_best, best_factors)`` is called
    after every tell; a run of T iterations therefore also exposes the exact
    outcome of every shorter run with the same seed. With ``iters == 0`` the ranking is purely local (all factors 1).
    """
    config = RunConfig() if config is None else config
    images = dataset.images
    n_g, n_f = config.n_samples_grad, config.n_samples_fitness
    if n_g + n_f > len(images):
        raise ConfigError(f"need {n_g + n_f} images (gradient + fitness), dataset has {len(images)}")
    census = structure_census(weights.config, config.unit_mode)
    top = max(config.grid)
    feasible = max_sparsity(census, config.basis, config.caps)
    if top > feasible:
        raise InfeasibleSparsityError(
            f"grid point {top} exceeds the feasible maximum {feasible:.4f}", binding=[])

    labels = None if dataset.labels is None else dataset.labels[:n_g]
    rng = np.random.default_rng([config.seed, 1])
    head = SslHead.from_weights(weights)
    per_param = local_diag_hessian(weights, head, images[:n_g], n_g, config.batch_size, rng,
                                   config.crop, config.loss_kind, labels)
    local = aggregate_to_structures(per_param, census, n_g, config.loss_kind).score

    b = census.n_units
    mu = np.zeros(b)
    a = np.zeros((b, b))
    history = []
    if config.iters == 0:
        best_c, best_f = np.ones(b), None
    else:
        sigma0 = None
        if config.sigma_init == "cka":
            sigma0 = cka_sigma_init(weights, images[:n_g], config.cka_samples, census).sigma0
        es = XNES(b, sigma_init=sigma0, seed=config.seed, popsize=config.popsize or None,
                  eta_mu=config.eta_mu, eta_sigma=config.eta_sigma or None)
        ctx = build_context(weights, images[n_g:n_g + n_f], config.pca_k, config.grid)

        def fitness(c):
            return candidate_fitness(ctx, weights, local, census, c, config.caps, config.basis)

        best_c, best_f = None, -np.inf
        pool = concurrent.futures.ThreadPoolExecutor(threads) if threads > 1 else None
        try:
            for t in range(config.iters):
                cands = es.ask()
                fit = _evaluate(pool, fitness, cands)
                k = int(np.argmax(fit))
                if fit[k] > best_f:
                    best_f, best_c = float(fit[k]), cands[k].copy()
                es.tell(fit)
                history.append(best_f)
                if on_iteration is not None:
                    on_iteration(t + 1, best_f, float(fit[k]), best_c.copy())
        finally:
            if pool is not None:
                pool.shutdown()
        mu, a = es.mu.copy(), es.A.copy()

    fused = fuse_scores(local, best_c, census)
    recorded = config.to_dict()
    del recorded["out"]  # where the artifact is written must not change its bytes
    provenance = {
        "format_version": FORMAT_VERSION,
        "config": recorded,
        "model": weights.config.to_dict(),
        "n_structures": len(census),
        "n_units": b,
        "local_only": config.iters == 0,
        "mode": "local-only" if config.iters == 0 else "search",
        "best_fitness": best_f,
        "history": history,
    }
    return StructureRanking(rank(fused, census), fused, np.asarray(best_c, dtype=np.float64),
                            local, mu, a, provenance)


def encode_ranking(ranking):
    records = [
        ("__provenance__", json_record(ranking.provenance)),
        ("order", np.asarray(ranking.order, dtype=np.int64)),
        ("scores", np.asarray(ranking.scores, dtype=np.float64)),
        ("local", np.asarray(ranking.local, dtype=np.float64)),
        ("factors", np.asarray(ranking.factors, dtype=np.float64)),
        ("mu", np.asarray(ranking.mu, dtype=np.float64)),
        ("A", np.asarray(ranking.A, dtype=np.float64)),
    ]
    return encode(RANKING_MAGIC, records)


def decode_ranking(blob):
    recs = dict(decode(RANKING_MAGIC, blob))
    missing = {"__provenance__", "order", "scores", "local", "factors", "mu", "A"} - set(recs)
    if missing:
        raise FormatError(f"ranking artifact lacks records {sorted(missing)}")
    prov = record_json(recs["__provenance__"])
    if prov.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported ranking format version {prov.get('format_version')}")
    return StructureRanking(recs["order"], recs["scores"], recs["factors"], recs["local"],
                            recs["mu"], recs["A"], prov)


def save_ranking(path, ranking):
    with open(path, "wb") as fh:
        fh.write(encode_ranking(ranking))


def load_ranking(path):
    with open(path, "rb") as fh:
        return decode_ranking(fh.read())


def ranking_census(ranking):
    """Census matching the artifact's model and unit mode."""
    prov = ranking.provenance
    census = structure_census(ViTConfig.from_dict(prov["model"]), prov["config"]["unit_mode"])
    if len(census) != len(ranking.order):
        raise FormatError("ranking does not match the recorded model census")
    return census
