"""``snapvit`` command line: prune, extract, eval, flops, sweep, make-toy."""

import argparse
import json
import os
import sys

import numpy as np

from . import analytics
from .config import RunConfig
from .correction import correct_model
from .data import DatasetSpec, load_dataset
from .errors import ConfigError, SnapVitError
from .fitness import build_context, model_similarity
from .pruner import BASES, SparsityRequest, extract_mask
from .report import plot_sweep, sweep, write_csv
from .search import load_ranking, ranking_census, resolve_threads, run_snapvit, save_ranking
from .serialization import load_checkpoint, save_checkpoint
from .toy import train_toy
from .vit import VIT_B16, VIT_L16, VIT_S16, compact, embed

PRESETS = {"vit-s16": VIT_S16, "vit-b16": VIT_B16, "vit-l16": VIT_L16}


def _grid(text):
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")


def _run_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    kw = {}
    for flag, field in (("seed", "seed"), ("iters", "iters"), ("grid", "grid"),
                        ("pca_k", "pca_k"), ("basis", "basis"), ("out", "out")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[field] = v
    if getattr(args, "checkpoint", None):
        kw["checkpoint"] = args.checkpoint
    if getattr(args, "samples", None):
        kw["n_samples_grad"] = kw["n_samples_fitness"] = args.samples
    cfg = cfg.replace(**kw)
    need = cfg.n_samples_grad + cfg.n_samples_fitness
    if cfg.dataset.kind == "synthetic-shapes" and cfg.dataset.n_samples < need:
        d = cfg.dataset.to_dict()
        d["n_samples"] = need
        cfg = cfg.replace(dataset=DatasetSpec.from_dict(d))
    if not cfg.checkpoint:
        raise ConfigError("no checkpoint given (--checkpoint or config 'checkpoint')")
    return cfg


def _dataset(args, default=None, n=None):
    """Dataset from --config if given, else ``default`` (synthetic)."""
    spec = RunConfig.load(args.config).dataset if getattr(args, "config", None) else default
    spec = spec or DatasetSpec()
    if n is not None and spec.kind == "synthetic-shapes":
        d = spec.to_dict()
        d["n_samples"] = n
        spec = DatasetSpec.from_dict(d)
    return load_dataset(spec)


def cmd_prune(args):
    cfg = _run_config(args)
    weights = load_checkpoint(cfg.checkpoint)
    data = load_dataset(cfg.dataset)
    threads = resolve_threads(args.threads)

    def progress(t, best, gen, _factors):
        print(f"iter {t:4d}  best {best:.6f}  generation {gen:.6f}", flush=True)

    ranking = run_snapvit(weights, data, cfg, on_iteration=progress, threads=threads)
    save_ranking(cfg.out, ranking)
    _emit({"ranking": cfg.out, "mode": ranking.provenance["mode"],
           "best_fitness": ranking.provenance["best_fitness"],
           "n_structures": int(len(ranking.order)), "n_units": int(len(ranking.factors))})
    return 0


def cmd_extract(args):
    ranking = load_ranking(args.ranking)
    census = ranking_census(ranking)
    prov = ranking.provenance["config"]
    cfg = RunConfig.from_dict(prov)
    weights = load_checkpoint(args.checkpoint or cfg.checkpoint)
    basis = args.basis or cfg.basis
    mask, achieved = extract_mask(ranking, SparsityRequest(args.sparsity, basis), census, cfg.caps)
    if args.correct:
        n_cal = args.samples or 256
        need = cfg.n_samples_grad + cfg.n_samples_fitness + n_cal
        data = load_dataset(cfg.dataset) if cfg.dataset.kind != "synthetic-shapes" else \
            load_dataset(DatasetSpec.from_dict({**cfg.dataset.to_dict(), "n_samples": need}))
        calib = data.images[cfg.n_samples_grad + cfg.n_samples_fitness:][:n_cal]
        if len(calib) == 0:
            calib = data.images[:n_cal]
        pruned = correct_model(weights, mask, calib, n_calib=n_cal, caps=cfg.caps)
    else:
        pruned = compact(weights, mask, cfg.caps)
    meta = {"sparsity": args.sparsity, "basis": basis, "achieved": achieved,
            "corrected": bool(args.correct), "ranking": ranking.provenance}
    save_checkpoint(args.out, pruned, meta)
    before, after = analytics.flops_of_weights(weights), analytics.flops_of_weights(pruned)
    _emit({"checkpoint": args.out, "requested": args.sparsity, "basis": basis,
           "achieved": achieved, "params_before": weights.n_params(),
           "params_after": pruned.n_params(), "gflops_before": before.gflops,
           "gflops_after": after.gflops, "corrected": bool(args.correct)})
    return 0


def cmd_eval(args):
    weights = load_checkpoint(args.checkpoint)
    out = {"checkpoint": args.checkpoint,
           "flops": analytics.flops_of_weights(weights).to_dict(),
           "params": weights.n_params()}
    n = args.samples or 512
    data = _dataset(args, n=n)
    if args.mode == "knn":
        if data.labels is None:
            raise ConfigError("knn evaluation needs a labelled dataset")
        half = len(data) // 2
        train, test = data.split(half, len(data) - half)
        out["knn_acc"] = analytics.knn_eval(
            embed(weights, train.images), train.labels,
            embed(weights, test.images), test.labels, k=args.k)
        out["k"] = args.k
    else:
        ref = load_checkpoint(args.reference) if args.reference else weights
        ctx = build_context(ref, data.images, args.pca_k or 32, grid=(0.0,))
        out["fitness"] = model_similarity(ctx, weights)
        out["reference"] = args.reference or args.checkpoint
    _emit(out, args.out)
    return 0


def cmd_flops(args):
    if args.checkpoint:
        report = analytics.flops_of_weights(load_checkpoint(args.checkpoint))
    else:
        report = analytics.flops(PRESETS[args.model])
    _emit(report.to_dict(), args.out)
    return 0


def cmd_sweep(args):
    ranking = load_ranking(args.ranking)
    census = ranking_census(ranking)
    cfg = RunConfig.from_dict(ranking.provenance["config"])
    weights = load_checkpoint(args.checkpoint or cfg.checkpoint)
    levels = args.levels or tuple(np.round(np.arange(0.0, 0.61, 0.1), 2))
    n = args.samples or 256
    skip = cfg.n_samples_grad + cfg.n_samples_fitness
    spec = DatasetSpec.from_dict({**cfg.dataset.to_dict(), "n_samples": skip + 3 * n}) \
        if cfg.dataset.kind == "synthetic-shapes" else cfg.dataset
    data = load_dataset(spec)
    held = data.images[skip:]
    if len(held) < n:
        held = data.images
    lab = data.labels is not None and len(data.images[skip:]) >= 3 * n
    train = test = None
    if lab:
        _, fit_set, train, test = data.split(skip, n, n, n)
        held = fit_set.images
    rows = sweep(weights, ranking, census, levels, held[:n], args.basis or cfg.basis, cfg.caps,
                 cfg.pca_k, train, test, k=args.k)
    write_csv(args.out, rows)
    png = os.path.splitext(args.out)[0] + ".png"
    plot_sweep(png, rows, title=f"elastic sweep ({args.basis or cfg.basis} basis)")
    print(f"wrote {args.out} and {png}")
    for r in rows:
        print(f"S={r.sparsity:.2f} achieved={r.achieved:.4f} fitness={r.fitness:.4f} "
              f"knn={r.knn_acc:.4f} gflops={r.gflops:.4f}")
    return 0


def cmd_make_toy(args):
    weights, _ = train_toy(seed=args.seed or 0, steps=args.steps,
                           log=lambda s, l: print(f"step {s:5d}  loss {l:.4f}", flush=True))
    save_checkpoint(args.out, weights, {"source": "toy", "seed": args.seed or 0, "steps": args.steps})
    print(f"wrote {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="snapvit", description="Single-shot structured ViT pruning.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--samples", type=int, help="sample count for the stage")
        sp.add_argument("--threads", type=int, help="worker threads (env SNAPVIT_THREADS wins)")
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("prune", help="search block factors and write a ranking artifact")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--iters", type=int)
    sp.add_argument("--grid", type=_grid)
    sp.add_argument("--pca-k", dest="pca_k", type=int)
    sp.add_argument("--basis", choices=BASES)
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("extract", help="cut a compacted checkpoint from a ranking")
    common(sp, "pruned.snapvit")
    sp.add_argument("ranking")
    sp.add_argument("--checkpoint")
    sp.add_argument("--sparsity", type=float, required=True)
    sp.add_argument("--basis", choices=BASES)
    sp.add_argument("--correct", action="store_true", help="apply weight correction")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("eval", help="k-NN accuracy or fitness of a checkpoint")
    common(sp)
    sp.add_argument("checkpoint")
    sp.add_argument("--mode", choices=("knn", "fitness"), default="knn")
    sp.add_argument("--reference", help="original checkpoint for fitness mode")
    sp.add_argument("--pca-k", dest="pca_k", type=int)
    sp.add_argument("-k", type=int, default=20)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("flops", help="theoretical FLOPs report")
    sp.add_argument("--model", choices=sorted(PRESETS), default="vit-b16")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_flops)

    sp = sub.add_parser("sweep", help="CSV + figure over many sparsities from one ranking")
    common(sp, "sweep.csv")
    sp.add_argument("ranking")
    sp.add_argument("--checkpoint")
    sp.add_argument("--levels", type=_grid)
    sp.add_argument("--basis", choices=BASES)
    sp.add_argument("-k", type=int, default=20, help="k-NN neighbours")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("make-toy", help="train the small reference model")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=1500)
    sp.add_argument("--out", default="toy.snapvit")
    sp.set_defaults(func=cmd_make_toy)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SnapVitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
