import json

import numpy as np
import pytest

from snapvit.cli import main
from snapvit.config import RunConfig
from snapvit.data import DatasetSpec
from snapvit.report import read_csv
from snapvit.serialization import checkpoint_meta, load_checkpoint, save_checkpoint
from snapvit.ssl import CropSpec
from snapvit.vit import init_weights

from conftest import TINY


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ckpt = d / "tiny.snapvit"
    save_checkpoint(ckpt, init_weights(TINY, seed=3, n_prototypes=32))
    cfg = RunConfig(checkpoint=str(ckpt), iters=2, grid=(0.2, 0.4), n_samples_grad=8,
                    n_samples_fitness=12, pca_k=4, batch_size=4,
                    dataset=DatasetSpec(image_size=16, n_samples=20, n_classes=4),
                    crop=CropSpec(n_local=2, global_size=16, local_size=8))
    (d / "cfg.json").write_text(json.dumps(cfg.to_dict()))
    ranking = d / "r.snaprank"
    assert main(["prune", "--config", str(d / "cfg.json"), "--out", str(ranking)]) == 0
    return d, ckpt, ranking


def test_prune_writes_ranking(run, capsys):
    d, _, ranking = run
    assert ranking.read_bytes().startswith(b"SNAPRANK1")


def test_prune_bytes_do_not_depend_on_output_path(run):
    d, _, ranking = run
    other = d / "elsewhere.snaprank"
    assert main(["prune", "--config", str(d / "cfg.json"), "--out", str(other)]) == 0
    assert other.read_bytes() == ranking.read_bytes()


def test_extract_zero_sparsity_is_the_original(run):
    d, ckpt, ranking = run
    out = d / "s0.snapvit"
    assert main(["extract", str(ranking), "--sparsity", "0", "--out", str(out)]) == 0
    a, b = load_checkpoint(ckpt), load_checkpoint(out)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        np.testing.assert_array_equal(a[k], b[k])


def test_extract_with_correction_and_eval(run, capsys):
    d, ckpt, ranking = run
    out = d / "s30.snapvit"
    assert main(["extract", str(ranking), "--sparsity", "0.3", "--correct", "--samples", "16",
                 "--out", str(out)]) == 0
    meta = checkpoint_meta(out)
    assert meta["corrected"] and meta["achieved"] >= 0.3
    assert load_checkpoint(out).n_params() < load_checkpoint(ckpt).n_params()
    capsys.readouterr()
    assert main(["eval", str(out), "--mode", "fitness", "--reference", str(ckpt),
                 "--samples", "24", "--pca-k", "4", "--config", str(d / "cfg.json")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0.0 <= res["fitness"] <= 1.0
    assert main(["eval", str(out), "--mode", "knn", "-k", "3", "--samples", "24",
                 "--config", str(d / "cfg.json")]) == 0
    assert 0.0 <= json.loads(capsys.readouterr().out)["knn_acc"] <= 1.0


def test_sweep_writes_csv_and_figure(run):
    d, _, ranking = run
    csv = d / "sweep.csv"
    assert main(["sweep", str(ranking), "--levels", "0,0.2,0.4,0.6", "--samples", "8", "-k", "3",
                 "--out", str(csv)]) == 0
    rows = read_csv(csv)
    assert [r.sparsity for r in rows] == [0.0, 0.2, 0.4, 0.6]
    g = [r.gflops for r in rows]
    assert all(x >= y for x, y in zip(g, g[1:]))
    assert rows[0].fitness == 1.0
    png = d / "sweep.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_flops_command(capsys, tmp_path):
    assert main(["flops", "--model", "vit-b16", "--out", str(tmp_path / "f.json")]) == 0
    assert round(json.loads(capsys.readouterr().out)["gflops"], 1) == 35.1


def test_error_exit_codes(run, tmp_path, capsys):
    d, _, ranking = run
    assert main(["extract", str(ranking), "--sparsity", "0.99"]) == 2
    assert main(["flops", "--checkpoint", str(tmp_path / "missing.snapvit")]) == 1
    (tmp_path / "junk").write_bytes(b"nope")
    assert main(["extract", str(tmp_path / "junk"), "--sparsity", "0.1"]) == 2
    assert main(["prune"]) == 2
    assert "error:" in capsys.readouterr().err
