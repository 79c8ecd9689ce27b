import numpy as np
import pytest

from snapvit.config import RunConfig
from snapvit.data import DatasetSpec, synth_dataset
from snapvit.errors import ConfigError, FormatError, InfeasibleSparsityError
from snapvit.search import (decode_ranking, encode_ranking, load_ranking, ranking_census,
                            resolve_threads, run_snapvit, save_ranking)
from snapvit.ssl import CropSpec
from snapvit.vit import init_weights, structure_census

from conftest import TINY

CFG = RunConfig(iters=4, grid=(0.2, 0.4), n_samples_grad=8, n_samples_fitness=12, pca_k=4,
                batch_size=4, crop=CropSpec(n_local=2, global_size=16, local_size=8))


@pytest.fixture(scope="module")
def data():
    return synth_dataset(DatasetSpec(n_samples=24, image_size=16))


@pytest.fixture(scope="module")
def weights():
    return init_weights(TINY, seed=3, n_prototypes=32, dtype=np.float64)


def test_local_only_is_flagged(weights, data):
    r = run_snapvit(weights, data, CFG.replace(iters=0))
    census = structure_census(TINY)
    assert r.provenance["local_only"] and r.provenance["mode"] == "local-only"
    np.testing.assert_array_equal(r.factors, np.ones(census.n_units))
    np.testing.assert_array_equal(r.scores, r.local)


def test_search_is_deterministic_and_best_is_monotone(weights, data):
    seen = []
    a = run_snapvit(weights, data, CFG, on_iteration=lambda *x: seen.append(x))
    b = run_snapvit(weights, data, CFG)
    assert encode_ranking(a) == encode_ranking(b)
    hist = a.provenance["history"]
    assert len(hist) == 4 and all(x <= y for x, y in zip(hist, hist[1:]))
    assert [s[0] for s in seen] == [1, 2, 3, 4]
    assert a.provenance["best_fitness"] == hist[-1]
    np.testing.assert_array_equal(seen[-1][3], a.factors)


def test_callback_snapshot_equals_shorter_run(weights, data):
    seen = {}
    run_snapvit(weights, data, CFG, on_iteration=lambda t, best, gen, c: seen.setdefault(t, (best, c)))
    short = run_snapvit(weights, data, CFG.replace(iters=2))
    assert short.provenance["best_fitness"] == seen[2][0]
    np.testing.assert_array_equal(short.factors, seen[2][1])


def test_threads_give_same_result(weights, data):
    a = run_snapvit(weights, data, CFG.replace(iters=2))
    b = run_snapvit(weights, data, CFG.replace(iters=2), threads=3)
    assert encode_ranking(a) == encode_ranking(b)


def test_ranking_file_round_trip(weights, data, tmp_path):
    r = run_snapvit(weights, data, CFG.replace(iters=1))
    p = tmp_path / "r.snaprank"
    save_ranking(p, r)
    back = load_ranking(p)
    assert encode_ranking(back) == p.read_bytes()
    assert len(ranking_census(back)) == len(r.order)
    blob = bytearray(p.read_bytes())
    with pytest.raises(FormatError):
        decode_ranking(bytes(blob[:-3]))


def test_input_validation(weights, data):
    with pytest.raises(ConfigError):
        run_snapvit(weights, data, CFG.replace(n_samples_grad=20))
    with pytest.raises(InfeasibleSparsityError):
        run_snapvit(weights, data, CFG.replace(grid=(0.2, 0.97)))


def test_thread_env_override(monkeypatch):
    monkeypatch.setenv("SNAPVIT_THREADS", "3")
    assert resolve_threads(8) == 3
    monkeypatch.setenv("SNAPVIT_THREADS", "many")
    with pytest.raises(ConfigError):
        resolve_threads()
    monkeypatch.delenv("SNAPVIT_THREADS")
    assert resolve_threads(2) == 2 and resolve_threads() >= 1
