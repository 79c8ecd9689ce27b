import json

import pytest

from snapvit.config import RunConfig
from snapvit.data import DatasetSpec
from snapvit.errors import ConfigError
from snapvit.vit import Caps


def test_round_trip_through_json(tmp_path):
    cfg = RunConfig(checkpoint="m.snapvit", seed=4, grid=[0.2, 0.4], caps=Caps(max_head_frac=0.5),
                    dataset=DatasetSpec(n_samples=99))
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.load(p) == cfg
    assert cfg.grid == (0.2, 0.4)


def test_unknown_keys_and_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"iterations": 3})
    for bad in ({"iters": -1}, {"loss_kind": "mse"}, {"unit_mode": "heads"}, {"basis": "bytes"},
                {"sigma_init": "random"}, {"n_samples_fitness": 1}):
        with pytest.raises(ConfigError):
            RunConfig(**bad)
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "missing.json")
