import numpy as np
import pytest

from snapvit.data import DatasetSpec, synth_dataset
from snapvit.serialization import load_checkpoint, save_checkpoint
from snapvit.toy import toy_config, train_toy
from snapvit.vit import DEFAULT_CAPS, PruneMask, ViTConfig, init_weights

TINY = ViTConfig(image_size=16, patch_size=8, n_channels=3, d_model=16, n_layers=2,
                 n_heads=2, d_key=8, d_ff=24, n_classes=4)

# criterion number -> one-line verdict, echoed in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def random_mask(cfg, rng, caps=DEFAULT_CAPS):
    mask = PruneMask.all_keep(cfg)
    for l in range(cfg.n_layers):
        nh = rng.integers(caps.min_heads(cfg.n_heads), cfg.n_heads + 1)
        nf = rng.integers(caps.min_ffn(cfg.d_ff), cfg.d_ff + 1)
        mask.heads[l][:] = False
        mask.heads[l][rng.choice(cfg.n_heads, nh, replace=False)] = True
        mask.ffn[l][:] = False
        mask.ffn[l][rng.choice(cfg.d_ff, nf, replace=False)] = True
    return mask


@pytest.fixture
def tiny_weights():
    return init_weights(TINY, seed=3, n_prototypes=32, dtype=np.float64)


@pytest.fixture(scope="session")
def toy_path(tmp_path_factory):
    """The briefly trained toy model, written once per session."""
    path = tmp_path_factory.mktemp("toy") / "toy.snapvit"
    weights, _ = train_toy(seed=0)
    save_checkpoint(path, weights, {"source": "toy"})
    return path


@pytest.fixture(scope="session")
def toy_weights(toy_path):
    return load_checkpoint(toy_path)


@pytest.fixture(scope="session")
def shapes():
    return synth_dataset(DatasetSpec(n_samples=512, seed=0))


@pytest.fixture
def random_toy():
    return init_weights(toy_config(), seed=1)
