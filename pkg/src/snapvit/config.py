"""Run configuration shared by the CLI and written into every artifact."""

import dataclasses
import json

from .data import DatasetSpec
from .errors import ConfigError
from .pruner import BASES
from .ssl import CropSpec
from .vit import Caps


@dataclasses.dataclass(frozen=True)
class RunConfig:
    checkpoint: str = ""
    dataset: DatasetSpec = DatasetSpec()
    seed: int = 0
    iters: int = 50
    grid: tuple = (0.1, 0.3, 0.5, 0.6)
    n_samples_grad: int = 256
    n_samples_fitness: int = 256
    pca_k: int = 32
    crop: CropSpec = CropSpec()
    loss_kind: str = "ssl"
    sigma_init: str = "identity"
    unit_mode: str = "full"
    caps: Caps = Caps()
    batch_size: int = 16
    basis: str = "params"
    cka_samples: int = 128
    popsize: int = 0  # 0 -> 4 + floor(3 ln B)
    eta_mu: float = 1.0
    eta_sigma: float = 0.0  # 0 -> (9 + 3 ln B) / (5 B sqrt B)
    out: str = "ranking.snaprank"

    def __post_init__(self):
        if self.iters < 0:
            raise ConfigError("iters must be non-negative")
        if self.n_samples_grad < 1 or self.n_samples_fitness < 2:
            raise ConfigError("need at least 1 gradient sample and 2 fitness samples")
        if self.loss_kind not in ("ssl", "ce"):
            raise ConfigError(f"loss_kind must be 'ssl' or 'ce', got {self.loss_kind!r}")
        if self.sigma_init not in ("identity", "cka"):
            raise ConfigError(f"sigma_init must be 'identity' or 'cka', got {self.sigma_init!r}")
        if self.unit_mode not in ("full", "ffn_only"):
            raise ConfigError(f"unit_mode must be 'full' or 'ffn_only', got {self.unit_mode!r}")
        if self.basis not in BASES:
            raise ConfigError(f"basis must be one of {BASES}")
        if self.batch_size < 1 or self.pca_k < 1 or self.popsize < 0:
            raise ConfigError("batch_size and pca_k must be positive, popsize non-negative")
        object.__setattr__(self, "grid", tuple(float(s) for s in self.grid))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["dataset"] = self.dataset.to_dict()
        d["crop"] = self.crop.to_dict()
        d["caps"] = dataclasses.asdict(self.caps)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" in d:
            d["dataset"] = DatasetSpec.from_dict(d["dataset"])
        if "crop" in d:
            d["crop"] = CropSpec.from_dict(d["crop"])
        if "caps" in d:
            d["caps"] = Caps(**d["caps"])
        if "grid" in d:
            d["grid"] = tuple(d["grid"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
