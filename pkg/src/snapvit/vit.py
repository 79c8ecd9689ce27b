"""A small pre-norm Vision Transformer with addressable prunable structures.

Weights follow the (out, in) convention. Prunable structures own disjoint
weight slices:

* attention head ``h`` of layer ``l`` owns rows ``h*d_key:(h+1)*d_key`` of the
  query, key and value projections and the same columns of the output
  projection;
* FFN neuron ``j`` owns row ``j`` of the input projection, entry ``j`` of its
  bias and column ``j`` of the output projection.

Embeddings, layer norms and every head (SSL or classifier) are never pruned.
"""

import dataclasses
import enum
import math
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ConstraintError, DimensionError
from .imaging import bilinear_matrix, patchify


@dataclasses.dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 8
    n_channels: int = 3
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_key: int = 16
    d_ff: int = 128
    n_classes: int = 0
    includes_cls_token: bool = True

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be divisible by patch_size")
        for name in ("image_size", "patch_size", "n_channels", "d_model", "n_heads", "d_key", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_layers < 0 or self.n_classes < 0:
            raise ConfigError("n_layers and n_classes must be non-negative")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def n_patch(self):
        return self.grid**2

    @property
    def n_tokens(self):
        return self.n_patch + int(self.includes_cls_token)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# Shapes used by the FLOPs tables.
VIT_S16 = ViTConfig(224, 16, 3, 384, 12, 6, 64, 1536, 1000)
VIT_B16 = ViTConfig(224, 16, 3, 768, 12, 12, 64, 3072, 1000)
VIT_L16 = ViTConfig(224, 16, 3, 1024, 24, 16, 64, 4096, 1000)
TOY = ViTConfig()


class Kind(enum.IntEnum):
    HEAD = 0
    FFN = 1


class StructureId(NamedTuple):
    layer: int
    kind: Kind
    index: int


class UnitId(NamedTuple):
    layer: int
    kind: Kind  # Kind.FFN denotes the whole FFN block
    index: int  # head index; 0 for FFN blocks


@dataclasses.dataclass(frozen=True)
class Caps:
    """Per-layer pruning caps: fraction of heads / FFN neurons that may go."""

    max_head_frac: float = 0.8
    max_ffn_frac: float = 0.95

    @staticmethod
    def _min_kept(n, frac):
        # round() strips float noise such as 0.2 * 12 = 2.4000000000000004
        return min(n, int(math.ceil(round((1.0 - frac) * n, 9))))

    def min_heads(self, n_heads):
        return self._min_kept(n_heads, self.max_head_frac)

    def min_ffn(self, d_ff):
        return self._min_kept(d_ff, self.max_ffn_frac)


DEFAULT_CAPS = Caps()


@dataclasses.dataclass
class Census:
    """All prunable structures, the correlation units and their membership."""

    config: ViTConfig
    structures: list
    units: list
    membership: np.ndarray  # unit index per structure, -1 when no unit applies
    unit_mode: str = "full"

    @property
    def n_units(self):
        return len(self.units)

    def __len__(self):
        return len(self.structures)

    def is_head(self):
        return np.array([s.kind == Kind.HEAD for s in self.structures])

    def layers(self):
        return np.array([s.layer for s in self.structures])

    def owned_params(self):
        """Number of weights each structure owns."""
        cfg = self.config
        head = 4 * cfg.d_key * cfg.d_model
        neuron = 2 * cfg.d_model + 1
        return np.where(self.is_head(), head, neuron).astype(np.int64)

    def index(self):
        return {s: i for i, s in enumerate(self.structures)}


def structure_census(config, unit_mode="full"):
    """Enumerate structures and units in (layer, kind, index) order.

    ``unit_mode='full'`` gives one unit per head plus one per FFN block
    (B = n_layers * (n_heads + 1)); ``'ffn_only'`` keeps only the FFN block
    units and leaves heads without a unit (membership -1).
    """
    if unit_mode not in ("full", "ffn_only"):
        raise ConfigError(f"unknown unit_mode {unit_mode!r}")
    structures, units, membership = [], [], []
    for layer in range(config.n_layers):
        head_units = []
        if unit_mode == "full":
            for h in range(config.n_heads):
                head_units.append(len(units))
                units.append(UnitId(layer, Kind.HEAD, h))
        ffn_unit = len(units)
        units.append(UnitId(layer, Kind.FFN, 0))
        for h in range(config.n_heads):
            structures.append(StructureId(layer, Kind.HEAD, h))
            membership.append(head_units[h] if head_units else -1)
        for j in range(config.d_ff):
            structures.append(StructureId(layer, Kind.FFN, j))
            membership.append(ffn_unit)
    return Census(config, structures, units, np.array(membership, dtype=np.int64), unit_mode)


@dataclasses.dataclass
class PruneMask:
    """Keep flags per layer: ``heads[l]`` (n_heads,) and ``ffn[l]`` (d_ff,)."""

    heads: list
    ffn: list

    @classmethod
    def all_keep(cls, config):
        return cls([np.ones(config.n_heads, bool) for _ in range(config.n_layers)],
                   [np.ones(config.d_ff, bool) for _ in range(config.n_layers)])

    @classmethod
    def from_keep_vector(cls, census, keep):
        cfg = census.config
        mask = cls.all_keep(cfg)
        for s, k in zip(census.structures, keep):
            if not k:
                if s.kind == Kind.HEAD:
                    mask.heads[s.layer][s.index] = False
                else:
                    mask.ffn[s.layer][s.index] = False
        return mask

    def keep_vector(self, census):
        return np.array([
            self.heads[s.layer][s.index] if s.kind == Kind.HEAD else self.ffn[s.layer][s.index]
            for s in census.structures
        ])

    def is_all_keep(self):
        return all(h.all() for h in self.heads) and all(f.all() for f in self.ffn)

    def validate(self, config, caps=DEFAULT_CAPS):
        if len(self.heads) != config.n_layers or len(self.ffn) != config.n_layers:
            raise ConstraintError("mask layer count does not match the model")
        for layer, (h, f) in enumerate(zip(self.heads, self.ffn)):
            if h.shape != (config.n_heads,) or f.shape != (config.d_ff,):
                raise ConstraintError(f"mask shape mismatch in layer {layer}")
            if caps is None:
                continue
            if h.sum() < caps.min_heads(config.n_heads):
                raise ConstraintError(
                    f"layer {layer} keeps {int(h.sum())} heads, needs {caps.min_heads(config.n_heads)}")
            if f.sum() < caps.min_ffn(config.d_ff):
                raise ConstraintError(
                    f"layer {layer} keeps {int(f.sum())} FFN neurons, needs {caps.min_ffn(config.d_ff)}")

    def copy(self):
        return PruneMask([h.copy() for h in self.heads], [f.copy() for f in self.ffn])


PRUNABLE_SUFFIXES = ("attn.q.weight", "attn.k.weight", "attn.v.weight", "attn.proj.weight",
                     "ffn.in.weight", "ffn.in.bias", "ffn.out.weight")


@dataclasses.dataclass
class ModelWeights:
    config: ViTConfig
    params: dict

    def __getitem__(self, name):
        return self.params[name]

    def n_heads(self, layer):
        return self.params[f"blocks.{layer}.attn.q.weight"].shape[0] // self.config.d_key

    def d_ff(self, layer):
        return self.params[f"blocks.{layer}.ffn.in.weight"].shape[0]

    def n_params(self, include_heads=False):
        return int(sum(v.size for k, v in self.params.items()
                       if include_heads or not k.startswith(("ssl_head.", "head."))))

    def prunable_names(self):
        return [f"blocks.{l}.{s}" for l in range(self.config.n_layers) for s in PRUNABLE_SUFFIXES]

    def astype(self, dtype):
        return ModelWeights(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self):
        return ModelWeights(self.config, {k: v.copy() for k, v in self.params.items()})

    @property
    def dtype(self):
        return self.params["patch_embed.weight"].dtype


def init_weights(config, seed=0, n_prototypes=256, dtype=np.float32):
    """Random initialisation (scaled normal) including an SSL prototype head."""
    rng = np.random.default_rng(seed)
    d, dk, H = config.d_model, config.d_key, config.n_heads
    patch_dim = config.n_channels * config.patch_size**2

    def normal(shape, fan_in):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)

    p = {
        "patch_embed.weight": normal((d, patch_dim), patch_dim),
        "patch_embed.bias": np.zeros(d),
        "cls_token": rng.normal(0.0, 0.02, size=d),
        "pos_embed": rng.normal(0.0, 0.02, size=(config.n_tokens, d)),
    }
    for l in range(config.n_layers):
        b = f"blocks.{l}."
        p[b + "norm1.weight"] = np.ones(d)
        p[b + "norm1.bias"] = np.zeros(d)
        p[b + "attn.q.weight"] = normal((H * dk, d), d)
        p[b + "attn.k.weight"] = normal((H * dk, d), d)
        p[b + "attn.v.weight"] = normal((H * dk, d), d)
        p[b + "attn.proj.weight"] = normal((d, H * dk), H * dk)
        p[b + "norm2.weight"] = np.ones(d)
        p[b + "norm2.bias"] = np.zeros(d)
        p[b + "ffn.in.weight"] = normal((config.d_ff, d), d)
        p[b + "ffn.in.bias"] = np.zeros(config.d_ff)
        p[b + "ffn.out.weight"] = normal((d, config.d_ff), config.d_ff)
        p[b + "ffn.out.bias"] = np.zeros(d)
    p["norm.weight"] = np.ones(d)
    p["norm.bias"] = np.zeros(d)
    if config.n_classes:
        p["head.weight"] = normal((config.n_classes, d), d)
        p["head.bias"] = np.zeros(config.n_classes)
    if n_prototypes:
        p["ssl_head.weight"] = normal((n_prototypes, d), d)
    return ModelWeights(config, {k: np.asarray(v, dtype=dtype) for k, v in p.items()})


def _pos_resample(grid_in, grid_out):
    r = bilinear_matrix(grid_out, grid_in)
    return np.kron(r, r)


def forward(weights, mask, images, tape=None, *, caps=DEFAULT_CAPS, capture=None):
    """Embed a batch of (N, C, H, W) images; returns the (N, d_model) CLS output.

    Images whose side differs from ``config.image_size`` (SSL local crops) get
    bilinearly resampled positional embeddings. With ``tape`` given, every
    weight becomes a tape parameter and the result is a tracked Node;
    otherwise a plain array is returned.

    A head with mask 0 has its attention output zeroed before the output
    projection. A layer whose FFN mask is all zero skips the FFN sublayer,
    bias included, exactly like a compacted layer of width 0.

    ``capture`` (a dict) receives pre-mask inputs of the output projections,
    keyed ``("attn", l)`` -> (N*T, H*d_key) and ``("ffn", l)`` -> (N*T, d_ff),
    plus per-head outputs ``("heads", l)`` -> (N, H, T, d_key).
    """
    cfg = weights.config
    if mask is not None:
        mask.validate(cfg, caps)
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != cfg.n_channels or images.shape[2] != images.shape[3]:
        raise DimensionError(f"expected (N, {cfg.n_channels}, S, S) images, got {images.shape}")
    side = images.shape[2]
    if side % cfg.patch_size:
        raise DimensionError(f"image side {side} not divisible by patch size {cfg.patch_size}")
    dtype = weights.dtype
    images = images.astype(dtype, copy=False)

    def W(name):
        v = weights.params[name]
        return tape.param(name, v) if tape is not None else ad.Node(v)

    n = images.shape[0]
    grid = side // cfg.patch_size
    patches = patchify(images, cfg.patch_size)
    x = ad.linear(ad.Node(patches), W("patch_embed.weight"), W("patch_embed.bias"))
    pos = W("pos_embed")
    offset = 1 if cfg.includes_cls_token else 0
    pos_patch = pos[offset:]
    if grid != cfg.grid:
        pos_patch = ad.matmul(ad.Node(_pos_resample(cfg.grid, grid).astype(dtype)), pos_patch)
    if cfg.includes_cls_token:
        cls = ad.broadcast_to(ad.reshape(W("cls_token"), (1, 1, cfg.d_model)), (n, 1, cfg.d_model))
        x = ad.concat([cls, x], axis=1)
        pos_all = ad.concat([pos[0:1], pos_patch], axis=0)
    else:
        pos_all = pos_patch
    x = x + pos_all
    t = x.shape[1]
    dk = cfg.d_key
    scale = 1.0 / math.sqrt(dk)

    for l in range(cfg.n_layers):
        b = f"blocks.{l}."
        n_h = weights.n_heads(l)
        head_keep = None if mask is None else mask.heads[l]
        if n_h and (head_keep is None or head_keep.any()):
            h = ad.layernorm(x, W(b + "norm1.weight"), W(b + "norm1.bias"))

            def split(z):
                return ad.transpose(ad.reshape(z, (n, t, n_h, dk)), (0, 2, 1, 3))

            q = split(ad.linear(h, W(b + "attn.q.weight")))
            k = split(ad.linear(h, W(b + "attn.k.weight")))
            v = split(ad.linear(h, W(b + "attn.v.weight")))
            att = ad.softmax(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * scale, axis=-1)
            o = ad.matmul(att, v)
            if capture is not None:
                capture[("heads", l)] = o.value
            o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (n, t, n_h * dk))
            if capture is not None:
                capture[("attn", l)] = o.value.reshape(n * t, n_h * dk)
            if head_keep is not None and not head_keep.all():
                o = o * ad.Node(np.repeat(head_keep, dk).astype(dtype))
            x = x + ad.linear(o, W(b + "attn.proj.weight"))

        width = weights.d_ff(l)
        ffn_keep = None if mask is None else mask.ffn[l]
        if width and (ffn_keep is None or ffn_keep.any()):
            h = ad.layernorm(x, W(b + "norm2.weight"), W(b + "norm2.bias"))
            u = ad.gelu(ad.linear(h, W(b + "ffn.in.weight"), W(b + "ffn.in.bias")))
            if capture is not None:
                capture[("ffn", l)] = u.value.reshape(n * t, width)
            if ffn_keep is not None and not ffn_keep.all():
                u = u * ad.Node(ffn_keep.astype(dtype))
            x = x + ad.linear(u, W(b + "ffn.out.weight"), W(b + "ffn.out.bias"))

    x = ad.layernorm(x, W("norm.weight"), W("norm.bias"))
    emb = x[:, 0] if cfg.includes_cls_token else ad.mean(x, axis=1)
    return emb if tape is not None else emb.value


def embed(weights, images, mask=None, batch_size=256, caps=DEFAULT_CAPS):
    """Untracked forward in chunks; returns a float64 (N, d_model) array."""
    out = [forward(weights, mask, images[i:i + batch_size], caps=caps)
           for i in range(0, len(images), batch_size)]
    if not out:
        return np.zeros((0, weights.config.d_model))
    return np.concatenate(out).astype(np.float64)


def classify(weights, emb):
    return emb @ weights["head.weight"].T + weights["head.bias"]


def compact(weights, mask, caps=DEFAULT_CAPS):
    """Physically remove masked heads and neurons; returns new weights."""
    cfg = weights.config
    mask.validate(cfg, caps)
    p = dict(weights.params)
    dk = cfg.d_key
    for l in range(cfg.n_layers):
        b = f"blocks.{l}."
        cols = np.repeat(mask.heads[l], dk)
        for name in ("attn.q.weight", "attn.k.weight", "attn.v.weight"):
            p[b + name] = weights.params[b + name][cols]
        p[b + "attn.proj.weight"] = weights.params[b + "attn.proj.weight"][:, cols]
        keep = mask.ffn[l]
        p[b + "ffn.in.weight"] = weights.params[b + "ffn.in.weight"][keep]
        p[b + "ffn.in.bias"] = weights.params[b + "ffn.in.bias"][keep]
        p[b + "ffn.out.weight"] = weights.params[b + "ffn.out.weight"][:, keep]
    return ModelWeights(cfg, {k: np.ascontiguousarray(v) for k, v in p.items()})


def layer_widths(weights):
    """(heads, ffn width) per layer of a possibly compacted model."""
    return [(weights.n_heads(l), weights.d_ff(l)) for l in range(weights.config.n_layers)]
