"""Per-layer prefix keys/values, optionally generated by a two-layer MLP."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, PrefixError
from .numerics import Parameter, Tensor
from .rng import stream


class PrefixMode(str, enum.Enum):
    EMBED = "embed"
    MLP = "mlp"


@dataclass(frozen=True)
class PrefixConfig:
    length: int = 10
    mode: PrefixMode = PrefixMode.MLP
    mlp_hidden: int | None = None  # None -> 4 * hidden_dim

    def __post_init__(self):
        object.__setattr__(self, "mode", PrefixMode(self.mode))
        if self.length < 0:
            raise ConfigError("prefix length must be >= 0")
        if self.mlp_hidden is not None and self.mlp_hidden < 1:
            raise ConfigError("mlp_hidden must be >= 1")

    def hidden(self, enc_cfg):
        return self.mlp_hidden if self.mlp_hidden is not None else 4 * enc_cfg.hidden_dim


REFERENCE_PREFIX = PrefixConfig(length=10, mode=PrefixMode.MLP, mlp_hidden=512)


def prefix_shapes(cfg, enc_cfg):
    n, d, lp = enc_cfg.num_layers, enc_cfg.hidden_dim, cfg.length
    if lp == 0:
        return {}
    if cfg.mode is PrefixMode.EMBED:
        return {"prefix.bank": (n, 2, lp, d)}
    h = cfg.hidden(enc_cfg)
    return {
        "prefix.embedding": (lp, d),
        "prefix.mlp.W1": (d, h),
        "prefix.mlp.b1": (h,),
        "prefix.mlp.W2": (h, 2 * n * d),
        "prefix.mlp.b2": (2 * n * d,),
    }


class PrefixBank:
    """Prefix keys and values for every layer, stored as one (N, 2, L_p, d) tensor."""

    def __init__(self, tensor):
        tensor = tensor if isinstance(tensor, Tensor) else Tensor(tensor)
        if tensor.ndim != 4 or tensor.shape[1] != 2:
            raise PrefixError(f"bank must be shaped (N, 2, L_p, d), got {tensor.shape}")
        self.tensor = tensor

    @property
    def num_layers(self):
        return self.tensor.shape[0]

    @property
    def length(self):
        return self.tensor.shape[2]

    @property
    def shape(self):
        return self.tensor.shape

    def keys(self, layer):
        return self.tensor[layer - 1, 0]

    def values(self, layer):
        return self.tensor[layer - 1, 1]

    @classmethod
    def empty(cls, enc_cfg):
        return cls(np.zeros((enc_cfg.num_layers, 2, 0, enc_cfg.hidden_dim)))


class PrefixParams:
    """Trainable prefix parameters in either storage mode."""

    def __init__(self, cfg, enc_cfg, params):
        self.cfg = cfg
        self.enc_cfg = enc_cfg
        self.params = params

    def materialize(self):
        n, d, lp = self.enc_cfg.num_layers, self.enc_cfg.hidden_dim, self.cfg.length
        if lp == 0:
            return PrefixBank.empty(self.enc_cfg)
        if self.cfg.mode is PrefixMode.EMBED:
            return PrefixBank(self.params["prefix.bank"])
        p = self.params
        hidden = nx.tanh(nx.linear(p["prefix.embedding"], p["prefix.mlp.W1"], p["prefix.mlp.b1"]))
        flat = nx.linear(hidden, p["prefix.mlp.W2"], p["prefix.mlp.b2"])
        return PrefixBank(flat.reshape(lp, n, 2, d).transpose(1, 2, 0, 3))

    def finalize(self):
        """Materialized bank as plain constants; the MLP is not carried along."""
        with nx.no_grad():
            bank = self.materialize()
        return PrefixBank(Tensor(bank.tensor.data.copy()))

    @classmethod
    def from_bank(cls, bank, trainable=False):
        """Embed-mode parameters holding a fixed bank (the finalized form)."""
        n, _, lp, d = bank.shape
        params = {}
        if lp:
            params["prefix.bank"] = Parameter(bank.tensor.data, "prefix.bank", trainable=trainable)
        return cls(PrefixConfig(length=lp, mode=PrefixMode.EMBED), _Geometry(n, d), params)


@dataclass(frozen=True)
class _Geometry:
    num_layers: int
    hidden_dim: int


def init_prefix(cfg, enc_cfg, rng_seed=0):
    rng = stream(rng_seed, "prefix")
    params = {
        name: Parameter(rng.uniform(-0.1, 0.1, shape), name)
        for name, shape in prefix_shapes(cfg, enc_cfg).items()
    }
    return PrefixParams(cfg, enc_cfg, params)


def materialize(pp):
    return pp.materialize()


def finalize(pp):
    return pp.finalize()
