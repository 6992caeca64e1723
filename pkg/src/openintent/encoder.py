"""Transformer encoder whose attention blocks accept per-layer prefix keys/values.

Layers are numbered from 1 in parameter names (``layer.1.attn.Wq``) so that
tuning-plan descriptors such as ``just:12`` read the same way as the layer
indices they address.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import numerics as nx
from .errors import ConfigError, LengthError, PlanError, PrefixError, VocabError
from .numerics import Parameter
from .rng import stream

MASK_NEG = -1e9
LN_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 2
    ff_dim: int = 64
    vocab_size: int = 64
    max_seq_len: int = 32
    feature_dim: int = 64

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "ff_dim", "vocab_size", "max_seq_len", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self):
        return self.hidden_dim // self.num_heads


# bert-base-uncased geometry
REFERENCE_CONFIG = EncoderConfig(
    num_layers=12, hidden_dim=768, num_heads=12, ff_dim=3072, vocab_size=30522, max_seq_len=512, feature_dim=768
)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.ids)


def stack_sequences(seqs, length=None):
    """Pad a list of ``TokenSequence`` to a common length -> (ids, mask) arrays."""
    length = length or max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), length), dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=np.float64)
    for row, s in enumerate(seqs):
        n = min(len(s), length)
        ids[row, :n] = s.ids[:n]
        mask[row, :n] = s.mask[:n]
    return ids, mask


def _as_batch(tokens, mask=None):
    if isinstance(tokens, TokenSequence):
        return tokens.ids[None, :], np.asarray(tokens.mask, dtype=np.float64)[None, :], True
    ids = np.asarray(tokens)
    if mask is None:
        mask = np.ones(ids.shape)
    mask = np.asarray(mask, dtype=np.float64)
    if ids.ndim == 1:
        return ids[None, :], mask[None, :], True
    return ids, mask, False


# ---------------------------------------------------------------------------
# parameters

LAYER_PARAM_SHAPES = {
    "attn.Wq": ("d", "d"),
    "attn.bq": ("d",),
    "attn.Wk": ("d", "d"),
    "attn.bk": ("d",),
    "attn.Wv": ("d", "d"),
    "attn.bv": ("d",),
    "attn.Wo": ("d", "d"),
    "attn.bo": ("d",),
    "ln1.gain": ("d",),
    "ln1.bias": ("d",),
    "ff.W1": ("d", "ff"),
    "ff.b1": ("ff",),
    "ff.W2": ("ff", "d"),
    "ff.b2": ("d",),
    "ln2.gain": ("d",),
    "ln2.bias": ("d",),
}

# last-layer components that can be unfrozen on their own
COMPONENT_PARAMS = {
    "attention": frozenset(k for k in LAYER_PARAM_SHAPES if k.startswith("attn.")),
    "feed_forward": frozenset(k for k in LAYER_PARAM_SHAPES if k.startswith("ff.")),
    "layer_norm": frozenset(k for k in LAYER_PARAM_SHAPES if k.startswith("ln")),
    "keys_values": frozenset({"attn.Wk", "attn.Wv"}),
    "entire": frozenset(LAYER_PARAM_SHAPES),
}


def encoder_shapes(cfg):
    dims = {"d": cfg.hidden_dim, "ff": cfg.ff_dim}
    shapes = {
        "embed.tokens": (cfg.vocab_size, cfg.hidden_dim),
        "embed.positions": (cfg.max_seq_len, cfg.hidden_dim),
    }
    for i in range(1, cfg.num_layers + 1):
        for key, sym in LAYER_PARAM_SHAPES.items():
            shapes[f"layer.{i}.{key}"] = tuple(dims[s] for s in sym)
    return shapes


def init_encoder(cfg, seed=0):
    """Random encoder weights; every matrix is drawn N(0, 1/fan_in)."""
    rng = stream(seed, "encoder")
    params = {}
    for name, shape in encoder_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "embed.tokens":
            value = rng.normal(0.0, 1.0, shape)
        elif name == "embed.positions":
            value = rng.normal(0.0, 0.1, shape)
        elif leaf == "gain":
            value = np.ones(shape)
        elif len(shape) == 2:
            value = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        else:
            value = np.zeros(shape)
        params[name] = Parameter(value, name)
    return params


def layer_view(params, i):
    """Parameters of layer ``i`` (1-based) keyed by their in-layer suffix."""
    prefix = f"layer.{i}."
    return {k[len(prefix):]: p for k, p in params.items() if k.startswith(prefix)}


# ---------------------------------------------------------------------------
# forward


def embed(tokens, params, cfg, mask=None):
    ids, _, single = _as_batch(tokens, mask)
    if ids.shape[1] > cfg.max_seq_len:
        raise LengthError(f"sequence length {ids.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise VocabError(f"token id out of range [0, {cfg.vocab_size})")
    x = nx.take_rows(params["embed.tokens"], ids) + params["embed.positions"][: ids.shape[1]]
    return x[0] if single else x


def _split_heads(t, num_heads):
    b, n, d = t.shape
    return t.reshape(b, n, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def attention_heads(q, k, v, prefix_k, prefix_v, key_bias, num_heads, scale=None):
    """Multi-head attention over ``concat(prefix, keys)`` before output projection.

    q, k, v: [B, L, d]; prefix_k/prefix_v: [L_p, d] or None; key_bias: [B, L]
    additive bias on the real key positions.  Prefix positions are never
    biased.  Returns the concatenated head outputs [B, L, d].
    """
    b, n, d = q.shape
    dh = d // num_heads
    scale = 1.0 / math.sqrt(dh) if scale is None else scale
    qh, kh, vh = (_split_heads(t, num_heads) for t in (q, k, v))
    bias = np.asarray(key_bias, dtype=np.float64)
    if prefix_k is not None or prefix_v is not None:
        if prefix_k is None or prefix_v is None or prefix_k.shape != prefix_v.shape:
            raise PrefixError("prefix keys and values must have matching shapes")
        lp = prefix_k.shape[0]
        if prefix_k.shape[1] != d:
            raise PrefixError(f"prefix width {prefix_k.shape[1]} does not match hidden size {d}")
        if lp > 0:
            pk = prefix_k.reshape(lp, num_heads, dh).transpose(1, 0, 2)
            pv = prefix_v.reshape(lp, num_heads, dh).transpose(1, 0, 2)
            kh = nx.concat([nx.expand(pk, (b, num_heads, lp, dh)), kh], axis=2)
            vh = nx.concat([nx.expand(pv, (b, num_heads, lp, dh)), vh], axis=2)
            bias = np.concatenate([np.zeros((b, lp)), bias], axis=1)
    scores = nx.matmul(qh, nx.swap_last(kh)) * scale + bias[:, None, None, :]
    ctx = nx.matmul(nx.softmax_rows(scores), vh)
    return ctx.transpose(0, 2, 1, 3).reshape(b, n, d)


def prefixed_attention(layer, x, prefix_k, prefix_v, mask, num_heads):
    """Self-attention sublayer with prefix keys/values, residual and layer norm."""
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
        mask = np.asarray(mask, dtype=np.float64)[None, :]
    key_bias = (1.0 - np.asarray(mask, dtype=np.float64)) * MASK_NEG
    q = nx.linear(x, layer["attn.Wq"], layer["attn.bq"])
    k = nx.linear(x, layer["attn.Wk"], layer["attn.bk"])
    v = nx.linear(x, layer["attn.Wv"], layer["attn.bv"])
    ctx = attention_heads(q, k, v, prefix_k, prefix_v, key_bias, num_heads)
    out = nx.layer_norm(x + nx.linear(ctx, layer["attn.Wo"], layer["attn.bo"]), layer["ln1.gain"], layer["ln1.bias"], LN_EPS)
    return out[0] if single else out


def feed_forward(layer, h):
    inner = nx.gelu(nx.linear(h, layer["ff.W1"], layer["ff.b1"]))
    return nx.layer_norm(h + nx.linear(inner, layer["ff.W2"], layer["ff.b2"]), layer["ln2.gain"], layer["ln2.bias"], LN_EPS)


def encoder_layer(layer, x, prefix_k, prefix_v, mask, num_heads):
    return feed_forward(layer, prefixed_attention(layer, x, prefix_k, prefix_v, mask, num_heads))


def encode(tokens, params, cfg, prefix_bank=None, mask=None):
    """Final hidden states [B, L, d] (or [L, d] for a single sequence)."""
    ids, mask, single = _as_batch(tokens, mask)
    if prefix_bank is not None and prefix_bank.num_layers != cfg.num_layers:
        raise PrefixError(f"prefix bank has {prefix_bank.num_layers} layers, encoder has {cfg.num_layers}")
    h = embed(ids, params, cfg)
    for i in range(1, cfg.num_layers + 1):
        pk = pv = None
        if prefix_bank is not None:
            pk, pv = prefix_bank.keys(i), prefix_bank.values(i)
        h = encoder_layer(layer_view(params, i), h, pk, pv, mask, cfg.num_heads)
    return h[0] if single else h


# ---------------------------------------------------------------------------
# tuning plans


@dataclass(frozen=True)
class TuningPlan:
    """Which parameter groups receive gradient updates.

    ``layers`` maps a 1-based layer index to the component names (keys of
    ``COMPONENT_PARAMS``) unfrozen in that layer.
    """

    layers: Mapping[int, frozenset] = field(default_factory=dict)
    embeddings: bool = False
    prefix: bool = True
    head: bool = True

    @classmethod
    def frozen(cls):
        return cls(prefix=False, head=False)

    @classmethod
    def prefix_only(cls):
        return cls()

    @classmethod
    def just(cls, x, prefix=True):
        return cls(layers={x: frozenset({"entire"})}, prefix=prefix)

    @classmethod
    def rest(cls, x, num_layers, prefix=True):
        return cls(layers={i: frozenset({"entire"}) for i in range(x, num_layers + 1)}, prefix=prefix)

    @classmethod
    def components(cls, layer, names, prefix=True):
        return cls(layers={layer: frozenset(names)}, prefix=prefix)

    @classmethod
    def full(cls, num_layers, prefix=False):
        return cls(layers={i: frozenset({"entire"}) for i in range(1, num_layers + 1)}, embeddings=True, prefix=prefix)

    def __or__(self, other):
        layers = {i: frozenset(c) for i, c in self.layers.items()}
        for i, comps in other.layers.items():
            layers[i] = layers.get(i, frozenset()) | frozenset(comps)
        return TuningPlan(
            layers=layers,
            embeddings=self.embeddings or other.embeddings,
            prefix=self.prefix or other.prefix,
            head=self.head or other.head,
        )

    def validate(self, cfg):
        for i, comps in self.layers.items():
            if not 1 <= i <= cfg.num_layers:
                raise PlanError(f"plan addresses layer {i}, encoder has layers 1..{cfg.num_layers}")
            unknown = set(comps) - set(COMPONENT_PARAMS)
            if unknown:
                raise PlanError(f"unknown layer components {sorted(unknown)}")

    def is_trainable(self, name):
        group, _, rest = name.partition(".")
        if group == "embed":
            return self.embeddings
        if group == "prefix":
            return self.prefix
        if group == "head":
            return self.head
        if group == "layer":
            idx, _, suffix = rest.partition(".")
            comps = self.layers.get(int(idx), ())
            return any(suffix in COMPONENT_PARAMS[c] for c in comps)
        raise PlanError(f"parameter {name!r} is not addressable by a tuning plan")


def apply_tuning_plan(params, plan, cfg):
    plan.validate(cfg)
    for name, p in params.items():
        p.trainable = plan.is_trainable(name)


def trainable_param_stats(cfg, plan, prefix_cfg=None, num_classes=None):
    """(trainable scalar count, ratio to all scalars) computed from shapes alone.

    The counted model is the encoder plus prefix parameters, plus the intent
    head when ``num_classes`` is given.  Nothing is allocated, so the
    reference geometry can be counted cheaply.
    """
    from .head import head_shapes
    from .prefix import prefix_shapes

    plan.validate(cfg)
    shapes = dict(encoder_shapes(cfg))
    if prefix_cfg is not None:
        shapes.update(prefix_shapes(prefix_cfg, cfg))
    if num_classes is not None:
        shapes.update(head_shapes(cfg, num_classes))
    total = count = 0
    for name, shape in shapes.items():
        n = math.prod(shape)
        total += n
        if plan.is_trainable(name):
            count += n
    return count, (count / total if total else 0.0)


def count_trainable(params):
    return sum(p.data.size for p in params.values() if p.trainable)
