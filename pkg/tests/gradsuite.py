"""Gradient-check cases: every differentiable op plus a whole tiny model."""

from __future__ import annotations

import zlib

import numpy as np

from openintent import numerics as nx
from openintent.encoder import EncoderConfig, TuningPlan
from openintent.model import IntentModel
from openintent.numerics import Parameter
from openintent.prefix import PrefixConfig, PrefixMode


def _p(rng, *shape, name="x", scale=1.0, offset=0.0):
    return Parameter(rng.normal(offset, scale, shape), name)


def op_cases(seed=0):
    """(name, f, params) triples, one per differentiable op."""
    rng = np.random.default_rng(seed)
    cases = []

    def case(name, build):
        params, fn = build()
        w_rng = np.random.default_rng(zlib.crc32(name.encode()))
        weights = {}

        def f():
            out = fn()
            if out.data.size == 1:
                return nx.tsum(out)
            if "w" not in weights:
                weights["w"] = nx.Tensor(w_rng.normal(size=out.shape))
            return nx.tsum(nx.mul(out, weights["w"]))

        cases.append((name, f, params))

    a, b = _p(rng, 3, 4, name="a"), _p(rng, 3, 4, name="b")
    case("add", lambda: ([a, b], lambda: nx.add(a, b)))
    bias = _p(rng, 4, name="bias")
    case("add_broadcast", lambda: ([a, bias], lambda: nx.add(a, bias)))
    case("neg", lambda: ([a], lambda: nx.neg(a)))
    case("mul", lambda: ([a, b], lambda: nx.mul(a, b)))
    # keep relu/abs inputs away from their kinks
    away = Parameter(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1, 1], (3, 4)), "away")
    case("relu", lambda: ([away], lambda: nx.relu(away)))
    case("tabs", lambda: ([away], lambda: nx.tabs(away)))
    case("tanh", lambda: ([a], lambda: nx.tanh(a)))
    case("gelu", lambda: ([a], lambda: nx.gelu(a)))
    case("softplus", lambda: ([a], lambda: nx.softplus(a)))
    case("reshape", lambda: ([a], lambda: nx.reshape(a, (2, 6))))
    t3 = _p(rng, 2, 3, 4, name="t3")
    case("transpose", lambda: ([t3], lambda: nx.transpose(t3, (2, 0, 1))))
    case("swap_last", lambda: ([t3], lambda: nx.swap_last(t3)))
    row = _p(rng, 1, 4, name="row")
    case("expand", lambda: ([row], lambda: nx.expand(row, (3, 4))))
    case("concat", lambda: ([a, b], lambda: nx.concat([a, b], axis=1)))
    case("getitem", lambda: ([t3], lambda: nx.getitem(t3, (slice(None), 1))))
    table = _p(rng, 5, 3, name="table")
    ids = np.array([[0, 2, 2], [4, 1, 0]])
    case("take_rows", lambda: ([table], lambda: nx.take_rows(table, ids)))
    case("tsum", lambda: ([t3], lambda: nx.tsum(t3, axis=1)))
    case("mean", lambda: ([t3], lambda: nx.mean(t3, axis=2)))
    mask = np.array([[1, 1, 0], [1, 0, 0]], dtype=float)
    h = _p(rng, 2, 3, 4, name="h")
    case("masked_mean", lambda: ([h], lambda: nx.masked_mean(h, mask)))
    m1, m2 = _p(rng, 3, 4, name="m1"), _p(rng, 4, 2, name="m2")
    case("matmul", lambda: ([m1, m2], lambda: nx.matmul(m1, m2)))
    bb = _p(rng, 2, 3, 4, name="bb")
    case("matmul_batched", lambda: ([bb, m2], lambda: nx.matmul(bb, m2)))
    lb = _p(rng, 2, name="lb")
    case("linear", lambda: ([m1, m2, lb], lambda: nx.linear(m1, m2, lb)))
    case("softmax_rows", lambda: ([t3], lambda: nx.softmax_rows(t3)))
    gain, lnb = _p(rng, 4, name="gain", offset=1.0), _p(rng, 4, name="lnb")
    case("layer_norm", lambda: ([a, gain, lnb], lambda: nx.layer_norm(a, gain, lnb, 1e-12)))
    logits = _p(rng, 2, 3, name="logits")
    case("cross_entropy", lambda: ([logits], lambda: nx.cross_entropy(logits, np.array([2, 0]))))
    return cases


def model_case(seed=0):
    """Loss of a 2-layer (d=8, H=2) model with length-2 MLP prefixes, every parameter trainable."""
    cfg = EncoderConfig(num_layers=2, hidden_dim=8, num_heads=2, ff_dim=12, vocab_size=9, max_seq_len=6, feature_dim=6)
    model = IntentModel(cfg, PrefixConfig(length=2, mode=PrefixMode.MLP, mlp_hidden=6), num_classes=3, seed=seed)
    model.apply_plan(TuningPlan.full(cfg.num_layers, prefix=True))
    rng = np.random.default_rng(seed + 1)
    # positive dense pre-activations keep the ReLU off its kink
    model.head["head.dense.b"].data[:] = 2.0
    ids = rng.integers(0, cfg.vocab_size, (3, 5))
    mask = np.ones((3, 5))
    mask[1, 4] = 0.0
    mask[2, 3:] = 0.0
    labels = np.array([0, 2, 1])
    params = [p for p in model.parameters().values() if p.trainable]

    def f():
        return model.loss(ids, mask, labels)

    return f, params
