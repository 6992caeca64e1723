"""Mean pooling, dense projection to the intent representation, and the softmax classifier."""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .encoder import _as_batch, encode
from .numerics import Parameter
from .rng import stream


def head_shapes(cfg, num_classes):
    d, f = cfg.hidden_dim, cfg.feature_dim
    return {
        "head.dense.W": (d, f),
        "head.dense.b": (f,),
        "head.classifier.W": (f, num_classes),
        "head.classifier.b": (num_classes,),
    }


def init_head(cfg, num_classes, seed=0):
    rng = stream(seed, "head")
    params = {}
    for name, shape in head_shapes(cfg, num_classes).items():
        if len(shape) == 2:
            value = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        else:
            value = np.zeros(shape)
        params[name] = Parameter(value, name)
    return params


def mean_pool(hidden, mask):
    """Average of the hidden states at unmasked positions (classification token included)."""
    return nx.masked_mean(hidden, mask)


def dense(pooled, head):
    return nx.relu(nx.linear(pooled, head["head.dense.W"], head["head.dense.b"]))


def classify(rep, head):
    return nx.linear(rep, head["head.classifier.W"], head["head.classifier.b"])


def represent(tokens, encoder_params, cfg, prefix_bank, head, mask=None):
    """Intent representation relu(W_d . mean_pool(encode(tokens)) + b_d)."""
    ids, mask, single = _as_batch(tokens, mask)
    hidden = encode(ids, encoder_params, cfg, prefix_bank, mask=mask)
    rep = dense(mean_pool(hidden, mask), head)
    return rep[0] if single else rep


def softmax_loss(logits, labels):
    return nx.cross_entropy(logits, labels)
