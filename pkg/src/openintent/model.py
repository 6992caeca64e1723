"""The full pre-training model: prefixed encoder, pooling, dense layer and classifier."""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from . import numerics as nx
from .encoder import EncoderConfig, apply_tuning_plan, count_trainable, encode, init_encoder
from .errors import DataError
from .head import classify, dense, init_head, mean_pool, softmax_loss
from .prefix import PrefixBank, PrefixConfig, PrefixParams, init_prefix

_META_KEY = "__meta__"


class IntentModel:
    def __init__(self, enc_cfg, prefix_cfg, num_classes, seed=0):
        self.enc_cfg = enc_cfg
        self.prefix_cfg = prefix_cfg
        self.num_classes = num_classes
        self.encoder = init_encoder(enc_cfg, seed)
        self.prefix = init_prefix(prefix_cfg, enc_cfg, seed)
        self.head = init_head(enc_cfg, num_classes, seed)
        self.finalized = False

    def parameters(self):
        params = dict(self.encoder)
        params.update(self.prefix.params)
        params.update(self.head)
        return params

    def apply_plan(self, plan):
        apply_tuning_plan(self.parameters(), plan, self.enc_cfg)

    def trainable_count(self):
        return count_trainable(self.parameters())

    def bank(self):
        return self.prefix.materialize()

    def hidden(self, ids, mask, bank=None):
        bank = self.bank() if bank is None else bank
        return encode(ids, self.encoder, self.enc_cfg, bank, mask=mask)

    def represent(self, ids, mask, bank=None):
        return dense(mean_pool(self.hidden(ids, mask, bank), mask), self.head)

    def forward(self, ids, mask):
        rep = self.represent(ids, mask)
        return rep, classify(rep, self.head)

    def loss(self, ids, mask, labels):
        _, logits = self.forward(ids, mask)
        return softmax_loss(logits, labels)

    def extract(self, ids, mask, batch_size=256):
        """Representations as a numpy array, computed without recording gradients."""
        out = []
        with nx.no_grad():
            bank = self.bank()
            for lo in range(0, len(ids), batch_size):
                out.append(self.represent(ids[lo : lo + batch_size], mask[lo : lo + batch_size], bank).data)
        if not out:
            return np.zeros((0, self.enc_cfg.feature_dim))
        return np.concatenate(out, axis=0)

    def predict(self, ids, mask, batch_size=256):
        out = []
        with nx.no_grad():
            bank = self.bank()
            for lo in range(0, len(ids), batch_size):
                rep = self.represent(ids[lo : lo + batch_size], mask[lo : lo + batch_size], bank)
                out.append(classify(rep, self.head).data.argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def finalize_prefix(self):
        """Replace the prefix parameters by their frozen materialized bank."""
        self.prefix = PrefixParams.from_bank(self.prefix.finalize())
        self.finalized = True

    # -- persistence ---------------------------------------------------------

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def save(self, path):
        meta = {
            "encoder": asdict(self.enc_cfg),
            "prefix": {**asdict(self.prefix_cfg), "mode": self.prefix_cfg.mode.value},
            "num_classes": self.num_classes,
            "finalized": self.finalized,
        }
        arrays = self.state_dict()
        arrays[_META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
        meta = json.loads(arrays.pop(_META_KEY).tobytes().decode("utf-8"))
        enc_cfg = EncoderConfig(**meta["encoder"])
        prefix_cfg = PrefixConfig(**meta["prefix"])
        model = cls(enc_cfg, prefix_cfg, meta["num_classes"])
        if meta["finalized"]:
            n, d = enc_cfg.num_layers, enc_cfg.hidden_dim
            bank = arrays.get("prefix.bank", np.zeros((n, 2, 0, d)))
            model.prefix = PrefixParams.from_bank(PrefixBank(bank))
            model.finalized = True
        params = model.parameters()
        if set(params) != set(arrays):
            missing = sorted(set(params) ^ set(arrays))
            raise DataError(f"checkpoint parameters do not match the model: {missing}")
        for name, p in params.items():
            if p.data.shape != arrays[name].shape:
                raise DataError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.data.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)
            p.zero_grad()
        return model
