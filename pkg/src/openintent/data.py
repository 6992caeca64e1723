"""Corpus ingestion, known-intent splits, tokenization and a synthetic intent corpus."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import TokenSequence, stack_sequences
from .errors import ConfigError, DataError, ParseError
from .metrics import OPEN_NAME
from .rng import stream

log = logging.getLogger(__name__)

OPEN = OPEN_NAME
PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"


@dataclass(frozen=True)
class LabeledUtterance:
    text: str
    label: str

    def __post_init__(self):
        if not self.text or not self.label:
            raise DataError("utterance text and label must be non-empty")


def load_tsv(path):
    """Read ``text<TAB>label`` lines (UTF-8, no header)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"expected 2 tab-separated fields, found {len(parts)}", line=lineno)
            text, label = parts[0].strip(), parts[1].strip()
            if not text or not label:
                raise ParseError("empty text or label", line=lineno)
            records.append(LabeledUtterance(text, label))
    return records


def write_tsv(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.text}\t{r.label}\n")


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    known_intent_ratio: float = 0.5
    rng_seed: int = 0
    train: float = 0.63
    dev: float = 0.07
    test: float = 0.30

    def __post_init__(self):
        if not 0.0 < self.known_intent_ratio <= 1.0:
            raise ConfigError(f"known_intent_ratio must lie in (0, 1], got {self.known_intent_ratio}")
        parts = (self.train, self.dev, self.test)
        if min(parts) < 0 or not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise ConfigError(f"train/dev/test proportions must be non-negative and sum to 1, got {parts}")


@dataclass
class Split:
    train: list
    dev: list
    test: list
    known_classes: list
    open_classes: list


def choose_known(classes, spec):
    """Known classes drawn uniformly; round(KIR * C) of them, at least one."""
    classes = sorted(classes)
    n_known = int(math.floor(spec.known_intent_ratio * len(classes) + 0.5))
    if n_known < 1:
        log.warning("KIR %.3f of %d classes rounds to 0 known classes; using 1", spec.known_intent_ratio, len(classes))
        n_known = 1
    pick = stream(spec.rng_seed, "known-classes").permutation(len(classes))[:n_known]
    return sorted(classes[i] for i in pick)


def _relabel(records, known):
    return [r if r.label in known else LabeledUtterance(r.text, OPEN) for r in records]


def make_split(data, spec):
    """Partition one corpus into train/dev/test for a known-intent ratio.

    Samples are divided per class in the requested proportions.  Train and dev
    keep only known-class samples; the test portion keeps every sample it
    was dealt, with open-class labels replaced by ``OPEN``.
    """
    classes = sorted({r.label for r in data})
    if len(classes) < 2:
        raise DataError("need at least two distinct classes to split")
    known = choose_known(classes, spec)
    known_set = set(known)
    rng = stream(spec.rng_seed, "partition")
    by_class = {c: [r for r in data if r.label == c] for c in classes}
    train, dev, test = [], [], []
    for c in classes:
        rows = by_class[c]
        order = rng.permutation(len(rows))
        n_train = int(math.floor(spec.train * len(rows) + 0.5))
        n_dev = min(int(math.floor(spec.dev * len(rows) + 0.5)), len(rows) - n_train)
        chosen = [rows[i] for i in order]
        if c in known_set:
            train += chosen[:n_train]
            dev += chosen[n_train : n_train + n_dev]
        test += chosen[n_train + n_dev :]
    return Split(train, dev, _relabel(test, known_set), known, [c for c in classes if c not in known_set])


def make_presplit(train, dev, test, spec):
    """Known-intent filtering for corpora that ship their own train/dev/test files."""
    classes = sorted({r.label for r in train + dev + test})
    if len(classes) < 2:
        raise DataError("need at least two distinct classes to split")
    known = choose_known(classes, spec)
    known_set = set(known)
    return Split(
        [r for r in train if r.label in known_set],
        [r for r in dev if r.label in known_set],
        _relabel(test, known_set),
        known,
        [c for c in classes if c not in known_set],
    )


# ---------------------------------------------------------------------------
# tokenization

_WORD = re.compile(r"\w+", re.UNICODE)


def words(text):
    return _WORD.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens=()):
        self.itos = [PAD, UNK, CLS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @property
    def pad_id(self):
        return self.stoi[PAD]

    @property
    def unk_id(self):
        return self.stoi[UNK]

    @property
    def cls_id(self):
        return self.stoi[CLS]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def lookup(self, token):
        return self.stoi.get(token, self.unk_id)

    @classmethod
    def build(cls, texts):
        vocab = cls()
        for text in texts:
            for w in words(text):
                vocab.add(w)
        return vocab

    def save(self, path):
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tokens[:3] != [PAD, UNK, CLS]:
            raise DataError("vocabulary file does not start with the reserved tokens")
        return cls(tokens[3:])


def tokenize(text, vocab, max_len, pad=True):
    """[CLS] + word ids, truncated to ``max_len`` and (optionally) padded with a mask."""
    ids = [vocab.cls_id] + [vocab.lookup(w) for w in words(text)]
    ids = ids[:max_len]
    mask = [1.0] * len(ids)
    if pad:
        ids += [vocab.pad_id] * (max_len - len(ids))
        mask += [0.0] * (max_len - len(mask))
    return TokenSequence(np.array(ids, dtype=np.int64), np.array(mask, dtype=np.float64))


@dataclass
class EncodedDataset:
    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def encode_dataset(records, vocab, label_index, max_len):
    """Token arrays padded to the longest sequence; labels mapped through ``label_index``."""
    if not records:
        return EncodedDataset(np.zeros((0, 1), np.int64), np.zeros((0, 1)), np.zeros(0, np.int64))
    seqs = [tokenize(r.text, vocab, max_len, pad=False) for r in records]
    ids, mask = stack_sequences(seqs)
    labels = np.array([label_index[r.label] for r in records], dtype=np.int64)
    return EncodedDataset(ids, mask, labels)


# ---------------------------------------------------------------------------
# synthetic corpus

FILLERS = (
    "please", "can", "you", "help", "me", "with", "the", "my", "a", "i", "need", "want",
    "to", "today", "now", "how", "do", "is", "there", "way", "again", "about", "quick", "question",
)

TEMPLATES = (
    "{f} {f} {k} {f} {k}",
    "{f} {k} {f} {f} {k} {f}",
    "{k} {f} {f} {k}",
    "{f} {f} {f} {k} {k}",
    "{f} {k} {k} {f} {f} {f}",
    "{k} {f} {k} {f} {f}",
)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "gr", "st", "pl", "tr", "sk")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")


def keyword_pools(num_intents, pool_size, rng):
    """Disjoint pools of made-up keywords, none colliding with a filler word."""
    taken = set(FILLERS)
    pools = []
    for _ in range(num_intents):
        pool = []
        while len(pool) < pool_size:
            word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(3))
            if word not in taken:
                taken.add(word)
                pool.append(word)
        pools.append(pool)
    return pools


def synth_corpus(num_intents, samples_per_intent, rng_seed=0, pool_size=8):
    """Template utterances: intent keywords from disjoint pools mixed with shared fillers."""
    if num_intents < 2:
        raise ConfigError("synthetic corpus needs at least two intents")
    rng = stream(rng_seed, "synth")
    pools = keyword_pools(num_intents, pool_size, rng)
    corpus = []
    for intent, pool in enumerate(pools):
        label = f"intent_{intent:02d}"
        for _ in range(samples_per_intent):
            template = TEMPLATES[rng.integers(len(TEMPLATES))]
            out = []
            for slot in template.split():
                out.append(pool[rng.integers(pool_size)] if slot == "{k}" else FILLERS[rng.integers(len(FILLERS))])
            corpus.append(LabeledUtterance(" ".join(out), label))
    return corpus
