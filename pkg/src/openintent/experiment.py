"""Experiment orchestration: seeded end-to-end runs, ablation tables and reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adb import ADBConfig, learn_boundaries, predict_open, save_boundaries
from .data import (
    OPEN,
    SplitSpec,
    Vocabulary,
    encode_dataset,
    load_tsv,
    make_presplit,
    make_split,
    synth_corpus,
)
from .encoder import EncoderConfig, TuningPlan, trainable_param_stats
from .errors import ConfigError, ExperimentError, OpenIntentError, PlanError
from .metrics import evaluate
from .model import IntentModel
from .prefix import PrefixConfig, PrefixMode
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# tuning-plan descriptors

COMPONENT_ALIASES = {
    "attn": "attention",
    "attention": "attention",
    "ff": "feed_forward",
    "ffn": "feed_forward",
    "feed_forward": "feed_forward",
    "ln": "layer_norm",
    "layer_norm": "layer_norm",
    "kv": "keys_values",
    "keys_values": "keys_values",
    "all": "entire",
    "entire": "entire",
}

PREFIX_MODE_ALIASES = {"mlp": PrefixMode.MLP, "emb": PrefixMode.EMBED, "embed": PrefixMode.EMBED}


@dataclass(frozen=True)
class PlanSpec:
    descriptor: str
    plan: TuningPlan
    uses_prefix: bool = True
    prefix_mode: PrefixMode | None = None


def _layer_ref(token, num_layers):
    if token == "last":
        return num_layers
    try:
        x = int(token)
    except ValueError:
        raise PlanError(f"bad layer reference {token!r}") from None
    if not 1 <= x <= num_layers:
        raise PlanError(f"layer {x} outside 1..{num_layers}")
    return x


def parse_plan(descriptor, num_layers):
    """Parse a '+'-joined plan descriptor.

    Terms: ``prefix`` / ``prefix(mlp)`` / ``prefix(emb)`` / ``prefix-only``,
    ``just:X``, ``rest:X`` (X an index or ``last``), ``component:kv,ff``
    (components of the last layer), ``fft`` (every layer plus embeddings),
    ``nopt`` (no prefixes; ``fft-nopt`` is shorthand for ``fft+nopt``) and
    ``frozen``.  Prefixes are present unless ``nopt`` is given.
    """
    plan = TuningPlan.prefix_only()
    uses_prefix, mode = True, None
    terms = [t.strip().lower() for t in descriptor.split("+") if t.strip()]
    if not terms:
        raise PlanError("empty plan descriptor")
    for term in terms:
        if term == "fft-nopt":
            plan, uses_prefix = plan | TuningPlan.full(num_layers), False
        elif term in ("prefix", "prefix-only"):
            pass
        elif term.startswith("prefix(") and term.endswith(")"):
            key = term[len("prefix(") : -1]
            if key not in PREFIX_MODE_ALIASES:
                raise PlanError(f"unknown prefix mode {key!r}")
            mode = PREFIX_MODE_ALIASES[key]
        elif term == "nopt":
            uses_prefix = False
        elif term == "fft":
            plan = plan | TuningPlan.full(num_layers)
        elif term == "frozen":
            plan = TuningPlan.frozen() | TuningPlan(head=True, prefix=False)
        elif term.startswith("just:"):
            plan = plan | TuningPlan.just(_layer_ref(term[5:], num_layers))
        elif term.startswith("rest:"):
            plan = plan | TuningPlan.rest(_layer_ref(term[5:], num_layers), num_layers)
        elif term.startswith("component:"):
            names = []
            for c in term[len("component:") :].split(","):
                if c not in COMPONENT_ALIASES:
                    raise PlanError(f"unknown component {c!r}")
                names.append(COMPONENT_ALIASES[c])
            plan = plan | TuningPlan.components(num_layers, names)
        else:
            raise PlanError(f"unknown plan term {term!r} in {descriptor!r}")
    if not uses_prefix:
        plan = replace(plan, prefix=False)
    return PlanSpec(descriptor, plan, uses_prefix, mode)


# ---------------------------------------------------------------------------
# configuration


def _floats(value):
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).split(",") if v.strip())


def _ints(value):
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    text = str(value).strip()
    if "-" in text and "," not in text and not text.startswith("-"):
        lo, hi = text.split("-")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    synth_intents: int = 12
    synth_samples: int = 60
    synth_seed: int = 0
    kir: tuple = (0.5,)
    train_frac: float = 0.63
    dev_frac: float = 0.07
    test_frac: float = 0.30
    seeds: tuple = (0,)
    num_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 2
    ff_dim: int = 64
    max_seq_len: int = 32
    feature_dim: int = 64
    prefix_len: int = 10
    prefix_mode: str = "mlp"
    prefix_hidden: int = 0
    plan: str = "prefix+just:last"
    method: str = ""
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    adb_lr: float = 0.05
    adb_epochs: int = 100
    adb_batch_size: int = 32
    adb_patience: int = 10
    save_artifacts: bool = True

    def __post_init__(self):
        self.kir = _floats(self.kir)
        self.seeds = _ints(self.seeds)
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        if not self.kir:
            raise ConfigError("at least one known intent ratio is required")
        for name in ("prefix_len", "prefix_hidden"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        mode = str(self.prefix_mode).lower()
        if mode not in PREFIX_MODE_ALIASES:
            raise ConfigError(f"unknown prefix mode {self.prefix_mode!r}")
        self.prefix_mode = PREFIX_MODE_ALIASES[mode].value
        parse_plan(self.plan, self.num_layers)

    @property
    def method_name(self):
        return self.method or self.plan

    def encoder_config(self, vocab_size):
        return EncoderConfig(
            num_layers=self.num_layers,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            ff_dim=self.ff_dim,
            vocab_size=vocab_size,
            max_seq_len=self.max_seq_len,
            feature_dim=self.feature_dim,
        )

    def plan_spec(self):
        return parse_plan(self.plan, self.num_layers)

    def prefix_config(self):
        spec = self.plan_spec()
        mode = spec.prefix_mode or PrefixMode(self.prefix_mode)
        length = self.prefix_len if spec.uses_prefix else 0
        return PrefixConfig(length=length, mode=mode, mlp_hidden=self.prefix_hidden or None)

    def to_lines(self):
        out = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out.append(f"{f.name}={value}")
        return "\n".join(out) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_lines(), encoding="utf-8")

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(known[key], raw)
        return cls(**kwargs)

    @classmethod
    def load(cls, path, **overrides):
        mapping = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
        mapping.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(mapping)

    def with_overrides(self, **overrides):
        mapping = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        mapping.update({k: v for k, v in overrides.items() if v is not None})
        return type(self).from_mapping(mapping)


def _coerce(f, raw):
    if not isinstance(raw, str):
        return raw
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.name}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {raw!r} as {kind}") from None
    return raw


# ---------------------------------------------------------------------------
# corpus


def load_corpus(cfg):
    """Either a single corpus (list) or a (train, dev, test) triple for pre-split data."""
    if cfg.dataset == "synthetic":
        return synth_corpus(cfg.synth_intents, cfg.synth_samples, cfg.synth_seed)
    path = Path(cfg.dataset)
    if path.is_dir():
        return tuple(load_tsv(path / f"{part}.tsv") for part in ("train", "dev", "test"))
    return load_tsv(path)


def split_corpus(corpus, cfg, kir, seed):
    spec = SplitSpec(kir, seed, cfg.train_frac, cfg.dev_frac, cfg.test_frac)
    if isinstance(corpus, tuple):
        return make_presplit(*corpus, spec)
    return make_split(corpus, spec)


def corpus_texts(corpus):
    records = [r for part in corpus for r in part] if isinstance(corpus, tuple) else corpus
    return [r.text for r in records]


# ---------------------------------------------------------------------------
# one seed


METRIC_KEYS = ("accuracy", "macro_f1", "open_f1", "known_macro_f1")


@dataclass
class SeedResult:
    kir: float
    seed: int
    metrics: dict | None = None
    error: str | None = None
    trainable: int = 0
    run_dir: str | None = None
    flags: list = field(default_factory=list)


def write_representations(path, ids, labels, reps):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, label, row in zip(ids, labels, reps):
            fh.write("\t".join([str(i), label] + [repr(float(v)) for v in row]) + "\n")


def read_representations(path):
    ids, labels, rows = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            labels.append(parts[1])
            rows.append([float(v) for v in parts[2:]])
    return ids, labels, np.array(rows)


def write_history(path, history):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "dev_acc"])
        for r in history:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.dev_acc)])


def run_seed(cfg, corpus, kir, seed, run_dir=None):
    """split -> pre-train -> finalize prefixes -> representations -> boundaries -> metrics."""
    split = split_corpus(corpus, cfg, kir, seed)
    vocab = Vocabulary.build(corpus_texts(corpus))
    known = split.known_classes
    index = {c: i for i, c in enumerate(known)}
    index[OPEN] = len(known)
    max_len = cfg.max_seq_len
    train_ds = encode_dataset(split.train, vocab, index, max_len)
    dev_ds = encode_dataset(split.dev, vocab, index, max_len)
    test_ds = encode_dataset(split.test, vocab, index, max_len)

    enc_cfg = cfg.encoder_config(len(vocab))
    spec = cfg.plan_spec()
    prefix_cfg = cfg.prefix_config()
    model = IntentModel(enc_cfg, prefix_cfg, len(known), seed)
    tcfg = TrainConfig(cfg.lr, cfg.batch_size, cfg.max_epochs, cfg.patience, rng_seed=seed)
    result = train(model, train_ds, dev_ds, spec.plan, tcfg)
    trainable = model.trainable_count()
    model.finalize_prefix()

    train_reps = model.extract(train_ds.ids, train_ds.mask)
    acfg = ADBConfig(cfg.adb_lr, cfg.adb_epochs, cfg.adb_batch_size, cfg.adb_patience, rng_seed=seed)
    boundaries = learn_boundaries(train_reps, train_ds.labels, acfg, len(known), names=known)
    test_reps = model.extract(test_ds.ids, test_ds.mask)
    preds = predict_open(test_reps, boundaries)
    report = evaluate(preds, test_ds.labels, known)

    flags = []
    if report.open_support == 0:
        flags.append("open class has no test samples; open_f1 is a zero-support value")
        log.warning("kir=%s seed=%s: %s", kir, seed, flags[-1])

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        replace(cfg, kir=(kir,), seeds=(seed,)).save(run_dir / "config.txt")
        (run_dir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
        write_history(run_dir / "history.csv", result.history)
        if cfg.save_artifacts:
            model.save(run_dir / "checkpoint.npz")
            save_boundaries(run_dir / "boundaries.tsv", boundaries)
            vocab.save(run_dir / "vocab.txt")
            (run_dir / "labels.txt").write_text("\n".join(known) + "\n", encoding="utf-8")
            write_representations(
                run_dir / "train_representations.tsv",
                [f"train-{i}" for i in range(len(split.train))],
                [r.label for r in split.train],
                train_reps,
            )
            write_representations(
                run_dir / "representations.tsv",
                [f"test-{i}" for i in range(len(split.test))],
                [r.label for r in split.test],
                test_reps,
            )
    return SeedResult(kir, seed, report.to_dict(), None, trainable, str(run_dir) if run_dir else None, flags), result


# ---------------------------------------------------------------------------
# aggregate runs


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seeds: list
    summary: list

    def successful(self, kir=None):
        return [s for s in self.seeds if s.metrics is not None and (kir is None or s.kir == kir)]

    def summary_for(self, kir):
        for row in self.summary:
            if row["kir"] == kir:
                return row
        raise KeyError(kir)


def summarize(seed_results, kirs):
    rows = []
    for kir in kirs:
        ok = [s for s in seed_results if s.kir == kir and s.metrics is not None]
        failed = [s for s in seed_results if s.kir == kir and s.metrics is None]
        row = {"kir": kir, "n_seeds": len(ok), "failed_seeds": [s.seed for s in failed]}
        for key in METRIC_KEYS:
            values = [s.metrics[key] for s in ok]
            row[key] = math.fsum(values) / len(values) if values else float("nan")
            row[key + "_std"] = statistics.stdev(values) if len(values) > 1 else 0.0
        row["flags"] = sorted({f for s in ok for f in s.flags})
        rows.append(row)
    return rows


def run_experiment(cfg, out_dir=None, histories=None):
    """Every (KIR, seed) pair end to end; a stage error only voids its own seed."""
    corpus = load_corpus(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.txt")
    results = []
    for kir in cfg.kir:
        for seed in cfg.seeds:
            run_dir = out / f"kir_{kir:.2f}" / f"seed_{seed}" if out is not None else None
            try:
                seed_result, train_result = run_seed(cfg, corpus, kir, seed, run_dir)
                if histories is not None:
                    histories[(kir, seed)] = train_result.history
            except OpenIntentError as exc:
                log.error("kir=%s seed=%s failed: %s", kir, seed, exc)
                seed_result = SeedResult(kir, seed, error=f"{type(exc).__name__}: {exc}")
            results.append(seed_result)
    if not any(s.metrics is not None for s in results):
        raise ExperimentError("every seed failed: " + "; ".join(s.error for s in results))
    summary = summarize(results, cfg.kir)
    if out is not None:
        payload = {
            "method": cfg.method_name,
            "summary": summary,
            "seeds": [dataclasses.asdict(s) for s in results],
        }
        (out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return ExperimentResult(cfg, results, summary)


def pct(x):
    return round(100.0 * x, 2)


def main_rows(result):
    """Rows shaped like the main-results table: KIR, Method, Accuracy, F1-Score, Open, Known."""
    rows = []
    for s in result.summary:
        rows.append(
            {
                "KIR": f"{round(100 * s['kir'])}%",
                "Method": result.config.method_name,
                "Accuracy": pct(s["accuracy"]),
                "F1-Score": pct(s["macro_f1"]),
                "Open": pct(s["open_f1"]),
                "Known": pct(s["known_macro_f1"]),
            }
        )
    return rows


MAIN_COLUMNS = ["KIR", "Method", "Accuracy", "F1-Score", "Open", "Known"]
LENGTH_COLUMNS = ["Length", "Accuracy", "F1-score", "Open", "Known"]
LAYER_COLUMNS = ["x", "Just x Accuracy", "Just x F1-Score", "x and Rest Accuracy", "x and Rest F1-Score"]
COMPONENT_COLUMNS = ["Method", "Accuracy", "F1-Score", "Open", "Known"]
COMPONENT_PLANS = [
    ("Attention", "attn"),
    ("Feed Forward", "ff"),
    ("Layer Normalization", "ln"),
    ("Keys and Values", "kv"),
    ("Entire Layer", "all"),
]


def _sub(out_dir, name):
    return Path(out_dir) / name if out_dir is not None else None


def _first(result):
    return result.summary[0]


def ablate_prefix_length(cfg, lengths, out_dir=None):
    if not lengths or any(L < 1 for L in lengths):
        raise ConfigError("prefix lengths must be positive")
    rows = []
    for length in lengths:
        run = run_experiment(replace(cfg, prefix_len=length), _sub(out_dir, f"length_{length}"))
        s = _first(run)
        rows.append(
            {
                "Length": length,
                "Accuracy": pct(s["accuracy"]),
                "F1-score": pct(s["macro_f1"]),
                "Open": pct(s["open_f1"]),
                "Known": pct(s["known_macro_f1"]),
            }
        )
    return rows


def _plan_cfg(cfg, descriptor):
    return replace(cfg, plan=descriptor, method=descriptor)


def ablate_layer_grouping(cfg, layers, out_dir=None):
    """No-FT row, then one row per x (descending) with "Just x" and "x and Rest" cells."""
    n = cfg.num_layers
    if not layers or any(not 1 <= x <= n for x in layers):
        raise ConfigError(f"layers must lie in 1..{n}")
    mode = f"prefix({cfg.prefix_mode})"
    probe = EncoderConfig(num_layers=n, hidden_dim=cfg.hidden_dim, num_heads=cfg.num_heads, ff_dim=cfg.ff_dim)

    def count(plan_desc):
        return trainable_param_stats(probe, parse_plan(plan_desc, n).plan)[0]

    nf = _first(run_experiment(_plan_cfg(cfg, f"{mode}"), _sub(out_dir, "x_No-FT")))
    rows = [
        {
            "x": "No-FT",
            "Just x Accuracy": pct(nf["accuracy"]),
            "Just x F1-Score": pct(nf["macro_f1"]),
            "x and Rest Accuracy": pct(nf["accuracy"]),
            "x and Rest F1-Score": pct(nf["macro_f1"]),
            "just_trainable": count(mode),
            "rest_trainable": count(mode),
        }
    ]
    for x in sorted(set(layers), reverse=True):
        row_dir = _sub(out_dir, f"x_{x}")
        just = _first(run_experiment(_plan_cfg(cfg, f"{mode}+just:{x}"), _sub(row_dir, "just")))
        rest = just if x == n else _first(run_experiment(_plan_cfg(cfg, f"{mode}+rest:{x}"), _sub(row_dir, "rest")))
        rows.append(
            {
                "x": x,
                "Just x Accuracy": pct(just["accuracy"]),
                "Just x F1-Score": pct(just["macro_f1"]),
                "x and Rest Accuracy": pct(rest["accuracy"]),
                "x and Rest F1-Score": pct(rest["macro_f1"]),
                "just_trainable": count(f"{mode}+just:{x}"),
                "rest_trainable": count(f"{mode}+rest:{x}"),
            }
        )
    return rows


def ablate_last_layer_components(cfg, out_dir=None):
    mode = f"prefix({cfg.prefix_mode})"
    rows = []
    for name, comp in COMPONENT_PLANS:
        desc = f"{mode}+component:{comp}"
        s = _first(run_experiment(_plan_cfg(cfg, desc), _sub(out_dir, name.lower().replace(" ", "_"))))
        rows.append(
            {
                "Method": name,
                "Accuracy": pct(s["accuracy"]),
                "F1-Score": pct(s["macro_f1"]),
                "Open": pct(s["open_f1"]),
                "Known": pct(s["known_macro_f1"]),
            }
        )
    return rows


def report(rows, out_dir, name="results", columns=MAIN_COLUMNS, figure=None):
    """Write the text/TSV/JSON table (and optionally a PNG figure) and return the text table."""
    from .report import write_table

    text = write_table(rows, columns, out_dir, name)
    if figure is not None:
        figure(rows, Path(out_dir) / "figures" / f"{name}.png")
    return text
