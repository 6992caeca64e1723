"""Command-line entry point: ``openintent <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment as ex
from . import report as rp
from .adb import load_boundaries, predict_open
from .data import OPEN, Vocabulary, encode_dataset, load_tsv, synth_corpus, write_tsv
from .errors import ConfigError, OpenIntentError, PlanError
from .metrics import evaluate
from .model import IntentModel

log = logging.getLogger("openintent")


def _common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--dataset", help="'synthetic', a TSV file, or a directory with train/dev/test.tsv")
    p.add_argument("--kir", help="known intent ratio(s), comma separated")
    p.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-4")
    p.add_argument("--out-dir", default="runs", help="output directory (default: runs)")
    p.add_argument("--plan", help="tuning plan descriptor, e.g. prefix+just:2")
    p.add_argument("--prefix-len", type=int, help="prefix length")
    p.add_argument("--prefix-mode", help="mlp or embed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser():
    parser = argparse.ArgumentParser(prog="openintent", description="Prefix-tuned open intent classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the full pipeline for every KIR and seed")
    _common(p)

    p = sub.add_parser("eval", help="score a saved run on a labelled TSV file")
    p.add_argument("--run-dir", required=True, help="a per-seed run directory produced by train")
    p.add_argument("--dataset", required=True, help="TSV file; labels outside the known set count as open")
    p.add_argument("--out-dir", help="where to write metrics.json (default: print only)")

    p = sub.add_parser("split", help="write train/dev/test TSV files for each KIR and seed")
    _common(p)

    p = sub.add_parser("ablate-length", help="sweep the prefix length")
    _common(p)
    p.add_argument("--lengths", default="2,4,8,10", help="comma-separated prefix lengths")

    p = sub.add_parser("ablate-layers", help="Just x / x and Rest layer grouping table")
    _common(p)
    p.add_argument("--layers", help="comma-separated layer indices (default: all)")

    p = sub.add_parser("ablate-components", help="fine-tune components of the last layer")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic intent corpus as TSV")
    p.add_argument("--out", required=True, help="output TSV path")
    p.add_argument("--num-intents", type=int, default=12)
    p.add_argument("--samples-per-intent", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args):
    overrides = {
        "dataset": args.dataset,
        "kir": args.kir,
        "seeds": args.seeds,
        "plan": args.plan,
        "prefix_len": None if args.prefix_len is None else str(args.prefix_len),
        "prefix_mode": args.prefix_mode,
    }
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.config:
        return ex.ExperimentConfig.load(args.config, **overrides)
    return ex.ExperimentConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})


def cmd_train(args):
    cfg = load_config(args)
    histories = {}
    result = ex.run_experiment(cfg, args.out_dir, histories)
    rows = ex.main_rows(result)
    print(ex.report(rows, args.out_dir, "results", ex.MAIN_COLUMNS, rp.plot_main))
    if histories:
        rp.plot_history(histories, Path(args.out_dir) / "figures" / "history.png")
    for s in result.seeds:
        if s.error:
            print(f"seed {s.seed} (kir {s.kir}) failed: {s.error}", file=sys.stderr)
    return 0


def cmd_eval(args):
    run = Path(args.run_dir)
    model = IntentModel.load(run / "checkpoint.npz")
    boundaries = load_boundaries(run / "boundaries.tsv")
    vocab = Vocabulary.load(run / "vocab.txt")
    known = (run / "labels.txt").read_text(encoding="utf-8").split()
    cfg = ex.ExperimentConfig.load(run / "config.txt")
    records = load_tsv(args.dataset)
    index = {c: i for i, c in enumerate(known)}
    ids = {**index, OPEN: len(known)}
    data = encode_dataset(records, vocab, {r.label: ids.get(r.label, len(known)) for r in records}, cfg.max_seq_len)
    preds = predict_open(model.extract(data.ids, data.mask), boundaries)
    text = evaluate(preds, data.labels, known).to_json()
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_split(args):
    cfg = load_config(args)
    corpus = ex.load_corpus(cfg)
    out = Path(args.out_dir)
    for kir in cfg.kir:
        for seed in cfg.seeds:
            split = ex.split_corpus(corpus, cfg, kir, seed)
            d = out / f"kir_{kir:.2f}" / f"seed_{seed}"
            d.mkdir(parents=True, exist_ok=True)
            for part in ("train", "dev", "test"):
                write_tsv(d / f"{part}.tsv", getattr(split, part))
            (d / "known.txt").write_text("\n".join(split.known_classes) + "\n", encoding="utf-8")
            print(f"{d}\ttrain={len(split.train)}\tdev={len(split.dev)}\ttest={len(split.test)}")
    return 0


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_ablate_length(args):
    cfg = load_config(args)
    rows = ex.ablate_prefix_length(cfg, _ints(args.lengths), args.out_dir)
    print(ex.report(rows, args.out_dir, "prefix_length", ex.LENGTH_COLUMNS, rp.plot_lengths))
    return 0


def cmd_ablate_layers(args):
    cfg = load_config(args)
    layers = _ints(args.layers) if args.layers else list(range(1, cfg.num_layers + 1))
    rows = ex.ablate_layer_grouping(cfg, layers, args.out_dir)
    print(ex.report(rows, args.out_dir, "layer_grouping", ex.LAYER_COLUMNS, rp.plot_layers))
    return 0


def cmd_ablate_components(args):
    cfg = load_config(args)
    rows = ex.ablate_last_layer_components(cfg, args.out_dir)
    print(ex.report(rows, args.out_dir, "components", ex.COMPONENT_COLUMNS, rp.plot_components))
    return 0


def cmd_synth(args):
    corpus = synth_corpus(args.num_intents, args.samples_per_intent, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_tsv(args.out, corpus)
    print(f"wrote {len(corpus)} utterances to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "split": cmd_split,
    "ablate-length": cmd_ablate_length,
    "ablate-layers": cmd_ablate_layers,
    "ablate-components": cmd_ablate_components,
    "synth": cmd_synth,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PlanError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OpenIntentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
