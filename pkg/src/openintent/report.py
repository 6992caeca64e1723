"""Tables (text, TSV, JSON) and matplotlib figures for experiment results."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ExperimentError  # noqa: E402


def format_table(rows, columns):
    """Fixed-width text table; numbers printed with two decimals."""
    if not rows:
        raise ExperimentError("no results to report")

    def cell(v):
        return f"{v:.2f}" if isinstance(v, float) else str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def write_table(rows, columns, out_dir, name):
    """Write ``name``.txt/.tsv/.json under ``out_dir`` and return the text table."""
    text = format_table(rows, columns)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.txt").write_text(text + "\n", encoding="utf-8")
    with open(out / f"{name}.tsv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([r.get(c, "") for c in columns])
    (out / f"{name}.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return text


def read_tsv_table(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return rows[0], rows[1:]


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_main(rows, path):
    """Grouped bars of accuracy and macro F1 for each (KIR, method) row."""
    if not rows:
        raise ExperimentError("no results to plot")
    labels = [f"{r['Method']}\n{r['KIR']}" for r in rows]
    xs = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(4, 1.6 * len(rows)), 3.5))
    ax.bar([x - 0.2 for x in xs], [r["Accuracy"] for r in rows], width=0.4, label="Accuracy")
    ax.bar([x + 0.2 for x in xs], [r["F1-Score"] for r in rows], width=0.4, label="F1-Score")
    ax.set_xticks(list(xs), labels, fontsize=8)
    ax.set_ylim(0, 100)
    ax.set_ylabel("%")
    ax.legend()
    return _save(fig, path)


def plot_lengths(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [r["Length"] for r in rows]
    for key in ("Accuracy", "F1-score", "Open", "Known"):
        ax.plot(xs, [r[key] for r in rows], marker="o", label=key)
    ax.set_xlabel("prefix length")
    ax.set_ylabel("%")
    ax.legend()
    return _save(fig, path)


def plot_layers(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = [str(r["x"]) for r in rows]
    ax.plot(labels, [r["Just x Accuracy"] for r in rows], marker="o", label="Just x")
    ax.plot(labels, [r["x and Rest Accuracy"] for r in rows], marker="s", label="x and Rest")
    ax.set_xlabel("x")
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    return _save(fig, path)


def plot_components(rows, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = [r["Method"] for r in rows]
    ax.barh(names, [r["Accuracy"] for r in rows])
    ax.set_xlabel("accuracy (%)")
    ax.set_xlim(0, 100)
    return _save(fig, path)


def plot_history(histories, path):
    """Training loss and dev accuracy per epoch, one line per run."""
    if not histories:
        raise ExperimentError("no training histories to plot")
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    for key, hist in sorted(histories.items()):
        epochs = [r.epoch for r in hist]
        a.plot(epochs, [r.train_loss for r in hist], label=str(key))
        b.plot(epochs, [r.dev_acc for r in hist], label=str(key))
    a.set_xlabel("epoch")
    a.set_ylabel("train loss")
    b.set_xlabel("epoch")
    b.set_ylabel("dev accuracy")
    b.legend(fontsize=7)
    return _save(fig, path)
