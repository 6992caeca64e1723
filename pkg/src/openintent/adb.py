"""Adaptive decision boundaries: one learned radius around each known-class centroid.

Radii are parameterized as ``softplus(raw)`` so they stay positive throughout
optimization.  Distances are computed on frozen representations, so only the
raw radii receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import DataError, DivergenceError, NumericError
from .numerics import Parameter, Tensor
from .rng import stream
from .trainer import Adam


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


@dataclass
class ADBConfig:
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    tol: float = 1e-4
    rng_seed: int = 0


@dataclass
class BoundarySet:
    centroids: np.ndarray  # (K, F)
    raw: np.ndarray  # (K,)
    labels: list = field(default_factory=list)

    @property
    def radii(self):
        return softplus(self.raw)

    @property
    def num_classes(self):
        return len(self.raw)

    @property
    def open_id(self):
        return self.num_classes


@dataclass
class BoundaryTrace:
    losses: list = field(default_factory=list)  # per epoch
    min_radius: list = field(default_factory=list)  # per optimizer step
    epochs_run: int = 0


def compute_centroids(reps, labels, num_classes=None, names=None):
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels)
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    centroids = np.zeros((k, reps.shape[1]))
    for c in range(k):
        members = reps[labels == c]
        if len(members) == 0:
            name = names[c] if names else c
            raise DataError(f"known class {name!r} has no samples to place a centroid")
        centroids[c] = members.mean(axis=0)
    return centroids


def distances(reps, centroids):
    """Euclidean distance of every representation to every centroid, (n, K)."""
    diff = np.asarray(reps, dtype=np.float64)[:, None, :] - np.asarray(centroids)[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def boundary_loss(reps, labels, centroids, raw):
    """Mean of |d_i - radius_{y_i}|; gradient reaches ``raw`` only."""
    labels = np.asarray(labels)
    diff = np.asarray(reps, dtype=np.float64) - np.asarray(centroids)[labels]
    d = np.sqrt((diff * diff).sum(axis=1))
    raw = raw if isinstance(raw, Tensor) else Tensor(raw)
    radius = nx.softplus(nx.take_rows(raw.reshape(-1, 1), labels)).reshape(-1)
    return nx.tabs(Tensor(d) - radius).mean()


def learn_boundaries(reps, labels, cfg=None, num_classes=None, names=None, trace=None):
    """Fit one radius per known class with Adam, starting from raw = 0 (radius ln 2).

    Stops after ``cfg.epochs`` or once the epoch loss has not improved by
    more than ``cfg.tol`` (relative) for ``cfg.patience`` epochs.
    """
    cfg = cfg or ADBConfig()
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.isfinite(reps).all():
        raise NumericError("representations contain non-finite values")
    centroids = compute_centroids(reps, labels, num_classes, names)
    raw = Parameter(np.zeros(len(centroids)), "adb.raw_radius")
    opt = Adam({"raw": raw}, lr=cfg.learning_rate)
    rng = stream(cfg.rng_seed, "adb-batches")
    trace = trace if trace is not None else BoundaryTrace()
    n = len(labels)
    batch = cfg.batch_size or n
    best, stale = np.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            opt.zero_grad()
            try:
                loss = boundary_loss(reps[idx], labels[idx], centroids, raw)
            except NumericError as exc:
                raise DivergenceError(f"boundary loss diverged in epoch {epoch}", epoch=epoch) from exc
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            trace.min_radius.append(float(softplus(raw.data).min()))
        epoch_loss = total / n
        trace.losses.append(epoch_loss)
        trace.epochs_run = epoch
        if epoch_loss < best * (1.0 - cfg.tol):
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return BoundarySet(centroids, raw.data.copy(), list(names) if names else [])


def predict_with(reps, centroids, radii):
    """Nearest centroid if within its radius, else K (open).  Ties go to the lowest id."""
    dist = distances(reps, centroids)
    nearest = dist.argmin(axis=1)
    inside = dist[np.arange(len(nearest)), nearest] <= np.asarray(radii)[nearest]
    return np.where(inside, nearest, len(centroids))


def predict_open(reps, boundaries):
    reps = np.asarray(reps, dtype=np.float64)
    single = reps.ndim == 1
    out = predict_with(np.atleast_2d(reps), boundaries.centroids, boundaries.radii)
    return int(out[0]) if single else out


def save_boundaries(path, boundaries):
    """One line per class: id, label, radius, raw radius, centroid coordinates (tab separated)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# class_id\tlabel\tradius\traw_radius\tcentroid...\n")
        for k in range(boundaries.num_classes):
            label = boundaries.labels[k] if boundaries.labels else str(k)
            coords = "\t".join(repr(float(v)) for v in boundaries.centroids[k])
            fh.write(f"{k}\t{label}\t{float(boundaries.radii[k])!r}\t{float(boundaries.raw[k])!r}\t{coords}\n")


def load_boundaries(path):
    ids, labels, raw, cents = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            ids.append(int(parts[0]))
            labels.append(parts[1])
            raw.append(float(parts[3]))
            cents.append([float(v) for v in parts[4:]])
    if ids != list(range(len(ids))):
        raise DataError("boundary file class ids must be 0..K-1 in order")
    return BoundarySet(np.array(cents), np.array(raw), labels)
