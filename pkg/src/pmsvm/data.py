"""Dataset ingestion, scaling, splits, and synthetic generators.

The scaling pipeline is load-bearing for privacy: the weight-perturbation
sensitivity constant assumes every feature vector lies in the unit L2 ball.
Min-max scaling alone only bounds coordinates to [0,1] (a row can still
reach norm sqrt(d)), so :func:`project_unit_ball` is applied after it for
any weight-perturbation training. Both transforms act per example, which
keeps them compatible with per-example DP sensitivity analysis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import RandomSource


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n x d), integer labels in [0, c), class count."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    # Original label tokens in index order, when the source had any.
    label_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(
                f"labels shape {y.shape} does not match {X.shape[0]} rows"
            )
        c = int(self.num_classes)
        if c < 2:
            raise ValueError(f"need at least 2 classes, got {c}")
        if y.size and (y.min() < 0 or y.max() >= c):
            raise ValueError(f"labels must lie in [0, {c})")
        X = X.copy()
        y = y.copy()
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", c)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[indices],
            self.labels[indices],
            self.num_classes,
            self.label_names,
        )

    def relabel_binary(self, positive_class: int) -> np.ndarray:
        """+-1 label vector for a one-vs-rest subproblem."""
        return np.where(self.labels == positive_class, 1.0, -1.0)


@dataclass(frozen=True)
class MinMaxScaler:
    minimum: np.ndarray
    range: np.ndarray


def _compact_labels(raw: list[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    """Map label tokens to [0, c) in first-appearance order."""
    mapping: dict[str, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, tok in enumerate(raw):
        if tok not in mapping:
            mapping[tok] = len(mapping)
        out[i] = mapping[tok]
    return out, tuple(mapping)


def load_csv(path: str, label_column: int, has_header: bool = False) -> Dataset:
    """Comma-separated table, one label column, the rest numeric features.

    Labels may be integers or category strings; either way they are mapped
    to [0, c) in first-appearance order and the original tokens are kept on
    the Dataset for report echoing.
    """
    rows: list[list[float]] = []
    raw_labels: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not record:
                continue
            if not -len(record) <= label_column < len(record):
                raise ValueError(
                    f"{path}: row {lineno} has {len(record)} columns, "
                    f"label column {label_column} is out of range"
                )
            lab = label_column % len(record)
            feats = []
            for j, cell in enumerate(record):
                if j == lab:
                    continue
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: row {lineno}, column {j}: "
                        f"cannot parse feature value {cell!r}"
                    ) from None
            rows.append(feats)
            raw_labels.append(record[lab].strip())
    if not rows:
        raise ValueError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent row widths {sorted(widths)}")
    labels, names = _compact_labels(raw_labels)
    if len(names) < 2:
        raise ValueError(f"{path}: need at least 2 distinct labels, got {len(names)}")
    return Dataset(np.array(rows), labels, len(names), names)


def load_libsvm(path: str) -> Dataset:
    """Sparse "label index:value" lines, 1-based strictly increasing indices.

    Materializes a dense matrix with d = max index; absent entries are 0.
    Labels are compacted to [0, c) in first-appearance order.
    """
    raw_labels: list[str] = []
    entries: list[list[tuple[int, float]]] = []
    d = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            toks = line.split()
            if not toks:
                continue
            raw_labels.append(toks[0])
            row: list[tuple[int, float]] = []
            prev = 0
            for tok in toks[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ValueError(
                        f"{path}: line {lineno}: malformed token {tok!r}"
                    ) from None
                if idx <= prev:
                    raise ValueError(
                        f"{path}: line {lineno}: indices must be 1-based and "
                        f"strictly increasing, got {idx} after {prev}"
                    )
                prev = idx
                row.append((idx, val))
                d = max(d, idx)
            entries.append(row)
    if not entries:
        raise ValueError(f"{path}: no samples")
    X = np.zeros((len(entries), d))
    for i, row in enumerate(entries):
        for idx, val in row:
            X[i, idx - 1] = val
    labels, names = _compact_labels(raw_labels)
    if len(names) < 2:
        raise ValueError(f"{path}: need at least 2 distinct labels, got {len(names)}")
    return Dataset(X, labels, len(names), names)


def save_libsvm(path: str, dataset: Dataset) -> None:
    """Inverse of load_libsvm on the dense matrix (zeros are omitted)."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(dataset.features, dataset.labels):
            parts = [str(int(y))]
            for j in np.flatnonzero(x != 0.0):
                parts.append(f"{j + 1}:{x[j]:.17g}")
            fh.write(" ".join(parts) + "\n")


def fit_minmax(train: Dataset) -> MinMaxScaler:
    """Per-feature minimum and range, learned on the training split only."""
    lo = train.features.min(axis=0)
    hi = train.features.max(axis=0)
    return MinMaxScaler(minimum=lo, range=hi - lo)


def apply_minmax(scaler: MinMaxScaler, dataset: Dataset) -> Dataset:
    """Map into [0,1] per coordinate; zero-range features map to 0.

    Out-of-range values (test rows beyond the training envelope) clamp to
    [0,1] so every transformed row stays inside the same geometry.
    """
    if scaler.minimum.shape[0] != dataset.d:
        raise ValueError(
            f"scaler is {scaler.minimum.shape[0]}-dimensional, "
            f"dataset is {dataset.d}-dimensional"
        )
    rng_ = scaler.range
    safe = np.where(rng_ > 0, rng_, 1.0)
    X = (dataset.features - scaler.minimum) / safe
    X = np.where(rng_ > 0, X, 0.0)
    X = np.clip(X, 0.0, 1.0)
    return Dataset(X, dataset.labels, dataset.num_classes, dataset.label_names)


def project_unit_ball(dataset: Dataset) -> Dataset:
    """Scale rows with ||x|| > 1 back to the unit sphere; others untouched."""
    norms = np.linalg.norm(dataset.features, axis=1)
    scale = np.where(norms > 1.0, 1.0 / np.maximum(norms, 1e-300), 1.0)
    return Dataset(
        dataset.features * scale[:, None],
        dataset.labels,
        dataset.num_classes,
        dataset.label_names,
    )


def stratified_split(
    dataset: Dataset, test_fraction: float, rng: RandomSource
) -> tuple[Dataset, Dataset]:
    """Per-class split with test counts round(count * fraction), half up.

    Every class keeps at least one training sample; every input row lands in
    exactly one of the two outputs.
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError(f"test_fraction must lie in [0,1], got {test_fraction}")
    counts = dataset.class_counts()
    if (counts < 2).any():
        bad = int(np.argmin(counts))
        raise ValueError(
            f"stratified_split needs >=2 samples per class, class {bad} has "
            f"{int(counts[bad])}"
        )
    test_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for k in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == k)
        t = int(np.floor(len(members) * test_fraction + 0.5))
        t = min(t, len(members) - 1)  # keep a train sample per class
        perm = rng.gen.permutation(members)
        test_idx.append(perm[:t])
        train_idx.append(perm[t:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return dataset.subset(tr), dataset.subset(te)


def synth_blobs(
    c: int, n_per_class: int, d: int, separation: float, rng: RandomSource
) -> Dataset:
    """Gaussian class blobs on a circle, then min-max + unit-ball scaled.

    Class means are separation * u_k with the u_k equally spaced unit
    vectors in the first two coordinates (pairwise angle >= 2*pi/c), unit
    covariance in all d dimensions. The returned data has already been
    through the same scaling used for private training, so row norms
    are <= 1.
    """
    if c < 2:
        raise ValueError(f"need c >= 2 classes, got {c}")
    if d < 2:
        raise ValueError(f"need d >= 2 dimensions, got {d}")
    n_per_class = int(n_per_class)
    angles = 2.0 * np.pi * np.arange(c) / c
    means = np.zeros((c, d))
    means[:, 0] = separation * np.cos(angles)
    means[:, 1] = separation * np.sin(angles)
    labels = np.repeat(np.arange(c), n_per_class)
    X = means[labels] + rng.gen.standard_normal((c * n_per_class, d))
    ds = Dataset(X, labels, c)
    ds = apply_minmax(fit_minmax(ds), ds)
    return project_unit_ball(ds)
