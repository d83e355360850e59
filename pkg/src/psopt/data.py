"""Dataset generation and CSV ingestion.

Two built-in generators cover the experiment presets: a three-Gaussian
classification cloud with shuffled labels, and a wine-quality-shaped
regression table for running the tabular harness without external
downloads.  Real datasets come in through load_csv.
"""

from __future__ import annotations

import csv

import numpy as np

from .field import DataError, PointCloud

BLOB_CENTERS = ((0.0, 0.0), (5.0, 0.0), (2.5, 4.3))
BLOB_STD = 1.0


def make_blobs(
    n_per_class: int = 1000,
    shuffle_frac: float = 0.2,
    seed: int = 0,
    centers=BLOB_CENTERS,
    std: float = BLOB_STD,
) -> PointCloud:
    """Sample `n_per_class` 2-D points around each center, one class per
    center, then randomly permute the labels of a `shuffle_frac` fraction of
    all points (class noise)."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    if not 0.0 <= shuffle_frac <= 1.0:
        raise ValueError("shuffle_frac must be in [0, 1]")
    rng = np.random.default_rng(seed)
    points, labels = [], []
    for cls, center in enumerate(centers):
        points.append(rng.normal(0.0, std, size=(n_per_class, 2)) + np.asarray(center))
        labels.append(np.full(n_per_class, cls, dtype=np.float64))
    pts = np.concatenate(points)
    lab = np.concatenate(labels)
    n_shuffled = int(round(shuffle_frac * len(lab)))
    if n_shuffled > 1:
        chosen = rng.choice(len(lab), size=n_shuffled, replace=False)
        lab[chosen] = lab[rng.permutation(chosen)]
    return PointCloud(pts, lab)


WINE_COLUMNS = (
    "fixed acidity",
    "volatile acidity",
    "citric acid",
    "residual sugar",
    "chlorides",
    "free sulfur dioxide",
    "total sulfur dioxide",
    "density",
    "pH",
    "sulphates",
    "alcohol",
)


def make_wine_like(n: int = 1599, seed: int = 7, noisy_frac: float = 0.2) -> PointCloud:
    """Synthetic stand-in for the red wine quality table.

    Eleven correlated positive features on realistic scales and an integer
    quality score in 3..8 driven by a smooth function of a few features.  A
    `noisy_frac` fraction of the scores gets extra heavy noise, giving
    regularizers something to resist.  Deterministic given seed.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    rng = np.random.default_rng(seed)
    latent = rng.normal(size=(n, 4))
    cols = {
        "fixed acidity": 8.3 + 1.7 * latent[:, 0] + 0.3 * rng.normal(size=n),
        "volatile acidity": np.abs(0.53 + 0.18 * latent[:, 1] + 0.05 * rng.normal(size=n)),
        "citric acid": np.clip(0.27 + 0.15 * latent[:, 0] - 0.08 * latent[:, 1], 0.0, 1.0),
        "residual sugar": np.abs(2.5 + 1.2 * rng.normal(size=n)),
        "chlorides": np.abs(0.087 + 0.03 * latent[:, 2] + 0.01 * rng.normal(size=n)),
        "free sulfur dioxide": np.abs(15.9 + 9.0 * latent[:, 3] + 3.0 * rng.normal(size=n)),
        "total sulfur dioxide": np.abs(46.0 + 28.0 * latent[:, 3] + 8.0 * rng.normal(size=n)),
        "density": 0.9967 + 0.0017 * latent[:, 0] + 0.0005 * rng.normal(size=n),
        "pH": 3.31 + 0.15 * latent[:, 2] - 0.05 * latent[:, 0],
        "sulphates": np.abs(0.66 + 0.16 * latent[:, 2] + 0.04 * rng.normal(size=n)),
        "alcohol": 10.4 + 1.0 * np.abs(latent[:, 1]) + 0.5 * rng.normal(size=n),
    }
    x = np.column_stack([cols[name] for name in WINE_COLUMNS])
    score = (
        5.6
        + 0.9 * (cols["alcohol"] - 10.4)
        - 1.6 * (cols["volatile acidity"] - 0.53)
        + 0.8 * (cols["sulphates"] - 0.66)
        + 0.3 * np.sin(2.0 * latent[:, 0])
        + 0.25 * rng.normal(size=n)
    )
    noisy = rng.random(n) < noisy_frac
    score[noisy] += rng.normal(0.0, 1.2, size=int(noisy.sum()))
    quality = np.clip(np.rint(score), 3, 8)
    return PointCloud(x, quality)


def save_csv(path, cloud: PointCloud, feature_names=None, label_name="label") -> None:
    """Write a PointCloud as CSV with a header row; the label column last."""
    names = list(feature_names) if feature_names else [f"x{i}" for i in range(cloud.dim)]
    if len(names) != cloud.dim:
        raise ValueError(f"need {cloud.dim} feature names, got {len(names)}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ([label_name] if cloud.labels is not None else []))
        for i in range(cloud.n):
            row = [repr(float(v)) for v in cloud.points[i]]
            if cloud.labels is not None:
                row.append(repr(float(cloud.labels[i])))
            writer.writerow(row)


def load_csv(path, label: str | int | None = None, header: bool | None = None) -> PointCloud:
    """Read a CSV of real-valued columns into a PointCloud.

    label selects the label column by name (requires a header) or integer
    position; None loads an unlabeled cloud.  header=None sniffs: if any
    cell of the first row fails to parse as a number, it is a header.
    Negative label positions count from the end (-1 = last column).
    """
    with open(path, newline="") as fh:
        # the real wine file is ;-separated, so sniff the delimiter
        sample = fh.read(4096)
        fh.seek(0)
        delim = ";" if sample.count(";") > sample.count(",") else ","
        lines = [row for row in csv.reader(fh, delimiter=delim) if row]
    if not lines:
        raise DataError(f"{path}: empty CSV")
    names = None
    if header is None:
        try:
            [float(c) for c in lines[0]]
            header = False
        except ValueError:
            header = True
    if header:
        names = [c.strip().strip('"') for c in lines[0]]
        lines = lines[1:]
        if not lines:
            raise DataError(f"{path}: CSV has a header but no rows")
    width = len(lines[0])
    label_idx = None
    if label is not None:
        if isinstance(label, str):
            if names is None or label not in names:
                raise DataError(f"{path}: no column named {label!r}")
            label_idx = names.index(label)
        else:
            label_idx = label if label >= 0 else width + label
            if not 0 <= label_idx < width:
                raise DataError(f"{path}: label column {label} out of range")
    try:
        table = np.array([[float(c) for c in row] for row in lines], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != width:
        raise DataError(f"{path}: ragged rows")
    if label_idx is None:
        return PointCloud(table)
    feats = np.delete(table, label_idx, axis=1)
    if feats.shape[1] == 0:
        raise DataError(f"{path}: no feature columns besides the label")
    return PointCloud(feats, table[:, label_idx])


__all__ = [
    "BLOB_CENTERS",
    "BLOB_STD",
    "WINE_COLUMNS",
    "make_blobs",
    "make_wine_like",
    "save_csv",
    "load_csv",
]
