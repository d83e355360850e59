"""Domain approximations: point clouds, neighborhood graphs, and scalar fields.

A scalar function on a continuous domain is represented by its values on the
vertices of a graph that approximates the domain (a grid for images, a k-NN
graph for sampled point clouds).  Everything downstream (merge trees,
simplification, losses) operates on these discrete fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np


class DataError(ValueError):
    """Raised when an input file or payload cannot be interpreted."""


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite values it cannot recover from."""


def _as_float_matrix(points, name="points"):
    if isinstance(points, PointCloud):
        points = points.points
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {pts.shape}")
    return pts


@dataclass
class PointCloud:
    """Points in feature space with optional per-point labels.

    points: (n, d) float array, n >= 1 and d >= 1.  labels: (n,) float array
    or None; class indices for classification, real targets for regression.
    """

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or 0 in self.points.shape:
            raise ValueError(
                f"points must be a nonempty (n, d) array, got shape {self.points.shape}"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (self.points.shape[0],):
                raise ValueError(
                    f"labels shape {self.labels.shape} does not match "
                    f"{self.points.shape[0]} points"
                )

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class Graph:
    """Undirected graph on vertices 0..n-1 with a cached CSR adjacency.

    Edges are stored deduplicated as (min, max) pairs with no self-loops.
    The CSR adjacency (rows sorted by neighbor index) is built once at
    construction because persistence computations traverse it many times.
    """

    __slots__ = ("n", "edges", "indptr", "indices", "grid_shape", "_padded")

    _PAD_MAX_WIDTH = 16

    def __init__(self, n: int, edges):
        if n < 0:
            raise ValueError("vertex count must be nonnegative")
        edges = np.asarray(edges, dtype=np.int64)
        if edges.size == 0:
            edges = edges.reshape(0, 2)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ValueError(f"edges must be (m, 2), got shape {edges.shape}")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        if lo.size:
            seen = np.unique(lo * np.int64(n) + hi)
            lo, hi = seen // n, seen % n
        self.n = int(n)
        self.edges = np.column_stack([lo, hi]) if lo.size else np.zeros((0, 2), np.int64)
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
        rows = np.lexsort((dst, src))
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        if src.size:
            self.indptr[1:] = np.cumsum(np.bincount(src, minlength=n))
        self.indices = dst[rows].astype(np.int32)
        self.grid_shape = None   # (height, width) when built as a full grid
        self._padded = None

    @property
    def m(self) -> int:
        return self.edges.shape[0]

    def padded_adjacency(self):
        """(width, rows) with every adjacency row padded to a fixed width by
        the sentinel vertex n, so row v occupies rows[v*width : (v+1)*width]
        and needs no index-pointer lookup.  Returns (0, None) when the
        maximum degree is too large or too skewed for padding to pay off.
        Built once and cached; traversal-heavy code prefers it to CSR.
        """
        if self._padded is None:
            deg = np.diff(self.indptr)
            width = int(deg.max()) if deg.size else 0
            total = self.n * width
            if width > self._PAD_MAX_WIDTH or total > 4 * max(self.indices.size, 1):
                self._padded = (0, None)
            else:
                rows = np.full(total, self.n, np.int32)
                slot = np.repeat(
                    np.arange(self.n, dtype=np.int64) * width - self.indptr[:-1], deg
                ) + np.arange(self.indices.size)
                rows[slot] = self.indices
                self._padded = (width, rows)
        return self._padded

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def __eq__(self, other):
        return (
            isinstance(other, Graph)
            and self.n == other.n
            and np.array_equal(self.edges, other.edges)
        )

    def to_json_dict(self) -> dict:
        return {"vertex_count": self.n, "edges": self.edges.tolist()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Graph":
        try:
            return cls(int(d["vertex_count"]), d["edges"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad graph payload: {exc}") from exc


@dataclass
class ScalarField:
    """A graph together with one scalar value per vertex."""

    graph: Graph
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.graph.n,):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.graph.n} vertices"
            )

    @property
    def n(self) -> int:
        return self.graph.n

    def to_json_dict(self) -> dict:
        return {"graph": self.graph.to_json_dict(), "values": self.values.tolist()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScalarField":
        try:
            graph = Graph.from_json_dict(d["graph"])
            return cls(graph, np.asarray(d["values"], dtype=np.float64))
        except DataError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad scalar field payload: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "ScalarField":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json_dict(payload)


@dataclass
class DatasetSplit:
    """Train / validation / test index partition of 0..n-1."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        joined = np.concatenate([self.train, self.val, self.test])
        if not np.array_equal(np.sort(joined), np.arange(joined.size)):
            raise ValueError("split parts must partition 0..n-1 exactly")


def split_dataset(n: int, seed: int) -> DatasetSplit:
    """Shuffle 0..n-1 and carve off a quarter for test, then a quarter of the
    remainder for validation (56/19/25 within rounding)."""
    if n < 4:
        raise ValueError("need at least 4 points to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(np.rint(n / 4))
    n_val = int(np.rint(0.25 * (n - n_test)))
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test : n_test + n_val])
    train = np.sort(perm[n_test + n_val :])
    return DatasetSplit(train=train, val=val, test=test)


def _wrap_like(original, points):
    if isinstance(original, PointCloud):
        return PointCloud(points, original.labels)
    return points


def standardize(points, ref=None):
    """Center and scale features by the mean/std of `ref` (default: the
    points themselves, the usual whole-cloud standardization).

    Population standard deviation; constant features are mapped to zero
    rather than dividing by zero.  Accepts a PointCloud (labels pass
    through) or a plain (n, d) array and returns the same kind.
    """
    pts = _as_float_matrix(points)
    ref_pts = pts if ref is None else _as_float_matrix(ref, "ref")
    if ref_pts.shape[0] < 2:
        raise ValueError("standardization needs at least 2 reference points")
    mean = ref_pts.mean(axis=0)
    std = ref_pts.std(axis=0)
    safe = np.where(std == 0.0, 1.0, std)
    out = (pts - mean) / safe
    out[:, std == 0.0] = 0.0
    return _wrap_like(points, out)


def augment_cloud(points, n_copies: int, sigma: float, seed: int):
    """Append n_copies noisy copies of every point (i.i.d. N(0, sigma^2) per
    coordinate, sigma a standard deviation).

    The originals come first with their indices preserved; copies follow in
    copy order.  A PointCloud input yields an unlabeled PointCloud (the
    jittered points have no labels); an array yields an array.
    """
    pts = _as_float_matrix(points)
    if n_copies < 0:
        raise ValueError("n_copies must be nonnegative")
    if n_copies > 0 and sigma <= 0:
        raise ValueError("sigma must be positive when sampling copies")
    if n_copies == 0:
        out = pts.copy()
    else:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, sigma, size=(n_copies,) + pts.shape)
        out = np.concatenate([pts, (pts[None, :, :] + noise).reshape(-1, pts.shape[1])])
    if isinstance(points, PointCloud):
        return PointCloud(out)
    return out


def pca_project(points, dims: int):
    """Project onto the top `dims` principal components of the centered data.

    Components are ordered by decreasing eigenvalue of the covariance matrix;
    each component's sign is fixed so its largest-magnitude coefficient is
    positive, which makes the projection deterministic.
    """
    pts = _as_float_matrix(points)
    if not 1 <= dims <= pts.shape[1]:
        raise ValueError(f"dims must be in [1, {pts.shape[1]}], got {dims}")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    _, eigvecs = np.linalg.eigh(cov)
    comp = eigvecs[:, ::-1][:, :dims]
    flip = np.abs(comp).argmax(axis=0)
    signs = np.sign(comp[flip, np.arange(dims)])
    signs[signs == 0] = 1.0
    return _wrap_like(points, centered @ (comp * signs))


def build_knn_graph(points, k: int) -> Graph:
    """Symmetrized k-nearest-neighbor graph under Euclidean distance.

    Each point contributes edges to its k nearest other points; the union of
    the directed pairs is kept (no mutuality requirement).  Distance ties are
    broken toward the smaller point index.  Exact brute force, computed in
    blocks so memory stays bounded.
    """
    pts = _as_float_matrix(points)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, n-1], got k={k}, n={n}")
    sq = np.einsum("ij,ij->i", pts, pts)
    block = max(1, min(n, 2**22 // max(n, 1)))
    nbrs = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * pts[start:stop] @ pts.T
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable argsort orders equal distances by index, matching the tie rule
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
        nbrs[start:stop] = idx
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    return Graph(n, np.column_stack([src, nbrs.ravel()]))


def build_grid_graph(width: int, height: int) -> Graph:
    """4-connected width x height grid, vertices in row-major order (vertex
    of row i, column j is i*width + j)."""
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be positive")
    ids = np.arange(height * width, dtype=np.int64).reshape(height, width)
    horiz = np.column_stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()])
    vert = np.column_stack([ids[:-1, :].ravel(), ids[1:, :].ravel()])
    g = Graph(height * width, np.concatenate([horiz, vert]))
    g.grid_shape = (height, width)   # enables implicit-adjacency traversal
    return g
