"""Merge trees and 0-dimensional persistence diagrams of scalar fields.

The sublevel-set filtration inserts vertices in increasing (value, index)
order, an edge as soon as both endpoints are present.  Each branch of the
merge tree is one connected component of the evolving sublevel graph,
created at a local-minimum vertex (its extremum) and dying when it merges
into a component with an earlier extremum; the component whose extremum
comes first in the filtration order survives.  Superlevel filtrations are
the same computation on the negated field.

The tie rule (break equal values toward the smaller vertex index) makes the
whole construction deterministic, so results are reproducible bit-for-bit.
"""

from __future__ import annotations

import csv
import enum
import json
import os
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .field import DataError, ScalarField


class Direction(enum.Enum):
    SUBLEVEL = "sublevel"
    SUPERLEVEL = "superlevel"

    @classmethod
    def parse(cls, text: str) -> "Direction":
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown direction {text!r}") from None


_FORCE_PYTHON = bool(os.environ.get("PSOPT_PURE_PYTHON"))

try:  # pragma: no cover - exercised implicitly by every tree computation
    if _FORCE_PYTHON:
        raise ImportError
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _bucket_pass(vals, splitters, bid, cnt):
    for i in range(vals.size):
        x = vals[i]
        lo = 0
        hi = splitters.size
        while lo < hi:
            mid = (lo + hi) >> 1
            if x < splitters[mid]:
                hi = mid
            else:
                lo = mid + 1
        bid[i] = lo
        cnt[lo] += 1


@njit(cache=True)
def _bucket_scatter(vals, bid, off, bv, bi):
    for i in range(vals.size):
        b = bid[i]
        s = off[b]
        off[b] = s + 1
        bv[s] = vals[i]
        bi[s] = i


def _sorted_order(vals):
    """Argsort returning (order, sorted_values).

    Large inputs are partitioned into cache-sized buckets by sampled
    splitters and each bucket is sorted independently; every comparison
    against a splitter is deterministic, so a run of equal values always
    lands in a single bucket and concatenating the buckets sorts the whole
    array.  NaNs compare false against every splitter, fall into the last
    bucket, and sort to its end, keeping the endpoint finiteness check in
    compute_merge_tree valid.
    """
    n = vals.size
    if not _HAVE_NUMBA or n < (1 << 15):
        order = np.argsort(vals)
        return order, vals[order]
    k = 32
    sample = vals[:: max(1, n // 4096)]
    sample = np.sort(sample[np.isfinite(sample)])
    if sample.size < k:
        order = np.argsort(vals)
        return order, vals[order]
    splitters = sample[np.arange(1, k) * sample.size // k].copy()
    bid = np.empty(n, np.uint8)
    cnt = np.zeros(k, np.int64)
    _bucket_pass(vals, splitters, bid, cnt)
    ends = np.cumsum(cnt)
    starts = ends - cnt
    bv = np.empty(n, vals.dtype)
    bi = np.empty(n, np.int32)
    _bucket_scatter(vals, bid, starts.copy(), bv, bi)
    order = np.empty(n, np.int64)
    sv = np.empty(n, vals.dtype)
    for b in range(k):
        a, e = starts[b], ends[b]
        if e > a:
            perm = np.argsort(bv[a:e])
            order[a:e] = bi[a:e][perm]
            sv[a:e] = bv[a:e][perm]
    return order, sv


def _stable_order(vals, order=None, sv=None):
    """Indices sorting vals ascending, ties by index (stable).

    Introsort plus an explicit fix of tied runs beats a stable sort on large
    inputs; when ties dominate the input we fall back to the stable sort.
    An already-computed introsort order and its sorted values can be passed
    in to avoid re-sorting.
    """
    if order is None:
        order = np.argsort(vals)
    if sv is None:
        sv = vals[order]
    dup = np.flatnonzero(sv[1:] == sv[:-1])
    if dup.size == 0:
        return order
    if dup.size > vals.size // 4:
        return np.argsort(vals, kind="stable")
    breaks = np.flatnonzero(np.diff(dup) > 1)
    starts = dup[np.concatenate(([0], breaks + 1))]
    ends = dup[np.concatenate((breaks, [dup.size - 1]))] + 1
    for a, b in zip(starts, ends):
        order[a : b + 1] = np.sort(order[a : b + 1])
    return order


@lru_cache(maxsize=64)
def _div_magic(w, n_max):
    """(mult, shift) with (v * mult) >> shift == v // w for all 0 <= v < n_max,
    or None when no safe int64 magic exists.  Checking the two values around
    every quotient step is exhaustive because both sides are nondecreasing."""
    shift = 42
    mult = ((1 << shift) + w - 1) // w
    if n_max > 0 and (n_max - 1) * mult >= 1 << 63:
        return None
    j = np.arange(1, (n_max + w - 1) // w + 1, dtype=np.int64)
    for v in (j * w - 1, j * w):
        v = v[v < n_max]
        if not np.array_equal((v * mult) >> shift, v // w):
            return None
    return mult, shift


# Lower-adjacency builders.  Each walks vertices in filtration order and
# emits, per vertex, its already-inserted neighbors, so the sweep kernel
# reads only valid entries, sequentially.  Insertion is tracked by a byte
# map, small enough to stay cache-resident, and the builders never touch
# the field values (ties are detected vectorially on the sorted values
# before gathering).  The cursor advance is branchless: every candidate is
# written, the cursor only moves past the inserted ones.


@njit(cache=True)
def _grid_gather(order, inserted, wpad, mult, shift):
    """Implicit 4-connected grid adjacency via a ghost border: vertex
    o = row * width + col maps to id (row+1) * wpad + col + 1 in a grid
    padded by one cell on every side, where its neighbor candidates are
    unconditionally -+1 and -+wpad; border ids are simply never inserted,
    so no boundary tests are needed.  The row is recovered from o by a
    verified multiply-shift division."""
    n = order.size
    order_ids = np.empty(n, np.int32)
    counts = np.empty(n, np.uint8)
    nbr = np.empty(max(4 * n, 1), np.int32)
    k = 0
    for pos in range(n):
        o = order[pos]
        p = o + wpad + 1 + 2 * ((o * mult) >> shift)
        order_ids[pos] = p
        k0 = k
        u = p - wpad
        nbr[k] = u
        k += 1 if inserted[u] else 0
        u = p - 1
        nbr[k] = u
        k += 1 if inserted[u] else 0
        u = p + 1
        nbr[k] = u
        k += 1 if inserted[u] else 0
        u = p + wpad
        nbr[k] = u
        k += 1 if inserted[u] else 0
        inserted[p] = True
        counts[pos] = k - k0
    return order_ids, counts, nbr[:k]


@njit(cache=True)
def _ell_gather(order, inserted, rows, width):
    """Padded-adjacency builder: fixed-width rows need no index-pointer
    lookups, and the sentinel vertex n is never inserted."""
    n = order.size
    order_ids = np.empty(n, np.int32)
    counts = np.empty(n, np.uint8)
    nbr = np.empty(max(n * width, 1), np.int32)
    k = 0
    for pos in range(n):
        o = order[pos]
        order_ids[pos] = o
        base = width * o
        k0 = k
        for j in range(width):
            u = rows[base + j]
            nbr[k] = u
            k += 1 if inserted[u] else 0
        inserted[o] = True
        counts[pos] = k - k0
    return order_ids, counts, nbr[:k]


@njit(cache=True)
def _csr_gather(order, inserted, indptr, indices):
    """Compressed-adjacency builder for graphs too wide or wasteful to pad."""
    n = order.size
    order_ids = np.empty(n, np.int32)
    counts = np.empty(n, np.int32)
    nbr = np.empty(max(indices.size, 1), np.int32)
    k = 0
    for pos in range(n):
        o = order[pos]
        order_ids[pos] = o
        k0 = k
        for e in range(indptr[o], indptr[o + 1]):
            u = indices[e]
            nbr[k] = u
            k += 1 if inserted[u] else 0
        inserted[o] = True
        counts[pos] = k - k0
    return order_ids, counts, nbr[:k]


def _lower_adjacency_numpy(order, indptr, indices):
    """Vectorized builder for the no-numba fallback (real vertex ids)."""
    n = order.size
    rank = np.empty(n, np.int64)
    rank[order] = np.arange(n)
    counts = np.diff(indptr)[order]
    total = int(counts.sum())
    gather = np.repeat(indptr[order] - np.concatenate(([0], np.cumsum(counts[:-1]))), counts)
    nbr_v = indices[gather + np.arange(total)].astype(np.int64)
    row = np.repeat(np.arange(n), counts)
    keep = rank[nbr_v] < row
    return np.bincount(row[keep], minlength=n), nbr_v[keep]


def _gather_ids(order, graph):
    """Lower adjacency in filtration order by the fastest builder available
    for this graph.  Returns (order_ids, counts, nbr, id_space); the ids
    are ghost-embedded for grids, which never leaks out because the sweep
    reports everything by filtration position."""
    n = graph.n
    if n == 0:
        return np.empty(0, np.int32), np.zeros(0, np.uint8), np.empty(0, np.int32), 1
    if graph.grid_shape is not None:
        height, width = graph.grid_shape
        magic = _div_magic(width, n)
        if magic is not None:
            wpad = width + 2
            id_space = (height + 2) * wpad
            inserted = np.zeros(id_space, np.uint8)
            order_ids, counts, nbr = _grid_gather(order, inserted, wpad, magic[0], magic[1])
            return order_ids, counts, nbr, id_space
    inserted = np.zeros(n + 1, np.uint8)
    width, rows = graph.padded_adjacency()
    if rows is not None:
        order_ids, counts, nbr = _ell_gather(order, inserted, rows, width)
    else:
        order_ids, counts, nbr = _csr_gather(order, inserted, graph.indptr, graph.indices)
    return order_ids, counts, nbr, n


def _sweep_impl(order_ids, counts, nbr, id_space):
    """Union-find sweep over vertices in filtration order.

    `uf` spans whatever id space the gather produced (real vertex ids, or
    ghost-embedded grid ids); entries are parent ids, except that a root r
    stores -(branch index) - 1.  Each branch's latest filtration position
    lives in `top`, and per-branch extremum / death positions live in
    small creation-ordered arrays, all touched only when branches are
    created or merge; union is by merge count, which still bounds tree
    depth logarithmically.  During a multi-way merge the surviving root
    may briefly carry the dead side's branch index, but it is never read
    back within the step (identical roots are skipped) and the closing
    attach rewrites it.  Ids address the union-find only: everything is
    reported by filtration position.  Parent links are not scattered
    here: each merge appends one (child top, merge position) pair to a
    log, and every vertex receives at most one such pair because tops
    only move forward, so the log can be replayed in any order later.
    Returns the per-position branch index, per-branch extremum / death
    positions (-1 for undying), the parent log buffers, and the log
    length.
    """
    n = order_ids.size
    uf = np.empty(id_space, np.int32)
    branch_of = np.empty(n, np.int32)
    top = np.empty(n, np.int32)
    ext = np.empty(n, np.int32)
    death = np.empty(n, np.int32)
    weight = np.empty(n, np.int32)
    cap = max(nbr.size, 1)
    tlog = np.empty(cap, np.int32)
    wlog = np.empty(cap, np.int32)
    ln = 0
    nb = 0
    off = 0
    for pos in range(n):
        w = order_ids[pos]
        best = -1
        bb = -1
        end = off + counts[pos]
        while off < end:
            r = nbr[off]
            off += 1
            while uf[r] >= 0:             # find with path halving
                nxt = uf[r]
                g = uf[nxt]
                if g >= 0:
                    uf[r] = g
                    r = g
                else:
                    r = nxt
            if r == best:
                continue
            b = -uf[r] - 1
            tlog[ln] = top[b]
            wlog[ln] = pos
            ln += 1
            if best == -1:
                best = r
                bb = b
            else:
                if ext[b] < ext[bb]:
                    blive, bdead = b, bb
                else:
                    blive, bdead = bb, b
                death[bdead] = pos
                if weight[b] < weight[bb]:  # union by merge count
                    uf[r] = best
                else:
                    uf[best] = r
                    best = r
                weight[blive] += weight[bdead]
                bb = blive
        if best == -1:
            uf[w] = -nb - 1
            top[nb] = pos
            ext[nb] = pos
            death[nb] = -1
            weight[nb] = 1
            branch_of[pos] = nb
            nb += 1
        else:
            uf[w] = best
            uf[best] = -bb - 1
            top[bb] = pos
            branch_of[pos] = bb
    return branch_of, ext[:nb].copy(), death[:nb].copy(), tlog, wlog, ln


# The kernel is also the no-numba fallback: the same function runs compiled
# when numba is present and interpreted otherwise.
_sweep_python = _sweep_impl
_sweep = njit(cache=True)(_sweep_impl) if _HAVE_NUMBA else _sweep_impl


def _run_sweep(order, graph):
    """Gather then sweep, by the fastest available path."""
    if _HAVE_NUMBA:
        order_ids, counts, nbr, id_space = _gather_ids(order, graph)
        return _sweep(order_ids, counts, nbr, id_space)
    counts, nbr = _lower_adjacency_numpy(order, graph.indptr, graph.indices)
    return _sweep_python(order, counts, nbr, max(graph.n, 1))


class MergeTree:
    """Merge tree of a scalar field in one filtration direction.

    order[i] is the vertex at filtration position i.  parent[v] is the next
    vertex toward the root from v (-1 at roots) and always comes later in
    filtration order than v.  branch_of[v] indexes the branch (component)
    that v belonged to when it was inserted.  Branches are numbered in
    creation order, so a branch's parent branch always has a smaller index.
    Per branch: the extremum vertex where it was born, the merge vertex where
    it died (-1 if it never merges), and the corresponding field values
    (death is +/-inf for undying branches, by direction).

    The sweep emits parent links as a log of (child, parent) filtration
    position pairs and branch indices by position; the dense per-vertex
    parent and branch_of arrays are materialized on first access, so
    diagram extraction never pays for them.
    """

    def __init__(self, direction, n, order, branch_of_r, tlog, wlog,
                 extremum_vertex, death_vertex, birth_value, death_value):
        self.direction = direction
        self.n = n
        self.order = order
        self._branch_of_r = branch_of_r
        self._tlog = tlog
        self._wlog = wlog
        self.extremum_vertex = extremum_vertex
        self.death_vertex = death_vertex
        self.birth_value = birth_value
        self.death_value = death_value

    @cached_property
    def parent(self) -> np.ndarray:
        out = np.full(self.n, -1, dtype=np.int64)
        out[self.order[self._tlog]] = self.order[self._wlog]
        return out

    @cached_property
    def branch_of(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        out[self.order] = self._branch_of_r
        return out

    @property
    def n_branches(self) -> int:
        return self.extremum_vertex.shape[0]

    def persistences(self) -> np.ndarray:
        return np.abs(self.death_value - self.birth_value)

    def parent_branch(self) -> np.ndarray:
        """For each branch, the branch absorbing it at death (-1 for undying)."""
        out = np.full(self.n_branches, -1, dtype=np.int64)
        died = self.death_vertex >= 0
        out[died] = self.branch_of[self.death_vertex[died]]
        return out


def compute_merge_tree(field: ScalarField, direction: Direction) -> MergeTree:
    """Build the merge tree of `field` in the given filtration direction."""
    n = field.n
    vals = field.values if direction is Direction.SUBLEVEL else -field.values
    order, sv = _sorted_order(vals)
    # NaN and +inf sort last, -inf first, so the endpoints witness finiteness
    if n and not (np.isfinite(sv[0]) and np.isfinite(sv[-1])):
        raise ValueError("field values must be finite")
    if sv.size and np.any(sv[1:] == sv[:-1]):
        order = _stable_order(vals, order, sv)   # sv is order-independent
    branch_of_r, bext_r, bdeath_r, tlog, wlog, ln = _run_sweep(order, field.graph)
    tlog = tlog[:ln]
    wlog = wlog[:ln]
    flip = direction is Direction.SUPERLEVEL
    extremum_vertex = order[bext_r]
    died = bdeath_r >= 0
    death_vertex = np.full(bext_r.shape[0], -1, dtype=np.int64)
    death_vertex[died] = order[bdeath_r[died]]
    birth_value = -sv[bext_r] if flip else sv[bext_r]
    death_value = np.full(bext_r.shape[0], -np.inf if flip else np.inf, dtype=np.float64)
    death_value[died] = -sv[bdeath_r[died]] if flip else sv[bdeath_r[died]]
    return MergeTree(
        direction=direction,
        n=n,
        order=order,
        branch_of_r=branch_of_r,
        tlog=tlog,
        wlog=wlog,
        extremum_vertex=extremum_vertex,
        death_vertex=death_vertex,
        birth_value=birth_value,
        death_value=death_value,
    )


@dataclass
class PersistenceDiagram:
    """0-dimensional persistence pairs with vertex provenance.

    One point per merge-tree branch: birth at the extremum value, death at
    the merge value (+/-inf and death_vertex -1 for branches that never
    merge; one such point per connected component of the graph).  Pairs with
    birth == death, which arise only under value ties, carry no topological
    information and are dropped.
    """

    direction: Direction
    births: np.ndarray
    deaths: np.ndarray
    birth_vertices: np.ndarray
    death_vertices: np.ndarray

    @property
    def n_points(self) -> int:
        return self.births.shape[0]

    def persistences(self) -> np.ndarray:
        return np.abs(self.deaths - self.births)

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.deaths)

    def pairs(self) -> list[tuple[float, float]]:
        """Sorted (birth, death) multiset, for comparisons."""
        return sorted(zip(self.births.tolist(), self.deaths.tolist()))

    def to_json_dict(self) -> dict:
        def enc(x):
            return x if np.isfinite(x) else None

        return {
            "direction": self.direction.value,
            "points": [
                {
                    "birth": self.births[i],
                    "death": enc(self.deaths[i]),
                    "birth_vertex": int(self.birth_vertices[i]),
                    "death_vertex": int(self.death_vertices[i]) if self.death_vertices[i] >= 0 else None,
                }
                for i in range(self.n_points)
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PersistenceDiagram":
        try:
            direction = Direction.parse(d["direction"])
            pts = d["points"]
            inf = np.inf if direction is Direction.SUBLEVEL else -np.inf
            births = np.array([p["birth"] for p in pts], dtype=np.float64)
            deaths = np.array(
                [inf if p["death"] is None else p["death"] for p in pts], dtype=np.float64
            )
            bv = np.array([p["birth_vertex"] for p in pts], dtype=np.int64)
            dv = np.array(
                [-1 if p["death_vertex"] is None else p["death_vertex"] for p in pts],
                dtype=np.int64,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad diagram payload: {exc}") from exc
        return cls(direction, births, deaths, bv, dv)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path) -> "PersistenceDiagram":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json_dict(payload)


def diagram_of(tree: MergeTree) -> PersistenceDiagram:
    """Extract the persistence diagram of a merge tree (zero-persistence
    pairs dropped)."""
    keep = tree.birth_value != tree.death_value
    return PersistenceDiagram(
        direction=tree.direction,
        births=tree.birth_value[keep],
        deaths=tree.death_value[keep],
        birth_vertices=tree.extremum_vertex[keep],
        death_vertices=tree.death_vertex[keep],
    )


def compute_diagram(field: ScalarField, direction: Direction) -> PersistenceDiagram:
    return diagram_of(compute_merge_tree(field, direction))


def oracle_diagram(field: ScalarField, direction: Direction) -> PersistenceDiagram:
    """Reference diagram via explicit threshold sweeps.

    At every filtration step the connected components of the induced
    subgraph are recomputed from scratch by BFS.  A component is identified
    by its earliest vertex in filtration order; when components merge, every
    identity except the earliest dies at the current vertex's value.
    Quadratic and meant only to validate the union-find construction.
    """
    n = field.n
    vals = field.values if direction is Direction.SUBLEVEL else -field.values
    order = np.argsort(vals, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    adj_ptr, adj_idx = field.graph.indptr, field.graph.indices

    def components(upto: int):
        """Map earliest-rank representative -> set of ranks, among ranks <= upto."""
        seen = np.zeros(upto + 1, dtype=bool)
        comps = {}
        for start in range(upto + 1):
            if seen[start]:
                continue
            stack = [start]
            seen[start] = True
            members = []
            while stack:
                r = stack.pop()
                members.append(r)
                v = order[r]
                for u in adj_idx[adj_ptr[v] : adj_ptr[v + 1]]:
                    ru = rank[u]
                    if ru <= upto and not seen[ru]:
                        seen[ru] = True
                        stack.append(ru)
            comps[min(members)] = members
        return comps

    births, deaths, bverts, dverts = [], [], [], []
    prev_reps: set[int] = set()
    for pos in range(n):
        reps = set(components(pos).keys())
        # every previously-live representative that vanished merged at order[pos]
        for dead in sorted(prev_reps - reps):
            births.append(vals[order[dead]])
            deaths.append(vals[order[pos]])
            bverts.append(order[dead])
            dverts.append(order[pos])
        prev_reps = reps
    for rep in sorted(prev_reps):
        births.append(vals[order[rep]])
        deaths.append(np.inf)
        bverts.append(order[rep])
        dverts.append(-1)
    births = np.asarray(births, dtype=np.float64)
    deaths = np.asarray(deaths, dtype=np.float64)
    bverts = np.asarray(bverts, dtype=np.int64)
    dverts = np.asarray(dverts, dtype=np.int64)
    if direction is Direction.SUPERLEVEL:
        births, deaths = -births, -deaths
    keep = births != deaths
    return PersistenceDiagram(direction, births[keep], deaths[keep], bverts[keep], dverts[keep])


@dataclass
class Vineyard:
    """Persistence values sampled along an optimization trajectory.

    One row per recorded step; rows may have different lengths because
    points appear and disappear as the field deforms.  Infinite persistence
    is kept as inf and serialized as an empty CSV cell / JSON null.
    """

    steps: list[int]
    rows: list[np.ndarray]

    def __init__(self, steps=None, rows=None):
        self.steps = list(steps) if steps else []
        self.rows = [np.asarray(r, dtype=np.float64) for r in rows] if rows else []

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def append(self, step: int, persistences: np.ndarray) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValueError(f"step {step} not greater than last recorded {self.steps[-1]}")
        self.steps.append(int(step))
        self.rows.append(np.sort(np.asarray(persistences, dtype=np.float64))[::-1])

    def save_csv(self, path) -> None:
        """Long format: one (step, persistence) row per diagram point per
        step; infinite persistence leaves the cell empty."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "persistence"])
            for step, row in zip(self.steps, self.rows):
                for p in row:
                    writer.writerow([step, "" if not np.isfinite(p) else repr(float(p))])

    @classmethod
    def load_csv(cls, path) -> "Vineyard":
        steps, rows = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["step", "persistence"]:
                raise DataError(f"{path}: not a vineyard CSV")
            for line in reader:
                if not line:
                    continue
                step = int(line[0])
                if not steps or steps[-1] != step:
                    steps.append(step)
                    rows.append([])
                rows[-1].append(np.inf if line[1] == "" else float(line[1]))
        return cls(steps, rows)
