"""Persistence-sensitive simplification of scalar fields.

Given a merge tree and a threshold epsilon, every branch with persistence at
most epsilon is flattened onto an anchor value: the value at its death
vertex if the absorbing branch survives simplification, otherwise the
absorbing branch's own anchor (resolved transitively).  Branches are
processed in creation order, so a branch's absorber is always resolved
first.  The result g satisfies ||f - g||_inf <= epsilon and its diagram is
the input diagram with exactly the low-persistence points removed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .field import DataError, Graph, ScalarField
from .merge_tree import Direction, MergeTree, compute_merge_tree, diagram_of


@dataclass
class SimplificationTarget:
    """Simplified values g plus bookkeeping about what moved."""

    values: np.ndarray
    epsilon: float
    changed: np.ndarray  # sorted vertex indices where g differs from f

    def to_json_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "epsilon": self.epsilon,
            "changed": self.changed.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimplificationTarget":
        try:
            return cls(
                values=np.asarray(d["values"], dtype=np.float64),
                epsilon=float(d["epsilon"]),
                changed=np.asarray(d["changed"], dtype=np.int64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad simplification payload: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)


def _anchor_values(
    tree: MergeTree, values: np.ndarray, low: np.ndarray, root_value: float | None
) -> np.ndarray:
    """Per-branch anchor value for low branches (nan elsewhere).

    root_value, when given, anchors low branches that never die (used by the
    confidence variant, where undying means the whole component is noise).
    """
    parent_branch = tree.parent_branch()
    anchor = np.full(tree.n_branches, np.nan)
    for b in range(tree.n_branches):
        if not low[b]:
            continue
        pb = parent_branch[b]
        if pb < 0:
            anchor[b] = root_value  # only reachable when undying branches are low
        elif low[pb]:
            anchor[b] = anchor[pb]  # pb < b, already resolved
        else:
            anchor[b] = values[tree.death_vertex[b]]
    return anchor


def simplify(tree: MergeTree, field: ScalarField, epsilon: float) -> SimplificationTarget:
    """Flatten every branch of persistence <= epsilon onto its anchor value.

    The tree must have been computed from `field`.  Branches of infinite
    persistence are never low, so every anchor chain ends at a surviving
    branch.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if tree.n != field.n:
        raise ValueError("tree and field sizes differ")
    pers = tree.persistences()
    low = np.isfinite(pers) & (pers <= epsilon)
    g = field.values.copy()
    if low.any():
        anchor = _anchor_values(tree, field.values, low, root_value=None)
        mask = low[tree.branch_of]
        g[mask] = anchor[tree.branch_of[mask]]
    changed = np.flatnonzero(g != field.values)
    return SimplificationTarget(values=g, epsilon=float(epsilon), changed=changed)


def _persistences_of(diagram) -> np.ndarray:
    if hasattr(diagram, "persistences"):
        return diagram.persistences()
    return np.asarray(diagram, dtype=np.float64)


def epsilon_top_j(diagram, j: int) -> float:
    """Threshold that keeps the j most persistent diagram points.

    With persistences p_1 >= p_2 >= ... (infinite first), returns the
    midpoint of p_j and p_{j+1}.  Infinities never enter the midpoint:
    p_j infinite with p_{j+1} finite gives p_{j+1}/2, both infinite gives 0
    (no finite threshold can separate them).  Fewer than j+1 points -> 0
    (nothing needs removing).  Accepts a diagram or a persistence array.
    """
    if j < 1:
        raise ValueError("j must be positive")
    p = np.sort(_persistences_of(diagram))[::-1]
    if p.shape[0] < j + 1:
        return 0.0
    pj, pnext = p[j - 1], p[j]
    if np.isinf(pj):
        return 0.0 if np.isinf(pnext) else float(pnext / 2.0)
    return float((pj + pnext) / 2.0)


def epsilon_largest_gap(diagram) -> float:
    """Midpoint of the largest gap between consecutive finite persistences
    in decreasing order (ties -> the smallest index, i.e. the gap between
    the largest values).  Fewer than two finite points -> 0."""
    p = _persistences_of(diagram)
    p = np.sort(p[np.isfinite(p)])[::-1]
    if p.shape[0] < 2:
        return 0.0
    gaps = p[:-1] - p[1:]
    i = int(np.argmax(gaps))  # argmax takes the first maximum: smallest index
    return float((p[i] + p[i + 1]) / 2.0)


@dataclass
class ConfidenceField:
    """Classifier confidence as a scalar field.

    values[v] = top logit minus second logit at vertex v (0 when the top two
    tie, in which case the predicted class is the smaller index).
    pruned_graph drops every edge whose endpoints are predicted differently,
    so each component of it is a region of constant prediction.
    """

    field: ScalarField  # confidence values on the original graph
    predicted_class: np.ndarray
    pruned_graph: Graph


def confidence_field(logits: np.ndarray, graph: Graph) -> ConfidenceField:
    """Build the confidence field of per-vertex logits over `graph`."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] != graph.n or logits.shape[1] < 2:
        raise ValueError(
            f"logits must be (n, m) with m >= 2 and n == {graph.n}, got {logits.shape}"
        )
    pred = logits.argmax(axis=1)  # argmax breaks ties toward the smaller index
    part = np.partition(logits, -2, axis=1)
    conf = part[:, -1] - part[:, -2]
    edges = graph.edges
    same = pred[edges[:, 0]] == pred[edges[:, 1]]
    pruned = Graph(graph.n, edges[same])
    return ConfidenceField(
        field=ScalarField(graph, conf),
        predicted_class=pred.astype(np.int64),
        pruned_graph=pruned,
    )


def simplify_confidence(cf: ConfidenceField, epsilon: float) -> SimplificationTarget:
    """Superlevel simplification of the confidence field on the pruned graph.

    Undying branches are assigned death value 0 (confidence can always decay
    to zero), so every persistence is finite.  A component whose root branch
    is low is noise end to end: all of its vertices are anchored to 0.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    values = cf.field.values
    tree = compute_merge_tree(
        ScalarField(cf.pruned_graph, values), Direction.SUPERLEVEL
    )
    death_value = np.where(tree.death_vertex >= 0, tree.death_value, 0.0)
    pers = np.abs(death_value - tree.birth_value)
    low = pers <= epsilon
    g = values.copy()
    if low.any():
        anchor = _anchor_values(tree, values, low, root_value=0.0)
        mask = low[tree.branch_of]
        g[mask] = anchor[tree.branch_of[mask]]
    changed = np.flatnonzero(g != values)
    return SimplificationTarget(values=g, epsilon=float(epsilon), changed=changed)


def confidence_diagram_persistences(cf: ConfidenceField) -> np.ndarray:
    """Persistences of the death-at-zero superlevel diagram used by the
    confidence simplification (all finite)."""
    tree = compute_merge_tree(
        ScalarField(cf.pruned_graph, cf.field.values), Direction.SUPERLEVEL
    )
    death_value = np.where(tree.death_vertex >= 0, tree.death_value, 0.0)
    pers = np.abs(death_value - tree.birth_value)
    return pers[pers > 0]


__all__ = [
    "SimplificationTarget",
    "simplify",
    "epsilon_top_j",
    "epsilon_largest_gap",
    "ConfidenceField",
    "confidence_field",
    "simplify_confidence",
    "confidence_diagram_persistences",
    "diagram_of",
]
