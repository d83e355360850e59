"""Topology-aware losses on scalar fields and their exact gradients.

Both losses are piecewise-quadratic in the vertex values.  Away from value
ties the persistence pairing is locally constant, so the gradients below are
exact; at ties they are one-sided derivatives consistent with the
lexicographic tie rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import ScalarField
from .merge_tree import (
    Direction,
    PersistenceDiagram,
    Vineyard,
    compute_merge_tree,
)


@dataclass
class LossGrad:
    loss: float
    grad: np.ndarray


def pso_loss_grad(values: np.ndarray, target: np.ndarray) -> LossGrad:
    """Squared distance to a fixed simplified target: sum (f_v - g_v)^2.

    The target is a constant; the gradient is 2 (f - g), supported exactly
    on the vertices the simplification changed.
    """
    values = np.asarray(values, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if values.shape != target.shape:
        raise ValueError(f"shape mismatch: {values.shape} vs {target.shape}")
    diff = values - target
    return LossGrad(loss=float(diff @ diff), grad=2.0 * diff)


def diagram_loss_grad(
    field: ScalarField,
    direction: Direction,
    epsilon: float,
    anti_squash: float = 0.0,
) -> LossGrad:
    """Direct diagram loss: squash finite points with persistence <= epsilon,
    optionally stretch the rest.

        L = sum_{pers <= eps} (d - b)^2 - anti_squash * sum_{pers > eps} (d - b)^2

    over finite diagram points.  Each point's birth and death values are the
    field values at its extremum and merge vertices, so with s = d - b the
    gradient contributions are +2s at the death vertex and -2s at the birth
    vertex (scaled by -anti_squash for the stretched points).  The pairing is
    recomputed from scratch on every call; points may trade roles between
    calls, which is what lets squashed peaks re-emerge elsewhere.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if anti_squash < 0:
        raise ValueError("anti_squash must be nonnegative")
    tree = compute_merge_tree(field, direction)
    finite = tree.death_vertex >= 0
    signed = tree.death_value[finite] - tree.birth_value[finite]
    bv = tree.extremum_vertex[finite]
    dv = tree.death_vertex[finite]
    low = np.abs(signed) <= epsilon
    loss = float(np.sum(signed[low] ** 2) - anti_squash * np.sum(signed[~low] ** 2))
    grad = np.zeros(field.n, dtype=np.float64)
    coef = np.where(low, 2.0, -2.0 * anti_squash) * signed
    np.add.at(grad, dv, coef)
    np.add.at(grad, bv, -coef)
    return LossGrad(loss=loss, grad=grad)


def record_vineyard(vineyard: Vineyard, step: int, diagram: PersistenceDiagram) -> Vineyard:
    """Append the diagram's persistences to the vineyard and return it."""
    vineyard.append(step, diagram.persistences())
    return vineyard


__all__ = ["LossGrad", "pso_loss_grad", "diagram_loss_grad", "record_vineyard"]
