"""Gradient descent directly on the vertex values of a scalar field.

Compares the two topological losses on the same task: flatten every
low-persistence peak of a field while leaving the prominent ones alone.
The PSO loss fixes its simplified target once, which makes each descent an
unconstrained convex quadratic; the diagram loss re-pairs critical points
every step, which is what lets squashed peaks pop back up elsewhere.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .field import Graph, ScalarField, build_grid_graph
from .losses import diagram_loss_grad, pso_loss_grad, record_vineyard
from .merge_tree import Direction, Vineyard, compute_diagram
from .simplify import simplify
from . import merge_tree


class LossKind(enum.Enum):
    PSO = "pso"
    DIAGRAM = "diagram"

    @classmethod
    def parse(cls, text: str) -> "LossKind":
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown loss kind {text!r}") from None


@dataclass
class GaussianSpec:
    """One isotropic Gaussian bump on the unit square."""

    center: tuple[float, float]  # (x, y)
    amplitude: float
    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


# Two prominent peaks (amplitude 1.0) on one diagonal, two faint ones (0.3)
# on the other; bandwidth small enough that epsilon = 0.5 separates the
# persistence of the faint peaks (~0.3) from the prominent ones (~1.0).
FOUR_GAUSSIANS = (
    GaussianSpec(center=(0.25, 0.25), amplitude=1.0, bandwidth=0.08),
    GaussianSpec(center=(0.75, 0.75), amplitude=1.0, bandwidth=0.08),
    GaussianSpec(center=(0.75, 0.25), amplitude=0.3, bandwidth=0.08),
    GaussianSpec(center=(0.25, 0.75), amplitude=0.3, bandwidth=0.08),
)


def gaussian_mixture_field(
    height: int, width: int, specs=FOUR_GAUSSIANS
) -> ScalarField:
    """Sample a sum of Gaussians on a `height` x `width` 4-connected grid.

    Vertex (i, j) in row-major order sits at (x, y) = (j/(width-1),
    i/(height-1)) in the unit square.
    """
    graph = build_grid_graph(width, height)
    xs = np.arange(width) / max(width - 1, 1)
    ys = np.arange(height) / max(height - 1, 1)
    gx, gy = np.meshgrid(xs, ys)
    vals = np.zeros((height, width))
    for spec in specs:
        d2 = (gx - spec.center[0]) ** 2 + (gy - spec.center[1]) ** 2
        vals += spec.amplitude * np.exp(-d2 / (2.0 * spec.bandwidth**2))
    return ScalarField(graph, vals.ravel())


@dataclass
class ValueOptReport:
    """Trajectory of one value-space optimization run."""

    final: ScalarField
    losses: list[float]  # length steps + 1, includes the initial loss
    vineyard: Vineyard

    def to_json_dict(self) -> dict:
        return {
            "final": self.final.to_json_dict(),
            "losses": self.losses,
            "vineyard": {
                "steps": self.vineyard.steps,
                "rows": [
                    [None if not np.isfinite(p) else p for p in row]
                    for row in self.vineyard.rows
                ],
            },
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)


def optimize_values(
    field: ScalarField,
    direction: Direction,
    loss: LossKind,
    epsilon: float,
    steps: int,
    learning_rate: float,
    anti_squash: float = 0.0,
) -> ValueOptReport:
    """Run `steps` of plain gradient descent on the vertex values.

    PSO mode computes the merge tree and simplification target once up
    front and then descends the resulting fixed quadratic.  Diagram mode
    recomputes the pairing and its gradient at every step.  Both record the
    diagram's persistences before the first step and after each step
    (steps + 1 vineyard rows), and the loss at the same moments.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    values = field.values.copy()
    graph = field.graph
    if loss is LossKind.PSO:
        tree = merge_tree.compute_merge_tree(field, direction)
        target = simplify(tree, field, epsilon).values

        def loss_grad(v):
            return pso_loss_grad(v, target)

    else:

        def loss_grad(v):
            return diagram_loss_grad(
                ScalarField(graph, v), direction, epsilon, anti_squash
            )

    losses = []
    vineyard = Vineyard()
    for step in range(steps + 1):
        lg = loss_grad(values)
        losses.append(lg.loss)
        record_vineyard(
            vineyard, step, compute_diagram(ScalarField(graph, values), direction)
        )
        if step < steps:
            values = values - learning_rate * lg.grad
    return ValueOptReport(
        final=ScalarField(graph, values), losses=losses, vineyard=vineyard
    )


def peak_persistences(
    field: ScalarField, centers, width: int, height: int, radius: float = 0.25
) -> np.ndarray:
    """Prominence of the strongest superlevel peak near each (x, y) center.

    For each center: the maximum persistence over diagram points whose birth
    vertex lies within `radius` (Chebyshev) of it, or 0 when no peak is born
    there (the peak was flattened away).  Infinite deaths are replaced by the
    field minimum, the natural floor for the global peak's prominence.
    """
    diagram = compute_diagram(field, Direction.SUPERLEVEL)
    floor = field.values.min() if field.n else 0.0
    deaths = np.where(np.isfinite(diagram.deaths), diagram.deaths, floor)
    pers = np.abs(diagram.births - deaths)
    xs = diagram.birth_vertices % width / max(width - 1, 1)
    ys = diagram.birth_vertices // width / max(height - 1, 1)
    out = np.zeros(len(centers))
    for i, (cx, cy) in enumerate(centers):
        near = (np.abs(xs - cx) <= radius) & (np.abs(ys - cy) <= radius)
        if near.any():
            out[i] = pers[near].max()
    return out


__all__ = [
    "LossKind",
    "GaussianSpec",
    "FOUR_GAUSSIANS",
    "gaussian_mixture_field",
    "ValueOptReport",
    "optimize_values",
    "peak_persistences",
]
