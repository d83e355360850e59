"""Feed-forward network, Adam, and the two-phase training protocol.

Standard epochs minimize the data loss with one Adam optimizer.  When the
validation loss rises by more than a threshold t (or from a configured
epoch onward), a topological phase runs: the network is evaluated on a
fixed graph over the augmented training inputs, the resulting scalar field
is simplified, and a few steps of a SECOND Adam optimizer pull the network
toward the simplified target.  The two optimizers never share state, so
the topological loss cannot contaminate the standard phase's momentum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (
    DataError,
    Graph,
    NumericError,
    PointCloud,
    ScalarField,
    augment_cloud,
    build_knn_graph,
    pca_project,
    split_dataset,
    standardize,
)
from .merge_tree import Direction, Vineyard, compute_diagram, compute_merge_tree
from .simplify import (
    confidence_diagram_persistences,
    confidence_field,
    epsilon_largest_gap,
    epsilon_top_j,
    simplify,
    simplify_confidence,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LR_SCALE_MIN = 1e-6
LR_SCALE_MAX = 1e2


@dataclass
class Mlp:
    """Fully-connected network with rectifier hidden layers and linear output."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty and parallel")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} vs weight {w.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input width does not chain")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list:
        """Parameter arrays in a fixed order (shared, not copied)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def save(self, path) -> None:
        """JSON weight dump: layer shapes up front, then the arrays."""
        payload = {
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: not valid JSON: {exc}") from exc
        try:
            model = cls(
                [np.asarray(w, dtype=np.float64) for w in payload["weights"]],
                [np.asarray(b, dtype=np.float64) for b in payload["biases"]],
            )
            if model.layer_sizes != list(payload["layer_sizes"]):
                raise DataError(f"{path}: shape header disagrees with arrays")
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad weight dump: {exc}") from exc
        return model


def init_mlp(layer_sizes, seed) -> Mlp:
    """He-normal weights (std sqrt(2/fan_in)), zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_forward(model: Mlp, inputs: np.ndarray):
    """Forward pass.  Returns (outputs, caches) where caches holds the layer
    inputs needed by mlp_backward."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.weights[0].shape[0]:
        raise ValueError(
            f"inputs must be (batch, {model.weights[0].shape[0]}), got {x.shape}"
        )
    caches = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        caches.append(x)
        z = x @ w + b
        x = z if i == last else np.maximum(z, 0.0)
    return x, caches


def mlp_backward(model: Mlp, caches: list, dout: np.ndarray):
    """Exact reverse-mode gradients for the forward pass above.

    dout is dL/d(outputs).  Returns (dweights, dbiases) matching the model's
    layer lists.  The rectifier subgradient at 0 is taken as 0.
    """
    dw = [None] * len(model.weights)
    db = [None] * len(model.biases)
    grad = np.asarray(dout, dtype=np.float64)
    for i in range(len(model.weights) - 1, -1, -1):
        x = caches[i]
        if i < len(model.weights) - 1:
            # recompute the rectifier mask from the cached layer input
            grad = grad * (x @ model.weights[i] + model.biases[i] > 0.0)
        dw[i] = x.T @ grad
        db[i] = grad.sum(axis=0)
        if i:
            grad = grad @ model.weights[i].T
    return dw, db


def _interleave(dw, db):
    out = []
    for w, b in zip(dw, db):
        out.append(w)
        out.append(b)
    return out


def grad_norm(dw, db) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in _interleave(dw, db))))


@dataclass
class AdamState:
    """Adam accumulators for one parameter list."""

    lr: float
    m: list
    v: list
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params, lr: float) -> "AdamState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """One Adam update with bias correction; mutates params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and state must be parallel")
    state.t += 1
    b1t = 1.0 - state.beta1**state.t
    b2t = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)
    return params


@dataclass(frozen=True)
class EpsilonPolicy:
    """How a topological phase picks its threshold.

      validation   - the current validation loss
      top_j        - keep the j most persistent diagram points
      largest_gap  - cut at the largest persistence gap
      fixed        - a constant
    """

    kind: str
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("validation", "top_j", "largest_gap", "fixed"):
            raise ValueError(f"unknown epsilon policy {self.kind!r}")
        if self.kind == "top_j" and (self.value is None or int(self.value) < 1):
            raise ValueError("top_j policy needs a positive j")
        if self.kind == "fixed" and (self.value is None or self.value < 0):
            raise ValueError("fixed policy needs a nonnegative value")

    @classmethod
    def parse(cls, text: str) -> "EpsilonPolicy":
        if text == "validation":
            return cls("validation")
        if text == "gap" or text == "largest_gap":
            return cls("largest_gap")
        if text.startswith("top:"):
            return cls("top_j", int(text[4:]))
        if text.startswith("fixed:"):
            return cls("fixed", float(text[6:]))
        raise ValueError(
            f"cannot parse epsilon policy {text!r} "
            "(expected validation | top:J | gap | fixed:VALUE)"
        )

    def format(self) -> str:
        if self.kind == "top_j":
            return f"top:{int(self.value)}"
        if self.kind == "fixed":
            return f"fixed:{self.value}"
        return "gap" if self.kind == "largest_gap" else self.kind


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    trigger_threshold is the t of the validation-loss trigger (None
    disables it); topo_start_epoch instead fires the phase unconditionally
    from that 1-based epoch on and takes precedence when both are set.
    augment_n copies with noise sigma enlarge the domain sample; pca_dims
    projects only the k-NN graph construction, never the network inputs.
    simplify_directions applies to regression ("both", "sublevel",
    "superlevel"); classification always simplifies the superlevel
    confidence forest.
    """

    epochs: int
    task: str = "regression"
    batch_size: int = 64
    learning_rate: float = 1e-3
    trigger_threshold: float | None = None
    topo_start_epoch: int | None = None
    topo_steps: int = 10
    knn_k: int = 10
    augment_n: int = 0
    augment_sigma: float = 0.0
    pca_dims: int | None = None
    epsilon_policy: EpsilonPolicy = dc_field(default_factory=lambda: EpsilonPolicy("validation"))
    seed: int = 0
    weight_decay: float = 0.0
    hidden_layers: int = 5
    hidden_width: int = 100
    simplify_directions: str = "both"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 1 <= self.topo_steps <= 50:
            raise ValueError("topo_steps must be in [1, 50]")
        if self.knn_k < 1:
            raise ValueError("knn_k must be positive")
        if self.augment_n < 0 or self.augment_sigma < 0:
            raise ValueError("augmentation parameters must be nonnegative")
        if self.augment_n > 0 and self.augment_sigma == 0:
            raise ValueError("augment_sigma must be positive when augment_n > 0")
        if self.pca_dims is not None and self.pca_dims < 1:
            raise ValueError("pca_dims must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.hidden_layers < 0 or (self.hidden_layers and self.hidden_width < 1):
            raise ValueError("bad hidden layer configuration")
        if self.simplify_directions not in ("both", "sublevel", "superlevel"):
            raise ValueError(f"unknown simplify_directions {self.simplify_directions!r}")
        if self.trigger_threshold is not None and self.trigger_threshold < 0:
            raise ValueError("trigger_threshold must be nonnegative")
        if self.topo_start_epoch is not None and self.topo_start_epoch < 1:
            raise ValueError("topo_start_epoch must be a positive epoch number")

    def to_json_dict(self) -> dict:
        d = self.__dict__.copy()
        d["epsilon_policy"] = self.epsilon_policy.format()
        return d


@dataclass
class TrainReport:
    """Per-epoch metrics and artifacts of one run (model attached for
    checkpointing, excluded from serialization)."""

    train_losses: list
    val_losses: list
    test_metric: dict
    vineyard: Vineyard
    phase_log: list
    config: TrainConfig
    model: Mlp

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "test_metric": self.test_metric,
            "phase_log": self.phase_log,
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


def _regression_batch(model, x, y, weight_decay):
    out, caches = mlp_forward(model, x)
    resid = out[:, 0] - y
    loss = float(resid @ resid) / len(y)
    dout = (2.0 / len(y)) * resid[:, None]
    dw, db = mlp_backward(model, caches, dout)
    if weight_decay:
        dw = [g + weight_decay * w for g, w in zip(dw, model.weights)]
    return loss, dw, db


def _softmax_ce(logits, labels):
    """Mean cross-entropy and d(loss)/d(logits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    idx = np.arange(len(labels))
    loss = float(np.mean(lse - shifted[idx, labels]))
    probs = np.exp(shifted - lse[:, None])
    dlogits = probs
    dlogits[idx, labels] -= 1.0
    return loss, dlogits / len(labels)


def _classification_batch(model, x, y, weight_decay):
    out, caches = mlp_forward(model, x)
    loss, dout = _softmax_ce(out, y)
    dw, db = mlp_backward(model, caches, dout)
    if weight_decay:
        dw = [g + weight_decay * w for g, w in zip(dw, model.weights)]
    return loss, dw, db


def _eval_loss(model, x, y, task):
    out, _ = mlp_forward(model, x)
    if task == "regression":
        resid = out[:, 0] - y
        return float(resid @ resid) / len(y)
    loss, _ = _softmax_ce(out, y.astype(np.int64))
    return loss


def _second_argmax(logits, top):
    masked = logits.copy()
    masked[np.arange(len(top)), top] = -np.inf
    return masked.argmax(axis=1)


def _confidence_loss_grad(model, points, target):
    """PSO loss of the confidence field against a fixed target.

    conf = top logit - second logit, so the output gradient 2(conf - g)
    lands with opposite signs on the two competing channels.
    """
    logits, caches = mlp_forward(model, points)
    top = logits.argmax(axis=1)
    second = _second_argmax(logits, top)
    idx = np.arange(len(points))
    conf = logits[idx, top] - logits[idx, second]
    resid = conf - target
    loss = float(resid @ resid)
    dlogits = np.zeros_like(logits)
    np.add.at(dlogits, (idx, top), 2.0 * resid)
    np.add.at(dlogits, (idx, second), -2.0 * resid)
    dw, db = mlp_backward(model, caches, dlogits)
    return loss, dw, db


def _regression_directions(config):
    if config.simplify_directions == "both":
        return (Direction.SUBLEVEL, Direction.SUPERLEVEL)
    return (Direction.parse(config.simplify_directions),)


def resolve_epsilon(
    model: Mlp, points: np.ndarray, graph: Graph, config: TrainConfig, val_loss: float
) -> float:
    """Evaluate the configured epsilon policy for the current model state.

    Diagram-based policies (top_j, largest_gap) look at the death-at-zero
    confidence diagram for classification and the pooled sublevel +
    superlevel persistences of the output field for regression.
    """
    policy = config.epsilon_policy
    if policy.kind == "validation":
        return float(val_loss)
    if policy.kind == "fixed":
        return float(policy.value)
    out, _ = mlp_forward(model, points)
    if config.task == "classification":
        pers = confidence_diagram_persistences(confidence_field(out, graph))
    else:
        field = ScalarField(graph, out[:, 0])
        pers = np.concatenate(
            [
                compute_diagram(field, d).persistences()
                for d in _regression_directions(config)
            ]
        )
    if policy.kind == "top_j":
        return epsilon_top_j(pers, int(policy.value))
    return epsilon_largest_gap(pers)


def topo_phase(
    model: Mlp,
    points: np.ndarray,
    graph: Graph,
    config: TrainConfig,
    epsilon: float,
    opt: AdamState,
    ref_grad_norm: float | None = None,
) -> Mlp:
    """One topological phase: fix a simplified target on the domain graph,
    then take config.topo_steps Adam steps (optimizer `opt`) toward it.

    When ref_grad_norm (the last standard-phase gradient norm) is given,
    the topological gradients are rescaled by ref / ||first topo gradient||,
    clamped to [1e-6, 1e2].  Scaling the gradient by r and stepping at the
    base rate is the plain-descent identity lr*r*g; with the second Adam
    state (whose step size is rate-controlled) it keeps both phases moving
    the parameters by comparable amounts.  Returns the model unchanged if
    the simplification target changes nothing.
    """
    out, _ = mlp_forward(model, points)
    if config.task == "classification":
        cf = confidence_field(out, graph)
        target = simplify_confidence(cf, epsilon)
        if target.changed.size == 0:
            return model
        loss_grad = lambda m: _confidence_loss_grad(m, points, target.values)
    else:
        field = ScalarField(graph, out[:, 0])
        targets = []
        changed = 0
        for direction in _regression_directions(config):
            tree = compute_merge_tree(field, direction)
            tgt = simplify(tree, field, epsilon)
            targets.append(tgt.values)
            changed += tgt.changed.size
        if changed == 0:
            return model

        def loss_grad(m):
            o, caches = mlp_forward(m, points)
            f = o[:, 0]
            dout = np.zeros_like(f)
            loss = 0.0
            for g in targets:
                resid = f - g
                loss += float(resid @ resid)
                dout += 2.0 * resid
            dw, db = mlp_backward(m, caches, dout[:, None])
            return loss, dw, db

    scale = 1.0
    for step in range(config.topo_steps):
        _, dw, db = loss_grad(model)
        if step == 0 and ref_grad_norm is not None:
            topo_norm = grad_norm(dw, db)
            ratio = ref_grad_norm / topo_norm if topo_norm > 0 else 1.0
            scale = float(np.clip(ratio, LR_SCALE_MIN, LR_SCALE_MAX))
        if scale != 1.0:
            dw = [g * scale for g in dw]
            db = [g * scale for g in db]
        adam_step(opt, model.params(), _interleave(dw, db))
    return model


def _domain_from_train(x_train, config, aug_seed):
    points = augment_cloud(x_train, config.augment_n, config.augment_sigma, aug_seed)
    graph_points = points if config.pca_dims is None else pca_project(points, config.pca_dims)
    if config.knn_k >= len(points):
        raise ValueError(
            f"knn_k={config.knn_k} needs more domain points than {len(points)}"
        )
    return points, build_knn_graph(graph_points, config.knn_k)


def train(config: TrainConfig, data: PointCloud) -> TrainReport:
    """Run the two-phase protocol on labeled data.

    Splits 56/19/25 (train/val/test), standardizes features by train-split
    statistics, builds the augmented k-NN domain graph once, then trains.
    The trigger compares each epoch's validation loss against the previous
    epoch's.  The vineyard records the domain diagram once per epoch, after
    any topological phase.  Deterministic given (config, data).
    """
    if data.labels is None:
        raise ValueError("training data must be labeled")
    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    split = split_dataset(data.n, seeds[0])
    x_all = standardize(data.points, ref=data.points[split.train])
    y = data.labels
    if config.task == "classification":
        if not np.array_equal(y, np.rint(y)) or y.min() < 0:
            raise ValueError("classification labels must be nonnegative integers")
        y = y.astype(np.int64)
        n_out = int(y.max()) + 1
    else:
        n_out = 1
    x_tr, y_tr = x_all[split.train], y[split.train]
    x_val, y_val = x_all[split.val], y[split.val]
    x_te, y_te = x_all[split.test], y[split.test]

    points, graph = _domain_from_train(x_tr, config, seeds[1])
    sizes = [data.dim] + [config.hidden_width] * config.hidden_layers + [n_out]
    model = init_mlp(sizes, seeds[2])
    opt_std = AdamState.for_params(model.params(), config.learning_rate)
    opt_topo = AdamState.for_params(model.params(), config.learning_rate)
    shuffle_rng = np.random.default_rng(seeds[3])
    batch_fn = _regression_batch if config.task == "regression" else _classification_batch

    train_losses, val_losses, phase_log = [], [], []
    vineyard = Vineyard()
    prev_val = None
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(len(x_tr))
        total = 0.0
        last_norm = None
        for start in range(0, len(perm), config.batch_size):
            batch = perm[start : start + config.batch_size]
            loss, dw, db = batch_fn(model, x_tr[batch], y_tr[batch], config.weight_decay)
            total += loss * len(batch)
            last_norm = grad_norm(dw, db)
            adam_step(opt_std, model.params(), _interleave(dw, db))
        train_loss = total / len(perm)
        val_loss = _eval_loss(model, x_val, y_val, config.task)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericError(
                f"non-finite loss at epoch {epoch} "
                f"(train={train_loss}, val={val_loss}); aborting"
            )
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        if config.topo_start_epoch is not None:
            fire = epoch >= config.topo_start_epoch
        elif config.trigger_threshold is not None and prev_val is not None:
            fire = val_loss > prev_val + config.trigger_threshold
        else:
            fire = False
        if fire:
            epsilon = resolve_epsilon(model, points, graph, config, val_loss)
            model = topo_phase(model, points, graph, config, epsilon, opt_topo, last_norm)
            phase_log.append(epoch)
        vineyard.append(epoch, _domain_persistences(model, points, graph, config))
        prev_val = val_loss

    out, _ = mlp_forward(model, x_te)
    if config.task == "regression":
        resid = out[:, 0] - y_te
        test_metric = {"rmsd": float(np.sqrt(np.mean(resid**2)))}
    else:
        ce, _ = _softmax_ce(out, y_te)
        acc = float(np.mean(out.argmax(axis=1) == y_te))
        test_metric = {"cross_entropy": ce, "accuracy": acc}
    return TrainReport(
        train_losses=train_losses,
        val_losses=val_losses,
        test_metric=test_metric,
        vineyard=vineyard,
        phase_log=phase_log,
        config=config,
        model=model,
    )


def _domain_persistences(model, points, graph, config):
    out, _ = mlp_forward(model, points)
    if config.task == "classification":
        return confidence_diagram_persistences(confidence_field(out, graph))
    field = ScalarField(graph, out[:, 0])
    return np.concatenate(
        [compute_diagram(field, d).persistences() for d in _regression_directions(config)]
    )


__all__ = [
    "Mlp",
    "init_mlp",
    "mlp_forward",
    "mlp_backward",
    "AdamState",
    "adam_step",
    "grad_norm",
    "EpsilonPolicy",
    "TrainConfig",
    "TrainReport",
    "resolve_epsilon",
    "topo_phase",
    "train",
]
