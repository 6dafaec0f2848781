"""Label propagation with learned edge weights.

Edge weights come from a one-hidden-layer perceptron with a logistic output,
``w_ij = f(x_ij)`` in (0, 1).  Labels spread by the Jacobi iteration::

    Y[t+1] = A^-1 (W Y[t] + Y0),    A_ii = labeled(i) + D_ii,

where ``D_ii`` counts edges at ``i`` (not their weights), so ``D_ii >= sum_j w_ij``
and the iteration stays diagonally dominant for any learned weights.  With all
weights equal to one this is classic label propagation.  Training
differentiates the mean squared error on non-source nodes through the
iterations actually executed.
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .core_network import CoreGraph

logger = logging.getLogger(__name__)

ACTIVATIONS = ("logistic", "tanh")
OPTIMIZERS = ("gd", "adam")
BOUNDS_SLACK = 1e-12


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    tol: float = 1e-6
    max_iter: int = 100
    seed: int = 0
    loss_scope: str = "all"
    hidden_dim: int = 30
    activation: str = "logistic"
    optimizer: str = "gd"
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")
        if self.loss_scope not in ("all", "targets"):
            raise ValueError("loss_scope must be 'all' or 'targets'")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        kinds = {f: type(v) for f, v in asdict(cls()).items()}
        unknown = set(values) - kinds.keys()
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: kinds[k](v) for k, v in values.items()})


# --------------------------------------------------------------------------
# edge-weight model


class EdgeWeightModel:
    """``f(x) = sigmoid(w2 . act(x W1 + b1) + b2)``."""

    PARAMS = ("W1", "b1", "w2", "b2")

    def __init__(self, input_dim: int, hidden_dim: int = 30, activation: str = "logistic",
                 seed: int | None = 0, params: dict | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.activation = activation
        if params is not None:
            self.params = {k: np.array(params[k], dtype=float) for k in self.PARAMS}
            return
        rng = np.random.default_rng(seed)
        lim1 = 0.5 / np.sqrt(max(input_dim, 1))
        lim2 = 0.5 / np.sqrt(hidden_dim)
        self.params = {
            "W1": rng.uniform(-lim1, lim1, (input_dim, hidden_dim)),
            "b1": rng.uniform(-lim1, lim1, hidden_dim),
            "w2": rng.uniform(-lim2, lim2, hidden_dim),
            "b2": np.array(rng.uniform(-lim2, lim2)),
        }

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int = 30, activation: str = "logistic"):
        return cls(input_dim, hidden_dim, activation, params={
            "W1": np.zeros((input_dim, hidden_dim)), "b1": np.zeros(hidden_dim),
            "w2": np.zeros(hidden_dim), "b2": np.zeros(())})

    def _act(self, z):
        return expit(z) if self.activation == "logistic" else np.tanh(z)

    def _act_grad(self, h):
        return h * (1.0 - h) if self.activation == "logistic" else 1.0 - h * h

    def forward(self, X):
        if X.shape[1] != self.input_dim:
            raise ValueError(f"feature dimension {X.shape[1]} does not match model input {self.input_dim}")
        p = self.params
        h = self._act(np.asarray(X @ p["W1"]) + p["b1"])
        w = expit(h @ p["w2"] + p["b2"])
        return w, (X, h, w)

    def __call__(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, cache, grad_w) -> dict:
        X, h, w = cache
        p = self.params
        gz = grad_w * w * (1.0 - w)
        gh = np.outer(gz, p["w2"]) * self._act_grad(h)
        return {
            "W1": np.asarray(X.T @ gh),
            "b1": gh.sum(axis=0),
            "w2": h.T @ gz,
            "b2": np.array(gz.sum()),
        }

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.PARAMS])

    def set_flat(self, theta: np.ndarray) -> None:
        pos = 0
        for k in self.PARAMS:
            size = self.params[k].size
            self.params[k] = theta[pos:pos + size].reshape(self.params[k].shape).copy()
            pos += size

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                "activation": self.activation,
                "params": {k: self.params[k].tolist() for k in self.PARAMS}}

    @classmethod
    def from_dict(cls, d: dict) -> "EdgeWeightModel":
        return cls(d["input_dim"], d["hidden_dim"], d["activation"], params=d["params"])


def edge_weights(model: EdgeWeightModel, features) -> np.ndarray:
    X = features.matrix if hasattr(features, "matrix") else features
    return model(X)


# --------------------------------------------------------------------------
# solver


@dataclass
class BoundsAudit:
    """Worst violations seen by ``jacobi_propagate`` while an audit is active."""

    checks: int = 0
    min_y: float = np.inf
    max_y: float = -np.inf
    worst_dominance: float = -np.inf

    @property
    def ok(self) -> bool:
        return (self.checks > 0 and self.min_y >= -BOUNDS_SLACK and self.max_y <= 1 + BOUNDS_SLACK
                and self.worst_dominance <= BOUNDS_SLACK)


_audit: list[BoundsAudit] = []


@contextmanager
def audit_bounds():
    """Record per-iteration bound and dominance checks in every solve inside the block."""
    audit = BoundsAudit()
    _audit.append(audit)
    try:
        yield audit
    finally:
        _audit.remove(audit)


@dataclass
class PropagationResult:
    Y: np.ndarray
    iterations: int
    residual: float
    converged: bool
    trajectory: list = field(default=None, repr=False)


def _system(core: CoreGraph, weights, labeled):
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (core.n_edges,):
        raise ValueError(f"expected {core.n_edges} edge weights, got shape {weights.shape}")
    labeled = np.asarray(labeled, dtype=bool)
    if not labeled.any():
        raise ValueError("no sources")
    W = core.adjacency(weights)
    # a is integer-valued; the floor only touches unlabeled isolated nodes, which stay at 0
    a = np.maximum(labeled.astype(float) + core.degrees(), 1.0)
    return W, a


def jacobi_propagate(core: CoreGraph, weights, Y0, labeled, tol: float = 1e-6,
                     max_iter: int = 100, keep_trajectory: bool = False) -> PropagationResult:
    """Iterate ``Y <- (W Y + Y0) / a`` from ``Y0`` until the sup-norm step is at most ``tol``."""
    W, a = _system(core, weights, labeled)
    Y0 = np.asarray(Y0, dtype=float)
    Y = Y0.copy()
    traj = [Y] if keep_trajectory else None
    if _audit:
        dominance = np.asarray(W.sum(axis=1)).ravel() - core.degrees()
        for au in _audit:
            au.worst_dominance = max(au.worst_dominance, float(dominance.max()))
    residual, it = np.inf, 0
    for it in range(1, max_iter + 1):
        Y_new = (W @ Y + Y0) / a
        residual = float(np.max(np.abs(Y_new - Y))) if Y.size else 0.0
        Y = Y_new
        if keep_trajectory:
            traj.append(Y)
        for au in _audit:
            au.checks += 1
            au.min_y = min(au.min_y, float(Y.min()))
            au.max_y = max(au.max_y, float(Y.max()))
        if residual <= tol:
            break
    converged = residual <= tol
    if not converged:
        logger.debug("Jacobi stopped at max_iter=%d with residual %.3g", max_iter, residual)
    return PropagationResult(Y, it, residual, converged, traj)


def direct_solve_oracle(core: CoreGraph, weights, Y0, labeled) -> np.ndarray:
    """Dense solve of ``(A - W) Y = Y0``; test oracle for small graphs."""
    if core.n_nodes > 2000:
        raise ValueError("direct solve limited to 2,000 nodes")
    W, a = _system(core, weights, labeled)
    M = np.diag(a) - W.toarray()
    if np.linalg.cond(M) > 1e12:
        raise ValueError("singular propagation system")
    return np.linalg.solve(M, np.asarray(Y0, dtype=float))


def iteration_norm_bound(core: CoreGraph, weights, labeled) -> np.ndarray:
    """Row sums of ``A^-1 W``; their maximum bounds its infinity norm."""
    W, a = _system(core, weights, labeled)
    return np.asarray(W.sum(axis=1)).ravel() / a


# --------------------------------------------------------------------------
# loss and training


def _loss_terms(n, sources, targets, scope):
    sources = np.asarray(sources, dtype=bool)
    targets = np.asarray(targets, dtype=bool)
    if (sources & targets).any():
        raise ValueError("targets and sources overlap")
    mask = targets.copy() if scope == "targets" else ~sources
    if not mask.any():
        raise ValueError("empty non-source set")
    return mask, targets.astype(float)


def loss(Y, targets, sources, scope: str = "all") -> float:
    """Mean squared error over non-source nodes against 1 on targets, 0 elsewhere."""
    Y = np.asarray(Y, dtype=float)
    mask, t = _loss_terms(len(Y), sources, targets, scope)
    return float(np.mean((Y[mask] - t[mask]) ** 2))


def loss_and_grad(model: EdgeWeightModel, X, core: CoreGraph, sources, targets,
                  config: TrainConfig):
    """Loss and parameter gradients, back-propagated through the executed Jacobi sweeps."""
    sources = np.asarray(sources, dtype=bool)
    w, cache = model.forward(X)
    Y0 = sources.astype(float)
    res = jacobi_propagate(core, w, Y0, sources, config.tol, config.max_iter, keep_trajectory=True)
    mask, t = _loss_terms(core.n_nodes, sources, targets, config.loss_scope)
    diff = np.where(mask, res.Y - t, 0.0)
    value = float(np.sum(diff ** 2) / mask.sum())

    W, a = _system(core, w, sources)
    e = core.edge_array()
    u, v = e[:, 0], e[:, 1]
    g = 2.0 * diff / mask.sum()
    gw = np.zeros(core.n_edges)
    for Yk in reversed(res.trajectory[:-1]):
        s = g / a
        gw += s[u] * Yk[v] + s[v] * Yk[u]
        g = W @ s
    return value, model.backward(cache, gw), res


def _optimizer(config: TrainConfig):
    """Return ``step(name, grad) -> update`` for plain gradient descent or Adam."""
    lr = config.learning_rate
    if config.optimizer == "gd":
        return lambda name, g: lr * g
    beta1, beta2, eps = 0.9, 0.999, config.adam_eps
    state: dict[str, list] = {}

    def adam(name, g):
        m, v, t = state.get(name, (0.0, 0.0, 0))
        t += 1
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state[name] = (m, v, t)
        return lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)

    return adam


@dataclass
class TrainResult:
    model: EdgeWeightModel
    losses: list[float]
    config: TrainConfig


def _masks(core: CoreGraph, sources, targets):
    src = np.zeros(core.n_nodes, dtype=bool)
    tgt = np.zeros(core.n_nodes, dtype=bool)
    src[[core.index[f] for f in sources if f in core.index]] = True
    tgt[[core.index[f] for f in targets if f in core.index]] = True
    return src, tgt


def train(features, core: CoreGraph, sources, targets, config: TrainConfig = TrainConfig(),
          model: EdgeWeightModel | None = None) -> TrainResult:
    """Full-batch gradient descent on the propagation loss.

    ``sources``/``targets`` are firm ids (or boolean node masks).  ``losses``
    records the loss before each update plus the final loss.
    """
    X = features.matrix if hasattr(features, "matrix") else features
    if hasattr(features, "check_aligned"):
        features.check_aligned(core)
    if isinstance(sources, np.ndarray) and sources.dtype == bool:
        src, tgt = sources, np.asarray(targets, dtype=bool)
    else:
        src, tgt = _masks(core, sources, targets)
    if not src.any():
        raise ValueError("no sources")
    if model is None:
        model = EdgeWeightModel(X.shape[1], config.hidden_dim, config.activation, seed=config.seed)
    losses = []
    step = _optimizer(config)
    for epoch in range(config.epochs):
        value, grads, _ = loss_and_grad(model, X, core, src, tgt, config)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError(f"non-finite loss or gradient at epoch {epoch} (loss={value})")
        losses.append(value)
        for k in model.PARAMS:
            model.params[k] = model.params[k] - step(k, grads[k])
    final, _, _ = loss_and_grad(model, X, core, src, tgt, config)
    if not np.isfinite(final):
        raise DivergenceError(f"non-finite final loss {final}")
    losses.append(final)
    return TrainResult(model, losses, config)


def predict(model: EdgeWeightModel | None, features, core: CoreGraph, known_labels,
            candidates=None, tol: float = 1e-6, max_iter: int = 10_000) -> dict[str, float]:
    """Propagate from every known-label firm (value 1) and score the remaining nodes.

    ``model=None`` is the fixed mode with every weight equal to one.
    """
    known = np.zeros(core.n_nodes, dtype=bool)
    known[[core.index[f] for f in known_labels if f in core.index]] = True
    if model is None:
        w = np.ones(core.n_edges)
    else:
        X = features.matrix if hasattr(features, "matrix") else features
        w = model(X)
    res = jacobi_propagate(core, w, known.astype(float), known, tol, max_iter)
    if candidates is None:
        candidates = [n for n, k in zip(core.nodes, known) if not k]
    return {f: float(res.Y[core.index[f]]) if f in core.index else 0.0 for f in candidates}


def weight_histogram(weights, bins: int = 20) -> list[tuple[float, float, int, float]]:
    """``(lo, hi, count, density)`` rows over [0, 1]; densities integrate to one."""
    counts, edges = np.histogram(np.asarray(weights), bins=bins, range=(0.0, 1.0))
    width = 1.0 / bins
    total = max(counts.sum(), 1)
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k]), counts[k] / (total * width))
            for k in range(bins)]


def extreme_fraction(weights, margin: float = 0.1) -> float:
    w = np.asarray(weights)
    return float(np.mean((w <= margin) | (w >= 1.0 - margin)))


# --------------------------------------------------------------------------
# persistence


def save_model(path: str, model: EdgeWeightModel | None, meta: dict) -> None:
    doc = {"mode": "fixed" if model is None else "learned", "meta": meta,
           "model": None if model is None else model.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_model(path: str):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    model = None if doc["mode"] == "fixed" else EdgeWeightModel.from_dict(doc["model"])
    return model, doc.get("meta", {})
