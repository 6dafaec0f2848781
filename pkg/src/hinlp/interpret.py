"""Binary nonnegative matrix factorization and basis-level partial dependence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .features import SEGMENTS

logger = logging.getLogger(__name__)


@dataclass
class FactorModel:
    """``X ~ link(coefficients @ basis.T + bias)`` with nonnegative factors.

    ``basis`` is features x rank, ``coefficients`` is rows x rank.
    """

    basis: np.ndarray
    coefficients: np.ndarray
    bias: float = 0.0
    link: str = "logistic"
    objective: list[float] = field(default_factory=list)
    scheme: str | None = None
    catalog: list | None = None

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def reconstruct(self, coefficients=None) -> np.ndarray:
        """Reconstructed feature rows, always clamped to [0, 1]."""
        c = self.coefficients if coefficients is None else coefficients
        z = c @ self.basis.T
        out = expit(z + self.bias) if self.link == "logistic" else z
        return np.clip(out, 0.0, 1.0)


def _logistic_objective(X, U, V, b):
    z = U @ V.T + b
    return float(np.sum(np.logaddexp(0.0, z) - X * z))


def _bnmf_logistic(X, U, V, b, iters, check_every, armijo=1e-4):
    step = 1.0
    f = _logistic_objective(X, U, V, b)
    trace = [f]
    for it in range(1, iters + 1):
        G = expit(U @ V.T + b) - X
        gU, gV, gb = G @ V, G.T @ U, float(G.sum())
        while True:
            U1 = np.maximum(U - step * gU, 0.0)
            V1 = np.maximum(V - step * gV, 0.0)
            b1 = b - step * gb
            decrease = np.sum(gU * (U - U1)) + np.sum(gV * (V - V1)) + gb * (b - b1)
            f1 = _logistic_objective(X, U1, V1, b1)
            if f1 <= f - armijo * decrease or step < 1e-12:
                break
            step *= 0.5
        if f1 <= f:
            U, V, b, f = U1, V1, b1, f1
        step = min(step * 2.0, 1e3)
        if it % check_every == 0 or it == iters:
            trace.append(f)
    return U, V, b, trace


def _nmf_frobenius(X, U, V, iters, check_every, eps=1e-12):
    trace = [float(np.sum((X - U @ V.T) ** 2))]
    for it in range(1, iters + 1):
        U *= (X @ V) / (U @ (V.T @ V) + eps)
        V *= (X.T @ U) / (V @ (U.T @ U) + eps)
        if it % check_every == 0 or it == iters:
            trace.append(float(np.sum((X - U @ V.T) ** 2)))
    return U, V, trace


def bnmf(features, rank: int = 50, iters: int = 500, seed: int = 0, link: str = "logistic",
         check_every: int = 10) -> FactorModel:
    """Factor a binary matrix into nonnegative coefficients and basis vectors.

    ``link="logistic"`` models each entry as Bernoulli with logit
    ``coefficients @ basis.T + bias`` and runs projected gradient descent with
    an Armijo backtracking step, so the objective never increases.
    ``link="identity"`` is plain Frobenius NMF with multiplicative updates.
    """
    scheme = getattr(features, "scheme", None)
    catalog = getattr(features, "catalog", None)
    X = features.dense() if hasattr(features, "dense") else np.asarray(features, dtype=float)
    n, d = X.shape
    if rank < 1 or rank > min(n, d):
        raise ValueError(f"rank {rank} exceeds min(rows, cols) = {min(n, d)}")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(rank)
    U = rng.uniform(0.0, scale, (n, rank))
    V = rng.uniform(0.0, scale, (d, rank))
    if link == "logistic":
        density = float(np.clip(X.mean(), 1e-3, 1 - 1e-3))
        b = float(np.log(density / (1 - density)))
        U, V, b, trace = _bnmf_logistic(X, U, V, b, iters, check_every)
    elif link == "identity":
        b = 0.0
        U, V, trace = _nmf_frobenius(X, U, V, iters, check_every)
    else:
        raise ValueError(f"unknown link {link!r}")
    return FactorModel(V, U, b, link, trace, scheme, catalog)


@dataclass(frozen=True)
class BasisEffect:
    effect: float
    constant: bool = False


def basis_importance(model: Callable, factors: FactorModel, k: int) -> BasisEffect:
    """Mean change in edge weight when coefficient ``k`` moves from its 1% to its 99% quantile.

    Each edge keeps its own coefficients on the other bases.
    """
    U = factors.coefficients
    q01, q99 = np.quantile(U[:, k], [0.01, 0.99])
    if q99 == q01:
        return BasisEffect(0.0, constant=True)
    hi, lo = U.copy(), U.copy()
    hi[:, k] = q99
    lo[:, k] = q01
    effect = np.mean(model(factors.reconstruct(hi)) - model(factors.reconstruct(lo)))
    return BasisEffect(float(effect))


@dataclass
class ImportanceRow:
    basis: int
    mean_effect: float
    abs_mean_effect: float
    mean_abs_effect: float


@dataclass
class ImportanceTable:
    rows: list[ImportanceRow]
    repetitions: int
    failures: list[tuple[int, str]] = field(default_factory=list)


def repeated_importance(train_fn: Callable[[int], Callable], factors: FactorModel,
                        repetitions: int = 30, seeds: Sequence[int] | None = None) -> ImportanceTable:
    """Re-train with distinct seeds and average per-basis effects, ranked by |mean effect|."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    seeds = list(range(repetitions)) if seeds is None else list(seeds)[:repetitions]
    effects, failures = [], []
    for seed in seeds:
        try:
            model = train_fn(seed)
            effects.append([basis_importance(model, factors, k).effect for k in range(factors.rank)])
        except Exception as exc:  # one failed repetition must not sink the table
            logger.warning("importance repetition with seed %d failed: %s", seed, exc)
            failures.append((seed, f"{type(exc).__name__}: {exc}"))
    if not effects:
        raise RuntimeError("every importance repetition failed")
    E = np.array(effects)
    mean = E.mean(axis=0)
    mean_abs = np.abs(E).mean(axis=0)
    rows = [ImportanceRow(k, float(mean[k]), float(abs(mean[k])), float(mean_abs[k]))
            for k in range(factors.rank)]
    rows.sort(key=lambda r: (-r.abs_mean_effect, r.basis))
    return ImportanceTable(rows, len(effects), failures)


def segment_peaks(factors: FactorModel, k: int, top_n: int = 3) -> list[tuple[str, str, float]]:
    """Top ``top_n`` relation types per path segment for basis vector ``k``.

    Only positive entries are reported; ties go to the lexicographically
    smaller relation type.
    """
    if factors.scheme != "segment" or factors.catalog is None:
        raise ValueError("segment peaks need factors over the path-segment feature scheme")
    column = factors.basis[:, k]
    peaks = []
    for seg in SEGMENTS:
        cells = [(rel, float(column[j])) for j, (rel, s) in enumerate(factors.catalog)
                 if s == seg and column[j] > 0]
        cells.sort(key=lambda c: (-c[1], c[0]))
        peaks.extend((seg, rel, v) for rel, v in cells[:top_n])
    return peaks
