"""Parameter fitting and fitness: least-squares optimization with restarts,
MSE/R² metrics, and the fit/validation split.

Fitness is always the validation MSE; parameters only ever see the fit rows.
Non-finite predictions yield infinite loss rather than an error, so selection
pressure disposes of pathological individuals.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .expr import Expr, Op, eval_rows, param_slots
from .tape import compile_valgrad

log = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "FitConfig",
    "split_fit_val",
    "mse",
    "r2",
    "eval_with_grad",
    "mse_gradient",
    "fit_params",
]

_CLIP = 1e100


@dataclass
class Dataset:
    """Row-major feature matrix plus target vector."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("y length must match X rows")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names))


@dataclass
class FitConfig:
    iterations: int = 50
    restarts: int = 2

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be >= 1")


def split_fit_val(d: Dataset, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Random partition with |val| = round(n/3); degenerates to val = fit = d
    below 3 rows (logged)."""
    n = d.n_rows
    if n < 3:
        log.warning("dataset has %d rows; validation set equals the fit set", n)
        return d, d
    n_val = int(round(n / 3))
    perm = rng.permutation(n)
    val_idx = np.sort(perm[:n_val])
    fit_idx = np.sort(perm[n_val:])
    return d.take(fit_idx), d.take(val_idx)


def mse(pred: np.ndarray, y: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {y.shape}")
    if not np.all(np.isfinite(pred)):
        return math.inf
    with np.errstate(all="ignore"):
        out = float(np.mean((pred - y) ** 2))
    return out if math.isfinite(out) else math.inf


def r2(pred: np.ndarray, y: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {y.shape}")
    if not np.all(np.isfinite(pred)):
        return -math.inf
    with np.errstate(all="ignore"):
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if not math.isfinite(ss_res):
        return -math.inf
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def eval_with_grad(
    e: Expr, X: np.ndarray, params: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    """Value and Jacobian w.r.t. the parameter slots, over all rows.

    Forward-mode over the tree; returns ``(value (n,), jac (n, k))``.
    """
    if not isinstance(X, np.ndarray) or X.dtype != np.float64:
        X = np.asarray(X, dtype=float)
    n = X.shape[0]
    k = len(params)
    cursor = [0]
    zero_grad = np.zeros((n, k))  # shared, never mutated

    def go(node: Expr) -> tuple[np.ndarray, np.ndarray]:
        op = node.sym.op
        if op is Op.VAR:
            return X[:, node.sym.index], zero_grad
        if op is Op.PARAM or op is Op.CONST:
            j = cursor[0]
            cursor[0] += 1
            grad = np.zeros((n, k))
            grad[:, j] = 1.0
            return np.broadcast_to(float(params[j]), n), grad
        if op is Op.ADD:
            v1, g1 = go(node.args[0])
            v2, g2 = go(node.args[1])
            return v1 + v2, g1 + g2
        if op is Op.SUB:
            v1, g1 = go(node.args[0])
            v2, g2 = go(node.args[1])
            return v1 - v2, g1 - g2
        if op is Op.MUL:
            v1, g1 = go(node.args[0])
            v2, g2 = go(node.args[1])
            return v1 * v2, v2[:, None] * g1 + v1[:, None] * g2
        if op is Op.DIV:
            v1, g1 = go(node.args[0])
            v2, g2 = go(node.args[1])
            return v1 / v2, (g1 * v2[:, None] - v1[:, None] * g2) / (v2 * v2)[:, None]
        if op is Op.POWABS:
            v1, g1 = go(node.args[0])
            v2, g2 = go(node.args[1])
            a = np.abs(v1)
            w = np.power(a, v2)
            du = v2 * np.power(a, v2 - 1.0) * np.sign(v1)
            dv = w * np.log(a)
            return w, g1 * du[:, None] + g2 * dv[:, None]
        if op is Op.LOGABS:
            v, gr = go(node.args[0])
            return np.log(np.abs(v)), gr / v[:, None]
        if op is Op.EXP:
            v, gr = go(node.args[0])
            w = np.exp(v)
            return w, gr * w[:, None]
        if op is Op.SQRTABS:
            v, gr = go(node.args[0])
            w = np.sqrt(np.abs(v))
            d = np.sign(v) / (2.0 * w)
            return w, gr * d[:, None]
        raise AssertionError(f"unhandled op {op!r}")

    with np.errstate(all="ignore"):
        return go(e)


def mse_gradient(e: Expr, X: np.ndarray, y: np.ndarray, params: Sequence[float]) -> np.ndarray:
    """Analytic gradient of the MSE w.r.t. each parameter slot."""
    v, jac = eval_with_grad(e, X, params)
    n = X.shape[0]
    with np.errstate(all="ignore"):
        return (2.0 / n) * (jac.T @ (v - y))


def fit_params(
    e: Expr,
    fit: Dataset,
    cfg: FitConfig,
    rng: np.random.Generator,
    seeds: Optional[Sequence[Optional[float]]] = None,
) -> tuple[np.ndarray, float]:
    """Fit the parameter slots of ``e`` by least squares on ``fit``.

    Runs ``cfg.restarts`` independent optimizations of ``cfg.iterations``
    each.  Slot starting points: constants seed their literal value on the
    first restart (perturbed afterwards); free parameters draw standard
    normals.  Returns the best finite-loss vector, or the last restart's with
    infinite loss when every restart diverged.
    """
    if seeds is None:
        seeds = param_slots(e)
    k = len(seeds)
    X, y = fit.X, fit.y
    if k == 0:
        return np.zeros(0), mse(eval_rows(e, X, []), y)

    # the optimizer asks for residuals and the Jacobian separately at the same
    # point; one fused evaluation serves both
    valgrad = compile_valgrad(e)
    cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def compute(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = p.tobytes()
        got = cache.get(key)
        if got is None:
            v, jac = valgrad(X, p)
            with np.errstate(all="ignore"):
                r = v - y
            if not np.all(np.isfinite(r)):
                r = np.where(np.isnan(r), _CLIP, np.clip(r, -_CLIP, _CLIP))
            if not np.all(np.isfinite(jac)):
                jac = np.where(np.isnan(jac), 0.0, np.clip(jac, -_CLIP, _CLIP))
            if len(cache) > 4:
                cache.clear()
            got = (r, jac)
            cache[key] = got
        return got

    def residuals(p: np.ndarray) -> np.ndarray:
        return compute(p)[0]

    def jacobian(p: np.ndarray) -> np.ndarray:
        return compute(p)[1]

    best_params: Optional[np.ndarray] = None
    best_loss = math.inf
    last = np.zeros(k)
    method = "lm" if fit.n_rows >= k else "trf"
    for restart in range(cfg.restarts):
        x0 = np.empty(k)
        for j, seed in enumerate(seeds):
            noise = float(rng.standard_normal())
            if seed is None:
                x0[j] = noise
            elif restart == 0:
                x0[j] = seed
            else:
                x0[j] = seed + noise
        try:
            res = least_squares(
                residuals,
                x0,
                jac=jacobian,
                method=method,
                max_nfev=cfg.iterations,
            )
            fitted = res.x
        except (ValueError, np.linalg.LinAlgError):
            fitted = x0
        last = fitted
        loss = mse(eval_rows(e, X, fitted, check=False), y)
        if loss < best_loss:
            best_loss = loss
            best_params = fitted
    if best_params is None:
        return last, math.inf
    return best_params, best_loss
