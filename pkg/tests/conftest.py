"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from eggp import Dataset, Expr, GenConfig, Op, Symbol, grow, param_slots, var


def make_dataset(fn, n_rows=100, n_features=2, seed=0, lo=-2.0, hi=2.0) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(n_rows, n_features))
    return Dataset(X, fn(X))


def random_exprs(count, seed, max_depth=6, max_size=15, feature_count=2):
    cfg = GenConfig(max_depth=max_depth, max_size=max_size, feature_count=feature_count)
    rng = np.random.default_rng(seed)
    return [grow(cfg, rng) for _ in range(count)]


def theta_as_var(e: Expr, idx: int) -> Expr:
    """Replace every parameter node with variable ``idx``.

    Lets vectorized evaluation bind all parameter occurrences to one shared
    per-row value (an extra data column), which is the convention under which
    the structural rewrite rules are pointwise sound.
    """
    if e.sym.op is Op.PARAM:
        return var(idx)
    if not e.args:
        return e
    return Expr(e.sym, tuple(theta_as_var(a, idx) for a in e.args))


def agree(a: np.ndarray, b: np.ndarray, rtol: float = 1e-8) -> bool:
    """Pointwise agreement where both sides are finite."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    both = np.isfinite(a) & np.isfinite(b)
    if not both.any():
        return True
    diff = np.abs(a[both] - b[both])
    scale = np.maximum(1.0, np.maximum(np.abs(a[both]), np.abs(b[both])))
    return bool(np.all(diff <= rtol * scale))
