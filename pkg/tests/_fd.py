"""Finite-difference and random-instance helpers shared by the gradient tests."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f(x.copy())
        x[idx] = orig - h
        f_minus = f(x.copy())
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def unit_columns(rng: np.random.Generator, d: int, n: int) -> np.ndarray:
    Z = rng.normal(size=(d, n))
    return Z / np.linalg.norm(Z, axis=0, keepdims=True)


def random_doubly_stochastic(rng: np.random.Generator, n: int, terms: int = 6) -> np.ndarray:
    """Convex combination of random permutation matrices (exact up to round-off)."""
    weights = rng.dirichlet(np.ones(terms))
    gamma = np.zeros((n, n))
    for w in weights:
        gamma += w * np.eye(n)[rng.permutation(n)]
    return gamma
