"""Constrained problem definitions, the stochastic first-order oracle, and call accounting.

A problem is a finite-sum (or streaming) smooth convex objective, a list of
smooth convex inequality constraints, and a simple regularizer.  All function
and gradient evaluations flow through the oracle helpers in this module so the
SFO/QMO accounting used by the benchmark harness stays consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Zero",
    "BoxIndicator",
    "L1",
    "Regularizer",
    "ConstrainedProblem",
    "SfoSample",
    "OracleCounters",
    "NonFiniteEvaluationError",
    "StreamingUnsupportedError",
    "sfo_query",
    "full_gradient",
    "bregman_divergence",
]


class NonFiniteEvaluationError(RuntimeError):
    """An oracle evaluation produced NaN or infinity; the run must abort."""


class StreamingUnsupportedError(RuntimeError):
    """Operation requires a finite-sum objective but the problem is streaming."""


# ---------------------------------------------------------------------------
# Regularizers


@dataclass(frozen=True)
class Zero:
    """No regularization: h(u) = 0."""

    def value(self, u: np.ndarray) -> float:
        return 0.0

    def prox(self, y: np.ndarray, rho: float) -> np.ndarray:
        return np.asarray(y, dtype=float)

    def in_domain(self, u: np.ndarray) -> bool:
        return True

    def scaled(self, c: float) -> "Zero":
        return self


@dataclass(frozen=True)
class BoxIndicator:
    """Indicator of the box [lower, upper]; entries may be +-inf."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def value(self, u: np.ndarray) -> float:
        return 0.0 if self.in_domain(u) else float("inf")

    def prox(self, y: np.ndarray, rho: float) -> np.ndarray:
        return np.clip(y, self.lower, self.upper)

    def in_domain(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def scaled(self, c: float) -> "BoxIndicator":
        return self


@dataclass(frozen=True)
class L1:
    """Weighted l1 penalty h(u) = weight * ||u||_1."""

    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("l1 weight must be nonnegative")

    def value(self, u: np.ndarray) -> float:
        return float(self.weight * np.sum(np.abs(u)))

    def prox(self, y: np.ndarray, rho: float) -> np.ndarray:
        thr = self.weight / rho
        return np.sign(y) * np.maximum(np.abs(y) - thr, 0.0)

    def in_domain(self, u: np.ndarray) -> bool:
        return True

    def scaled(self, c: float) -> "L1":
        return L1(self.weight * c)


Regularizer = Zero | BoxIndicator | L1


# ---------------------------------------------------------------------------
# Oracle records


@dataclass
class OracleCounters:
    """Monotone SFO/QMO call counts; a full gradient pass adds n SFO calls."""

    sfo_calls: int = 0
    qmo_calls: int = 0
    full_gradient_passes: int = 0


@dataclass
class SfoSample:
    """One oracle response: a batch-mean stochastic gradient plus the full constraint bundle."""

    index_batch: np.ndarray
    stochastic_gradient: np.ndarray
    constraint_values: np.ndarray
    constraint_gradients: np.ndarray
    sfo_cost: int


ComponentFn = Callable[[int, np.ndarray], tuple[float, np.ndarray]]
ConstraintFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class ConstrainedProblem:
    """A convex objective f = mean_i f_i with m smooth inequality constraints g_k <= 0.

    ``component(i, x)`` returns ``(f_i(x), grad f_i(x))``.  When ``n_components``
    is 0 the objective is streaming: any integer index is a fresh draw and
    full-pass operations are unavailable.  ``component_block`` and
    ``constraint_block`` are optional vectorized fast paths; they must agree
    with the per-index callables to floating accumulation accuracy.
    """

    dim: int
    n_components: int
    component: ComponentFn
    constraints: Sequence[ConstraintFn]
    smoothness: float
    constraint_smoothness: float
    regularizer: Regularizer = field(default_factory=Zero)
    strong_convexity: float = 0.0
    gradient_noise: float = 0.0
    x_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    component_block: Optional[Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]] = None
    constraint_block: Optional[Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.n_components < 0:
            raise ValueError("component count must be >= 0 (0 = streaming)")
        if not self.smoothness > 0:
            raise ValueError("objective smoothness L_f must be positive")
        if self.constraint_smoothness < 0:
            raise ValueError("constraint smoothness L_g must be nonnegative")
        if self.strong_convexity < 0 or self.strong_convexity > self.smoothness + 1e-12:
            raise ValueError("need 0 <= mu <= L_f")
        if self.gradient_noise < 0:
            raise ValueError("gradient noise bound must be nonnegative")
        if self.x_star is not None:
            self.x_star = np.asarray(self.x_star, dtype=float)
            if self.x_star.shape != (self.dim,):
                raise ValueError("known optimum has wrong dimension")

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def is_streaming(self) -> bool:
        return self.n_components == 0

    # -- raw evaluation helpers (no counting) --

    def component_values_grads(self, x: np.ndarray, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.component_block is not None:
            vals, grads = self.component_block(x, indices)
            return np.asarray(vals, dtype=float), np.asarray(grads, dtype=float)
        vals = np.empty(len(indices))
        grads = np.empty((len(indices), self.dim))
        for j, i in enumerate(indices):
            v, g = self.component(int(i), x)
            vals[j] = v
            grads[j] = g
        return vals, grads

    def constraint_values_grads(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.m == 0:
            return np.empty(0), np.empty((0, self.dim))
        if self.constraint_block is not None:
            vals, grads = self.constraint_block(x)
            return np.asarray(vals, dtype=float), np.asarray(grads, dtype=float)
        vals = np.empty(self.m)
        grads = np.empty((self.m, self.dim))
        for k, g_k in enumerate(self.constraints):
            v, g = g_k(x)
            vals[k] = v
            grads[k] = g
        return vals, grads

    def objective_value(self, x: np.ndarray) -> float:
        """Exact f(x) = mean_i f_i(x); finite-sum only, not counted."""
        if self.is_streaming:
            raise StreamingUnsupportedError("full objective needs a finite sum")
        vals, _ = self.component_values_grads(x, np.arange(self.n_components))
        return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Oracle operations


def _check_finite(arr, what: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEvaluationError(f"non-finite {what}; problem ill-posed or run diverged")


def sfo_query(
    problem: ConstrainedProblem,
    x: np.ndarray,
    batch: Sequence[int],
    counters: Optional[OracleCounters] = None,
) -> SfoSample:
    """One SFO call: batch-mean gradient of f plus all constraint values/gradients at x.

    Costs ``len(batch)`` SFO units; the constraint bundle is free under the
    oracle model used throughout.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x, "query point")
    batch = np.asarray(batch, dtype=int)
    if batch.size == 0:
        raise ValueError("batch must be nonempty")
    if not problem.is_streaming:
        if np.any(batch < 0) or np.any(batch >= problem.n_components):
            raise IndexError("component index out of range")
    _, grads = problem.component_values_grads(x, batch)
    grad = grads.mean(axis=0)
    _check_finite(grad, "stochastic gradient")
    cvals, cgrads = problem.constraint_values_grads(x)
    _check_finite(cvals, "constraint value")
    _check_finite(cgrads, "constraint gradient")
    if counters is not None:
        counters.sfo_calls += int(batch.size)
    return SfoSample(
        index_batch=batch,
        stochastic_gradient=grad,
        constraint_values=cvals,
        constraint_gradients=cgrads,
        sfo_cost=int(batch.size),
    )


def full_gradient(
    problem: ConstrainedProblem,
    x: np.ndarray,
    counters: Optional[OracleCounters] = None,
) -> np.ndarray:
    """Exact mean gradient over all n components; costs n SFO calls and one full pass."""
    if problem.is_streaming:
        raise StreamingUnsupportedError("full gradient needs a finite sum")
    x = np.asarray(x, dtype=float)
    _check_finite(x, "query point")
    _, grads = problem.component_values_grads(x, np.arange(problem.n_components))
    grad = grads.mean(axis=0)
    _check_finite(grad, "full gradient")
    if counters is not None:
        counters.sfo_calls += problem.n_components
        counters.full_gradient_passes += 1
    return grad


def bregman_divergence(problem: ConstrainedProblem, u: np.ndarray, v: np.ndarray) -> float:
    """D_f(u, v) = f(u) - f(v) - <grad f(v), u - v>; nonnegative for convex f."""
    if problem.is_streaming:
        raise StreamingUnsupportedError("Bregman divergence needs a finite sum")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    fu = problem.objective_value(u)
    fv = problem.objective_value(v)
    gv = full_gradient(problem, v)
    return float(fu - fv - gv @ (u - v))
