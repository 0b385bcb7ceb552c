"""Dense box-constrained quadratic programming by a primal active-set method.

Solves min 0.5 w'Hw + g'w subject to lower <= w <= upper for a symmetric
positive-definite H. Problems here are small (a few tens of variables), so
each working-set change re-solves the free subsystem directly. The method is
deterministic: ties in blocking and release choices break to the lowest
index, so identical inputs give bitwise-identical solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BoxQpResult:
    w: np.ndarray
    iterations: int
    status: str  # 'optimal' or 'iteration_limit'
    kkt_residual: float


def box_qp_kkt_residual(H: np.ndarray, g: np.ndarray, lower: np.ndarray,
                        upper: np.ndarray, w: np.ndarray,
                        bound_tol: float = 1e-9) -> float:
    """Max-norm stationarity/complementarity residual of a candidate point.

    Free components must have zero gradient; components at a bound must have
    a correctly signed multiplier (gradient pointing out of the box).
    """
    grad = H @ w + g
    res = np.abs(grad)
    tol = bound_tol * np.maximum(1.0, np.abs(w))
    at_lower = np.isfinite(lower) & (w <= lower + tol)
    at_upper = np.isfinite(upper) & (w >= upper - tol)
    res = np.where(at_lower, np.maximum(0.0, -grad), res)
    res = np.where(at_upper, np.maximum(0.0, grad), res)
    both = at_lower & at_upper  # pinned variable, any gradient is fine
    res = np.where(both, 0.0, res)
    return float(np.max(res)) if res.size else 0.0


def solve_box_qp(H: np.ndarray, g: np.ndarray, lower: np.ndarray,
                 upper: np.ndarray, start: np.ndarray | None = None,
                 max_iterations: int | None = None) -> BoxQpResult:
    n = g.size
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ValueError("infeasible box: lower > upper")
    if max_iterations is None:
        max_iterations = 10 * n + 60

    w = np.zeros(n) if start is None else np.asarray(start, dtype=float).copy()
    w = np.clip(w, lower, upper)
    pinned = lower == upper
    at_lower = (w <= lower) & np.isfinite(lower) & ~pinned
    at_upper = (w >= upper) & np.isfinite(upper) & ~pinned

    grad_scale = 1.0 + float(np.max(np.abs(g))) if n else 1.0
    mult_tol = 1e-11 * grad_scale
    step_tol = 1e-14

    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        grad = H @ w + g
        free = ~(at_lower | at_upper | pinned)
        d = np.zeros(n)
        if np.any(free):
            idx = np.nonzero(free)[0]
            d[idx] = np.linalg.solve(H[np.ix_(idx, idx)], -grad[idx])

        dmax = float(np.max(np.abs(d))) if d.size else 0.0
        if dmax <= step_tol * (1.0 + np.max(np.abs(w), initial=0.0)):
            # Stationary on the free set; check multiplier signs.
            lam = np.full(n, np.inf)
            lam[at_lower] = grad[at_lower]
            lam[at_upper] = -grad[at_upper]
            worst = int(np.argmin(lam)) if n else 0
            if n == 0 or lam[worst] >= -mult_tol:
                return BoxQpResult(
                    w, iterations, "optimal",
                    box_qp_kkt_residual(H, g, lower, upper, w))
            at_lower[worst] = False
            at_upper[worst] = False
            continue

        # Longest feasible step along d, then add the blocking bound.
        alpha = 1.0
        blocker = -1
        block_upper = False
        for i in np.nonzero(free)[0]:
            if d[i] > 0.0 and np.isfinite(upper[i]):
                a = (upper[i] - w[i]) / d[i]
                if a < alpha - 1e-15:
                    alpha, blocker, block_upper = a, i, True
            elif d[i] < 0.0 and np.isfinite(lower[i]):
                a = (lower[i] - w[i]) / d[i]
                if a < alpha - 1e-15:
                    alpha, blocker, block_upper = a, i, False
        w = w + max(alpha, 0.0) * d
        if blocker >= 0:
            if block_upper:
                w[blocker] = upper[blocker]
                at_upper[blocker] = True
            else:
                w[blocker] = lower[blocker]
                at_lower[blocker] = True
        w = np.clip(w, lower, upper)

    return BoxQpResult(w, iterations, "iteration_limit",
                       box_qp_kkt_residual(H, g, lower, upper, w))
