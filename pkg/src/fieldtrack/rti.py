"""Multiple-shooting Gauss-Newton least-squares solver with a real-time
iteration split.

``prepare`` linearizes the discrete dynamics and the residual functions
about the warm start (forward finite differences) and condenses the problem
to a dense box-constrained QP over the inputs, plus the free parameters and,
in free-initial-state mode, the first node. ``feedback`` injects the newest
state estimate into the pinned initial condition, solves the QP with the
primal active-set method, and expands the step back to the full trajectory.
Exactly one linearization and one QP solve happen per prepare/feedback pair;
there is no inner re-linearization.

Node states are eliminated through the linearized dynamics

    dx[k+1] = A[k] dx[k] + B[k] du[k] + C[k] dp + d[k]

where d[k] is the shooting-gap defect of the warm start, so the condensed
Hessian and gradient match the batch Gauss-Newton normal equations of the
same least-squares problem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .qp import BoxQpResult, box_qp_kkt_residual, solve_box_qp


class SolverError(RuntimeError):
    """Raised on non-finite model output; carries the offending node."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


def _check_psd(name: str, w: np.ndarray) -> None:
    w = np.atleast_2d(w)
    if not np.allclose(w, w.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(w)) < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass
class OcpProblem:
    """Multiple-shooting nonlinear least-squares problem over one horizon.

    `dynamics(x, u, p)` is the discrete one-step map. `stage_residual(k, x,
    u, p)` and `terminal_residual(x, p)` return residual vectors weighted by
    the corresponding matrices (constant or one per stage). The initial node
    is pinned to the fed-back estimate unless `free_initial_state` is set,
    in which case an arrival-cost residual on (x0, p) applies.
    """

    horizon: int
    n_x: int
    n_u: int
    dynamics: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    stage_residual: Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    stage_weight: np.ndarray | Sequence[np.ndarray]
    terminal_residual: Callable[[np.ndarray, np.ndarray], np.ndarray]
    terminal_weight: np.ndarray
    n_p: int = 0
    u_lower: np.ndarray | None = None
    u_upper: np.ndarray | None = None
    p_lower: np.ndarray | None = None
    p_upper: np.ndarray | None = None
    x_lower: np.ndarray | None = None
    x_upper: np.ndarray | None = None
    free_initial_state: bool = False
    arrival_ref: np.ndarray | None = None
    arrival_weight: np.ndarray | None = None
    state_penalty: float = 1e4
    levenberg: float = 1e-8
    fd_step: float = 1e-6

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least one interval")
        for name in ("u", "p"):
            lo = getattr(self, f"{name}_lower")
            hi = getattr(self, f"{name}_upper")
            if lo is not None and hi is not None and np.any(np.asarray(lo) > np.asarray(hi)):
                raise ValueError(f"{name} bounds must satisfy lower <= upper")
        for k in range(self.horizon):
            _check_psd("stage weight", self._weight(k))
        _check_psd("terminal weight", self.terminal_weight)
        if self.free_initial_state:
            if self.arrival_ref is None or self.arrival_weight is None:
                raise ValueError("free-initial-state mode requires an arrival cost")
            _check_psd("arrival weight", self.arrival_weight)
            if np.min(np.linalg.eigvalsh(np.atleast_2d(self.arrival_weight))) <= 0.0:
                raise ValueError("arrival weight must be positive definite")

    def _weight(self, k: int) -> np.ndarray:
        w = self.stage_weight
        if isinstance(w, (list, tuple)):
            return np.atleast_2d(w[k])
        return np.atleast_2d(w)


@dataclass
class OcpSolution:
    """Solution trajectory plus solver diagnostics and phase timings."""

    states: np.ndarray  # (N+1, n_x)
    inputs: np.ndarray  # (N, n_u)
    params: np.ndarray  # (n_p,)
    objective: float = float("nan")
    kkt_residual: float = float("nan")  # stationarity at the linearization point
    qp_residual: float = float("nan")  # active-set certificate of the step
    preparation_time: float = 0.0
    feedback_time: float = 0.0
    stale: bool = False

    def copy(self) -> "OcpSolution":
        return OcpSolution(self.states.copy(), self.inputs.copy(),
                           self.params.copy(), self.objective,
                           self.kkt_residual, self.qp_residual,
                           self.preparation_time, self.feedback_time,
                           self.stale)


@dataclass
class PreparedQp:
    """Condensed QP and the expansion data for one linearization point."""

    hessian: np.ndarray
    gradient0: np.ndarray
    embed: np.ndarray | None  # gradient sensitivity to the injected estimate
    lower: np.ndarray
    upper: np.ndarray
    base_states: np.ndarray
    base_inputs: np.ndarray
    base_params: np.ndarray
    A: list = field(default_factory=list)
    B: list = field(default_factory=list)
    C: list = field(default_factory=list)
    defects: list = field(default_factory=list)


def reference_warm_start(problem: OcpProblem, x0, inputs=None,
                         params=None) -> OcpSolution:
    """Forward-simulated initial guess (consistent trajectory, zero defects)."""
    n = problem.horizon
    u = np.zeros((n, problem.n_u)) if inputs is None else np.asarray(inputs, dtype=float).reshape(n, problem.n_u)
    p = np.zeros(problem.n_p) if params is None else np.asarray(params, dtype=float).copy()
    x = np.zeros((n + 1, problem.n_x))
    x[0] = np.asarray(x0, dtype=float)
    for k in range(n):
        x[k + 1] = problem.dynamics(x[k], u[k], p)
    return OcpSolution(x, u, p)


def shift_warm_start(solution: OcpSolution) -> OcpSolution:
    """Shift node variables one step forward, duplicating the terminal node."""
    states = np.vstack([solution.states[1:], solution.states[-1:]])
    inputs = np.vstack([solution.inputs[1:], solution.inputs[-1:]]) \
        if solution.inputs.shape[0] > 1 else solution.inputs.copy()
    return OcpSolution(states, inputs, solution.params.copy())


def _fd_jacobian(func, z: np.ndarray, f0: np.ndarray, rel_step: float) -> np.ndarray:
    cols = np.empty((f0.size, z.size))
    for i in range(z.size):
        h = rel_step * max(1.0, abs(z[i]))
        zp = z.copy()
        zp[i] += h
        cols[:, i] = (func(zp) - f0) / h
    return cols


class RtiSolver:
    """Single-consumer real-time-iteration solver bound to one problem."""

    def __init__(self, problem: OcpProblem):
        problem.validate()
        self.problem = problem
        self.prepared: PreparedQp | None = None
        self.prepare_count = 0
        self.feedback_count = 0
        self.linearize_count = 0
        self.qp_count = 0
        self._previous: OcpSolution | None = None
        self._prep_elapsed = 0.0

    # -- preparation phase -------------------------------------------------

    def prepare(self, warm: OcpSolution) -> PreparedQp:
        t0 = time.perf_counter()
        prob = self.problem
        n, n_x, n_u, n_p = prob.horizon, prob.n_x, prob.n_u, prob.n_p
        X = np.asarray(warm.states, dtype=float)
        U = np.asarray(warm.inputs, dtype=float)
        p = np.asarray(warm.params, dtype=float)
        if X.shape != (n + 1, n_x) or U.shape != (n, n_u) or p.shape != (n_p,):
            raise ValueError("warm start dimensions do not match the problem")

        free_x0 = prob.free_initial_state
        n_w = n * n_u + n_p + (n_x if free_x0 else 0)
        p_off = n * n_u
        x0_off = p_off + n_p

        A, B, C, defects = [], [], [], []
        for k in range(n):
            xk, uk = X[k], U[k]
            f0 = prob.dynamics(xk, uk, p)
            Ak = _fd_jacobian(lambda z: prob.dynamics(z, uk, p), xk, f0, prob.fd_step)
            Bk = _fd_jacobian(lambda z: prob.dynamics(xk, z, p), uk, f0, prob.fd_step)
            Ck = _fd_jacobian(lambda z: prob.dynamics(xk, uk, z), p, f0, prob.fd_step) \
                if n_p else np.zeros((n_x, 0))
            dk = f0 - X[k + 1]
            if not (np.isfinite(f0).all() and np.isfinite(Ak).all()
                    and np.isfinite(Bk).all() and np.isfinite(Ck).all()):
                raise SolverError("non-finite dynamics linearization", node=k)
            A.append(Ak)
            B.append(Bk)
            C.append(Ck)
            defects.append(dk)
        self.linearize_count += 1

        # Node-state sensitivities to the condensed variables.
        Phi = [np.eye(n_x)]
        Psi = [np.zeros((n_x, n_p))]
        e = [np.zeros(n_x)]
        Gamma: list[list[np.ndarray]] = [[]]
        for k in range(n):
            Phi.append(A[k] @ Phi[k])
            Psi.append(A[k] @ Psi[k] + C[k])
            e.append(A[k] @ e[k] + defects[k])
            Gamma.append([A[k] @ G for G in Gamma[k]] + [B[k]])

        H = np.zeros((n_w, n_w))
        g0 = np.zeros(n_w)
        GE = np.zeros((n_w, n_x))

        def fold(J, E, r, W):
            WJ = W @ J
            H_local = J.T @ WJ
            H[:, :] += H_local
            g0[:] += WJ.T @ r
            if E is not None:
                GE[:, :] += WJ.T @ E

        for k in range(n + 1):
            xk = X[k]
            uk = U[k] if k < n else None
            if k < n:
                r = np.asarray(prob.stage_residual(k, xk, uk, p), dtype=float)
                W = prob._weight(k)
                Rx = _fd_jacobian(lambda z: np.asarray(prob.stage_residual(k, z, uk, p)),
                                  xk, r, prob.fd_step)
                Ru = _fd_jacobian(lambda z: np.asarray(prob.stage_residual(k, xk, z, p)),
                                  uk, r, prob.fd_step)
                Rp = _fd_jacobian(lambda z: np.asarray(prob.stage_residual(k, xk, uk, z)),
                                  p, r, prob.fd_step) if n_p else np.zeros((r.size, 0))
            else:
                r = np.asarray(prob.terminal_residual(xk, p), dtype=float)
                W = np.atleast_2d(prob.terminal_weight)
                Rx = _fd_jacobian(lambda z: np.asarray(prob.terminal_residual(z, p)),
                                  xk, r, prob.fd_step)
                Ru = None
                Rp = _fd_jacobian(lambda z: np.asarray(prob.terminal_residual(xk, z)),
                                  p, r, prob.fd_step) if n_p else np.zeros((r.size, 0))
            if not np.isfinite(r).all() or not np.isfinite(Rx).all():
                raise SolverError("non-finite residual linearization", node=k)

            J = np.zeros((r.size, n_w))
            for j, G in enumerate(Gamma[k]):
                J[:, j * n_u:(j + 1) * n_u] += Rx @ G
            if Ru is not None:
                J[:, k * n_u:(k + 1) * n_u] += Ru
            if n_p:
                J[:, p_off:p_off + n_p] += Rx @ Psi[k] + Rp
            x0_sens = Rx @ Phi[k]
            E = None
            if free_x0:
                J[:, x0_off:] += x0_sens
            else:
                E = x0_sens
            fold(J, E, r + Rx @ e[k], W)

            # Soft one-sided penalties keep state bounds inside the box QP.
            if prob.x_lower is not None or prob.x_upper is not None:
                rp, Rpx = self._state_penalty(xk)
                if rp is not None:
                    Jp = np.zeros((rp.size, n_w))
                    for j, G in enumerate(Gamma[k]):
                        Jp[:, j * n_u:(j + 1) * n_u] += Rpx @ G
                    if n_p:
                        Jp[:, p_off:p_off + n_p] += Rpx @ Psi[k]
                    Ep = None
                    pen_x0 = Rpx @ Phi[k]
                    if free_x0:
                        Jp[:, x0_off:] += pen_x0
                    else:
                        Ep = pen_x0
                    fold(Jp, Ep, rp + Rpx @ e[k],
                         prob.state_penalty * np.eye(rp.size))

        if free_x0:
            n_arr = n_x + n_p
            J = np.zeros((n_arr, n_w))
            J[:n_x, x0_off:] = np.eye(n_x)
            if n_p:
                J[n_x:, p_off:p_off + n_p] = np.eye(n_p)
            r = np.concatenate([X[0], p]) - np.asarray(prob.arrival_ref, dtype=float)
            fold(J, None, r, np.atleast_2d(prob.arrival_weight))

        H[np.diag_indices_from(H)] += prob.levenberg

        lower = np.full(n_w, -np.inf)
        upper = np.full(n_w, np.inf)
        if prob.u_lower is not None:
            lower[:p_off] = (np.tile(prob.u_lower, n) - U.ravel())
        if prob.u_upper is not None:
            upper[:p_off] = (np.tile(prob.u_upper, n) - U.ravel())
        if n_p and prob.p_lower is not None:
            lower[p_off:p_off + n_p] = np.asarray(prob.p_lower) - p
        if n_p and prob.p_upper is not None:
            upper[p_off:p_off + n_p] = np.asarray(prob.p_upper) - p

        self.prepared = PreparedQp(H, g0, None if free_x0 else GE, lower, upper,
                                   X.copy(), U.copy(), p.copy(), A, B, C, defects)
        self.prepare_count += 1
        self._prep_elapsed = time.perf_counter() - t0
        return self.prepared

    def _state_penalty(self, x: np.ndarray):
        lo, hi = self.problem.x_lower, self.problem.x_upper
        parts, jacs = [], []
        if hi is not None:
            viol = np.maximum(0.0, x - hi)
            parts.append(viol)
            jacs.append(np.diag((x > hi).astype(float)))
        if lo is not None:
            viol = np.maximum(0.0, lo - x)
            parts.append(viol)
            jacs.append(-np.diag((x < lo).astype(float)))
        if not parts:
            return None, None
        return np.concatenate(parts), np.vstack(jacs)

    # -- feedback phase ----------------------------------------------------

    def feedback(self, current_estimate=None) -> OcpSolution:
        t0 = time.perf_counter()
        prep = self.prepared
        if prep is None:
            raise SolverError("feedback called before prepare")
        prob = self.problem
        n, n_x, n_u, n_p = prob.horizon, prob.n_x, prob.n_u, prob.n_p
        p_off = n * n_u

        if prob.free_initial_state:
            g = prep.gradient0
            dx0_known = None
        else:
            if current_estimate is None:
                raise SolverError("pinned initial condition requires an estimate")
            dx0_known = np.asarray(current_estimate, dtype=float) - prep.base_states[0]
            g = prep.gradient0 + prep.embed @ dx0_known

        kkt_now = box_qp_kkt_residual(prep.hessian, g, prep.lower, prep.upper,
                                      np.zeros(g.size))

        result = solve_box_qp(prep.hessian, g, prep.lower, prep.upper)
        self.qp_count += 1
        if result.status != "optimal":
            if self._previous is None:
                raise SolverError("QP did not converge and no previous solution exists")
            stale = self._previous.copy()
            stale.stale = True
            stale.feedback_time = time.perf_counter() - t0
            self.feedback_count += 1
            return stale

        w = result.w
        dU = w[:p_off].reshape(n, n_u)
        dp = w[p_off:p_off + n_p]
        dx0 = w[p_off + n_p:] if prob.free_initial_state else dx0_known

        dX = np.zeros((n + 1, n_x))
        dX[0] = dx0
        for k in range(n):
            dX[k + 1] = prep.A[k] @ dX[k] + prep.B[k] @ dU[k] + prep.defects[k]
            if n_p:
                dX[k + 1] += prep.C[k] @ dp

        states = prep.base_states + dX
        inputs = prep.base_inputs + dU
        params = prep.base_params + dp
        if prob.u_lower is not None:
            inputs = np.maximum(inputs, prob.u_lower)
        if prob.u_upper is not None:
            inputs = np.minimum(inputs, prob.u_upper)
        if n_p and prob.p_lower is not None:
            params = np.maximum(params, prob.p_lower)
        if n_p and prob.p_upper is not None:
            params = np.minimum(params, prob.p_upper)

        sol = OcpSolution(states, inputs, params,
                          objective=self.objective(states, inputs, params),
                          kkt_residual=kkt_now,
                          qp_residual=result.kkt_residual,
                          preparation_time=self._prep_elapsed,
                          feedback_time=time.perf_counter() - t0)
        self.feedback_count += 1
        self._previous = sol
        return sol

    def solve(self, warm: OcpSolution, current_estimate=None) -> OcpSolution:
        self.prepare(warm)
        return self.feedback(current_estimate)

    # -- diagnostics ---------------------------------------------------------

    def objective(self, states, inputs, params) -> float:
        """Nonlinear least-squares objective of a candidate trajectory."""
        prob = self.problem
        total = 0.0
        for k in range(prob.horizon):
            r = np.asarray(prob.stage_residual(k, states[k], inputs[k], params))
            total += float(r @ prob._weight(k) @ r)
            if prob.x_lower is not None or prob.x_upper is not None:
                rp, _ = self._state_penalty(states[k])
                if rp is not None:
                    total += prob.state_penalty * float(rp @ rp)
        r = np.asarray(prob.terminal_residual(states[-1], params))
        total += float(r @ np.atleast_2d(prob.terminal_weight) @ r)
        if prob.x_lower is not None or prob.x_upper is not None:
            rp, _ = self._state_penalty(states[-1])
            if rp is not None:
                total += prob.state_penalty * float(rp @ rp)
        if prob.free_initial_state:
            r = np.concatenate([states[0], params]) - np.asarray(prob.arrival_ref)
            total += float(r @ np.atleast_2d(prob.arrival_weight) @ r)
        return total
