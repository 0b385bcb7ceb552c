import math

import numpy as np
import pytest

from fieldtrack.rti import (OcpProblem, OcpSolution, RtiSolver, SolverError,
                            reference_warm_start, shift_warm_start)
from fieldtrack.vehicle import SlipParams, VehicleGeometry, rk4_step, \
    tractor_subsystem_dynamics


def scalar_problem(a=0.9, b=0.5, x_ref=1.0, x_term=2.0):
    """One-interval scalar problem small enough to solve by hand."""
    return OcpProblem(
        horizon=1, n_x=1, n_u=1,
        dynamics=lambda x, u, p: np.array([a * x[0] + b * u[0]]),
        stage_residual=lambda k, x, u, p: np.array([x[0] - x_ref, u[0]]),
        stage_weight=np.diag([2.0, 1.0]),
        terminal_residual=lambda x, p: np.array([x[0] - x_term]),
        terminal_weight=np.diag([3.0]),
    )


def linear_mimo_problem(n=4, n_x=2, n_u=1, seed=3):
    rng = np.random.default_rng(seed)
    A = np.array([[1.0, 0.2], [0.0, 0.95]])
    B = np.array([[0.02], [0.2]])
    refs = rng.normal(size=(n + 1, n_x))
    W = np.diag([1.0, 2.0, 0.5])
    WT = np.diag([4.0, 4.0])
    problem = OcpProblem(
        horizon=n, n_x=n_x, n_u=n_u,
        dynamics=lambda x, u, p: A @ x + B @ u,
        stage_residual=lambda k, x, u, p: np.array(
            [x[0] - refs[k, 0], x[1] - refs[k, 1], u[0]]),
        stage_weight=W,
        terminal_residual=lambda x, p: x - refs[-1],
        terminal_weight=WT,
    )
    return problem, A, B, refs, W, WT


class TestPrepare:
    def test_condensed_hessian_matches_batch_oracle(self):
        # independent dense batch least-squares formulation
        problem, A, B, refs, W, WT = linear_mimo_problem()
        n, n_x, n_u = problem.horizon, problem.n_x, problem.n_u
        x0 = np.array([0.3, -0.2])
        warm = reference_warm_start(problem, x0)
        solver = RtiSolver(problem)
        prepared = solver.prepare(warm)

        # batch: stack state sensitivities to inputs
        sens = np.zeros((n + 1, n_x, n * n_u))  # dX_k / dU
        for k in range(n):
            sens[k + 1] = A @ sens[k]
            sens[k + 1][:, k * n_u:(k + 1) * n_u] += B
        rows = []
        weights = []
        for k in range(n):
            Rx = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
            Ru = np.array([[0.0], [0.0], [1.0]])
            Jk = Rx @ sens[k]
            Jk[:, k * n_u:(k + 1) * n_u] += Ru
            rows.append(Jk)
            weights.append(W)
        rows.append(np.eye(n_x) @ sens[n])
        weights.append(WT)
        H_batch = sum(J.T @ Wk @ J for J, Wk in zip(rows, weights))

        assert prepared.hessian == pytest.approx(
            H_batch + problem.levenberg * np.eye(n * n_u), abs=1e-6)

    def test_zero_residual_warm_start_gives_zero_step(self):
        geom = VehicleGeometry()
        slip = SlipParams(0.9, 0.9, 0.9)

        def dyn(x, u, p):
            return rk4_step(
                lambda s, uu: tractor_subsystem_dynamics(s, float(uu[0]), slip,
                                                         1.0, geom), x, u, 0.2)

        x0 = np.array([0.0, 0.0, 0.0])
        warm = reference_warm_start(
            OcpProblem(horizon=5, n_x=3, n_u=1, dynamics=dyn,
                       stage_residual=lambda k, x, u, p: np.zeros(1),
                       stage_weight=np.diag([1.0]),
                       terminal_residual=lambda x, p: np.zeros(1),
                       terminal_weight=np.diag([1.0])), x0)
        refs = warm.states.copy()
        problem = OcpProblem(
            horizon=5, n_x=3, n_u=1, dynamics=dyn,
            stage_residual=lambda k, x, u, p: np.concatenate(
                [x - refs[k], u]),
            stage_weight=np.diag([1.0, 1.0, 0.0, 10.0]),
            terminal_residual=lambda x, p: x - refs[-1],
            terminal_weight=np.diag([10.0, 10.0, 0.0]),
            u_lower=np.array([-0.5]), u_upper=np.array([0.5]))
        solver = RtiSolver(problem)
        prepared = solver.prepare(warm)
        assert np.max(np.abs(prepared.gradient0)) < 1e-12
        sol = solver.feedback(x0)
        assert sol.states == pytest.approx(warm.states, abs=1e-12)
        assert sol.inputs == pytest.approx(warm.inputs, abs=1e-12)

    def test_scalar_problem_hand_computed(self):
        # warm start X=[0.5, 0.45], U=[0]; by hand:
        #   H = 1*1 + 0.5*3*0.5 = 1.75, g = 0.5*3*(0.45-2) = -2.325,
        #   du = 2.325/1.75 = 93/70
        problem = scalar_problem()
        warm = reference_warm_start(problem, np.array([0.5]))
        solver = RtiSolver(problem)
        prepared = solver.prepare(warm)
        assert prepared.hessian == pytest.approx(np.array([[1.75]]), abs=1e-6)
        assert prepared.gradient0 == pytest.approx(np.array([-2.325]), abs=1e-6)
        sol = solver.feedback(np.array([0.5]))
        assert sol.inputs[0, 0] == pytest.approx(93.0 / 70.0, rel=1e-6)
        assert sol.states[1, 0] == pytest.approx(0.45 + 0.5 * 93.0 / 70.0,
                                                 rel=1e-6)

    def test_nonfinite_dynamics_reports_node(self):
        problem = scalar_problem()
        problem.dynamics = lambda x, u, p: np.array([math.nan])
        solver = RtiSolver(problem)
        warm = OcpSolution(np.zeros((2, 1)), np.zeros((1, 1)), np.zeros(0))
        with pytest.raises(SolverError) as err:
            solver.prepare(warm)
        assert err.value.node == 0


class TestFeedback:
    def test_clamped_minimum(self):
        # min (u-3)^2 subject to u in [-1, 1]
        problem = OcpProblem(
            horizon=1, n_x=1, n_u=1,
            dynamics=lambda x, u, p: x,
            stage_residual=lambda k, x, u, p: np.array([u[0] - 3.0]),
            stage_weight=np.diag([1.0]),
            terminal_residual=lambda x, p: np.array([0.0]),
            terminal_weight=np.diag([1.0]),
            u_lower=np.array([-1.0]), u_upper=np.array([1.0]))
        solver = RtiSolver(problem)
        sol = solver.solve(reference_warm_start(problem, np.zeros(1)),
                           np.zeros(1))
        assert sol.inputs[0, 0] == pytest.approx(1.0)

    def test_unconstrained_equals_normal_equations(self):
        problem, *_ = linear_mimo_problem()
        warm = reference_warm_start(problem, np.array([0.3, -0.2]))
        solver = RtiSolver(problem)
        prepared = solver.prepare(warm)
        sol = solver.feedback(np.array([0.3, -0.2]))
        du = np.linalg.solve(prepared.hessian, -prepared.gradient0)
        assert sol.inputs.ravel() == pytest.approx(du, abs=1e-9)

    def test_feedback_requires_prepare(self):
        solver = RtiSolver(scalar_problem())
        with pytest.raises(SolverError):
            solver.feedback(np.zeros(1))

    def test_estimate_injection_moves_initial_node(self):
        problem = scalar_problem()
        solver = RtiSolver(problem)
        warm = reference_warm_start(problem, np.array([0.5]))
        solver.prepare(warm)
        sol = solver.feedback(np.array([0.7]))
        assert sol.states[0, 0] == pytest.approx(0.7)

    def test_qp_certificate_on_returned_solutions(self):
        problem, *_ = linear_mimo_problem(n=6)
        problem.u_lower = np.array([-0.4])
        problem.u_upper = np.array([0.4])
        solver = RtiSolver(problem)
        sol = solver.solve(reference_warm_start(problem, np.zeros(2)),
                           np.zeros(2))
        assert sol.qp_residual <= 1e-10


def tractor_tracking_problem(geom, slip, v, refs, horizon, dt=0.2,
                             input_bound=0.6):
    def dyn(x, u, p):
        return rk4_step(
            lambda s, uu: tractor_subsystem_dynamics(s, float(uu[0]), slip, v,
                                                     geom), x, u, dt)

    return OcpProblem(
        horizon=horizon, n_x=3, n_u=1, dynamics=dyn,
        stage_residual=lambda k, x, u, p: np.array(
            [x[0] - refs[k, 0], x[1] - refs[k, 1], x[2] - refs[k, 2], u[0]]),
        stage_weight=np.diag([1.0, 1.0, 0.0, 10.0]),
        terminal_residual=lambda x, p: x - refs[-1],
        terminal_weight=np.diag([10.0, 10.0, 0.0]),
        u_lower=np.array([-input_bound]), u_upper=np.array([input_bound]))


def circle_refs(horizon, radius=10.0, v=1.0, dt=0.2, phase=0.0):
    out = np.zeros((horizon + 1, 3))
    for k in range(horizon + 1):
        ang = phase + v * dt * k / radius
        out[k] = [radius * math.sin(ang), radius * (1 - math.cos(ang)), 0.0]
    return out


class TestRtiIteration:
    def test_frozen_problem_converges_to_kkt_point(self, geom):
        slip = SlipParams(0.9, 0.9, 0.9)
        refs = circle_refs(10)
        problem = tractor_tracking_problem(geom, slip, 1.0, refs, 10)
        solver = RtiSolver(problem)
        x0 = np.array([0.3, -0.4, 0.2])
        sol = solver.solve(reference_warm_start(problem, x0), x0)
        for iteration in range(20):
            sol = solver.solve(sol, x0)
            if sol.kkt_residual <= 1e-8:
                break
        assert sol.kkt_residual <= 1e-8
        assert iteration < 20

    def test_gradient_matches_finite_differences(self, geom):
        # condensed gradient vs central differences of the nonlinear objective
        slip = SlipParams(0.9, 0.9, 0.9)
        refs = circle_refs(6)
        problem = tractor_tracking_problem(geom, slip, 1.0, refs, 6,
                                           input_bound=10.0)
        solver = RtiSolver(problem)
        x0 = np.array([0.2, -0.1, 0.1])
        inputs = np.linspace(-0.2, 0.3, 6).reshape(6, 1)
        warm = reference_warm_start(problem, x0, inputs=inputs)
        prepared = solver.prepare(warm)

        def objective_of(u_flat):
            U = u_flat.reshape(6, 1)
            X = np.zeros((7, 3))
            X[0] = x0
            for k in range(6):
                X[k + 1] = problem.dynamics(X[k], U[k], np.zeros(0))
            return solver.objective(X, U, np.zeros(0))

        u0 = inputs.ravel()
        fd = np.zeros(6)
        h = 1e-6
        for i in range(6):
            up, um = u0.copy(), u0.copy()
            up[i] += h
            um[i] -= h
            fd[i] = (objective_of(up) - objective_of(um)) / (2 * h)
        # objective is sum r'Wr, so its gradient is 2 J'Wr
        assert prepared.gradient0 == pytest.approx(fd / 2.0, rel=1e-4)

    def test_one_iteration_contract(self, geom):
        slip = SlipParams(0.9, 0.9, 0.9)
        refs = circle_refs(5)
        problem = tractor_tracking_problem(geom, slip, 1.0, refs, 5)
        solver = RtiSolver(problem)
        x0 = np.zeros(3)
        solver.prepare(reference_warm_start(problem, x0))
        solver.feedback(x0)
        assert solver.prepare_count == 1
        assert solver.linearize_count == 1
        assert solver.qp_count == 1
        assert solver.feedback_count == 1

    def test_determinism(self, geom):
        slip = SlipParams(0.9, 0.9, 0.9)
        refs = circle_refs(8)
        x0 = np.array([0.1, -0.2, 0.05])

        def run():
            problem = tractor_tracking_problem(geom, slip, 1.0, refs, 8)
            solver = RtiSolver(problem)
            return solver.solve(reference_warm_start(problem, x0), x0)

        a, b = run(), run()
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.inputs, b.inputs)

    def test_timings_recorded(self, geom):
        slip = SlipParams(0.9, 0.9, 0.9)
        refs = circle_refs(5)
        problem = tractor_tracking_problem(geom, slip, 1.0, refs, 5)
        solver = RtiSolver(problem)
        sol = solver.solve(reference_warm_start(problem, np.zeros(3)),
                           np.zeros(3))
        assert sol.preparation_time > 0.0
        assert sol.feedback_time > 0.0


class TestShift:
    def test_constant_trajectory_shift_is_identity(self):
        sol = OcpSolution(np.ones((4, 2)), np.ones((3, 1)), np.zeros(0))
        shifted = shift_warm_start(sol)
        assert np.array_equal(shifted.states, sol.states)
        assert np.array_equal(shifted.inputs, sol.inputs)

    def test_shift_duplicates_terminal(self):
        states = np.array([[1.0], [2.0], [3.0]])
        sol = OcpSolution(states, np.array([[0.1], [0.2]]), np.zeros(0))
        shifted = shift_warm_start(sol)
        assert shifted.states.ravel() == pytest.approx([2.0, 3.0, 3.0])
        assert shifted.inputs.ravel() == pytest.approx([0.2, 0.2])

    def test_shifting_beats_cold_start_closed_loop(self, geom):
        # paired comparison: at every state of one closed loop, take one RTI
        # step from the shifted warm start and one from a cold zero-steering
        # forward simulation; compare the true rollout cost of the returned
        # input sequences (the expanded trajectory would flatter large steps)
        slip = SlipParams(0.9, 0.9, 0.9)
        dt, horizon, v, radius = 0.2, 10, 1.0, 5.0
        ground = slip.mu * v
        refs = circle_refs(horizon, radius, ground, dt)
        uref = [0.0]

        def dyn(x, u, p):
            return rk4_step(
                lambda s, uu: tractor_subsystem_dynamics(s, float(uu[0]), slip,
                                                         v, geom), x, u, dt)

        problem = OcpProblem(
            horizon=horizon, n_x=3, n_u=1, dynamics=dyn,
            stage_residual=lambda k, x, u, p: np.array(
                [x[0] - refs[k, 0], x[1] - refs[k, 1], x[2] - refs[k, 2],
                 u[0] - uref[0]]),
            stage_weight=np.diag([1.0, 1.0, 0.0, 10.0]),
            terminal_residual=lambda x, p: x - refs[-1],
            terminal_weight=np.diag([10.0, 10.0, 0.0]),
            u_lower=np.array([-0.6]), u_upper=np.array([0.6]))
        solver_shift = RtiSolver(problem)
        solver_cold = RtiSolver(problem)

        def rollout_cost(solver, x0, inputs):
            X = np.zeros((horizon + 1, 3))
            X[0] = x0
            for k in range(horizon):
                X[k + 1] = dyn(X[k], inputs[k], np.zeros(0))
            return solver.objective(X, inputs, np.zeros(0))

        x = np.array([0.0, -0.5, 0.3])
        sol = None
        shift_costs, cold_costs = [], []
        for step in range(100):
            refs[:, :] = circle_refs(horizon, radius, ground, dt,
                                     phase=ground * dt * step / radius)
            if sol is None:
                warm = reference_warm_start(
                    problem, x, inputs=np.full((horizon, 1), uref[0]))
            else:
                warm = shift_warm_start(sol)
            solver_shift.prepare(warm)
            sol = solver_shift.feedback(x)
            shift_costs.append(rollout_cost(solver_shift, x, sol.inputs))

            solver_cold.prepare(reference_warm_start(problem, x))
            cold = solver_cold.feedback(x)
            cold_costs.append(rollout_cost(solver_cold, x, cold.inputs))

            x = dyn(x, sol.inputs[0], np.zeros(0))
            uref[0] = float(sol.inputs[0, 0])

        assert np.median(shift_costs) <= np.median(cold_costs)
