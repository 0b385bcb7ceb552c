import numpy as np
import pytest

from fieldtrack.qp import box_qp_kkt_residual, solve_box_qp


def projected_gradient_oracle(H, g, lower, upper, tol=1e-13, max_iter=200000):
    """Independent reference: projected gradient descent run to convergence."""
    step = 1.0 / np.max(np.linalg.eigvalsh(H))
    w = np.clip(np.zeros(g.size), lower, upper)
    for _ in range(max_iter):
        w_next = np.clip(w - step * (H @ w + g), lower, upper)
        if np.max(np.abs(w_next - w)) < tol:
            return w_next
        w = w_next
    return w


def random_spd(rng, n, scale=1.0):
    m = rng.normal(size=(n, n))
    return m @ m.T + (0.1 + scale) * np.eye(n)


class TestSimpleCases:
    def test_clamped_scalar(self):
        # min (u - 3)^2 on [-1, 1] -> u = 1
        res = solve_box_qp(np.array([[2.0]]), np.array([-6.0]),
                           np.array([-1.0]), np.array([1.0]))
        assert res.status == "optimal"
        assert res.w == pytest.approx([1.0])

    def test_unconstrained_equals_linear_solve(self, rng):
        n = 8
        H = random_spd(rng, n)
        g = rng.normal(size=n)
        res = solve_box_qp(H, g, np.full(n, -np.inf), np.full(n, np.inf))
        assert res.w == pytest.approx(np.linalg.solve(H, -g), abs=1e-10)
        assert res.kkt_residual <= 1e-10

    def test_interior_start_respected(self):
        H = np.eye(2)
        g = np.array([-10.0, 10.0])
        res = solve_box_qp(H, g, np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        assert res.w == pytest.approx([1.0, -1.0])

    def test_pinned_variables(self):
        H = np.eye(3)
        g = np.array([1.0, -1.0, 0.5])
        lower = np.array([0.0, -2.0, 0.3])
        upper = np.array([0.0, 2.0, 0.3])
        res = solve_box_qp(H, g, lower, upper)
        assert res.w[0] == 0.0
        assert res.w[2] == 0.3
        assert res.w[1] == pytest.approx(1.0)

    def test_infeasible_box_rejected(self):
        with pytest.raises(ValueError):
            solve_box_qp(np.eye(1), np.zeros(1), np.array([1.0]),
                         np.array([0.0]))


class TestAgainstOracle:
    def test_random_problems_match_projected_gradient(self):
        rng = np.random.default_rng(7)
        for trial in range(40):
            n = int(rng.integers(2, 21))
            H = random_spd(rng, n, scale=rng.uniform(0.1, 3.0))
            g = rng.normal(size=n) * rng.uniform(0.5, 5.0)
            lower = rng.uniform(-2.0, -0.1, size=n)
            upper = rng.uniform(0.1, 2.0, size=n)
            # mix in some unbounded components
            lower[rng.random(n) < 0.2] = -np.inf
            upper[rng.random(n) < 0.2] = np.inf
            res = solve_box_qp(H, g, lower, upper)
            assert res.status == "optimal", f"trial {trial}"
            oracle = projected_gradient_oracle(H, g, lower, upper)
            assert res.w == pytest.approx(oracle, abs=1e-8), f"trial {trial}"

    def test_kkt_certificate(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(2, 16))
            H = random_spd(rng, n)
            g = rng.normal(size=n)
            lower = np.full(n, -0.5)
            upper = np.full(n, 0.5)
            res = solve_box_qp(H, g, lower, upper)
            assert res.kkt_residual <= 1e-10
            assert box_qp_kkt_residual(H, g, lower, upper, res.w) <= 1e-10

    def test_determinism(self, rng):
        H = random_spd(rng, 12)
        g = rng.normal(size=12)
        lower = np.full(12, -0.3)
        upper = np.full(12, 0.3)
        a = solve_box_qp(H, g, lower, upper)
        b = solve_box_qp(H, g, lower, upper)
        assert np.array_equal(a.w, b.w)
        assert a.iterations == b.iterations
