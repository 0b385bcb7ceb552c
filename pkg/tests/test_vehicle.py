import math

import numpy as np
import pytest

from fieldtrack.vehicle import (DELTA_I_MAX, DELTA_T_MAX, ControlInput,
                                SlipParams, VehicleGeometry, VehicleState,
                                full_dynamics, interaction_term, rk4_step,
                                tractor_subsystem_dynamics,
                                trailer_subsystem_dynamics, wrap_angle)


def state(**kw):
    return VehicleState(**kw)


class TestTypes:
    def test_geometry_defaults(self, geom):
        assert geom.tractor_wheelbase == 1.4
        assert geom.trailer_length == 1.3
        assert geom.hitch_offset == 1.1
        assert geom.drawbar_length == 0.2

    @pytest.mark.parametrize("field", ["tractor_wheelbase", "trailer_length",
                                       "hitch_offset", "drawbar_length"])
    def test_geometry_rejects_nonpositive(self, field):
        with pytest.raises(ValueError):
            VehicleGeometry(**{field: 0.0})

    def test_slip_bounds(self):
        SlipParams(0.25, 0.5, 1.0)
        with pytest.raises(ValueError):
            SlipParams(mu=0.0)
        with pytest.raises(ValueError):
            SlipParams(eta=1.2)

    def test_control_bounds(self):
        ControlInput(DELTA_T_MAX, -DELTA_I_MAX)
        with pytest.raises(ValueError):
            ControlInput(delta_t=math.radians(31.0))
        with pytest.raises(ValueError):
            ControlInput(delta_i=math.radians(21.0))

    def test_state_speed_nonnegative(self):
        with pytest.raises(ValueError):
            VehicleState(v=-0.1)

    def test_state_array_round_trip(self):
        s = VehicleState(1, 2, 3, 4, 5, 6, 0.1, 1.5)
        assert VehicleState.from_array(s.as_array()) == s


class TestFullDynamics:
    def test_straight_line(self, geom, unit_slip):
        # zero steering, unit speed along +x
        d = full_dynamics(state(v=1.0), ControlInput(), unit_slip, geom)
        assert d == pytest.approx([1, 0, 0, 1, 0, 0])

    def test_tractor_yaw_rate_oracle(self, geom, unit_slip):
        # independent scalar evaluation: tan(30 deg) / 1.4
        expected = math.tan(math.radians(30.0)) / 1.4
        assert abs(expected - 0.4123930494211613) < 1e-15
        d = full_dynamics(state(v=1.0), ControlInput(delta_t=math.radians(30.0)),
                          unit_slip, geom)
        assert d[2] == pytest.approx(expected, rel=1e-12)

    def test_trailer_yaw_rate_oracle(self, geom, unit_slip):
        # independent scalar evaluation of the coupled trailer row at
        # delta_i = 0, beta = 0, delta_t = 30 deg
        expected = (1.0 / 1.3) * (math.sin(0.0)
                                  - (1.1 / 1.4) * math.tan(math.radians(30.0)))
        assert abs(expected - (-0.34894796489482877)) < 1e-15
        d = full_dynamics(state(v=1.0), ControlInput(delta_t=math.radians(30.0)),
                          unit_slip, geom)
        assert d[5] == pytest.approx(expected, rel=1e-12)

    def test_speed_and_slip_scale_positions(self, geom):
        d = full_dynamics(state(theta=0.3, psi=-0.2, v=2.0),
                          ControlInput(), SlipParams(0.5, 1, 1), geom)
        base = full_dynamics(state(theta=0.3, psi=-0.2, v=1.0),
                             ControlInput(), SlipParams(1, 1, 1), geom)
        assert d == pytest.approx(base)


class TestSubsystems:
    def test_tractor_matches_full_rows(self, geom, rng):
        for _ in range(20):
            th, ps, be = rng.uniform(-3, 3, 3)
            v = rng.uniform(0, 2)
            dt_, di_ = rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)
            slip = SlipParams(*rng.uniform(0.3, 1.0, 3))
            st = state(theta=th, psi=ps, beta=be, v=v)
            full = full_dynamics(st, ControlInput(dt_, di_), slip, geom)
            sub = tractor_subsystem_dynamics(np.array([0.0, 0.0, th]), dt_,
                                             slip, v, geom)
            assert sub == pytest.approx(full[:3], rel=1e-12)

    def test_tractor_axis_aligned(self, geom):
        sub = tractor_subsystem_dynamics(np.array([0, 0, math.pi / 2]), 0.0,
                                         SlipParams(0.9, 1, 1), 1.0, geom)
        assert sub == pytest.approx([0.0, 0.9, 0.0], abs=1e-12)

    def test_tractor_yaw_oracle(self, geom):
        # 0.5 * 2 * tan(0.8 * 10 deg) / 1.4
        expected = 0.5 * 2.0 * math.tan(0.8 * math.radians(10.0)) / 1.4
        assert abs(expected - 0.10038631050170818) < 1e-15
        sub = tractor_subsystem_dynamics(np.zeros(3), math.radians(10.0),
                                         SlipParams(0.5, 0.8, 1.0), 2.0, geom)
        assert sub[2] == pytest.approx(expected, rel=1e-12)

    def test_trailer_zero_argument(self, geom, unit_slip):
        sub = trailer_subsystem_dynamics(np.zeros(3), 0.0, 0.0, unit_slip,
                                         1.0, geom)
        assert sub[2] == 0.0

    def test_trailer_yaw_oracle(self, geom, unit_slip):
        expected = math.sin(math.radians(20.0)) / 1.3
        assert abs(expected - 0.26309241794282207) < 1e-15
        sub = trailer_subsystem_dynamics(np.zeros(3), math.radians(20.0), 0.0,
                                         unit_slip, 1.0, geom)
        assert sub[2] == pytest.approx(expected, rel=1e-12)


class TestInteraction:
    def test_zero_at_zero_tractor_steering(self, geom, unit_slip):
        g2 = interaction_term(state(v=1.0), ControlInput(0.0, 0.2), unit_slip,
                              geom)
        assert g2 == 0.0

    def test_equals_difference_of_oracles(self, geom, unit_slip):
        # full trailer row at delta_i=0 minus the decoupled row (zero there)
        st = state(v=1.0)
        u = ControlInput(delta_t=math.radians(30.0))
        full = full_dynamics(st, u, unit_slip, geom)[5]
        dec = trailer_subsystem_dynamics(st.trailer3(), 0.0, 0.0, unit_slip,
                                         1.0, geom)[2]
        g2 = interaction_term(st, u, unit_slip, geom)
        assert g2 == pytest.approx(full - dec, rel=1e-12)
        assert g2 == pytest.approx(-0.34894796489482877, rel=1e-12)

    def test_decomposition_identity(self, geom, rng):
        # full trailer yaw row == decoupled + interaction, machine precision
        for _ in range(50):
            st = state(theta=rng.uniform(-3, 3), psi=rng.uniform(-3, 3),
                       beta=rng.uniform(-0.6, 0.6), v=rng.uniform(0, 2))
            u = ControlInput(rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3))
            slip = SlipParams(*rng.uniform(0.3, 1.0, 3))
            full = full_dynamics(st, u, slip, geom)[5]
            dec = trailer_subsystem_dynamics(st.trailer3(), u.delta_i, st.beta,
                                             slip, st.v, geom)[2]
            g2 = interaction_term(st, u, slip, geom)
            assert full == pytest.approx(dec + g2, abs=1e-13, rel=1e-12)

    def test_sign_convention(self, geom, rng):
        for _ in range(30):
            st = state(beta=rng.uniform(-0.4, 0.4), v=rng.uniform(0.1, 2))
            u = ControlInput(rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3))
            slip = SlipParams(*rng.uniform(0.3, 1.0, 3))
            g2 = interaction_term(st, u, slip, geom)
            ref = math.tan(slip.kappa * u.delta_t) * math.cos(
                slip.eta * u.delta_i + st.beta)
            assert math.copysign(1, g2) == -math.copysign(1, ref) or g2 == 0.0


def _pose_dynamics(geom, slip, control):
    def f(x, _):
        st = VehicleState(x[0], x[1], x[2], x[3], x[4], x[5], 0.0, 1.0)
        return full_dynamics(st, control, slip, geom)
    return f


class TestRk4:
    def test_zero_dynamics_identity(self):
        x = np.array([1.0, 2.0, 3.0])
        out = rk4_step(lambda s, u: np.zeros(3), x, None, 0.2)
        assert out == pytest.approx(x)

    def test_constant_derivative(self):
        out = rk4_step(lambda s, u: np.array([1.0]), np.array([0.0]), None, 0.2)
        assert out == pytest.approx([0.2])

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            rk4_step(lambda s, u: s, np.zeros(1), None, 0.0)

    def test_order_four_convergence(self, geom, unit_slip):
        # constant 20 deg steering for 10 s; endpoint error vs dt/100 grid
        control = ControlInput(delta_t=math.radians(20.0))
        f = _pose_dynamics(geom, unit_slip, control)

        def integrate(dt, t_end=10.0):
            x = np.zeros(6)
            for _ in range(int(round(t_end / dt))):
                x = rk4_step(f, x, None, dt)
            return x

        ref = integrate(0.002)
        dts = [0.2, 0.1, 0.05, 0.025]
        errs = [np.linalg.norm(integrate(dt)[:2] - ref[:2]) for dt in dts]
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope == pytest.approx(4.0, abs=0.3)
        # halving dt shrinks the endpoint error roughly 16x
        assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.3)

    def test_rotational_equivariance(self, geom, unit_slip):
        control = ControlInput(delta_t=math.radians(15.0),
                               delta_i=math.radians(5.0))
        f = _pose_dynamics(geom, unit_slip, control)
        phi = 0.7
        rot = np.array([[math.cos(phi), -math.sin(phi)],
                        [math.sin(phi), math.cos(phi)]])

        x0 = np.array([1.0, -2.0, 0.3, -1.0, -3.0, 0.1])
        x0_rot = np.concatenate([rot @ x0[:2], [x0[2] + phi],
                                 rot @ x0[3:5], [x0[5] + phi]])
        x, xr = x0, x0_rot
        for _ in range(50):
            x = rk4_step(f, x, None, 0.1)
            xr = rk4_step(f, xr, None, 0.1)
        expected = np.concatenate([rot @ x[:2], [x[2] + phi],
                                   rot @ x[3:5], [x[5] + phi]])
        assert xr == pytest.approx(expected, abs=1e-10)

    def test_slip_speed_linearity(self, geom):
        # with zero steering, positions scale linearly in mu * v
        def endpoint(mu, v):
            f = _pose_dynamics(geom, SlipParams(mu, 1, 1), ControlInput())

            def g(x, u):
                st = VehicleState(x[0], x[1], x[2], x[3], x[4], x[5], 0.0, v)
                return full_dynamics(st, ControlInput(), SlipParams(mu, 1, 1),
                                     geom)
            x = np.array([0, 0, 0.4, 0, 0, 0.4])
            for _ in range(10):
                x = rk4_step(g, x, None, 0.2)
            return x

        a = endpoint(0.5, 1.0)
        b = endpoint(1.0, 1.0)
        assert a[:2] == pytest.approx(0.5 * b[:2], rel=1e-12)


def test_wrap_angle():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(math.pi + 0.1) == pytest.approx(-math.pi + 0.1)
    assert wrap_angle(-math.pi - 0.1) == pytest.approx(math.pi - 0.1)
    assert wrap_angle(5 * math.tau + 0.3) == pytest.approx(0.3)
