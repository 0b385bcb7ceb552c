"""Closed-loop simulation: true plant, sensing, estimator, controllers.

The plant integrates the fully coupled kinematic model (substepped RK4)
with hitch-angle and speed dynamics, optional first-order steering lag, and
hard input saturation. Each sampling period runs sense, estimate, reference
generation, control, tube correction, and plant step, and records one
RunLog row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .denmpc import (CentralizedNmpc, TractorNmpc, TrailerNmpc,
                     propagate_tractor_nominal, propagate_trailer_nominal,
                     tube_correction)
from .nmhe import MeasurementSample, MovingHorizonEstimator
from .rti import SolverError
from .trajectory import (PathCursor, PathSpec, build_circle, build_eight_shape,
                         build_straight, lookahead_reference)
from .vehicle import (DELTA_I_MAX, DELTA_T_MAX, SlipParams, VehicleGeometry,
                      VehicleState, _full_rates, rk4_step)

MODES = ("denmpc", "denmpc-tube", "cenmpc")


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one closed-loop run."""

    # path
    path_kind: str = "eights"  # eights | circle | straight
    radii: tuple = (10.0, 8.0, 6.67)
    straight_length: float = 20.0
    spacing: float = 0.1
    start_offset_m: float = 0.0
    # run
    duration_s: float | None = None  # None resolves to one course traversal
    dt: float = 0.2
    seed: int = 1
    mode: str = "denmpc-tube"
    # plant
    slip_true: float = 0.9
    slip_drop_value: float | None = None
    slip_drop_time_s: float | None = None
    plant_model: str = "full"  # full | matched
    steering_lag_s: float = 0.15
    speed_lag_s: float = 0.5
    v_ref: float = 1.0
    v_initial: float | None = None
    # noise
    noise_enabled: bool = True
    sigma_position: float = 0.03
    sigma_beta: float = 0.0175
    sigma_speed: float = 0.1
    sigma_steering: float = 0.0175
    steering_quantum_deg: float = 1.0
    # controller
    nmpc_horizon: int = 15
    lookahead_m: float = 1.6
    lookahead_per_mps: float | None = None  # overrides lookahead_m when set
    # estimator
    nmhe_horizon: int = 20
    estimator_enabled: bool = True
    initial_slip_guess: float = 0.7
    slip_process_std: float = 0.005

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.path_kind not in ("eights", "circle", "straight"):
            raise ValueError("path_kind must be eights, circle, or straight")
        if self.plant_model not in ("full", "matched"):
            raise ValueError("plant_model must be full or matched")
        for name in ("sigma_position", "sigma_beta", "sigma_speed",
                     "sigma_steering"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.slip_true <= 1.0:
            raise ValueError("slip_true must be in (0, 1]")

    @property
    def tube_enabled(self) -> bool:
        return self.mode == "denmpc-tube"

    def lookahead(self) -> float:
        if self.lookahead_per_mps is not None:
            return self.lookahead_per_mps * self.v_ref
        return self.lookahead_m

    def slip_at(self, t: float) -> SlipParams:
        value = self.slip_true
        if (self.slip_drop_value is not None and self.slip_drop_time_s is not None
                and t >= self.slip_drop_time_s):
            value = self.slip_drop_value
        return SlipParams(value, value, value)

    def as_flat_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(f"{v:g}" for v in value)
            out[f.name] = value
        return out


def build_path(config: ScenarioConfig) -> PathSpec:
    if config.path_kind == "eights":
        return build_eight_shape(config.radii, config.straight_length,
                                 config.spacing)
    if config.path_kind == "circle":
        return build_circle(config.radii[0], config.spacing)
    return build_straight(config.straight_length, config.spacing)


class Plant:
    """Ground-truth integrator over the coupled model plus actuator states.

    State layout: x_t, y_t, theta, x_i, y_i, psi, beta, v, and the two
    lagged steering actuator angles. Steering passes through the optional
    first-order lag and then hard saturation before entering the kinematics.
    """

    def __init__(self, geom: VehicleGeometry, initial: VehicleState,
                 coupling: bool = True, beta_dynamics: bool = True,
                 steering_lag_s: float = 0.15, speed_lag_s: float = 0.5):
        self.geom = geom
        self.coupling = coupling
        self.beta_dynamics = beta_dynamics
        self.steering_lag = steering_lag_s
        self.speed_lag = speed_lag_s
        self.z = np.concatenate([initial.as_array(), [0.0, 0.0]])

    def state(self) -> VehicleState:
        return VehicleState.from_array(self.z[:8])

    def actual_steering(self) -> tuple[float, float]:
        return (min(max(self.z[8], -DELTA_T_MAX), DELTA_T_MAX),
                min(max(self.z[9], -DELTA_I_MAX), DELTA_I_MAX))

    def _rates(self, z: np.ndarray, cmd) -> np.ndarray:
        delta_cmd, v_cmd, slip = cmd
        g = self.geom
        d_t = min(max(z[8], -DELTA_T_MAX), DELTA_T_MAX)
        d_i = min(max(z[9], -DELTA_I_MAX), DELTA_I_MAX)
        r = _full_rates(z[2], z[5], z[6], z[7], d_t, d_i,
                        slip.mu, slip.kappa, slip.eta,
                        g.tractor_wheelbase, g.trailer_length, g.hitch_offset)
        psi_dot = r[5]
        if not self.coupling:
            psi_dot = slip.mu * z[7] / g.trailer_length \
                * math.sin(slip.eta * d_i + z[6])
        beta_dot = (r[2] - psi_dot) if self.beta_dynamics else 0.0
        v_dot = (v_cmd - z[7]) / self.speed_lag if self.speed_lag > 0.0 else 0.0
        if self.steering_lag > 0.0:
            da_t = (delta_cmd[0] - z[8]) / self.steering_lag
            da_i = (delta_cmd[1] - z[9]) / self.steering_lag
        else:
            da_t = da_i = 0.0
        return np.array([r[0], r[1], r[2], r[3], r[4], psi_dot,
                         beta_dot, v_dot, da_t, da_i])

    def step(self, delta_cmd, v_cmd: float, slip: SlipParams, dt: float,
             substeps: int = 10) -> None:
        if self.steering_lag <= 0.0:
            self.z[8] = delta_cmd[0]
            self.z[9] = delta_cmd[1]
        if self.speed_lag <= 0.0:
            self.z[7] = v_cmd
        h = dt / substeps
        cmd = (np.asarray(delta_cmd, dtype=float), float(v_cmd), slip)
        for _ in range(substeps):
            self.z = rk4_step(self._rates, self.z, cmd, h)
        if not np.isfinite(self.z).all():
            raise SimulationAbort("plant state became non-finite")


class SimulationAbort(RuntimeError):
    pass


def sense(plant: Plant, config: ScenarioConfig,
          rng: np.random.Generator, t: float) -> MeasurementSample:
    """Noisy synchronous measurement of the plant; steering quantized."""
    z = plant.z
    noise = rng.standard_normal(8)
    if not config.noise_enabled:
        noise = np.zeros(8)
    sp = config.sigma_position
    d_t, d_i = plant.actual_steering()
    m_dt = d_t + config.sigma_steering * noise[6]
    m_di = d_i + config.sigma_steering * noise[7]
    quantum = math.radians(config.steering_quantum_deg)
    if quantum > 0.0:
        m_dt = round(m_dt / quantum) * quantum
        m_di = round(m_di / quantum) * quantum
    return MeasurementSample(
        t=t,
        x_t=z[0] + sp * noise[0], y_t=z[1] + sp * noise[1],
        x_i=z[3] + sp * noise[2], y_i=z[4] + sp * noise[3],
        beta=z[6] + config.sigma_beta * noise[4],
        v=z[7] + config.sigma_speed * noise[5],
        delta_t=m_dt, delta_i=m_di)


class _PerfectEstimator:
    """Direct state feedback used when the estimator is disabled."""

    def __init__(self):
        self.arrival_resets = 0

    def update_from_truth(self, state: VehicleState, slip: SlipParams):
        from .nmhe import EstimatorOutput
        return EstimatorOutput(state, slip)


RUN_COLUMNS = [
    "t",
    "true_x_t", "true_y_t", "true_theta", "true_x_i", "true_y_i", "true_psi",
    "true_beta", "true_v",
    "meas_x_t", "meas_y_t", "meas_x_i", "meas_y_i", "meas_beta", "meas_v",
    "meas_delta_t", "meas_delta_i",
    "est_x_t", "est_y_t", "est_theta", "est_x_i", "est_y_i", "est_psi",
    "est_beta", "est_v", "est_mu", "est_kappa", "est_eta",
    "slip_true",
    "nom_x_t", "nom_y_t", "nom_theta", "nom_x_i", "nom_y_i", "nom_psi",
    "delta_t_nom", "delta_i_nom", "delta_t_applied", "delta_i_applied",
    "tube_corr_t", "tube_corr_i",
    "err_tractor", "err_trailer", "segment",
]

TIMING_COLUMNS = ["t", "nmhe_ms", "tractor_prep_ms", "tractor_fb_ms",
                  "trailer_prep_ms", "trailer_fb_ms", "cen_prep_ms", "cen_fb_ms"]


class RunLog:
    """Per-step closed-loop record plus the scenario it came from."""

    def __init__(self, config: ScenarioConfig | None = None,
                 path: PathSpec | None = None):
        self.config = config
        self.path = path
        self.rows: dict[str, list] = {c: [] for c in RUN_COLUMNS}
        self.timing_rows: dict[str, list] = {c: [] for c in TIMING_COLUMNS}
        self.aborted: str | None = None

    def append(self, **values) -> None:
        for c in RUN_COLUMNS:
            self.rows[c].append(values[c])

    def append_timing(self, **values) -> None:
        for c in TIMING_COLUMNS:
            self.timing_rows[c].append(values[c])

    def __len__(self) -> int:
        return len(self.rows["t"])

    def column(self, name: str) -> np.ndarray:
        values = self.rows[name]
        if name == "segment":
            return np.asarray(values)
        return np.asarray(values, dtype=float)

    def timing(self, name: str) -> np.ndarray:
        return np.asarray(self.timing_rows[name], dtype=float)

    def positions(self, vehicle: str) -> np.ndarray:
        prefix = "true_x_t" if vehicle == "tractor" else "true_x_i"
        other = "true_y_t" if vehicle == "tractor" else "true_y_i"
        return np.column_stack([self.column(prefix), self.column(other)])

    # -- serialization -----------------------------------------------------

    def write_dir(self, outdir) -> None:
        import os
        os.makedirs(outdir, exist_ok=True)
        self._write_csv(os.path.join(outdir, "run.csv"), RUN_COLUMNS, self.rows)
        self._write_csv(os.path.join(outdir, "timings.csv"), TIMING_COLUMNS,
                        self.timing_rows)
        self._write_estimator_csv(os.path.join(outdir, "estimator.csv"))
        self._write_controllers_csv(os.path.join(outdir, "controllers.csv"))
        if self.path is not None:
            self.path.to_csv(os.path.join(outdir, "path.csv"))
        if self.config is not None:
            write_manifest(self.config, os.path.join(outdir, "manifest.txt"),
                           aborted=self.aborted)

    @staticmethod
    def _format(value) -> str:
        if isinstance(value, str):
            return value
        return repr(float(value))

    def _write_csv(self, file_path, columns, data) -> None:
        with open(file_path, "w") as fh:
            fh.write(",".join(columns) + "\n")
            for i in range(len(data[columns[0]])):
                fh.write(",".join(self._format(data[c][i]) for c in columns) + "\n")

    def _write_estimator_csv(self, file_path) -> None:
        cols = ["t", "x_t", "y_t", "theta", "x_i", "y_i", "psi", "beta", "v",
                "mu", "kappa", "eta", "solve_ms"]
        src = ["t", "est_x_t", "est_y_t", "est_theta", "est_x_i", "est_y_i",
               "est_psi", "est_beta", "est_v", "est_mu", "est_kappa", "est_eta"]
        with open(file_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            nmhe_ms = self.timing_rows["nmhe_ms"]
            for i in range(len(self)):
                vals = [self._format(self.rows[c][i]) for c in src]
                vals.append(self._format(nmhe_ms[i]))
                fh.write(",".join(vals) + "\n")

    def _write_controllers_csv(self, file_path) -> None:
        cols = ["t", "delta_t_nom", "delta_t_applied", "delta_i_nom",
                "delta_i_applied", "tube_corr_t", "tube_corr_i",
                "prep_ms", "fb_ms"]
        with open(file_path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self)):
                prep = (self.timing_rows["tractor_prep_ms"][i]
                        + self.timing_rows["trailer_prep_ms"][i]
                        + self.timing_rows["cen_prep_ms"][i])
                fb = (self.timing_rows["tractor_fb_ms"][i]
                      + self.timing_rows["trailer_fb_ms"][i]
                      + self.timing_rows["cen_fb_ms"][i])
                vals = [self._format(self.rows[c][i]) for c in cols[:7]]
                vals += [self._format(prep), self._format(fb)]
                fh.write(",".join(vals) + "\n")

    @classmethod
    def from_dir(cls, rundir) -> "RunLog":
        import os
        log = cls()
        run_csv = os.path.join(rundir, "run.csv")
        with open(run_csv) as fh:
            header = fh.readline().strip().split(",")
            if header != RUN_COLUMNS:
                raise ValueError(f"unexpected run.csv columns in {run_csv}")
            for line in fh:
                parts = line.rstrip("\n").split(",")
                for c, raw in zip(RUN_COLUMNS, parts):
                    log.rows[c].append(raw if c == "segment" else float(raw))
        timing_csv = os.path.join(rundir, "timings.csv")
        if os.path.exists(timing_csv):
            with open(timing_csv) as fh:
                fh.readline()
                for line in fh:
                    parts = line.rstrip("\n").split(",")
                    for c, raw in zip(TIMING_COLUMNS, parts):
                        log.timing_rows[c].append(float(raw))
        path_csv = os.path.join(rundir, "path.csv")
        if os.path.exists(path_csv):
            log.path = PathSpec.from_csv(path_csv)
        return log


def write_manifest(config: ScenarioConfig, file_path, aborted=None) -> None:
    with open(file_path, "w") as fh:
        fh.write(f"fieldtrack_version = {__version__}\n")
        for key, value in config.as_flat_dict().items():
            fh.write(f"{key} = {value}\n")
        if aborted:
            fh.write(f"aborted = {aborted}\n")


def initial_vehicle_state(path: PathSpec, config: ScenarioConfig,
                          geom: VehicleGeometry) -> VehicleState:
    from .trajectory import index_at_arclength
    idx = index_at_arclength(path, config.start_offset_m)
    heading = path.heading(idx)
    x0, y0 = float(path.x[idx]), float(path.y[idx])
    back = geom.hitch_offset + geom.trailer_length
    v0 = config.v_ref if config.v_initial is None else config.v_initial
    return VehicleState(
        x_t=x0, y_t=y0, theta=heading,
        x_i=x0 - back * math.cos(heading), y_i=y0 - back * math.sin(heading),
        psi=heading, beta=0.0, v=v0)


def run_closed_loop(config: ScenarioConfig) -> RunLog:
    """Run one scenario to completion and return its RunLog."""
    config.validate()
    geom = VehicleGeometry()
    path = build_path(config)
    log = RunLog(config, path)

    duration = config.duration_s
    if duration is None:
        duration = path.total_length / (config.slip_true * config.v_ref)
    n_steps = int(round(duration / config.dt))

    init = initial_vehicle_state(path, config, geom)
    matched = config.plant_model == "matched"
    plant = Plant(geom, init,
                  coupling=not matched,
                  beta_dynamics=not matched,
                  steering_lag_s=0.0 if matched else config.steering_lag_s,
                  speed_lag_s=config.speed_lag_s)
    rng = np.random.Generator(np.random.PCG64(config.seed))

    estimator: MovingHorizonEstimator | _PerfectEstimator
    if config.estimator_enabled:
        estimator = MovingHorizonEstimator(
            geom, init, horizon=config.nmhe_horizon, dt=config.dt,
            initial_slip=config.initial_slip_guess,
            param_process_std=config.slip_process_std)
    else:
        estimator = _PerfectEstimator()

    centralized = config.mode == "cenmpc"
    if centralized:
        cen = CentralizedNmpc(geom, horizon=config.nmpc_horizon, dt=config.dt)
    else:
        tractor = TractorNmpc(geom, horizon=config.nmpc_horizon, dt=config.dt)
        trailer = TrailerNmpc(geom, horizon=config.nmpc_horizon, dt=config.dt)

    ref_cursor_t = PathCursor(path)
    ref_cursor_i = PathCursor(path)
    log_cursor_t = PathCursor(path)
    log_cursor_i = PathCursor(path)

    prev_nominal_t: np.ndarray | None = None
    prev_nominal_i: np.ndarray | None = None
    lookahead = config.lookahead()

    for k in range(n_steps):
        t = k * config.dt
        slip_true = config.slip_at(t)
        truth = plant.state()

        sample = sense(plant, config, rng, t)
        try:
            if config.estimator_enabled:
                est = estimator.update(sample)
            else:
                est = estimator.update_from_truth(truth, slip_true)
        except SolverError as exc:
            log.aborted = f"estimator: {exc}"
            break

        div = math.hypot(est.state.x_t - truth.x_t, est.state.y_t - truth.y_t)
        if div > 10.0:
            log.aborted = f"estimator divergence: {div:.2f} m at t={t:.1f}"
            break

        window = lookahead_reference(
            path, est.state, lookahead, config.nmpc_horizon,
            config.v_ref, config.dt,
            tractor_cursor=ref_cursor_t, trailer_cursor=ref_cursor_i,
            delta_t_ref=sample.delta_t, delta_i_ref=sample.delta_i)

        est3_t = est.state.tractor3()
        est3_i = est.state.trailer3()
        try:
            if centralized:
                est6 = np.concatenate([est3_t, est3_i])
                res = cen.solve(est6, window.tractor, window.trailer, est.slip,
                                est.state.beta, est.state.v,
                                (window.delta_t_ref, window.delta_i_ref))
                nom_t, nom_i = res.delta_t, res.delta_i
                prep_t = res.solution.preparation_time * 1e3
                fb_t = res.solution.feedback_time * 1e3
                timing = dict(cen_prep_ms=prep_t, cen_fb_ms=fb_t,
                              tractor_prep_ms=0.0, tractor_fb_ms=0.0,
                              trailer_prep_ms=0.0, trailer_fb_ms=0.0)
            else:
                res_t = tractor.solve(est3_t, window.tractor, est.slip,
                                      est.state.v, window.delta_t_ref)
                res_i = trailer.solve(est3_i, window.trailer, est.slip,
                                      est.state.beta, est.state.v,
                                      window.delta_i_ref)
                nom_t, nom_i = res_t.delta, res_i.delta
                timing = dict(
                    tractor_prep_ms=res_t.solution.preparation_time * 1e3,
                    tractor_fb_ms=res_t.solution.feedback_time * 1e3,
                    trailer_prep_ms=res_i.solution.preparation_time * 1e3,
                    trailer_fb_ms=res_i.solution.feedback_time * 1e3,
                    cen_prep_ms=0.0, cen_fb_ms=0.0)
        except SolverError as exc:
            log.aborted = f"controller: {exc}"
            break

        corr_t = corr_i = 0.0
        applied_t, applied_i = nom_t, nom_i
        tube_ref_t = prev_nominal_t if prev_nominal_t is not None else est3_t
        tube_ref_i = prev_nominal_i if prev_nominal_i is not None else est3_i
        if config.tube_enabled and not centralized:
            applied_t, corr_t = tube_correction(
                tube_ref_t, est3_t, nom_t, (-DELTA_T_MAX, DELTA_T_MAX))
            applied_i, corr_i = tube_correction(
                tube_ref_i, est3_i, nom_i, (-DELTA_I_MAX, DELTA_I_MAX))
        applied_t = min(max(applied_t, -DELTA_T_MAX), DELTA_T_MAX)
        applied_i = min(max(applied_i, -DELTA_I_MAX), DELTA_I_MAX)
        assert abs(applied_t) <= DELTA_T_MAX + 1e-12
        assert abs(applied_i) <= DELTA_I_MAX + 1e-12

        prev_nominal_t = propagate_tractor_nominal(
            est3_t, nom_t, est.slip, est.state.v, geom, config.dt)
        prev_nominal_i = propagate_trailer_nominal(
            est3_i, nom_i, est.slip, est.state.beta, est.state.v, geom,
            config.dt)

        idx_t, err_t = log_cursor_t.closest((truth.x_t, truth.y_t))
        _, err_i = log_cursor_i.closest((truth.x_i, truth.y_i))
        segment = segment_class(str(path.kind[idx_t]), float(path.curvature[idx_t]))

        log.append(
            t=t,
            true_x_t=truth.x_t, true_y_t=truth.y_t, true_theta=truth.theta,
            true_x_i=truth.x_i, true_y_i=truth.y_i, true_psi=truth.psi,
            true_beta=truth.beta, true_v=truth.v,
            meas_x_t=sample.x_t, meas_y_t=sample.y_t,
            meas_x_i=sample.x_i, meas_y_i=sample.y_i,
            meas_beta=sample.beta, meas_v=sample.v,
            meas_delta_t=sample.delta_t, meas_delta_i=sample.delta_i,
            est_x_t=est.state.x_t, est_y_t=est.state.y_t,
            est_theta=est.state.theta, est_x_i=est.state.x_i,
            est_y_i=est.state.y_i, est_psi=est.state.psi,
            est_beta=est.state.beta, est_v=est.state.v,
            est_mu=est.slip.mu, est_kappa=est.slip.kappa, est_eta=est.slip.eta,
            slip_true=slip_true.mu,
            nom_x_t=tube_ref_t[0], nom_y_t=tube_ref_t[1], nom_theta=tube_ref_t[2],
            nom_x_i=tube_ref_i[0], nom_y_i=tube_ref_i[1], nom_psi=tube_ref_i[2],
            delta_t_nom=nom_t, delta_i_nom=nom_i,
            delta_t_applied=applied_t, delta_i_applied=applied_i,
            tube_corr_t=corr_t, tube_corr_i=corr_i,
            err_tractor=err_t, err_trailer=err_i, segment=segment)
        log.append_timing(t=t, nmhe_ms=est.solve_time * 1e3, **timing)

        try:
            plant.step(np.array([applied_t, applied_i]), config.v_ref,
                       slip_true, config.dt)
        except SimulationAbort as exc:
            log.aborted = str(exc)
            break

    return log


def segment_class(kind: str, curvature: float) -> str:
    """Segment class label: 'straight' or 'curve_<curvature>' to 3 decimals."""
    if kind == "straight" or curvature == 0.0:
        return "straight"
    return f"curve_{curvature:.3f}"
