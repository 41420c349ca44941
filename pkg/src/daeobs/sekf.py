"""Sensitivity-based extended Kalman filtering for index-1 DAE systems.

Truth paths are synthesized by Euler-Maruyama with the algebraic states
re-solved each step; the filter alternates DAE prediction with
measurement updates whose output matrix and state-transition matrix come
from the integrated directional sensitivities.  Each measurement
interval runs the sensitivity rank test and the gain rows of
non-observable states are zeroed (all-zero gain when nothing is
observable), after which the algebraic states are restored to
consistency.

The covariance lives over the differential states only and is
propagated discretely by the interval flow Jacobian; the algebraic
states receive no direct gain, being overwritten by the consistency
solve immediately after every update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DaeError
from .integrator import (
    DEFAULT_STEP,
    DirectionsMatrix,
    Trajectory,
    integrate_dae,
    integrate_sensitivity,
)
from .model import NEWTON_TOL, consistent_init
from .observability import (
    EPS_PIVOT,
    EPS_RANK,
    classify_from_sensitivities,
    default_directions,
)


@dataclass(frozen=True)
class NoiseSpec:
    """Process covariance (per unit time), measurement covariance, seed."""

    Q: np.ndarray
    R: np.ndarray
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, float)))
        if not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric")
        if not np.allclose(self.R, self.R.T):
            raise ValueError("R must be symmetric")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError as e:
            raise ValueError("R must be positive definite") from e
        object.__setattr__(self, "chol_Q", _psd_cholesky(self.Q))
        object.__setattr__(self, "chol_R", np.linalg.cholesky(self.R))


def _psd_cholesky(mat):
    """Cholesky-like factor of a PSD matrix (eigen fallback for rank
    deficiency)."""
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(mat)
        if np.min(vals) < -1e-12 * max(1.0, float(np.max(np.abs(vals)))):
            raise ValueError("Q must be positive semidefinite")
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


@dataclass
class MeasurementSeries:
    """Noisy output samples at strictly increasing times."""

    times: np.ndarray
    values: np.ndarray  # n_s x n_y

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.times.shape[0]:
            self.values = self.values.T
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("measurement times must be strictly increasing")

    def to_csv(self, fh, output_names, config_comment=None):
        if config_comment is not None:
            fh.write(f"# config: {config_comment}\n")
        fh.write("t," + ",".join(f"y_{n}" for n in output_names) + "\n")
        for t, row in zip(self.times, self.values):
            fh.write(",".join(f"{v:.17g}" for v in (t, *row)) + "\n")

    @classmethod
    def from_csv(cls, fh):
        times, values = [], []
        header_seen = False
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                header_seen = True
                continue
            parts = [float(p) for p in line.split(",")]
            times.append(parts[0])
            values.append(parts[1:])
        return cls(np.array(times), np.array(values))


@dataclass
class FilterStep:
    t: float
    x_prior: np.ndarray
    w_prior: np.ndarray
    x_post: np.ndarray
    w_post: np.ndarray
    C: np.ndarray  # n_y x n_x output matrix at t
    L: np.ndarray  # n_x x n_y gain
    P: np.ndarray  # posterior covariance
    innovation: np.ndarray
    nonobs_diff: tuple  # state names
    nonobs_alg: tuple


@dataclass
class FilterRun:
    model_name: str
    config: dict
    t0: float
    x0: np.ndarray
    w0: np.ndarray
    P0: np.ndarray
    steps: list = field(default_factory=list)

    def to_csv(self, fh, model, config_comment=None):
        if config_comment is not None:
            fh.write(f"# config: {config_comment}\n")
        n_x = len(self.x0)
        cols = (
            ["t"]
            + [f"xbar_{n}" for n in model.diff_states]
            + [f"wbar_{n}" for n in model.alg_states]
            + [f"innov_{n}" for n in model.outputs]
            + [f"P_{i}_{j}" for i in range(n_x) for j in range(n_x)]
            + ["nonobs_flags"]
        )
        fh.write(",".join(cols) + "\n")
        for s in self.steps:
            flags = "".join(
                "1" if n in s.nonobs_diff else "0" for n in model.diff_states
            ) + "".join(
                "1" if n in s.nonobs_alg else "0" for n in model.alg_states
            )
            vals = [s.t, *s.x_post, *s.w_post, *s.innovation, *s.P.ravel()]
            fh.write(",".join(f"{v:.17g}" for v in vals) + f",{flags}\n")

    def metadata(self):
        return dict(self.config, model=self.model_name)


# -- truth synthesis --------------------------------------------------------


def synthesize_truth(model, noise: NoiseSpec, t0, tf, dt_sim=DEFAULT_STEP,
                     meas_times=None, x0=None, w0=None,
                     newton_tol=NEWTON_TOL):
    """Euler-Maruyama path of the noisy DAE plus noisy measurements.

    x steps by f*dt + sqrt(dt)*chol(Q)*xi with the algebraic states
    re-solved each step; measurements are the outputs at ``meas_times``
    plus chol(R)*xi'.
    """
    if dt_sim <= 0:
        raise ValueError("dt_sim must be positive")
    rng = np.random.default_rng(noise.seed)
    x = np.array(model.x0 if x0 is None else x0, dtype=float)
    w = consistent_init(model, t0, tuple(x), w0, tol=newton_tol)
    n_x = model.n_x
    times = [t0]
    xs, ws = [tuple(x)], [w]
    t = t0
    sq = np.sqrt(dt_sim)
    while t < tf - 1e-12:
        dt = min(dt_sim, tf - t)
        u, v = model.input_values(t)
        fval = np.array(model.eval_block("f", t, tuple(x), w, u, v), float)
        xi = rng.standard_normal(n_x)
        x = x + fval * dt + (sq if dt == dt_sim else np.sqrt(dt)) \
            * (noise.chol_Q @ xi)
        t = t + dt
        w = consistent_init(model, t, tuple(x), w, tol=newton_tol)
        times.append(t)
        xs.append(tuple(x))
        ws.append(w)
    traj = Trajectory(
        times=np.array(times),
        x_samples=np.array(xs).reshape(len(times), n_x),
        w_samples=np.array(ws).reshape(len(times), model.n_w),
        g_residuals=np.zeros(len(times)),
    )
    if meas_times is None:
        meas_times = traj.times[1:]
    values = []
    for tm in meas_times:
        idx = traj.sample_index(tm, tol=dt_sim / 2)
        u, v = model.input_values(traj.times[idx])
        y = np.array(model.eval_block(
            "h", traj.times[idx],
            tuple(traj.x_samples[idx]), tuple(traj.w_samples[idx]), u, v,
        ), float)
        values.append(y + noise.chol_R @ rng.standard_normal(model.n_y))
    return traj, MeasurementSeries(np.asarray(meas_times, float),
                                   np.array(values))


# -- filter steps -----------------------------------------------------------


def predict(model, x_prev, w_prev, t_prev, t_next, step=DEFAULT_STEP,
            newton_tol=NEWTON_TOL):
    """Noiseless DAE integration of the approximate model over one interval."""
    if t_next == t_prev:
        return tuple(x_prev), tuple(w_prev)
    traj = integrate_dae(model, t_prev, t_next, x_prev, w_prev, step=step,
                         newton_tol=newton_tol)
    return tuple(traj.x_samples[-1]), tuple(traj.w_samples[-1])


def _interval_observability(model, sens, t_a, t_b, x_a, w_a, step,
                            eps_rank, eps_piv):
    """Per-interval rank test; reuses the filter sensitivities when the
    model is smooth (the directional and square tests coincide then)."""
    n_pts = max(2, int(np.ceil(model.n_x / model.n_y)))
    sample_times = np.linspace(t_a, t_b, n_pts)
    if model.is_smooth:
        sens_list = [sens]
    else:
        sens_list = [
            integrate_sensitivity(
                model, t_a, t_b, x_a, w_a, DirectionsMatrix.probing(d),
                step=step,
            )
            for d in default_directions(model.n_x)
        ]
    return classify_from_sensitivities(
        model, sens_list, sample_times, eps_rank, eps_piv
    )


def measurement_update(model, prior, sens, P_prior, noise: NoiseSpec, y_m,
                       nonobs_diff_idx, all_nonobs, newton_tol=NEWTON_TOL):
    """One measurement step from the interval sensitivities.

    ``prior`` is (x, w) at the measurement time; ``sens`` is the
    sensitivity trajectory over the interval with X reset to M at its
    start.  Returns (posterior, P_post, C, L, innovation).
    """
    x_prior, w_prior = prior
    t_k = float(sens.base.times[-1])
    dt = t_k - float(sens.base.times[0])
    # interval flow Jacobian and output matrix at t_k
    Phi = sens.M.right_apply(sens.X_samples[-1])
    S_y = sens.M.right_apply(sens.Y_samples[-1])
    C = np.linalg.solve(Phi.T, S_y.T).T  # dy/dx at t_k via the flow
    P_minus = Phi @ P_prior @ Phi.T + noise.Q * dt
    S = noise.R + C @ P_minus @ C.T
    L = np.linalg.solve(S.T, (P_minus @ C.T).T).T
    for i in nonobs_diff_idx:
        L[i, :] = 0.0
    if all_nonobs:
        L = np.zeros_like(L)
    u, v = model.input_values(t_k)
    y_bar = np.array(
        model.eval_block("h", t_k, tuple(x_prior), tuple(w_prior), u, v),
        float,
    )
    innovation = np.asarray(y_m, float) - y_bar
    x_post = np.asarray(x_prior, float) + L @ innovation
    w_post = consistent_init(model, t_k, tuple(x_post), w_prior,
                             tol=newton_tol)
    P_post = (np.eye(len(x_post)) - L @ C) @ P_minus
    P_post = 0.5 * (P_post + P_post.T)
    return (tuple(x_post), w_post), P_post, C, L, innovation


def run_sekf(model, noise: NoiseSpec, meas: MeasurementSeries, t0,
             x0=None, w0=None, P0=None, M_kind="identity", probing_d=None,
             step=DEFAULT_STEP, newton_tol=NEWTON_TOL, eps_rank=EPS_RANK,
             eps_piv=EPS_PIVOT, config=None):
    """Run the full sensitivity-based EKF over a measurement series."""
    n_x = model.n_x
    x = tuple(model.x0 if x0 is None else x0)
    w = consistent_init(model, t0, x, w0, tol=newton_tol)
    P = np.eye(n_x) * 4.0 if P0 is None else np.atleast_2d(np.asarray(P0, float))
    if M_kind == "identity":
        M = DirectionsMatrix.identity(n_x)
    elif M_kind == "probing":
        M = DirectionsMatrix.probing(probing_d)
    else:
        raise ValueError(f"unknown M_kind {M_kind!r}")
    run = FilterRun(
        model_name=model.name,
        config=dict(config or {}, M_kind=M_kind),
        t0=t0,
        x0=np.array(x),
        w0=np.array(w),
        P0=P.copy(),
    )
    t_prev = t0
    for t_k, y_m in zip(meas.times, meas.values):
        if t_k < t_prev:
            raise DaeError("measurement time before the current filter time")
        try:
            sens = integrate_sensitivity(
                model, t_prev, t_k, x, w, M, step=step, newton_tol=newton_tol
            )
            x_prior = tuple(sens.base.x_samples[-1])
            w_prior = tuple(sens.base.w_samples[-1])
            report = _interval_observability(
                model, sens, t_prev, t_k, x, w, step, eps_rank, eps_piv
            )
            nonobs_idx = {
                model.diff_states.index(nm) for nm in report.chi_lno
            }
            all_nonobs = (
                len(report.chi_lno) == n_x
                and len(report.alpha_lno) == model.n_w
            )
            (x, w), P, C, L, innov = measurement_update(
                model, (x_prior, w_prior), sens, P, noise, y_m,
                nonobs_idx, all_nonobs, newton_tol=newton_tol,
            )
        except DaeError as e:
            e.partial_run = run
            raise
        run.steps.append(FilterStep(
            t=float(t_k),
            x_prior=np.array(x_prior),
            w_prior=np.array(w_prior),
            x_post=np.array(x),
            w_post=np.array(w),
            C=C, L=L, P=P.copy(),
            innovation=innov,
            nonobs_diff=tuple(report.chi_lno),
            nonobs_alg=tuple(report.alpha_lno),
        ))
        t_prev = float(t_k)
    return run
