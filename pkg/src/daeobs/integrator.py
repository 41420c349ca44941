"""Half-explicit fixed-step RK4 integration of semi-explicit index-1 DAEs
and of their forward directional sensitivity systems.

Each Runge-Kutta stage evaluates f at a stage state whose algebraic part
is Newton-solved from g = 0 (warm-started from the previous stage).  The
sensitivity integration runs the same scheme with every model expression
evaluated over LD scalars, so state and sensitivity stay exactly
aligned; the algebraic sensitivity rows are solved per stage, either by
one LU solve (smooth g) or column-by-column in lexicographic order
(nonsmooth g).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import AlgebraicSensitivityError, NewtonError, RegularityError
from .ldnum import LD
from .model import (
    COND_LIMIT,
    NEWTON_TOL,
    algebraic_jacobian,
    consistent_init,
)

DEFAULT_STEP = 1e-3
BRANCH_CAP = 8


@dataclass(frozen=True)
class DirectionsMatrix:
    """Full-row-rank probing directions with a known right inverse."""

    entries: np.ndarray  # n_x x k
    right_inverse_kind: str  # "square_inverse" | "drop_first_column"

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", m)
        n, k = m.shape
        if np.linalg.matrix_rank(m) != n:
            raise ValueError("directions matrix must have full row rank")
        if self.right_inverse_kind == "drop_first_column":
            if k != n + 1 or not np.allclose(m[:, 1:], np.eye(n)):
                raise ValueError(
                    "drop_first_column requires the [d I] form (k = n+1)"
                )
        elif self.right_inverse_kind == "square_inverse":
            if k != n:
                raise ValueError("square_inverse requires a square matrix")
        else:
            raise ValueError(
                f"unknown right_inverse_kind {self.right_inverse_kind!r}"
            )

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), "square_inverse")

    @classmethod
    def probing(cls, d):
        """The [d I] form whose right inverse drops the probing column."""
        d = np.asarray(d, dtype=float).reshape(-1, 1)
        n = d.shape[0]
        return cls(np.hstack([d, np.eye(n)]), "drop_first_column")

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def k(self):
        return self.entries.shape[1]

    def right_apply(self, rows):
        """Right-multiply (m x k) rows by the right inverse, giving m x n."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if self.right_inverse_kind == "drop_first_column":
            return rows[:, 1:].copy()
        return np.linalg.solve(self.entries.T, rows.T).T


@dataclass
class Trajectory:
    """Time-sampled reference solution of the DAE."""

    times: np.ndarray
    x_samples: np.ndarray  # N x n_x
    w_samples: np.ndarray  # N x n_w
    g_residuals: np.ndarray

    def sample_index(self, t, tol=None):
        """Index of the stored sample nearest to t (within half a step)."""
        idx = int(np.argmin(np.abs(self.times - t)))
        if tol is None:
            steps = np.diff(self.times)
            tol = 0.5 * float(np.max(steps)) if steps.size else 1e-12
        if abs(self.times[idx] - t) > tol + 1e-12:
            raise ValueError(
                f"time {t} not on the trajectory grid "
                f"(nearest sample {self.times[idx]})"
            )
        return idx


@dataclass
class SensitivityTrajectory:
    """Reference solution plus directional state/output sensitivities."""

    base: Trajectory
    M: DirectionsMatrix
    X_samples: np.ndarray  # N x n_x x k
    W_samples: np.ndarray  # N x n_w x k
    Y_samples: np.ndarray  # N x n_y x k


def _grid(t0, tf, step):
    if step <= 0:
        raise ValueError("step must be positive")
    if tf < t0:
        raise ValueError("tf must be >= t0")
    if tf == t0:
        return [t0]
    n_full = int(np.floor((tf - t0) / step + 1e-12))
    times = [t0 + i * step for i in range(n_full + 1)]
    if times[-1] < tf - 1e-12 * max(1.0, abs(tf)):
        times.append(tf)
    else:
        times[-1] = tf
    return times


# -- state integration ------------------------------------------------------

_RK_C = (0.0, 0.5, 0.5, 1.0)


def _jacobian_w(model, t, x, w, u, v):
    """One Clarke element of dg/dw only (w-slot probes)."""
    n_w = model.n_w
    w_ld = [
        LD(w[i], tuple(1.0 if j == i else 0.0 for j in range(n_w)))
        for i in range(n_w)
    ]
    res = model.eval_block("g", t, x, w_ld, u, v)
    return [r.d for r in res]


def _solve_stage_w(model, t, x, w_warm, u, v, tol, max_iter=25):
    """Newton solve of g(x, w, v(t)) = 0 warm-started from w_warm."""
    n_w = model.n_w
    if n_w == 0:
        return ()
    x = tuple(x)
    if n_w == 1:
        w = float(w_warm[0])
        r = float(model.eval_block("g", t, x, (w,), u, v)[0])
        for _ in range(max_iter):
            if abs(r) <= tol:
                return (w,)
            gw = _jacobian_w(model, t, x, (w,), u, v)[0][0]
            if gw == 0.0 or gw != gw:
                raise RegularityError(
                    f"algebraic Jacobian singular at t={t}"
                )
            w -= r / gw
            r = float(model.eval_block("g", t, x, (w,), u, v)[0])
        if abs(r) <= tol:
            return (w,)
        raise NewtonError(
            f"stage algebraic solve failed at t={t}; residual {abs(r):.3e}",
            residual=abs(r), t=t,
        )
    w = np.array(w_warm, dtype=float)
    r = np.array(model.eval_block("g", t, x, tuple(w), u, v), dtype=float)
    rn = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if rn <= tol:
            return tuple(w)
        gw = np.array(_jacobian_w(model, t, x, tuple(w), u, v), dtype=float)
        if not np.all(np.isfinite(gw)) or np.linalg.cond(gw, 1) > COND_LIMIT:
            raise RegularityError(
                f"algebraic Jacobian ill-conditioned at t={t}"
            )
        w = w + np.linalg.solve(gw, -r)
        r = np.array(model.eval_block("g", t, x, tuple(w), u, v), dtype=float)
        rn = float(np.max(np.abs(r)))
    if rn <= tol:
        return tuple(w)
    raise NewtonError(
        f"stage algebraic solve failed at t={t}; residual {rn:.3e}",
        residual=rn, t=t,
    )


def integrate_dae(model, t0, tf, x0, w0, step=DEFAULT_STEP,
                  newton_tol=NEWTON_TOL, u_override=None, v_override=None):
    """Integrate the DAE on [t0, tf] with consistent ICs (x0, w0)."""
    times = _grid(t0, tf, step)
    x = np.array(x0, dtype=float)
    w = tuple(float(wi) for wi in w0)
    xs, ws, res = [tuple(x)], [w], [_resid(model, t0, x, w, u_override, v_override)]
    if res[0] > newton_tol:
        raise NewtonError(
            f"initial conditions inconsistent: residual {res[0]:.3e}",
            residual=res[0], t=t0,
        )
    for t_a, t_b in zip(times[:-1], times[1:]):
        h = t_b - t_a
        ks = []
        w_warm = w
        for i, c in enumerate(_RK_C):
            t_s = t_a + c * h
            if i == 0:
                x_s = x
            elif i == 3:
                x_s = x + h * ks[2]
            else:
                x_s = x + 0.5 * h * ks[i - 1]
            u, v = model.input_values(t_s, u_override, v_override)
            w_s = _solve_stage_w(model, t_s, x_s, w_warm, u, v, newton_tol)
            w_warm = w_s
            ks.append(np.array(
                model.eval_block("f", t_s, tuple(x_s), w_s, u, v), dtype=float
            ))
        x = x + (h / 6.0) * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
        u, v = model.input_values(t_b, u_override, v_override)
        w = _solve_stage_w(model, t_b, x, w_warm, u, v, newton_tol)
        xs.append(tuple(x))
        ws.append(w)
        res.append(_resid(model, t_b, x, w, u_override, v_override))
    return Trajectory(
        times=np.array(times),
        x_samples=np.array(xs, dtype=float).reshape(len(times), model.n_x),
        w_samples=np.array(ws, dtype=float).reshape(len(times), model.n_w),
        g_residuals=np.array(res),
    )


def _resid(model, t, x, w, u_override=None, v_override=None):
    if model.n_w == 0:
        return 0.0
    u, v = model.input_values(t, u_override, v_override)
    r = model.eval_block("g", t, tuple(x), tuple(w), u, v)
    return max(abs(float(ri)) for ri in r)


# -- algebraic sensitivity solves ------------------------------------------


def _ld_states(x, X, w, W):
    x_ld = [LD(xi, Xi) for xi, Xi in zip(x, X)]
    w_ld = [LD(wi, Wi) for wi, Wi in zip(w, W)]
    return x_ld, w_ld


def _solve_W_smooth(model, t, x, w, X, u, v):
    """W = -(dg/dw)^-1 (dg/dx) X for C^1 g; one LU reused across columns."""
    gx, gw = algebraic_jacobian(model, t, tuple(x), tuple(w), u, v)
    if model.n_w == 1:
        gws = gw[0, 0]
        if gws == 0.0 or gws != gws:
            raise RegularityError(f"algebraic Jacobian singular at t={t}")
        return -(gx @ X) / gws
    if not np.all(np.isfinite(gw)) or np.linalg.cond(gw, 1) > COND_LIMIT:
        raise RegularityError(f"algebraic Jacobian ill-conditioned at t={t}")
    return -np.linalg.solve(gw, gx @ X)


def solve_sensitivity_algebraic(model, t, x, w, X, W_prefix, X_col=None,
                                u=None, v=None, tol=1e-11,
                                branch_cap=BRANCH_CAP):
    """Solve one column of the directional algebraic sensitivity equation.

    Columns 1..j-1 (``W_prefix``, n_w x (j-1)) are already solved and fix
    every branch decision that column j inherits; ``X_col`` is column j
    of X (defaults to column j of ``X``).  Returns the n_w column vector.
    """
    if u is None or v is None:
        u, v = model.input_values(t)
    n_w = model.n_w
    if n_w == 0:
        return np.zeros(0)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W_prefix = np.asarray(W_prefix, dtype=float).reshape(n_w, -1)
    j = W_prefix.shape[1]
    if X_col is None:
        X_col = X[:, j]
    X_lead = np.column_stack([X[:, :j], np.asarray(X_col, dtype=float)])
    if not model.has_nonsmooth("g"):
        gx, gw = algebraic_jacobian(model, t, tuple(x), tuple(w), u, v)
        return -np.linalg.solve(gw, gx @ np.asarray(X_col, dtype=float))

    def residual_and_jac(omega):
        # dirs: [prefix cols | omega | identity probes]; under the active
        # branches the probe columns give the local column Jacobian
        dirs_x = [tuple(X_lead[i]) + (0.0,) * n_w for i in range(model.n_x)]
        dirs_w = [
            tuple(W_prefix[m]) + (float(omega[m]),)
            + tuple(1.0 if p == m else 0.0 for p in range(n_w))
            for m in range(n_w)
        ]
        x_ld = [LD(xi, di) for xi, di in zip(x, dirs_x)]
        w_ld = [LD(wi, di) for wi, di in zip(w, dirs_w)]
        res = model.eval_block("g", t, x_ld, w_ld, u, v)
        rows = np.array([r.d for r in res], dtype=float)
        return rows[:, j], rows[:, j + 1:]

    omega = np.zeros(n_w)
    for _ in range(30):
        r, A = residual_and_jac(omega)
        if float(np.max(np.abs(r))) <= tol:
            return omega
        if not np.all(np.isfinite(A)) or np.linalg.cond(A) > COND_LIMIT:
            break
        omega_new = omega - np.linalg.solve(A, r)
        if np.array_equal(omega_new, omega):
            break
        omega = omega_new
    r, _ = residual_and_jac(omega)
    if float(np.max(np.abs(r))) <= tol:
        return omega
    return _enumerate_branches(
        model, t, x, w, X_lead, W_prefix, u, v, j, tol, branch_cap
    )


def _enumerate_branches(model, t, x, w, X_lead, W_prefix, u, v, j, tol,
                        branch_cap):
    """Exhaustive branch fallback for the piecewise-linear column equation."""
    from . import expr as _expr

    n_w = model.n_w
    n_branches = sum(_expr.count_nonsmooth(a) for a in model.g_asts)
    if n_branches > branch_cap:
        raise AlgebraicSensitivityError(
            f"column solve failed at t={t} and g has {n_branches} nonsmooth "
            f"primitives (> branch cap {branch_cap})",
            t=t, column=j,
        )

    def frozen_eval(omega, overrides):
        dirs_x = [tuple(X_lead[i]) + (0.0,) * n_w for i in range(model.n_x)]
        dirs_w = [
            tuple(W_prefix[m]) + (float(omega[m]),)
            + tuple(1.0 if p == m else 0.0 for p in range(n_w))
            for m in range(n_w)
        ]
        x_ld = [LD(xi, di) for xi, di in zip(x, dirs_x)]
        w_ld = [LD(wi, di) for wi, di in zip(w, dirs_w)]
        ctl = _expr.BranchControl(overrides=overrides)
        res = model.eval_block_tree("g", t, x_ld, w_ld, u, v, branches=ctl)
        rows = np.array([r.d for r in res], dtype=float)
        return rows[:, j], rows[:, j + 1:]

    for combo in itertools.product((0, 1), repeat=n_branches):
        try:
            r0, A = frozen_eval(np.zeros(n_w), list(combo))
            omega = np.linalg.solve(A, -r0)
        except Exception:
            continue
        # verify against the true (unfrozen) lexicographic evaluation
        r_true, _ = frozen_eval(omega, None)
        if float(np.max(np.abs(r_true))) <= max(tol, 1e-9):
            return omega
    raise AlgebraicSensitivityError(
        f"no branch combination yields a consistent root at t={t}",
        t=t, column=j,
    )


def _solve_W(model, t, x, w, X, u, v, tol):
    if model.n_w == 0:
        return np.zeros((0, X.shape[1]))
    if not model.has_nonsmooth("g"):
        return _solve_W_smooth(model, t, x, w, X, u, v)
    k = X.shape[1]
    W = np.zeros((model.n_w, 0))
    for j in range(k):
        col = solve_sensitivity_algebraic(
            model, t, x, w, X, W, X_col=X[:, j], u=u, v=v, tol=tol
        )
        W = np.column_stack([W, col])
    return W


# -- sensitivity integration ------------------------------------------------


def integrate_sensitivity(model, t0, tf, x0, w0, M, step=DEFAULT_STEP,
                          newton_tol=NEWTON_TOL,
                          u_override=None, v_override=None):
    """Integrate states and directional sensitivities along [t0, tf].

    x-slots carry rows of X, w-slots rows of W, and the input signals
    carry zero directions.  Y is recorded at every sample.
    """
    if isinstance(M, np.ndarray):
        M = DirectionsMatrix(M, "square_inverse")
    if M.n != model.n_x:
        raise ValueError(
            f"directions matrix has {M.n} rows, model has {model.n_x} states"
        )
    times = _grid(t0, tf, step)
    k = M.k
    x = np.array(x0, dtype=float)
    w = tuple(float(wi) for wi in w0)
    X = M.entries.copy()
    u, v = model.input_values(t0, u_override, v_override)
    W = _solve_W(model, t0, x, w, X, u, v, newton_tol)

    xs, ws, res = [tuple(x)], [w], [_resid(model, t0, x, w, u_override, v_override)]
    Xs, Ws, Ys = [X.copy()], [W.copy()], [_eval_Y(model, t0, x, w, X, W, u, v)]
    if res[0] > newton_tol:
        raise NewtonError(
            f"initial conditions inconsistent: residual {res[0]:.3e}",
            residual=res[0], t=t0,
        )

    for t_a, t_b in zip(times[:-1], times[1:]):
        h = t_b - t_a
        k_vals, K_dirs = [], []
        w_warm = w
        for i, c in enumerate(_RK_C):
            t_s = t_a + c * h
            if i == 0:
                x_s, X_s = x, X
            elif i == 3:
                x_s, X_s = x + h * k_vals[2], X + h * K_dirs[2]
            else:
                x_s = x + 0.5 * h * k_vals[i - 1]
                X_s = X + 0.5 * h * K_dirs[i - 1]
            u, v = model.input_values(t_s, u_override, v_override)
            w_s = _solve_stage_w(model, t_s, x_s, w_warm, u, v, newton_tol)
            w_warm = w_s
            W_s = _solve_W(model, t_s, x_s, w_s, X_s, u, v, newton_tol)
            x_ld, w_ld = _ld_states(x_s, X_s, w_s, W_s)
            f_ld = model.eval_block("f", t_s, x_ld, w_ld, u, v)
            k_vals.append(np.array([fi.v for fi in f_ld]))
            K_dirs.append(np.array([fi.d for fi in f_ld]).reshape(model.n_x, k))
        x = x + (h / 6.0) * (k_vals[0] + 2 * k_vals[1] + 2 * k_vals[2] + k_vals[3])
        X = X + (h / 6.0) * (K_dirs[0] + 2 * K_dirs[1] + 2 * K_dirs[2] + K_dirs[3])
        u, v = model.input_values(t_b, u_override, v_override)
        w = _solve_stage_w(model, t_b, x, w_warm, u, v, newton_tol)
        W = _solve_W(model, t_b, x, w, X, u, v, newton_tol)
        xs.append(tuple(x))
        ws.append(w)
        res.append(_resid(model, t_b, x, w, u_override, v_override))
        Xs.append(X.copy())
        Ws.append(W.copy())
        Ys.append(_eval_Y(model, t_b, x, w, X, W, u, v))

    n = len(times)
    base = Trajectory(
        times=np.array(times),
        x_samples=np.array(xs, dtype=float).reshape(n, model.n_x),
        w_samples=np.array(ws, dtype=float).reshape(n, model.n_w),
        g_residuals=np.array(res),
    )
    return SensitivityTrajectory(
        base=base,
        M=M,
        X_samples=np.array(Xs).reshape(n, model.n_x, k),
        W_samples=np.array(Ws).reshape(n, model.n_w, k),
        Y_samples=np.array(Ys).reshape(n, model.n_y, k),
    )


def _eval_Y(model, t, x, w, X, W, u, v):
    x_ld, w_ld = _ld_states(x, X, w, W)
    h_ld = model.eval_block("h", t, x_ld, w_ld, u, v)
    return np.array([hi.d for hi in h_ld]).reshape(model.n_y, X.shape[1])


# -- CSV export -------------------------------------------------------------


def trajectory_to_csv(traj, model, fh, config_comment=None):
    """Write `t,x_<name>...,w_<name>...,g_resid` rows, 17 significant digits."""
    if config_comment is not None:
        fh.write(f"# config: {config_comment}\n")
    cols = ["t"] + [f"x_{n}" for n in model.diff_states] \
        + [f"w_{n}" for n in model.alg_states] + ["g_resid"]
    fh.write(",".join(cols) + "\n")
    for i, t in enumerate(traj.times):
        vals = [t, *traj.x_samples[i], *traj.w_samples[i], traj.g_residuals[i]]
        fh.write(",".join(f"{val:.17g}" for val in vals) + "\n")


def initial_sensitivity_directions(model, kind="identity", d=None):
    """Helper building the common directions matrices."""
    if kind == "identity":
        return DirectionsMatrix.identity(model.n_x)
    if kind == "probing":
        if d is None:
            raise ValueError("probing directions need d")
        return DirectionsMatrix.probing(d)
    raise ValueError(f"unknown directions kind {kind!r}")


def consistent_start(model, t0, x0=None, w_guess=None, newton_tol=NEWTON_TOL):
    """Resolve (x0, w0) with w0 from a consistency solve."""
    x0 = tuple(model.x0 if x0 is None else x0)
    w0 = consistent_init(model, t0, x0, w_guess, tol=newton_tol)
    return x0, w0
