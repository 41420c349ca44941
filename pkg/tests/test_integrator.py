"""Unit tests of the half-explicit RK4 DAE and sensitivity integration."""

import io
import math

import numpy as np
import pytest

from daeobs.errors import NewtonError
from daeobs.integrator import (
    DirectionsMatrix,
    consistent_start,
    integrate_dae,
    integrate_sensitivity,
    solve_sensitivity_algebraic,
    trajectory_to_csv,
)
from daeobs.model import parse_model


# -- DirectionsMatrix --------------------------------------------------------


def test_directions_identity():
    m = DirectionsMatrix.identity(3)
    assert m.n == 3 and m.k == 3
    rows = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(m.right_apply(rows), rows)


def test_directions_probing():
    m = DirectionsMatrix.probing([2.0, -1.0])
    assert m.k == 3
    assert np.allclose(m.entries, [[2, 1, 0], [-1, 0, 1]])
    rows = np.array([[9.0, 4.0, 5.0]])
    # the right inverse drops the probing column
    assert np.allclose(m.right_apply(rows), [[4.0, 5.0]])


def test_directions_validation():
    with pytest.raises(ValueError):
        DirectionsMatrix(np.array([[1.0, 2.0], [2.0, 4.0]]), "square_inverse")
    with pytest.raises(ValueError):
        DirectionsMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]),
                         "drop_first_column")
    with pytest.raises(ValueError):
        DirectionsMatrix(np.eye(2), "other")


def test_square_right_apply_general():
    m = DirectionsMatrix(np.array([[2.0, 0.0], [1.0, 1.0]]), "square_inverse")
    rows = np.array([[4.0, 2.0]])
    expect = rows @ np.linalg.inv(m.entries)
    assert np.allclose(m.right_apply(rows), expect)


# -- state integration -------------------------------------------------------


def test_linear_dae_analytic(linear_dae):
    traj = integrate_dae(linear_dae, 0.0, 1.0, (1.0,), (1.0,), step=1e-3)
    x1 = traj.x_samples[-1, 0]
    assert x1 == pytest.approx(math.exp(-1.0), abs=1e-7)
    assert traj.w_samples[-1, 0] == pytest.approx(x1, abs=1e-10)
    assert len(traj.times) == 1001


def test_zero_length_interval(linear_dae):
    traj = integrate_dae(linear_dae, 0.0, 0.0, (1.0,), (1.0,), step=1e-3)
    assert len(traj.times) == 1
    assert traj.x_samples[0, 0] == 1.0


def test_partial_final_step(linear_dae):
    traj = integrate_dae(linear_dae, 0.0, 0.00125, (1.0,), (1.0,), step=1e-3)
    assert traj.times[-1] == pytest.approx(0.00125, abs=1e-15)
    assert len(traj.times) == 3


def test_rk4_order_ratio(linear_dae):
    def err(h):
        traj = integrate_dae(linear_dae, 0.0, 1.0, (1.0,), (1.0,), step=h)
        return abs(traj.x_samples[-1, 0] - math.exp(-1.0))

    ratio = err(0.02) / err(0.01)
    assert 12.0 <= ratio <= 20.0


def test_inconsistent_ics_rejected(linear_dae):
    with pytest.raises(NewtonError):
        integrate_dae(linear_dae, 0.0, 1.0, (1.0,), (2.0,), step=1e-3)


def test_g_residual_bound(wind_smooth):
    x0, w0 = consistent_start(wind_smooth, 0.0)
    traj = integrate_dae(wind_smooth, 0.0, 1.0, x0, w0, step=1e-3)
    assert float(np.max(traj.g_residuals)) <= 1e-10


def test_wind_min_crossing_time(wind_min):
    """V crosses the 0.98 threshold near t = 0.057 (within 0.005)."""
    x0, w0 = consistent_start(wind_min, 0.0)
    traj = integrate_dae(wind_min, 0.0, 0.2, x0, w0, step=1e-3)
    v = traj.w_samples[:, 0]
    below = np.nonzero(v < 0.98)[0]
    assert below.size
    t_cross = traj.times[below[0]]
    assert abs(t_cross - 0.057) <= 0.006


def test_determinism_bitwise(wind_smooth):
    x0, w0 = consistent_start(wind_smooth, 0.0)
    a = integrate_dae(wind_smooth, 0.0, 0.2, x0, w0, step=1e-3)
    b = integrate_dae(wind_smooth, 0.0, 0.2, x0, w0, step=1e-3)
    assert np.array_equal(a.x_samples, b.x_samples)
    assert np.array_equal(a.w_samples, b.w_samples)


def test_invalid_step(linear_dae):
    with pytest.raises(ValueError):
        integrate_dae(linear_dae, 0.0, 1.0, (1.0,), (1.0,), step=0.0)
    with pytest.raises(ValueError):
        integrate_dae(linear_dae, 1.0, 0.0, (1.0,), (1.0,), step=1e-3)


def test_trajectory_csv(linear_dae):
    traj = integrate_dae(linear_dae, 0.0, 0.002, (1.0,), (1.0,), step=1e-3)
    buf = io.StringIO()
    trajectory_to_csv(traj, linear_dae, buf, config_comment='{"h": 0.001}')
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# config: ")
    assert lines[1] == "t,x_x,w_w,g_resid"
    assert len(lines) == 5
    first = lines[2].split(",")
    assert float(first[0]) == 0.0 and float(first[1]) == 1.0


def test_sample_index_snapping(linear_dae):
    traj = integrate_dae(linear_dae, 0.0, 0.01, (1.0,), (1.0,), step=1e-3)
    assert traj.sample_index(0.0051) == 5
    with pytest.raises(ValueError):
        traj.sample_index(0.5)


# -- sensitivity integration -------------------------------------------------


def test_linear_sensitivity_analytic(linear_dae):
    sens = integrate_sensitivity(
        linear_dae, 0.0, 1.0, (1.0,), (1.0,),
        DirectionsMatrix.identity(1), step=1e-3,
    )
    e = math.exp(-1.0)
    assert sens.X_samples[-1][0, 0] == pytest.approx(e, abs=1e-7)
    assert sens.W_samples[-1][0, 0] == pytest.approx(e, abs=1e-7)
    assert sens.Y_samples[-1][0, 0] == pytest.approx(e, abs=1e-7)
    assert np.allclose(sens.X_samples[0], np.eye(1))


def test_smooth_W_matches_jacobian_formula(wind_smooth):
    """W = -(dg/dw)^-1 (dg/dx) X with finite-difference Jacobians."""
    from daeobs.model import eval_rhs

    x0, w0 = consistent_start(wind_smooth, 0.0)
    sens = integrate_sensitivity(
        wind_smooth, 0.0, 0.5, x0, w0, DirectionsMatrix.identity(2),
        step=1e-3,
    )
    eps = 1e-7
    for idx in (0, 250, 500):
        t = float(sens.base.times[idx])
        x = tuple(sens.base.x_samples[idx])
        w = tuple(sens.base.w_samples[idx])

        def g(xx, ww):
            return float(eval_rhs(wind_smooth, "g", t, xx, ww)[0])

        gx = np.array([
            (g((x[0] + eps, x[1]), w) - g((x[0] - eps, x[1]), w)) / (2 * eps),
            (g((x[0], x[1] + eps), w) - g((x[0], x[1] - eps), w)) / (2 * eps),
        ])
        gw = (g(x, (w[0] + eps,)) - g(x, (w[0] - eps,))) / (2 * eps)
        W_expect = -(gx @ sens.X_samples[idx]) / gw
        assert np.allclose(sens.W_samples[idx][0], W_expect,
                           rtol=1e-6, atol=1e-8)


def test_zero_direction_absorption(wind_smooth):
    x0, w0 = consistent_start(wind_smooth, 0.0)
    # a [d I] matrix with d = 0: the first column must stay identically 0
    sens = integrate_sensitivity(
        wind_smooth, 0.0, 0.2, x0, w0,
        DirectionsMatrix.probing([0.0, 0.0]), step=1e-3,
    )
    assert np.all(sens.X_samples[:, :, 0] == 0.0)
    assert np.all(sens.W_samples[:, :, 0] == 0.0)
    assert np.all(sens.Y_samples[:, :, 0] == 0.0)


def test_sensitivity_determinism(wind_min):
    x0, w0 = consistent_start(wind_min, 0.0)
    M = DirectionsMatrix.probing([1.0, 0.0])
    a = integrate_sensitivity(wind_min, 0.0, 0.1, x0, w0, M, step=1e-3)
    b = integrate_sensitivity(wind_min, 0.0, 0.1, x0, w0, M, step=1e-3)
    assert np.array_equal(a.X_samples, b.X_samples)
    assert np.array_equal(a.W_samples, b.W_samples)
    assert np.array_equal(a.Y_samples, b.Y_samples)


def test_sensitivity_rejects_wrong_rows(wind_smooth):
    x0, w0 = consistent_start(wind_smooth, 0.0)
    with pytest.raises(ValueError):
        integrate_sensitivity(wind_smooth, 0.0, 0.1, x0, w0,
                              DirectionsMatrix.identity(3), step=1e-3)


# -- algebraic sensitivity column solves ------------------------------------


def test_column_solve_linear(linear_dae):
    col = solve_sensitivity_algebraic(
        linear_dae, 0.0, (1.0,), (1.0,), np.eye(1), np.zeros((1, 0)),
        X_col=np.array([3.0]),
    )
    assert col == pytest.approx([3.0])


def test_column_solve_wind_analytic_jacobian(wind_smooth):
    """Column equals -(dg/dV)^-1 (dg/dx) X_col with the hand-written
    partial derivatives of the quartic."""
    x0, w0 = consistent_start(wind_smooth, 0.0)
    Vref, Eq2 = x0
    V = w0[0]
    p = wind_smooth.params
    R, X, E, X_eq, P = p["R"], p["X"], p["E"], p["X_eq"], p["P"]
    Q = V * (Eq2 - V) / X_eq
    dQ_dV = (Eq2 - 2 * V) / X_eq
    dQ_dEq2 = V / X_eq
    # g = V^4 - (2(PR + QX) + E^2) V^2 + (R^2 + X^2)(P^2 + Q^2)
    dg_dQ = -2 * X * V ** 2 + (R ** 2 + X ** 2) * 2 * Q
    dg_dV = 4 * V ** 3 - 2 * V * (2 * (P * R + Q * X) + E ** 2) \
        + dg_dQ * dQ_dV
    dg_dEq2 = dg_dQ * dQ_dEq2
    X_col = np.array([0.7, -1.3])
    expect = -(0.0 * X_col[0] + dg_dEq2 * X_col[1]) / dg_dV
    col = solve_sensitivity_algebraic(
        wind_smooth, 0.0, x0, w0, np.eye(2), np.zeros((1, 0)), X_col=X_col,
    )
    assert col[0] == pytest.approx(expect, rel=1e-12)


def test_column_solve_nonsmooth_branch():
    m = parse_model(
        "name: m\ndiff_states: [x]\nalg_states: [w]\noutputs: [y]\n"
        "f: ['-x']\ng: ['min(w, 2 * w) - x']\nh: ['x']\nx0: [3]\n"
        "w0_guess: [3.0]\n"
    )
    # at w = 3 > 0 the active branch is w, so W_col = X_col
    col = solve_sensitivity_algebraic(
        m, 0.0, (3.0,), (3.0,), np.eye(1), np.zeros((1, 0)),
        X_col=np.array([2.0]),
    )
    assert col[0] == pytest.approx(2.0, abs=1e-11)
    # at w = -3 the active branch is 2w, so W_col = X_col / 2
    col = solve_sensitivity_algebraic(
        m, 0.0, (-3.0,), (-3.0,), np.eye(1), np.zeros((1, 0)),
        X_col=np.array([2.0]),
    )
    assert col[0] == pytest.approx(1.0, abs=1e-11)


def test_column_solve_kink_lexicographic():
    """At the kink the earlier columns fix the branch for later ones."""
    m = parse_model(
        "name: m\ndiff_states: [x]\nalg_states: [w]\noutputs: [y]\n"
        "f: ['-x']\ng: ['min(w, 2 * w) - x']\nh: ['x']\nx0: [0]\n"
        "w0_guess: [0.0]\n"
    )
    # x = w = 0, first column direction +1: the solve must pick the branch
    # lexicographically; min(w,2w)' picks the smaller row.  For omega the
    # candidate rows are (omega) and (2 omega); residual omega - 1 = 0 or
    # 2 omega - 1 = 0.  Branch selection: rows (1) vs (2) -> min keeps (1)
    # only if 1 <= 2... the consistent root is omega = 1 on branch w
    # (rows become equal check) or omega = 0.5 on branch 2w.  With
    # omega = 0.5: rows (0.5) vs (1.0), min selects 0.5 -> residual
    # 0.5 - 1 != 0.  With omega = 1: rows (1) vs (2), min selects 1 ->
    # residual 0.  So the unique consistent root is 1.
    col = solve_sensitivity_algebraic(
        m, 0.0, (0.0,), (0.0,), np.eye(1), np.zeros((1, 0)),
        X_col=np.array([1.0]),
    )
    assert col[0] == pytest.approx(1.0, abs=1e-11)
    # direction -1: candidates -1 (branch w, min rows (-1) vs (-2) keeps
    # -2: inconsistent) and -0.5... checking: omega = -0.5 rows (-0.5, -1),
    # min selects -1 -> residual -1 + 1 = 0?  g' = min' - x' = -1 - (-1)=0.
    col = solve_sensitivity_algebraic(
        m, 0.0, (0.0,), (0.0,), np.eye(1), np.zeros((1, 0)),
        X_col=np.array([-1.0]),
    )
    assert col[0] == pytest.approx(-0.5, abs=1e-11)


def test_column_solve_no_alg_states():
    m = parse_model(
        "name: m\ndiff_states: [x]\noutputs: [y]\nf: ['-x']\nh: ['x']\n"
        "x0: [1]\n"
    )
    col = solve_sensitivity_algebraic(
        m, 0.0, (1.0,), (), np.eye(1), np.zeros((0, 0)),
        X_col=np.array([1.0]),
    )
    assert col.size == 0
