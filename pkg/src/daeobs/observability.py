"""Sensitivity-rank observability testing (L-SERC).

Output sensitivities sampled along the reference solution are stacked
into a rank-test matrix per probing direction; the SVD decides the
verdict, the null-space right singular vectors identify which
differential states are non-observable, and the algebraic-state
sensitivities with respect to those states classify the algebraic
states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .integrator import (
    DEFAULT_STEP,
    DirectionsMatrix,
    SensitivityTrajectory,
    consistent_start,
    integrate_sensitivity,
)

EPS_RANK = 1e-6
EPS_PIVOT = 1e-8
DEFAULT_N_SAMPLES = 11  # N = 10 intervals


@dataclass
class LSercMatrix:
    """Stacked output sensitivities at the sample times for one direction."""

    direction: object  # tuple of floats, or "identity" for square M
    sample_times: np.ndarray
    entries: np.ndarray  # (N+1)*n_y x n_x
    singular_values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.singular_values is None:
            self.singular_values = np.linalg.svd(
                self.entries, compute_uv=False
            )


def uniform_sample_times(t0, tf, n_samples=DEFAULT_N_SAMPLES):
    return np.linspace(t0, tf, n_samples)


def build_lserc(sens: SensitivityTrajectory, sample_times):
    """Stack S_y(t_i) = Y(t_i) (right inverse of M) over the sample times."""
    rows = []
    for t in sample_times:
        idx = sens.base.sample_index(t)
        rows.append(sens.M.right_apply(sens.Y_samples[idx]))
    entries = np.vstack(rows)
    if not np.all(np.isfinite(entries)):
        raise ValueError("non-finite sensitivity entries")
    if sens.M.right_inverse_kind == "square_inverse":
        direction = "identity"
    else:
        direction = tuple(sens.M.entries[:, 0])
    return LSercMatrix(
        direction=direction,
        sample_times=np.asarray(sample_times, dtype=float),
        entries=entries,
    )


def serc_rank(m: LSercMatrix, eps_rank=EPS_RANK):
    """Numerical rank and right singular vectors of the stacked matrix."""
    if eps_rank <= 0:
        raise ValueError("eps_rank must be positive")
    if not np.all(np.isfinite(m.entries)):
        raise ValueError("non-finite entries")
    _, s, vt = np.linalg.svd(m.entries)
    smax = float(s[0]) if s.size else 0.0
    thresh = eps_rank * max(smax, 1.0)
    rank = int(np.sum(s > thresh))
    return rank, vt.T


def rref(mat, tol=EPS_PIVOT):
    """Reduced row echelon form with partial pivoting.

    Returns (rref matrix, pivot column indices).  A column is a pivot
    when its best remaining entry exceeds ``tol`` relative to the matrix
    scale.
    """
    a = np.array(mat, dtype=float)
    if a.size == 0:
        return a, []
    scale = max(1.0, float(np.max(np.abs(a))))
    pivots = []
    row = 0
    for col in range(a.shape[1]):
        if row >= a.shape[0]:
            break
        piv = row + int(np.argmax(np.abs(a[row:, col])))
        if abs(a[piv, col]) <= tol * scale:
            continue
        a[[row, piv]] = a[[piv, row]]
        a[row] = a[row] / a[row, col]
        for r in range(a.shape[0]):
            if r != row:
                a[r] = a[r] - a[r, col] * a[row]
        pivots.append(col)
        row += 1
    return a, pivots


def nonobs_diff_states(V, rank, eps_piv=EPS_PIVOT):
    """Indices of non-observable differential states from the SVD basis.

    The trailing columns of V span the null space; pivot columns of the
    row echelon form of their transpose name the states.
    """
    n_x = V.shape[0]
    if rank >= n_x:
        return set()
    v_r = V[:, rank:]
    _, pivots = rref(v_r.T, tol=eps_piv)
    return set(pivots)


def nonobs_alg_states(sens: SensitivityTrajectory, sample_times, J,
                      eps_rank=EPS_RANK):
    """Indices of algebraic states sensitive to the non-observable ones.

    For each algebraic state, its sensitivity rows restricted to the
    columns in J are stacked over the sample times; any entry above
    ``eps_rank`` marks the state non-observable.  Empty J gives the
    empty set (the restriction is undefined then).
    """
    J = sorted(J)
    if not J:
        return set()
    out = set()
    for i in range(sens.W_samples.shape[1]):
        entries = []
        for t in sample_times:
            idx = sens.base.sample_index(t)
            s_w = sens.M.right_apply(sens.W_samples[idx])
            entries.append(s_w[i, J])
        if np.max(np.abs(np.array(entries))) > eps_rank:
            out.add(i)
    return out


@dataclass
class DirectionResult:
    direction: object
    singular_values: np.ndarray
    rank: int
    verdict: str  # "L-SERC observable" | "L-SERC non-observable"


@dataclass
class ObservabilityReport:
    model_name: str
    tolerances: dict
    sample_times: np.ndarray
    directions: list  # of DirectionResult
    chi_lno: list  # non-observable differential state names
    chi_lo: list
    alpha_lno: list  # non-observable algebraic state names
    alpha_lo: list

    def to_dict(self):
        return {
            "model": self.model_name,
            "tolerances": self.tolerances,
            "sample_times": [float(t) for t in self.sample_times],
            "directions": [
                {
                    "direction": (
                        d.direction if isinstance(d.direction, str)
                        else [float(x) for x in d.direction]
                    ),
                    "singular_values": [float(s) for s in d.singular_values],
                    "rank": d.rank,
                    "verdict": d.verdict,
                }
                for d in self.directions
            ],
            "chi_lno": self.chi_lno,
            "chi_lo": self.chi_lo,
            "alpha_lno": self.alpha_lno,
            "alpha_lo": self.alpha_lo,
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)


def default_directions(n_x):
    """{+e_i, -e_i} for every coordinate axis."""
    dirs = []
    for i in range(n_x):
        e = np.zeros(n_x)
        e[i] = 1.0
        dirs.append(tuple(e))
        dirs.append(tuple(-e))
    return dirs


def _verdict(rank, n_x):
    return "L-SERC observable" if rank == n_x else "L-SERC non-observable"


def classify_from_sensitivities(model, sens_list, sample_times,
                                eps_rank=EPS_RANK, eps_piv=EPS_PIVOT):
    """Rank tests plus state classification over computed sensitivities."""
    n_x = model.n_x
    results = []
    chi_idx = set()
    for sens in sens_list:
        ups = build_lserc(sens, sample_times)
        rank, V = serc_rank(ups, eps_rank)
        results.append(DirectionResult(
            direction=ups.direction,
            singular_values=ups.singular_values,
            rank=rank,
            verdict=_verdict(rank, n_x),
        ))
        chi_idx |= nonobs_diff_states(V, rank, eps_piv)
    alpha_idx = set()
    for sens in sens_list:
        alpha_idx |= nonobs_alg_states(sens, sample_times, chi_idx, eps_rank)
    chi_lno = [model.diff_states[i] for i in sorted(chi_idx)]
    alpha_lno = [model.alg_states[i] for i in sorted(alpha_idx)]
    report = ObservabilityReport(
        model_name=model.name,
        tolerances={"eps_rank": eps_rank, "eps_piv": eps_piv},
        sample_times=np.asarray(sample_times, dtype=float),
        directions=results,
        chi_lno=chi_lno,
        chi_lo=[n for n in model.diff_states if n not in chi_lno],
        alpha_lno=alpha_lno,
        alpha_lo=[n for n in model.alg_states if n not in alpha_lno],
    )
    return report


def run_lserc(model, x0=None, w0=None, directions=None, sample_times=None,
              t0=0.0, tf=1.0, step=DEFAULT_STEP, eps_rank=EPS_RANK,
              eps_piv=EPS_PIVOT, square_M=False):
    """Full observability test from consistent initial conditions.

    One sensitivity integration per probing direction with M = [d I];
    with ``square_M`` a single integration with the identity directions
    (only meaningful for smooth models).
    """
    x0, w0 = consistent_start(
        model, t0, x0, w0 if w0 is not None else None
    )
    if sample_times is None:
        sample_times = uniform_sample_times(t0, tf)
    else:
        sample_times = np.asarray(sample_times, dtype=float)
    tf_run = max(tf, float(np.max(sample_times)))
    if square_M:
        sens_list = [integrate_sensitivity(
            model, t0, tf_run, x0, w0, DirectionsMatrix.identity(model.n_x),
            step=step,
        )]
    else:
        if directions is None:
            directions = default_directions(model.n_x)
        if not directions:
            raise ValueError("at least one probing direction is required")
        sens_list = []
        for d in directions:
            try:
                sens_list.append(integrate_sensitivity(
                    model, t0, tf_run, x0, w0,
                    DirectionsMatrix.probing(d), step=step,
                ))
            except Exception as e:
                raise type(e)(
                    f"direction {tuple(d)}: {e}"
                ) from e
    return classify_from_sensitivities(
        model, sens_list, sample_times, eps_rank, eps_piv
    )
