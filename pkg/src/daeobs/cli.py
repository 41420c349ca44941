"""Command-line entry point: ``daeobs {sim,obs,sekf}``.

Wires model documents (or builtins) to DAE simulation, observability
reports, and filter runs, writing delimited/JSON artifacts that embed
the fully resolved run configuration.  Exit codes: 0 success, 1
configuration/parse error, 2 numeric failure.  Diagnostics go to
stderr only.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import (
    DaeError,
    EvalDomainError,
    ExprSyntaxError,
    ModelError,
)
from .integrator import (
    DEFAULT_STEP,
    integrate_dae,
    trajectory_to_csv,
)
from .model import NEWTON_TOL, builtin_wind_turbine, parse_model
from .observability import (
    DEFAULT_N_SAMPLES,
    EPS_PIVOT,
    EPS_RANK,
    run_lserc,
    uniform_sample_times,
)
from .sekf import MeasurementSeries, NoiseSpec, run_sekf, synthesize_truth

BUILTINS = {
    "wind-smooth": lambda: builtin_wind_turbine("smooth"),
    "wind-min": lambda: builtin_wind_turbine("min_threshold"),
}

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

_MODEL_SCHEMA_HELP = """\
model document schema (YAML/JSON mapping):
  name: <string>                       required
  diff_states: [<ident>, ...]          required
  alg_states: [<ident>, ...]           optional
  outputs: [<ident>, ...]              required (names for h rows)
  params: {<ident>: <number>, ...}     optional
  inputs_u: {<ident>: <expr of t>}     optional
  inputs_v: {<ident>: <expr of t>}     optional
  f: {<diff_state>: <expr>, ...}       required, one per diff state
  g: {<ident>: <expr>, ...}            one per alg state
  h: {<output>: <expr>, ...}           required
  x0: {<diff_state>: <number>, ...}    required
  w0_guess: {<alg_state>: <number>}    optional

expressions: numbers, identifiers, + - * / ^, unary minus, parentheses,
min(a,b), max(a,b), abs, exp, log, sqrt, sin, cos.
builtins: wind-smooth, wind-min
"""


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="daeobs",
        description="Simulate index-1 DAE systems, test observability, "
        "and run sensitivity-based state estimation.",
        epilog=_MODEL_SCHEMA_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--builtin", choices=sorted(BUILTINS),
                         help="built-in model name")
        src.add_argument("--model", help="path to a model document")
        p.add_argument("--t0", type=float, default=0.0)
        p.add_argument("--tf", type=float, default=1.0)
        p.add_argument("--h", type=float, default=DEFAULT_STEP,
                       help="integration step (default 1e-3)")
        p.add_argument("--newton-tol", type=float, default=NEWTON_TOL)
        p.add_argument("--out", required=True, help="output file path")
        p.add_argument("--plot", action="store_true",
                       help="also render a PNG figure next to the output")

    p_sim = sub.add_parser("sim", help="integrate the DAE, write a "
                           "trajectory CSV")
    common(p_sim)

    p_obs = sub.add_parser("obs", help="observability rank test, write a "
                           "JSON report")
    common(p_obs)
    p_obs.add_argument("--samples", type=int, default=DEFAULT_N_SAMPLES,
                       help="number of uniform sample times (default 11)")
    p_obs.add_argument("--directions", default="pm-axes",
                       help="'pm-axes' or explicit list like '1,0;0,-1'")
    p_obs.add_argument("--eps-rank", type=float, default=EPS_RANK)
    p_obs.add_argument("--eps-piv", type=float, default=EPS_PIVOT)

    p_ekf = sub.add_parser("sekf", help="sensitivity-based EKF, write run "
                           "CSV and metadata JSON")
    common(p_ekf)
    meas = p_ekf.add_mutually_exclusive_group(required=True)
    meas.add_argument("--meas", help="measurement CSV path")
    meas.add_argument("--synthesize", action="store_true",
                      help="synthesize noisy truth and measurements")
    p_ekf.add_argument("--seed", type=int, default=0)
    p_ekf.add_argument("--steps", type=int, default=50,
                       help="number of synthesized measurement steps")
    p_ekf.add_argument("--q", default="1e-4",
                       help="process noise: scalar variance or matrix file")
    p_ekf.add_argument("--r", default="1e-4",
                       help="measurement noise: scalar variance or matrix "
                       "file")
    p_ekf.add_argument("--p0", default="4",
                       help="initial covariance: scalar or matrix file")
    p_ekf.add_argument("--eps-rank", type=float, default=EPS_RANK)
    p_ekf.add_argument("--eps-piv", type=float, default=EPS_PIVOT)
    return parser


def _load_model(args):
    if args.builtin:
        return BUILTINS[args.builtin]()
    with open(args.model, encoding="utf-8") as fh:
        return parse_model(fh.read())


def _check_window(args):
    if args.tf < args.t0:
        raise ValueError(f"tf ({args.tf}) must be >= t0 ({args.t0})")
    if args.h <= 0:
        raise ValueError("h must be positive")
    if args.newton_tol <= 0:
        raise ValueError("newton-tol must be positive")


def _noise_matrix(text, n, what):
    """Scalar -> variance * I_n; otherwise a whitespace matrix file."""
    try:
        return float(text) * np.eye(n)
    except ValueError:
        pass
    mat = np.loadtxt(text, ndmin=2)
    if mat.shape != (n, n):
        raise ValueError(
            f"{what} matrix in {text!r} is {mat.shape}, expected ({n}, {n})"
        )
    return mat


def _parse_directions(text, n_x):
    if text == "pm-axes":
        return None  # run_lserc default
    dirs = []
    for part in text.split(";"):
        vec = tuple(float(p) for p in part.split(","))
        if len(vec) != n_x:
            raise ValueError(
                f"direction {part!r} has {len(vec)} entries, expected {n_x}"
            )
        dirs.append(vec)
    if not dirs:
        raise ValueError("empty directions list")
    return dirs


def _config_json(config):
    return json.dumps(config, sort_keys=True, separators=(", ", ": "))


def _base_config(args, model):
    cfg = {
        "command": args.command,
        "model": args.builtin or args.model,
        "model_name": model.name,
        "t0": args.t0,
        "tf": args.tf,
        "h": args.h,
        "newton_tol": args.newton_tol,
    }
    return cfg


def cmd_sim(args):
    model = _load_model(args)
    _check_window(args)
    config = _base_config(args, model)
    x0, w0 = _consistent(model, args)
    traj = integrate_dae(model, args.t0, args.tf, x0, w0, step=args.h,
                         newton_tol=args.newton_tol)
    with open(args.out, "w", encoding="utf-8") as fh:
        trajectory_to_csv(traj, model, fh, config_comment=_config_json(config))
    if args.plot:
        from . import plotting

        plotting.plot_trajectory(traj, model, _png_path(args.out))
    return EXIT_OK


def _consistent(model, args):
    from .integrator import consistent_start

    return consistent_start(model, args.t0, newton_tol=args.newton_tol)


def _png_path(out):
    stem = out.rsplit(".", 1)[0] if "." in out.rsplit("/", 1)[-1] else out
    return stem + ".png"


def cmd_obs(args):
    model = _load_model(args)
    _check_window(args)
    if args.samples < 2:
        raise ValueError("samples must be at least 2")
    if args.eps_rank <= 0 or args.eps_piv <= 0:
        raise ValueError("tolerances must be positive")
    if args.tf <= args.t0:
        raise ValueError("obs needs tf > t0")
    directions = _parse_directions(args.directions, model.n_x)
    config = dict(
        _base_config(args, model),
        samples=args.samples,
        directions=args.directions,
        eps_rank=args.eps_rank,
        eps_piv=args.eps_piv,
    )
    sample_times = uniform_sample_times(args.t0, args.tf, args.samples)
    report = run_lserc(
        model, directions=directions, sample_times=sample_times,
        t0=args.t0, tf=args.tf, step=args.h,
        eps_rank=args.eps_rank, eps_piv=args.eps_piv,
    )
    doc = report.to_dict()
    doc["config"] = config
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.plot:
        from . import plotting

        plotting.plot_observability(report, _png_path(args.out))
    return EXIT_OK


def _stem(out):
    return out.rsplit(".", 1)[0] if "." in out.rsplit("/", 1)[-1] else out


def cmd_sekf(args):
    model = _load_model(args)
    _check_window(args)
    if args.tf <= args.t0:
        raise ValueError("sekf needs tf > t0")
    Q = _noise_matrix(args.q, model.n_x, "Q")
    R = _noise_matrix(args.r, model.n_y, "R")
    P0 = _noise_matrix(args.p0, model.n_x, "P0")
    noise = NoiseSpec(Q=Q, R=R, seed=args.seed)
    config = dict(
        _base_config(args, model),
        seed=args.seed,
        Q=Q.tolist(),
        R=R.tolist(),
        P0=P0.tolist(),
        eps_rank=args.eps_rank,
        eps_piv=args.eps_piv,
        measurements=args.meas or f"synthesized:{args.steps}",
    )
    stem = _stem(args.out)
    truth = None
    if args.synthesize:
        if args.steps < 1:
            raise ValueError("steps must be at least 1")
        meas_times = np.linspace(args.t0, args.tf, args.steps + 1)[1:]
        truth, meas = synthesize_truth(
            model, noise, args.t0, args.tf, dt_sim=args.h,
            meas_times=meas_times, newton_tol=args.newton_tol,
        )
        with open(stem + ".truth.csv", "w", encoding="utf-8") as fh:
            trajectory_to_csv(truth, model, fh,
                              config_comment=_config_json(config))
        with open(stem + ".meas.csv", "w", encoding="utf-8") as fh:
            meas.to_csv(fh, model.outputs,
                        config_comment=_config_json(config))
    else:
        with open(args.meas, encoding="utf-8") as fh:
            meas = MeasurementSeries.from_csv(fh)
        if meas.values.shape[1] != model.n_y:
            raise ValueError(
                f"measurement file has {meas.values.shape[1]} outputs, "
                f"model has {model.n_y}"
            )
    run = run_sekf(
        model, noise, meas, args.t0, P0=P0, step=args.h,
        newton_tol=args.newton_tol, eps_rank=args.eps_rank,
        eps_piv=args.eps_piv, config=config,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        run.to_csv(fh, model, config_comment=_config_json(config))
    with open(stem + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(run.metadata(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.plot:
        from . import plotting

        prediction = integrate_dae(
            model, args.t0, args.tf, run.x0, tuple(run.w0), step=args.h,
            newton_tol=args.newton_tol,
        )
        plotting.plot_filter(run, model, _png_path(args.out),
                             truth=truth, prediction=prediction)
    return EXIT_OK


_COMMANDS = {"sim": cmd_sim, "obs": cmd_obs, "sekf": cmd_sekf}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses code 2 for usage errors; ours is 1
        raise SystemExit(EXIT_CONFIG if e.code not in (0, None) else e.code)
    try:
        return _COMMANDS[args.command](args)
    except (ExprSyntaxError, ModelError) as e:
        print(f"daeobs: model error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as e:
        print(f"daeobs: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DaeError, EvalDomainError, np.linalg.LinAlgError) as e:
        print(f"daeobs: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
