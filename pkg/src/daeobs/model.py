"""Semi-explicit DAE model definitions.

A model names its differential states, algebraic states, parameters and
input signals, and holds the f/g/h right-hand sides as expression trees
that evaluate over plain floats or LD scalars.  Models are immutable
after construction; evaluation is re-entrant.

The on-disk model document is YAML with the fields::

    name, diff_states, alg_states, outputs, params,
    inputs_u, inputs_v, f, g, h, x0, w0_guess (optional)

where f/g/h and the input signals are expression strings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import expr
from .errors import ModelError, NewtonError, RegularityError
from .ldnum import LD

_NAME_RE = re.compile(r"^[A-Za-z_]\w*$")
_RESERVED = {"t"} | set(expr.FUNCTIONS)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
COND_LIMIT = 1e12


@dataclass(frozen=True)
class DaeModel:
    name: str
    diff_states: tuple
    alg_states: tuple
    outputs: tuple
    params: dict
    inputs_u: dict  # name -> AST of t
    inputs_v: dict
    f_asts: tuple
    g_asts: tuple
    h_asts: tuple
    x0: tuple
    w0_guess: tuple | None = None
    _compiled: dict = field(default_factory=dict, repr=False, compare=False)

    # -- construction -------------------------------------------------------

    def __post_init__(self):
        self._validate()
        arg_names = ("t",) + self.diff_states + self.alg_states \
            + tuple(self.inputs_u) + tuple(self.inputs_v)
        for which in ("f", "g", "h"):
            self._compiled[which] = expr.compile_exprs(
                getattr(self, f"{which}_asts"), arg_names, subst=self.params
            )
        self._compiled["u"] = expr.compile_exprs(
            tuple(self.inputs_u.values()), ("t",), subst=self.params
        )
        self._compiled["v"] = expr.compile_exprs(
            tuple(self.inputs_v.values()), ("t",), subst=self.params
        )

    def _validate(self):
        names = list(self.diff_states) + list(self.alg_states) \
            + list(self.params) + list(self.inputs_u) + list(self.inputs_v)
        for n in names:
            if not _NAME_RE.match(n) or n in _RESERVED:
                raise ModelError(f"invalid or reserved name {n!r}")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ModelError(f"duplicate names: {dup}")
        if self.n_x < 1:
            raise ModelError("at least one differential state is required")
        if self.n_y < 1:
            raise ModelError("at least one output is required")
        if len(self.f_asts) != self.n_x:
            raise ModelError(
                f"f has {len(self.f_asts)} expressions, expected {self.n_x}"
            )
        if len(self.g_asts) != self.n_w:
            raise ModelError(
                f"g has {len(self.g_asts)} expressions, expected {self.n_w}"
            )
        if len(self.h_asts) != self.n_y:
            raise ModelError(
                f"h has {len(self.h_asts)} expressions, expected {self.n_y}"
            )
        if len(self.x0) != self.n_x:
            raise ModelError(f"x0 has {len(self.x0)} values, expected {self.n_x}")
        if self.w0_guess is not None and len(self.w0_guess) != self.n_w:
            raise ModelError(
                f"w0_guess has {len(self.w0_guess)} values, expected {self.n_w}"
            )
        allowed = set(names) | {"t"}
        for which in ("f", "g", "h"):
            for ast in getattr(self, f"{which}_asts"):
                for unknown in sorted(expr.free_variables(ast) - allowed):
                    raise ModelError(
                        f"unknown identifier {unknown!r} in {which} expression "
                        f"{expr.to_str(ast)!r}"
                    )
        for block in (self.inputs_u, self.inputs_v):
            for name, ast in block.items():
                extra = expr.free_variables(ast) - {"t"} - set(self.params)
                if extra:
                    raise ModelError(
                        f"input {name!r} may only depend on t and parameters; "
                        f"found {sorted(extra)}"
                    )

    # -- basic properties ---------------------------------------------------

    @property
    def n_x(self):
        return len(self.diff_states)

    @property
    def n_w(self):
        return len(self.alg_states)

    @property
    def n_y(self):
        return len(self.h_asts)

    def has_nonsmooth(self, which):
        return any(
            expr.count_nonsmooth(a) > 0 for a in getattr(self, f"{which}_asts")
        )

    @property
    def is_smooth(self):
        return not any(self.has_nonsmooth(w) for w in ("f", "g", "h"))

    # -- evaluation ---------------------------------------------------------

    def input_values(self, t, u_override=None, v_override=None):
        """Evaluate the input signals at time t (plain floats)."""
        if u_override is not None:
            u = tuple(u_override[n] for n in self.inputs_u)
        else:
            u = self._compiled["u"](t)
        if v_override is not None:
            v = tuple(v_override[n] for n in self.inputs_v)
        else:
            v = self._compiled["v"](t)
        return u, v

    def eval_block(self, which, t, x, w, u, v):
        """Evaluate one of f/g/h; scalars may be floats or LD values."""
        try:
            return self._compiled[which](t, *x, *w, *u, *v)
        except (ZeroDivisionError, ValueError, OverflowError):
            # re-run through the tree walker to attach source locations
            env = self._env(t, x, w, u, v)
            return tuple(
                expr.tree_eval(a, env) for a in getattr(self, f"{which}_asts")
            )

    def eval_block_tree(self, which, t, x, w, u, v, branches=None):
        """Tree-walking evaluation with optional branch control."""
        env = self._env(t, x, w, u, v)
        return tuple(
            expr.tree_eval(a, env, branches)
            for a in getattr(self, f"{which}_asts")
        )

    def _env(self, t, x, w, u, v):
        env = dict(self.params)
        env["t"] = t
        env.update(zip(self.diff_states, x))
        env.update(zip(self.alg_states, w))
        env.update(zip(self.inputs_u, u))
        env.update(zip(self.inputs_v, v))
        return env


def eval_rhs(model, which, t, x, w, u_override=None, v_override=None):
    """Evaluate the f, g, or h block of a model at (t, x, w)."""
    if which not in ("f", "g", "h"):
        raise ValueError(f"which must be one of f/g/h, got {which!r}")
    if len(x) != model.n_x or len(w) != model.n_w:
        raise ModelError(
            f"state lengths ({len(x)}, {len(w)}) do not match model "
            f"({model.n_x}, {model.n_w})"
        )
    u, v = model.input_values(t, u_override, v_override)
    return model.eval_block(which, t, x, w, u, v)


# -- document parsing -------------------------------------------------------

_DOC_FIELDS = {
    "name", "diff_states", "alg_states", "outputs", "params",
    "inputs_u", "inputs_v", "f", "g", "h", "x0", "w0_guess",
}


def _parse_expr_field(value, where):
    if not isinstance(value, str):
        raise ModelError(f"{where}: expected an expression string, got {value!r}")
    return expr.parse_expr(value)


def parse_model(text):
    """Parse a YAML model document into a validated :class:`DaeModel`."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            raise ModelError(
                f"document syntax error at line {mark.line + 1}, "
                f"col {mark.column + 1}: {e}"
            ) from e
        raise ModelError(f"document syntax error: {e}") from e
    if not isinstance(doc, dict):
        raise ModelError("model document must be a mapping")
    unknown = set(doc) - _DOC_FIELDS
    if unknown:
        raise ModelError(f"unknown document fields: {sorted(unknown)}")
    missing = {"name", "diff_states", "outputs", "f", "h", "x0"} - set(doc)
    if missing:
        raise ModelError(f"missing document fields: {sorted(missing)}")

    def names(key, default=()):
        val = doc.get(key, list(default))
        if not isinstance(val, list) or not all(isinstance(s, str) for s in val):
            raise ModelError(f"{key} must be a list of names")
        return tuple(val)

    def numbers(key, default=None):
        val = doc.get(key, default)
        if val is None:
            return None
        if not isinstance(val, list):
            raise ModelError(f"{key} must be a list of numbers")
        try:
            return tuple(float(v) for v in val)
        except (TypeError, ValueError) as e:
            raise ModelError(f"{key} must be a list of numbers") from e

    def exprs(key, default=()):
        val = doc.get(key, list(default))
        if not isinstance(val, list):
            raise ModelError(f"{key} must be a list of expression strings")
        return tuple(
            _parse_expr_field(s, f"{key}[{i}]") for i, s in enumerate(val)
        )

    def expr_map(key):
        val = doc.get(key, {})
        if val is None:
            val = {}
        if not isinstance(val, dict):
            raise ModelError(f"{key} must be a mapping of name -> expression")
        return {
            str(k): _parse_expr_field(v, f"{key}.{k}") for k, v in val.items()
        }

    params = doc.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ModelError("params must be a mapping of name -> number")
    try:
        params = {str(k): float(v) for k, v in params.items()}
    except (TypeError, ValueError) as e:
        raise ModelError("params must be a mapping of name -> number") from e

    return DaeModel(
        name=str(doc["name"]),
        diff_states=names("diff_states"),
        alg_states=names("alg_states"),
        outputs=names("outputs"),
        params=params,
        inputs_u=expr_map("inputs_u"),
        inputs_v=expr_map("inputs_v"),
        f_asts=exprs("f"),
        g_asts=exprs("g"),
        h_asts=exprs("h"),
        x0=numbers("x0"),
        w0_guess=numbers("w0_guess"),
    )


def serialize_model(model):
    """Render a model back to its YAML document form."""
    doc = {
        "name": model.name,
        "diff_states": list(model.diff_states),
        "alg_states": list(model.alg_states),
        "outputs": list(model.outputs),
        "params": dict(model.params),
        "inputs_u": {k: expr.to_str(v) for k, v in model.inputs_u.items()},
        "inputs_v": {k: expr.to_str(v) for k, v in model.inputs_v.items()},
        "f": [expr.to_str(a) for a in model.f_asts],
        "g": [expr.to_str(a) for a in model.g_asts],
        "h": [expr.to_str(a) for a in model.h_asts],
        "x0": list(model.x0),
    }
    if model.w0_guess is not None:
        doc["w0_guess"] = list(model.w0_guess)
    return yaml.safe_dump(doc, sort_keys=False)


# -- built-in wind turbine model -------------------------------------------

# Grid-connected wind turbine with integral voltage/reactive-power control.
# Injected reactive power Q = V*(Eq2 - V)/X_eq is substituted into both
# right-hand sides so the terminal voltage V is the only algebraic state.
_WIND_TURBINE_DOC = """\
name: wind_turbine_{kind}
diff_states: [V_ref, Eq2]
alg_states: [V]
outputs: [y]
params:
  K_Qi: 0.1
  K_Vi: 40.0
  R: 0.02
  X: 0.02987
  E: 1.0164
  X_eq: 0.8
  Q_cmd: 0.6484
  P: 1.0
f:
  - K_Qi * (Q_cmd - V * (Eq2 - V) / X_eq)
  - K_Vi * (V_ref - V)
g:
  - V^4 - (2 * (P * R + V * (Eq2 - V) / X_eq * X) + E^2) * V^2
    + (R^2 + X^2) * (P^2 + (V * (Eq2 - V) / X_eq)^2)
h:
  - {output}
x0: [0.5, 0.75]
w0_guess: [1.021]
"""

WIND_OUTPUTS = {
    "smooth": "Eq2 * V",
    "min_threshold": "min(V, 0.98)",
}


def builtin_wind_turbine(output_kind="smooth"):
    """Wind turbine power system model with a smooth or clipped output."""
    if output_kind not in WIND_OUTPUTS:
        raise ValueError(
            f"output_kind must be one of {sorted(WIND_OUTPUTS)}, "
            f"got {output_kind!r}"
        )
    return parse_model(
        _WIND_TURBINE_DOC.format(
            kind=output_kind, output=WIND_OUTPUTS[output_kind]
        )
    )


# -- parameter augmentation -------------------------------------------------


def augment_parameters(model, names):
    """Promote parameters to differential states with zero dynamics.

    Each named parameter becomes a trailing differential state with
    f-expression 0 and initial value equal to its current value.
    """
    names = list(names)
    unknown = [n for n in names if n not in model.params]
    if unknown:
        raise ModelError(f"unknown parameter(s): {unknown}")
    if not names:
        return model
    params = {k: v for k, v in model.params.items() if k not in names}
    zero = expr.parse_expr("0")
    return DaeModel(
        name=model.name,
        diff_states=model.diff_states + tuple(names),
        alg_states=model.alg_states,
        outputs=model.outputs,
        params=params,
        inputs_u=model.inputs_u,
        inputs_v=model.inputs_v,
        f_asts=model.f_asts + tuple(zero for _ in names),
        g_asts=model.g_asts,
        h_asts=model.h_asts,
        x0=model.x0 + tuple(model.params[n] for n in names),
        w0_guess=model.w0_guess,
    )


# -- consistent initialization ----------------------------------------------


def algebraic_jacobian(model, t, x, w, u=None, v=None):
    """One Clarke element of (dg/dx, dg/dw) at a point.

    Obtained by evaluating g over LD scalars carrying identity probing
    directions; nonsmooth branches are fixed lexicographically.
    """
    if u is None or v is None:
        u, v = model.input_values(t)
    n_x, n_w = model.n_x, model.n_w
    k = n_x + n_w
    x_ld = [LD(x[i], tuple(1.0 if j == i else 0.0 for j in range(k)))
            for i in range(n_x)]
    w_ld = [LD(w[i], tuple(1.0 if j == n_x + i else 0.0 for j in range(k)))
            for i in range(n_w)]
    res = model.eval_block("g", t, x_ld, w_ld, u, v)
    full = np.array([r.d for r in res], dtype=float).reshape(n_w, k)
    return full[:, :n_x], full[:, n_x:]


def consistent_init(model, t0, x0, w_guess=None, tol=NEWTON_TOL,
                    max_iter=NEWTON_MAX_ITER):
    """Solve g(x0, w, v(t0)) = 0 for w by damped semismooth Newton.

    Returns the root in the basin of the supplied guess (falling back to
    the model's ``w0_guess``).  Raises :class:`NewtonError` on
    non-convergence and :class:`RegularityError` when the algebraic
    Jacobian is singular or ill-conditioned.
    """
    n_w = model.n_w
    if n_w == 0:
        return ()
    if w_guess is None:
        w_guess = model.w0_guess
    if w_guess is None:
        raise NewtonError("no algebraic initial guess supplied")
    u, v = model.input_values(t0)
    w = np.array(w_guess, dtype=float)
    x0 = tuple(float(xi) for xi in x0)

    def residual(wv):
        return np.array(
            model.eval_block("g", t0, x0, tuple(wv), u, v), dtype=float
        )

    r = residual(w)
    rn = float(np.max(np.abs(r))) if r.size else 0.0
    for _ in range(max_iter):
        if rn <= tol:
            return tuple(float(wi) for wi in w)
        _, gw = algebraic_jacobian(model, t0, x0, tuple(w), u, v)
        if not np.all(np.isfinite(gw)) or np.linalg.cond(gw) > COND_LIMIT:
            raise RegularityError(
                f"algebraic Jacobian ill-conditioned at t={t0} "
                f"(cond estimate {np.linalg.cond(gw):.3e})"
            )
        step = np.linalg.solve(gw, -r)
        lam = 1.0
        while lam >= 1e-10:
            w_new = w + lam * step
            try:
                r_new = residual(w_new)
            except Exception:
                lam *= 0.5
                continue
            rn_new = float(np.max(np.abs(r_new)))
            if rn_new <= (1.0 - 1e-4 * lam) * rn or rn_new <= tol:
                break
            lam *= 0.5
        else:
            raise NewtonError(
                f"line search stalled at t={t0}; residual {rn:.3e}",
                residual=rn, t=t0,
            )
        w, r, rn = w_new, r_new, rn_new
    if rn <= tol:
        return tuple(float(wi) for wi in w)
    raise NewtonError(
        f"no convergence after {max_iter} iterations at t={t0}; "
        f"final residual {rn:.3e}",
        residual=rn, t=t0,
    )


def g_residual_norm(model, t, x, w):
    """Max-norm of the algebraic residual at a point."""
    if model.n_w == 0:
        return 0.0
    u, v = model.input_values(t)
    r = model.eval_block("g", t, tuple(x), tuple(w), u, v)
    return max(abs(float(ri)) for ri in r)
