"""Semidefinite program model with a single solver backend.

Expressions are cvxpy affine expressions; the program keeps its own
registry of variables and labelled constraints so that residuals, counts
and debug dumps do not depend on the backend.
"""
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical-failure"


# Chordal decomposition splits the small dense LMIs into many cones and stalls
# on the re-linearized programs; solving them whole is both faster and steadier.
CLARABEL_SETTINGS = (
    {"chordal_decomposition_enable": False, "max_step_fraction": 0.9},
    {"chordal_decomposition_enable": False},
    {"max_step_fraction": 0.9},
    {"chordal_decomposition_enable": False, "equilibrate_enable": False},
    {},
    {"static_regularization_constant": 1e-7},
)


@dataclass
class Tolerances:
    feasibility: float = 1e-7
    solver: str = "CLARABEL"
    max_iter: int = 400
    verbose: bool = False
    solver_precision: float = 1e-8


@dataclass
class Constraint:
    label: str
    family: str
    kind: str  # "psd", "geq", "eq"
    expr: object
    margin: float = 0.0
    # margin the residual check certifies; defaults to the solve margin
    certify: float = None

    @property
    def required_margin(self):
        return self.margin if self.certify is None else self.certify

    @property
    def dim(self):
        shape = self.expr.shape
        return shape[0] if shape else 1


@dataclass
class Solution:
    status: str
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    stats: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status in (OPTIMAL, FEASIBLE)


class ConicProgram:
    def __init__(self, name=""):
        self.name = name
        self.variables = {}
        self.scales = {}
        self.constraints = []
        self.objective = None

    # -- variables ---------------------------------------------------------
    def _register(self, name, kind, var):
        if name in self.variables:
            raise ValueError(f"variable {name!r} already registered")
        self.variables[name] = (kind, var)
        return var

    def matrix(self, name, shape):
        return self._register(name, "matrix", cp.Variable(shape, name=name))

    def symmetric(self, name, n):
        return self._register(name, "symmetric", cp.Variable((n, n), symmetric=True, name=name))

    def scalar(self, name, lower=None):
        var = self._register(name, "scalar", cp.Variable(name=name))
        if lower is not None:
            self.geq(f"{name}>={lower:g}", var, lower, family="bound")
        return var

    def diag_positive(self, name, n, lower, scale=None):
        """Vector of diagonal entries, each bounded below by ``lower``.

        With ``scale`` the solver sees ``v / scale`` instead of ``v``; choosing
        ``scale`` near the expected magnitude keeps the program well scaled.
        Returned expressions and solution values are in the original units.
        """
        var = self._register(name, "diagonal", cp.Variable(n, name=name))
        expr = var
        if scale is not None:
            scale = np.asarray(scale, dtype=float).ravel()
            if scale.shape != (n,) or np.any(scale <= 0):
                raise ValueError(f"{name}: scale must be {n} positive entries")
            self.scales[name] = scale
            expr = cp.multiply(scale, var)
        self.geq(f"{name}>={lower:g}", expr, lower, family="bound")
        return expr

    def nonneg(self, name, n):
        var = self._register(name, "nonneg", cp.Variable(n, name=name))
        self.geq(f"{name}>=0", var, 0.0, family="bound")
        return var

    def value(self, name):
        return self.variables[name][1].value

    # -- constraints ---------------------------------------------------------
    def psd(self, label, expr, margin=0.0, family="lmi"):
        if len(expr.shape) != 2 or expr.shape[0] != expr.shape[1]:
            raise ValueError(f"{label}: PSD constraint needs a square matrix, got {expr.shape}")
        self.constraints.append(Constraint(label, family, "psd", expr, margin))

    def geq(self, label, expr, rhs=0.0, family="linear"):
        self.constraints.append(Constraint(label, family, "geq", expr - rhs))

    def eq(self, label, expr, rhs=0.0, family="linear"):
        self.constraints.append(Constraint(label, family, "eq", expr - rhs))

    def count(self, family=None, kind=None):
        return sum(1 for c in self.constraints
                   if (family is None or c.family == family) and (kind is None or c.kind == kind))

    # -- objective -----------------------------------------------------------
    def minimize(self, expr):
        self.objective = ("min", expr)

    def maximize(self, expr):
        self.objective = ("max", expr)

    def maximize_logdet(self, expr, name="logdet"):
        t = reduce_logdet(self, expr, name)
        self.objective = ("max", cp.sum(t))
        return t

    # -- backend -------------------------------------------------------------
    def _cvx_constraints(self):
        out = []
        for c in self.constraints:
            if c.kind == "psd":
                # the PSD cone constrains the symmetric part of its argument
                n = c.expr.shape[0]
                out.append(c.expr - c.margin * np.eye(n) >> 0)
            elif c.kind == "geq":
                out.append(c.expr >= 0)
            else:
                out.append(c.expr == 0)
        return out

    def to_cvxpy(self):
        if self.objective is None:
            obj = cp.Minimize(0)
        elif self.objective[0] == "min":
            obj = cp.Minimize(self.objective[1])
        else:
            obj = cp.Maximize(self.objective[1])
        return cp.Problem(obj, self._cvx_constraints())

    def residuals(self):
        """Worst violation per constraint at the current variable values.

        Violations are relative to the entry scale ``max(1, max|expr|)`` so
        that the check matches the solver's relative stopping criteria.
        """
        out = {}
        for c in self.constraints:
            val = np.asarray(c.expr.value, dtype=float)
            scale = max(1.0, float(np.max(np.abs(val)))) if val.size else 1.0
            if c.kind == "psd":
                sym = 0.5 * (val + val.T)
                viol = c.required_margin - np.linalg.eigvalsh(sym)[0]
            elif c.kind == "geq":
                viol = -np.min(val)
            else:
                viol = np.max(np.abs(val))
            out[c.label] = max(float(viol), 0.0) / scale
        return out


def reduce_logdet(program, expr, name="logdet"):
    """Epigraph of ``log det(expr)`` by a lower-triangular factor.

    Adds ``T`` (lower triangular) with ``[[expr, T], [T', Diag(T)]] >= 0`` and
    ``t_i <= log T_ii``; returns the vector ``t``. ``sum(t) <= log det(expr)``
    for every feasible point, with equality reachable.
    """
    n = expr.shape[0] if expr.shape else 1
    if not expr.shape:
        expr = cp.reshape(expr, (1, 1))
    m = n * (n + 1) // 2
    tri = program._register(f"{name}.T", "matrix", cp.Variable(m, name=f"{name}.T"))
    T = cp.vec_to_upper_tri(tri, strict=False).T
    diag_T = cp.diag(T)
    t = program._register(f"{name}.t", "matrix", cp.Variable(n, name=f"{name}.t"))
    block = cp.bmat([[expr, T], [T.T, cp.diag(diag_T)]])
    program.psd(f"{name}.coupling", block, family="logdet")
    program.constraints.append(Constraint(f"{name}.exp", "logdet", "geq", cp.log(diag_T) - t))
    return t


def _settings(tol):
    if tol.solver != "CLARABEL":
        return [{"max_iters": tol.max_iter}] if tol.solver == "SCS" else [{}]
    p = tol.solver_precision
    base = {"max_iter": tol.max_iter, "tol_feas": p, "tol_gap_abs": p, "tol_gap_rel": p}
    return [{**base, **extra} for extra in CLARABEL_SETTINGS]


def _attempt(program, prob, tol):
    """Classify one finished solve: (status, worst residual, residual map)."""
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return INFEASIBLE, float("inf"), {}
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return NUMERICAL_FAILURE, float("inf"), {}
    res = program.residuals()
    worst = max(res.values(), default=0.0)
    if worst > tol.feasibility:
        return NUMERICAL_FAILURE, worst, res
    return (OPTIMAL if prob.status == cp.OPTIMAL else FEASIBLE), worst, res


def solve(program, tol=None):
    """Solve ``program`` and classify the outcome.

    Backend settings are tried in order until one returns an accurate
    optimum; otherwise the best certified attempt is kept. A point is only
    reported ``optimal``/``feasible`` when every constraint residual is within
    ``tol.feasibility``.
    """
    tol = tol or Tolerances()
    start = time.perf_counter()
    rank = {OPTIMAL: 0, FEASIBLE: 1, INFEASIBLE: 2, NUMERICAL_FAILURE: 3}
    best = None
    errors = []
    for n, settings in enumerate(_settings(tol)):
        # a fresh problem per attempt: a failed solve leaves stale solver state
        prob = program.to_cvxpy()
        try:
            prob.solve(solver=tol.solver, verbose=tol.verbose, **settings)
        except cp.error.SolverError as exc:
            errors.append(str(exc))
            continue
        status, worst, res = _attempt(program, prob, tol)
        key = (rank[status], worst)
        if best is None or key < best[0]:
            values = {name: np.array(var.value, dtype=float) * program.scales.get(name, 1.0)
                      for name, (_, var) in program.variables.items()
                      if var.value is not None}
            stats = {"solver": tol.solver, "raw_status": prob.status, "attempt": n,
                     "max_residual": worst}
            if res and worst > tol.feasibility:
                stats["worst_constraint"] = max(res, key=res.get)
            try:
                stats["iterations"] = int(prob.solver_stats.num_iters or 0)
                stats["solve_s"] = float(prob.solver_stats.solve_time or 0.0)
            except (AttributeError, TypeError):
                pass
            objective = float(prob.value) if prob.value is not None else float("nan")
            best = (key, status, values, objective, stats)
        if status in (OPTIMAL, INFEASIBLE):
            break
    wall = time.perf_counter() - start
    if best is None:
        return Solution(NUMERICAL_FAILURE, stats={"error": errors[-1] if errors else "",
                                                  "wall_s": wall})
    _, status, values, objective, stats = best
    stats["wall_s"] = wall
    if status == INFEASIBLE:
        return Solution(INFEASIBLE, stats=stats)
    return Solution(status, values, objective, stats)


def dump_program(program, path):
    """Write the program in a sparse text format (debugging aid).

    Layout: one ``var <name> <kind> <offset> <size>`` line per variable,
    then per constraint ``con <label> <cone> <dim>`` followed by
    ``<row> <col> <coef>`` triplets of the affine map (col -1 = constant).
    Rows index the column-major flattening of the constraint expression.
    """
    entries = []
    offset = 0
    for name, (kind, var) in program.variables.items():
        size = int(np.prod(var.shape)) if var.shape else 1
        entries.append((name, kind, offset, size, var))
        offset += size
    saved = [var.value for *_, var in entries]
    lines = [f"var {name} {kind} {off} {size}" for name, kind, off, size, _ in entries]

    def set_symmetric_safe(vec):
        # symmetric variables reject non-symmetric values; perturb symmetrically
        for _, kind, off, size, var in entries:
            chunk = vec[off:off + size]
            val = chunk.reshape(var.shape, order="F") if var.shape else float(chunk[0])
            if kind == "symmetric":
                val = 0.5 * (val + val.T)
            var.value = val

    try:
        zero = np.zeros(offset)
        set_symmetric_safe(zero)
        for c in program.constraints:
            if c.kind == "geq" and c.family == "logdet":
                continue  # nonlinear cone (exponential); listed by label only
            base = np.asarray(c.expr.value, dtype=float).ravel(order="F")
            cone = {"psd": "psd", "geq": "nonneg", "eq": "zero"}[c.kind]
            lines.append(f"con {c.label} {cone} {c.dim} margin={c.margin:g}")
            for r in np.nonzero(base)[0]:
                lines.append(f"{r} -1 {base[r]:.17g}")
            for col in range(offset):
                unit = np.zeros(offset)
                unit[col] = 1.0
                set_symmetric_safe(unit)
                diff = np.asarray(c.expr.value, dtype=float).ravel(order="F") - base
                for r in np.nonzero(np.abs(diff) > 0)[0]:
                    lines.append(f"{r} {col} {diff[r]:.17g}")
            set_symmetric_safe(zero)
    finally:
        for (_, _, _, _, var), val in zip(entries, saved):
            var.value = val
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
