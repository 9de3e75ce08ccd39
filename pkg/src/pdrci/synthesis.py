"""Two-stage iterative synthesis of parameter-dependent invariant polytopes.

Stage 1 fixes the face matrix to ``P_init`` and grows the shaping matrix
``W`` (log-det of ``W + W'`` first, then a determinant-increase sequence).
Stage 2 fixes ``W`` and optimizes the vertex face matrices ``P[k]`` against a
sampled volume surrogate, re-linearizing around each new solution.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace

import cvxpy as cp
import numpy as np

from . import geometry, lmi
from .conic import ConicProgram, Tolerances, solve
from .polya import enumerate_exponents

log = logging.getLogger(__name__)


class SynthesisError(RuntimeError):
    """Raised when a stage cannot produce any certified iterate."""

    def __init__(self, message, status=None, stage=None):
        super().__init__(message)
        self.status = status
        self.stage = stage


@dataclass
class SynthesisOptions:
    n_p: int = 4
    d: int = 1
    iters_stage1: int = 10
    iters_stage2: int = 60
    epsilon: float = 1e-7
    grid_resolution: int = 4
    extra_boundary_samples: int = 64
    gamma: float = None
    seed: int = 0
    convergence_tol: float = 0.0
    mc_samples: int = 100_000
    shared_Q: bool = True
    solver: str = "CLARABEL"
    feasibility_tol: float = 1e-7

    def validate(self, n_x):
        if self.n_p < n_x:
            raise ValueError(f"n_p = {self.n_p} must be at least n_x = {n_x}")
        if self.d < 0:
            raise ValueError("Polya degree d must be nonnegative")
        if self.iters_stage1 < 1 or self.iters_stage2 < 1:
            raise ValueError("iteration budgets must be at least 1")
        if self.grid_resolution < 1:
            raise ValueError("grid resolution must be at least 1")
        if self.extra_boundary_samples < 0:
            raise ValueError("extra_boundary_samples must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class IterationRecord:
    iter: int
    stage: int
    detW: float
    sigma_sum: float
    mc_volume: float
    exact_area: float
    solver_status: str
    wall_s: float

    FIELDS = ("iter", "stage", "detW", "sigma_sum", "mc_volume", "exact_area",
              "solver_status", "wall_s")

    def as_row(self):
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class SynthesisState:
    P: list
    W: np.ndarray
    Kbar: list
    X: list
    Y: list
    Lam0: list
    Pi0: list
    Ups0: np.ndarray = None
    stage1_iters: int = 0
    stage2_iters: int = 0
    records: list = field(default_factory=list)
    objective: float = float("nan")
    statuses: list = field(default_factory=list)

    @property
    def K(self):
        Wi = np.linalg.inv(self.W)
        return [Kb @ Wi for Kb in self.Kbar]

    @property
    def W_condition(self):
        return float(np.linalg.cond(self.W))

    def polytope(self):
        return geometry.ParamPolytope(tuple(self.P), self.W)


@dataclass
class SynthesisResult:
    polytope: geometry.ParamPolytope
    K: list
    gamma_certified: bool
    trace: list
    state: SynthesisState
    options: SynthesisOptions
    robust_only: bool = False
    problem: object = None

    def robust_set(self):
        return geometry.robust_intersection(self.polytope)

    def gain_at(self, xi):
        return sum(w * k for w, k in zip(np.asarray(xi, dtype=float), self.K))


# -- initial face matrix and parameter grid --------------------------------------

def _fibonacci_hemisphere(n_p):
    """Deterministic, well-spread unit normals in the upper half of the 3-D sphere."""
    golden = math.pi * (3.0 - math.sqrt(5.0))
    rows = []
    for i in range(n_p):
        z = 1.0 - (i + 0.5) / n_p  # in (0, 1)
        r = math.sqrt(max(0.0, 1.0 - z * z))
        rows.append([r * math.cos(golden * i), r * math.sin(golden * i), z])
    return np.array(rows)


def select_initial_P(n_p, n_x):
    """Face normals spread over a half sphere (each row also defines its negative)."""
    if n_p < n_x:
        raise ValueError(f"n_p = {n_p} must be at least n_x = {n_x}")
    if n_x == 1:
        return np.ones((n_p, 1))
    if n_x == 2:
        ang = np.pi * np.arange(n_p) / n_p
        return np.c_[np.cos(ang), np.sin(ang)]
    if n_x == 3:
        P = _fibonacci_hemisphere(n_p)
    else:
        rng = np.random.default_rng(12345 + 7919 * n_x + n_p)
        P = rng.standard_normal((n_p, n_x))
    # the coordinate axes guarantee full rank
    P[:n_x] = np.eye(n_x) if np.linalg.matrix_rank(P) < n_x else P[:n_x]
    return P / np.linalg.norm(P, axis=1, keepdims=True)


def make_simplex_grid(n_xi, resolution):
    """Uniform simplex lattice ``beta / resolution``; always contains the vertices."""
    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    return [np.asarray(beta, dtype=float) / resolution
            for beta in enumerate_exponents(resolution, n_xi)]


# -- volume surrogate -----------------------------------------------------------

@dataclass
class VolumeCost:
    sigma: object
    objective: object
    n_constraints: int


def build_volume_cost(program, P, W, samples, grid):
    """Register ``sigma`` and ``+-P(xi_m) inv(W) x_n - 1 <= sigma_mn`` on ``program``.

    ``P`` holds the vertex face matrices (cvxpy or numpy). Returns the sigma
    variable (grid x sample) and the objective ``sum(sigma)``.
    """
    cond = np.linalg.cond(W)
    if not np.isfinite(cond) or cond > 1e12:
        raise geometry.GeometryError(f"W is singular (condition number {cond:.3g})")
    Wi = np.linalg.inv(W)
    Xt = Wi @ np.asarray(samples, dtype=float).T     # n_x x N_sigma
    n_m, n_s = len(grid), Xt.shape[1]
    sigma = program.nonneg("sigma", n_m * n_s)
    sig = cp.reshape(sigma, (n_m, n_s), order="C")
    count = 0
    for m, xi in enumerate(grid):
        Pm = sum(float(w) * Pk for w, Pk in zip(xi, P) if w != 0)
        vals = Pm @ Xt                                # n_p x N_sigma
        n_p = vals.shape[0]
        row = cp.reshape(sig[m, :], (1, n_s), order="C")
        bcast = np.ones((n_p, 1)) @ row
        program.geq(f"vol+[m={m}]", bcast - vals + 1.0, family=lmi.VOLUME)
        program.geq(f"vol-[m={m}]", bcast + vals + 1.0, family=lmi.VOLUME)
        count += 2 * n_p * n_s
    return VolumeCost(sig, cp.sum(sigma), count)


def sigma_sum_at(P, W, samples, grid):
    """Optimal ``sum(sigma)`` for fixed ``P`` and ``W`` (closed form)."""
    Xt = np.linalg.inv(W) @ np.asarray(samples, dtype=float).T
    total = 0.0
    for xi in grid:
        Pm = sum(float(w) * Pk for w, Pk in zip(xi, P))
        total += float(np.maximum(np.max(np.abs(Pm @ Xt), axis=0) - 1.0, 0.0).sum())
    return total


# -- helpers -----------------------------------------------------------------------

def _tolerances(opts):
    return Tolerances(feasibility=opts.feasibility_tol, solver=opts.solver)


def _problem_with_gamma(problem, opts):
    """Enable the performance bound requested in ``opts``.

    The cost bound holds for disturbance-free trajectories, so the
    disturbance channel is dropped whenever performance is certified.
    """
    from .model import PerformanceSpec, without_disturbance
    if opts.gamma is not None:
        problem = replace(problem, performance=PerformanceSpec(gamma=float(opts.gamma), enabled=True))
    if problem.performance.enabled:
        problem = without_disturbance(problem)
    return problem


def _measure(state, problem, opts):
    """Volume figures for the robust intersection of the current iterate."""
    pp = state.polytope()
    poly = geometry.robust_intersection(pp)
    exact = float("nan")
    if pp.n_x == 2:
        try:
            exact = geometry.vertex_enumerate_2d(poly)[1]
        except geometry.GeometryError:
            exact = float("nan")
    box = geometry.bounding_box(problem.constraints)
    mc = geometry.mc_volume(poly, box, opts.mc_samples, seed=opts.seed).value
    return mc, exact


def _record(state, problem, opts, stage, status, wall, sigma_sum=float("nan")):
    mc, exact = _measure(state, problem, opts)
    it = len(state.records) + 1
    rec = IterationRecord(it, stage, float(abs(np.linalg.det(state.W))), float(sigma_sum),
                          float(mc), float(exact), status, float(wall))
    state.records.append(rec)
    return rec


def _diag_values(values, name):
    return np.asarray(values[name], dtype=float).ravel()


# -- stage 1 ---------------------------------------------------------------------------

def _stage1_program(problem, P_init, opts, fixed, eps, det_increase, W0=None):
    program = ConicProgram("stage1")
    lay = lmi.build_layout(program, problem, opts.n_p, 1, P_init=P_init, eps=eps,
                           det_increase=det_increase, shared_Q=opts.shared_Q)
    lmi.add_conditions(program, lmi.assemble_stage1_conditions(lay, fixed, problem, opts.d, eps))
    if det_increase:
        lin = lay.W.T @ W0 + W0.T @ lay.W - W0.T @ W0
        program.psd("det-increase", lin - lay.Z, family=lmi.DET_INCREASE)
        program.psd("Z>0", lay.Z, margin=eps, family=lmi.DET_INCREASE)
        program.maximize_logdet(lay.Z, "logdetZ")
    else:
        program.maximize_logdet(lay.W + lay.W.T, "logdetW")
    return program, lay


def _state_from_stage1(sol, lay, P_init, n_xi, problem, prev=None):
    v = sol.values
    n_p = lay.n_p
    X = [v[f"X[{i}]"] for i in range(n_p)]
    W = v["W"]
    Lam = [_diag_values(v, f"Lambda[{i}]") for i in range(n_p)]
    Pi = [_diag_values(v, f"Pi[{j}]") for j in range(lay.n_h)]
    Ups = _diag_values(v, "Upsilon") if lay.performance else None
    state = SynthesisState(
        P=[np.array(P_init, dtype=float) for _ in range(n_xi)], W=W,
        Kbar=[v[f"Kbar[{k}]"] for k in range(n_xi)], X=X,
        Y=[np.linalg.solve(Xi, W) for Xi in X], Lam0=Lam, Pi0=Pi, Ups0=Ups,
        objective=sol.objective)
    if prev is not None:
        state.records = prev.records
        state.statuses = prev.statuses
        state.stage1_iters = prev.stage1_iters
    return state


def _solve_with_retry(build, opts):
    """Solve once at ``epsilon``; on numerical failure retry once at ``10 * epsilon``."""
    tol = _tolerances(opts)
    program, lay = build(opts.epsilon)
    sol = solve(program, tol)
    if sol.status == "numerical-failure":
        log.warning("numerical failure (%s); retrying with epsilon x10", sol.stats)
        # the wider solve margin absorbs solver inaccuracy; certification
        # still checks the requested margin
        program, lay = build(10 * opts.epsilon)
        for c in program.constraints:
            if c.kind == "psd" and c.margin > 0:
                c.certify = c.margin / 10
        sol = solve(program, tol)
    return sol, program, lay


def solve_stage1_initial(problem, P_init, opts):
    """First stage-1 solve: linearization at ``Y = I``, maximize logdet(W + W')."""
    problem = _problem_with_gamma(problem, opts)
    opts.validate(problem.system.n_x)
    n_p = opts.n_p
    nx = problem.system.n_x
    fixed = lmi.FixedPoint(P0=[P_init] * problem.system.n_xi, W=None, Y=[np.eye(nx)] * n_p)
    start = time.perf_counter()
    sol, program, lay = _solve_with_retry(
        lambda eps: _stage1_program(problem, P_init, opts, fixed, eps, False), opts)
    wall = time.perf_counter() - start
    if not sol.ok:
        hint = "; try a larger n_p or Polya degree d" if sol.status == "infeasible" else ""
        raise SynthesisError(f"initial stage-1 program is {sol.status}{hint}",
                             status=sol.status, stage=1)
    state = _state_from_stage1(sol, lay, P_init, problem.system.n_xi, problem)
    state.stage1_iters = 1
    state.statuses.append(sol.status)
    _record(state, problem, opts, 1, sol.status, wall)
    return state


def iterate_stage1(problem, state, opts, iterations=None):
    """Determinant-increase passes; each keeps the previous iterate feasible."""
    problem = _problem_with_gamma(problem, opts)
    iterations = opts.iters_stage1 - 1 if iterations is None else iterations
    P_init = state.P[0]
    for _ in range(iterations):
        W0 = state.W
        Y = [np.linalg.solve(Xi, W0) for Xi in state.X]
        fixed = lmi.FixedPoint(P0=state.P, W=W0, Y=Y)
        start = time.perf_counter()
        sol, program, lay = _solve_with_retry(
            lambda eps: _stage1_program(problem, P_init, opts, fixed, eps, True, W0), opts)
        wall = time.perf_counter() - start
        if not sol.ok:
            log.warning("stage-1 iteration returned %s; keeping the last valid iterate", sol.status)
            state.statuses.append(sol.status)
            break
        prev_obj = state.objective
        new = _state_from_stage1(sol, lay, P_init, problem.system.n_xi, problem, prev=state)
        new.stage1_iters = state.stage1_iters + 1
        new.statuses.append(sol.status)
        _record(new, problem, opts, 1, sol.status, wall)
        state = new
        if opts.convergence_tol > 0 and np.isfinite(prev_obj):
            if abs(sol.objective - prev_obj) <= opts.convergence_tol * max(1.0, abs(prev_obj)):
                break
    return state


# -- stage 2 -------------------------------------------------------------------------

def _stage2_program(problem, state, opts, eps, samples, grid):
    program = ConicProgram("stage2")
    fixed = lmi.FixedPoint(P0=state.P, W=state.W, Y=state.Y, Lam0=state.Lam0,
                           Pi0=state.Pi0, Ups0=state.Ups0)
    lay = lmi.build_layout(program, problem, opts.n_p, 2, W_fixed=state.W, eps=eps,
                           shared_Q=opts.shared_Q, fixed=fixed)
    lmi.add_conditions(program, lmi.assemble_stage2_conditions(lay, fixed, problem, opts.d, eps))
    cost = build_volume_cost(program, lay.P, state.W, samples, grid)
    # the mean keeps the objective on the scale of the LMI entries
    program.minimize(cost.objective / (len(grid) * len(samples)))
    return program, lay


def volume_samples(problem, opts):
    box = geometry.bounding_box(problem.constraints)
    return geometry.box_vertices_and_boundary_samples(box, opts.extra_boundary_samples,
                                                      seed=opts.seed)


def run_stage2(problem, state, opts):
    """Stage-2 loop: volume-surrogate SDP, then re-linearize around the solution."""
    problem = _problem_with_gamma(problem, opts)
    samples = volume_samples(problem, opts)
    grid = make_simplex_grid(problem.system.n_xi, opts.grid_resolution)
    n_p, n_h = opts.n_p, problem.constraints.n_h
    prev_obj = float("nan")
    for it in range(opts.iters_stage2):
        start = time.perf_counter()
        sol, program, lay = _solve_with_retry(
            lambda eps: _stage2_program(problem, state, opts, eps, samples, grid), opts)
        wall = time.perf_counter() - start
        if not sol.ok:
            state.statuses.append(sol.status)
            if it == 0 and sol.status == "infeasible":
                raise SynthesisError("first stage-2 program is infeasible although the "
                                     "stage-1 iterate is feasible by construction",
                                     status=sol.status, stage=2)
            log.warning("stage-2 iteration returned %s; keeping the last valid iterate", sol.status)
            break
        v = sol.values
        X = [v[f"X[{i}]"] for i in range(n_p)]
        new = SynthesisState(
            P=[v[f"P[{k}]"] for k in range(problem.system.n_xi)], W=state.W,
            Kbar=[v[f"Kbar[{k}]"] for k in range(problem.system.n_xi)], X=X,
            Y=[np.linalg.solve(Xi, state.W) for Xi in X],
            Lam0=[1.0 / _diag_values(v, f"LambdaT[{i}]") for i in range(n_p)],
            Pi0=[_diag_values(v, f"Pi[{j}]") for j in range(n_h)],
            Ups0=_diag_values(v, "Upsilon") if lay.performance else None,
            stage1_iters=state.stage1_iters, stage2_iters=state.stage2_iters + 1,
            records=state.records, objective=sol.objective, statuses=state.statuses)
        new.statuses.append(sol.status)
        sigma_sum = float(np.sum(v["sigma"]))
        new.objective = sigma_sum
        _record(new, problem, opts, 2, sol.status, wall, sigma_sum=sigma_sum)
        state = new
        if opts.convergence_tol > 0 and np.isfinite(prev_obj):
            if abs(prev_obj - sigma_sum) <= opts.convergence_tol * max(1.0, abs(prev_obj)):
                break
        prev_obj = sigma_sum
    return state


def finalize(problem, state, opts, robust_only=False):
    problem = _problem_with_gamma(problem, opts)
    pp = state.polytope()
    grid = make_simplex_grid(pp.n_xi, max(opts.grid_resolution, 1))
    Wi = pp.W_inv()
    for xi in grid:
        s = np.linalg.svd(pp.P_at(xi) @ Wi, compute_uv=False)
        if s[-1] <= 1e-9:
            raise SynthesisError(f"P(xi) loses rank at xi = {xi.tolist()}", stage=2)
    return SynthesisResult(pp, state.K, bool(problem.performance.enabled), state.records,
                           state, opts, robust_only=robust_only, problem=problem)


def synthesize(problem, opts=None):
    """Full pipeline: initial face matrix, stage 1, stage 2."""
    opts = opts or SynthesisOptions()
    opts.validate(problem.system.n_x)
    P_init = select_initial_P(opts.n_p, problem.system.n_x)
    state = solve_stage1_initial(problem, P_init, opts)
    state = iterate_stage1(problem, state, opts)
    state = run_stage2(problem, state, opts)
    return finalize(problem, state, opts, robust_only=problem.qlpv is not None)
