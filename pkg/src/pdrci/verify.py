"""Statistical certification of synthesized sets and gains.

Each check samples states, disturbances and scheduling values, propagates
the closed loop and counts violations. The synthesis already certifies the
properties through the SDP; these checks provide independent evidence.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry, kernels
from .model import evaluate_system, vanderpol_step
from .polya import enumerate_exponents, polya_combine

INVARIANCE_TOL = 1e-6


@dataclass
class CheckResult:
    trials: int = 0
    violations: int = 0
    worst_margin: float = float("-inf")  # max of (value - bound); <= tol means pass
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {"trials": self.trials, "violations": self.violations,
                "worst_margin": _finite(self.worst_margin), **self.detail}


def _finite(v):
    v = float(v)
    return v if np.isfinite(v) else None


@dataclass
class VerificationReport:
    checks: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    @property
    def trials(self):
        return sum(c.trials for c in self.checks.values())

    @property
    def violations(self):
        return sum(c.violations for c in self.checks.values())

    @property
    def passed(self):
        return self.violations == 0

    def merge(self, other):
        self.checks.update(other.checks)
        self.seeds.update(other.seeds)
        return self

    def to_dict(self):
        return {"passed": self.passed, "trials": self.trials, "violations": self.violations,
                "checks": {k: c.to_dict() for k, c in self.checks.items()},
                "seeds": dict(self.seeds)}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class Trajectory:
    x: np.ndarray    # (T+1, n_x)
    u: np.ndarray    # (T, n_u)
    w: np.ndarray    # (T, n_w)
    z: np.ndarray    # (T, n_z)
    xi: np.ndarray   # (T, N_xi)

    @property
    def horizon(self):
        return self.u.shape[0]

    def cost(self):
        return float(np.sum(self.z ** 2))


def write_trajectories_csv(path, trajectories):
    """``trajectories``: iterable of ``(run_id, Trajectory)``; one row per step."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        header = None
        for run, tr in trajectories:
            nx, nu = tr.x.shape[1], tr.u.shape[1]
            if header is None:
                header = (["run", "t"] + [f"x{i + 1}" for i in range(nx)]
                          + [f"u{i + 1}" for i in range(nu)]
                          + [f"xi{i + 1}" for i in range(tr.xi.shape[1])])
                out.writerow(header)
            for t in range(tr.horizon + 1):
                u = tr.u[t] if t < tr.horizon else np.full(nu, np.nan)
                xi = tr.xi[t] if t < tr.horizon else np.full(tr.xi.shape[1], np.nan)
                out.writerow([run, t] + [repr(float(v)) for v in np.r_[tr.x[t], u, xi]])


# -- sampling helpers --------------------------------------------------------------

def sample_simplex(rng, n, dim):
    return rng.dirichlet(np.ones(dim), size=n)


def _candidate_box(pp, problem):
    """Axis box containing every slice: state constraints joined with grid-slice boxes."""
    lo, hi = [], []
    try:
        b = geometry.bounding_box(problem.constraints)
        lo.append(b.lower)
        hi.append(b.upper)
    except geometry.GeometryError:
        pass
    grid = [np.asarray(beta, float) / 8 for beta in enumerate_exponents(8, pp.n_xi)]
    for xi in grid:
        b = geometry.polytope_bounding_box(geometry.slice_at(pp, xi))
        lo.append(1.5 * b.lower)
        hi.append(1.5 * b.upper)
    return geometry.Box(np.min(lo, axis=0), np.max(hi, axis=0))


def _stacked_rows(pp):
    Wi = pp.W_inv()
    return np.stack([p @ Wi for p in pp.P])     # (N_xi, n_p, n_x)


def _gauge(rows, xi, X):
    """``max |P(xi) inv(W) x|`` per row of ``X`` with per-row ``xi``."""
    R = np.einsum("rk,kij->rij", xi, rows)
    return np.max(np.abs(np.einsum("rij,rj->ri", R, X)), axis=1)


def sample_states_in_slices(pp, problem, xi, rng, max_rounds=10_000):
    """One uniform point of ``S(xi[r])`` for every row ``r`` (rejection sampling)."""
    box = _candidate_box(pp, problem)
    rows = _stacked_rows(pp)
    n = xi.shape[0]
    X = np.empty((n, pp.n_x))
    todo = np.arange(n)
    width = box.upper - box.lower
    for _ in range(max_rounds):
        if todo.size == 0:
            return X
        cand = box.lower + rng.random((todo.size, pp.n_x)) * width
        ok = _gauge(rows, xi[todo], cand) <= 1.0
        X[todo[ok]] = cand[ok]
        todo = todo[~ok]
    raise geometry.GeometryError("rejection sampling of slices did not terminate; "
                                 "is a slice empty?")


def _disturbance_samples(G, n, rng, extreme_fraction=0.5):
    """Disturbances with ``-1 <= G w <= 1``: uniform, plus a share at the vertices."""
    n_w = G.shape[1]
    poly = geometry.HPolytope(np.vstack([G, -G]), np.ones(2 * G.shape[0]))
    W = geometry.sample_in_polytope(poly, n, seed=int(rng.integers(2 ** 31)))
    if G.shape[0] == n_w:
        n_ext = int(extreme_fraction * n)
        signs = rng.choice([-1.0, 1.0], size=(n_ext, n_w))
        W[:n_ext] = np.linalg.solve(G, signs.T).T
    return W


def _stack_vertices(system):
    return tuple(np.stack(m) for m in (system.A, system.B, system.E, system.C, system.D))


# -- checks --------------------------------------------------------------------------

def check_invariance(result, problem, n_trials=100_000, seed=0, tol=INVARIANCE_TOL,
                     adversarial=False, K=None):
    """Sample (xi, x in S(xi), w, xi+) and test the successor against S(xi+).

    The successor is tested against every vertex slice as well, i.e. against
    all possible ``xi+`` at once (the vertex slices intersect to the
    smallest slice family member).
    """
    pp = result.polytope
    K = result.K if K is None else K
    rng = np.random.default_rng(seed)
    sys = problem.system
    A, B, E, _, _ = _stack_vertices(sys)
    Ks = np.stack(K)
    rows = _stacked_rows(pp)
    out = CheckResult(detail={"tol": tol})
    chunk = 20_000
    left = int(n_trials)
    while left > 0:
        m = min(chunk, left)
        left -= m
        if adversarial:
            xi = np.eye(sys.n_xi)[rng.integers(sys.n_xi, size=m)]
        else:
            xi = sample_simplex(rng, m, sys.n_xi)
        X = sample_states_in_slices(pp, problem, xi, rng)
        Wd = _disturbance_samples(problem.constraints.G, m, rng)
        # K(xi) = sum xi_k K^k, so B(xi) K(xi) carries the cross terms
        Bx = np.einsum("rk,kij->rij", xi, B)
        Kx = np.einsum("rk,kij->rij", xi, Ks)
        Acl = np.einsum("rk,kij->rij", xi, A) + np.einsum("rij,rjl->ril", Bx, Kx)
        Xn = np.einsum("rij,rj->ri", Acl, X) + np.einsum(
            "rij,rj->ri", np.einsum("rk,kij->rij", xi, E), Wd)
        xi_next = sample_simplex(rng, m, sys.n_xi)
        g_next = _gauge(rows, xi_next, Xn)
        g_vert = np.max(np.abs(np.einsum("kij,rj->rki", rows, Xn)), axis=(1, 2))
        margin = np.maximum(g_next, g_vert) - 1.0
        out.trials += m
        out.violations += int(np.count_nonzero(margin > tol))
        out.worst_margin = max(out.worst_margin, float(margin.max()))
    return VerificationReport({"invariance": out}, {"invariance": seed})


def _slice_points(pp, xi, n_samples, rng):
    """Enumerated vertices (n_x <= 2) or samples of the slice at ``xi``."""
    poly = geometry.slice_at(pp, xi)
    if pp.n_x == 1:
        half = 1.0 / np.max(np.abs(poly.F[:, 0]))
        return np.array([[half], [-half]])
    if pp.n_x == 2:
        return geometry.vertex_enumerate_2d(poly)[0]
    return geometry.sample_in_polytope(poly, n_samples, seed=int(rng.integers(2 ** 31)))


def check_system_constraints(result, problem, grid=None, n_samples=10_000, seed=0,
                             tol=INVARIANCE_TOL):
    """``(H_x + H_u K(xi)) x <= 1`` on each slice of a simplex grid."""
    from .synthesis import make_simplex_grid
    pp = result.polytope
    con = problem.constraints
    grid = make_simplex_grid(pp.n_xi, 8) if grid is None else grid
    rng = np.random.default_rng(seed)
    is_input = np.any(con.H_u != 0, axis=1)
    res = {"input-constraints": CheckResult(detail={"tol": tol}),
           "state-constraints": CheckResult(detail={"tol": tol})}
    for xi in grid:
        X = _slice_points(pp, xi, n_samples, rng)
        H = con.H_x + con.H_u @ result.gain_at(xi)
        val = X @ H.T - 1.0                          # (points, n_h)
        for name, mask in (("input-constraints", is_input), ("state-constraints", ~is_input)):
            if not mask.any():
                continue
            m = val[:, mask].max(axis=1)
            c = res[name]
            c.trials += m.size
            c.violations += int(np.count_nonzero(m > tol))
            c.worst_margin = max(c.worst_margin, float(m.max()))
    return VerificationReport(res, {"system-constraints": seed})


def check_performance(result, problem, gamma, n_runs=100, horizon=200, seed=0,
                      tol=1e-6, tail_tol=1e-3):
    """Closed-loop cost ``sum ||z||^2`` from states of ``S(xi(0))`` with ``w = 0``."""
    pp = result.polytope
    sys = problem.system
    rng = np.random.default_rng(seed)
    A, B, E, C, D = _stack_vertices(sys)
    xi = sample_simplex(rng, n_runs * horizon, sys.n_xi).reshape(n_runs, horizon, sys.n_xi)
    x0 = sample_states_in_slices(pp, problem, xi[:, 0], rng)
    w = np.zeros((n_runs, horizon, sys.n_w))
    X, cost = kernels.rollout_lpv(A, B, E, C, D, np.stack(result.K), x0, xi, w)
    final = cost[:, -1]
    tail = np.linalg.norm(X[:, -1], axis=1)
    diverged = ~np.isfinite(final)
    bad = diverged | (final > gamma + tol) | (tail >= tail_tol)
    out = CheckResult(trials=n_runs, violations=int(np.count_nonzero(bad)),
                      worst_margin=float(np.nanmax(np.where(diverged, np.inf, final)) - gamma),
                      detail={"gamma": gamma, "max_cost": _finite(np.nanmax(final)),
                              "max_tail_norm": _finite(np.nanmax(tail)), "horizon": horizon})
    return VerificationReport({"performance": out}, {"performance": seed})


def simulate_closed_loop(problem, gains, x0, schedule, w=None, T=None, nonlinear=None):
    """Closed-loop recursion with ``u = K(xi) x``.

    ``schedule`` is an array of simplex points (T x N_xi) or a callable
    ``xi(x)`` (a qLPV map). ``nonlinear(x, u)`` optionally replaces the
    vertex interpolation for the state update (e.g. the plant a qLPV model
    embeds).
    """
    sys = problem.system
    x = np.asarray(x0, dtype=float).ravel()
    callable_schedule = callable(schedule)
    if T is None:
        if callable_schedule:
            raise ValueError("a horizon T is needed with a state-dependent schedule")
        T = len(schedule)
    w = np.zeros((T, sys.n_w)) if w is None else np.asarray(w, dtype=float).reshape(T, sys.n_w)
    Ks = np.stack(gains)
    xs, us, zs, xis = [x], [], [], []
    for t in range(T):
        xi = schedule(x) if callable_schedule else np.asarray(schedule[t], dtype=float)
        A, B, E, C, D = evaluate_system(sys, xi)
        u = np.tensordot(xi, Ks, axes=1) @ x
        z = C @ x + D @ u
        if nonlinear is not None:
            x = np.asarray(nonlinear(x, u), dtype=float) + E @ w[t]
        else:
            x = A @ x + B @ u + E @ w[t]
        xs.append(x)
        us.append(u)
        zs.append(z)
        xis.append(xi)
    return Trajectory(np.array(xs), np.array(us), w, np.array(zs), np.array(xis))


def vanderpol_plant(problem):
    """The nonlinear oscillator behind the Van der Pol qLPV preset."""
    mu = problem.qlpv.params.get("mu", 2.0)
    dt = problem.qlpv.params.get("dt", 0.1)
    return lambda x, u: vanderpol_step(x, float(np.ravel(u)[0]), mu=mu, dt=dt)


def check_qlpv_vertices(result, problem, steps=300, tol=INVARIANCE_TOL):
    """Simulate the scheduled closed loop from every vertex of the robust set (n_x = 2)."""
    poly = result.robust_set()
    V, _ = geometry.vertex_enumerate_2d(poly)
    plant = vanderpol_plant(problem) if problem.qlpv.preset == "vanderpol" else None
    u_max = _input_bound_rows(problem)
    set_check = CheckResult(detail={"tol": tol, "steps": steps})
    input_check = CheckResult(detail={"tol": tol})
    trajectories = []
    for run, v in enumerate(V):
        tr = simulate_closed_loop(problem, result.K, v, problem.qlpv, T=steps, nonlinear=plant)
        trajectories.append((run, tr))
        m = np.max(tr.x @ poly.F.T - poly.g, axis=1)
        set_check.trials += m.size
        set_check.violations += int(np.count_nonzero(m > tol))
        set_check.worst_margin = max(set_check.worst_margin, float(m.max()))
        if u_max is not None:
            Hu, = u_max
            um = np.max(tr.u @ Hu.T - 1.0, axis=1)
            input_check.trials += um.size
            input_check.violations += int(np.count_nonzero(um > tol))
            input_check.worst_margin = max(input_check.worst_margin, float(um.max()))
    checks = {"qlpv-set": set_check}
    if u_max is not None:
        checks["qlpv-input"] = input_check
    return VerificationReport(checks), trajectories


def _input_bound_rows(problem):
    con = problem.constraints
    rows = np.any(con.H_u != 0, axis=1) & ~np.any(con.H_x != 0, axis=1)
    if not rows.any():
        return None
    return (con.H_u[rows],)


def verify_all(result, problem, n_trials=100_000, seed=0, gamma=None):
    """Invariance, system constraints, performance (if certified) and qLPV runs."""
    report = check_invariance(result, problem, n_trials, seed)
    report.merge(check_system_constraints(result, problem, seed=seed + 1))
    if gamma is None and problem.performance.enabled:
        gamma = problem.performance.gamma
    if gamma is not None:
        report.merge(check_performance(result, problem, gamma, seed=seed + 2))
    if problem.qlpv is not None and problem.system.n_x == 2:
        report.merge(check_qlpv_vertices(result, problem)[0])
    return report


# -- matrix-bound and assembly property checks ----------------------------------------------------

def check_linearization_bound(samples=200, seed=0, n=4, tol=1e-9):
    """``L' inv(M) L >= He(L' Y) - Y' M Y`` on random instances.

    Returns ``(passed, worst smallest eigenvalue)``; the difference is
    ``(inv(M) L - Y)' M (inv(M) L - Y)``, so it is PSD for every ``Y``.
    """
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(samples):
        L = rng.standard_normal((n, n))
        Y = rng.standard_normal((n, n))
        R = rng.standard_normal((n, n))
        M = R @ R.T + 0.1 * np.eye(n)
        lhs = L.T @ np.linalg.solve(M, L)
        rhs = L.T @ Y + Y.T @ L - Y.T @ M @ Y
        diff = lhs - rhs
        scale = max(1.0, np.abs(lhs).max(), np.abs(rhs).max())
        worst = min(worst, np.linalg.eigvalsh(0.5 * (diff + diff.T))[0] / scale)
    return bool(worst >= -tol), float(worst)


def _poly_mul(p, q):
    out = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = tuple(a + b for a, b in zip(ea, eb))
            out[e] = out[e] + ca * cb if e in out else ca * cb
    return out


def expand_polya(blocks, d, r):
    """Coefficients of ``(sum xi)^d * sum_{k,l} xi_k xi_l B(k,l)`` by direct expansion."""
    unit = [tuple(int(i == k) for i in range(r)) for k in range(r)]
    poly = {}
    for k in range(r):
        for l in range(r):
            e = tuple(a + b for a, b in zip(unit[k], unit[l]))
            poly[e] = poly[e] + blocks[k][l] if e in poly else blocks[k][l]
    lin = {u: 1 for u in unit}
    for _ in range(d):
        poly = _poly_mul(poly, lin)
    return poly


def check_assembly_oracle(d_max=3, n_xi_max=3, seed=0, size=3):
    """Compare lifted coefficients with a direct polynomial expansion (exact integers)."""
    rng = np.random.default_rng(seed)
    for r in range(1, n_xi_max + 1):
        for d in range(0, d_max + 1):
            blocks = [[rng.integers(-9, 10, size=(size, size)).astype(object) for _ in range(r)]
                      for _ in range(r)]
            lifted = polya_combine(lambda k, l: blocks[k][l], d, r)
            direct = expand_polya(blocks, d, r)
            for beta, coeff in zip(enumerate_exponents(d + 2, r), lifted):
                ref = direct.get(beta, np.zeros((size, size), dtype=object))
                got = np.zeros((size, size), dtype=object) if coeff is None else coeff
                if not np.array_equal(np.asarray(got, dtype=object), np.asarray(ref, dtype=object)):
                    return False
    return True
