"""Problem data for polytopic LPV synthesis: plants, constraints, presets, file I/O."""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SIMPLEX_TOL = 1e-12


class ProblemError(ValueError):
    """Invalid problem data. ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _as_matrix(value, shape, path):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemError(path, f"not a numeric matrix ({exc})") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a bare row is accepted for single-row matrices only
        if shape[0] != 1:
            raise ProblemError(path, f"expected shape {shape}, got {arr.shape}")
        arr = arr.reshape(1, -1)
    if arr.shape != tuple(shape):
        raise ProblemError(path, f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ProblemError(path, "entries must be finite")
    return arr


@dataclass(frozen=True)
class LpvSystem:
    """Vertex matrices of ``x+ = A(xi) x + B(xi) u + E(xi) w``, ``z = C(xi) x + D(xi) u``."""

    A: tuple
    B: tuple
    E: tuple
    C: tuple
    D: tuple

    def __post_init__(self):
        n = len(self.A)
        if n < 1:
            raise ProblemError("N_xi", "N_xi must be >= 1")
        for name in "BECD":
            if len(getattr(self, name)) != n:
                raise ProblemError(name, f"expected {n} vertex matrices")
        nx = self.A[0].shape[0]
        nu, nw, nz = self.B[0].shape[1], self.E[0].shape[1], self.C[0].shape[0]
        shapes = {"A": (nx, nx), "B": (nx, nu), "E": (nx, nw), "C": (nz, nx), "D": (nz, nu)}
        for name, shape in shapes.items():
            for k, mat in enumerate(getattr(self, name)):
                if mat.shape != shape:
                    raise ProblemError(f"{name}[{k}]", f"expected shape {shape}, got {mat.shape}")
                if not np.all(np.isfinite(mat)):
                    raise ProblemError(f"{name}[{k}]", "entries must be finite")

    @classmethod
    def from_arrays(cls, A, B, E=None, C=None, D=None):
        A = tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in A)
        B = tuple(np.asarray(b, dtype=float).reshape(A[0].shape[0], -1) for b in B)
        nx, nu = A[0].shape[0], B[0].shape[1]
        if E is None:
            E = [np.zeros((nx, 1))] * len(A)
        E = tuple(np.asarray(e, dtype=float).reshape(nx, -1) for e in E)
        if C is None:
            C = [np.zeros((1, nx))] * len(A)
        C = tuple(np.atleast_2d(np.asarray(c, dtype=float)) for c in C)
        if D is None:
            D = [np.zeros((C[0].shape[0], nu))] * len(A)
        D = tuple(np.asarray(dm, dtype=float).reshape(C[0].shape[0], nu) for dm in D)
        return cls(A, B, E, C, D)

    @property
    def n_xi(self):
        return len(self.A)

    @property
    def n_x(self):
        return self.A[0].shape[0]

    @property
    def n_u(self):
        return self.B[0].shape[1]

    @property
    def n_w(self):
        return self.E[0].shape[1]

    @property
    def n_z(self):
        return self.C[0].shape[0]


@dataclass(frozen=True)
class ConstraintData:
    """``[H_x H_u][x; u] <= 1`` and ``-1 <= G w <= 1``."""

    H_x: np.ndarray
    H_u: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        if self.H_x.shape[0] != self.H_u.shape[0]:
            raise ProblemError("H_u", "H_x and H_u must have the same number of rows")
        for name in ("H_x", "H_u", "G"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ProblemError(name, "entries must be finite")
        if np.linalg.matrix_rank(self.G) < self.G.shape[1]:
            raise ProblemError("G", "G must have full column rank (bounded disturbance set)")

    @property
    def n_h(self):
        return self.H_x.shape[0]

    @property
    def n_g(self):
        return self.G.shape[0]

    @classmethod
    def from_boxes(cls, x_max=None, u_max=None, w_max=None, n_x=None, n_u=None, n_w=1):
        """Normalize symmetric box bounds into rows with unit right-hand side.

        Each finite two-sided bound ``|v_i| <= m_i`` becomes the two rows
        ``v_i / m_i <= 1`` and ``-v_i / m_i <= 1``.
        """
        x_max = None if x_max is None else np.atleast_1d(np.asarray(x_max, dtype=float))
        u_max = None if u_max is None else np.atleast_1d(np.asarray(u_max, dtype=float))
        n_x = n_x if x_max is None else len(x_max)
        n_u = n_u if u_max is None else len(u_max)
        rows_x, rows_u = [], []
        for i in range(n_x if x_max is not None else 0):
            for sign in (1.0, -1.0):
                hx = np.zeros(n_x)
                hx[i] = sign / x_max[i]
                rows_x.append(hx)
                rows_u.append(np.zeros(n_u))
        for i in range(n_u if u_max is not None else 0):
            for sign in (1.0, -1.0):
                hu = np.zeros(n_u)
                hu[i] = sign / u_max[i]
                rows_x.append(np.zeros(n_x))
                rows_u.append(hu)
        if w_max is None:
            G = np.eye(n_w)
        else:
            w_max = np.atleast_1d(np.asarray(w_max, dtype=float))
            G = np.diag(1.0 / w_max)
        return cls(np.array(rows_x).reshape(-1, n_x), np.array(rows_u).reshape(-1, n_u), G)


@dataclass(frozen=True)
class PerformanceSpec:
    gamma: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and not self.gamma >= 0:
            raise ProblemError("performance.gamma", "gamma must be >= 0")


def check_simplex_point(xi, tol=SIMPLEX_TOL):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or np.any(xi < -tol) or abs(xi.sum() - 1.0) > tol:
        raise ProblemError("xi", f"{xi} is not a point of the unit simplex")
    return xi


@dataclass(frozen=True)
class QlpvMap:
    """State-dependent scheduling ``xi = xi(x)`` with its validity region.

    ``coeffs`` (optional) is a table of monomials: ``coeffs[k]`` is a list of
    ``[c, e_1, ..., e_nx]`` meaning ``xi_k = sum c * prod x_i**e_i``. The
    validity region is the box ``|x_i| <= region[i]``.
    """

    preset: str = ""
    coeffs: tuple = ()
    region: tuple = ()
    params: dict = field(default_factory=dict)

    def in_region(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.abs(x) <= np.asarray(self.region) + tol))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if not self.in_region(x):
            raise ProblemError("qlpv", f"state {x} leaves the validity region {self.region}")
        if self.preset == "vanderpol":
            mu = self.params.get("mu", 2.0)
            xi2 = mu * (1.0 - x[0] ** 2) / 2.0
            xi = np.array([1.0 - xi2, xi2])
        else:
            xi = np.array([
                sum(c[0] * np.prod(x ** np.asarray(c[1:], dtype=float)) for c in row)
                for row in self.coeffs
            ])
        # roundoff at the region boundary
        xi = np.clip(xi, 0.0, None)
        return check_simplex_point(xi / xi.sum(), tol=1e-9)

    def to_json(self):
        out = {"region": list(self.region)}
        if self.preset:
            out["preset"] = self.preset
            out["params"] = dict(self.params)
        else:
            out["poly"] = [list(map(list, row)) for row in self.coeffs]
        return out


@dataclass(frozen=True)
class ProblemSpec:
    system: LpvSystem
    constraints: ConstraintData
    performance: PerformanceSpec = PerformanceSpec()
    qlpv: QlpvMap | None = None
    name: str = ""
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        sys, con = self.system, self.constraints
        if con.H_x.shape[1] != sys.n_x:
            raise ProblemError("H_x", f"expected {sys.n_x} columns, got {con.H_x.shape[1]}")
        if con.H_u.shape[1] != sys.n_u:
            raise ProblemError("H_u", f"expected {sys.n_u} columns, got {con.H_u.shape[1]}")
        if con.G.shape[1] != sys.n_w:
            raise ProblemError("G", f"expected {sys.n_w} columns, got {con.G.shape[1]}")


def without_disturbance(problem):
    """Copy of ``problem`` with ``E = 0``; performance is certified for ``w = 0``."""
    sys = problem.system
    E = tuple(np.zeros_like(e) for e in sys.E)
    return replace(problem, system=replace(sys, E=E))


def evaluate_system(system, xi):
    """Return ``(A, B, E, C, D)`` at the simplex point ``xi``."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (system.n_xi,):
        raise ProblemError("xi", f"expected length {system.n_xi}, got shape {xi.shape}")
    return tuple(
        np.tensordot(xi, np.stack(mats), axes=1)
        for mats in (system.A, system.B, system.E, system.C, system.D)
    )


# -- presets -----------------------------------------------------------------

def demo_1d():
    """x+ = theta x + u, |theta| <= 2, |u| <= 1, with xi_1 = (2 - theta)/4."""
    system = LpvSystem.from_arrays(A=[[[-2.0]], [[2.0]]], B=[[[1.0]], [[1.0]]],
                                   C=[[[1.0]], [[1.0]]], D=[[[0.0]], [[0.0]]])
    # the plant has no state bound; a loose one keeps the sampling box finite
    constraints = ConstraintData.from_boxes(x_max=[10.0], u_max=[1.0])
    return ProblemSpec(system, constraints, name="demo-1d")


def demo_double_integrator(gamma=None):
    """Parameter-varying double integrator, |theta| <= 0.25."""
    A = [np.array([[0.75, 0.75], [0.0, 0.75]]), np.array([[1.25, 1.25], [0.0, 1.25]])]
    B = [np.array([[0.0], [0.75]]), np.array([[0.0], [1.25]])]
    E = [np.array([[1.0], [0.0]])] * 2
    # z = [Q_x^1/2 x; Q_u^1/2 u] with Q_x = I, Q_u = 0.1
    C = [np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])] * 2
    D = [np.array([[0.0], [0.0], [np.sqrt(0.1)]])] * 2
    system = LpvSystem.from_arrays(A, B, E, C, D)
    constraints = ConstraintData.from_boxes(x_max=[5.0, 5.0], u_max=[1.0], w_max=[0.25])
    if gamma is None:
        return ProblemSpec(system, constraints, name="demo-double-integrator")
    problem = ProblemSpec(system, constraints, PerformanceSpec(float(gamma), True),
                          name="demo-double-integrator")
    return without_disturbance(problem)


def demo_vanderpol(mu=2.0, dt=0.1):
    """Euler-discretized controlled Van der Pol oscillator as a qLPV system."""
    A = [np.array([[1.0, dt], [-dt, 1.0]]), np.array([[1.0, dt], [-dt, 1.0 + dt * mu]])]
    B = [np.array([[0.0], [dt]])] * 2
    system = LpvSystem.from_arrays(A, B, C=[np.eye(2)] * 2, D=[np.zeros((2, 1))] * 2)
    constraints = ConstraintData.from_boxes(x_max=[1.0, 1.0], u_max=[1.0])
    qlpv = QlpvMap(preset="vanderpol", region=(1.0, 1.0), params={"mu": mu, "dt": dt})
    return ProblemSpec(system, constraints, qlpv=qlpv, name="demo-vanderpol")


PRESETS = {
    "demo-1d": demo_1d,
    "demo-double-integrator": demo_double_integrator,
    "demo-vanderpol": demo_vanderpol,
}


def vanderpol_step(x, u, mu=2.0, dt=0.1):
    """One Euler step of the true nonlinear oscillator."""
    x1, x2 = x
    return np.array([x1 + dt * x2, x2 + dt * (-x1 + mu * (1.0 - x1 ** 2) * x2 + u)])


# -- file I/O ----------------------------------------------------------------

def problem_from_dict(data):
    for key in ("n_x", "n_u", "n_w", "n_z", "N_xi"):
        if key not in data:
            raise ProblemError(key, "missing")
        if not isinstance(data[key], int) or isinstance(data[key], bool):
            raise ProblemError(key, "must be an integer")
    nx, nu, nw, nz, nxi = (data[k] for k in ("n_x", "n_u", "n_w", "n_z", "N_xi"))
    if nxi < 1:
        raise ProblemError("N_xi", "N_xi must be >= 1")
    for key, val in (("n_x", nx), ("n_u", nu), ("n_w", nw), ("n_z", nz)):
        if val < 1:
            raise ProblemError(key, "must be >= 1")
    shapes = {"A": (nx, nx), "B": (nx, nu), "E": (nx, nw), "C": (nz, nx), "D": (nz, nu)}
    mats = {}
    for name, shape in shapes.items():
        if name not in data:
            raise ProblemError(name, "missing")
        seq = data[name]
        if not isinstance(seq, list) or len(seq) != nxi:
            raise ProblemError(name, f"expected a list of {nxi} vertex matrices")
        mats[name] = tuple(_as_matrix(m, shape, f"{name}[{k}]") for k, m in enumerate(seq))
    system = LpvSystem(**mats)
    for name in ("H_x", "H_u", "G"):
        if name not in data:
            raise ProblemError(name, "missing")
    H_x = np.array(data["H_x"], dtype=float).reshape(-1, nx)
    H_u = _as_matrix(data["H_u"], (H_x.shape[0], nu), "H_u")
    G = np.array(data["G"], dtype=float).reshape(-1, nw)
    constraints = ConstraintData(H_x, H_u, G)
    perf = PerformanceSpec()
    if data.get("performance") is not None:
        if "gamma" not in data["performance"]:
            raise ProblemError("performance.gamma", "missing")
        perf = PerformanceSpec(float(data["performance"]["gamma"]), True)
    qlpv = None
    if data.get("qlpv") is not None:
        q = data["qlpv"]
        region = tuple(float(v) for v in q.get("region", [np.inf] * nx))
        if "preset" in q:
            qlpv = QlpvMap(preset=q["preset"], region=region, params=dict(q.get("params", {})))
        elif "poly" in q:
            coeffs = tuple(tuple(tuple(float(c) for c in term) for term in row) for row in q["poly"])
            if len(coeffs) != nxi:
                raise ProblemError("qlpv.poly", f"expected {nxi} rows")
            qlpv = QlpvMap(coeffs=coeffs, region=region)
        else:
            raise ProblemError("qlpv", "needs 'preset' or 'poly'")
    return ProblemSpec(system, constraints, perf, qlpv, name=data.get("name", ""),
                       options=dict(data.get("options", {})))


def problem_to_dict(problem):
    sys, con = problem.system, problem.constraints
    out = {
        "name": problem.name,
        "n_x": sys.n_x, "n_u": sys.n_u, "n_w": sys.n_w, "n_z": sys.n_z, "N_xi": sys.n_xi,
        "A": [m.tolist() for m in sys.A],
        "B": [m.tolist() for m in sys.B],
        "E": [m.tolist() for m in sys.E],
        "C": [m.tolist() for m in sys.C],
        "D": [m.tolist() for m in sys.D],
        "H_x": con.H_x.tolist(), "H_u": con.H_u.tolist(), "G": con.G.tolist(),
    }
    if problem.performance.enabled:
        out["performance"] = {"gamma": problem.performance.gamma}
    if problem.qlpv is not None:
        out["qlpv"] = problem.qlpv.to_json()
    if problem.options:
        out["options"] = dict(problem.options)
    return out


def load_problem(path_or_preset):
    """Load a problem file, or build a preset when given a preset name."""
    if str(path_or_preset) in PRESETS:
        return PRESETS[str(path_or_preset)]()
    path = Path(path_or_preset)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemError("<file>", f"parse error: {exc}") from None
    if not isinstance(data, dict):
        raise ProblemError("<file>", "top level must be a JSON object")
    return problem_from_dict(data)


def save_problem(problem, path):
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2))
