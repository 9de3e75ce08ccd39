"""Polytope computations: slices, the robust intersection, volumes, sampling.

Sets are H-polytopes ``{x : F x <= g}``. A parameter-dependent polytope
``S(xi) = {x : -1 <= P(xi) inv(W) x <= 1}`` is stored by its vertex face
matrices ``P[k]`` and the shaping matrix ``W``.
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .model import check_simplex_point

SAMPLING_CAP = 1_000_000


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HPolytope:
    F: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        if F.shape[0] != g.shape[0]:
            raise GeometryError(f"F has {F.shape[0]} rows but g has {g.shape[0]} entries")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(g))):
            raise GeometryError("polytope data must be finite")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)

    @property
    def dim(self):
        return self.F.shape[1]

    @property
    def n_rows(self):
        return self.F.shape[0]


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(hi < lo):
            raise GeometryError("box needs lower <= upper with matching shapes")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    @property
    def volume(self):
        return float(np.prod(self.upper - self.lower))

    def as_polytope(self):
        n = self.dim
        return HPolytope(np.vstack([np.eye(n), -np.eye(n)]), np.r_[self.upper, -self.lower])


@dataclass(frozen=True)
class ParamPolytope:
    P: tuple
    W: np.ndarray

    def __post_init__(self):
        P = tuple(np.atleast_2d(np.asarray(p, dtype=float)) for p in self.P)
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if not P:
            raise GeometryError("need at least one vertex face matrix")
        if any(p.shape != P[0].shape for p in P):
            raise GeometryError("vertex face matrices must share a shape")
        if W.shape != (P[0].shape[1],) * 2:
            raise GeometryError(f"W must be {P[0].shape[1]}x{P[0].shape[1]}, got {W.shape}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "W", W)

    @property
    def n_xi(self):
        return len(self.P)

    @property
    def n_p(self):
        return self.P[0].shape[0]

    @property
    def n_x(self):
        return self.W.shape[0]

    def W_inv(self):
        cond = np.linalg.cond(self.W)
        if not np.isfinite(cond) or cond > 1e12:
            raise GeometryError(f"W is singular (condition number {cond:.3g})")
        return np.linalg.inv(self.W)

    def P_at(self, xi):
        xi = check_simplex_point(xi)
        if xi.size != self.n_xi:
            raise GeometryError(f"xi has {xi.size} entries, expected {self.n_xi}")
        return sum(w * p for w, p in zip(xi, self.P))


def _symmetric(rows):
    return HPolytope(np.vstack([rows, -rows]), np.ones(2 * rows.shape[0]))


def slice_at(pp, xi):
    """The slice ``S(xi)`` as ``[P(xi) inv(W); -P(xi) inv(W)] x <= 1``."""
    return _symmetric(pp.P_at(xi) @ pp.W_inv())


def vertex_slices(pp):
    Wi = pp.W_inv()
    return [_symmetric(p @ Wi) for p in pp.P]


def robust_intersection(pp):
    """Intersection of all slices, equal to the intersection of the vertex slices."""
    Wi = pp.W_inv()
    rows = np.vstack([p @ Wi for p in pp.P])
    return _symmetric(rows)


def membership(poly, x, tol=0.0):
    x = np.asarray(x, dtype=float)
    return bool(np.all(poly.F @ x <= poly.g + tol))


def members(poly, X, tol=0.0):
    """Vectorized membership for the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return (X @ poly.F.T <= poly.g + tol).all(axis=1)


def _axis_extent(F, g, n):
    lo, hi = np.empty(n), np.empty(n)
    for i in range(n):
        c = np.zeros(n)
        c[i] = 1.0
        for sign, out in ((1.0, lo), (-1.0, hi)):
            res = linprog(sign * c, A_ub=F, b_ub=g, bounds=[(None, None)] * n, method="highs")
            if res.status == 3:
                raise GeometryError(f"set is unbounded along axis {i}")
            if res.status == 2:
                raise GeometryError("set is empty")
            if res.status != 0:
                raise GeometryError(f"LP failed along axis {i}: {res.message}")
            out[i] = sign * res.fun
    return lo, hi


def bounding_box(constraints):
    """Tight axis-aligned box around ``{x : H_x x <= 1}`` (state rows only)."""
    H = np.asarray(constraints.H_x, dtype=float)
    n = H.shape[1]
    rows = np.any(H != 0, axis=1)
    if not rows.any():
        raise GeometryError("state set is unbounded: no state constraints")
    lo, hi = _axis_extent(H[rows], np.ones(int(rows.sum())), n)
    return Box(lo, hi)


def polytope_bounding_box(poly):
    lo, hi = _axis_extent(poly.F, poly.g, poly.dim)
    return Box(lo, hi)


def is_empty(poly):
    n = poly.dim
    res = linprog(np.zeros(n), A_ub=poly.F, b_ub=poly.g, bounds=[(None, None)] * n,
                  method="highs")
    return res.status == 2


def box_vertices(box):
    n = box.dim
    corners = np.array(np.meshgrid(*[[0, 1]] * n, indexing="ij")).reshape(n, -1).T
    return np.where(corners == 1, box.upper, box.lower)


def box_vertices_and_boundary_samples(box, extra=0, seed=0):
    """Box corners followed by ``extra`` points uniform on the box surface."""
    pts = [box_vertices(box)]
    if extra > 0:
        rng = np.random.default_rng(seed)
        n = box.dim
        width = box.upper - box.lower
        # facet areas: product of the other widths
        areas = np.array([np.prod(np.delete(width, i)) for i in range(n)])
        if areas.sum() == 0:
            areas = np.ones(n)
        axis = rng.choice(n, size=extra, p=areas / areas.sum())
        side = rng.integers(0, 2, size=extra)
        X = box.lower + rng.random((extra, n)) * width
        X[np.arange(extra), axis] = np.where(side == 1, box.upper[axis], box.lower[axis])
        pts.append(X)
    return np.vstack(pts)


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    stderr: float
    samples: int
    hits: int


def mc_volume(poly, box, n_samples=100_000, seed=0, chunk=200_000):
    """Hit-or-miss estimate ``vol(B) * hits / N`` with its binomial standard error."""
    rng = np.random.default_rng(seed)
    hits, left = 0, int(n_samples)
    width = box.upper - box.lower
    while left > 0:
        m = min(chunk, left)
        X = box.lower + rng.random((m, box.dim)) * width
        hits += kernels.count_inside(poly.F, poly.g, X, 0.0)
        left -= m
    frac = hits / n_samples if n_samples else 0.0
    vol = box.volume
    se = vol * np.sqrt(frac * (1 - frac) / n_samples) if n_samples else float("inf")
    return VolumeEstimate(vol * frac, float(se), int(n_samples), int(hits))


def vertex_enumerate_2d(poly, tol=1e-9):
    """Counterclockwise vertices and shoelace area of a bounded 2-D polytope."""
    if poly.dim != 2:
        raise GeometryError("vertex enumeration is implemented for n_x = 2 only")
    F, g = poly.F, poly.g
    norms = np.linalg.norm(F, axis=1)
    keep = norms > 0
    if np.any(g[~keep] < -tol):
        raise GeometryError("polygon is empty")
    F, g = F[keep] / norms[keep, None], g[keep] / norms[keep]
    m = F.shape[0]
    i, j = np.triu_indices(m, 1)
    det = F[i, 0] * F[j, 1] - F[i, 1] * F[j, 0]
    ok = np.abs(det) > 1e-12
    i, j, det = i[ok], j[ok], det[ok]
    x = (g[i] * F[j, 1] - g[j] * F[i, 1]) / det
    y = (F[i, 0] * g[j] - F[j, 0] * g[i]) / det
    V = np.c_[x, y]
    # rows are unit-normalized, so the membership slack is a distance
    scale = max(1.0, float(np.max(np.abs(g))))
    V = V[np.all(V @ F.T <= g + tol * scale, axis=1)] if V.size else V
    if V.shape[0] < 3:
        raise GeometryError("polygon is empty, degenerate or unbounded")
    # unbounded sets have no enclosing vertex cycle; check with axis LPs
    try:
        _axis_extent(F, g, 2)
    except GeometryError as exc:
        raise GeometryError(f"polygon is not a bounded region: {exc}") from None
    c = V.mean(axis=0)
    order = np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))
    V = V[order]
    # merge duplicates produced by more than two faces meeting at a point
    uniq = [V[0]]
    for v in V[1:]:
        if np.linalg.norm(v - uniq[-1]) > 1e-9 * scale:
            uniq.append(v)
    if len(uniq) > 1 and np.linalg.norm(uniq[0] - uniq[-1]) <= 1e-9 * scale:
        uniq.pop()
    V = np.array(uniq)
    if V.shape[0] < 3:
        raise GeometryError("polygon is degenerate")
    area = polygon_area(V)
    if area <= 0:
        raise GeometryError("polygon has no interior")
    return V, area


def polygon_area(V):
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def minimal_face_pairs(pp, tol=1e-9):
    """Number of distinct, non-redundant face pairs of the robust intersection (n_x = 2)."""
    poly = robust_intersection(pp)
    V, _ = vertex_enumerate_2d(poly)
    half = poly.n_rows // 2
    F, g = poly.F[:half], poly.g[:half]
    active = set()
    for r in range(half):
        on = np.abs(V @ F[r] - g[r]) <= tol * max(1.0, np.abs(V).max())
        on |= np.abs(-V @ F[r] - g[r]) <= tol * max(1.0, np.abs(V).max())
        if on.sum() >= 2:
            direction = F[r] / np.linalg.norm(F[r])
            key = tuple(np.round(direction * np.sign(direction[np.argmax(np.abs(direction))]), 8))
            active.add(key)
    return len(active)


def sample_in_slice(pp, xi, count, seed=0, cap=SAMPLING_CAP):
    """Uniform points of ``S(xi)`` by rejection from its bounding box."""
    poly = slice_at(pp, xi)
    return sample_in_polytope(poly, count, seed, cap)


def sample_in_polytope(poly, count, seed=0, cap=SAMPLING_CAP):
    rng = np.random.default_rng(seed)
    if count <= 0:
        return np.empty((0, poly.dim))
    if is_empty(poly):
        raise GeometryError("cannot sample an empty polytope")
    box = polytope_bounding_box(poly)
    width = box.upper - box.lower
    out, tried = [], 0
    need = count
    while need > 0:
        if tried >= cap:
            if poly.dim == 2:
                return np.vstack(out + [_vertex_combinations(poly, need, rng)])
            raise GeometryError(f"rejection sampling exceeded {cap} attempts")
        m = min(max(4 * need, 1024), cap - tried)
        X = box.lower + rng.random((m, poly.dim)) * width
        tried += m
        X = X[members(poly, X)][:need]
        out.append(X)
        need -= X.shape[0]
    return np.vstack(out)


def _vertex_combinations(poly, count, rng):
    V, _ = vertex_enumerate_2d(poly)
    weights = rng.dirichlet(np.ones(V.shape[0]), size=count)
    return weights @ V


def write_polygons_csv(path, polygons):
    """``polygons``: iterable of ``(xi_index, slice_id, vertices)``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["xi_index", "slice_id", "vertex_id", "x1", "x2"])
        for xi_index, slice_id, V in polygons:
            for v, (a, b) in enumerate(np.asarray(V)):
                out.writerow([xi_index, slice_id, v, repr(float(a)), repr(float(b))])


def read_polygons_csv(path):
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["xi_index"]), row["slice_id"])
            out.setdefault(key, []).append((float(row["x1"]), float(row["x2"])))
    return {k: np.array(v) for k, v in out.items()}
