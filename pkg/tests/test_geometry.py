import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdrci import geometry, kernels
from pdrci.geometry import (Box, GeometryError, HPolytope, ParamPolytope, bounding_box,
                            box_vertices_and_boundary_samples, mc_volume, membership,
                            minimal_face_pairs, read_polygons_csv, robust_intersection,
                            sample_in_polytope, sample_in_slice, slice_at, vertex_enumerate_2d,
                            vertex_slices, write_polygons_csv)
from pdrci.model import ConstraintData

from conftest import REFERENCE_P, REFERENCE_W


def unit_box(n=2):
    return HPolytope(np.vstack([np.eye(n), -np.eye(n)]), np.ones(2 * n))


def random_pp(seed, n_xi=2, n_p=4):
    rng = np.random.default_rng(seed)
    P = tuple(rng.standard_normal((n_p, 2)) for _ in range(n_xi))
    W = np.eye(2) + 0.2 * rng.standard_normal((2, 2))
    return ParamPolytope(P, W)


def test_identity_slice_is_unit_box():
    pp = ParamPolytope((np.eye(2), np.eye(2)), np.eye(2))
    poly = slice_at(pp, [0.3, 0.7])
    V, area = vertex_enumerate_2d(poly)
    assert area == pytest.approx(4.0)
    assert len(V) == 4


def test_slice_rows_are_affine_in_xi():
    pp = random_pp(0)
    a, b, lam = np.array([0.2, 0.8]), np.array([0.9, 0.1]), 0.3
    mid = slice_at(pp, lam * a + (1 - lam) * b).F
    assert np.allclose(mid, lam * slice_at(pp, a).F + (1 - lam) * slice_at(pp, b).F)


def test_vertex_slices_match_robust_rows():
    pp = random_pp(1)
    rows = np.vstack([s.F for s in vertex_slices(pp)])
    assert np.allclose(np.sort(rows, axis=0), np.sort(robust_intersection(pp).F, axis=0))
    for k, s in enumerate(vertex_slices(pp)):
        assert np.array_equal(s.F, slice_at(pp, np.eye(2)[k]).F)


def test_equal_vertices_give_single_slice():
    P = np.array([[1.0, 0.5], [0.0, 1.0]])
    pp = ParamPolytope((P, P), np.eye(2))
    _, a1 = vertex_enumerate_2d(robust_intersection(pp))
    _, a2 = vertex_enumerate_2d(slice_at(pp, [0.5, 0.5]))
    assert a1 == pytest.approx(a2)


def test_reference_set_area_and_complexity():
    pp = ParamPolytope(REFERENCE_P, REFERENCE_W)
    poly = robust_intersection(pp)
    _, area = vertex_enumerate_2d(poly)
    # 21.7907 is the area of the unrounded matrices
    assert area == pytest.approx(21.7907, rel=1e-3)
    assert poly.n_rows // 2 == 8
    assert minimal_face_pairs(pp) == 4


@pytest.mark.parametrize("seed", range(5))
def test_intersection_contained_in_every_slice(seed):
    pp = random_pp(seed, n_xi=3)
    poly = robust_intersection(pp)
    rng = np.random.default_rng(seed)
    X = sample_in_polytope(poly, 10_000 // 5, seed=seed)
    xi = rng.dirichlet(np.ones(3), size=len(X))
    Wi = pp.W_inv()
    for x, s in zip(X, xi):
        assert np.all(np.abs(pp.P_at(s) @ Wi @ x) <= 1 + 1e-9)


def test_membership_examples():
    box = unit_box()
    assert membership(box, [0.0, 0.0])
    assert membership(box, [1.0, 0.0], tol=0.0)
    assert not membership(box, [1.1, 0.0])


def test_zero_symmetry():
    pp = random_pp(3)
    rng = np.random.default_rng(3)
    X = rng.uniform(-3, 3, size=(500, 2))
    poly = slice_at(pp, [0.4, 0.6])
    assert np.array_equal(geometry.members(poly, X), geometry.members(poly, -X))


def test_bounding_box_of_state_constraints():
    con = ConstraintData.from_boxes(x_max=[5.0, 5.0], u_max=[1.0], w_max=[0.25])
    box = bounding_box(con)
    assert np.allclose(box.lower, [-5, -5]) and np.allclose(box.upper, [5, 5])


def test_bounding_box_of_rotated_constraints():
    H = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    con = ConstraintData(H, np.zeros((4, 1)), np.eye(1))
    box = bounding_box(con)
    assert np.allclose(box.upper, [1, 1], atol=1e-9)


def test_bounding_box_one_axis():
    con = ConstraintData.from_boxes(x_max=[1.0], u_max=[1.0])
    box = bounding_box(con)
    assert np.allclose([box.lower[0], box.upper[0]], [-1, 1])


def test_unbounded_constraints_raise():
    con = ConstraintData(np.array([[1.0, 0.0]]), np.zeros((1, 1)), np.eye(1))
    with pytest.raises(GeometryError):
        bounding_box(con)


def test_box_samples():
    box = Box(-np.ones(2), np.ones(2))
    assert len(box_vertices_and_boundary_samples(box, 0)) == 4
    pts = box_vertices_and_boundary_samples(box, 8, seed=1)
    assert len(pts) == 12
    assert np.all(np.isclose(np.abs(pts).max(axis=1), 1.0))
    one = box_vertices_and_boundary_samples(Box(-np.ones(1), np.ones(1)), 0)
    assert sorted(one[:, 0]) == [-1.0, 1.0]


def test_mc_volume_exact_for_box():
    box = Box(-np.ones(2), np.ones(2))
    est = mc_volume(box.as_polytope(), box, 10_000, seed=0)
    assert est.value == 4.0


@pytest.mark.parametrize("poly,box,exact", [
    (unit_box(), Box(-2 * np.ones(2), 2 * np.ones(2)), 4.0),
    (HPolytope(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]), np.array([0.0, 0.0, 1.0])),
     Box(np.zeros(2), np.ones(2)), 0.5),
    (robust_intersection(ParamPolytope(REFERENCE_P, REFERENCE_W)),
     Box(-5 * np.ones(2), 5 * np.ones(2)), None),
])
def test_mc_volume_within_four_sigma(poly, box, exact):
    if exact is None:
        exact = vertex_enumerate_2d(poly)[1]
    est = mc_volume(poly, box, 1_000_000, seed=7)
    assert abs(est.value - exact) <= 4 * est.stderr


def test_empty_polygon_raises():
    poly = HPolytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                     np.array([-1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(GeometryError):
        vertex_enumerate_2d(poly)
    with pytest.raises(GeometryError):
        sample_in_polytope(poly, 5)


def test_vertex_enumeration_orders_counterclockwise():
    V, area = vertex_enumerate_2d(unit_box())
    assert area > 0
    assert geometry.polygon_area(V) == pytest.approx(area)


def test_sampling_examples():
    pp = ParamPolytope((np.eye(2), np.eye(2)), np.eye(2))
    X = sample_in_slice(pp, [0.5, 0.5], 200, seed=3)
    assert X.shape == (200, 2) and np.all(np.abs(X) <= 1)
    assert sample_in_slice(pp, [0.5, 0.5], 0).shape == (0, 2)
    assert np.array_equal(X, sample_in_slice(pp, [0.5, 0.5], 200, seed=3))


def test_singular_shape_matrix_rejected():
    pp = ParamPolytope((np.eye(2),), np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(GeometryError):
        pp.W_inv()


def test_polygons_csv_round_trip(tmp_path):
    pp = ParamPolytope(REFERENCE_P, REFERENCE_W)
    V, _ = vertex_enumerate_2d(robust_intersection(pp))
    path = tmp_path / "polygons.csv"
    write_polygons_csv(path, [(0, "robust", V)])
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["xi_index", "slice_id", "vertex_id", "x1", "x2"]
    back = read_polygons_csv(path)
    assert np.array_equal(back[(0, "robust")], V)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 20))
def test_kernels_agree(seed, m):
    rng = np.random.default_rng(seed)
    F, g = rng.standard_normal((m, 2)), rng.uniform(0.5, 2, m)
    X = rng.standard_normal((300, 2))
    impls = kernels.implementations()
    ref = impls["python"]
    for mod in impls.values():
        assert np.allclose(mod.max_violation(F, g, X), ref.max_violation(F, g, X))
        assert mod.count_inside(F, g, X, 0.0) == ref.count_inside(F, g, X, 0.0)


def test_rollout_kernels_agree():
    rng = np.random.default_rng(0)
    N, nx, nu, nw, nz, R, T = 3, 2, 1, 1, 3, 5, 20
    args = [0.5 * rng.standard_normal((N, nx, nx)), rng.standard_normal((N, nx, nu)),
            rng.standard_normal((N, nx, nw)), rng.standard_normal((N, nz, nx)),
            rng.standard_normal((N, nz, nu)), 0.1 * rng.standard_normal((N, nu, nx)),
            rng.standard_normal((R, nx)), rng.dirichlet(np.ones(N), size=(R, T)),
            rng.standard_normal((R, T, nw))]
    outs = [m.rollout_lpv(*args) for m in kernels.implementations().values()]
    for X, c in outs[1:]:
        assert np.allclose(X, outs[0][0]) and np.allclose(c, outs[0][1])
    # one step by hand
    X, c = outs[0]
    xi, x = args[7][0, 0], args[6][0]
    A = np.tensordot(xi, args[0], 1)
    B = np.tensordot(xi, args[1], 1)
    E = np.tensordot(xi, args[2], 1)
    u = np.tensordot(xi, args[5], 1) @ x
    assert np.allclose(X[0, 1], A @ x + B @ u + E @ args[8][0, 0])
