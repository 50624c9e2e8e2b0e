import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tetrodiff.geometry import (
    GeometryError,
    Mesh,
    build_adjacency,
    edge_key,
    feature_label,
    shape_coeffs,
    shape_gradients,
    tet_volume,
)

UNIT = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)

coords = arrays(np.float64, (4, 3), elements=st.floats(-10, 10, allow_nan=False))


def good_tet(p):
    d = p[1:] - p[0]
    scale = np.abs(d).max()
    with np.errstate(all="ignore"):
        return scale > 1e-3 and abs(np.linalg.det(d)) > 1e-3 * scale ** 3


def cube_six():
    """Unit cube as six tetrahedra around the main diagonal 0-6."""
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    tets = [[0, 1, 2, 6], [0, 2, 3, 6], [0, 3, 7, 6], [0, 7, 4, 6], [0, 4, 5, 6], [0, 5, 1, 6]]
    return Mesh(pts, tets)


class TestVolume:
    def test_unit_tet(self):
        assert tet_volume(*UNIT) == pytest.approx(1 / 6, rel=1e-15)

    def test_orientation_sign(self):
        assert tet_volume(UNIT[0], UNIT[2], UNIT[1], UNIT[3]) == pytest.approx(-1 / 6, rel=1e-15)

    def test_scaled(self):
        assert tet_volume(*(2 * UNIT)) == pytest.approx(8 / 6, rel=1e-15)

    def test_coplanar_is_zero(self):
        assert tet_volume([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]) == 0.0


class TestShapeCoeffs:
    def test_unit_gradients(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        g = shape_coeffs(0, m).gradients
        assert np.allclose(g, [[-1, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]], atol=1e-15)

    def test_kronecker(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        s = shape_coeffs(0, m)
        for j, p in enumerate(UNIT):
            assert np.allclose(s.evaluate(p), np.eye(4)[j], atol=1e-15)

    def test_degenerate_rejected(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        m.move_node(3, [0.3, 0.3, 0.0])
        with pytest.raises(GeometryError):
            shape_coeffs(0, m)

    @given(coords, st.lists(st.floats(0, 1), min_size=4, max_size=4))
    def test_partition_of_unity(self, p, w):
        assume(good_tet(p) and sum(w) > 0)
        m = Mesh(p, [[0, 1, 2, 3]])
        s = shape_coeffs(0, m)
        w = np.array(w) / sum(w)
        L = s.evaluate(w @ m.points[m.tets[0]])
        assert abs(L.sum() - 1) < 1e-12
        assert np.allclose(L, w, atol=1e-9)
        assert np.abs(s.gradients.sum(axis=0)).max() <= 1e-12 * np.abs(s.gradients).max()

    @given(coords)
    def test_gradient_edge_consistency(self, p):
        assume(good_tet(p))
        grads, vol = shape_gradients(p, np.arange(4)[None])
        assert vol[0] == pytest.approx(tet_volume(*p), rel=1e-9)
        for i in range(4):
            for j in range(4):
                if i != j:
                    # L_i drops from 1 to 0 along the edge to vertex j
                    val = grads[0, i] @ (p[j] - p[i])
                    assert val == pytest.approx(-1.0, abs=1e-9)


class TestMesh:
    def test_orientation_normalised(self):
        m = Mesh(UNIT, [[0, 2, 1, 3]])
        assert m.volumes[0] == pytest.approx(1 / 6)
        assert m.signed_volumes()[0] > 0

    def test_repeated_node_rejected(self):
        with pytest.raises(GeometryError):
            Mesh(UNIT, [[0, 1, 1, 3]])

    def test_single_tet_adjacency(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        assert len(m.edges()) == 6
        assert all(m.edge_elems[e] == {0} for e in m.edges())

    def test_shared_face(self):
        pts = np.vstack([UNIT, [[1, 1, 1]]])
        m = Mesh(pts, [[0, 1, 2, 3], [1, 2, 3, 4]])
        for e in [(1, 2), (1, 3), (2, 3)]:
            assert m.edge_elems[e] == {0, 1}
        assert len(m.boundary_faces()) == 6

    def test_cube_diagonal(self):
        m = cube_six()
        assert m.edge_elems[(0, 6)] == set(range(6))
        assert m.total_volume == pytest.approx(1.0, rel=1e-14)
        m.validate()

    def test_remove_element_keeps_maps(self):
        m = cube_six()
        m.remove_element(2)
        assert m.n_elements == 5
        m.validate()

    def test_move_node_updates_volumes(self):
        m = cube_six()
        m.move_node(6, [0.9, 0.9, 0.9])
        assert np.allclose(m.volumes, m.signed_volumes(), rtol=1e-14)

    def test_validate_detects_inversion(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        m.move_node(3, [0, 0, -1])
        with pytest.raises(GeometryError):
            m.validate()

    def test_validate_detects_stale_adjacency(self):
        m = cube_six()
        m.edge_elems[(0, 6)].discard(3)
        with pytest.raises(GeometryError):
            m.validate()

    def test_build_adjacency_matches_incremental(self):
        m = cube_six()
        fresh = build_adjacency(m.copy())
        assert fresh.edge_elems == m.edge_elems

    def test_copy_is_independent(self):
        m = cube_six()
        c = m.copy()
        c.move_node(6, [0.5, 0.5, 0.9])
        assert np.array_equal(m.points[6], [1, 1, 1])

    def test_tolerances_scale(self):
        m = cube_six()
        big = Mesh(cube_six().points * 1e6, cube_six().tets)
        assert big.degenerate_tol == pytest.approx(m.degenerate_tol * 1e18)
        assert big.surface_tol == pytest.approx(m.surface_tol * 1e6)

    def test_outer_mask_from_features(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]], [frozenset(), frozenset({"x0"}), frozenset(), frozenset({"a", "b"})])
        assert m.outer.tolist() == [False, True, False, True]
        assert m.node(3).feature == "a&b"

    @settings(max_examples=30)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_cached_volumes_match(self, seed):
        rng = np.random.default_rng(seed)
        m = cube_six()
        for i in rng.permutation(8)[:3]:
            m.move_node(i, m.points[i] + rng.uniform(-0.05, 0.05, 3))
        assert np.allclose(m.volumes, np.abs(m.signed_volumes()), rtol=1e-12)


def test_edge_key_and_labels():
    assert edge_key(5, 2) == (2, 5) == edge_key(2, 5)
    assert feature_label(frozenset()) == "-"
    assert feature_label(frozenset({"z1", "side"})) == "side&z1"
