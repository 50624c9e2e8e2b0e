import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SHAPES
from tetrodiff.geometry import GeometryError, Mesh, Node
from tetrodiff.meshgen import (
    Cone,
    Cube,
    Cylinder,
    DomainSpec,
    RefineConfig,
    Sphere,
    build_initial_mesh,
    classify_new_node,
    refine_once,
    refine_to_target,
    target_volume,
    volume_histogram,
)

UNIT = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


@pytest.mark.parametrize("h0, v0", [(0.2, 9.428090415820634e-4), (0.44, 0.010039030674765812), (0.5, 0.014731391274719742)])
def test_target_volume(h0, v0):
    assert target_volume(h0) == pytest.approx(v0, rel=1e-14)


class TestInitialMesh:
    def test_cube_exact_volume(self):
        m = build_initial_mesh(DomainSpec(Cube(), 2, 4))
        assert m.total_volume == pytest.approx(math.pi ** 3, abs=1e-9)
        m.validate()

    def test_sphere_inscribed(self):
        vols = [build_initial_mesh(DomainSpec(Sphere(), n, 2 * n - 4)).total_volume for n in (8, 16)]
        assert vols[0] < vols[1] < 4 * math.pi / 3

    def test_cone_single_apex(self):
        m = build_initial_mesh(DomainSpec(Cone(), 4, 8))
        apex = [i for i in range(m.n_nodes) if abs(m.points[i, 2] - math.pi) < 1e-12]
        assert len(apex) == 1 and m.outer[apex[0]]
        assert m.volumes.min() > m.degenerate_tol

    @pytest.mark.parametrize("name", list(SHAPES))
    def test_valid_and_labelled(self, name):
        m = build_initial_mesh(DomainSpec(SHAPES[name]()))
        m.validate()
        assert m.outer.any() and (~m.outer).any()

    def test_outer_nodes_on_surface(self):
        s = Cylinder(radius=2.0)
        m = build_initial_mesh(DomainSpec(s, 3, 8))
        for i in np.flatnonzero(m.outer):
            for f in m.features[i]:
                assert s.residual(m.points[i], f) <= m.surface_tol

    def test_layer_count_validated(self):
        with pytest.raises(GeometryError):
            DomainSpec(Cube(), 1, 4)
        with pytest.raises(GeometryError):
            DomainSpec(Cube(), 3, 2)


class TestClassify:
    def test_inner_pair(self):
        n = classify_new_node([0.5, 0, 0], (Node(np.zeros(3)), Node(np.ones(3))), None)
        assert not n.is_outer

    def test_mixed_pair_is_inner(self):
        n = classify_new_node([0.5, 0, 0], (Node(np.zeros(3), frozenset({"sphere"})), Node(np.ones(3))), Sphere())
        assert not n.is_outer

    def test_sphere_projection(self):
        s = Sphere(radius=2.0)
        a = Node(np.array([2.0, 0, 0]), frozenset({"sphere"}))
        b = Node(np.array([0, 2.0, 0]), frozenset({"sphere"}))
        n = classify_new_node(0.5 * (a.position + b.position), (a, b), s)
        assert n.features == frozenset({"sphere"})
        assert np.linalg.norm(n.position) == pytest.approx(2.0, abs=1e-9)

    def test_common_features_only(self):
        a = Node(np.array([math.pi, 0, 0]), frozenset({"x1", "y0"}))
        b = Node(np.array([math.pi, 1, 0]), frozenset({"x1"}))
        n = classify_new_node([math.pi, 0.5, 0], (a, b), Cube())
        assert n.features == frozenset({"x1"})

    def test_deterministic(self):
        a = Node(np.array([1.0, 0, 0]), frozenset({"side"}))
        b = Node(np.array([0, 1.0, 0.3]), frozenset({"side"}))
        p = 0.5 * (a.position + b.position)
        n1, n2 = classify_new_node(p, (a, b), Cylinder()), classify_new_node(p, (a, b), Cylinder())
        assert np.array_equal(n1.position, n2.position) and n1.features == n2.features


class TestRefine:
    def test_saturated_when_vcrit_large(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        cfg = RefineConfig(10.0, critical_volume=0.1)
        assert refine_once(m, cfg) is False
        assert m.n_elements == 1

    def test_single_bisection(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        assert refine_once(m, RefineConfig(10.0, critical_volume=0.0))
        assert m.n_elements == 2
        assert m.total_volume == pytest.approx(1 / 6, rel=1e-15)
        # a longest edge of the unit tet was halved
        new = m.points[4]
        assert np.count_nonzero(np.isclose(new, 0.5)) == 2

    def test_every_sharer_splits(self):
        pts = np.array([[0, 0, 0], [3, 0, 0], [1, 1, 0], [1, -1, 0.2], [1.5, 0, 1]], dtype=float)
        m = Mesh(pts, [[0, 1, 2, 4], [0, 1, 3, 4]])
        assert len(m.edge_elems[(0, 1)]) == 2
        refine_once(m, RefineConfig(10.0, critical_volume=0.0))
        assert m.n_elements == 4
        m.validate()

    def test_zero_divisions(self):
        m = build_initial_mesh(DomainSpec(Cube(), 3, 4))
        before = m.points.copy()
        stats = refine_to_target(m, RefineConfig(0.5, max_divisions=0))
        assert stats.divisions == 0 and np.array_equal(m.points, before)

    def test_cube_refinement_statistics(self):
        m = build_initial_mesh(DomainSpec(Cube(), 3, 4))
        cfg = RefineConfig(0.5)
        stats = refine_to_target(m, cfg)
        assert stats.saturated
        assert m.total_volume == pytest.approx(math.pi ** 3, rel=1e-9)
        assert m.volumes.min() >= cfg.critical_volume
        counts, _ = stats.histogram
        assert counts.sum() == m.n_elements
        m.validate()

    def test_interior_bisection_conserves_volume(self):
        m = build_initial_mesh(DomainSpec(Sphere(), 4, 8))
        before = m.total_volume
        refine_to_target(m, RefineConfig(0.6), Sphere())
        # boundary projection only ever pushes nodes outward onto the sphere
        assert m.total_volume >= before - 1e-12
        assert m.total_volume < 4 * math.pi / 3

    def test_critical_volume_default(self):
        cfg = RefineConfig(0.3)
        assert cfg.critical_volume == pytest.approx(cfg.v0 / 2)
        with pytest.raises(ValueError):
            RefineConfig(0.3, critical_volume=cfg.v0)

    def test_histogram_clips_to_last_bin(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]])
        counts, edges = volume_histogram(m, 1e-3)
        assert counts[-1] == 1 and counts.sum() == 1 and edges[-1] == 3.0

    @settings(max_examples=8, deadline=None)
    @given(st.sampled_from(list(SHAPES)), st.floats(0.45, 0.9))
    def test_children_above_critical_volume(self, name, h0):
        spec = DomainSpec(SHAPES[name]())
        m = build_initial_mesh(spec)
        cfg = RefineConfig(h0)
        start = m.n_elements

        def check(mesh):
            assert mesh.volumes[start:].min() >= cfg.critical_volume * (1 - 1e-12)

        refine_to_target(m, cfg, spec.shape, callback=check)
        m.validate()
