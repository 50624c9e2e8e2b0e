import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import Delaunay

from conftest import SHAPES, refined
from tetrodiff.delaunay import (
    ImproveConfig,
    circumsphere,
    delaunay_violated,
    flip_3to2,
    flip_4to4,
    improve_pass,
    insphere,
    remove_boundary_sliver,
)
from tetrodiff.geometry import Mesh, edge_key
from tetrodiff.metropolis import MetropolisConfig, global_anneal

UNIT = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


def triangle_pair(height):
    """Three elements around the edge a-b piercing an equilateral triangle."""
    ang = 2 * np.pi * np.arange(3) / 3
    ring = np.c_[np.cos(ang), np.sin(ang), np.zeros(3)]
    pts = np.vstack([ring, [[0, 0, height], [0, 0, -height]]])
    return Mesh(pts, [[3, 4, 0, 1], [3, 4, 1, 2], [3, 4, 2, 0]])


def rhombus():
    """Four elements around the edge a-b with an elongated square ring."""
    pts = np.array([[2, 0, 0], [0, 0.5, 0], [-2, 0, 0], [0, -0.5, 0], [0, 0, 1], [0, 0, -1]], float)
    return Mesh(pts, [[4, 5, i, (i + 1) % 4] for i in range(4)])


class TestPredicates:
    def test_insphere_signs(self):
        assert insphere(*UNIT, [0.25, 0.25, 0.25]) > 0
        assert insphere(*UNIT, [5.0, 5.0, 5.0]) < 0
        assert insphere(*UNIT, [1.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-15)

    def test_insphere_orientation_free(self):
        e = [0.3, 0.2, 0.1]
        assert insphere(*UNIT, e) == pytest.approx(insphere(UNIT[1], UNIT[0], UNIT[2], UNIT[3], e))

    def test_insphere_scale_invariant(self):
        e = np.array([0.3, 0.2, 0.1])
        assert insphere(*(UNIT * 1e-5), e * 1e-5) == pytest.approx(insphere(*UNIT, e), rel=1e-9)
        assert insphere(*(UNIT * 1e6 + 3e7), e * 1e6 + 3e7) == pytest.approx(insphere(*UNIT, e), rel=1e-6)

    def test_flat_is_nan(self):
        assert np.isnan(insphere([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]))

    def test_circumsphere(self):
        c, r = circumsphere(UNIT)
        assert np.allclose(c, 0.5) and r == pytest.approx(np.sqrt(3) / 2)

    def test_violated(self):
        m = triangle_pair(2.0)
        assert delaunay_violated(0, m)
        assert not delaunay_violated(0, triangle_pair(0.5))


class TestFlips:
    def test_3to2(self):
        m = triangle_pair(2.0)
        v = m.total_volume
        assert flip_3to2((3, 4), m)
        assert m.n_elements == 2 and (3, 4) not in m.edge_elems
        assert m.total_volume == pytest.approx(v, rel=1e-12)
        assert not any(delaunay_violated(e, m) for e in range(2))
        m.validate()

    def test_3to2_refused_when_delaunay(self):
        m = triangle_pair(0.5)
        assert not flip_3to2((3, 4), m)
        assert m.n_elements == 3

    def test_3to2_wrong_valence(self):
        m = triangle_pair(2.0)
        assert not flip_3to2((0, 1), m)
        assert not flip_4to4((3, 4), m)

    def test_4to4_takes_short_diagonal(self):
        m = rhombus()
        v = m.total_volume
        assert flip_4to4((4, 5), m)
        assert m.n_elements == 4
        assert (4, 5) not in m.edge_elems and len(m.edge_elems[(1, 3)]) == 4
        assert m.total_volume == pytest.approx(v, rel=1e-12)
        m.validate()
        # the result is stable
        assert not flip_4to4((1, 3), m)

    def test_tabu_blocks_reinstating(self):
        m = triangle_pair(2.0)
        tabu = set()
        flip_3to2((3, 4), m, tabu=tabu)
        assert len(tabu) == 3


class TestSliver:
    def _mesh(self, lift):
        ang = 2 * np.pi * np.arange(3) / 3
        base = np.c_[np.cos(ang), np.sin(ang), np.zeros(3)]
        pts = np.vstack([base, [[0, 0, lift], [0, 0, 1.0]]])
        feats = [frozenset({"z0"})] * 3 + [frozenset(), frozenset({"top"})]
        return Mesh(pts, [[0, 1, 2, 3], [0, 1, 3, 4], [1, 2, 3, 4], [2, 0, 3, 4]], feats)

    def test_removed(self):
        m = self._mesh(0.01)
        full = m.total_volume
        assert remove_boundary_sliver(0, m, min_volume=0.05)
        assert m.n_elements == 3
        assert np.allclose(m.points[3], 0.0)
        assert m.features[3] == frozenset({"z0"})
        assert m.total_volume == pytest.approx(full, rel=1e-12)
        m.validate()

    def test_large_element_kept(self):
        m = self._mesh(0.3)
        assert not remove_boundary_sliver(0, m, min_volume=0.05)
        assert m.n_elements == 4

    def test_needs_single_inner_node(self):
        m = Mesh(UNIT, [[0, 1, 2, 3]], [frozenset({"a"})] * 4)
        assert not remove_boundary_sliver(0, m, min_volume=1.0)


class TestImprovePass:
    def test_delaunay_mesh_unchanged(self, rng):
        pts = rng.uniform(0, 1, (60, 3))
        m = Mesh(pts, Delaunay(pts).simplices)
        before = m.tets.copy()
        _, rep = improve_pass(m)
        assert rep.flips_3to2 == rep.flips_4to4 == 0 and rep.passes == 1
        assert np.array_equal(m.tets, before)

    def test_report_rows(self, tmp_path):
        m = triangle_pair(2.0)
        _, rep = improve_pass(m, ImproveConfig(min_volume=1e-9))
        assert rep.flips_3to2 == 1 and rep.rows[0] == (1, 1, 0, 0)
        assert rep.volume_after == pytest.approx(rep.volume_before, rel=1e-12)
        path = tmp_path / "flips.csv"
        rep.write_csv(path, seed=2)
        assert path.read_text().splitlines()[:2] == ["# seed=2", "pass,flips_3to2,flips_4to4,slivers_removed"]


@settings(max_examples=6, deadline=None)
@given(st.sampled_from(list(SHAPES)), st.integers(0, 1000))
def test_flips_preserve_boundary_and_volume(name, seed):
    m = refined(name, 0.6)
    global_anneal(m, MetropolisConfig(h0=0.6, global_steps=2, seed=seed))
    faces, outer, vol = m.boundary_faces(), m.outer.copy(), m.total_volume
    improve_pass(m)
    m.validate()
    assert m.boundary_faces() == faces
    assert np.array_equal(m.outer, outer)
    assert m.total_volume == pytest.approx(vol, rel=1e-9)
    assert all(edge_key(*e) == e for e in m.edges())
