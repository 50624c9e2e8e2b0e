import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import refined
from tetrodiff.fem import mass_matrix
from tetrodiff.solvers import (
    FieldState,
    NewtonError,
    PhysicalParams,
    PNPBoundary,
    PNPOperators,
    TimeScheme,
    _newton_update,
    average_flux,
    boundary_values,
    compute_flux,
    newton_pnp_step,
    plane_boundary,
    pnp_jacobian,
    pnp_phi_solve,
    pnp_residual,
    solve_diffusion,
    solve_electrodiffusion,
    solve_laplace,
)


@pytest.fixture(scope="module")
def small():
    return refined("cube", 0.8, ring=4)


class TestLaplace:
    def test_constant(self, small):
        u = solve_laplace(small, lambda p: 0.7).values
        assert np.allclose(u, 0.7, atol=1e-12)

    def test_linear_reproduced(self, small):
        a = np.array([0.5, -1.0, 2.0])
        u = solve_laplace(small, lambda p: p @ a).values
        assert np.allclose(u, small.points @ a, atol=1e-10)

    def test_cg_agrees(self, small):
        g = lambda p: np.sin(p[:, 0]) * p[:, 2]
        assert np.allclose(solve_laplace(small, g).values, solve_laplace(small, g, method="cg").values, atol=1e-8)

    def test_missing_boundary_named(self, small):
        bc = boundary_values(small, lambda p: 0.0)
        bc.pop(min(bc))
        with pytest.raises(ValueError, match="missing"):
            solve_laplace(small, bc)

    def test_maximum_principle(self, small):
        bc = plane_boundary(small, [(0, np.pi, 1.0)], rest=0.0)
        u = solve_laplace(small, bc).values
        inner = ~small.outer
        assert u[inner].min() >= -1e-12 and u[inner].max() <= 1 + 1e-12


class TestPlaneBoundary:
    def test_face_values(self, small):
        bc = plane_boundary(small, [(0, np.pi, 1.0)], rest=0.0)
        for i, v in bc.items():
            x = small.points[i]
            on_x1 = abs(x[0] - np.pi) < 1e-9
            on_other = any(abs(x[a] - b) < 1e-9 for a in range(3) for b in (0.0, np.pi) if (a, b) != (0, np.pi))
            if on_x1 and not on_other:
                assert v == 1.0
            elif not on_x1:
                assert v == 0.0
            else:
                assert 0.0 < v < 1.0

    def test_first_rule(self, small):
        bc = plane_boundary(small, [(0, np.pi, 1.0)], rest=0.0, junction="first")
        for i, v in bc.items():
            assert v == (1.0 if abs(small.points[i, 0] - np.pi) < 1e-9 else 0.0)

    def test_no_rest_skips_nodes(self, small):
        bc = plane_boundary(small, [(2, 0.0, 3.0)])
        assert bc and all(v == 3.0 for v in bc.values())
        assert all(abs(small.points[i, 2]) < 1e-9 for i in bc)

    def test_unknown_rule(self, small):
        with pytest.raises(ValueError):
            plane_boundary(small, [], rest=0.0, junction="max")


class TestDiffusion:
    def test_zero_stays_zero(self, small):
        traj = solve_diffusion(np.zeros(small.n_nodes), small, 1.0, TimeScheme(0.1, 1.0, 5), lambda p: 0.0)
        assert len(traj) == 6
        assert all(np.abs(v).max() == 0.0 for v in traj.values)

    def test_constant_boundary_steady(self, small):
        traj = solve_diffusion(np.full(small.n_nodes, 2.0), small, 0.5, TimeScheme(0.2, 1.0, 3), lambda p: 2.0)
        assert np.allclose(traj.values[-1], 2.0, atol=1e-12)

    def test_no_diffusion_keeps_field(self, small):
        g = np.cos(small.points[:, 1])
        bc = {int(i): float(g[i]) for i in np.flatnonzero(small.outer)}
        traj = solve_diffusion(g, small, 0.0, TimeScheme(0.1, 1.0, 4), bc)
        assert np.allclose(traj.values[-1], g, atol=1e-12)

    def test_mass_decreases(self, small):
        M = mass_matrix(small)
        g = lambda p: np.prod(np.sin(p), axis=1)
        traj = solve_diffusion(g, small, 1.0, TimeScheme(0.05, 1.0, 10), lambda p: 0.0)
        mass = [float(np.ones(small.n_nodes) @ (M @ u)) for u in traj.values]
        assert all(b <= a + 1e-14 for a, b in zip(mass, mass[1:]))

    def test_snapshots(self, small):
        traj = solve_diffusion(np.zeros(small.n_nodes), small, 1.0, TimeScheme(0.1, 1.0, 5), lambda p: 0.0,
                               snapshot_every=2)
        assert traj.times == pytest.approx([0.0, 0.2, 0.4, 0.5])

    def test_crank_nicolson_more_accurate_in_time(self, small):
        # time error only: compare with a fine-step run on the same mesh
        g = lambda p: np.prod(np.sin(p), axis=1)
        bc = lambda p: 0.0
        ref = solve_diffusion(g, small, 1.0, TimeScheme(0.001, 0.5, 500), bc).values[-1]
        errs = [np.abs(solve_diffusion(g, small, 1.0, TimeScheme(0.1, beta, 5), bc).values[-1] - ref).max()
                for beta in (1.0, 0.5)]
        assert errs[1] < 0.5 * errs[0]


def pnp_setup(mesh, k=(0.0, 0.0), dt=0.05, eps=1.0):
    params = PhysicalParams(k_plus=k[0], k_minus=k[1], eps=eps)
    outer = np.flatnonzero(mesh.outer)
    z = mesh.points[:, 2]
    bc = PNPBoundary({int(i): float(z[i] / np.pi) for i in outer},
                     {int(i): float(1 - z[i] / np.pi) for i in outer},
                     {int(i): 0.0 for i in outer})
    return params, TimeScheme(dt, 1.0, 1), bc


class TestElectrodiffusion:
    def test_uniform_state_zero_residual(self, small):
        m = small.n_nodes
        params = PhysicalParams(k_plus=1.0, k_minus=-1.0)
        bc = PNPBoundary.uniform(small, lambda p: 0.4)
        s = FieldState(np.full(m, 0.4), np.full(m, 0.4), np.full(m, 0.4))
        Fp, Fm, r = pnp_residual(s, s, small, params, TimeScheme(0.1), bc)
        assert max(np.abs(Fp).max(), np.abs(Fm).max(), np.abs(r).max()) < 1e-13

    def test_k_zero_equals_diffusion(self, small):
        params, scheme, bc = pnp_setup(small)
        m = small.n_nodes
        n0 = np.zeros(m)
        for i, v in bc.n_plus.items():
            n0[i] = v
        s0 = FieldState(n0, np.zeros(m), np.zeros(m))
        states = solve_electrodiffusion(s0, small, params, scheme, bc)
        ref = solve_diffusion(n0, small, 1.0, scheme, bc.n_plus).values[-1]
        assert np.allclose(states[-1].n_plus, ref, atol=1e-9)
        assert len(states[-1].residual_trace) <= 3

    def test_phi_linear_in_charge(self, small, rng):
        params, scheme, bc = pnp_setup(small)
        ops = PNPOperators(small, params, scheme, bc)
        a, b = rng.uniform(0, 1, (2, small.n_nodes))
        assert np.allclose(ops.phi(2 * a, 0 * a), 2 * ops.phi(a, 0 * a), atol=1e-12)
        assert np.allclose(ops.phi(a, b), -ops.phi(b, a), atol=1e-12)
        direct = pnp_phi_solve(a, b, small, params, bc.phi).values
        assert np.allclose(ops.phi(a, b), direct, atol=1e-10)

    def test_neutral_charge_gives_laplace(self, small, rng):
        params, scheme, bc = pnp_setup(small)
        n = rng.uniform(0, 1, small.n_nodes)
        bc.phi = boundary_values(small, lambda p: p[:, 0])
        phi = pnp_phi_solve(n, n, small, params, bc.phi).values
        assert np.allclose(phi, small.points[:, 0], atol=1e-10)

    def test_sparse_newton_matches_dense_jacobian(self, small, rng):
        params, scheme, bc = pnp_setup(small, k=(2.0, -1.5), eps=0.1)
        ops = PNPOperators(small, params, scheme, bc)
        m = small.n_nodes
        prev = FieldState(rng.uniform(0, 1, m), rng.uniform(0, 1, m), np.zeros(m))
        guess = prev.copy()
        for key in ("n_plus", "n_minus"):
            idx, val = ops.bc_idx[key]
            getattr(guess, key)[idx] = val
        phi = ops.phi(guess.n_plus, guess.n_minus)
        Fp, Fm = ops.residual(guess.n_plus, guess.n_minus, phi, prev)
        J = pnp_jacobian(guess, small, params, scheme, bc, ops=ops)
        d = np.linalg.solve(J, -np.concatenate([Fp, Fm]))
        out = newton_pnp_step(guess, prev, small, params, scheme, bc, ops=ops, max_iters=1, tol=np.inf)
        assert out.residual_trace[0] == pytest.approx(max(np.abs(Fp).max(), np.abs(Fm).max()))
        # the sparse bordered update equals the dense Jacobian solve
        dp, dm = _newton_update(ops, guess.n_plus, guess.n_minus, phi, Fp, Fm, "exact")
        assert np.allclose(np.concatenate([dp, dm]), d, atol=1e-9)

    def test_frozen_potential_mode_converges(self, small):
        params, scheme, bc = pnp_setup(small, k=(1.0, -1.0))
        m = small.n_nodes
        s0 = FieldState(np.full(m, 0.5), np.full(m, 0.5), np.zeros(m))
        exact = solve_electrodiffusion(s0, small, params, scheme, bc)[-1]
        frozen = solve_electrodiffusion(s0, small, params, scheme, bc, jacobian="frozen")[-1]
        assert np.allclose(exact.n_plus, frozen.n_plus, atol=1e-8)
        assert len(frozen.residual_trace) >= len(exact.residual_trace)

    def test_newton_failure_reports_trace(self, small):
        params, scheme, bc = pnp_setup(small, k=(3.0, -3.0), eps=0.01)
        m = small.n_nodes
        s0 = FieldState(np.zeros(m), np.zeros(m), np.zeros(m))
        with pytest.raises(NewtonError) as info:
            newton_pnp_step(s0, s0, small, params, scheme, bc, max_iters=0)
        assert len(info.value.trace) == 1

    def test_requires_backward_euler(self, small):
        params, _, bc = pnp_setup(small)
        with pytest.raises(ValueError):
            PNPOperators(small, params, TimeScheme(0.1, 0.5), bc)

    def test_length_mismatch(self, small):
        params, scheme, bc = pnp_setup(small)
        s = FieldState(np.zeros(3), np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            pnp_residual(s, s, small, params, scheme, bc)


class TestFlux:
    def test_linear_density(self, small):
        m = small.n_nodes
        s = FieldState(small.points[:, 2].copy(), np.zeros(m), np.zeros(m))
        f = compute_flux(s, small, PhysicalParams(D_plus=0.7))
        assert np.allclose(f.j, [0.0, 0.0, -0.7], atol=1e-12)

    def test_drift_term(self, small):
        m = small.n_nodes
        s = FieldState(np.full(m, 2.0), np.zeros(m), small.points[:, 0].copy())
        f = compute_flux(s, small, PhysicalParams(k_plus=0.5))
        assert np.allclose(f.jx, -1.0, atol=1e-12) and np.allclose(f.jz, 0.0, atol=1e-12)

    def test_average(self, small):
        m = small.n_nodes
        s = FieldState(small.points[:, 1].copy(), np.zeros(m), np.zeros(m))
        f = compute_flux(s, small, PhysicalParams())
        c = small.points.mean(axis=0)
        assert np.allclose(average_flux(f, small, c, 1.0), [0.0, -1.0, 0.0], atol=1e-12)
        with pytest.raises(ValueError):
            average_flux(f, small, c + 100.0, 0.1)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(-2.0, 2.0))
def test_params_species_lookup(D, k):
    p = PhysicalParams(D_plus=D, k_minus=k)
    assert p.species("plus") == (D, 0.0) and p.species("-") == (1.0, k)
