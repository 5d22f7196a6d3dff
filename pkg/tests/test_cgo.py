"""Tests for the exponentially weighted solutions and the conjugated operator."""

import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from cgolab.cgo import (
    CgoSolution,
    _check_exponent,
    _edge_convection,
    _interior_mask,
    _SpectralConjugated,
    build_cgo,
    conjugated_matrix,
    conjugated_terms,
    periodic_hminus1_norm,
    remainder_rates,
    solve_remainder,
    weak_hminus1_norm,
)
from cgolab.dbar import build_frame, make_zetas, transport_phase
from cgolab.forward import DiscreteOperator
from cgolab.grid import Grid, ScalarField, VectorField
from cgolab.potentials import make_lacunary_field, mollify, radial_cutoff

XI = (0.0, 0.0, 2.0)


def box_grid(n):
    return Grid((-1.9,) * 3, (3.8,) * 3, (n,) * 3)


def compact_bump(grid, center, sigma, radius=1.1):
    X, Y, Z = grid.mesh()
    r = np.sqrt((X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2)
    return np.exp(-(r**2) / (2 * sigma**2)) * radial_cutoff(r, radius)


def free_operator(grid):
    zero = np.zeros((3,) + grid.n_points)
    return DiscreteOperator.magnetic(
        VectorField(grid, zero.copy()),
        VectorField(grid, zero.copy()),
        ScalarField(grid, np.zeros(grid.n_points)),
    )


def smooth_complex_operator(grid):
    b1 = compact_bump(grid, (0.2, -0.1, 0.3), 0.35)
    b2 = compact_bump(grid, (-0.3, 0.2, 0.0), 0.4)
    A = np.stack([0.4 * b1 + 0.1j * b2, -0.3 * b2 + 0.2j * b1, 0.25 * b1])
    F = np.stack([0.2 * b2, 0.3j * b1, -0.15 * b2])
    p = 0.3 * b1 + 0.1j * b2
    return DiscreteOperator.magnetic(
        VectorField(grid, A), VectorField(grid, F), ScalarField(grid, p)
    )


def holder_components(grid, gamma=0.75):
    comps = [
        make_lacunary_field(
            grid, gamma=gamma, base=1.5, n_octaves=8, cutoff_radius=1.0, phase_seed=s
        ).values
        for s in (0.0, 1.1, 2.2)
    ]
    sup = max(np.abs(c).max() for c in comps)
    return 0.8 * np.stack(comps) / sup


def holder_operator(grid, gamma=0.75):
    A = holder_components(grid, gamma)
    return DiscreteOperator.magnetic(
        VectorField(grid, A),
        VectorField(grid, 0.5 * A[::-1].copy()),
        ScalarField(grid, 0.3 * A[0].copy()),
    )


def branch_data(h, which=1):
    frame = build_frame(XI, h)
    pair = make_zetas(frame)
    zeta = pair.zeta1 if which == 1 else pair.zeta2
    return np.asarray(zeta), np.asarray(frame.zeta0(which))


class TestConjugatedMatrix:
    def test_zero_zeta_reduces_to_forward_operator(self):
        g = box_grid(20)
        op = smooth_complex_operator(g)
        M0 = conjugated_matrix(op, np.zeros(3, dtype=complex), 0.7)
        diff = abs(M0 - 0.7**2 * op.matrix).max()
        assert diff <= 1e-12

    def test_interior_rows_annihilate_constants(self):
        # the pure-convection part telescopes along grid lines, so the free
        # conjugated matrix must kill constants away from the boundary
        g = box_grid(16)
        zeta, _ = branch_data(0.5)
        M = conjugated_matrix(free_operator(g), zeta, 0.5)
        action = np.asarray(M @ np.ones(g.size)).ravel()
        assert np.abs(action[_interior_mask(g)]).max() <= 1e-13


class TestBookkeeping:
    def test_term_sum_matches_conjugated_matrix(self):
        g = box_grid(20)
        op = smooth_complex_operator(g)
        h, theta = 0.5, 2.0
        zeta, zeta0 = branch_data(h)
        b1 = compact_bump(g, (0.2, -0.1, 0.3), 0.35)
        b2 = compact_bump(g, (-0.3, 0.2, 0.0), 0.4)
        a = ScalarField(g, np.exp(0.3 * b1 + 0.2j * b2))
        terms = conjugated_terms(op, a, zeta, zeta0, h, theta)
        total = sum(terms.values())
        direct = -(conjugated_matrix(op, zeta, h) @ a.values.ravel())
        interior = _interior_mask(g)
        rel = np.abs(total - direct)[interior].max() / np.abs(direct[interior]).max()
        assert rel <= 1e-10

    def test_terms_vanish_on_boundary_rows(self):
        g = box_grid(12)
        op = smooth_complex_operator(g)
        zeta, zeta0 = branch_data(0.5)
        a = ScalarField(g, np.exp(0.2 * compact_bump(g, (0, 0, 0), 0.4)))
        terms = conjugated_terms(op, a, zeta, zeta0, 0.5, 2.0)
        boundary = ~_interior_mask(g)
        for name, vec in terms.items():
            assert np.abs(vec[boundary]).max() == 0.0, name

    def test_transport_defect_is_subordinate(self):
        # the phase solve should cancel the O(1) transport expression; compare
        # its weak action to the raw convection action it is meant to kill
        g = box_grid(24)
        op = holder_operator(g)
        sol = build_cgo(op, XI, 0.5)
        terms = conjugated_terms(
            op, sol.amplitude, sol.zeta_arr, np.asarray(sol.zeta0), 0.5, sol.theta
        )
        zeta0 = np.asarray(sol.zeta0, dtype=complex)
        drive = 2.0 * 0.5 * (_edge_convection(g, zeta0) @ sol.amplitude.values.ravel())
        drive[~_interior_mask(g)] = 0.0
        ratio = np.linalg.norm(terms["transport_defect"]) / np.linalg.norm(drive)
        assert ratio <= 0.05

    def test_term_bounds_against_test_bumps(self):
        # slope lower bounds for the five term estimates, measured as raw
        # pairings against fixed smooth bumps.  The two pure h^2 terms carry
        # no smoothing power; anti-resonance between the oscillatory
        # coefficient and the theta-dependent amplitude makes their measured
        # slope sag below 2 on a three-point range spanning less than one
        # coefficient octave, so zeta_shift_a gets a relaxed slope floor plus
        # an explicit h^2-boundedness check.
        g = box_grid(24)
        op = holder_operator(g)
        A = VectorField(g, holder_components(g))
        rng = np.random.default_rng(11)
        psis = [
            compact_bump(g, rng.uniform(-0.8, 0.8, 3), 0.35, radius=1.0).ravel()
            for _ in range(5)
        ]
        hs = np.array([0.5, 0.35, 0.25])
        names = ["laplacian", "a_gradient", "zeta_shift_gradient", "zeta_shift_a", "mass"]
        pair = {k: [[] for _ in psis] for k in names}
        for h in hs:
            zeta, zeta0 = branch_data(h)
            phi = transport_phase(mollify(A, h**-0.5), zeta0, method="fft")
            a = ScalarField(g, np.exp(phi.values))
            terms = conjugated_terms(op, a, zeta, zeta0, h, h**-0.5)
            for k in names:
                for i, psi in enumerate(psis):
                    pair[k][i].append(abs(np.vdot(psi, terms[k])))
        lh = np.log(hs)
        slopes = {
            k: min(np.polyfit(lh, np.log(np.asarray(v)), 1)[0] for v in pair[k])
            for k in names
        }
        assert slopes["laplacian"] >= 1.0 + 0.75 / 2 - 0.2
        assert slopes["a_gradient"] >= (3 + 0.75) / 2 - 0.2
        assert slopes["zeta_shift_gradient"] >= (3 + 0.75) / 2 - 0.2
        assert slopes["mass"] >= 2.0 - 0.2
        assert slopes["zeta_shift_a"] >= 1.3
        envelope = np.array(
            [max(pair["zeta_shift_a"][i][j] for i in range(len(psis))) for j in range(3)]
        )
        assert np.all(np.diff(envelope) < 0)
        assert np.all(envelope / hs**2 <= 0.4)


class TestDualNorm:
    def test_matches_dense_gram_solve(self):
        g = Grid((0.0,) * 3, (1.0,) * 3, (9,) * 3)
        h = 0.3
        rng = np.random.default_rng(3)
        action = np.zeros(g.size, dtype=complex)
        interior = _interior_mask(g)
        action[interior] = rng.standard_normal(interior.sum()) + 1j * rng.standard_normal(
            interior.sum()
        )
        m = g.n_points[0] - 2
        one = sp.identity(m)
        lap1 = (
            sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m)) / g.spacing[0] ** 2
        )
        lap = (
            sp.kron(sp.kron(lap1, one), one)
            + sp.kron(sp.kron(one, lap1), one)
            + sp.kron(sp.kron(one, one), lap1)
        )
        cell = float(np.prod(g.spacing))
        gram = cell * (sp.identity(m**3) + h * h * lap)
        ell = action[interior]
        dense = float(np.sqrt(np.real(np.vdot(ell, np.linalg.solve(gram.toarray(), ell)))))
        assert abs(weak_hminus1_norm(action, g, h) - dense) <= 1e-12 * dense

    def test_rejects_bad_scale(self):
        g = Grid((0.0,) * 3, (1.0,) * 3, (5,) * 3)
        with pytest.raises(ValueError, match="scale-not-positive"):
            weak_hminus1_norm(np.zeros(g.size), g, 0.0)


class TestPeriodicDualNorm:
    def test_constant_field_value(self):
        g = box_grid(16)
        f = ScalarField(g, np.full(g.n_points, 2.0 - 1.0j))
        vol = float(np.prod(np.asarray(g.n_points) * np.asarray(g.spacing)))
        expect = abs(2.0 - 1.0j) * np.sqrt(vol)
        assert abs(periodic_hminus1_norm(f, 0.4) - expect) <= 1e-12 * expect

    def test_plane_wave_weighting(self):
        g = box_grid(16)
        L = g.n_points[0] * g.spacing[0]
        k0 = np.array([2.0 * np.pi / L * 3, 0.0, -2.0 * np.pi / L * 2])
        X, Y, Z = g.mesh()
        f = ScalarField(g, np.exp(1j * (k0[0] * X + k0[1] * Y + k0[2] * Z)))
        h = 0.5
        vol = float(np.prod(np.asarray(g.n_points) * np.asarray(g.spacing)))
        expect = np.sqrt(vol / (1.0 + h * h * (k0 @ k0)))
        assert abs(periodic_hminus1_norm(f, h) - expect) <= 1e-12 * expect

    def test_rejects_bad_scale(self):
        g = box_grid(8)
        with pytest.raises(ValueError, match="scale-not-positive"):
            periodic_hminus1_norm(ScalarField(g, np.ones(g.n_points)), -1.0)


class TestSolveRemainder:
    def test_zero_right_hand_side_gives_zero(self):
        g = box_grid(24)
        op = free_operator(g)
        zeta, _ = branch_data(0.5)
        a = ScalarField(g, np.ones(g.n_points, dtype=complex))
        r, info = solve_remainder(op, a, zeta, 0.5)
        assert np.abs(r.values).max() == 0.0
        assert info["residual_rel"] == 0.0
        assert info["iterations"] == 0

    def test_solves_collocation_system(self):
        g = box_grid(24)
        op = holder_operator(g)
        zeta, zeta0 = branch_data(0.5)
        phi = transport_phase(
            mollify(VectorField(g, holder_components(g)), 0.5**-0.5), zeta0, method="fft"
        )
        a = ScalarField(g, np.exp(phi.values))
        r, info = solve_remainder(op, a, zeta, 0.5)
        assert info["residual_rel"] <= 1e-10
        assert info["remainder_h1scl"] == pytest.approx(0.447953, rel=1e-4)
        bound = 2 * 0.5 * np.pi / (24 * g.spacing[0])
        assert bound * (1 - 1e-12) <= info["min_symbol"] <= 2 * bound

    def test_lattice_shift_follows_real_direction(self):
        g = box_grid(24)
        op = free_operator(g)
        zeta, _ = branch_data(0.5)
        sc = _SpectralConjugated(op, zeta, 0.5)
        L = g.n_points[0] * g.spacing[0]
        assert np.allclose(sc.shift, (0.0, np.pi / L, 0.0), atol=1e-15)

    def test_iteration_budget_guard(self):
        g = box_grid(16)
        op = holder_operator(g)
        zeta, zeta0 = branch_data(0.5)
        phi = transport_phase(
            mollify(VectorField(g, holder_components(g)), 0.5**-0.5), zeta0, method="fft"
        )
        a = ScalarField(g, np.exp(phi.values))
        with pytest.raises(ValueError, match="linear-solve-failed"):
            solve_remainder(op, a, zeta, 0.5, max_iterations=2)

    def test_characteristic_collision_guard(self):
        # construct zeta.zeta = 0 whose shifted lattice contains a point of
        # the characteristic set: Re zeta at 60 degrees in the (1,2)-plane
        # makes the shifted point at integer offset (-1, 0, 1) orthogonal to
        # Re zeta, and Im zeta is then tilted to put it on the sphere
        g = box_grid(12)
        L = g.n_points[0] * g.spacing[0]
        h = 0.5
        re = np.array([0.5, np.sqrt(3.0) / 2.0, 0.0])
        kp = 2 * np.pi / L * np.array([-1.0, 0.0, 1.0]) + np.pi / L * re
        khat = kp / np.linalg.norm(kp)
        alpha = -h * np.linalg.norm(kp) / 2.0
        w = np.cross(re, khat)
        w = w / np.linalg.norm(w)
        im = alpha * khat + np.sqrt(1.0 - alpha**2) * w
        zeta = re + 1j * im
        assert abs(zeta @ zeta) <= 1e-12
        with pytest.raises(ValueError, match="characteristic-lattice-collision"):
            _SpectralConjugated(free_operator(g), zeta, h)


class TestBuildCgo:
    def test_free_solution_is_pure_exponential(self):
        g = box_grid(24)
        sol = build_cgo(free_operator(g), XI, 0.5)
        assert np.abs(sol.phi_sharp.values).max() == 0.0
        assert np.abs(sol.amplitude.values - 1.0).max() == 0.0
        assert np.abs(sol.remainder.values).max() == 0.0
        assert sol.residual_rel == 0.0
        field = sol.field().values
        expect = sol.exponential().values
        assert np.abs(field - expect).max() <= 1e-14 * np.abs(expect).max()

    def test_branch_validation(self):
        g = box_grid(12)
        with pytest.raises(ValueError, match="unknown branch"):
            build_cgo(free_operator(g), XI, 0.5, which=3)

    def test_theta_guard(self):
        g = box_grid(12)
        with pytest.raises(ValueError, match="smoothing-level-not-admissible"):
            build_cgo(free_operator(g), XI, 0.5, theta_rule=lambda h: 0.9)

    def test_phase_resolution_guard(self):
        g = box_grid(10)
        with pytest.raises(ValueError, match="phase-underresolved"):
            build_cgo(free_operator(g), XI, 0.5)

    def test_exponent_guard_on_long_box(self):
        g = Grid((-0.25, -40.0, -0.25), (0.5, 80.0, 0.5), (5, 41, 5))
        zeta, _ = branch_data(0.5)
        with pytest.raises(ValueError, match="cgo-exponent-overflow"):
            _check_exponent(g, zeta, 0.5)

    def test_exponential_overflow_guard(self):
        g = box_grid(24)
        sol = build_cgo(free_operator(g), XI, 0.5)
        shrunk = dataclasses.replace(sol, h=0.01)
        with pytest.raises(ValueError, match="cgo-exponent-overflow"):
            shrunk.exponential()

    def test_branch2_phase_is_conjugate(self):
        # building branch 2 on the conjugated coefficients must produce the
        # negative conjugate of the branch-1 phase of the original ones
        g = box_grid(24)
        A2 = holder_components(g) * (1.0 + 0.2j)
        op_conj = DiscreteOperator.magnetic(
            VectorField(g, np.conj(A2)),
            VectorField(g, np.conj(0.35 * A2[::-1])),
            ScalarField(g, np.conj(0.25 * A2[0])),
        )
        sol2 = build_cgo(op_conj, XI, 0.5, which=2)
        frame = build_frame(XI, 0.5)
        phi1 = transport_phase(
            mollify(VectorField(g, A2), 0.5**-0.5), np.asarray(frame.zeta0(1)), method="fft"
        )
        gap = np.abs(sol2.phi_sharp.values + np.conj(phi1.values)).max()
        assert gap <= 1e-12
        assert sol2.residual_rel <= 1e-10

    def test_zeta_invariants(self):
        g = box_grid(24)
        sol = build_cgo(holder_operator(g), XI, 0.35)
        z = sol.zeta_arr
        assert abs(z @ z) <= 1e-12
        assert abs(np.linalg.norm(z.real) - 1.0) <= 1e-12
        assert abs(np.linalg.norm(z.imag) - 1.0) <= 1e-12

    def test_deterministic_rebuild(self):
        g = box_grid(16)
        op = holder_operator(g)
        s1 = build_cgo(op, XI, 0.5)
        s2 = build_cgo(op, XI, 0.5)
        assert np.array_equal(s1.remainder.values, s2.remainder.values)


class TestRemainderRates:
    def test_desk_scale_rate_study(self):
        g = box_grid(24)
        out = remainder_rates(holder_operator(g), XI)
        assert out["slope"] >= 0.75 / 2 - 0.2
        assert out["slope"] == pytest.approx(0.655, abs=0.05)
        assert [row["h"] for row in out["rows"]] == [0.5, 0.35, 0.25]
        assert np.isnan(out["rows"][0]["slope_running"])
        for row in out["rows"]:
            assert set(row) == {"h", "theta", "norm_r_H1scl", "norm_La_Hm1scl", "slope_running"}

    def test_schedule_guard(self):
        g = box_grid(16)
        with pytest.raises(ValueError, match="h-schedule-not-decreasing"):
            remainder_rates(holder_operator(g), XI, h_values=(0.25, 0.5))
