"""Discrete calculus, Fourier, and norm contracts of cgolab.grid."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgolab.fitting import fit_rate
from cgolab.grid import (
    Grid,
    ScalarField,
    VectorField,
    curl_two_form,
    fd_divergence,
    fd_gradient,
    fd_laplacian,
    fourier_transform,
    fourier_transform_at,
    l2_norm,
    require_compact_support,
    sample_at,
    scl_norm_h1,
    scl_norm_hminus1,
    sup_norm,
)


def cube(n, extent=2.0, origin=-1.0):
    return Grid((origin,) * 3, (extent,) * 3, (n,) * 3)


def gaussian_bump(grid, sigma=0.16, center=(0.0, 0.0, 0.0)):
    cx, cy, cz = center

    def f(x, y, z):
        r2 = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2
        return np.exp(-r2 / (2.0 * sigma**2))

    return ScalarField.from_function(grid, f)


class TestGrid:
    def test_spacing_definition(self):
        g = Grid((0.0, 0.0, 0.0), (1.0, 2.0, 3.0), (5, 11, 7))
        assert g.spacing == (0.25, 0.2, 0.5)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError, match="grid-degenerate"):
            Grid((0, 0, 0), (1, 1, 1), (1, 4, 4))
        with pytest.raises(ValueError, match="grid-degenerate"):
            Grid((0, 0, 0), (1, 0.0, 1), (4, 4, 4))

    def test_trapezoid_weights_sum_to_volume(self):
        g = Grid((0.0, 0.0, 0.0), (1.0, 2.0, 0.5), (9, 5, 17))
        assert np.isclose(g.trapezoid_weights().sum(), 1.0 * 2.0 * 0.5, rtol=1e-14)


class TestDifferences:
    def test_exact_on_affine(self):
        g = cube(9)
        f = ScalarField.from_function(g, lambda x, y, z: 2.0 + 3.0 * x - 1.5 * y + 0.25 * z)
        grad = fd_gradient(f)
        assert np.allclose(grad.values[0], 3.0, atol=1e-12)
        assert np.allclose(grad.values[1], -1.5, atol=1e-12)
        assert np.allclose(grad.values[2], 0.25, atol=1e-12)
        v = VectorField.from_functions(g, [lambda x, y, z: x, lambda x, y, z: -2 * y, lambda x, y, z: z])
        assert np.allclose(fd_divergence(v).values, 0.0, atol=1e-12)
        assert np.allclose(fd_laplacian(f).values, 0.0, atol=1e-11)

    def test_gradient_second_order(self):
        # sup-error slope for sin(2*pi*x1) between n=32 and n=64 nodes
        errs, ns = [], (32, 64)
        for n in ns:
            g = cube(n, extent=1.0, origin=0.0)
            f = ScalarField.from_function(g, lambda x, y, z: np.sin(2 * np.pi * x))
            exact = VectorField.from_functions(
                g,
                [lambda x, y, z: 2 * np.pi * np.cos(2 * np.pi * x), lambda *a: 0 * a[0], lambda *a: 0 * a[0]],
            )
            errs.append(sup_norm(fd_gradient(f) - exact))
        h = [1.0 / (n - 1) for n in ns]
        slope = np.log(errs[0] / errs[1]) / np.log(h[0] / h[1])
        assert abs(slope - 2.0) <= 0.1

    @pytest.mark.parametrize("op", ["gradient", "divergence", "laplacian", "curl"])
    def test_richardson_slopes(self, op):
        # second-order convergence across 16 -> 32 -> 64 for smooth data
        errs, hs = [], []
        for n in (16, 32, 64):
            g = cube(n, extent=1.0, origin=0.0)
            X, Y, Z = g.mesh()
            f = ScalarField(g, np.sin(2 * np.pi * X) * np.cos(np.pi * Y) * np.exp(Z))
            a = VectorField(
                g, np.stack([np.sin(2 * np.pi * Y) * Z, np.cos(np.pi * Z) * X, np.sin(np.pi * X * Y)])
            )
            if op == "gradient":
                got = fd_gradient(f).values
                exact = np.stack(
                    [
                        2 * np.pi * np.cos(2 * np.pi * X) * np.cos(np.pi * Y) * np.exp(Z),
                        -np.pi * np.sin(2 * np.pi * X) * np.sin(np.pi * Y) * np.exp(Z),
                        np.sin(2 * np.pi * X) * np.cos(np.pi * Y) * np.exp(Z),
                    ]
                )
            elif op == "divergence":
                b = VectorField(
                    g, np.stack([np.sin(2 * np.pi * X) * Z, np.cos(np.pi * Y), np.exp(0.5 * Z) * X])
                )
                got = fd_divergence(b).values
                exact = 2 * np.pi * np.cos(2 * np.pi * X) * Z - np.pi * np.sin(np.pi * Y) + 0.5 * np.exp(0.5 * Z) * X
            elif op == "laplacian":
                # the sin*cos*exp data hits a face-stencil cancellation (slope ~3);
                # measure the honest interior rate on a bump instead
                s2 = 0.15**2
                r2 = (X - 0.4) ** 2 + (Y - 0.5) ** 2 + (Z - 0.6) ** 2
                bump = np.exp(-r2 / (2 * s2))
                got = fd_laplacian(ScalarField(g, bump)).values
                exact = bump * (r2 / s2**2 - 3.0 / s2)
            else:
                got = curl_two_form(a).components
                exact = np.stack(
                    [
                        np.cos(np.pi * Z) - 2 * np.pi * np.cos(2 * np.pi * Y) * Z,
                        np.pi * Y * np.cos(np.pi * X * Y) - np.sin(2 * np.pi * Y),
                        np.pi * X * np.cos(np.pi * X * Y) + np.pi * X * np.sin(np.pi * Z),
                    ]
                )
            err = float(np.abs(got - exact).max())
            if err == 0.0:
                return  # exact case (divergence of that field is linear-free)
            errs.append(err)
            hs.append(1.0 / (n - 1))
        fit = fit_rate(hs, errs)
        assert abs(fit.slope - 2.0) <= 0.15

    def test_underresolved_rejected(self):
        g = Grid((0, 0, 0), (1, 1, 1), (2, 8, 8))
        f = ScalarField.zeros(g)
        with pytest.raises(ValueError, match="grid-underresolved"):
            fd_gradient(f)


class TestFourier:
    def test_gaussian_matches_closed_form(self):
        # f = exp(-|x-c|^2 / 2 sigma^2) => f_hat(xi) = (2 pi)^{3/2} sigma^3
        #     * exp(-sigma^2 |xi|^2 / 2) * exp(-i c . xi)
        sigma, center = 0.13, (0.1, -0.05, 0.0)
        g = cube(48)
        f = gaussian_bump(g, sigma, center)
        rng = np.random.default_rng(7)
        xi = rng.uniform(-8 / np.sqrt(3), 8 / np.sqrt(3), size=(40, 3))
        got = fourier_transform_at(f, xi)
        amp = (2 * np.pi) ** 1.5 * sigma**3
        expect = amp * np.exp(-(sigma**2) * np.sum(xi**2, axis=1) / 2) * np.exp(-1j * xi @ np.array(center))
        assert np.max(np.abs(got - expect) / np.abs(expect)) <= 1e-6

    def test_lattice_matches_pointwise(self):
        g = cube(24)
        f = gaussian_bump(g, 0.15)
        lat = fourier_transform(f)
        i, j, k = 13, 9, 17
        xi = np.array([[lat.xi_axes[0][i], lat.xi_axes[1][j], lat.xi_axes[2][k]]])
        assert np.allclose(lat.values[i, j, k], fourier_transform_at(f, xi)[0], rtol=1e-12)

    def test_linearity(self):
        g = cube(20)
        f1, f2 = gaussian_bump(g, 0.14), gaussian_bump(g, 0.14, (0.1, 0.0, -0.05))
        xi = np.array([[1.0, -2.0, 0.5], [0.0, 0.0, 3.0]])
        lhs = fourier_transform_at(ScalarField(g, 2.0 * f1.values + 1j * f2.values), xi)
        rhs = 2.0 * fourier_transform_at(f1, xi) + 1j * fourier_transform_at(f2, xi)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)

    def test_support_check(self):
        g = cube(16)
        f = ScalarField.from_function(g, lambda x, y, z: np.cos(x))  # nonzero on faces
        with pytest.raises(ValueError, match="field-not-compactly-supported"):
            fourier_transform(f)
        require_compact_support(gaussian_bump(g, 0.12))


class TestNorms:
    def test_h1_norm_properties(self):
        g = cube(16)
        f1, f2 = gaussian_bump(g, 0.2), gaussian_bump(g, 0.3, (0.2, 0.1, 0.0))
        h = 0.3
        n1, n2 = scl_norm_h1(f1, h), scl_norm_h1(f2, h)
        assert scl_norm_h1(ScalarField(g, 0 * f1.values), h) <= 1e-15
        assert abs(scl_norm_h1(2.5 * f1, h) - 2.5 * n1) <= 1e-10 * n1
        assert scl_norm_h1(f1 + f2, h) <= n1 + n2 + 1e-10 * (n1 + n2)

    def test_hminus1_tends_to_l2(self):
        g = cube(32)
        f = gaussian_bump(g, 0.15)
        l2 = l2_norm(f)
        assert abs(scl_norm_hminus1(f, 1e-9) - l2) <= 1e-3 * l2
        # monotone decreasing in h
        vals = [scl_norm_hminus1(f, h) for h in (0.1, 0.3, 0.9)]
        assert vals[0] > vals[1] > vals[2]

    def test_duality_pairs(self):
        # |<f, psi>| <= 1.05 * N_{-1}(f, h) * N_1(psi, h) for random bump pairs
        g = cube(24)
        rng = np.random.default_rng(11)
        X, Y, Z = g.mesh()
        worst = 0.0
        for _ in range(100):
            c1, c2 = rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.2, 0.2, 3)
            s1, s2 = rng.uniform(0.08, 0.125), rng.uniform(0.08, 0.125)
            a1, a2 = rng.standard_normal(2)
            f = ScalarField(g, a1 * np.exp(-((X - c1[0]) ** 2 + (Y - c1[1]) ** 2 + (Z - c1[2]) ** 2) / (2 * s1**2)))
            p = ScalarField(g, a2 * np.exp(-((X - c2[0]) ** 2 + (Y - c2[1]) ** 2 + (Z - c2[2]) ** 2) / (2 * s2**2)))
            h = rng.uniform(0.05, 0.5)
            pairing = abs(np.sum(g.trapezoid_weights() * f.values * p.values))
            bound = scl_norm_hminus1(f, h) * scl_norm_h1(p, h)
            worst = max(worst, pairing / bound)
        assert worst <= 1.05

    @given(
        h=st.floats(0.01, 2.0),
        scale=st.floats(0.1, 10.0),
    )
    @settings(max_examples=25, deadline=None)
    def test_h1_homogeneity(self, h, scale):
        g = cube(12)
        f = gaussian_bump(g, 0.25)
        assert np.isclose(scl_norm_h1(scale * f, h), scale * scl_norm_h1(f, h), rtol=1e-12)


class TestSampling:
    def test_trilinear_exact_on_nodes_and_linear(self):
        g = cube(9)
        f = ScalarField.from_function(g, lambda x, y, z: 1.0 + 2 * x - y + 0.5 * z)
        pts = np.array([[0.0, 0.0, 0.0], [0.33, -0.41, 0.8], [-1.0, -1.0, -1.0]])
        got = sample_at(f, pts)
        expect = 1.0 + 2 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 2]
        assert np.allclose(got, expect, atol=1e-13)
