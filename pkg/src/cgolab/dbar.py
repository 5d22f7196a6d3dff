"""Complex-frequency frames and the plane-wise Cauchy (d-bar) machinery.

A frame is an orthonormal pair perpendicular to a nonzero frequency xi; the
two complex directions zeta_0 = +-mu1 + i mu2 span the planes in which the
singular Cauchy kernel acts.  `cauchy_transform` inverts the directional
operator zeta_0 . grad; `transport_phase` uses it to build the phase whose
exponential transports a rough first-order coefficient out of the principal
part.

Two quadratures are provided.  The direct path evaluates the polar-coordinate
integral per node (the kernel e^{-i phi}/r cancels against the polar Jacobian,
so the integrand is bounded); the fft path applies the same truncated kernel
as a Fourier multiplier -i e^{-i beta}(1 - J0(R rho))/rho on a zero-padded
lattice, which is the n_phi -> infinity, n_r -> infinity limit of the direct
rule.  Both agree with the closed-form transform of in-plane Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import j0

from .grid import Grid, ScalarField, VectorField, fd_directional, fd_gradient, require_compact_support

__all__ = [
    "Frame",
    "ZetaPair",
    "build_frame",
    "make_zetas",
    "cauchy_transform",
    "transport_phase",
    "transport_residual",
    "phase_convergence",
]

_ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class Frame:
    """Frequency xi with an orthonormal pair (mu1, mu2) perpendicular to it."""

    xi: tuple
    mu1: tuple
    mu2: tuple
    h: float

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        m1 = np.asarray(self.mu1, dtype=float)
        m2 = np.asarray(self.mu2, dtype=float)
        if np.linalg.norm(xi) == 0.0:
            raise ValueError("zero-frequency")
        if abs(np.linalg.norm(m1) - 1.0) > _ORTHO_TOL or abs(np.linalg.norm(m2) - 1.0) > _ORTHO_TOL:
            raise ValueError("frame-vectors-not-unit")
        for a, b in ((m1, m2), (m1, xi), (m2, xi)):
            if abs(np.dot(a, b / max(np.linalg.norm(b), 1.0))) > _ORTHO_TOL:
                raise ValueError("frame-vectors-not-orthogonal")
        if not self.h > 0:
            raise ValueError("frame-scale-nonpositive")
        if self.h * np.linalg.norm(xi) >= 2.0:
            raise ValueError("frame-radical-negative")

    @property
    def xi_arr(self) -> np.ndarray:
        return np.asarray(self.xi, dtype=float)

    @property
    def mu1_arr(self) -> np.ndarray:
        return np.asarray(self.mu1, dtype=float)

    @property
    def mu2_arr(self) -> np.ndarray:
        return np.asarray(self.mu2, dtype=float)

    def zeta0(self, which: int) -> np.ndarray:
        """Limiting complex direction: mu1 + i mu2 for branch 1, -mu1 + i mu2 for 2."""
        if which == 1:
            return self.mu1_arr + 1j * self.mu2_arr
        if which == 2:
            return -self.mu1_arr + 1j * self.mu2_arr
        raise ValueError("branch must be 1 or 2")


def build_frame(xi, h: float) -> Frame:
    """Deterministic orthonormal frame perpendicular to xi.

    mu1 = normalize(xi_hat x e_m) with e_m the standard basis vector of least
    alignment with xi_hat (lowest index on ties); mu2 = xi_hat x mu1, so
    (mu1, mu2, xi_hat) is right-handed.  Depends on xi only through xi_hat.
    """
    xi = np.asarray(xi, dtype=float)
    nrm = np.linalg.norm(xi)
    if nrm == 0.0:
        raise ValueError("zero-frequency")
    if h * nrm >= 2.0:
        raise ValueError(f"frame-radical-negative: h|xi| = {h * nrm:.6g} >= 2")
    xhat = xi / nrm
    m = int(np.argmin(np.abs(xhat)))  # argmin takes the lowest index on ties
    e = np.zeros(3)
    e[m] = 1.0
    mu1 = np.cross(xhat, e)
    mu1 = mu1 / np.linalg.norm(mu1)
    mu2 = np.cross(xhat, mu1)
    return Frame(xi=tuple(xi), mu1=tuple(mu1), mu2=tuple(mu2), h=h)


@dataclass(eq=False)
class ZetaPair:
    """The two null complex frequencies and their h -> 0 limits."""

    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta0_1: np.ndarray
    zeta0_2: np.ndarray


def make_zetas(frame: Frame) -> ZetaPair:
    """zeta_1 = ih xi/2 + mu1 + i sqrt(1 - h^2|xi|^2/4) mu2 and the mirrored zeta_2."""
    xi, m1, m2, h = frame.xi_arr, frame.mu1_arr, frame.mu2_arr, frame.h
    rad = np.sqrt(1.0 - h * h * np.dot(xi, xi) / 4.0)
    zeta1 = 0.5j * h * xi + m1 + 1j * rad * m2
    zeta2 = -0.5j * h * xi - m1 + 1j * rad * m2
    return ZetaPair(
        zeta1=zeta1,
        zeta2=zeta2,
        zeta0_1=m1 + 1j * m2,
        zeta0_2=-m1 + 1j * m2,
    )


def _plane_frame_of(zeta0) -> tuple:
    """Validate zeta0 = mu1' + i mu2' with orthonormal real/imaginary parts."""
    z = np.asarray(zeta0, dtype=complex)
    if z.shape != (3,):
        raise ValueError("zeta-not-frame-type: expected a complex 3-vector")
    m1, m2 = z.real.copy(), z.imag.copy()
    if (
        abs(np.linalg.norm(m1) - 1.0) > 1e-10
        or abs(np.linalg.norm(m2) - 1.0) > 1e-10
        or abs(np.dot(m1, m2)) > 1e-10
    ):
        raise ValueError("zeta-not-frame-type: real/imag parts must be orthonormal")
    return m1, m2


def _support_geometry(f: ScalarField, rel_tol: float = 1e-12):
    """Center and radius of the numerical support of f (None if f == 0)."""
    mag = np.abs(f.values)
    peak = mag.max()
    if peak == 0.0:
        return None
    X, Y, Z = f.grid.mesh()
    mask = mag > rel_tol * peak
    pts = np.stack([X[mask], Y[mask], Z[mask]], axis=1)
    center = pts.mean(axis=0)
    radius = float(np.sqrt(((pts - center) ** 2).sum(axis=1)).max())
    return center, radius


def _truncation_radius(grid: Grid, center: np.ndarray, support_radius: float, m1, m2) -> float:
    """Radius beyond which the plane integral sees no support from any node.

    Must cover the in-plane distance from every node to the farthest support
    point; the in-plane norm is convex, so the corners of the box realize the
    max.
    """
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.extent)
    corners = np.array([[a, b, c] for a in (lo[0], hi[0]) for b in (lo[1], hi[1]) for c in (lo[2], hi[2])])
    rel = corners - center
    in_plane = np.sqrt((rel @ m1) ** 2 + (rel @ m2) ** 2)
    return float(in_plane.max() + support_radius + 2.0 * max(grid.spacing))


def cauchy_transform(
    f: ScalarField,
    zeta0,
    method: str = "direct",
    n_r: int = 64,
    n_phi: int = 64,
    truncation_radius: float | None = None,
    interp_order: int = 3,
) -> ScalarField:
    """Invert zeta0 . grad on a compactly supported field.

    Per node x the value is (1/2pi) int_0^R int_0^2pi f(x - r w(phi)) e^{-i phi}
    dphi dr with w(phi) = cos(phi) mu1' + sin(phi) mu2'.
    """
    m1, m2 = _plane_frame_of(zeta0)
    require_compact_support(f)
    geom = _support_geometry(f)
    if geom is None:
        return ScalarField.zeros(f.grid)
    center, radius = geom
    R = truncation_radius if truncation_radius is not None else _truncation_radius(f.grid, center, radius, m1, m2)
    if method == "direct":
        return _cauchy_direct(f, m1, m2, R, n_r, n_phi, interp_order)
    if method == "fft":
        return _cauchy_fft(f, m1, m2, R)
    raise ValueError(f"unknown method {method!r}")


def _cauchy_direct(f: ScalarField, m1, m2, R: float, n_r: int, n_phi: int, interp_order: int = 3) -> ScalarField:
    g = f.grid
    gl_x, gl_w = np.polynomial.legendre.leggauss(n_r)
    r_nodes = 0.5 * R * (gl_x + 1.0)
    r_w = 0.5 * R * gl_w
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    phi_w = 2.0 * np.pi / n_phi
    kern = np.exp(-1j * phi)

    base = np.indices(g.n_points, dtype=float)  # index coordinates of the nodes
    spacing = np.asarray(g.spacing)
    out = np.zeros(g.n_points, dtype=complex)
    # prefilter once so each shifted sample is a plain spline evaluation
    if interp_order > 1:
        re = ndimage.spline_filter(f.values.real, order=interp_order)
        im = ndimage.spline_filter(f.values.imag, order=interp_order)
    else:
        re, im = f.values.real, f.values.imag
    has_im = np.abs(f.values.imag).max() > 0.0
    for j in range(n_phi):
        w = np.cos(phi[j]) * m1 + np.sin(phi[j]) * m2
        for i in range(n_r):
            shift = r_nodes[i] * w / spacing  # node-index offset of x - r w
            coords = base - shift[:, None, None, None]
            val = ndimage.map_coordinates(re, coords, order=interp_order, mode="constant", cval=0.0, prefilter=False)
            if has_im:
                val = val + 1j * ndimage.map_coordinates(
                    im, coords, order=interp_order, mode="constant", cval=0.0, prefilter=False
                )
            out += (r_w[i] * phi_w) * kern[j] * val
    return ScalarField(g, out / (2.0 * np.pi))


def _cauchy_fft(f: ScalarField, m1, m2, R: float) -> ScalarField:
    g = f.grid
    spacing = np.asarray(g.spacing)
    # zero-pad past the kernel's per-axis reach so circular convolution
    # cannot wrap the truncated disk back into the box
    reach = R * np.sqrt(m1**2 + m2**2)  # |P e_c| bound per axis
    pad = np.ceil(reach / spacing).astype(int) + 2
    from scipy.fft import next_fast_len

    shape = tuple(next_fast_len(n + 2 * p) for n, p in zip(g.n_points, pad))
    buf = np.zeros(shape, dtype=complex)
    sl = tuple(slice(p, p + n) for p, n in zip(pad, g.n_points))
    buf[sl] = f.values

    ks = [2.0 * np.pi * np.fft.fftfreq(n, d=d) for n, d in zip(shape, spacing)]
    KX, KY, KZ = np.meshgrid(*ks, indexing="ij", sparse=True)
    a = KX * m1[0] + KY * m1[1] + KZ * m1[2]
    b = KX * m2[0] + KY * m2[1] + KZ * m2[2]
    rho = np.sqrt(a * a + b * b)
    with np.errstate(invalid="ignore", divide="ignore"):
        mult = -1j * np.exp(-1j * np.arctan2(b, a)) * (1.0 - j0(R * rho)) / rho
    mult = np.where(rho == 0.0, 0.0, mult)
    mult = np.broadcast_to(mult, shape).copy()
    # self-paired Nyquist planes (k = -k) cannot carry the odd symmetry of the
    # kernel; dropping them preserves conjugation identities exactly
    for c, n in enumerate(shape):
        if n % 2 == 0:
            idx = [slice(None)] * 3
            idx[c] = n // 2
            mult[tuple(idx)] = 0.0
    conv = np.fft.ifftn(np.fft.fftn(buf) * mult)
    return ScalarField(g, conv[sl])


def transport_phase(A: VectorField, zeta0, method: str = "direct", **kwargs) -> ScalarField:
    """Phase solving zeta0 . grad(Phi) + i zeta0 . A = 0.

    Realized as the Cauchy transform of -i zeta0 . A; the exponential e^Phi is
    then annihilated (to quadrature accuracy) by the transported operator.
    """
    z = np.asarray(zeta0, dtype=complex)
    rhs = ScalarField(A.grid, -1j * (z[0] * A.values[0] + z[1] * A.values[1] + z[2] * A.values[2]))
    return cauchy_transform(rhs, zeta0, method=method, **kwargs)


def transport_residual(Phi: ScalarField, A: VectorField, zeta0) -> float:
    """Relative sup residual of the transport equation for a computed phase."""
    z = np.asarray(zeta0, dtype=complex)
    deriv = fd_directional(Phi, z, order=4)
    res = deriv.values + 1j * sum(z[c] * A.values[c] for c in range(3))
    scale = max(float(np.abs(A.values).max()), 1e-300)
    return float(np.abs(res).max()) / scale


def phase_convergence(
    A: VectorField,
    zeta0,
    h_values=(0.5, 0.25, 0.125, 0.0625),
    theta_rule=None,
    method: str = "fft",
) -> dict:
    """Sup-norm distance between the smoothed-coefficient phase and the limit phase.

    The limit phase uses the unsmoothed coefficient; by linearity of the
    transform the difference equals the transform of A_theta - A, so the
    quadrature error scales with the quantity being measured and the fitted
    slope is clean.  Expected slope gamma/2 under theta = h^{-1/2} for a
    gamma-Holder coefficient.
    """
    from .fitting import fit_rate
    from .potentials import mollify

    if theta_rule is None:
        theta_rule = lambda h: h**-0.5
    if np.abs(A.values).max() == 0.0:
        return {"h": list(h_values), "theta": [theta_rule(h) for h in h_values], "sup_diff": [0.0] * len(h_values), "slope": "exact"}

    rows = []
    for h in h_values:
        theta = float(theta_rule(h))
        A_smooth = mollify(A, theta)
        # by linearity Phi_sharp - Phi is the transform of A_theta - A; doing
        # the subtraction before transforming keeps the quadrature error
        # proportional to the small quantity being measured
        diff = VectorField(A.grid, A_smooth.values - A.values)
        Phi_diff = transport_phase(diff, zeta0, method=method)
        rows.append((h, theta, float(np.abs(Phi_diff.values).max())))
    sup = [r[2] for r in rows]
    fit = fit_rate([r[0] for r in rows], sup)
    return {
        "h": [r[0] for r in rows],
        "theta": [r[1] for r in rows],
        "sup_diff": sup,
        "slope": fit.slope,
    }
