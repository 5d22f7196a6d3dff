"""Coefficient recovery from exponential-solution pairings.

The forward story ends with two operators that the boundary data cannot tell
apart; this module runs the converse direction constructively.  Pairing a
branch-1 solution of the first operator against a branch-2 solution built on
the conjugated coefficients of the second turns the difference of the
operators into a volume integral.  Scaled by h, that integral splits into a
leading block proportional to the Fourier transform of the first-order
coefficient difference along the frame directions and a tail of blocks that
die at fitted rates; sweeping a frequency lattice with two frames per point
recovers the perpendicular projection of the transform, hence the curl of the
difference.  Once the curls agree the difference is a gradient: a line
integral rebuilds the potential, the gauge is resolved, and a second pairing
family (run at the sharper smoothing level theta = 1/h) recovers the combined
zeroth-order data div F + p.  The pipeline chains these stages and reports a
verdict for a pair of convection fields.

All pairings are evaluated in the O(1) variables: products of the two
solutions carry the explicit plane-wave factor e^{i x.xi} exactly (the two
complex frequencies sum to i h xi by construction), so no exponentially large
field is ever formed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dstn

from .cgo import CgoSolution, build_cgo
from .dbar import Frame, build_frame
from .fitting import fit_rate
from .forward import DiscreteOperator, dn_pairing
from .grid import (
    TWO_FORM_INDEX_PAIRS,
    Grid,
    ScalarField,
    TwoForm,
    VectorField,
    curl_two_form,
    fd_divergence,
    fd_gradient,
    l2_norm,
    require_compact_support,
    sample_at,
    sup_norm,
)
from .potentials import make_gauge, reduce_convection

__all__ = [
    "CurlRecovery",
    "FourierSamples",
    "boundary_pairing",
    "curl_recover",
    "electric_error_sweep",
    "electric_fourier",
    "magnetic_fourier",
    "magnetic_pairing",
    "magnetic_term_rates",
    "make_xi_lattice",
    "pairing_terms",
    "pipeline_convection",
    "poincare_potential",
    "poisson_dirichlet",
    "quasilinear_solve",
]

_SAMPLE_KINDS = ("curl-component", "electric")


# ---------------------------------------------------------------------------
# Fourier sample container
# ---------------------------------------------------------------------------


@dataclass
class FourierSamples:
    """Values approximating a target field's Fourier transform at -xi.

    ``values[m]`` estimates FT(target)(-lattice[m]) in the continuous
    convention FT(f)(eta) = integral of f e^{-i x.eta}.  ``kind`` names the
    recovered quantity: a curl component -i(xi_j A_k - xi_k A_j) or the
    zeroth-order combination div F + p.
    """

    lattice: np.ndarray  # (m, 3) frequencies
    values: np.ndarray  # (m,) complex
    kind: str

    def __post_init__(self):
        self.lattice = np.atleast_2d(np.asarray(self.lattice, dtype=float))
        self.values = np.asarray(self.values, dtype=np.complex128).ravel()
        if self.lattice.shape != (self.values.size, 3):
            raise ValueError(
                f"field-shape-mismatch: lattice {self.lattice.shape} vs {self.values.size} values"
            )
        if self.kind not in _SAMPLE_KINDS:
            raise ValueError(f"unknown-sample-kind: {self.kind!r}, expected one of {_SAMPLE_KINDS}")

    def value_at(self, xi) -> complex:
        xi = np.asarray(xi, dtype=float)
        hit = np.flatnonzero(np.all(np.abs(self.lattice - xi) <= 1e-9, axis=1))
        if hit.size == 0:
            raise ValueError(f"frequency-not-sampled: {tuple(xi)}")
        return complex(self.values[hit[0]])

    def hermitian_defect(self, sign: float = 1.0) -> float:
        """Relative l2 size of value(-xi) - sign * conj(value(xi)) over the lattice.

        sign=+1 is the symmetry of transforms of real fields, sign=-1 of
        purely imaginary ones (i times a real profile).  The l2 weighting
        keeps the certificate tied to the content that carries the recovered
        field rather than to the smallest tail samples.  Raises when the
        lattice is not closed under xi -> -xi.
        """
        index = {tuple(np.round(row, 9)): m for m, row in enumerate(self.lattice)}
        gap_sq = 0.0
        for m, row in enumerate(self.lattice):
            key = tuple(np.round(-row, 9))
            if key not in index:
                raise ValueError(f"lattice-not-symmetric: missing {key}")
            gap_sq += abs(self.values[index[key]] - sign * np.conj(self.values[m])) ** 2
        scale = max(float(np.linalg.norm(self.values)), 1e-300)
        return float(np.sqrt(gap_sq)) / scale

    def inverse_transform(self, grid: Grid, cell_volume: float = 1.0) -> ScalarField:
        """Band-limited synthesis (2 pi)^-3 sum of value e^{-i x.xi} cell_volume.

        With ``values[m]`` = FT(target)(-lattice[m]) this is the Riemann sum
        of the inversion formula over the sampled band; the default unit cell
        matches the integer lattice of `make_xi_lattice`.
        """
        acc = _synthesize(self.lattice, self.values[None, :], grid)[0]
        return ScalarField(grid, acc * (cell_volume / (2.0 * np.pi) ** 3))


def _synthesize(lattice: np.ndarray, values: np.ndarray, grid: Grid) -> np.ndarray:
    """sum_m values[c, m] e^{-i x.xi_m} for each channel c, separably per axis."""
    ax, ay, az = grid.axes()
    out = np.zeros((values.shape[0],) + grid.n_points, dtype=np.complex128)
    for m, xi in enumerate(lattice):
        px = np.exp(-1j * ax * xi[0])[:, None, None]
        py = np.exp(-1j * ay * xi[1])[None, :, None]
        pz = np.exp(-1j * az * xi[2])[None, None, :]
        wave = px * py * pz
        for c in range(values.shape[0]):
            out[c] += values[c, m] * wave
    return out


def make_xi_lattice(max_norm: int = 4) -> np.ndarray:
    """Integer frequency lattice |xi|_inf <= max_norm with the origin removed."""
    if max_norm < 1:
        raise ValueError(f"lattice-empty: max_norm must be >= 1, got {max_norm}")
    rng = range(-max_norm, max_norm + 1)
    rows = [(i, j, k) for i in rng for j in rng for k in rng if (i, j, k) != (0, 0, 0)]
    return np.array(rows, dtype=float)


# ---------------------------------------------------------------------------
# difference pairings
# ---------------------------------------------------------------------------


def _as_triple(coeffs):
    A, F, p = coeffs
    return A, F, p


def _conjugate_triple(coeffs):
    A, F, p = _as_triple(coeffs)
    return (
        VectorField(A.grid, np.conj(A.values)),
        VectorField(F.grid, np.conj(F.values)),
        ScalarField(p.grid, np.conj(p.values)),
    )


def _solution_pair(op1, op2_conj, xi, h, theta_rule, frame):
    u1 = build_cgo(op1, xi, h, theta_rule=theta_rule, which=1, frame=frame)
    u2 = build_cgo(op2_conj, xi, h, theta_rule=theta_rule, which=2, frame=frame)
    return u1, u2


def pairing_terms(u1: CgoSolution, u2: CgoSolution, coeffs1, coeffs2) -> dict:
    """The h-scaled difference pairing split into its limit blocks.

    Keys: ``leading`` (frame directions against the smoothed-amplitude
    product), ``remainder_cross`` (same factor against the blocks containing
    a solve remainder), ``gradient_cross`` (the h-weighted antisymmetric
    gradient block), ``mass`` (the zeroth-order difference block), ``f_part``
    (the divergence-form block, assembled on the gradient of the product of
    the two solutions).  The sum of the five is the h-scaled quadrature of
    the full identity integrand; the constant factors from the two expansion
    centers cancel exactly because the frequencies sum to i h xi.
    """
    if u1.which != 1 or u2.which != 2:
        raise ValueError("frame-mismatch: pairing needs a branch-1 and a branch-2 solution")
    if u1.frame != u2.frame:
        raise ValueError("frame-mismatch: the two solutions use different frames")
    g = u1.grid
    if not g.compatible(u2.grid):
        raise ValueError("frame-mismatch: the two solutions live on different grids")
    A1, F1, p1 = _as_triple(coeffs1)
    A2, F2, p2 = _as_triple(coeffs2)
    for f in (A1, F1, p1, A2, F2, p2):
        if not f.grid.compatible(g):
            raise ValueError("frame-mismatch: coefficients live on a different grid")

    h = u1.h
    xi = u1.frame.xi_arr
    X, Y, Z = g.mesh()
    phase = np.exp(1j * (xi[0] * X + xi[1] * Y + xi[2] * Z))
    w = g.trapezoid_weights() * phase

    a1 = u1.amplitude.values
    a2c = np.conj(u2.amplitude.values)
    r1 = u1.remainder.values
    r2c = np.conj(u2.remainder.values)
    P = a1 + r1
    Qc = a2c + r2c
    gradP = fd_gradient(ScalarField(g, P)).values
    gradQc = fd_gradient(ScalarField(g, Qc)).values

    dA = A1.values - A2.values
    dF = F1.values - F2.values
    dmass = (
        np.sum(A1.values * A1.values, axis=0)
        - np.sum(A2.values * A2.values, axis=0)
        + p1.values
        - p2.values
    )
    # h (u1 grad conj(u2) - conj(u2) grad u1) = e^{i x.xi} (zv P Qc + h (P grad Qc - Qc grad P))
    zv = np.conj(u2.zeta_arr) - u1.zeta_arr
    dA_dot_zv = np.einsum("c...,c->...", dA, zv)

    terms = {
        "leading": 1j * np.sum(w * dA_dot_zv * a1 * a2c),
        "remainder_cross": 1j * np.sum(w * dA_dot_zv * (a1 * r2c + r1 * a2c + r1 * r2c)),
        "gradient_cross": 1j
        * h
        * np.sum(w * np.sum(dA * (P * gradQc - Qc * gradP), axis=0)),
        "mass": h * np.sum(w * dmass * P * Qc),
        "f_part": -h
        * np.sum(
            w
            * (
                np.einsum("c...,c->...", dF, 1j * xi) * P * Qc
                + np.sum(dF * (P * gradQc + Qc * gradP), axis=0)
            )
        ),
    }
    return {k: complex(v) for k, v in terms.items()}


def magnetic_pairing(u1: CgoSolution, u2: CgoSolution, coeffs1, coeffs2) -> complex:
    """h times the volume quadrature of the difference-pairing integrand."""
    return complex(sum(pairing_terms(u1, u2, coeffs1, coeffs2).values()))


def boundary_pairing(u1: CgoSolution, u2: CgoSolution, coeffs1, coeffs2) -> complex:
    """The same h-scaled pairing evaluated from boundary data alone.

    Solves each operator's Dirichlet problem with the branch-1 trace and pairs
    the two boundary fluxes against the conjugated branch-2 field; no
    coefficient difference appears.  Accuracy is one order looser than the
    interior quadrature (it inherits the full discretization error of the two
    solves instead of the difference-weighted one).
    """
    if u1.which != 1 or u2.which != 2:
        raise ValueError("frame-mismatch: pairing needs a branch-1 and a branch-2 solution")
    if u1.frame != u2.frame:
        raise ValueError("frame-mismatch: the two solutions use different frames")
    op1 = DiscreteOperator.magnetic(*_as_triple(coeffs1))
    op2 = DiscreteOperator.magnetic(*_as_triple(coeffs2))
    f = u1.field()
    test = ScalarField(u2.grid, np.conj(u2.field().values))
    return u1.h * (dn_pairing(op1, f, test) - dn_pairing(op2, f, test))


def magnetic_fourier(coeffs1, coeffs2, xi, h: float, theta_rule=None, frame: Frame | None = None) -> complex:
    """Frame-direction component of the first-order difference transform.

    The h-scaled pairing divided by -2i; as h shrinks this approaches
    (mu1 + i mu2) . integral (A1 - A2) e^{i x.xi} e^{phase sum} dx, the
    smoothed-amplitude product supplying the phase-sum factor.
    """
    if frame is None:
        frame = build_frame(xi, h)
    op1 = DiscreteOperator.magnetic(*_as_triple(coeffs1))
    op2c = DiscreteOperator.magnetic(*_conjugate_triple(coeffs2))
    u1, u2 = _solution_pair(op1, op2c, xi, h, theta_rule, frame)
    return magnetic_pairing(u1, u2, coeffs1, coeffs2) / (-2j)


def magnetic_term_rates(coeffs1, coeffs2, xi, h_values=(0.5, 0.35, 0.25), theta_rule=None) -> dict:
    """h-sweep of the pairing blocks with fitted decay slopes.

    The leading block tends to a nonzero limit for a generic difference; the
    other four die, each at its own rate, and the fitted slopes certify them.
    Blocks that are identically zero (no data to fit) get slope None.
    """
    hs = [float(v) for v in h_values]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError(f"h-schedule-not-decreasing: {hs}")
    op1 = DiscreteOperator.magnetic(*_as_triple(coeffs1))
    op2c = DiscreteOperator.magnetic(*_conjugate_triple(coeffs2))
    rows = []
    for h in hs:
        frame = build_frame(xi, h)
        u1, u2 = _solution_pair(op1, op2c, xi, h, theta_rule, frame)
        terms = pairing_terms(u1, u2, coeffs1, coeffs2)
        row = {"h": h, "theta": u1.theta}
        row.update({k: abs(v) for k, v in terms.items()})
        row["total"] = abs(sum(terms.values()))
        rows.append(row)
    slopes = {}
    for key in ("leading", "remainder_cross", "gradient_cross", "mass", "f_part", "total"):
        vals = [row[key] for row in rows]
        slopes[key] = fit_rate(hs, vals).slope if min(vals) > 0.0 else None
    return {"rows": rows, "h": hs, "slopes": slopes}


# ---------------------------------------------------------------------------
# curl recovery over a frequency lattice
# ---------------------------------------------------------------------------


@dataclass
class CurlRecovery:
    """Curl-component samples over a frequency lattice and their synthesis.

    ``samples[m]`` holds -i(xi_j Ahat_k - xi_k Ahat_j) for the index pair
    TWO_FORM_INDEX_PAIRS[m]; ``field`` is the band-limited inverse transform,
    the reconstructed curl difference on the grid.  ``phase_defect`` is the
    sup of the summed transport phases over all pairings, the size of the
    deviation of the amplitude-product factor from 1.
    """

    lattice: np.ndarray
    samples: tuple
    field: TwoForm
    phase_defect: float
    h: float

    def sample_for(self, j: int, k: int) -> FourierSamples:
        if (j, k) not in TWO_FORM_INDEX_PAIRS:
            raise ValueError(f"unknown index pair {(j, k)}; use ascending pairs {TWO_FORM_INDEX_PAIRS}")
        return self.samples[TWO_FORM_INDEX_PAIRS.index((j, k))]


def _rotate_frame(frame: Frame, angle: float) -> Frame:
    if angle == 0.0:
        return frame
    c, s = np.cos(angle), np.sin(angle)
    m1 = c * frame.mu1_arr + s * frame.mu2_arr
    m2 = -s * frame.mu1_arr + c * frame.mu2_arr
    m1 /= np.linalg.norm(m1)
    m2 -= m1 * np.dot(m1, m2)
    m2 /= np.linalg.norm(m2)
    return Frame(xi=frame.xi, mu1=tuple(m1), mu2=tuple(m2), h=frame.h)


def _swap_frame(frame: Frame) -> Frame:
    return Frame(xi=frame.xi, mu1=frame.mu2, mu2=frame.mu1, h=frame.h)


def curl_recover(
    coeffs1,
    coeffs2,
    lattice: np.ndarray | None = None,
    h: float = 0.25,
    theta_rule=None,
    frame_angle: float = 0.0,
) -> CurlRecovery:
    """Recover the curl of the first-order difference over a frequency lattice.

    Per frequency, two frames (a pair and its swap) give two pairing values;
    the exact 2x2 relation between them and the two perpendicular components
    of the difference transform is inverted (its off-diagonal carries the
    radical sqrt(1 - h^2 |xi|^2 / 4), so the inversion stays faithful at the
    lattice corners where the radical is well below 1).  The parallel
    component never enters the antisymmetric combinations.  ``frame_angle``
    rotates the base frame in its perpendicular plane; recovered samples are
    frame-independent up to the reported defects.
    """
    if lattice is None:
        lattice = make_xi_lattice(4)
    lattice = np.atleast_2d(np.asarray(lattice, dtype=float))
    if lattice.ndim != 2 or lattice.shape[1] != 3:
        raise ValueError(f"field-shape-mismatch: lattice must be (m, 3), got {lattice.shape}")
    norms = np.linalg.norm(lattice, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-frequency: the lattice must exclude xi = 0")

    A1, F1, p1 = _as_triple(coeffs1)
    g = A1.grid
    op1 = DiscreteOperator.magnetic(*_as_triple(coeffs1))
    op2c = DiscreteOperator.magnetic(*_conjugate_triple(coeffs2))

    comp_values = np.zeros((3, lattice.shape[0]), dtype=np.complex128)
    phase_defect = 0.0
    for m, xi in enumerate(lattice):
        base = _rotate_frame(build_frame(xi, h), frame_angle)
        vals = []
        for frame in (base, _swap_frame(base)):
            u1, u2 = _solution_pair(op1, op2c, xi, h, theta_rule, frame)
            phase_sum = u1.phi_sharp.values + np.conj(u2.phi_sharp.values)
            phase_defect = max(phase_defect, float(np.abs(phase_sum).max()))
            vals.append(magnetic_pairing(u1, u2, coeffs1, coeffs2) / (-2j))
        rad = np.sqrt(1.0 - h * h * float(xi @ xi) / 4.0)
        det = 1.0 + rad * rad
        alpha = (vals[0] - 1j * rad * vals[1]) / det
        beta = (vals[1] - 1j * rad * vals[0]) / det
        a_perp = alpha * base.mu1_arr + beta * base.mu2_arr
        for c, (j, k) in enumerate(TWO_FORM_INDEX_PAIRS):
            comp_values[c, m] = -1j * (xi[j] * a_perp[k] - xi[k] * a_perp[j])

    samples = tuple(
        FourierSamples(lattice, comp_values[c], "curl-component") for c in range(3)
    )
    synth = _synthesize(lattice, comp_values, g) / (2.0 * np.pi) ** 3
    field = TwoForm(g, synth)
    return CurlRecovery(lattice=lattice, samples=samples, field=field, phase_defect=phase_defect, h=h)


# ---------------------------------------------------------------------------
# zeroth-order (electric) recovery
# ---------------------------------------------------------------------------


def _check_magnetic_match(coeffs1, coeffs2, tolerance: float) -> float:
    A1 = _as_triple(coeffs1)[0]
    A2 = _as_triple(coeffs2)[0]
    gap = float(np.abs(A1.values - A2.values).max())
    scale = max(1.0, float(np.abs(A1.values).max()))
    if gap > tolerance * scale:
        raise ValueError(
            f"magnetic-parts-differ: sup difference {gap:.3e} exceeds {tolerance:.1e} x scale; "
            "resolve the gauge first"
        )
    return gap


def electric_fourier(
    coeffs1,
    coeffs2,
    xi,
    h: float,
    frame: Frame | None = None,
    tolerance: float = 1e-8,
) -> complex:
    """Transform of div(F1 - F2) + p1 - p2 at -xi from one pairing.

    Requires the first-order coefficients to agree (the amplitude-product
    factor is then 1 up to conjugation roundoff, no gauge phase pollutes the
    value); runs at the sharper smoothing level theta = 1/h and carries no
    h factor.  The divergence-form block is assembled on the gradient of the
    solution product, never on F itself.
    """
    _check_magnetic_match(coeffs1, coeffs2, tolerance)
    if frame is None:
        frame = build_frame(xi, h)
    op1 = DiscreteOperator.magnetic(*_as_triple(coeffs1))
    op2c = DiscreteOperator.magnetic(*_conjugate_triple(coeffs2))
    u1, u2 = _solution_pair(op1, op2c, xi, h, lambda t: 1.0 / t, frame)
    terms = pairing_terms(u1, u2, coeffs1, coeffs2)
    return complex(sum(terms.values())) / h


def electric_error_sweep(
    coeffs1,
    coeffs2,
    xi,
    h_values=(0.5, 0.35, 0.25),
    tolerance: float = 1e-8,
) -> dict:
    """h-sweep of the error integral left after the zeroth-order recovery.

    The pairing splits into the target transform plus everything carried by
    the solution remainders (the second integral); measured here as the gap
    between the recovered value and the direct transform of the discrete
    divergence-plus-p difference.  The gap's fitted slope is positive for
    smooth-enough coefficient families and degrades to non-decay below the
    regularity threshold.
    """
    hs = [float(v) for v in h_values]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError(f"h-schedule-not-decreasing: {hs}")
    _check_magnetic_match(coeffs1, coeffs2, tolerance)
    _, F1, p1 = _as_triple(coeffs1)
    _, F2, p2 = _as_triple(coeffs2)
    g = F1.grid
    target = ScalarField(
        g, fd_divergence(VectorField(g, F1.values - F2.values)).values + (p1.values - p2.values)
    )
    xi_arr = np.asarray(xi, dtype=float)
    oracle = complex(fourier_transform_at(target, -xi_arr[None, :])[0])

    rows = []
    for h in hs:
        value = electric_fourier(coeffs1, coeffs2, xi_arr, h, tolerance=tolerance)
        err = abs(value - oracle)
        rows.append(
            {
                "h": h,
                "theta": 1.0 / h,
                "value": value,
                "oracle": oracle,
                "error_abs": err,
                "error_rel": err / abs(oracle) if abs(oracle) > 1e-14 else None,
            }
        )
    errors = [row["error_abs"] for row in rows]
    slope = fit_rate(hs, errors).slope if min(errors) > 0.0 else None
    return {"rows": rows, "h": hs, "error_abs": errors, "slope": slope, "oracle": oracle}


# ---------------------------------------------------------------------------
# potential reconstruction and the quasilinear endgame
# ---------------------------------------------------------------------------


def poincare_potential(
    W: VectorField,
    base_point=None,
    n_steps: int = 96,
    curl_tol: float = 1e-6,
    support_tol: float = 1e-8,
) -> ScalarField:
    """Line-integral potential of a closed, compactly supported field.

    psi(x) = integral_0^1 W(x0 + t (x - x0)) . (x - x0) dt by composite
    Simpson quadrature with trilinear sampling, then shifted by a constant so
    the boundary-layer mean vanishes (the base point sits outside the
    support, so psi is constant there).  fd_gradient of the result matches W
    to quadrature order.
    """
    g = W.grid
    require_compact_support(W, tol=support_tol)
    wsup = sup_norm(W)
    if wsup == 0.0:
        return ScalarField.zeros(g)
    curl = curl_two_form(W)
    csup = float(np.abs(curl.components).max())
    if csup > curl_tol * wsup:
        raise ValueError(
            f"field-not-closed: sup |curl| = {csup:.3e} vs {curl_tol:.1e} x sup |W| = {curl_tol * wsup:.3e}"
        )
    lo = np.asarray(g.origin)
    hi = lo + np.asarray(g.extent)
    if base_point is None:
        base_point = lo + 2.0 * np.asarray(g.spacing)
    x0 = np.asarray(base_point, dtype=float)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError(f"base-point-outside-box: {tuple(x0)} not in [{tuple(lo)}, {tuple(hi)}]")

    n = int(n_steps)
    if n % 2:
        n += 1
    ts = np.linspace(0.0, 1.0, n + 1)
    sw = np.ones(n + 1)
    sw[1:-1:2] = 4.0
    sw[2:-1:2] = 2.0
    sw /= 3.0 * n

    X, Y, Z = g.mesh()
    disp = np.stack([X.ravel() - x0[0], Y.ravel() - x0[1], Z.ravel() - x0[2]], axis=1)
    comps = [ScalarField(g, W.values[c]) for c in range(3)]
    acc = np.zeros(disp.shape[0], dtype=np.complex128)
    for t, weight in zip(ts, sw):
        pts = x0[None, :] + t * disp
        along = np.zeros(disp.shape[0], dtype=np.complex128)
        for c in range(3):
            along += sample_at(comps[c], pts, clamp=True) * disp[:, c]
        acc += weight * along
    psi = acc.reshape(g.n_points)

    mask = np.zeros(g.n_points, dtype=bool)
    for c in range(3):
        sl = [slice(None)] * 3
        sl[c] = 0
        mask[tuple(sl)] = True
        sl[c] = -1
        mask[tuple(sl)] = True
    psi = psi - psi[mask].mean()
    return ScalarField(g, psi)


def poisson_dirichlet(rhs: ScalarField) -> ScalarField:
    """Solve the seven-point Laplace problem with zero boundary values.

    Diagonalized by the type-1 sine transform per axis; the orthonormal
    variant is its own inverse, so the solve is two transforms and a
    division by the (strictly negative) symbol.
    """
    g = rhs.grid
    if any(n < 4 for n in g.n_points):
        raise ValueError(f"grid-underresolved: need >= 4 nodes per axis, got {g.n_points}")
    inner = rhs.values[1:-1, 1:-1, 1:-1]
    lam = np.zeros(inner.shape)
    for c in range(3):
        m = g.n_points[c] - 2
        k = np.arange(1, m + 1)
        lam_c = (4.0 / g.spacing[c] ** 2) * np.sin(np.pi * k / (2.0 * (g.n_points[c] - 1))) ** 2
        shp = [1, 1, 1]
        shp[c] = -1
        lam = lam + lam_c.reshape(shp)

    def _solve_real(block):
        spec = dstn(block, type=1, norm="ortho")
        return dstn(-spec / lam, type=1, norm="ortho")

    sol = _solve_real(np.ascontiguousarray(inner.real))
    if np.abs(inner.imag).max() > 0.0:
        sol = sol + 1j * _solve_real(np.ascontiguousarray(inner.imag))
    out = np.zeros(g.n_points, dtype=np.complex128)
    out[1:-1, 1:-1, 1:-1] = sol
    return ScalarField(g, out)


def quasilinear_solve(
    V1: VectorField,
    initial: ScalarField | None = None,
    tol: float = 1e-10,
    max_iterations: int = 100,
) -> tuple:
    """Picard iteration for the gauge equation with zero boundary data.

    Each step solves the seven-point Laplace problem with the previous
    iterate's drift and square-gradient terms as the source; zero is a fixed
    point, and for moderate drift the iteration contracts to it.  Returns
    (solution, info) where info reports iterations, the sup step norms, and
    the median geometric contraction factor.
    """
    g = V1.grid
    if initial is None:
        psi = np.zeros(g.n_points, dtype=np.complex128)
    else:
        if not initial.grid.compatible(g):
            raise ValueError("grid-mismatch: initial iterate lives on a different grid")
        psi = initial.values.astype(np.complex128).copy()
    steps = []
    for _ in range(max_iterations):
        grad = fd_gradient(ScalarField(g, psi)).values
        rhs = np.einsum("c...,c...->...", V1.values, grad) - 0.5 * np.sum(grad * grad, axis=0)
        new = poisson_dirichlet(ScalarField(g, rhs)).values
        step = float(np.abs(new - psi).max())
        steps.append(step)
        psi = new
        if step < tol:
            break
    else:
        raise ValueError(
            f"picard-diverged: no step below {tol:.1e} after {max_iterations} iterations; "
            f"last step norms {[f'{s:.3e}' for s in steps[-5:]]}"
        )
    ratios = [b / a for a, b in zip(steps, steps[1:]) if a > 0.0]
    contraction = float(np.median(ratios)) if ratios else 0.0
    info = {"iterations": len(steps), "step_norms": steps, "contraction": contraction}
    return ScalarField(g, psi), info


# ---------------------------------------------------------------------------
# end-to-end pipeline
# ---------------------------------------------------------------------------


def _complex_pair(z: complex) -> list:
    return [float(np.real(z)), float(np.imag(z))]


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _write_samples_csv(path: Path, samples: FourierSamples) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi1", "xi2", "xi3", "re", "im"])
        for row, val in zip(samples.lattice, samples.values):
            writer.writerow([row[0], row[1], row[2], float(val.real), float(val.imag)])


def pipeline_convection(
    V1: VectorField,
    V2: VectorField,
    h_schedule=(0.5, 0.35, 0.25),
    lattice_max: int = 2,
    out_dir=None,
    theta_rule=None,
    base_point=None,
    support_tol: float = 1e-8,
    include_slopes: bool = True,
) -> dict:
    """Decide whether two convection fields are distinguishable from pairings.

    Stage 1 reduces both fields to first/zeroth-order coefficient triples and
    recovers the curl of the first-order difference over the frequency
    lattice at the finest h.  The noise floor is the same recovery run on an
    internal calibration pair that differs by an exact discrete gradient of
    matched amplitude, so its true curl difference is zero and everything it
    returns is machinery noise.  Curl norm above 3x the floor ends the run as
    distinguished-at-curl.

    Stage 2 otherwise rebuilds the gauge potential from the first-order
    difference by line integration, reports how well its gradient closes the
    gap, and moves the remaining contrast into the zeroth-order data: the
    electric recovery runs with the first triple's first-order part on both
    sides (the certified gauge replacement), so its precondition holds
    exactly.  Its own floor is a composition shuffle (F, p) -> (0, div F + p)
    of the first triple, which leaves the recovered combination unchanged.
    Electric norm above 3x that floor gives distinguished-at-electric,
    otherwise the verdict is indistinguishable.

    The report is JSON-ready except for the reconstructed field objects
    (``curl_field``, ``electric_field``, ``gauge_potential``); with
    ``out_dir`` set, the JSON report and per-sample CSV files are written.
    """
    g = V1.grid
    if not V2.grid.compatible(g):
        raise ValueError("grid-mismatch: the two convection fields live on different grids")
    require_compact_support(V1, tol=support_tol)
    require_compact_support(V2, tol=support_tol)
    hs = [float(v) for v in h_schedule]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError(f"h-schedule-not-decreasing: {hs}")
    h_rec = hs[-1]

    c1 = reduce_convection(V1)
    c2 = reduce_convection(V2)
    A1, F1, p1 = c1
    A2, F2, p2 = c2
    lattice = make_xi_lattice(lattice_max)

    # calibration pair: first-order parts differing by an exact discrete
    # gradient at the amplitude of the actual difference (floor of stage 1)
    diff_sup = float(np.abs(A1.values - A2.values).max())
    cal_target = max(diff_sup, 0.05 * max(1.0, sup_norm(A1)))
    chi = make_gauge(g, center=(0.15, -0.2, 0.1), radius=0.6)
    grad_chi = fd_gradient(chi).values
    chi_scale = cal_target / max(float(np.abs(grad_chi).max()), 1e-300)
    A_cal = VectorField(g, A1.values + 1j * chi_scale * grad_chi)
    c_cal = (A_cal, F1, p1)

    main = curl_recover(c1, c2, lattice, h_rec, theta_rule)
    floor = curl_recover(c1, c_cal, lattice, h_rec, theta_rule)
    curl_norm = l2_norm(VectorField(g, main.field.components))
    floor_curl = l2_norm(VectorField(g, floor.field.components))
    curl_scale = l2_norm(VectorField(g, curl_two_form(A1).components))
    floor_curl_eff = max(floor_curl, 1e-12 * max(1.0, curl_scale))

    per_xi = []
    for m, xi in enumerate(lattice):
        entry = {"xi": [int(v) if float(v).is_integer() else float(v) for v in xi]}
        for c, (j, k) in enumerate(TWO_FORM_INDEX_PAIRS):
            entry[f"w{j + 1}{k + 1}"] = _complex_pair(main.samples[c].values[m])
        per_xi.append(entry)

    report = {
        "verdict": None,
        "h_schedule": hs,
        "h_recovery": h_rec,
        "lattice_max": lattice_max,
        "noise_floor": {"curl": floor_curl, "electric": None},
        "curl": {
            "norm": curl_norm,
            "scale": curl_scale,
            "ratio_to_floor": curl_norm / floor_curl_eff,
            "phase_defect": main.phase_defect,
            "calibration_amplitude": cal_target,
            "per_xi": per_xi,
        },
        "gauge": None,
        "electric": None,
        "slopes": None,
        "curl_field": main.field,
        "electric_field": None,
        "gauge_potential": None,
    }

    if curl_norm > 3.0 * floor_curl_eff:
        report["verdict"] = "distinguished-at-curl"
    else:
        W = VectorField(g, A1.values - A2.values)
        if sup_norm(W) == 0.0:
            psi = ScalarField.zeros(g)
            gauge_residual = 0.0
            psi_boundary = 0.0
        else:
            psi = poincare_potential(W, base_point=base_point, support_tol=support_tol)
            gauge_residual = float(np.abs(fd_gradient(psi).values - W.values).max())
            mask = np.zeros(g.n_points, dtype=bool)
            for c in range(3):
                sl = [slice(None)] * 3
                sl[c] = 0
                mask[tuple(sl)] = True
                sl[c] = -1
                mask[tuple(sl)] = True
            psi_boundary = float(np.abs(psi.values[mask]).max())
        report["gauge"] = {
            "residual_sup": gauge_residual,
            "residual_relative": gauge_residual / max(sup_norm(W), 1e-300),
            "psi_boundary_sup": psi_boundary,
        }
        report["gauge_potential"] = psi

        # certified gauge replacement: the electric stage pairs the two
        # zeroth-order data sets over the shared first-order part A1
        e_main_1 = (A1, F1, p1)
        e_main_2 = (A1, F2, p2)
        F_zero = VectorField.zeros(g)
        p_shuffle = ScalarField(g, fd_divergence(F1).values + p1.values)
        e_floor_2 = (A1, F_zero, p_shuffle)

        e_vals = np.zeros(lattice.shape[0], dtype=np.complex128)
        f_vals = np.zeros(lattice.shape[0], dtype=np.complex128)
        for m, xi in enumerate(lattice):
            e_vals[m] = electric_fourier(e_main_1, e_main_2, xi, h_rec)
            f_vals[m] = electric_fourier(e_main_1, e_floor_2, xi, h_rec)
        e_samples = FourierSamples(lattice, e_vals, "electric")
        e_field = e_samples.inverse_transform(g)
        floor_field = FourierSamples(lattice, f_vals, "electric").inverse_transform(g)
        e_norm = l2_norm(e_field)
        floor_e = l2_norm(floor_field)
        q1 = ScalarField(g, fd_divergence(F1).values + p1.values)
        floor_e_eff = max(floor_e, 1e-12 * max(1.0, l2_norm(q1)))

        report["noise_floor"]["electric"] = floor_e
        report["electric"] = {
            "norm": e_norm,
            "ratio_to_floor": e_norm / floor_e_eff,
            "per_xi": [
                {"xi": [int(v) if float(v).is_integer() else float(v) for v in xi], "value": _complex_pair(val)}
                for xi, val in zip(lattice, e_vals)
            ],
        }
        report["electric_field"] = e_field
        report["verdict"] = (
            "distinguished-at-electric" if e_norm > 3.0 * floor_e_eff else "indistinguishable"
        )

    if include_slopes:
        xi0 = np.array([0.0, 0.0, float(min(2, lattice_max))])
        mag = magnetic_term_rates(c1, c_cal, xi0, hs, theta_rule)
        F_zero = VectorField.zeros(g)
        p_shuffle = ScalarField(g, fd_divergence(F1).values + p1.values)
        sweep = electric_error_sweep((A1, F1, p1), (A1, F_zero, p_shuffle), xi0, hs)
        report["slopes"] = {
            "magnetic_terms": mag["slopes"],
            "electric_second_integral": sweep["slope"],
        }

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        clean = {k: v for k, v in report.items() if k not in ("curl_field", "electric_field", "gauge_potential")}
        with (out / "report.json").open("w") as fh:
            json.dump(_json_ready(clean), fh, indent=2)
        for c, (j, k) in enumerate(TWO_FORM_INDEX_PAIRS):
            _write_samples_csv(out / f"curl_w{j + 1}{k + 1}.csv", main.samples[c])
        if report["electric"] is not None:
            _write_samples_csv(out / "electric.csv", e_samples)

    return report
