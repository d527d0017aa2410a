import cmath
import math

import numpy as np
import pytest

from sigmastab import boundaries as bd
from sigmastab.errors import ValidationError
from sigmastab.model import LoopConfig
from sigmastab.quasipoly import loop_quasipolynomial
from sigmastab.tuning import gain_box, minimal_gains_no_scatter

PLAIN = LoopConfig.make(1, 1, 0.1)
FIXED = LoopConfig.make(1, 1, 0.1, "fixed-d", d=15)


def residual(cfg, kp, ki, s):
    q = loop_quasipolynomial(cfg, kp, ki)
    return abs(q(s)) / q.scale(s)


def test_kernel_at_half_period():
    h, sigma = 0.1, 3.0
    E = math.exp(h * sigma)
    k = bd.kernel(FIXED, sigma, math.pi / h)
    assert k.alpha == pytest.approx(1 - E)
    assert k.beta == pytest.approx(1 + E)
    assert k.gamma == pytest.approx(0, abs=1e-14)
    k = bd.kernel(FIXED, sigma, 1e-9)
    assert (k.alpha, k.beta) == pytest.approx((1 + E, 1 - E))
    assert k.gamma == pytest.approx(0, abs=1e-8)


def test_kernel_at_zero_abscissa():
    k = bd.kernel(FIXED, 0.0, math.pi / 0.2)
    assert (k.alpha, k.beta, k.gamma) == pytest.approx((1, 1, 1))


def test_kernel_requires_scattering():
    with pytest.raises(ValidationError):
        bd.kernel(PLAIN, 1.0, 1.0)


def test_kernel_rows_solve_the_loop_equation():
    # any (kp, ki) solving A (kp, ki) = d B puts a root at -sigma + j omega
    sigma, omega = 4.0, 13.0
    k = bd.kernel(FIXED, sigma, omega)
    kp, ki = np.linalg.solve(k.A, 15 * k.B)
    assert residual(FIXED, kp, ki, complex(-sigma, omega)) < 1e-12


def test_real_root_line_examples():
    for kp in (0.0, 1.5, 40.0):
        assert bd.real_root_line(PLAIN, 0.0, kp) == 0.0
    assert bd.real_root_line(PLAIN, 3.0, 3.2596) == pytest.approx(
        3 * 3.2596 - 6 / math.exp(0.3), rel=1e-12)
    assert bd.real_root_line(PLAIN, 3.0, 3.2596) == pytest.approx(5.334, abs=1e-3)
    h0 = LoopConfig.make(1, 1, 0.0)
    assert bd.real_root_line(h0, 2.0, 1.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("cfg", [PLAIN, FIXED, LoopConfig.make(2, 0.5, 0.2, "zeta", zeta=0.9)])
def test_real_root_line_places_root(cfg):
    for sigma, kp in ((1.0, 5.0), (6.0, 30.0)):
        ki = bd.real_root_line(cfg, sigma, kp)
        assert residual(cfg, kp, ki, -sigma) < 1e-12


def test_complex_boundary_limit_is_the_double_root_point():
    g = minimal_gains_no_scatter(1, 1, 0.1, 3.0)
    pts = [np.array(bd.complex_boundary(PLAIN, 3.0, w)[0]) for w in (1e-3, 1e-4, 1e-5, 1e-6)]
    gaps = [np.abs(pts[k + 1] - pts[k]).max() for k in range(3)]
    assert gaps[1] < gaps[0] / 50 and gaps[2] < gaps[1] / 50
    assert pts[-1] == pytest.approx([g.kp, g.ki], abs=1e-4)
    assert pts[-1] == pytest.approx([3.2596, 5.3339], abs=1e-4)


@pytest.mark.parametrize("cfg,sigma,omega", [
    (PLAIN, 3.0, 7.0), (PLAIN, 0.0, 20.0), (FIXED, 10.0, 5.0), (FIXED, 2.0, 60.0),
    (LoopConfig.make(1, 1, 0.1, "zeta", zeta=0.9), 5.0, 7.0),
    (LoopConfig.make(1, 1, 0.1, "zeta", zeta=0.8336), 12.0, 20.0),
])
def test_complex_boundary_back_substitution(cfg, sigma, omega):
    sols = bd.complex_boundary(cfg, sigma, omega)
    assert sols
    s = complex(-sigma, omega)
    for kp, ki in sols:
        q = loop_quasipolynomial(cfg, kp, ki)
        assert abs(q(s)) < 1e-9 * q.scale(s)


def test_fixed_d_back_substitution_absolute():
    (kp, ki), = bd.complex_boundary(FIXED, 10.0, 5.0)
    assert abs(loop_quasipolynomial(FIXED, kp, ki)(complex(-10, 5))) < 1e-9


def _xy_oracle_roots(a, b, h, zeta, sigma, omega):
    """kp values for which -X/Y is real, with p = X + ki Y at s = -sigma + j omega."""
    s = complex(-sigma, omega)
    e = cmath.exp(-h * s)

    def g(kp):
        d = zeta * kp
        X = (s + a + b * d) * (kp + d) * s - e * (kp - d) * s * (s + a - b * d)
        Y = (s + a + b * d) - e * (s + a - b * d)
        return (X * Y.conjugate()).imag

    xs = np.array([1.0, 2.0, 3.0, 4.0])
    c = np.polyfit(xs, [g(x) for x in xs], 3)  # g(0) = 0: drop the kp factor
    return np.sort(np.roots(c[:3]).real)


def _displayed_coefficients(a, b, h, zeta, sigma, omega, repaired):
    """Quadratic coefficients in the commonly quoted closed form; ``repaired``
    replaces sin(h sigma) by sin(h omega) in c1 and e^{2 h sigma} by e^{h sigma}
    in the second part of c0."""
    E = math.exp(h * sigma)
    E2 = E * E
    asg = a - sigma
    c, sn = math.cos(h * omega), math.sin(h * omega)
    c2 = ((zeta - 1) * E2 - (zeta + 1) - 2 * E * c) * omega + 2 * zeta * E * sn * sigma
    inner = sn if repaired else math.sin(h * sigma)
    c1 = 2 * ((-(zeta - 1) * E2 - (zeta + 1)) * asg
              + 2 * E * (zeta * sigma * c + omega * inner)) * omega
    c0 = (omega ** 2 + asg ** 2) * ((E2 * (zeta - 1) - (zeta + 1)) * omega
                                    + 2 * (E if repaired else E2) * (omega * c - zeta * sigma * sn))
    return c2 * b * b * zeta * zeta, c1 * b * zeta, c0


CASES = [(1, 1, 0.1, 0.9, 5, 7), (2, 0.5, 0.2, 1.3, 3, 11), (1, 1, 0.1, 0.8336, 12, 20),
         (0.5, 2, 0.05, 1.1, 8, 40)]


@pytest.mark.parametrize("a,b,h,zeta,sigma,omega", CASES)
def test_proportional_quadratic_matches_oracle(a, b, h, zeta, sigma, omega):
    cfg = LoopConfig.make(a, b, h, "zeta", zeta=zeta)
    roots = np.sort(np.roots(bd.proportional_quadratic(cfg, sigma, omega)).real)
    assert roots == pytest.approx(_xy_oracle_roots(a, b, h, zeta, sigma, omega), rel=1e-8)


@pytest.mark.parametrize("a,b,h,zeta,sigma,omega", CASES)
def test_displayed_closed_form_needs_two_repairs(a, b, h, zeta, sigma, omega):
    oracle = _xy_oracle_roots(a, b, h, zeta, sigma, omega)
    fixed = np.sort(np.roots(_displayed_coefficients(a, b, h, zeta, sigma, omega, True)).real)
    raw = np.sort(np.roots(_displayed_coefficients(a, b, h, zeta, sigma, omega, False)).real)
    assert fixed == pytest.approx(oracle, rel=1e-8)
    assert not np.allclose(raw, oracle, rtol=1e-3)


def test_map_empty_beyond_maximal_decay():
    kr, ir = gain_box(PLAIN, [6.0], factor=3.0)
    m = bd.build_sigma_map(PLAIN, 7.0, kr, ir, 16, curves=False)
    assert not m.d_sigma.any()


def test_fixed_d_region_is_a_thin_band():
    m = bd.build_sigma_map(FIXED, 10.0, (19.8, 21.0), (74.0, 86.0), 16, curves=False)
    assert m.d_sigma.any()
    m = bd.build_sigma_map(FIXED, 11.5, (0.0, 60.0), (0.0, 600.0), 16, curves=False)
    assert not m.d_sigma.any()


def test_regions_are_nested_in_sigma():
    kr, ir = gain_box(PLAIN, [2.0, 4.0])
    lo = bd.build_sigma_map(PLAIN, 2.0, kr, ir, 16, curves=False)
    hi = bd.build_sigma_map(PLAIN, 4.0, kr, ir, 16, curves=False)
    assert hi.d_sigma.any()
    assert np.all(lo.counts[hi.counts == 0] == 0)


def test_undelayed_loop_is_stable_everywhere():
    cfg = LoopConfig.make(1, 1, 0.0)
    m = bd.build_sigma_map(cfg, 0.0, (0.0, 50.0), (0.0, 50.0), 16)
    assert np.all(m.counts == 0)


def test_difference_operator_band_marks_infeasible_cells():
    sigma = 8.0
    lo, hi = bd.difference_operator_limits(FIXED, sigma)
    assert lo < 15 < hi
    m = bd.build_sigma_map(FIXED, sigma, (0.0, 60.0), (0.0, 300.0), 16, curves=False)
    outside = (m.kp_centers < lo) | (m.kp_centers > hi)
    assert np.all(m.counts[outside] == bd.INFEASIBLE)
    assert np.all(m.counts[~outside] >= 0)


def test_curves_have_known_kinds_and_vanish_on_the_quasipolynomial():
    curves = bd.boundary_curves(FIXED, 6.0, (0.0, 60.0), (0.0, 300.0))
    kinds = {c.kind for c in curves}
    assert kinds == {bd.REAL_ROOT, bd.COMPLEX_PAIR, bd.DIFF_OP}
    for c in curves:
        if c.kind == bd.DIFF_OP:
            continue
        for kp, ki, w in c.samples[:: max(1, len(c) // 20)]:
            assert residual(FIXED, kp, ki, complex(-6.0, w)) < 1e-9


def test_map_validation():
    with pytest.raises(ValidationError):
        bd.build_sigma_map(PLAIN, 1.0, (0, 1), (0, 1), 8)
    with pytest.raises(ValidationError):
        bd.build_sigma_map(PLAIN, 1.0, (1, 0), (0, 1), 16)
    with pytest.raises(ValidationError):
        bd.complex_boundary(PLAIN, 1.0, 0.0)


def test_map_is_reproducible():
    a = bd.build_sigma_map(PLAIN, 2.0, (0, 8), (0, 12), 16, seed=3, curves=False)
    b = bd.build_sigma_map(PLAIN, 2.0, (0, 8), (0, 12), 16, seed=3, curves=False)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.mixed, b.mixed)
