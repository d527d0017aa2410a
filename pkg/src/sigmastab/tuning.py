"""Maximal decay rates and minimal PI gains.

Three scenarios are covered: a plain delayed channel, a scattering channel
with fixed impedance ``d`` and a scattering channel with ``d = zeta kp``.
Minimal gains place a double root at ``s = -sigma``; at the maximal decay the
double root becomes triple. Every result can carry a root-counting
certificate that nothing lies right of ``-sigma + eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import bisect, minimize_scalar

from .errors import (BoundaryRoot, InfeasibleDifferenceOperator, NoFeasibleRoot,
                     NonConvergence, NoPositiveRoot, NumericalError, OutOfRange,
                     UnboundedSpectrum, ValidationError)
from .model import FIXED_D, NONE, ChannelParams, Gains, LoopConfig, PlantParams, ScatteringConfig
from .quasipoly import (RootWindow, characteristic, count_roots_right_of, default_window,
                        derivative, difference_operator_ok)

SCAN_SAMPLES = 2000
XTOL = 1e-12
# contour sample budget for certificates; very large d pushes neutral root
# chains towards the abscissa and makes the window (and the count) huge
CERT_BUDGET = 400_000


@dataclass(frozen=True)
class UniversalConstants:
    eta_sup: float
    zeta_min: float


@dataclass
class TuningResult:
    """Gains assigning decay ``sigma`` plus the scenario bound and diagnostics.

    ``certified`` is True when root counting confirmed no roots right of
    ``-sigma + eps``, False when it found some, None when not attempted or
    not computable within budget.
    """

    gains: Gains
    sigma: float
    sigma_star: float
    feasible: bool
    scattering: ScatteringConfig = field(default_factory=ScatteringConfig.none)
    diagnostics: dict = field(default_factory=dict)
    diff_op_margin: float | None = None
    certified: bool | None = None


def certificate_eps(sigma: float) -> float:
    return 1e-4 * max(1.0, abs(sigma))


def _check_h(h, strict=True):
    h = float(h)
    if not math.isfinite(h) or h < 0 or (strict and h == 0):
        raise ValidationError(f"round-trip delay must be {'> 0' if strict else '>= 0'}, got {h}")
    return h


def _config(a, b, h, scattering):
    return LoopConfig(PlantParams(a, b), ChannelParams.round_trip(h), scattering)


def residuals(config: LoopConfig, gains: Gains, sigma: float) -> dict:
    """|p|, |p'|, |p''| at ``s = -sigma`` and |p(0)|."""
    q = characteristic(config, gains)
    dq = derivative(q)
    d2q = derivative(dq)
    s = -float(sigma)
    return {"p": abs(q(s)), "dp": abs(dq(s)), "d2p": abs(d2q(s)), "p0": abs(q(0.0)),
            "scale": q.scale(s)}


def _refute(q, s, budget):
    """Look for roots right of ``-s`` in truncated windows; True if any is found."""
    tau = max(q.max_delay, 1e-3)
    for cap in (50.0 / tau, 500.0 / tau):
        try:
            full = default_window(q, s)
            win = RootWindow(s, min(cap, full.omega_max), full.re_max)
        except UnboundedSpectrum:
            win = RootWindow(s, cap, max(1.0, 1.0 - s))
        try:
            if count_roots_right_of(q, win, max_samples=budget) > 0:
                return True
        except (BoundaryRoot, NonConvergence):
            continue
    return False


def certify(config: LoopConfig, gains: Gains, sigma: float, budget: int = CERT_BUDGET):
    """Count roots right of ``-(sigma - eps)``: True if none, False if some, None if not computable.

    When the full window is too expensive, truncated windows can still
    refute (any root they contain is a genuine root right of the line).
    """
    q = characteristic(config, gains)
    s = sigma - certificate_eps(sigma)
    for k in range(3):
        try:
            return count_roots_right_of(q, sigma=s, max_samples=budget) == 0
        except BoundaryRoot:
            s -= 1e-6 * max(1.0, abs(sigma)) * (k + 1)
        except (NonConvergence, UnboundedSpectrum):
            return False if _refute(q, s, budget) else None
    return None


# ---------------------------------------------------------------------------
# plain delayed channel


def sigma_star_branches(a: float, h: float):
    """Both solutions ``(4 + ah -/+ sqrt(8 + a^2 h^2)) / (2h)``; the first is the bound."""
    h = _check_h(h)
    r = math.sqrt(8 + a * a * h * h)
    return (4 + a * h - r) / (2 * h), (4 + a * h + r) / (2 * h)


def sigma_star_no_scatter(a: float, h: float) -> float:
    """Maximal decay rate reachable by PI control across a plain delayed channel."""
    return sigma_star_branches(a, h)[0]


def minimal_gains_no_scatter(a: float, b: float, h: float, sigma: float) -> Gains:
    """Smallest gains placing a double root at ``-sigma`` (plain channel, ``h >= 0``)."""
    h = _check_h(h, strict=False)
    PlantParams(a, b)
    upper = math.inf if h == 0 else sigma_star_no_scatter(a, h)
    if not (a / 2 <= sigma <= upper * (1 + 1e-12)):
        raise OutOfRange(f"sigma={sigma} outside [{a / 2}, {upper}]")
    E = math.exp(h * sigma)
    kp = (sigma * h * (a - sigma) - (a - 2 * sigma)) / (b * E)
    ki = sigma * sigma * (h * (a - sigma) + 1) / (b * E)
    return Gains(max(kp, 0.0), max(ki, 0.0))


def tune_no_scatter(a: float, b: float, h: float, sigma: float, certify_result=True) -> TuningResult:
    gains = minimal_gains_no_scatter(a, b, h, sigma)
    cfg = _config(a, b, h, ScatteringConfig.none())
    star = math.inf if h == 0 else sigma_star_no_scatter(a, h)
    cert = certify(cfg, gains, sigma) if certify_result else None
    return TuningResult(gains, float(sigma), star, True, cfg.scattering,
                        residuals(cfg, gains, sigma), None, cert)


# ---------------------------------------------------------------------------
# universal constants


def _eta_equation(eta):
    return 2 * (1 + math.exp(eta)) + eta * (1 - math.exp(eta))


@lru_cache(maxsize=None)
def universal_constants() -> UniversalConstants:
    """``eta_sup`` (positive root of ``2(1+e^x) + x(1-e^x)``) and the matching ``zeta_min``."""
    eta = bisect(_eta_equation, 1.0, 5.0, xtol=1e-15, maxiter=200)
    e = math.exp(eta)
    zeta = (1 + e) ** 2 / (2 * eta * e - (1 + e) * (1 - e))
    return UniversalConstants(float(eta), float(zeta))


def sigma_sup(h: float) -> float:
    """Supremum of the decay reachable with any scattering impedance: ``eta_sup / h``."""
    return universal_constants().eta_sup / _check_h(h)


# ---------------------------------------------------------------------------
# fixed impedance


def m_d(sigma: float, a: float, b: float, h: float, d: float) -> float:
    """Triple-root condition for fixed ``d``; its zeros are candidate maximal decays."""
    E = math.exp(h * sigma)
    s1, s2 = a - sigma, a - 2 * sigma
    bd = b * d
    first = (2 * h * bd ** 3 + (h * h * sigma * s1 + 4) * bd ** 2
             + 2 * h * (sigma ** 2 - s2 ** 2) * bd - h * h * sigma * s1 ** 3)
    second = (h * h * sigma * bd ** 3 + 2 * h * (a + sigma) * bd ** 2
              + (4 * a - h * h * sigma * s1 ** 2) * bd - 2 * h * s1 ** 3)
    return (1 + E) * first + (1 - E) * second


def gains_fixed_d(a: float, b: float, h: float, d: float, sigma: float):
    """Raw ``(kp, ki)`` placing a double root at ``-sigma`` for fixed ``d`` (may be negative)."""
    E = math.exp(h * sigma)
    s1 = a - sigma
    bd = b * d
    den = (bd + s1 + E * (bd - s1)) ** 2
    w = 2 * bd + h * (bd * bd - s1 * s1)
    kp = d * ((bd - s1) ** 2 * E * E + 2 * sigma * E * w - (bd + s1) ** 2) / den
    ki = 2 * d * sigma * sigma * E * w / den
    return kp, ki


def double_root_system(a, b, h, d, sigma):
    """Matrices ``A (3x2)`` and ``B (3)`` with rows for p, p' and p'' at ``-sigma``.

    The first two rows equal the conditions ``p = p' = 0``; the third is the
    second-derivative condition, satisfied only at the maximal decay.
    """
    E = math.exp(h * sigma)
    s1, s2 = a - sigma, a - 2 * sigma
    bd = b * d
    g = h * (bd - s1)
    A = np.array([
        [-(1 + E) * sigma * bd - (1 - E) * sigma * s1, (1 + E) * bd + (1 - E) * s1],
        [bd + s2 + E * ((bd - s1) * (h * sigma + 1) + sigma), 1 - E * (g + 1)],
        [2 - E * ((g + 1) * (h * sigma + 2) + h * sigma), h * E * (g + 2)],
    ])
    B = np.array([
        (1 - E) * sigma * bd + (1 + E) * sigma * s1,
        -(bd + s2) + E * ((bd - s1) * (h * sigma + 1) + sigma),
        -(E * ((g + 1) * (h * sigma + 2) + h * sigma) + 2),
    ])
    return A, B


def m_d_roots(a: float, b: float, h: float, d: float, samples: int = SCAN_SAMPLES) -> list[float]:
    """All sign changes of ``m_d`` on ``(a/2, sigma_sup(h))``, polished by bisection."""
    top = sigma_sup(h)
    lo = a / 2 if a > 0 else top * 1e-6
    if lo >= top:
        return []
    grid = np.geomspace(lo * (1 + 1e-9), top * (1 - 1e-12), samples)
    vals = np.array([m_d(s, a, b, h, d) for s in grid])
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    roots = []
    for i in idx:
        if vals[i] == 0:
            roots.append(float(grid[i]))
            continue
        if vals[i + 1] == 0:
            continue
        roots.append(float(bisect(m_d, grid[i], grid[i + 1], args=(a, b, h, d),
                                  xtol=XTOL, maxiter=200)))
    return roots


def sigma_star_fixed_d(a: float, b: float, h: float, d: float, *, certify_result: bool = True,
                       budget: int = CERT_BUDGET) -> TuningResult:
    """Largest feasible zero of ``m_d``, with its (triple-root) minimal gains.

    A zero survives when its gains are nonnegative, the difference operator
    is stable and, if requested, root counting finds nothing right of
    ``-sigma + eps``. A certificate that cannot be computed within the sample
    budget leaves ``certified = None`` rather than rejecting the zero.
    """
    h = _check_h(h)
    cfg = _config(a, b, h, ScatteringConfig.fixed(d))
    survivors = []
    for r in m_d_roots(a, b, h, d):
        kp, ki = gains_fixed_d(a, b, h, d, r)
        if kp < 0 or ki < 0:
            continue
        ok, margin = difference_operator_ok(d, kp, h, r)
        if not ok:
            continue
        survivors.append((r, Gains(kp, ki), margin))
    for r, gains, margin in reversed(survivors):
        cert = certify(cfg, gains, r, budget) if certify_result else None
        if cert is False:
            continue
        return TuningResult(gains, r, r, True, cfg.scattering, residuals(cfg, gains, r), margin,
                            cert)
    raise NoFeasibleRoot(f"no feasible maximal decay for d={d}")


def minimal_gains_fixed_d(a: float, b: float, h: float, d: float, sigma: float, *,
                          sigma_star: float | None = None,
                          certify_result: bool = False) -> TuningResult:
    """Minimal gains for a fixed impedance, requiring ``sigma*_d >= sigma > a/2``."""
    h = _check_h(h)
    if sigma_star is None:
        sigma_star = sigma_star_fixed_d(a, b, h, d, certify_result=False).sigma_star
    if not (a / 2 < sigma <= sigma_star * (1 + 1e-12)):
        raise OutOfRange(f"sigma={sigma} outside ({a / 2}, {sigma_star}]")
    kp, ki = gains_fixed_d(a, b, h, d, sigma)
    if kp < 0 or ki < 0:
        raise OutOfRange(f"minimal gains at sigma={sigma} are negative ({kp}, {ki})")
    ok, margin = difference_operator_ok(d, kp, h, sigma)
    if not ok:
        raise InfeasibleDifferenceOperator(
            f"difference operator unstable at sigma={sigma} (margin {margin:.3g})")
    gains = Gains(kp, ki)
    cfg = _config(a, b, h, ScatteringConfig.fixed(d))
    diag = residuals(cfg, gains, sigma)
    A, B = double_root_system(a, b, h, d, sigma)
    rows = A @ np.array([kp, ki]) - d * B
    diag.update(row1=abs(rows[0]), row2=abs(rows[1]), row3=abs(rows[2]))
    cert = certify(cfg, gains, sigma) if certify_result else None
    return TuningResult(gains, float(sigma), float(sigma_star), True, cfg.scattering, diag,
                        margin, cert)


# ---------------------------------------------------------------------------
# proportional impedance d = zeta kp


def m_zeta(eta: float, zeta: float) -> float:
    """Triple-root condition for ``d = zeta kp`` in the scaled variable ``eta = h sigma``."""
    e = math.exp(eta)
    return (1 + e) * (zeta * (1 - e) + 1 + e) - 2 * zeta * eta * e


def dm_zeta(eta: float, zeta: float) -> float:
    e = math.exp(eta)
    return 2 * e * ((1 + e) - zeta * (e + 1 + eta))


ETA_SCAN_MAX = 60.0
ETA_SCAN_SAMPLES = 24001


def zeta_branch_roots(zeta: float, h: float) -> list[tuple[float, str]]:
    """Positive zeros of ``m_zeta(h sigma)`` as ``(sigma, label)``, smallest first.

    Labels are ``lower``/``upper`` when two zeros exist (``zeta_min <= zeta < 1``),
    ``single`` otherwise. Near tangency (``zeta`` just above ``zeta_min``) the
    two zeros may fall between scan samples; the minimiser of ``m_zeta`` is
    then reported as a double zero.
    """
    h = _check_h(h)
    if not zeta > 0:
        raise ValidationError("zeta must be positive")
    eta = np.linspace(0.0, ETA_SCAN_MAX, ETA_SCAN_SAMPLES)[1:]
    vals = np.array([m_zeta(x, zeta) for x in eta])
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    roots = []
    for i in idx:
        if vals[i + 1] == 0 and i + 1 < len(vals) - 1:
            continue
        roots.append(eta[i] if vals[i] == 0 else
                     bisect(m_zeta, eta[i], eta[i + 1], args=(zeta,), xtol=XTOL, maxiter=200))
    if not roots and zeta >= universal_constants().zeta_min * (1 - 1e-9) and zeta < 1:
        k = int(np.argmin(vals))
        lo, hi = eta[max(k - 1, 0)], eta[min(k + 1, len(eta) - 1)]
        res = minimize_scalar(m_zeta, bounds=(lo, hi), args=(zeta,), method="bounded",
                              options={"xatol": 1e-13})
        e = math.exp(res.x)
        if res.fun <= 1e-9 * (1 + e) ** 2:
            roots = [res.x, res.x]
    roots = [float(r) / h for r in roots]
    if len(roots) == 1:
        return [(roots[0], "single")]
    if len(roots) == 2:
        return [(roots[0], "lower"), (roots[1], "upper")]
    return [(r, f"root{k}") for k, r in enumerate(roots)]


def sigma_star_zeta(zeta: float, h: float) -> float:
    """Least upper bound on the decay reachable with ``d = zeta kp``.

    Below ``zeta_min`` the bound is set by the difference operator,
    ``ln((1+zeta)/(1-zeta)) / h``. From ``zeta_min`` upwards it is the
    smallest zero of ``m_zeta(h sigma)``, the branch continuous in ``zeta``.
    """
    h = _check_h(h)
    if not zeta > 0:
        raise ValidationError("zeta must be positive")
    if zeta < universal_constants().zeta_min:
        return math.log((1 + zeta) / (1 - zeta)) / h
    roots = zeta_branch_roots(zeta, h)
    if not roots:
        raise NoFeasibleRoot(f"m_zeta has no positive zero for zeta={zeta}")
    return roots[0][0]


def zeta_quadratic(a: float, b: float, h: float, zeta: float, sigma: float):
    """Coefficients of ``c2 b^2 zeta^2 kp^2 + c1 b zeta kp + c0`` (real double root at ``-sigma``)."""
    E = math.exp(h * sigma)
    s1 = a - sigma
    c2 = (1 + E) * (zeta * (1 - E) + 1 + E) - 2 * zeta * h * sigma * E
    c1 = 2 * (1 + E) * (zeta * (1 + E) + 1 - E) * s1 - 4 * zeta * a * E
    c0 = ((1 - E) * (zeta * (1 + E) + 1 - E) + 2 * zeta * h * sigma * E) * s1 * s1
    return c2, c1, c0


def zeta_ki(a, b, h, zeta, sigma, kp):
    E = math.exp(h * sigma)
    s1 = a - sigma
    num = (1 + E) * zeta * (b * kp + s1) + (1 - E) * (zeta * zeta * b * kp + s1)
    den = (1 + E) * zeta * b * kp + (1 - E) * s1
    return num / den * sigma * kp


def _quadratic_roots(A, B, C):
    scale = max(abs(A), abs(B), abs(C))
    if scale == 0:
        return []
    if abs(A) < 1e-14 * scale:
        return [] if B == 0 else [-C / B]
    disc = B * B - 4 * A * C
    if disc < 0:
        return []
    t = -0.5 * (B + math.copysign(math.sqrt(disc), B))
    if t == 0:
        return [-B / (2 * A)]
    return sorted([t / A, C / t])


def minimal_gains_zeta(a: float, b: float, h: float, zeta: float, sigma: float, *,
                       certify_result: bool = True) -> TuningResult:
    """Minimal gains with ``d = zeta kp`` placing a double root at ``-sigma``.

    The quadratic in ``kp`` has up to two positive roots; the smallest whose
    ``ki`` is nonnegative and whose spectrum passes the certificate is taken.
    """
    h = _check_h(h)
    star = sigma_star_zeta(zeta, h)
    if not (a / 2 < sigma < star):
        raise OutOfRange(f"sigma={sigma} outside ({a / 2}, {star})")
    c2, c1, c0 = zeta_quadratic(a, b, h, zeta, sigma)
    cands = [k for k in _quadratic_roots(c2 * b * b * zeta * zeta, c1 * b * zeta, c0) if k > 0]
    cfg = _config(a, b, h, ScatteringConfig.proportional(zeta))
    rejected = []
    for kp in cands:
        ki = zeta_ki(a, b, h, zeta, sigma, kp)
        if not (math.isfinite(ki) and ki >= 0):
            rejected.append((kp, ki, "negative ki"))
            continue
        ok, margin = difference_operator_ok(zeta * kp, kp, h, sigma)
        if not ok:
            rejected.append((kp, ki, "difference operator"))
            continue
        gains = Gains(kp, ki)
        cert = certify(cfg, gains, sigma) if certify_result else None
        if cert is False:
            rejected.append((kp, ki, "roots right of -sigma"))
            continue
        diag = residuals(cfg, gains, sigma)
        diag["rejected"] = rejected
        return TuningResult(gains, float(sigma), star, True, cfg.scattering, diag, margin, cert)
    raise NoPositiveRoot(f"no admissible kp for zeta={zeta}, sigma={sigma} (rejected {rejected})")


@dataclass
class Design:
    """Outcome of the recommended design: impedance ratio, gains and certificate."""

    scattering: ScatteringConfig
    gains: Gains
    result: TuningResult

    @property
    def certified(self):
        return self.result.certified


def design_procedure(a: float, b: float, h: float, sigma: float) -> Design:
    """Scattering with ``d = zeta_min kp`` and the minimal gains for the requested decay.

    Admissible decays are ``a/2 < sigma < eta_sup / h``.
    """
    h = _check_h(h)
    top = sigma_sup(h)
    if not (a / 2 < sigma < top):
        raise OutOfRange(f"sigma={sigma} outside ({a / 2}, {top})")
    zeta = universal_constants().zeta_min
    res = minimal_gains_zeta(a, b, h, zeta, sigma)
    return Design(res.scattering, res.gains, res)


# ---------------------------------------------------------------------------
# mode dispatch


def tune(config: LoopConfig, sigma: float, *, certify_result: bool = True) -> TuningResult:
    """Minimal gains for ``sigma`` in whatever scattering mode ``config`` uses."""
    a, b, h = config.a, config.b, config.h
    sc = config.scattering
    if sc.mode == NONE:
        return tune_no_scatter(a, b, h, sigma, certify_result=certify_result)
    if sc.mode == FIXED_D:
        return minimal_gains_fixed_d(a, b, h, sc.d, sigma, certify_result=certify_result)
    return minimal_gains_zeta(a, b, h, sc.zeta, sigma, certify_result=certify_result)


def maximal_decay(config: LoopConfig) -> float:
    """sigma* (or its least upper bound, for proportional scattering) of the loop's mode."""
    a, b, h = config.a, config.b, config.h
    sc = config.scattering
    if sc.mode == NONE:
        return math.inf if h == 0 else sigma_star_no_scatter(a, h)
    if sc.mode == FIXED_D:
        return sigma_star_fixed_d(a, b, h, sc.d, certify_result=False).sigma_star
    return sigma_star_zeta(sc.zeta, h)


def gain_box(config: LoopConfig, sigmas, factor: float = 2.5):
    """Gain ranges ``[0, factor * kp_min] x [0, factor * ki_min]`` covering the requested maps.

    The minimal gains of the largest admissible abscissa set the scale; when
    none is admissible the box falls back to ``[0, 10] x [0, 20]``.
    """
    kp_top, ki_top = 0.0, 0.0
    for s in sorted(set(sigmas), reverse=True):
        try:
            g = tune(config, s).gains
        except (ValidationError, NumericalError):
            continue
        kp_top, ki_top = max(kp_top, g.kp), max(ki_top, g.ki)
    if not (kp_top > 0 and ki_top > 0):
        return (0.0, 10.0), (0.0, 20.0)
    return (0.0, factor * kp_top), (0.0, factor * ki_top)
