"""Quasipolynomials ``sum_k poly_k(s) exp(-tau_k s)`` and their roots.

Roots are counted with the argument principle on a rectangle whose left
side is the abscissa of interest; the contour is refined adaptively until
the phase of the quasipolynomial moves by less than a quarter turn between
consecutive samples. Rightmost roots are isolated by recursive bisection of
that rectangle and polished with Newton's method.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BoundaryRoot, NonConvergence, UnboundedSpectrum, ValidationError
from .model import ChannelParams, Gains, LoopConfig, PlantParams, ScatteringConfig

# Samples whose modulus falls below this multiple of the local term scale
# carry no reliable phase information.
BOUNDARY_TOL = 1e-14
MAX_PHASE_STEP = math.pi / 4
MAX_SAMPLES = 2_000_000


def _trim(c):
    c = np.asarray(c, dtype=float)
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1]


@dataclass(frozen=True)
class Quasipolynomial:
    """Finite sum of ``(delay, coefficients)`` terms, coefficients in ascending degree.

    Terms sharing a delay are merged, vanishing terms dropped, and the
    remaining terms sorted by delay. The zero quasipolynomial is stored as a
    single zero constant.
    """

    terms: tuple
    allow_advanced: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        merged: dict[float, np.ndarray] = {}
        for delay, coeffs in self.terms:
            delay = float(delay)
            if not math.isfinite(delay) or delay < 0:
                raise ValidationError(f"delays must be finite and >= 0, got {delay!r}")
            c = np.atleast_1d(np.asarray(coeffs, dtype=float))
            if c.ndim != 1 or not np.all(np.isfinite(c)):
                raise ValidationError("coefficients must be a finite 1-D sequence")
            if delay in merged:
                prev = merged[delay]
                n = max(prev.size, c.size)
                merged[delay] = np.pad(prev, (0, n - prev.size)) + np.pad(c, (0, n - c.size))
            else:
                merged[delay] = c.copy()
        terms = []
        for delay in sorted(merged):
            c = _trim(merged[delay])
            if c.size == 1 and c[0] == 0.0:
                continue
            terms.append((delay, tuple(float(v) for v in c)))
        if not terms:
            terms = [(0.0, (0.0,))]
        if terms[0][0] == 0.0 and not self.allow_advanced:
            lead = len(terms[0][1]) - 1
            for delay, c in terms[1:]:
                if len(c) - 1 > lead:
                    raise ValidationError(
                        f"delayed term (delay {delay}) has degree {len(c) - 1} above the "
                        f"undelayed degree {lead}; advanced-type quasipolynomials are unsupported")
        terms = tuple(terms)
        width = max(len(c) for _, c in terms)
        coeffs = np.zeros((len(terms), width))
        for k, (_, c) in enumerate(terms):
            coeffs[k, : len(c)] = c
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_delays", np.array([t[0] for t in terms], dtype=float))
        object.__setattr__(self, "_coeffs", np.ascontiguousarray(coeffs))

    @classmethod
    def polynomial(cls, coeffs) -> "Quasipolynomial":
        return cls(((0.0, tuple(coeffs)),))

    @property
    def delays(self) -> tuple:
        return tuple(t[0] for t in self.terms)

    @property
    def max_delay(self) -> float:
        return self.terms[-1][0]

    def coeffs(self, delay: float) -> tuple:
        for tau, c in self.terms:
            if tau == delay:
                return c
        return (0.0,)

    @property
    def degree(self) -> int:
        return max(len(c) for _, c in self.terms) - 1

    @property
    def neutral(self) -> bool:
        """True when a delayed term reaches the degree of the undelayed term."""
        if self.terms[0][0] != 0.0 or len(self.terms) == 1:
            return False
        lead = len(self.terms[0][1]) - 1
        return lead > 0 and any(len(c) - 1 == lead for _, c in self.terms[1:])

    @property
    def is_zero(self) -> bool:
        return self.terms == ((0.0, (0.0,)),)

    def __call__(self, s):
        return evaluate(self, s)

    def derivative(self) -> "Quasipolynomial":
        cached = self.__dict__.get("_derivative")
        if cached is None:
            cached = derivative(self)
            object.__setattr__(self, "_derivative", cached)
        return cached

    def scale(self, s):
        """Sum of the absolute sizes of all monomial-exponential contributions at ``s``.

        Used as the reference magnitude for relative residuals and for the
        boundary-root test.
        """
        s = np.asarray(s, dtype=complex)
        r = np.abs(s)
        out = np.zeros(s.shape)
        for k, tau in enumerate(self._delays):
            row = np.abs(self._coeffs[k])
            acc = np.full(s.shape, row[-1])
            for c in row[-2::-1]:
                acc = acc * r + c
            if tau != 0.0:
                acc = acc * np.exp(-tau * s.real)
            out = out + acc
        return out if out.ndim else float(out)

    def __add__(self, other):
        if not isinstance(other, Quasipolynomial):
            return NotImplemented
        return Quasipolynomial(self.terms + other.terms,
                               allow_advanced=self.allow_advanced or other.allow_advanced)

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if not isinstance(other, Quasipolynomial):
            return NotImplemented
        return self + (-other)

    def __mul__(self, alpha):
        if isinstance(alpha, Quasipolynomial):
            return NotImplemented
        alpha = float(alpha)
        return Quasipolynomial(tuple((tau, tuple(alpha * v for v in c)) for tau, c in self.terms),
                               allow_advanced=self.allow_advanced)

    __rmul__ = __mul__


def evaluate(q: Quasipolynomial, s):
    """Value of ``q`` at ``s`` (scalar or array); real ``s`` gives a zero imaginary part."""
    arr = np.asarray(s)
    real_input = np.isrealobj(arr)
    out = kernels.qp_eval(q._delays, q._coeffs, arr.astype(complex))
    if real_input:
        out = out.real.astype(complex)
    if np.ndim(out) == 0:
        return complex(out)
    return out


def derivative(q: Quasipolynomial) -> Quasipolynomial:
    """Term-wise ``d/ds [poly(s) e^{-tau s}] = (poly'(s) - tau poly(s)) e^{-tau s}``."""
    out = []
    for tau, c in q.terms:
        c = np.asarray(c)
        dc = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1)
        if tau != 0.0:
            n = max(dc.size, c.size)
            dc = np.pad(dc, (0, n - dc.size)) - tau * np.pad(c, (0, n - c.size))
        out.append((tau, dc))
    # derivatives of neutral functions are advanced; they are only evaluated
    return Quasipolynomial(tuple(out), allow_advanced=True)


# ---------------------------------------------------------------------------
# closed-loop characteristic functions


def loop_quasipolynomial(config: LoopConfig, kp: float, ki: float) -> Quasipolynomial:
    """Characteristic function for arbitrary real gains (no sign checks).

    Boundary curves leave the first quadrant, so residual checks need the
    closed-loop function at negative gains too.
    """
    a, b, h = config.a, config.b, config.h
    if not config.scattering.active:
        return Quasipolynomial(((0.0, (0.0, a, 1.0)), (h, (b * ki, b * kp))))
    d = config.scattering.d_for(kp)
    lead = ((a + b * d) * ki, (a + b * d) * (kp + d) + ki, d + kp)
    delayed = ((b * d - a) * ki, b * d * kp + a * d - b * d * d - a * kp - ki, d - kp)
    return Quasipolynomial(((0.0, lead), (h, delayed)))


def loop_value(config: LoopConfig, kp: float, ki: float, s: complex) -> complex:
    """Value of :func:`loop_quasipolynomial` at one point, without building it."""
    a, b, h = config.a, config.b, config.h
    e = cmath.exp(-h * s)
    if not config.scattering.active:
        return s * s + a * s + b * (kp * s + ki) * e
    d = config.scattering.d_for(kp)
    return (s + a + b * d) * ((kp + d) * s + ki) - e * ((kp - d) * s + ki) * (s + a - b * d)


def build_characteristic(plant: PlantParams, channel: ChannelParams,
                         scattering: ScatteringConfig, gains: Gains) -> Quasipolynomial:
    """Closed-loop characteristic quasipolynomial of the delayed PI loop.

    Without scattering this is ``s^2 + a s + b (kp s + ki) e^{-hs}``. With the
    scattering transformation it is the neutral function
    ``(s + a + bd)((kp + d)s + ki) - e^{-hs}((kp - d)s + ki)(s + a - bd)``,
    expanded into its undelayed and delayed parts, with ``d = zeta kp`` in
    proportional mode.
    """
    config = LoopConfig(plant, channel, scattering)
    if scattering.active and not scattering.d_for(gains.kp) > 0:
        raise ValidationError("proportional scattering needs kp > 0 (d = zeta*kp must be positive)")
    return loop_quasipolynomial(config, gains.kp, gains.ki)


def characteristic(config: LoopConfig, gains: Gains) -> Quasipolynomial:
    return build_characteristic(config.plant, config.channel, config.scattering, gains)


def difference_operator_ok(d: float, kp: float, h: float, sigma: float):
    """Stability of the shifted difference operator of the neutral loop.

    Returns ``(ok, margin)`` with ``margin = 1 - e^{h sigma} |d - kp| / (d + kp)``.
    For ``sigma <= 0`` the operator is always stable.
    """
    if not h > 0:
        raise ValidationError("difference-operator test needs h > 0")
    margin = 1.0 - math.exp(h * sigma) * abs(d - kp) / (d + kp)
    if sigma <= 0:
        return True, margin
    return margin > 0, margin


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class RootWindow:
    """Rectangle ``[-sigma, re_max] x [-omega_max, omega_max]`` in the s-plane."""

    sigma: float
    omega_max: float
    re_max: float

    def __post_init__(self):
        if not self.omega_max > 0:
            raise ValidationError("omega_max must be positive")
        if not self.re_max > -self.sigma:
            raise ValidationError("window is empty: re_max must exceed -sigma")

    def scaled(self, factor: float) -> "RootWindow":
        """Window in coordinates ``s' = s / factor``."""
        return RootWindow(self.sigma / factor, self.omega_max / factor, self.re_max / factor)


def root_modulus_bound(q: Quasipolynomial, sigma: float) -> float:
    """Radius ``R`` such that every root with ``Re s >= -sigma`` has ``|s| <= R``.

    Follows from ``|P_0(s)| <= sum_j e^{tau_j sigma} |P_j(s)|`` at a root.
    Returns ``inf`` when the undelayed leading coefficient does not dominate
    (neutral chains reaching the half-plane, or no undelayed term).
    """
    if q.terms[0][0] != 0.0:
        return math.inf
    lead = np.asarray(q.terms[0][1])
    n = lead.size - 1
    weights = np.zeros(n + 1)
    for tau, c in q.terms[1:]:
        w = math.exp(tau * sigma)
        if not math.isfinite(w):
            return math.inf
        weights[: len(c)] += w * np.abs(c)
    top = abs(lead[-1]) - weights[n]
    if top <= 1e-13 * abs(lead[-1]):
        return math.inf
    lower = np.abs(lead[:n]) + weights[:n]
    if n == 0 or not np.any(lower):
        return 0.0
    # unique positive root of top*r^n - sum lower_k r^k (one sign change)
    poly = np.concatenate(([top], -lower[::-1]))
    roots = np.roots(poly)
    real = roots[np.abs(roots.imag) <= 1e-9 * (1 + np.abs(roots))].real
    r = real.max() if real.size else 0.0
    # Cauchy-type fallback guards against a poorly conditioned root solve
    cauchy = 1.0 + float(np.max(lower) / top)
    return float(min(max(r, 0.0) * (1 + 1e-9) + 1e-12, cauchy))


def default_window(q: Quasipolynomial, sigma: float) -> RootWindow:
    """Smallest standard window certified to hold every root right of ``-sigma``."""
    radius = root_modulus_bound(q, sigma)
    if not math.isfinite(radius):
        raise UnboundedSpectrum(
            f"roots right of -{sigma} are not confined to a bounded region")
    tau = q.max_delay
    omega = 1.05 * radius + 1.0
    if tau > 0:
        omega = max(omega, 40 * math.pi / tau)
    return RootWindow(float(sigma), float(omega), float(max(radius, -sigma) + 1.0))


# ---------------------------------------------------------------------------
# argument principle


def _contour_count(q, x0, x1, y0, y1, max_step=MAX_PHASE_STEP, max_samples=MAX_SAMPLES,
                   tol=BOUNDARY_TOL):
    corners = np.array([complex(x0, y0), complex(x1, y0), complex(x1, y1),
                        complex(x0, y1), complex(x0, y0)])
    edges = np.diff(corners)
    lengths = np.abs(edges)
    perimeter = float(lengths.sum())
    tau = q.max_delay

    def z_of(u):
        e = np.minimum(np.floor(u).astype(int), 3)
        return corners[e] + (u - e) * edges[e]

    sizes = [16 + (math.ceil(16 * lengths[e] * tau / (2 * math.pi)) if e in (1, 3) else 0)
             for e in range(4)]
    if sum(sizes) > max_samples:
        raise NonConvergence(f"contour needs {sum(sizes)} initial samples (budget {max_samples})")
    pieces = [e + np.arange(n) / n for e, n in enumerate(sizes)]
    u = np.concatenate(pieces + [np.array([4.0])])
    dq = q.derivative()
    z = z_of(u)
    f = evaluate(q, z)
    _check_modulus(q, z, f, tol)
    g = np.abs(evaluate(dq, z) / f)
    while True:
        dphi = np.angle(f[1:] / f[:-1])
        # a small phase step can hide a full turn (two roots close to the
        # edge); the log-derivative bounds the variation inside the segment
        reach = np.abs(np.diff(z)) * np.maximum(g[1:], g[:-1])
        bad = (np.abs(dphi) >= max_step) | (reach >= max_step)
        nbad = int(bad.sum())
        if nbad == 0:
            break
        if u.size + nbad > max_samples:
            raise NonConvergence(
                f"contour refinement exceeded {max_samples} samples")
        idx = np.nonzero(bad)[0]
        seg = np.abs(z[idx + 1] - z[idx])
        if np.any(seg < 1e-14 * perimeter):
            k = idx[np.argmin(seg)]
            raise BoundaryRoot("root on contour (phase jump does not resolve)", point=z[k])
        umid = 0.5 * (u[idx] + u[idx + 1])
        zmid = z_of(umid)
        fmid = evaluate(q, zmid)
        _check_modulus(q, zmid, fmid, tol)
        gmid = np.abs(evaluate(dq, zmid) / fmid)
        u = np.insert(u, idx + 1, umid)
        z = np.insert(z, idx + 1, zmid)
        f = np.insert(f, idx + 1, fmid)
        g = np.insert(g, idx + 1, gmid)
    turns = dphi.sum() / (2 * math.pi)
    count = int(round(turns))
    if abs(turns - count) > 1e-6:
        raise NonConvergence(f"winding number {turns} is not an integer")
    return count


def _check_modulus(q, z, f, tol):
    mag = np.abs(f)
    ref = q.scale(z)
    low = mag <= tol * ref
    if np.any(low):
        k = int(np.argmax(low))
        raise BoundaryRoot(
            f"|q| = {mag[k]:.3e} at s = {z[k]:.6g} is below tolerance; perturb sigma",
            point=z[k])


def count_roots_right_of(q: Quasipolynomial, window: RootWindow | None = None, *,
                         sigma: float | None = None, max_phase_step=MAX_PHASE_STEP,
                         max_samples=MAX_SAMPLES) -> int:
    """Number of zeros (with multiplicity) inside the window rectangle.

    Either pass a window, or ``sigma`` alone to use :func:`default_window`,
    in which case the result is the number of roots with ``Re s > -sigma``.
    """
    if q.is_zero:
        raise ValidationError("the zero quasipolynomial has no isolated roots")
    if window is None:
        if sigma is None:
            raise ValidationError("pass a RootWindow or sigma")
        window = default_window(q, sigma)
    return _contour_count(q, -window.sigma, window.re_max, -window.omega_max, window.omega_max,
                          max_phase_step, max_samples)


def count_roots_in_rect(q: Quasipolynomial, re_lo: float, re_hi: float, im_lo: float,
                        im_hi: float, max_phase_step=MAX_PHASE_STEP,
                        max_samples=MAX_SAMPLES) -> int:
    """Number of zeros (with multiplicity) in an arbitrary axis-aligned rectangle."""
    if not (re_hi > re_lo and im_hi > im_lo):
        raise ValidationError("rectangle must have positive width and height")
    if q.is_zero:
        raise ValidationError("the zero quasipolynomial has no isolated roots")
    return _contour_count(q, re_lo, re_hi, im_lo, im_hi, max_phase_step, max_samples)


# ---------------------------------------------------------------------------
# root isolation


_SPLITS = (0.5123, 0.4611, 0.5437, 0.4219, 0.5871)


def _newton(q, dq, z, mult=1, maxit=80):
    step = math.inf
    for _ in range(maxit):
        f = evaluate(q, z)
        if f == 0:
            return z
        fp = evaluate(dq, z)
        if fp == 0 or not np.isfinite(fp):
            return None
        step = mult * f / fp
        z = z - step
        if not np.isfinite(z):
            return None
        if abs(step) <= 1e-15 * (1 + abs(z)):
            return z
    if abs(step) <= (1e-9 if mult == 1 else 1e-5) * (1 + abs(z)):
        return z
    return None


def _split_count(q, rect, axis, rect_of):
    last = None
    for frac in _SPLITS:
        sub = rect_of(frac)
        try:
            return sub, _contour_count(q, *sub)
        except BoundaryRoot as exc:
            last = exc
    raise last


def _isolate(q, dq, rect, n, rightmost, depth=0):
    try:
        return _bisect_roots(q, dq, rect, n, rightmost, depth)
    except BoundaryRoot:
        # every split line grazes a tight cluster; polish it as one multiple root
        x0, x1, y0, y1 = rect
        w, ht = x1 - x0, y1 - y0
        c = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
        r = _newton(q, dq, c, mult=n)
        if r is not None and abs(r - c) <= max(w, ht):
            return [r] * n
        raise


def _bisect_roots(q, dq, rect, n, rightmost, depth):
    if n <= 0:
        return []
    if depth > 400:
        raise NonConvergence("root isolation did not terminate")
    x0, x1, y0, y1 = rect
    w, ht = x1 - x0, y1 - y0
    c = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
    unit = 1.0 + abs(c)
    small = max(w, ht) < 1e-3 * unit
    if n == 1 or small:
        r = _newton(q, dq, c, mult=n)
        pad = 1e-9 * unit
        if r is not None and x0 - pad <= r.real <= x1 + pad and y0 - pad <= r.imag <= y1 + pad:
            return [r] * n
    if max(w, ht) < 1e-12 * unit:
        return [c] * n
    if rightmost and not small:
        vertical = w > 1e-4 * unit
    else:
        vertical = w >= ht
    if vertical:
        (right, n_right) = _split_count(
            q, rect, 0, lambda f: (x0 + f * w, x1, y0, y1))
        left = (x0, right[0], y0, y1)
        n_left = n - n_right
        if rightmost:
            if n_right > 0:
                return _isolate(q, dq, right, n_right, True, depth + 1)
            return _isolate(q, dq, left, n_left, True, depth + 1)
        return (_isolate(q, dq, right, n_right, False, depth + 1)
                + _isolate(q, dq, left, n_left, False, depth + 1))
    (top, n_top) = _split_count(q, rect, 1, lambda f: (x0, x1, y0 + f * ht, y1))
    bottom = (x0, x1, y0, top[2])
    return (_isolate(q, dq, top, n_top, rightmost, depth + 1)
            + _isolate(q, dq, bottom, n - n_top, rightmost, depth + 1))


def locate_roots(q: Quasipolynomial, window: RootWindow) -> list[complex]:
    """All roots inside the window, repeated by multiplicity, rightmost first."""
    rect = (-window.sigma, window.re_max, -window.omega_max, window.omega_max)
    n = _contour_count(q, *rect)
    roots = _isolate(q, q.derivative(), rect, n, rightmost=False)
    return sorted(roots, key=lambda r: (-r.real, -r.imag))


def rightmost_root(q: Quasipolynomial, window: RootWindow | None = None, *,
                   sigma: float | None = None) -> complex | None:
    """Root of largest real part inside the window, or ``None`` if the window is empty of roots."""
    if window is None:
        if sigma is None:
            raise ValidationError("pass a RootWindow or sigma")
        window = default_window(q, sigma)
    rect = (-window.sigma, window.re_max, -window.omega_max, window.omega_max)
    n = _contour_count(q, *rect)
    if n == 0:
        return None
    roots = _isolate(q, q.derivative(), rect, n, rightmost=True)
    best = max(roots, key=lambda r: (r.real, abs(r.imag) <= 1e-12 * (1 + abs(r)), -abs(r.imag)))
    if abs(best.imag) <= 1e-12 * (1 + abs(best)):
        best = complex(best.real, 0.0)
    # real coefficients: report the upper member of a conjugate pair
    return complex(best.real, abs(best.imag))
