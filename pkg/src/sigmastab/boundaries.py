"""sigma-stability boundaries in the (kp, ki) plane and verified region maps.

A point of the gain plane lies on a boundary when the characteristic
quasipolynomial has a root on the line ``Re s = -sigma``: either the real
root ``s = -sigma`` (a line, or a curve in proportional mode) or a complex
pair ``s = -sigma +/- j omega`` (a parametric curve in omega). Region maps
classify lattice cells by direct root counting rather than by tracking
crossing directions.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (BoundaryRoot, DegenerateDenominator, NoRealRoot, NumericalError,
                     SingularSystem, ValidationError)
from .model import FIXED_D, NONE, ZETA, Gains, LoopConfig
from .quasipoly import (characteristic, count_roots_right_of, difference_operator_ok,
                        loop_value)

REAL_ROOT = "RealRootLine"
COMPLEX_PAIR = "ComplexPair"
DIFF_OP = "DifferenceOperatorLimit"

# cell codes in SigmaMap.counts besides the root count itself
INFEASIBLE = -1
UNKNOWN = -2


def _sinc_h(h, omega):
    """``sin(h omega) / omega`` without the removable singularity at 0."""
    return h * np.sinc(h * omega / np.pi)


@dataclass(frozen=True)
class BoundaryKernel:
    """Entries of the 2x2 system ``A (kp, ki)^T = d B`` on ``s = -sigma + j omega``."""

    alpha: float
    beta: float
    gamma: float
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class BoundaryCurve:
    kind: str
    samples: np.ndarray  # rows (kp, ki, omega)
    sigma: float
    branch: str = ""

    def __len__(self):
        return len(self.samples)


def _scatter_d(config: LoopConfig, d):
    if config.mode == FIXED_D:
        return config.scattering.d if d is None else float(d)
    if d is None:
        raise ValidationError("proportional mode needs the impedance d = zeta*kp explicitly")
    return float(d)


def kernel(config: LoopConfig, sigma: float, omega: float, d: float | None = None) -> BoundaryKernel:
    """Boundary system of a scattering loop at ``s = -sigma + j omega``.

    In proportional mode the kernel depends on ``kp`` through ``d``; pass it.
    """
    if not config.scattering.active:
        raise ValidationError("the boundary kernel is defined for scattering modes only")
    d = _scatter_d(config, d)
    a, b, h = config.a, config.b, config.h
    E = math.exp(h * sigma)
    alpha = 1 + E * math.cos(h * omega)
    beta = 1 - E * math.cos(h * omega)
    gamma = E * math.sin(h * omega)
    a1, a2 = a - sigma, a - 2 * sigma
    w, bd = omega, b * d
    rho = sigma * a1 + w * w
    A = np.array([
        [(gamma * w - alpha * sigma) * bd - beta * rho - gamma * w * a2,
         alpha * bd + beta * a1 - gamma * w],
        [(gamma * sigma + alpha * w) * bd - gamma * rho + beta * w * a2,
         -gamma * bd + gamma * a1 + beta * w],
    ])
    B = np.array([
        (beta * sigma + gamma * w) * bd + alpha * rho - gamma * w * a2,
        (gamma * sigma - beta * w) * bd - gamma * rho - alpha * w * a2,
    ])
    return BoundaryKernel(alpha, beta, gamma, A, B)


def _system(config, sigma, omega, d):
    """Kernel with the imaginary-part row divided by omega (regular at omega = 0)."""
    a, b, h = config.a, config.b, config.h
    E = math.exp(h * sigma)
    c = math.cos(h * omega)
    alpha, beta = 1 + E * c, 1 - E * c
    gw = E * _sinc_h(h, omega)  # gamma / omega
    gamma = gw * omega
    a1, a2 = a - sigma, a - 2 * sigma
    w, bd = omega, b * d
    rho = sigma * a1 + w * w
    A = np.array([
        [(gamma * w - alpha * sigma) * bd - beta * rho - gamma * w * a2,
         alpha * bd + beta * a1 - gamma * w],
        [(gw * sigma + alpha) * bd - gw * rho + beta * a2,
         gw * (a1 - bd) + beta],
    ])
    B = np.array([
        (beta * sigma + gamma * w) * bd + alpha * rho - gamma * w * a2,
        (gw * sigma - beta) * bd - gw * rho - alpha * a2,
    ])
    return A, B


def real_root_line(config: LoopConfig, sigma: float, kp: float) -> float:
    """``ki`` placing a real root exactly at ``s = -sigma`` for the given ``kp``."""
    a, b, h = config.a, config.b, config.h
    E = math.exp(h * sigma)
    if not config.scattering.active:
        return sigma * kp + sigma * (a - sigma) / (b * E)
    d = config.scattering.d_for(kp)
    a1 = a - sigma
    num = (1 + E) * a1 + (1 - E) * b * d
    den = (1 - E) * a1 + (1 + E) * b * d
    ref = abs((1 - E) * a1) + abs((1 + E) * b * d)
    if abs(den) <= 1e-14 * ref or ref == 0.0:
        raise DegenerateDenominator(sigma)
    return sigma * kp + sigma * d * num / den


def real_root_denominator(config: LoopConfig, sigma: float, kp: float) -> float:
    """Denominator of the scattering real-root line; its sign changes mark poles."""
    a, b, h = config.a, config.b, config.h
    E = math.exp(h * sigma)
    d = config.scattering.d_for(kp)
    return (1 - E) * (a - sigma) + (1 + E) * b * d


def _det(M):
    return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]


def _det_affine(M0, M1):
    """Coefficients (c0, c1, c2) of det(M0 + t M1) as a polynomial in t."""
    c1 = M0[0, 0] * M1[1, 1] + M1[0, 0] * M0[1, 1] - M0[0, 1] * M1[1, 0] - M1[0, 1] * M0[1, 0]
    return _det(M0), c1, _det(M1)


def proportional_quadratic(config: LoopConfig, sigma: float, omega: float):
    """Coefficients ``(q2, q1, q0)`` in ``kp`` of the complex-boundary equation with ``d = zeta kp``.

    Obtained from the Cramer identity ``|A| + zeta |(A_2  B)| = 0`` with ``A``
    and ``B`` affine in ``d``; the imaginary-part row is divided by omega, which
    only rescales the equation.
    """
    zeta = config.scattering.zeta
    A0, B0 = _system(config, sigma, omega, 0.0)
    A1, B1 = _system(config, sigma, omega, 1.0)
    A1, B1 = A1 - A0, B1 - B0
    N0 = np.column_stack((A0[:, 1], B0))
    N1 = np.column_stack((A1[:, 1], B1))
    pa = _det_affine(A0, A1)
    pn = _det_affine(N0, N1)
    q0, qd1, qd2 = (pa[k] + zeta * pn[k] for k in range(3))
    # polynomial in d -> polynomial in kp
    return qd2 * zeta * zeta, qd1 * zeta, q0


def polish_complex(config: LoopConfig, sigma: float, omega: float, kp: float, ki: float):
    """Newton refinement of a complex-boundary point at fixed omega.

    The closed forms lose digits where the boundary equation nearly
    degenerates; two Newton steps on the quasipolynomial itself restore them.
    A step is kept only when it lowers the residual.
    """
    s = complex(-sigma, omega)

    def resid(k1, k2):
        return loop_value(config, k1, k2, s)

    best = resid(kp, ki)
    for _ in range(2):
        if best == 0:
            break
        dk = 1e-6 * max(1.0, abs(kp))
        if config.mode == ZETA and kp - dk <= 0:
            dk = 0.5 * kp
        dp_kp = (resid(kp + dk, ki) - resid(kp - dk, ki)) / (2 * dk)
        dp_ki = resid(kp, ki + 1.0) - resid(kp, ki)
        J = np.array([[dp_kp.real, dp_ki.real], [dp_kp.imag, dp_ki.imag]])
        try:
            step = np.linalg.solve(J, [best.real, best.imag])
        except np.linalg.LinAlgError:
            break
        k1, k2 = kp - step[0], ki - step[1]
        if config.mode == ZETA and k1 <= 0:
            break
        r = resid(k1, k2)
        if not abs(r) < abs(best):
            break
        kp, ki, best = k1, k2, r
    return kp, ki


def _ki_from_rows(A, B, d, kp):
    k = 0 if abs(A[0, 1]) >= abs(A[1, 1]) else 1
    if A[k, 1] == 0.0:
        raise SingularSystem("both ki coefficients vanish")
    return (d * B[k] - A[k, 0] * kp) / A[k, 1]


def complex_boundary(config: LoopConfig, sigma: float, omega: float) -> list[tuple[float, float]]:
    """Gains placing a root pair at ``-sigma +/- j omega``.

    Returns a list of ``(kp, ki)``: one entry without scattering or with fixed
    d, up to two (positive ``kp`` only, smallest first) in proportional mode.
    """
    if not omega > 0:
        raise ValidationError("omega must be positive")
    a, b, h = config.a, config.b, config.h
    if config.mode == NONE:
        E = math.exp(h * sigma)
        c = math.cos(h * omega)
        sw = _sinc_h(h, omega)
        a1, a2 = a - sigma, a - 2 * sigma
        kp = (-a2 * c + (sigma * a1 + omega * omega) * sw) / (b * E)
        ki = (sigma * sigma + omega * omega) * (c + a1 * sw) / (b * E)
        return [polish_complex(config, sigma, omega, float(kp), float(ki))]
    if config.mode == FIXED_D:
        d = config.scattering.d
        A, B = _system(config, sigma, omega, d)
        det = _det(A)
        if abs(det) <= 1e-13 * (abs(A[0, 0] * A[1, 1]) + abs(A[0, 1] * A[1, 0])):
            raise SingularSystem(f"boundary system singular at omega={omega!r}")
        kp = d * (B[0] * A[1, 1] - A[0, 1] * B[1]) / det
        ki = d * (A[0, 0] * B[1] - B[0] * A[1, 0]) / det
        return [polish_complex(config, sigma, omega, float(kp), float(ki))]
    zeta = config.scattering.zeta
    q2, q1, q0 = proportional_quadratic(config, sigma, omega)
    scale = max(abs(q2), abs(q1), abs(q0))
    if scale == 0.0:
        raise SingularSystem("boundary equation vanishes identically")
    if abs(q2) < 1e-12 * scale:
        roots = [] if q1 == 0 else [-q0 / q1]
    else:
        disc = q1 * q1 - 4 * q2 * q0
        if disc < 0:
            raise NoRealRoot(f"no real kp on the complex boundary at omega={omega!r}")
        sq = math.sqrt(disc)
        # cancellation-free pair
        t = -0.5 * (q1 + math.copysign(sq, q1))
        roots = [t / q2, q0 / t] if t != 0 else [-q1 / (2 * q2)]
    out = []
    for kp in sorted(roots):
        if kp > 0:
            d = zeta * kp
            A, B = _system(config, sigma, omega, d)
            ki = float(_ki_from_rows(A, B, d, kp))
            out.append(polish_complex(config, sigma, omega, float(kp), ki))
    return out


# ---------------------------------------------------------------------------
# curves


def default_omega_max(config: LoopConfig, sigma: float, kp_range, ki_range) -> float:
    h = config.h
    if h > 0:
        return 40 * math.pi / h
    reach = max(abs(kp_range[0]), abs(kp_range[1]), abs(ki_range[0]), abs(ki_range[1]))
    return 10.0 * (1.0 + abs(sigma) + config.a + math.sqrt(config.b * reach + 1.0))


def _branch_points(config, sigma, omega):
    """Per-branch gains at ``omega`` (None where a branch does not exist)."""
    try:
        sols = complex_boundary(config, sigma, omega)
    except (SingularSystem, NoRealRoot):
        sols = []
    if config.mode != ZETA:
        return [sols[0] if sols else None]
    # label by kp order: lower and upper branch
    if len(sols) == 2:
        return sols
    if len(sols) == 1:
        return [sols[0], None]
    return [None, None]


def _complex_curves(config, sigma, kp_range, ki_range, omega_max, cell, max_points):
    span = (kp_range[1] - kp_range[0], ki_range[1] - ki_range[0])
    lo = (kp_range[0] - 2 * span[0], ki_range[0] - 2 * span[1])
    hi = (kp_range[1] + 2 * span[0], ki_range[1] + 2 * span[1])

    def inside(p):
        return p is not None and lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1]

    def needs_split(p, q):
        if (p is None) != (q is None):
            return True
        if p is None or not (inside(p) or inside(q)):
            return False
        return abs(p[0] - q[0]) > cell[0] or abs(p[1] - q[1]) > cell[1]

    seeds = np.geomspace(omega_max * 1e-6, omega_max, 257)
    pts = {float(w): _branch_points(config, sigma, float(w)) for w in seeds}
    nbranch = len(pts[float(seeds[0])])
    # bisect each seed interval until neighbours are within one cell
    stack = list(zip(seeds[:-1].tolist(), seeds[1:].tolist()))
    while stack and len(pts) < max_points:
        w0, w1 = stack.pop()
        if w1 - w0 <= 1e-12 * w1:
            continue
        if any(needs_split(pts[w0][k], pts[w1][k]) for k in range(nbranch)):
            wm = 0.5 * (w0 + w1)
            pts[wm] = _branch_points(config, sigma, wm)
            stack.append((w0, wm))
            stack.append((wm, w1))

    ws = sorted(pts)
    curves = []
    labels = [""] if nbranch == 1 else ["lower", "upper"]
    for k in range(nbranch):
        run = []
        prev = None
        for w in ws:
            p = pts[w][k]
            ok = inside(p)
            # a jump across the whole box marks a pass through infinity
            jump = ok and prev is not None and (abs(p[0] - prev[0]) > span[0]
                                                or abs(p[1] - prev[1]) > span[1])
            if not ok or jump:
                if len(run) >= 2:
                    curves.append(BoundaryCurve(COMPLEX_PAIR, np.array(run), sigma, labels[k]))
                run = []
            if ok:
                run.append((p[0], p[1], w))
                prev = p
            else:
                prev = None
        if len(run) >= 2:
            curves.append(BoundaryCurve(COMPLEX_PAIR, np.array(run), sigma, labels[k]))
    return curves


def _real_curves(config, sigma, kp_range, ki_range, n=257):
    span = ki_range[1] - ki_range[0]
    lo, hi = ki_range[0] - 2 * span, ki_range[1] + 2 * span
    kps = np.linspace(kp_range[0], kp_range[1], n)
    curves, run, last_sign = [], [], None
    for kp in kps:
        if config.mode == ZETA and kp <= 0:
            continue
        sign = None
        if config.scattering.active:
            sign = np.sign(real_root_denominator(config, sigma, kp))
        try:
            ki = real_root_line(config, sigma, kp)
        except DegenerateDenominator:
            ki = math.nan
        ok = math.isfinite(ki) and lo <= ki <= hi
        if not ok or (last_sign is not None and sign != last_sign):
            if len(run) >= 2:
                curves.append(BoundaryCurve(REAL_ROOT, np.array(run), sigma))
            run = []
        last_sign = sign
        if ok:
            run.append((kp, ki, 0.0))
    if len(run) >= 2:
        curves.append(BoundaryCurve(REAL_ROOT, np.array(run), sigma))
    return curves


def difference_operator_limits(config: LoopConfig, sigma: float) -> list[float]:
    """``kp`` values bounding the admissible difference-operator band (fixed d, sigma > 0)."""
    if config.mode != FIXED_D or sigma <= 0:
        return []
    E = math.exp(config.h * sigma)
    d = config.scattering.d
    return [d * (E - 1) / (E + 1), d * (E + 1) / (E - 1)]


def boundary_curves(config: LoopConfig, sigma: float, kp_range, ki_range, *,
                    resolution: int = 64, omega_max: float | None = None,
                    max_points: int = 20000) -> list[BoundaryCurve]:
    """All boundary curves for one abscissa, sampled within a margin around the plot box.

    Complex-pair curves are refined by bisection in omega until consecutive
    samples are less than one cell apart (cell = range / resolution).
    """
    kp_range = tuple(map(float, kp_range))
    ki_range = tuple(map(float, ki_range))
    if not (kp_range[1] > kp_range[0] and ki_range[1] > ki_range[0]):
        raise ValidationError("ranges must be increasing (lo, hi) pairs")
    if omega_max is None:
        omega_max = default_omega_max(config, sigma, kp_range, ki_range)
    cell = ((kp_range[1] - kp_range[0]) / resolution, (ki_range[1] - ki_range[0]) / resolution)
    curves = _real_curves(config, sigma, kp_range, ki_range)
    curves += _complex_curves(config, sigma, kp_range, ki_range, omega_max, cell, max_points)
    for kp in difference_operator_limits(config, sigma):
        ks = np.linspace(ki_range[0], ki_range[1], 2)
        curves.append(BoundaryCurve(DIFF_OP, np.column_stack((np.full(2, kp), ks, np.zeros(2))),
                                    sigma))
    return curves


# ---------------------------------------------------------------------------
# region maps


@dataclass
class SigmaMap:
    """Lattice classification of the gain plane at one abscissa.

    ``counts[i, j]`` is the number of roots right of ``-sigma`` for the cell
    centred at ``(kp_centers[i], ki_centers[j])``, ``INFEASIBLE`` where the
    difference operator is unstable, ``UNKNOWN`` where counting failed.
    ``mixed`` marks cells whose interior probes disagreed with the centre.
    """

    config: LoopConfig
    sigma: float
    kp_centers: np.ndarray
    ki_centers: np.ndarray
    counts: np.ndarray
    mixed: np.ndarray
    curves: list = field(default_factory=list)

    @property
    def d_sigma(self) -> np.ndarray:
        """Mask of cells certified free of roots right of ``-sigma``."""
        return (self.counts == 0) & ~self.mixed

    @property
    def cell_size(self):
        return (self.kp_centers[1] - self.kp_centers[0], self.ki_centers[1] - self.ki_centers[0])

    def region_points(self):
        """Centres of the cells in ``d_sigma`` as an (n, 2) array."""
        i, j = np.nonzero(self.d_sigma)
        return np.column_stack((self.kp_centers[i], self.ki_centers[j]))


def classify_point(config: LoopConfig, sigma: float, kp: float, ki: float, retries: int = 3) -> int:
    """Root count right of ``-sigma`` at one gain pair, with feasibility and jitter handling."""
    if config.scattering.active:
        d = config.scattering.d_for(kp)
        if not d > 0:
            return INFEASIBLE
        ok, _ = difference_operator_ok(d, kp, config.h, sigma)
        if not ok:
            return INFEASIBLE
    q = characteristic(config, Gains(kp, ki))
    s = sigma
    for attempt in range(retries + 1):
        try:
            return count_roots_right_of(q, sigma=s)
        except BoundaryRoot:
            s = sigma - 1e-6 * max(1.0, abs(sigma)) * (attempt + 1)
        except NumericalError:
            return UNKNOWN
    return UNKNOWN


def _classify_row(args):
    config, sigma, kp, kis, probes = args
    counts, mixed = [], []
    for ki, extra in zip(kis, probes):
        c = classify_point(config, sigma, kp, ki)
        m = False
        for pk, pi in extra:
            if classify_point(config, sigma, pk, pi) != c:
                m = True
                break
        counts.append(c)
        mixed.append(m)
    return counts, mixed


def build_sigma_map(config: LoopConfig, sigma: float, kp_range, ki_range, resolution: int = 32,
                    *, probes: int = 2, seed: int = 0, workers: int | None = None,
                    curves: bool = True) -> SigmaMap:
    """Classify a ``resolution x resolution`` lattice of cells over the gain box.

    Each cell is counted at its centre plus ``probes`` random interior points
    (seeded, so maps are reproducible); disagreement marks the cell mixed.
    ``workers > 1`` distributes lattice rows over processes.
    """
    if resolution < 16:
        raise ValidationError("resolution must be at least 16 per axis")
    kp_range = tuple(map(float, kp_range))
    ki_range = tuple(map(float, ki_range))
    if not (kp_range[1] > kp_range[0] and ki_range[1] > ki_range[0]):
        raise ValidationError("ranges must be increasing (lo, hi) pairs")
    if kp_range[0] < 0 or ki_range[0] < 0:
        raise ValidationError("gain ranges must be nonnegative")
    dkp = (kp_range[1] - kp_range[0]) / resolution
    dki = (ki_range[1] - ki_range[0]) / resolution
    kpc = kp_range[0] + dkp * (np.arange(resolution) + 0.5)
    kic = ki_range[0] + dki * (np.arange(resolution) + 0.5)
    rng = np.random.default_rng(seed)
    offs = rng.uniform(-0.45, 0.45, size=(resolution, resolution, probes, 2))
    tasks = []
    for i, kp in enumerate(kpc):
        pr = [[(kp + o[0] * dkp, kic[j] + o[1] * dki) for o in offs[i, j]]
              for j in range(resolution)]
        tasks.append((config, float(sigma), float(kp), [float(k) for k in kic], pr))
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_classify_row, tasks))
    else:
        rows = [_classify_row(t) for t in tasks]
    counts = np.array([r[0] for r in rows], dtype=int)
    mixed = np.array([r[1] for r in rows], dtype=bool)
    cv = boundary_curves(config, sigma, kp_range, ki_range, resolution=resolution) if curves else []
    return SigmaMap(config, float(sigma), kpc, kic, counts, mixed, cv)
