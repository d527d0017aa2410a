"""Time-domain simulation of the delayed PI loop and empirical decay rates.

The channel is realised as two pure delays on a fixed grid (``h1`` and
``h2`` are integer multiples of the step), the plant and the PI integrator
are advanced with RK4. With scattering, the channel carries the wave
variables ``s+`` (forward) and ``s-`` (return); otherwise it carries the
controller output forward and the plant output back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import InsufficientPeaks, NumericalBlowup, ValidationError
from .model import Gains, LoopConfig

SCATTER_COLUMNS = ("s_plus_0", "s_minus_0", "s_plus_1", "s_minus_1",
                   "mu_0", "upsilon_0", "mu_1", "upsilon_1")
BASE_COLUMNS = ("x", "xi", "u0", "u1", "y0", "y1")


def _grid_step(h1: float, h2: float, dt: float) -> float:
    """Largest step not above ``dt`` that divides both delays exactly."""
    parts = [Fraction(v).limit_denominator(10**9) for v in (h1, h2) if v > 0]
    if not parts:
        return dt
    g = parts[0]
    for p in parts[1:]:
        # gcd of two rationals
        g = Fraction(math.gcd(g.numerator * p.denominator, p.numerator * g.denominator),
                     g.denominator * p.denominator)
    n = max(1, math.ceil(float(g) / dt - 1e-9))
    return float(g) / n


@dataclass(frozen=True)
class SimConfig:
    """Simulation setup.

    ``dt`` defaults to ``h/200`` (1e-3 without delay) and is shrunk so that
    both one-way delays are whole numbers of steps. ``t_end`` defaults to
    ``max(10 h, 10)`` seconds. ``channel_init`` holds the constant channel
    histories (forward, return) before ``t = 0``.
    """

    loop: LoopConfig
    gains: Gains
    y_ref: float = 0.0
    x0: float = 0.0
    xi0: float = 0.0
    dt: float | None = None
    t_end: float | None = None
    channel_init: tuple = (0.0, 0.0)

    def __post_init__(self):
        h = self.loop.h
        dt = self.dt
        if dt is None:
            dt = h / 200 if h > 0 else 1e-3
        if not (math.isfinite(dt) and dt > 0):
            raise ValidationError(f"dt must be positive, got {dt!r}")
        dt = _grid_step(self.loop.channel.h1, self.loop.channel.h2, float(dt))
        t_end = self.t_end if self.t_end is not None else max(10 * h, 10.0)
        if not (math.isfinite(t_end) and t_end > 0):
            raise ValidationError(f"t_end must be positive, got {t_end!r}")
        if t_end < 10 * h * (1 - 1e-12):
            raise ValidationError(f"t_end={t_end} shorter than 10 round-trip delays ({10 * h})")
        for name in ("y_ref", "x0", "xi0"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        init = tuple(float(v) for v in self.channel_init)
        if len(init) != 2 or not all(map(math.isfinite, init)):
            raise ValidationError("channel_init must be two finite numbers")
        if self.loop.scattering.active and not self.loop.scattering.d_for(self.gains.kp) > 0:
            raise ValidationError("proportional scattering needs kp > 0")
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "t_end", float(t_end))
        object.__setattr__(self, "channel_init", init)

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def delay_steps(self):
        ch = self.loop.channel
        return int(round(ch.h1 / self.dt)), int(round(ch.h2 / self.dt))


@dataclass
class SimTrace:
    """Sampled signals of one run; scattering signals are empty arrays without scattering."""

    config: SimConfig
    t: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    scattering: dict = field(default_factory=dict)
    sigma_hat: float = math.nan
    fit_quality: float = 0.0

    def __getattr__(self, name):
        if name in SCATTER_COLUMNS:
            return (self.__dict__.get("scattering") or {}).get(name, np.empty(0))
        raise AttributeError(name)

    def columns(self) -> dict:
        """Ordered mapping of column name to vector, scattering signals last."""
        out = {"t": self.t}
        for name in BASE_COLUMNS:
            out[name] = getattr(self, name)
        out.update(self.scattering)
        return out


def simulate(config: SimConfig, window=None, multiplicity: int = 1) -> SimTrace:
    """Run the loop from the configured initial state and estimate its decay rate.

    The decay estimate uses :func:`estimate_decay` over ``window`` (default:
    the part of the run before the response sinks into round-off); it is left as NaN with quality 0 when the
    response is too short or too flat to fit.
    """
    loop, g = config.loop, config.gains
    m1, m2 = config.delay_steps
    mode = 1 if loop.scattering.active else 0
    d = loop.scattering.d_for(g.kp) if mode else 0.0
    rec, step, value = kernels.sim_run(
        mode, loop.a, loop.b, g.kp, g.ki, float(d), config.y_ref, config.x0, config.xi0,
        config.dt, config.steps, m1, m2, config.channel_init[0], config.channel_init[1])
    if step >= 0:
        raise NumericalBlowup(step, value)
    cols = {name: np.ascontiguousarray(rec[:, k]) for k, name in enumerate(kernels.COLUMNS)}
    t = np.arange(rec.shape[0]) * config.dt
    scat = {name: cols[name] for name in SCATTER_COLUMNS} if mode else {}
    trace = SimTrace(config, t, cols["x"], cols["xi"], cols["u0"], cols["u1"], cols["y0"],
                     cols["y1"], scat)
    try:
        trace.sigma_hat, trace.fit_quality = estimate_decay(trace, window,
                                                            multiplicity=multiplicity)
    except (InsufficientPeaks, ValidationError):
        pass
    return trace


def _linfit(t, y):
    A = np.column_stack((t, np.ones_like(t)))
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return coef[0], r2


def _peaks(t, e):
    """Interior local maxima of ``e`` refined by a parabola through three samples."""
    i = np.nonzero((e[1:-1] > e[:-2]) & (e[1:-1] >= e[2:]))[0] + 1
    if i.size == 0:
        return np.empty(0), np.empty(0)
    y0, y1, y2 = e[i - 1], e[i], e[i + 1]
    den = y0 - 2 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den != 0, 0.5 * (y0 - y2) / den, 0.0)
    off = np.clip(off, -0.5, 0.5)
    dt = t[1] - t[0]
    tp = t[i] + off * dt
    ep = y1 - 0.25 * (y0 - y2) * off
    return tp, ep


def estimate_decay(trace, window=None, y_ref=None, multiplicity: int = 1):
    """Empirical exponential decay rate of ``|y1 - y_ref|`` and the fit's R^2.

    The default window runs from ``max(5 h, t_live / 3)`` to ``t_live``, the
    last time the error stays above ``1e-9`` of its peak.

    With three or more envelope peaks in the window, ``ln`` of the
    (parabola-refined) peaks is regressed on time. Otherwise the monotone
    tail after the last extremum is regressed directly. ``trace`` may also
    be a ``(t, y)`` pair, in which case no delay-based window check applies.

    A dominant root of known multiplicity ``m`` shapes the envelope as
    ``C t^(m-1) e^(-sigma t)``; the polynomial factor is divided out before
    the fit, which removes the ``(m-1)/t`` bias of a plain log-linear fit.
    """
    if multiplicity < 1:
        raise ValidationError("multiplicity must be >= 1")
    if isinstance(trace, tuple):
        t, y = (np.asarray(v, dtype=float) for v in trace)
        h = 0.0
        ref = 0.0 if y_ref is None else y_ref
    else:
        t, y = trace.t, trace.y1
        h = trace.config.loop.h
        ref = trace.config.y_ref if y_ref is None else y_ref
    if t.size < 3:
        raise InsufficientPeaks("trace too short")
    e = np.abs(y - ref)
    floor = 1e-11 * max(float(e.max()), 1e-300)
    if window is None:
        # end where the response sinks into round-off, start a third of the way in
        above = np.nonzero(e > 100 * floor)[0]
        t_live = float(t[above[-1]]) if above.size else float(t[-1])
        window = (max(5 * h, t_live / 3), t_live)
        if window[0] >= window[1]:
            raise InsufficientPeaks(f"response decays before the fit can start at {window[0]}")
    t0, t1 = float(window[0]), float(window[1])
    if not (t[0] <= t0 < t1 <= t[-1] * (1 + 1e-12)):
        raise ValidationError(f"window {window} is not inside the trace [{t[0]}, {t[-1]}]")
    if t0 < 5 * h * (1 - 1e-9):
        raise ValidationError(f"window must start after 5 delays ({5 * h})")
    if multiplicity > 1 and t0 <= 0:
        raise ValidationError("a multiplicity-corrected fit needs a window starting after t = 0")
    sel = (t >= t0) & (t <= t1)
    tw, ew = t[sel], e[sel]
    # drop the stretch where the response has decayed into round-off
    live = np.maximum.accumulate(ew[::-1])[::-1] > 100 * floor
    tw, ew = tw[live], ew[live]
    if tw.size < 3:
        raise InsufficientPeaks(f"response below the noise floor throughout [{t0}, {t1}]")
    tp, ep = _peaks(tw, ew)
    keep = ep > floor
    tp, ep = tp[keep], ep[keep]
    if tp.size >= 3:
        slope, r2 = _linfit(tp, np.log(ep) - (multiplicity - 1) * np.log(tp))
        return -float(slope), float(r2)
    # monotone tail after the last extremum
    de = np.diff(ew)
    turn = np.nonzero(np.sign(de[1:]) != np.sign(de[:-1]))[0]
    start = int(turn[-1]) + 2 if turn.size else 0
    tt, et = tw[start:], ew[start:]
    ok = et > floor
    tt, et = tt[ok], et[ok]
    if tt.size >= 10 and tt[-1] - tt[0] >= 0.5 * (t1 - t0):
        # regress on a fixed grid (ends snapped to 1/64 of the window) so the
        # estimate converges with the integrator instead of with the sampling
        q = (t1 - t0) / 64
        a = t0 + math.ceil((tt[0] - t0) / q - 1e-9) * q
        b = t0 + math.floor((tt[-1] - t0) / q + 1e-9) * q
        if b - a >= 0.5 * (t1 - t0) - 1e-12:
            grid = np.linspace(a, b, 257)
            logs = CubicSpline(tt, np.log(et))(grid)
        else:
            grid, logs = tt, np.log(et)
        slope, r2 = _linfit(grid, logs - (multiplicity - 1) * np.log(grid))
        return -float(slope), float(r2)
    raise InsufficientPeaks(
        f"{tp.size} envelope peaks and no monotone tail in window [{t0}, {t1}]")
