import math

import numpy as np
import pytest

from sigmastab.errors import InsufficientPeaks, NumericalBlowup, ValidationError
from sigmastab.model import Gains, LoopConfig
from sigmastab.quasipoly import characteristic, rightmost_root
from sigmastab.sim import SimConfig, _grid_step, estimate_decay, simulate
from sigmastab.tuning import design_procedure, minimal_gains_no_scatter

PLAIN = LoopConfig.make(1, 1, 0.1)
FIXED = LoopConfig.make(1, 1, 0.1, "fixed-d", d=15)


def test_equilibrium_stays_at_rest():
    for cfg, g in ((PLAIN, Gains(3, 5)), (FIXED, Gains(20, 70))):
        tr = simulate(SimConfig(cfg, g))
        for name, col in tr.columns().items():
            if name != "t":
                assert not np.any(col), name


def test_plain_channel_wiring():
    cfg = LoopConfig.make(1, 1, h1=0.03, h2=0.07)
    sc = SimConfig(cfg, Gains(2.0, 3.0), y_ref=0.5, x0=1.0, t_end=2.0)
    tr = simulate(sc)
    m1, m2 = sc.delay_steps
    assert (m1, m2) == (round(0.03 / sc.dt), round(0.07 / sc.dt))
    # return path: u0(t) = y1(t - h2) - y_ref, with the initial state before t = 0
    assert tr.u0[m2:] == pytest.approx(tr.y1[:-m2] - 0.5, abs=1e-14)
    assert tr.u0[:m2] == pytest.approx(np.full(m2, -0.5))
    # forward path: u1(t) = -y0(t - h1), zero history
    assert tr.u1[m1:] == pytest.approx(-tr.y0[:-m1], abs=1e-14)
    assert not np.any(tr.u1[:m1])
    assert tr.y0 == pytest.approx(2.0 * tr.u0 + 3.0 * tr.xi, abs=1e-13)


def test_scattering_wave_algebra():
    g = Gains(20.0, 70.0)
    sc = SimConfig(FIXED, g, y_ref=0.2, x0=1.0, t_end=2.0)
    tr = simulate(sc)
    d = 15.0
    m1, m2 = sc.delay_steps
    # wave variables at both channel ends
    assert tr.s_plus_0 == pytest.approx(tr.mu_0 + d * tr.upsilon_0, abs=1e-12)
    assert tr.s_minus_0 == pytest.approx(tr.mu_0 - d * tr.upsilon_0, abs=1e-12)
    assert tr.s_plus_1 == pytest.approx(tr.mu_1 + d * tr.upsilon_1, abs=1e-12)
    assert tr.s_minus_1 == pytest.approx(tr.mu_1 - d * tr.upsilon_1, abs=1e-12)
    # pure transport in each direction
    assert tr.s_plus_1[m1:] == pytest.approx(tr.s_plus_0[:-m1], abs=1e-12)
    assert tr.s_minus_0[m2:] == pytest.approx(tr.s_minus_1[:-m2], abs=1e-12)
    # terminations: controller output drives mu_0, plant velocity is its state
    assert tr.mu_0 == pytest.approx(-tr.y0, abs=1e-12)
    assert tr.upsilon_1 == pytest.approx(tr.x)
    assert tr.u1 == pytest.approx(tr.mu_1)
    # power balance: s+^2 - s-^2 = 4 d mu upsilon
    for end in ("0", "1"):
        sp, sm = getattr(tr, "s_plus_" + end), getattr(tr, "s_minus_" + end)
        mu, up = getattr(tr, "mu_" + end), getattr(tr, "upsilon_" + end)
        assert sp ** 2 - sm ** 2 == pytest.approx(4 * d * mu * up, rel=1e-9, abs=1e-9)


def test_scattering_signals_absent_without_scattering():
    tr = simulate(SimConfig(PLAIN, Gains(1, 1), x0=1.0))
    assert tr.s_plus_0.size == 0
    assert list(tr.columns())[:7] == ["t", "x", "xi", "u0", "u1", "y0", "y1"]


@pytest.mark.parametrize("cfg,gains", [
    (PLAIN, Gains(3.2596, 5.3339)),
    (FIXED, Gains(19.6, 71.3)),
    (LoopConfig.make(1, 1, 0.1, "zeta", zeta=1.0), Gains(10.0, 40.0)),
])
def test_reference_is_tracked(cfg, gains):
    tr = simulate(SimConfig(cfg, gains, y_ref=1.0, t_end=15.0))
    assert tr.y1[-1] == pytest.approx(1.0, abs=1e-6)


def test_undelayed_double_root_decay():
    g = minimal_gains_no_scatter(1, 1, 0.0, 2.0)
    tr = simulate(SimConfig(LoopConfig.make(1, 1, 0.0), g, x0=1.0), multiplicity=2)
    assert tr.sigma_hat == pytest.approx(2.0, rel=0.05)
    assert tr.fit_quality > 0.99


def test_synthetic_exponential():
    t = np.linspace(0, 5, 5001)
    est, r2 = estimate_decay((t, np.exp(-4 * t)), (0.5, 4.5))
    assert est == pytest.approx(4.0, abs=1e-3) and r2 > 0.999


def test_synthetic_damped_oscillation():
    t = np.linspace(0, 4, 40001)
    est, r2 = estimate_decay((t, np.exp(-2 * t) * np.cos(30 * t)), (0.2, 3.8))
    assert est == pytest.approx(2.0, rel=0.02) and r2 > 0.99


def test_plain_loop_decay_matches_spectrum():
    g = minimal_gains_no_scatter(1, 1, 0.1, 5.0)
    q = characteristic(PLAIN, g)
    rate = -rightmost_root(q, sigma=8.5).real
    tr = simulate(SimConfig(PLAIN, g, x0=1.0, t_end=8.0), multiplicity=2)
    assert tr.sigma_hat == pytest.approx(5.0, rel=0.10)
    assert tr.sigma_hat == pytest.approx(rate, rel=0.10)


def test_designed_loop_decay():
    des = design_procedure(1, 1, 0.1, 10.0)
    cfg = LoopConfig(PLAIN.plant, PLAIN.channel, des.scattering)
    tr = simulate(SimConfig(cfg, des.gains, x0=1.0, t_end=4.0), multiplicity=2)
    assert 9.0 <= tr.sigma_hat <= 10.5


def test_integrator_is_high_order():
    g = Gains(3.0, 5.0)
    finals = []
    for dt in (0.1 / 25, 0.1 / 50, 0.1 / 100):
        tr = simulate(SimConfig(PLAIN, g, x0=1.0, dt=dt, t_end=2.0))
        finals.append(tr.x[-1])
    ratio = abs(finals[0] - finals[1]) / abs(finals[1] - finals[2])
    assert ratio >= 4.0


def test_decay_estimate_converges_with_step():
    g = minimal_gains_no_scatter(1, 1, 0.1, 4.0)
    est = [simulate(SimConfig(PLAIN, g, x0=1.0, dt=dt, t_end=6.0), multiplicity=2).sigma_hat
           for dt in (0.1 / 25, 0.1 / 50, 0.1 / 100)]
    assert abs(est[0] - est[1]) / abs(est[1] - est[2]) >= 4.0


def test_validation():
    with pytest.raises(ValidationError):
        SimConfig(PLAIN, Gains(1, 1), t_end=0.5)
    with pytest.raises(ValidationError):
        SimConfig(PLAIN, Gains(1, 1), dt=-1.0)
    with pytest.raises(ValidationError):
        SimConfig(PLAIN, Gains(1, 1), x0=math.nan)
    with pytest.raises(ValidationError):
        SimConfig(LoopConfig.make(1, 1, 0.1, "zeta", zeta=1.0), Gains(0.0, 1.0))
    tr = simulate(SimConfig(PLAIN, Gains(3, 5), x0=1.0))
    with pytest.raises(ValidationError):
        estimate_decay(tr, (0.1, 5.0))
    with pytest.raises(ValidationError):
        estimate_decay(tr, (1.0, 50.0))
    with pytest.raises(ValidationError):
        estimate_decay(tr, (1.0, 5.0), multiplicity=0)


def test_blowup_is_reported():
    with pytest.raises(NumericalBlowup) as info:
        simulate(SimConfig(PLAIN, Gains(40.0, 0.0), x0=1.0, t_end=60.0))
    assert info.value.step > 0


def test_flat_response_has_no_decay_rate():
    tr = simulate(SimConfig(PLAIN, Gains(1, 1)))
    assert math.isnan(tr.sigma_hat) and tr.fit_quality == 0.0
    with pytest.raises(InsufficientPeaks):
        estimate_decay(tr)


def test_grid_step_divides_both_delays():
    dt = _grid_step(0.03, 0.07, 0.001)
    assert dt <= 0.001
    for h in (0.03, 0.07):
        assert abs(h / dt - round(h / dt)) < 1e-9
    assert _grid_step(0.0, 0.0, 0.01) == 0.01
    sc = SimConfig(LoopConfig.make(1, 1, h1=0.0123, h2=0.05), Gains(1, 1))
    assert sc.dt <= 0.0623 / 200


@pytest.mark.parametrize("s", [1.0, 2.5])
def test_step_response_matches_transfer_function(s):
    # Laplace transform of y1 for a unit step reference equals T(s)/s with
    # T(s) = b e^{-h1 s}(kp s + ki) / (s^2 + a s + b (kp s + ki) e^{-h s})
    a, b, h1, h2, kp, ki = 1.5, 0.8, 0.03, 0.07, 2.0, 3.0
    cfg = LoopConfig.make(a, b, h1=h1, h2=h2)
    tr = simulate(SimConfig(cfg, Gains(kp, ki), y_ref=1.0, t_end=30.0, dt=1e-4))
    lap = np.trapezoid(np.exp(-s * tr.t) * tr.y1, tr.t)
    h = h1 + h2
    T = b * math.exp(-h1 * s) * (kp * s + ki) / (s * s + a * s + b * (kp * s + ki) * math.exp(-h * s))
    assert lap == pytest.approx(T / s, rel=1e-6)
