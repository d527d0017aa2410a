import os
import subprocess
import sys

import numpy as np
import pytest

from sigmastab import kernels
from sigmastab.model import Gains, LoopConfig
from sigmastab.quasipoly import characteristic
from sigmastab.sim import SimConfig

BACKENDS = kernels.backends()
compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def packed(q):
    delays = np.array(q.delays, dtype=float)
    width = q.degree + 1
    coeffs = np.zeros((len(delays), width))
    for k, tau in enumerate(q.delays):
        c = q.coeffs(tau)
        coeffs[k, :len(c)] = c
    return delays, coeffs


def test_compiled_backend_is_active_when_built():
    assert kernels.BACKEND == ("cython" if "cython" in BACKENDS else "python")


@compiled
def test_evaluation_parity():
    q = characteristic(LoopConfig.make(1, 1, 0.1, "fixed-d", d=15), Gains(19.7, 72.2))
    delays, coeffs = packed(q)
    rng = np.random.default_rng(0)
    s = rng.uniform(-20, 5, 2000) + 1j * rng.uniform(-500, 500, 2000)
    ref = BACKENDS["python"].qp_eval(delays, coeffs, s)
    out = BACKENDS["cython"].qp_eval(delays, coeffs, s)
    assert np.max(np.abs(out - ref) / (1 + np.abs(ref))) < 1e-13


@compiled
@pytest.mark.parametrize("cfg,gains,yref,hist", [
    (LoopConfig.make(1, 1, 0.1), Gains(3.26, 5.33), 0.0, (0.0, 0.0)),
    (LoopConfig.make(1, 1, h1=0.03, h2=0.07), Gains(2.0, 3.0), 1.0, (0.2, -0.1)),
    (LoopConfig.make(1, 1, 0.0), Gains(3.0, 4.0), 0.5, (0.0, 0.0)),
    (LoopConfig.make(1, 1, 0.1, "fixed-d", d=15), Gains(19.7, 72.2), 0.3, (0.1, 0.4)),
    (LoopConfig.make(2, 0.5, 0.1, "zeta", zeta=0.8336), Gains(28.5, 114.8), 0.0, (0.0, 0.0)),
    (LoopConfig.make(1, 1, h1=0.0, h2=0.1, mode="fixed-d", d=5), Gains(4.0, 9.0), 1.0, (0, 0)),
    (LoopConfig.make(1, 1, h1=0.1, h2=0.0, mode="fixed-d", d=5), Gains(4.0, 9.0), 1.0, (0, 0)),
])
def test_simulation_parity(cfg, gains, yref, hist):
    sc = SimConfig(cfg, gains, y_ref=yref, x0=1.0, xi0=0.1, t_end=max(1.0, 10 * cfg.h),
                   channel_init=hist)
    m1, m2 = sc.delay_steps
    mode = 1 if cfg.scattering.active else 0
    d = cfg.scattering.d_for(gains.kp) if mode else 0.0
    args = (mode, cfg.a, cfg.b, gains.kp, gains.ki, float(d), yref, 1.0, 0.1, sc.dt, sc.steps,
            m1, m2, float(hist[0]), float(hist[1]))
    ref, s_ref, _ = BACKENDS["python"].sim_run(*args)
    out, s_out, _ = BACKENDS["cython"].sim_run(*args)
    assert s_ref == s_out == -1
    assert np.max(np.abs(np.asarray(out) - ref)) <= 1e-12 * (1 + np.max(np.abs(ref)))


@compiled
def test_blowup_parity():
    args = (0, 1.0, 1.0, 40.0, 0.0, 0.0, 0.0, 1.0, 0.0, 5e-4, 120000, 100, 100, 0.0, 0.0)
    _, s_ref, v_ref = BACKENDS["python"].sim_run(*args)
    _, s_out, v_out = BACKENDS["cython"].sim_run(*args)
    assert s_ref == s_out > 0
    assert v_out == pytest.approx(v_ref)


def test_environment_forces_the_fallback():
    env = dict(os.environ, SIGMASTAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from sigmastab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
