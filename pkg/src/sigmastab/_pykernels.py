"""Pure-Python/numpy implementations of the hot kernels.

Mirrors ``_ckernels.pyx`` function for function; selected automatically when
the compiled extension is unavailable.
"""
import math

import numpy as np

# Column layout of the simulation record.
COLUMNS = ("x", "xi", "u0", "u1", "y0", "y1",
           "s_plus_0", "s_minus_0", "s_plus_1", "s_minus_1",
           "mu_0", "upsilon_0", "mu_1", "upsilon_1")
NCOL = len(COLUMNS)

BLOWUP = 1e12


def qp_eval(delays, coeffs, s):
    """Evaluate sum_k poly_k(s) exp(-delay_k s) at every point of ``s``.

    ``coeffs`` is (n_terms, n_coeffs), ascending powers, zero padded.
    """
    s = np.asarray(s, dtype=complex)
    out = np.zeros(s.shape, dtype=complex)
    for k in range(delays.shape[0]):
        row = coeffs[k]
        acc = np.full(s.shape, row[-1], dtype=complex)
        for c in row[-2::-1]:
            acc = acc * s + c
        if delays[k] != 0.0:
            acc *= np.exp(-delays[k] * s)
        out += acc
    return out


def _signals(mode, a, b, kp, ki, d, yref, x, xi, fwd_out, ret_out, fwd_direct, ret_direct):
    """All loop signals at one instant.

    ``fwd_out``/``ret_out`` are the delayed channel outputs; a ``*_direct``
    flag means that direction has zero delay and its output equals the
    input produced in this same instant.
    Returns (record tuple, fwd_in, ret_in).
    """
    s0p = s0m = s1p = s1m = mu0 = up0 = mu1 = up1 = 0.0
    if mode == 0:
        ret_in = x
        if ret_direct:
            ret_out = ret_in
        u0 = ret_out - yref
        y0 = kp * u0 + ki * xi
        fwd_in = y0
        if fwd_direct:
            fwd_out = fwd_in
        u1 = -fwd_out
        return (x, xi, u0, u1, y0, x, s0p, s0m, s1p, s1m, mu0, up0, mu1, up1), fwd_in, ret_in

    if fwd_direct:
        # controller side first, return line must be buffered
        s0m = ret_out
        u0 = -(ki * xi + s0m + d * yref) / (d + kp)
        y0 = kp * u0 + ki * xi
        mu0 = -y0
        up0 = (mu0 - s0m) / d
        s0p = 2.0 * mu0 - s0m
        fwd_in = s0p
        s1p = fwd_in
        up1 = x
        mu1 = -d * x + s1p
        s1m = -2.0 * d * x + s1p
        ret_in = s1m
    else:
        s1p = fwd_out
        up1 = x
        mu1 = -d * x + s1p
        s1m = -2.0 * d * x + s1p
        ret_in = s1m
        if ret_direct:
            ret_out = ret_in
        s0m = ret_out
        u0 = -(ki * xi + s0m + d * yref) / (d + kp)
        y0 = kp * u0 + ki * xi
        mu0 = -y0
        up0 = (mu0 - s0m) / d
        s0p = 2.0 * mu0 - s0m
        fwd_in = s0p
    u1 = mu1
    return (x, xi, u0, u1, y0, x, s0p, s0m, s1p, s1m, mu0, up0, mu1, up1), fwd_in, ret_in


def sim_run(mode, a, b, kp, ki, d, yref, x0, xi0, dt, n_steps, m1, m2, hist_fwd, hist_ret):
    """Fixed-step RK4 on (x, xi) with exact delay-grid lookups.

    Channel inputs are stored as right limits, left limits and midpoint
    values at every grid point so that each RK stage reads the delayed
    signal on the correct side of any propagated discontinuity. Midpoint
    states come from cubic Hermite dense output.

    Returns ``(record, blowup_step, blowup_value)``; ``blowup_step`` is -1
    when the run completed.
    """
    n = int(n_steps)
    rec = np.zeros((n + 1, NCOL))
    fR = [0.0] * (n + 1)
    fL = [0.0] * (n + 1)
    fM = [0.0] * (n + 1)
    rR = [0.0] * (n + 1)
    rL = [0.0] * (n + 1)
    rM = [0.0] * (n + 1)
    fd = m1 == 0
    rd = m2 == 0

    def rd_R(buf, j, hist):
        return hist if j < 0 else buf[j]

    def rd_L(buf, j, hist):
        return hist if j <= 0 else buf[j]

    x, xi = float(x0), float(xi0)
    half = 0.5 * dt
    for k in range(n + 1):
        # right limit at t_k
        fo = 0.0 if fd else rd_R(fR, k - m1, hist_fwd)
        ro = 0.0 if rd else rd_R(rR, k - m2, hist_ret)
        sig, fin, rin = _signals(mode, a, b, kp, ki, d, yref, x, xi, fo, ro, fd, rd)
        fR[k] = fin
        rR[k] = rin
        rec[k] = sig
        if not (abs(x) <= BLOWUP):
            return rec[: k + 1], k, abs(x)
        if k == n:
            break
        k1x = -a * x + b * sig[3]
        k1i = sig[2]

        fo = 0.0 if fd else rd_R(fM, k - m1, hist_fwd)
        ro = 0.0 if rd else rd_R(rM, k - m2, hist_ret)
        sig, _, _ = _signals(mode, a, b, kp, ki, d, yref, x + half * k1x, xi + half * k1i,
                             fo, ro, fd, rd)
        k2x = -a * sig[0] + b * sig[3]
        k2i = sig[2]
        sig, _, _ = _signals(mode, a, b, kp, ki, d, yref, x + half * k2x, xi + half * k2i,
                             fo, ro, fd, rd)
        k3x = -a * sig[0] + b * sig[3]
        k3i = sig[2]

        fo = 0.0 if fd else rd_L(fL, k + 1 - m1, hist_fwd)
        ro = 0.0 if rd else rd_L(rL, k + 1 - m2, hist_ret)
        sig, _, _ = _signals(mode, a, b, kp, ki, d, yref, x + dt * k3x, xi + dt * k3i,
                             fo, ro, fd, rd)
        k4x = -a * sig[0] + b * sig[3]
        k4i = sig[2]

        xn = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        xin = xi + dt / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i)

        # left limit at t_{k+1}
        sig, fin, rin = _signals(mode, a, b, kp, ki, d, yref, xn, xin, fo, ro, fd, rd)
        fL[k + 1] = fin
        rL[k + 1] = rin
        fLx = -a * xn + b * sig[3]
        fLi = sig[2]

        # midpoint via Hermite dense output
        xm = 0.5 * (x + xn) + dt / 8.0 * (k1x - fLx)
        xim = 0.5 * (xi + xin) + dt / 8.0 * (k1i - fLi)
        fo = 0.0 if fd else rd_R(fM, k - m1, hist_fwd)
        ro = 0.0 if rd else rd_R(rM, k - m2, hist_ret)
        _, fin, rin = _signals(mode, a, b, kp, ki, d, yref, xm, xim, fo, ro, fd, rd)
        fM[k] = fin
        rM[k] = rin

        x, xi = xn, xin
        if not math.isfinite(x):
            return rec[: k + 1], k + 1, math.inf
    return rec, -1, 0.0
