# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Same signatures, same return values; see the Python module for the
algorithmic notes.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite, exp, cos, sin, INFINITY

cnp.import_array()

cdef double BLOWUP = 1e12
DEF NCOL = 14


def qp_eval(double[::1] delays, double[:, ::1] coeffs, s):
    shape = np.shape(s)
    s_arr = np.ascontiguousarray(np.asarray(s, dtype=np.complex128))
    cdef double complex[::1] sv = s_arr.reshape(-1)
    cdef Py_ssize_t npts = sv.shape[0]
    cdef Py_ssize_t nt = delays.shape[0]
    cdef Py_ssize_t nc = coeffs.shape[1]
    out = np.empty(npts, dtype=np.complex128)
    cdef double complex[::1] ov = out
    cdef Py_ssize_t i, k, j
    cdef double complex z, acc, total, e
    cdef double tau, mag, ph
    for i in range(npts):
        z = sv[i]
        total = 0
        for k in range(nt):
            acc = coeffs[k, nc - 1]
            for j in range(nc - 2, -1, -1):
                acc = acc * z + coeffs[k, j]
            tau = delays[k]
            if tau != 0.0:
                mag = exp(-tau * z.real)
                ph = -tau * z.imag
                e = mag * cos(ph) + 1j * (mag * sin(ph))
                acc = acc * e
            total = total + acc
        ov[i] = total
    return out.reshape(shape)


cdef struct Sig:
    double v[NCOL]
    double fwd_in
    double ret_in


cdef inline void _signals(int mode, double kp, double ki, double d, double yref,
                          double x, double xi, double fwd_out, double ret_out,
                          bint fwd_direct, bint ret_direct, Sig* o) nogil:
    cdef double u0, u1, y0
    cdef double s0p = 0.0, s0m = 0.0, s1p = 0.0, s1m = 0.0
    cdef double mu0 = 0.0, up0 = 0.0, mu1 = 0.0, up1 = 0.0
    if mode == 0:
        o.ret_in = x
        if ret_direct:
            ret_out = x
        u0 = ret_out - yref
        y0 = kp * u0 + ki * xi
        o.fwd_in = y0
        if fwd_direct:
            fwd_out = y0
        u1 = -fwd_out
    elif fwd_direct:
        s0m = ret_out
        u0 = -(ki * xi + s0m + d * yref) / (d + kp)
        y0 = kp * u0 + ki * xi
        mu0 = -y0
        up0 = (mu0 - s0m) / d
        s0p = 2.0 * mu0 - s0m
        o.fwd_in = s0p
        s1p = s0p
        up1 = x
        mu1 = -d * x + s1p
        s1m = -2.0 * d * x + s1p
        o.ret_in = s1m
        u1 = mu1
    else:
        s1p = fwd_out
        up1 = x
        mu1 = -d * x + s1p
        s1m = -2.0 * d * x + s1p
        o.ret_in = s1m
        if ret_direct:
            ret_out = s1m
        s0m = ret_out
        u0 = -(ki * xi + s0m + d * yref) / (d + kp)
        y0 = kp * u0 + ki * xi
        mu0 = -y0
        up0 = (mu0 - s0m) / d
        s0p = 2.0 * mu0 - s0m
        o.fwd_in = s0p
        u1 = mu1
    o.v[0] = x
    o.v[1] = xi
    o.v[2] = u0
    o.v[3] = u1
    o.v[4] = y0
    o.v[5] = x
    o.v[6] = s0p
    o.v[7] = s0m
    o.v[8] = s1p
    o.v[9] = s1m
    o.v[10] = mu0
    o.v[11] = up0
    o.v[12] = mu1
    o.v[13] = up1


cdef inline double _rdR(double[::1] buf, Py_ssize_t j, double hist) nogil:
    if j < 0:
        return hist
    return buf[j]


cdef inline double _rdL(double[::1] buf, Py_ssize_t j, double hist) nogil:
    if j <= 0:
        return hist
    return buf[j]


def sim_run(int mode, double a, double b, double kp, double ki, double d, double yref,
            double x0, double xi0, double dt, Py_ssize_t n_steps, Py_ssize_t m1, Py_ssize_t m2,
            double hist_fwd, double hist_ret):
    cdef Py_ssize_t n = n_steps
    rec_arr = np.zeros((n + 1, NCOL))
    cdef double[:, ::1] rec = rec_arr
    fR_a = np.zeros(n + 1); fL_a = np.zeros(n + 1); fM_a = np.zeros(n + 1)
    rR_a = np.zeros(n + 1); rL_a = np.zeros(n + 1); rM_a = np.zeros(n + 1)
    cdef double[::1] fR = fR_a, fL = fL_a, fM = fM_a, rR = rR_a, rL = rL_a, rM = rM_a
    cdef bint fd = m1 == 0
    cdef bint rd = m2 == 0
    cdef double x = x0, xi = xi0, half = 0.5 * dt
    cdef double fo, ro, k1x, k1i, k2x, k2i, k3x, k3i, k4x, k4i, xn, xin, fLx, fLi, xm, xim
    cdef Sig sg
    cdef Py_ssize_t k, c
    cdef Py_ssize_t status = -1
    cdef Py_ssize_t nrows = n + 1
    cdef double status_value = 0.0
    with nogil:
        for k in range(n + 1):
            fo = 0.0 if fd else _rdR(fR, k - m1, hist_fwd)
            ro = 0.0 if rd else _rdR(rR, k - m2, hist_ret)
            _signals(mode, kp, ki, d, yref, x, xi, fo, ro, fd, rd, &sg)
            fR[k] = sg.fwd_in
            rR[k] = sg.ret_in
            for c in range(NCOL):
                rec[k, c] = sg.v[c]
            if not (fabs(x) <= BLOWUP):
                status = k
                nrows = k + 1
                status_value = fabs(x)
                break
            if k == n:
                break
            k1x = -a * x + b * sg.v[3]
            k1i = sg.v[2]

            fo = 0.0 if fd else _rdR(fM, k - m1, hist_fwd)
            ro = 0.0 if rd else _rdR(rM, k - m2, hist_ret)
            _signals(mode, kp, ki, d, yref, x + half * k1x, xi + half * k1i, fo, ro, fd, rd, &sg)
            k2x = -a * sg.v[0] + b * sg.v[3]
            k2i = sg.v[2]
            _signals(mode, kp, ki, d, yref, x + half * k2x, xi + half * k2i, fo, ro, fd, rd, &sg)
            k3x = -a * sg.v[0] + b * sg.v[3]
            k3i = sg.v[2]

            fo = 0.0 if fd else _rdL(fL, k + 1 - m1, hist_fwd)
            ro = 0.0 if rd else _rdL(rL, k + 1 - m2, hist_ret)
            _signals(mode, kp, ki, d, yref, x + dt * k3x, xi + dt * k3i, fo, ro, fd, rd, &sg)
            k4x = -a * sg.v[0] + b * sg.v[3]
            k4i = sg.v[2]

            xn = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            xin = xi + dt / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i)

            _signals(mode, kp, ki, d, yref, xn, xin, fo, ro, fd, rd, &sg)
            fL[k + 1] = sg.fwd_in
            rL[k + 1] = sg.ret_in
            fLx = -a * xn + b * sg.v[3]
            fLi = sg.v[2]

            xm = 0.5 * (x + xn) + dt / 8.0 * (k1x - fLx)
            xim = 0.5 * (xi + xin) + dt / 8.0 * (k1i - fLi)
            fo = 0.0 if fd else _rdR(fM, k - m1, hist_fwd)
            ro = 0.0 if rd else _rdR(rM, k - m2, hist_ret)
            _signals(mode, kp, ki, d, yref, xm, xim, fo, ro, fd, rd, &sg)
            fM[k] = sg.fwd_in
            rM[k] = sg.ret_in

            x = xn
            xi = xin
            if not isfinite(x):
                status = k + 1
                nrows = k + 1
                status_value = INFINITY
                break
    if status >= 0:
        return rec_arr[:nrows], status, status_value
    return rec_arr, -1, 0.0
