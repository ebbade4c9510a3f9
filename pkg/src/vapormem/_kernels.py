"""Compiled time loops for :mod:`vapormem.solver`.

Each batch member is integrated independently so its state stays in cache.
The arithmetic mirrors ``Medium.step`` / ``Medium.adjoint_step`` exactly;
tests compare the two routes.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _coupling(y, om, u, wc1, wc2, icg1, icg2, b1, b2, kf, out, e, s):
    n_v = y.shape[1]
    n_z = y.shape[2]
    for z in range(n_z):
        acc = 0j
        for v in range(n_v):
            acc += wc1[v] * y[0, v, z] + wc2[v] * y[1, v, z]
        s[z] = acc
    for z in range(n_z):
        acc = u
        for k in range(1, n_z):
            acc += s[k] * kf[k - 1, z]
        e[z] = acc
    hom = 0.5j * om
    hcm = 0.5j * np.conj(om)
    for v in range(n_v):
        for z in range(n_z):
            sp = hom * y[2, v, z]
            out[0, v, z] = icg1 * e[z] + b1 * sp
            out[1, v, z] = icg2 * e[z] + b2 * sp
            out[2, v, z] = hcm * (b1 * y[0, v, z] + b2 * y[1, v, z])


@njit(cache=True)
def _coupling_t(lam, om, icg1, icg2, b1, b2, wc1, wc2, kf, out, eps, sig):
    n_v = lam.shape[1]
    n_z = lam.shape[2]
    du = 0j
    for z in range(n_z):
        a1 = 0j
        a2 = 0j
        for v in range(n_v):
            a1 += lam[0, v, z]
            a2 += lam[1, v, z]
        eps[z] = icg1 * a1 + icg2 * a2
        du += eps[z]
    sig[0] = 0j
    for k in range(1, n_z):
        acc = 0j
        for z in range(n_z):
            acc += eps[z] * kf[k - 1, z]
        sig[k] = acc
    hom = 0.5j * om
    hcm = 0.5j * np.conj(om)
    for v in range(n_v):
        for z in range(n_z):
            sc = hcm * lam[2, v, z]
            out[0, v, z] = wc1[v] * sig[z] + b1 * sc
            out[1, v, z] = wc2[v] * sig[z] + b2 * sc
            out[2, v, z] = hom * (b1 * lam[0, v, z] + b2 * lam[1, v, z])
    return du


@njit(cache=True)
def _absorption(y, loss, quad):
    acc = 0.0
    for c in range(3):
        for v in range(y.shape[1]):
            dens = 0.0
            for z in range(y.shape[2]):
                dens += (y[c, v, z].real ** 2 + y[c, v, z].imag ** 2) * quad[z]
            acc += loss[c, v] * dens
    return acc


@njit(cache=True)
def forward(y0, omega, u, dp, dm, dt, wc1, wc2, icg1, icg2, b1, b2, kf, loss, quad, track):
    """Integrate every member; returns (y_end, field at z=L, absorbed, bad_step)."""
    n_b, n_t = omega.shape
    n_v, n_z = y0.shape[2], y0.shape[3]
    y_end = np.empty_like(y0)
    out = np.empty((n_b, n_t), dtype=np.complex128)
    absorbed = np.zeros(n_b)
    bad = -1
    y = np.empty((3, n_v, n_z), dtype=np.complex128)
    ys = np.empty_like(y)
    c0 = np.empty_like(y)
    c1 = np.empty_like(y)
    e = np.empty(n_z, dtype=np.complex128)
    s = np.empty(n_z, dtype=np.complex128)
    for m in range(n_b):
        y[:] = y0[m]
        rate_prev = _absorption(y, loss, quad) if track else 0.0
        for n in range(n_t - 1):
            _coupling(y, omega[m, n], u[m, n], wc1, wc2, icg1, icg2, b1, b2, kf, c0, e, s)
            out[m, n] = e[n_z - 1]
            if not np.isfinite(e[n_z - 1].real) or not np.isfinite(e[n_z - 1].imag):
                if bad < 0 or n < bad:
                    bad = n
                break
            for c in range(3):
                for v in range(n_v):
                    for z in range(n_z):
                        ys[c, v, z] = dp[c, v] * (dm[c, v] * y[c, v, z] + dt * c0[c, v, z])
            _coupling(ys, omega[m, n + 1], u[m, n + 1], wc1, wc2, icg1, icg2, b1, b2, kf, c1, e, s)
            h = 0.5 * dt
            for c in range(3):
                for v in range(n_v):
                    for z in range(n_z):
                        y[c, v, z] = dp[c, v] * (dm[c, v] * y[c, v, z] + h * (c0[c, v, z] + c1[c, v, z]))
            if track:
                rate = _absorption(y, loss, quad)
                absorbed[m] += h * (rate_prev + rate)
                rate_prev = rate
        _coupling(y, omega[m, n_t - 1], u[m, n_t - 1], wc1, wc2, icg1, icg2, b1, b2, kf, c0, e, s)
        out[m, n_t - 1] = e[n_z - 1]
        y_end[m] = y
    return y_end, out, absorbed, bad


@njit(cache=True)
def adjoint(lam_end, omega, source, dp, dm, dt, wc1, wc2, icg1, icg2, b1, b2, kf):
    """Backward pass for functionals  <lam_end, y_N> + sum_n source_n E(L, t_n).

    Returns (sensitivity to each input sample, cotangent of the initial state).
    """
    n_b, n_t = omega.shape
    n_v, n_z = lam_end.shape[2], lam_end.shape[3]
    h_out = np.zeros((n_b, n_t), dtype=np.complex128)
    lam0 = np.empty_like(lam_end)
    lam = np.empty((3, n_v, n_z), dtype=np.complex128)
    a = np.empty_like(lam)
    tmp = np.empty_like(lam)
    kap = np.empty_like(lam)
    rho = np.empty_like(lam)
    eps = np.empty(n_z, dtype=np.complex128)
    sig = np.empty(n_z, dtype=np.complex128)
    h = 0.5 * dt
    for m in range(n_b):
        lam[:] = lam_end[m]
        _add_output_source(lam, source[m, n_t - 1], wc1, wc2, kf)
        h_out[m, n_t - 1] += source[m, n_t - 1]
        for n in range(n_t - 2, -1, -1):
            for c in range(3):
                for v in range(n_v):
                    for z in range(n_z):
                        a[c, v, z] = dp[c, v] * lam[c, v, z]
                        tmp[c, v, z] = h * a[c, v, z]
            du1 = _coupling_t(tmp, omega[m, n + 1], icg1, icg2, b1, b2, wc1, wc2, kf, kap, eps, sig)
            for c in range(3):
                for v in range(n_v):
                    for z in range(n_z):
                        bb = dp[c, v] * kap[c, v, z]
                        tmp[c, v, z] = h * a[c, v, z] + dt * bb
                        a[c, v, z] = dm[c, v] * (a[c, v, z] + bb)
            du0 = _coupling_t(tmp, omega[m, n], icg1, icg2, b1, b2, wc1, wc2, kf, rho, eps, sig)
            for c in range(3):
                for v in range(n_v):
                    for z in range(n_z):
                        lam[c, v, z] = a[c, v, z] + rho[c, v, z]
            h_out[m, n] += du0 + source[m, n]
            h_out[m, n + 1] += du1
            _add_output_source(lam, source[m, n], wc1, wc2, kf)
        lam0[m] = lam
    return h_out, lam0


@njit(cache=True)
def _add_output_source(lam, coef, wc1, wc2, kf):
    if coef == 0:
        return
    n_v, n_z = lam.shape[1], lam.shape[2]
    for k in range(1, n_z):
        g = coef * kf[k - 1, n_z - 1]
        for v in range(n_v):
            lam[0, v, k] += wc1[v] * g
            lam[1, v, k] += wc2[v] * g
