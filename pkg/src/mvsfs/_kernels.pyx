# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: per-pixel theta Newton and Jacobi PCG.

Same algorithms and interface as :mod:`mvsfs._pykernels`, evaluated pixel
by pixel without temporaries.
"""

import numpy as np

from libc.math cimport exp, fabs, isfinite, sqrt

cdef double EPS_D = 1e-9
cdef double MIN_STEP = 1e-12
cdef int MAX_SHIFTS = 60


cdef struct Pixel:
    double xt
    double yt
    double g0
    double g1
    double m0
    double m1


cdef double data_eval(double t0, double t1, Pixel *px, double f, double beta,
                      double[:, ::1] L, double[:, ::1] rho, double[:, ::1] I, Py_ssize_t p,
                      int order, double *grad, double *hess) noexcept nogil:
    """Objective of the gradient block; fills ``grad``/``hess`` when ``order == 2``."""
    cdef Py_ssize_t c, C = L.shape[0]
    cdef double xt = px.xt, yt = px.yt
    cdef double u0 = f * t0, u1 = f * t1, u2 = -1.0 - xt * t0 - yt * t1
    cdef double s = u0 * u0 + u1 * u1 + u2 * u2
    if s < EPS_D * EPS_D:
        s = EPS_D * EPS_D
    cdef double phi = 1.0 / sqrt(s)
    cdef double F = 0.0
    cdef double l1, l2, l3, l4, l5, l6, l7, l8, l9, rc, P, Q
    cdef double S00, S11, S22, S01, S02, S12, Su0, Su1, Su2
    # J^T u, J^T J and derivatives of 1/d
    cdef double a0 = 0.0, a1 = 0.0, j00 = 0.0, j01 = 0.0, j11 = 0.0
    cdef double dphi0 = 0.0, dphi1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0
    cdef double p3, p5, dQ0, dQ1, ds0, ds1, dq20, dq21, dr0, dr1
    cdef double JSJ00, JSJ01, JSJ11, d200, d201, d211, s2, s3
    cdef double G0 = 0.0, G1 = 0.0, H00 = 0.0, H01 = 0.0, H11 = 0.0
    if order == 2:
        a0 = f * u0 - xt * u2
        a1 = f * u1 - yt * u2
        j00 = f * f + xt * xt
        j01 = xt * yt
        j11 = f * f + yt * yt
        p3 = phi * phi * phi
        p5 = p3 * phi * phi
        dphi0 = -p3 * a0
        dphi1 = -p3 * a1
        h00 = -p3 * j00 + 3.0 * p5 * a0 * a0
        h01 = -p3 * j01 + 3.0 * p5 * a0 * a1
        h11 = -p3 * j11 + 3.0 * p5 * a1 * a1
    for c in range(C):
        l1 = L[c, 0]; l2 = L[c, 1]; l3 = L[c, 2]; l4 = L[c, 3]; l5 = L[c, 4]
        l6 = L[c, 5]; l7 = L[c, 6]; l8 = L[c, 7]; l9 = L[c, 8]
        S00 = l8; S11 = -l8; S22 = 3.0 * l9
        S01 = 0.5 * l5; S02 = 0.5 * l6; S12 = 0.5 * l7
        Su0 = S00 * u0 + S01 * u1 + S02 * u2
        Su1 = S01 * u0 + S11 * u1 + S12 * u2
        Su2 = S02 * u0 + S12 * u1 + S22 * u2
        Q = u0 * Su0 + u1 * Su1 + u2 * Su2
        P = (f * l1 - xt * l3) * px.g0 + (f * l2 - yt * l3) * px.g1 - l3
        rc = rho[p, c] * (P * phi + Q / s + l4 - l9) - I[p, c]
        F += rc * rc
        if order == 2:
            s2 = s * s
            s3 = s2 * s
            ds0 = 2.0 * a0
            ds1 = 2.0 * a1
            dQ0 = 2.0 * (f * Su0 - xt * Su2)
            dQ1 = 2.0 * (f * Su1 - yt * Su2)
            dq20 = dQ0 / s - Q * ds0 / s2
            dq21 = dQ1 / s - Q * ds1 / s2
            dr0 = rho[p, c] * (P * dphi0 + dq20)
            dr1 = rho[p, c] * (P * dphi1 + dq21)
            # J^T S J
            JSJ00 = f * f * S00 - 2.0 * f * xt * S02 + xt * xt * S22
            JSJ01 = f * f * S01 - f * yt * S02 - f * xt * S12 + xt * yt * S22
            JSJ11 = f * f * S11 - 2.0 * f * yt * S12 + yt * yt * S22
            d200 = (2.0 * JSJ00 / s - 2.0 * dQ0 * ds0 / s2 - Q * 2.0 * j00 / s2
                    + 2.0 * Q * ds0 * ds0 / s3)
            d201 = (2.0 * JSJ01 / s - (dQ0 * ds1 + dQ1 * ds0) / s2 - Q * 2.0 * j01 / s2
                    + 2.0 * Q * ds0 * ds1 / s3)
            d211 = (2.0 * JSJ11 / s - 2.0 * dQ1 * ds1 / s2 - Q * 2.0 * j11 / s2
                    + 2.0 * Q * ds1 * ds1 / s3)
            G0 += 2.0 * rc * dr0
            G1 += 2.0 * rc * dr1
            H00 += 2.0 * (dr0 * dr0 + rc * rho[p, c] * (P * h00 + d200))
            H01 += 2.0 * (dr0 * dr1 + rc * rho[p, c] * (P * h01 + d201))
            H11 += 2.0 * (dr1 * dr1 + rc * rho[p, c] * (P * h11 + d211))
    F += -px.m0 * t0 - px.m1 * t1
    F += 0.5 * beta * ((px.g0 - t0) * (px.g0 - t0) + (px.g1 - t1) * (px.g1 - t1))
    if order == 2:
        grad[0] = G0 - beta * (px.g0 - t0) - px.m0
        grad[1] = G1 - beta * (px.g1 - t1) - px.m1
        hess[0] = H00 + beta
        hess[1] = H01
        hess[2] = H11 + beta
    return F


cdef inline bint pd2(double a, double b, double d) noexcept nogil:
    return a > 0 and a * d - b * b > 0


cdef bint newton2(double *t, Pixel *px, double f, double beta, double[:, ::1] L,
                  double[:, ::1] rho, double[:, ::1] I, Py_ssize_t p, double tol,
                  int maxit) noexcept nogil:
    """Damped Newton on one pixel's gradient block; returns convergence."""
    cdef double grad[2]
    cdef double hess[3]
    cdef double F, Fn, a, b, d, shift, det, s0, s1, step, c0, c1, scale
    cdef int it, k
    cdef bint ok
    F = data_eval(t[0], t[1], px, f, beta, L, rho, I, p, 0, grad, hess)
    if not isfinite(F):
        return False
    for it in range(maxit):
        data_eval(t[0], t[1], px, f, beta, L, rho, I, p, 2, grad, hess)
        if sqrt(grad[0] * grad[0] + grad[1] * grad[1]) / f <= tol:
            return True
        a = hess[0]; b = hess[1]; d = hess[2]
        if not pd2(a, b, d):
            scale = 1.0 + (fabs(a) if fabs(a) > fabs(d) else fabs(d))
            shift = 1e-8 * scale
            for k in range(MAX_SHIFTS):
                a = hess[0] + shift
                d = hess[2] + shift
                if pd2(a, b, d):
                    break
                shift *= 10.0
        det = a * d - b * b
        s0 = -(d * grad[0] - b * grad[1]) / det
        s1 = -(a * grad[1] - b * grad[0]) / det
        step = 1.0
        ok = False
        while step >= MIN_STEP:
            c0 = t[0] + step * s0
            c1 = t[1] + step * s1
            Fn = data_eval(c0, c1, px, f, beta, L, rho, I, p, 0, grad, hess)
            if isfinite(Fn) and Fn < F:
                t[0] = c0
                t[1] = c1
                F = Fn
                ok = True
                break
            step *= 0.5
        if not ok:
            return False
    return False


cdef inline double depth_eval(double t, double zc, double m3, double beta_z, double alpha,
                              double gamma, double lam) noexcept nogil:
    cdef double e = exp(t)
    cdef double F = 0.5 * beta_z * (zc - t) * (zc - t) - m3 * t
    if alpha > 0:
        F += 0.5 * lam * alpha * (e - gamma / alpha) * (e - gamma / alpha)
    return F


cdef bint newton1(double *t, double zc, double m3, double beta_z, double alpha, double gamma,
                  double lam, double tol, int maxit) noexcept nogil:
    """Damped Newton on one pixel's depth block; returns convergence."""
    cdef double F, Fn, e, d1, d2, base, shift, step, cand
    cdef int it, k
    cdef bint ok
    F = depth_eval(t[0], zc, m3, beta_z, alpha, gamma, lam)
    if not isfinite(F):
        return False
    for it in range(maxit):
        e = exp(t[0])
        d1 = -beta_z * (zc - t[0]) - m3 + lam * (alpha * e * e - gamma * e)
        if fabs(d1) <= tol:
            return True
        d2 = beta_z + lam * (2.0 * alpha * e * e - gamma * e)
        if not d2 > 0:
            base = d2
            shift = 1e-8 * (1.0 + fabs(d2))
            for k in range(MAX_SHIFTS):
                d2 = base + shift
                if d2 > 0:
                    break
                shift *= 10.0
        step = 1.0
        ok = False
        while step >= MIN_STEP:
            cand = t[0] - step * d1 / d2
            Fn = depth_eval(cand, zc, m3, beta_z, alpha, gamma, lam)
            if isfinite(Fn) and Fn < F:
                t[0] = cand
                F = Fn
                ok = True
                break
            step *= 0.5
        if not ok:
            return False
    return False


def theta_newton(theta0, g, zc, mult, double beta, double beta_z, xt, yt, double f, rho, I, L,
                 alpha, gamma, double lam, double tol, int maxit):
    """Safeguarded Newton on every pixel; see :func:`mvsfs._pykernels.theta_newton`."""
    cdef double[:, ::1] th0 = np.ascontiguousarray(theta0, dtype=float)
    cdef Py_ssize_t P = th0.shape[0], k = th0.shape[1]
    out = np.array(th0, dtype=float, order="C")
    cdef double[:, ::1] th = out
    cdef double[:, ::1] gv = np.ascontiguousarray(g, dtype=float)
    cdef double[:, ::1] mv = np.ascontiguousarray(mult, dtype=float)
    cdef double[::1] xv = np.ascontiguousarray(xt, dtype=float)
    cdef double[::1] yv = np.ascontiguousarray(yt, dtype=float)
    cdef double[:, ::1] rv = np.ascontiguousarray(rho, dtype=float)
    cdef double[:, ::1] Iv = np.ascontiguousarray(I, dtype=float)
    cdef double[:, ::1] Lv = np.ascontiguousarray(L, dtype=float)
    cdef double[::1] zv, av, gmv
    if k == 3:
        zv = np.ascontiguousarray(zc, dtype=float)
        av = np.ascontiguousarray(alpha, dtype=float)
        gmv = np.ascontiguousarray(gamma, dtype=float)
    cdef Py_ssize_t p
    cdef Pixel px
    cdef double t[2]
    cdef double t3
    cdef bint conv
    cdef long n_unconv = 0, n_bad = 0
    with nogil:
        for p in range(P):
            px.xt = xv[p]; px.yt = yv[p]
            px.g0 = gv[p, 0]; px.g1 = gv[p, 1]
            px.m0 = mv[p, 0]; px.m1 = mv[p, 1]
            t[0] = th[p, 0]; t[1] = th[p, 1]
            conv = newton2(t, &px, f, beta, Lv, rv, Iv, p, tol, maxit)
            th[p, 0] = t[0]; th[p, 1] = t[1]
            if k == 3:
                t3 = th[p, 2]
                conv = newton1(&t3, zv[p], mv[p, 2], beta_z, av[p], gmv[p], lam,
                               tol, maxit) and conv
                th[p, 2] = t3
            if not conv:
                n_unconv += 1
            if not (isfinite(th[p, 0]) and isfinite(th[p, 1]) and (k == 2 or isfinite(th[p, 2]))):
                th[p, 0] = th0[p, 0]; th[p, 1] = th0[p, 1]
                if k == 3:
                    th[p, 2] = th0[p, 2]
                n_bad += 1
    return out, int(n_unconv), int(n_bad)


cdef void csr_matvec(long[::1] indptr, long[::1] indices, double[::1] data, double[::1] x,
                     double[::1] y) noexcept nogil:
    cdef Py_ssize_t i, k, n = y.shape[0]
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc


cdef double dot(double[::1] a, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(a.shape[0]):
        acc += a[i] * b[i]
    return acc


def pcg(indptr, indices, data, b, x0, double tol, int maxit):
    """Jacobi-preconditioned CG on a symmetric CSR matrix; see :func:`mvsfs._pykernels.pcg`."""
    cdef long[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef long[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[::1] dv = np.ascontiguousarray(data, dtype=float)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=float)
    cdef Py_ssize_t n = bv.shape[0], i, k
    xo = np.array(x0, dtype=float, order="C")
    cdef double[::1] x = xo
    cdef double[::1] r = np.empty(n), z = np.empty(n), pv = np.empty(n), q = np.empty(n)
    cdef double[::1] dinv = np.zeros(n)
    cdef double bnorm, ref, rn, rz, rz_new, pq, alpha_, beta_
    cdef int it = 0
    with nogil:
        for i in range(n):
            for k in range(ip[i], ip[i + 1]):
                if ix[k] == i and dv[k] > 0:
                    dinv[i] = 1.0 / dv[k]
        bnorm = sqrt(dot(bv, bv))
        ref = bnorm if bnorm > 0 else 1.0
        csr_matvec(ip, ix, dv, x, q)
        for i in range(n):
            r[i] = bv[i] - q[i]
        rn = sqrt(dot(r, r))
        if rn / ref > tol:
            for i in range(n):
                z[i] = dinv[i] * r[i]
                pv[i] = z[i]
            rz = dot(r, z)
            while it < maxit:
                csr_matvec(ip, ix, dv, pv, q)
                pq = dot(pv, q)
                if pq <= 0:
                    break
                alpha_ = rz / pq
                for i in range(n):
                    x[i] += alpha_ * pv[i]
                    r[i] -= alpha_ * q[i]
                it += 1
                rn = sqrt(dot(r, r))
                if rn / ref <= tol:
                    break
                for i in range(n):
                    z[i] = dinv[i] * r[i]
                rz_new = dot(r, z)
                beta_ = rz_new / rz
                for i in range(n):
                    pv[i] = z[i] + beta_ * pv[i]
                rz = rz_new
        csr_matvec(ip, ix, dv, x, q)
        for i in range(n):
            q[i] = bv[i] - q[i]
        rn = sqrt(dot(q, q))
    return xo, it, rn / ref
