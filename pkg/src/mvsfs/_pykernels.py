"""Pure NumPy implementations of the hot kernels.

These are the reference versions; :mod:`mvsfs._kernels` (Cython) runs the
same algorithms pixel by pixel.  See :mod:`mvsfs.kernels` for the
interface.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .shading import residual_terms

MIN_STEP = 1e-12
_MAX_SHIFTS = 60


def coupling_objective(t, zc, mult3, beta_z, alpha, gamma, lam):
    """Depth part of the per-pixel objective.

    The consistency term ``lam/2 (alpha e^{2t} - 2 gamma e^t)`` is written
    as ``lam/2 alpha (e^t - gamma/alpha)^2`` (a constant apart), which
    avoids cancellation when depths are large.
    """
    e = np.exp(t)
    safe = np.where(alpha > 0, alpha, 1.0)
    c = np.where(alpha > 0, 0.5 * lam * alpha * (e - gamma / safe) ** 2, 0.0)
    return 0.5 * beta_z * (zc - t) ** 2 - mult3 * t + c


def coupling_derivatives(t, zc, mult3, beta_z, alpha, gamma, lam):
    """First and second derivatives of :func:`coupling_objective`."""
    e = np.exp(t)
    d1 = -beta_z * (zc - t) - mult3 + lam * (alpha * e * e - gamma * e)
    d2 = beta_z + lam * (2.0 * alpha * e * e - gamma * e)
    return d1, d2


def data_objective(theta, g, mult, beta, xt, yt, f, rho, I, L):
    """Gradient part of the per-pixel objective."""
    r = residual_terms(theta, g, xt, yt, f, rho, I, L, order=0)
    return (np.sum(r * r, axis=1) - np.sum(mult * theta, axis=1)
            + 0.5 * beta * np.sum((g - theta) ** 2, axis=1))


def data_grad_hess(theta, g, mult, beta, xt, yt, f, rho, I, L):
    r, dr, d2r = residual_terms(theta, g, xt, yt, f, rho, I, L, order=2)
    grad = 2 * np.einsum("pc,pci->pi", r, dr) - beta * (g - theta) - mult
    hess = 2 * (np.einsum("pci,pcj->pij", dr, dr) + np.einsum("pc,pcij->pij", r, d2r))
    hess[:, 0, 0] += beta
    hess[:, 1, 1] += beta
    return grad, hess


def pixel_objective(theta, g, zc, mult, beta, beta_z, xt, yt, f, rho, I, L, alpha, gamma, lam):
    """Per-pixel theta-subproblem objective (constants dropped)."""
    F = data_objective(theta[:, :2], g, mult[:, :2], beta, xt, yt, f, rho, I, L)
    if theta.shape[1] == 3:
        F = F + coupling_objective(theta[:, 2], zc, mult[:, 2], beta_z, alpha, gamma, lam)
    return F


def pixel_grad_hess(theta, g, zc, mult, beta, beta_z, xt, yt, f, rho, I, L, alpha, gamma, lam):
    """Gradient ``(P, k)`` and Hessian ``(P, k, k)`` of :func:`pixel_objective`."""
    k = theta.shape[1]
    grad = np.zeros(theta.shape)
    hess = np.zeros(theta.shape + (k,))
    grad[:, :2], hess[:, :2, :2] = data_grad_hess(
        theta[:, :2], g, mult[:, :2], beta, xt, yt, f, rho, I, L)
    if k == 3:
        grad[:, 2], hess[:, 2, 2] = coupling_derivatives(
            theta[:, 2], zc, mult[:, 2], beta_z, alpha, gamma, lam)
    return grad, hess


def scaled_gradient_norm(grad, f):
    """Gradient norm in ``f``-scaled coordinates ``(f theta1, f theta2[, theta3])``."""
    sq = (grad[:, 0] ** 2 + grad[:, 1] ** 2) / (f * f)
    if grad.shape[1] == 3:
        sq += grad[:, 2] ** 2
    return np.sqrt(sq)


def _is_pd(H):
    ok = H[:, 0, 0] > 0
    if H.shape[-1] > 1:
        ok &= H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0] > 0
    return ok


def _levenberg(H):
    """Shift each Hessian by a multiple of the identity until it is positive definite."""
    H = H.copy()
    k = H.shape[-1]
    eye = np.eye(k)
    bad = ~_is_pd(H)
    if not bad.any():
        return H
    scale = 1.0 + np.abs(np.diagonal(H, axis1=1, axis2=2)).max(axis=1)
    shift = 1e-8 * scale
    base = H.copy()
    for _ in range(_MAX_SHIFTS):
        if not bad.any():
            break
        H[bad] = base[bad] + shift[bad, None, None] * eye
        bad = ~_is_pd(H)
        shift[bad] *= 10.0
    return H


def _damped_newton(x0, objective, derivatives, gnorm_of, tol, maxit):
    """Vectorized safeguarded Newton on independent small problems.

    ``objective(x, idx)`` and ``derivatives(x, idx)`` evaluate the problems
    listed in ``idx``; ``x`` is ``(P, k)``.  Returns ``(x, converged)``.
    """
    x = x0.copy()
    P = x.shape[0]
    F = objective(x, np.arange(P))
    active = np.isfinite(F)
    converged = np.zeros(P, dtype=bool)
    for _ in range(maxit):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        grad, hess = derivatives(x[idx], idx)
        done = gnorm_of(grad) <= tol
        converged[idx[done]] = True
        active[idx[done]] = False
        keep = ~done
        idx, grad, hess = idx[keep], grad[keep], hess[keep]
        if len(idx) == 0:
            break
        hess = _levenberg(hess)
        step = -np.linalg.solve(hess, grad[..., None])[..., 0]
        t = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        pending = np.arange(len(idx))
        while len(pending):
            cand = x[idx[pending]] + t[pending, None] * step[pending]
            Fn = objective(cand, idx[pending])
            ok = np.isfinite(Fn) & (Fn < F[idx[pending]])
            hit = pending[ok]
            x[idx[hit]] = cand[ok]
            F[idx[hit]] = Fn[ok]
            accepted[hit] = True
            pending = pending[~ok]
            t[pending] *= 0.5
            pending = pending[t[pending] >= MIN_STEP]
        active[idx[~accepted]] = False
    return x, converged


def theta_newton(theta0, g, zc, mult, beta, beta_z, xt, yt, f, rho, I, L, alpha, gamma, lam, tol, maxit):
    """Safeguarded Newton on every pixel.

    The objective separates into a gradient block (data term and penalty)
    and, with three columns, a depth block (penalty and consistency term);
    each block is minimized with its own step acceptance.

    Returns ``(theta, n_unconverged, n_fallback)``.  The objective at the
    returned point never exceeds its value at ``theta0``; pixels whose
    iterate turns non-finite are reset to ``theta0`` and counted in
    ``n_fallback``.
    """
    theta0 = np.array(theta0, dtype=float)
    m2 = mult[:, :2]

    def obj2(x, idx):
        return data_objective(x, g[idx], m2[idx], beta, xt[idx], yt[idx], f, rho[idx], I[idx], L)

    def der2(x, idx):
        return data_grad_hess(x, g[idx], m2[idx], beta, xt[idx], yt[idx], f, rho[idx], I[idx], L)

    theta = theta0.copy()
    theta[:, :2], conv = _damped_newton(
        theta0[:, :2], obj2, der2, lambda gr: np.hypot(gr[:, 0], gr[:, 1]) / f, tol, maxit)
    if theta0.shape[1] == 3:
        m3 = mult[:, 2]

        def obj3(x, idx):
            return coupling_objective(x[:, 0], zc[idx], m3[idx], beta_z, alpha[idx], gamma[idx], lam)

        def der3(x, idx):
            d1, d2 = coupling_derivatives(x[:, 0], zc[idx], m3[idx], beta_z, alpha[idx], gamma[idx], lam)
            return d1[:, None], d2[:, None, None]

        t3, conv3 = _damped_newton(theta0[:, 2:], obj3, der3, lambda gr: np.abs(gr[:, 0]), tol, maxit)
        theta[:, 2] = t3[:, 0]
        conv &= conv3
    bad = ~np.all(np.isfinite(theta), axis=1)
    theta[bad] = theta0[bad]
    return theta, int(np.sum(~conv)), int(np.sum(bad))


def pcg(indptr, indices, data, b, x0, tol, maxit):
    """Jacobi-preconditioned CG on a symmetric CSR matrix.

    Returns ``(x, iterations, relative_residual)`` with the residual
    measured as ``|M x - b| / |b|`` (absolute if ``b`` is zero).
    """
    n = len(b)
    M = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    diag = M.diagonal()
    dinv = np.zeros(n)
    nz = diag > 0
    dinv[nz] = 1.0 / diag[nz]
    bnorm = np.linalg.norm(b)
    ref = bnorm if bnorm > 0 else 1.0
    x = np.array(x0, dtype=float)
    r = b - M @ x
    rn = np.linalg.norm(r)
    it = 0
    if rn / ref <= tol:
        return x, 0, rn / ref
    zv = dinv * r
    p = zv.copy()
    rz = r @ zv
    while it < maxit:
        q = M @ p
        pq = p @ q
        if pq <= 0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        it += 1
        rn = np.linalg.norm(r)
        if rn / ref <= tol:
            break
        zv = dinv * r
        rz_new = r @ zv
        p = zv + (rz_new / rz) * p
        rz = rz_new
    rn = np.linalg.norm(b - M @ x)
    return x, it, rn / ref
