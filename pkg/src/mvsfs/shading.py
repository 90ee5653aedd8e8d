"""Second-order spherical-harmonics shading and the PDE fields it induces.

Lighting is a ``(C, 9)`` array whose rows multiply the unnormalized basis
``[n1, n2, n3, 1, n1 n2, n1 n3, n2 n3, n1^2 - n2^2, 3 n3^2 - 1]``.

For a gradient surrogate ``theta`` the unnormalized normal is
``u = J theta + e`` with ``J = [[f, 0], [0, f], [-x~, -y~]]`` and
``e = [0, 0, -1]``.  Writing ``s = |u|^2`` and ``Q_c(u) = u^T S_c u`` for the
quadratic part of the basis, the per-channel PDE residual against a
gradient ``g`` is::

    r_c = rho_c * ((m_c . g - l3_c) / sqrt(s) + Q_c(u) / s + l4_c - l9_c) - I_c

with ``m_c = J^T [l1_c, l2_c, l3_c]``.  The fields of the linear form
``a_c . g - b_c`` follow from it, and so do exact first and second
derivatives in ``theta``, all evaluated in closed form below.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyDomain
from .geometry import EPS_D, Intrinsics, normal_from_gradient
from .operators import GradientScheme, MaskDomain


def as_lighting(l) -> np.ndarray:
    """Coerce to a ``(C, 9)`` float array."""
    L = np.atleast_2d(np.asarray(l, dtype=float))
    if L.ndim != 2 or L.shape[1] != 9:
        raise ValueError(f"lighting must have 9 coefficients per channel, got shape {L.shape}")
    if not np.all(np.isfinite(L)):
        raise ValueError("lighting coefficients must be finite")
    return L


def sh_basis(n) -> np.ndarray:
    """Nine basis values for unit normals stacked on the last axis."""
    n = np.asarray(n, dtype=float)
    n1, n2, n3 = n[..., 0], n[..., 1], n[..., 2]
    one = np.ones_like(n1)
    return np.stack(
        [n1, n2, n3, one, n1 * n2, n1 * n3, n2 * n3, n1**2 - n2**2, 3 * n3**2 - 1], axis=-1
    )


def quadratic_forms(L) -> np.ndarray:
    """``(C, 3, 3)`` symmetric matrices ``S_c`` with ``u^T S_c u`` the order-2 basis part."""
    L = as_lighting(L)
    S = np.zeros((L.shape[0], 3, 3))
    S[:, 0, 0] = L[:, 7]
    S[:, 1, 1] = -L[:, 7]
    S[:, 2, 2] = 3 * L[:, 8]
    S[:, 0, 1] = S[:, 1, 0] = L[:, 4] / 2
    S[:, 0, 2] = S[:, 2, 0] = L[:, 5] / 2
    S[:, 1, 2] = S[:, 2, 1] = L[:, 6] / 2
    return S


def _jacobian(xt, yt, f):
    J = np.zeros(np.shape(xt) + (3, 2))
    J[..., 0, 0] = f
    J[..., 1, 1] = f
    J[..., 2, 0] = -xt
    J[..., 2, 1] = -yt
    return J


def _inv_norm_terms(theta, xt, yt, f, order):
    """``u``, ``1/d`` and its first two derivatives in ``theta``."""
    theta = np.asarray(theta, dtype=float)
    J = _jacobian(xt, yt, f)
    u = np.einsum("...ij,...j->...i", J, theta)
    u[..., 2] -= 1.0
    s = np.maximum(np.einsum("...i,...i->...", u, u), EPS_D**2)
    phi = 1.0 / np.sqrt(s)
    out = {"J": J, "u": u, "s": s, "phi": phi}
    if order >= 1:
        Jtu = np.einsum("...ij,...i->...j", J, u)
        out["Jtu"] = Jtu
        out["dphi"] = -(phi**3)[..., None] * Jtu
    if order >= 2:
        JtJ = np.einsum("...ki,...kj->...ij", J, J)
        out["JtJ"] = JtJ
        out["d2phi"] = -(phi**3)[..., None, None] * JtJ + 3 * (phi**5)[..., None, None] * (
            Jtu[..., :, None] * Jtu[..., None, :]
        )
    return out


def residual_terms(theta, g, xt, yt, f, rho, I, L, order=2):
    """Per-channel PDE residual ``a(theta) . g - b(theta)`` and its theta-derivatives.

    Args:
        theta: ``(P, 2)`` gradient surrogates.
        g: ``(P, 2)`` gradients the linear form is applied to.
        xt, yt: ``(P,)`` principal-point offsets (zeros if orthographic).
        f: focal length.
        rho, I: ``(P, C)`` albedo and image.
        L: ``(C, 9)`` lighting.
        order: 0, 1 or 2 derivatives.

    Returns:
        ``r`` of shape ``(P, C)``, plus ``dr`` ``(P, C, 2)`` and ``d2r``
        ``(P, C, 2, 2)`` when requested.
    """
    L = as_lighting(L)
    S = quadratic_forms(L)
    t = _inv_norm_terms(theta, xt, yt, f, order)
    J, u, s, phi = t["J"], t["u"], t["s"], t["phi"]
    m = np.einsum("...ij,ci->...cj", J, L[:, :3])
    P_lin = np.einsum("...cj,...j->...c", m, g) - L[:, 2]
    Su = np.einsum("cij,...j->...ci", S, u)
    Q = np.einsum("...ci,...i->...c", Su, u)
    r = rho * (P_lin * phi[..., None] + Q / s[..., None] + (L[:, 3] - L[:, 8])) - I
    if order == 0:
        return r
    ds = 2 * t["Jtu"]
    dQ = 2 * np.einsum("...ij,...ci->...cj", J, Su)
    dphi2 = dQ / s[..., None, None] - Q[..., None] * ds[..., None, :] / (s**2)[..., None, None]
    dr = rho[..., None] * (P_lin[..., None] * t["dphi"][..., None, :] + dphi2)
    if order == 1:
        return r, dr
    d2s = 2 * t["JtJ"]
    d2Q = 2 * np.einsum("...ki,ckl,...lj->...cij", J, S, J)
    s_ = s[..., None, None, None]
    outer = dQ[..., :, None] * ds[..., None, None, :]
    d2phi2 = (
        d2Q / s_
        - (outer + np.swapaxes(outer, -1, -2)) / s_**2
        - Q[..., None, None] * d2s[..., None, :, :] / s_**2
        + 2 * Q[..., None, None] * (ds[..., :, None] * ds[..., None, :])[..., None, :, :] / s_**3
    )
    d2r = rho[..., None, None] * (P_lin[..., None, None] * t["d2phi"][..., None, :, :] + d2phi2)
    return r, dr, d2r


def field_a(theta, rho, l, intr: Intrinsics, x=0.0, y=0.0):
    """Vector field ``a^c(theta)`` for one channel; returns ``(..., 2)``."""
    l = np.asarray(l, dtype=float).reshape(9)
    xt, yt = intr.offsets(x, y)
    t = _inv_norm_terms(theta, xt, yt, intr.f, 0)
    m = np.einsum("...ij,i->...j", t["J"], l[:3])
    return (np.asarray(rho, dtype=float) * t["phi"])[..., None] * m


def field_b(theta, I, rho, l, intr: Intrinsics, x=0.0, y=0.0):
    """Scalar field ``b^c(theta)`` for one channel."""
    l = np.asarray(l, dtype=float).reshape(9)
    xt, yt = intr.offsets(x, y)
    t = _inv_norm_terms(theta, xt, yt, intr.f, 0)
    S = quadratic_forms(l)[0]
    u, s = t["u"], t["s"]
    Q = np.einsum("...i,ij,...j->...", u, S, u)
    return np.asarray(I, dtype=float) - np.asarray(rho, dtype=float) * (
        -l[2] * t["phi"] + Q / s + (l[3] - l[8])
    )


def field_jacobians(theta, I, rho, l, intr: Intrinsics, x=0.0, y=0.0):
    """Exact ``(da/dtheta, db/dtheta)`` of shapes ``(..., 2, 2)`` and ``(..., 2)``.

    ``da[..., i, j]`` is the derivative of component ``i`` of ``a`` in
    ``theta_j``.  ``I`` does not affect either value; it is accepted for
    symmetry with :func:`field_b`.
    """
    l = np.asarray(l, dtype=float).reshape(9)
    xt, yt = intr.offsets(x, y)
    t = _inv_norm_terms(theta, xt, yt, intr.f, 1)
    rho = np.asarray(rho, dtype=float)
    m = np.einsum("...ij,i->...j", t["J"], l[:3])
    da = rho[..., None, None] * m[..., :, None] * t["dphi"][..., None, :]
    S = quadratic_forms(l)[0]
    u, s = t["u"], t["s"]
    Su = np.einsum("ij,...j->...i", S, u)
    Q = np.einsum("...i,...i->...", Su, u)
    dQ = 2 * np.einsum("...ij,...i->...j", t["J"], Su)
    dphi2 = dQ / s[..., None] - Q[..., None] * 2 * t["Jtu"] / (s**2)[..., None]
    db = -rho[..., None] * (-l[2] * t["dphi"] + dphi2)
    return da, db


def render_pixels(domain: MaskDomain, z, rho, L):
    """Rendered ``(n, C)`` intensities for a pixel vector ``z``."""
    L = as_lighting(L)
    g = domain.gradient(z)
    n = normal_from_gradient(g[:, 0], g[:, 1], domain.intr, domain.xs, domain.ys)
    return rho * (sh_basis(n) @ L.T)


def render(depth, rho, L, intr: Intrinsics, mask, grad=GradientScheme.AVERAGED):
    """Image ``(H, W, C)`` of a depth map; NaN outside the mask.

    ``rho`` may be a scalar, a ``(C,)`` vector or an ``(H, W[, C])`` map.
    Intensities are not clipped.
    """
    L = as_lighting(L)
    domain = MaskDomain.build(mask, intr, grad)
    if domain.Dx.nnz == 0 and domain.Dy.nnz == 0:
        raise EmptyDomain("no masked pixel has a computable gradient")
    z = domain.gather(depth)
    rho_p = albedo_pixels(domain, rho, L.shape[0])
    return domain.scatter(render_pixels(domain, z, rho_p, L))


def albedo_pixels(domain: MaskDomain, rho, channels: int) -> np.ndarray:
    """Broadcast an albedo spec to ``(n, C)`` masked values."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim >= 2:
        rho = domain.gather(rho)
        if rho.ndim == 1:
            rho = rho[:, None]
    return np.broadcast_to(rho, (domain.n, channels)).astype(float)


def linear_fields(theta, xt, yt, f, rho, I, L):
    """Vectorized ``a^c(theta)`` ``(P, C, 2)`` and ``b^c(theta)`` ``(P, C)`` for all channels."""
    L = as_lighting(L)
    S = quadratic_forms(L)
    t = _inv_norm_terms(theta, xt, yt, f, 0)
    J, u, s, phi = t["J"], t["u"], t["s"], t["phi"]
    m = np.einsum("...ij,ci->...cj", J, L[:, :3])
    a = (rho * phi[..., None])[..., None] * m
    Q = np.einsum("...i,cij,...j->...c", u, S, u)
    b = I - rho * (-L[:, 2] * phi[..., None] + Q / s[..., None] + (L[:, 3] - L[:, 8]))
    return a, b
