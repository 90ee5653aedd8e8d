"""Backend selection for the hot kernels.

The compiled extension :mod:`mvsfs._kernels` is used when it imports;
otherwise the NumPy versions in :mod:`mvsfs._pykernels` are.  Setting the
environment variable ``MVSFS_BACKEND=python`` forces the fallback.

Both backends expose:

``theta_newton(theta0, g, zc, mult, beta, beta_z, xt, yt, f, rho, I, L, alpha, gamma, lam, tol, maxit)``
    per-pixel safeguarded Newton for the theta-subproblem; ``theta0`` has
    2 columns (single view) or 3 (multi-view, with ``zc``, ``alpha`` and
    ``gamma`` given).  ``beta`` and ``beta_z`` weigh the gradient and
    depth parts of the penalty.  Returns ``(theta, n_unconverged, n_fallback)``.

``pcg(indptr, indices, data, b, x0, tol, maxit)``
    Jacobi-preconditioned CG on a symmetric CSR matrix.  Returns
    ``(x, iterations, relative_residual)``.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MVSFS_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def get_backend(name=None):
    """Module implementing the kernels: ``"cython"``, ``"python"`` or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def theta_newton(*args, backend=None):
    return get_backend(backend).theta_newton(*args)


def pcg(*args, backend=None):
    return get_backend(backend).pcg(*args)
