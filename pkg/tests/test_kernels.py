import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mvsfs import _pykernels as pk
from mvsfs import kernels

from conftest import grid_minimum, pixel_args, pixel_problem

BACKENDS = ["python"]
try:
    kernels.get_backend("cython")
    BACKENDS.append("cython")
except ImportError:
    pass


@pytest.mark.parametrize("k", [2, 3])
@pytest.mark.parametrize("perspective", [False, True])
def test_pixel_derivatives_match_central_differences(rng, k, perspective):
    p = pixel_problem(rng, 500, channels=3 if perspective else 1, perspective=perspective, k=k)
    grad, hess = pk.pixel_grad_hess(*pixel_args(p))
    scale = np.array([1 / p["f"], 1 / p["f"], 1.0][:k])
    obj = lambda th: pk.pixel_objective(*pixel_args(p, th))  # noqa: E731
    gradfd = np.zeros_like(grad)
    hessfd = np.zeros_like(hess)
    for j in range(k):
        h = 1e-5 * scale[j]
        e = np.zeros(k)
        e[j] = h
        gradfd[:, j] = (obj(p["theta"] + e) - obj(p["theta"] - e)) / (2 * h)
        gp, _ = pk.pixel_grad_hess(*pixel_args(p, p["theta"] + e))
        gm, _ = pk.pixel_grad_hess(*pixel_args(p, p["theta"] - e))
        hessfd[:, :, j] = (gp - gm) / (2 * h)
    for est, ref in ((grad, gradfd), (hess, hessfd)):
        tol = 1e-5 * np.maximum(np.abs(ref), 1e-3 * np.abs(ref).max(axis=tuple(range(1, ref.ndim)), keepdims=True))
        assert np.all(np.abs(est - ref) <= tol)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("k", [2, 3])
def test_newton_never_increases_objective(rng, backend, k):
    p = pixel_problem(rng, 400, channels=3, perspective=True, k=k)
    out, nu, nf = kernels.theta_newton(*pixel_args(p), 1e-10, 30, backend=backend)
    before = pk.pixel_objective(*pixel_args(p))
    after = pk.pixel_objective(*pixel_args(p, out))
    assert np.all(after <= before + 1e-12 * np.abs(before))
    assert nf == 0
    grad, _ = pk.pixel_grad_hess(*pixel_args(p, out))
    assert np.median(pk.scaled_gradient_norm(grad, p["f"])) < 1e-8


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("perspective", [False, True])
def test_newton_matches_grid_search(rng, backend, perspective):
    p = pixel_problem(rng, 15, channels=1, perspective=perspective)
    out, _, _ = kernels.theta_newton(*pixel_args(p), 1e-12, 50, backend=backend)
    f = p["f"]
    for i in range(15):
        sl = slice(i, i + 1)

        def fun(th):
            m = len(th)
            rep = lambda a: np.repeat(a[sl], m, axis=0)  # noqa: E731
            return pk.data_objective(th, rep(p["g"]), rep(p["mult"]), p["beta"], rep(p["xt"]),
                                     rep(p["yt"]), f, rep(p["rho"]), rep(p["I"]), p["L"])

        best = grid_minimum(fun, f)
        assert np.max(np.abs(f * (out[i] - best))) < 1e-3


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@pytest.mark.parametrize("k", [2, 3])
def test_backends_agree(rng, k):
    p = pixel_problem(rng, 300, channels=3, perspective=True, k=k)
    a, nua, nfa = kernels.theta_newton(*pixel_args(p), 1e-10, 30, backend="python")
    b, nub, nfb = kernels.theta_newton(*pixel_args(p), 1e-10, 30, backend="cython")
    scale = np.array([p["f"], p["f"], 1.0][:k])
    # both stop at a gradient tolerance, so agreement is at that level
    np.testing.assert_allclose(a * scale, b * scale, rtol=0, atol=1e-7)
    np.testing.assert_allclose(pk.pixel_objective(*pixel_args(p, a)), pk.pixel_objective(*pixel_args(p, b)),
                               rtol=1e-12)
    assert (nfa, nfb) == (0, 0)


def _spd(rng, n):
    A = sp.random(n, n, density=0.05, random_state=np.random.RandomState(3))
    M = (A @ A.T + sp.identity(n) * 0.5).tocsr()
    M.sort_indices()
    return M


@pytest.mark.parametrize("backend", BACKENDS)
def test_pcg_matches_direct_solve(rng, backend):
    M = _spd(rng, 200)
    b = rng.normal(size=200)
    x, it, res = kernels.pcg(M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, b,
                             np.zeros(200), 1e-12, 1000, backend=backend)
    np.testing.assert_allclose(x, spla.spsolve(M.tocsc(), b), atol=1e-9)
    assert res <= 1e-12 and it > 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_pcg_returns_start_when_already_solved(rng, backend):
    M = _spd(rng, 50)
    x0 = rng.normal(size=50)
    x, it, _ = kernels.pcg(M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, M @ x0,
                           x0, 1e-10, 100, backend=backend)
    assert it == 0
    np.testing.assert_array_equal(x, x0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
