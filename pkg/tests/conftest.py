import numpy as np
import pytest

from mvsfs.evalgen import L1, L2, L3, ScenePreset, generate_scene, hemisphere_views


def random_pixels(rng, n, channels=1, perspective=False):
    """Random well-posed per-pixel problems: ``(theta, g, xt, yt, f, rho, I, L)``."""
    if perspective:
        f = float(rng.uniform(50, 500))
        xt = rng.uniform(-0.4, 0.4, n) * f
        yt = rng.uniform(-0.4, 0.4, n) * f
        scale = 0.5 / f
    else:
        f = 1.0
        xt = np.zeros(n)
        yt = np.zeros(n)
        scale = 0.5
    theta = rng.normal(0, scale, (n, 2))
    g = theta + rng.normal(0, 0.2 * scale, (n, 2))
    rho = rng.uniform(0.5, 1.0, (n, channels))
    L = [L1, L2, L3][rng.integers(3)] if channels == 1 else L3
    if channels == 1 and L.shape[0] != 1:
        L = L[:1]
    I = rng.uniform(0.1, 0.9, (n, channels))
    return theta, g, xt, yt, f, rho, I, L


def pixel_problem(rng, n, channels=1, perspective=False, k=2, lam=1e-3):
    """Random theta-subproblems with ``k`` unknowns, as keyword arrays for :func:`pixel_args`."""
    theta, g, xt, yt, f, rho, I, L = random_pixels(rng, n, channels, perspective)
    # penalties of this size keep the 2-variable objective unimodal, so a
    # local Newton solve and a global search can be compared
    beta = float(rng.uniform(1.0, 4.0)) * f * f
    beta_z = float(rng.uniform(0.5, 2.0))
    mult = rng.normal(0, 0.1, (n, k)) * np.array([f, f, 1.0][:k])
    if k == 3:
        zc = rng.uniform(0.5, 1.5, n)
        theta = np.column_stack([theta, zc + rng.normal(0, 0.05, n)])
        # partner points at unit-scale distances keep e^t and the coupling comparable
        alpha = rng.uniform(0.5, 2.0, n) * (rng.random(n) > 0.3)
        gamma = alpha * np.exp(zc + rng.normal(0, 0.1, n))
    else:
        zc = alpha = gamma = None
    return dict(theta=theta, g=g, zc=zc, mult=mult, beta=beta, beta_z=beta_z, xt=xt, yt=yt, f=f,
                rho=rho, I=I, L=L, alpha=alpha, gamma=gamma, lam=lam if k == 3 else 0.0)


def pixel_args(p, theta=None):
    return (p["theta"] if theta is None else theta, p["g"], p["zc"], p["mult"], p["beta"], p["beta_z"],
            p["xt"], p["yt"], p["f"], p["rho"], p["I"], p["L"], p["alpha"], p["gamma"], p["lam"])


def grid_minimum(fun, f, step=1e-2, levels=4):
    """Global brute force over f-scaled ``theta`` in ``[-3, 3]^2``, then zoomed refinement.

    ``fun`` maps ``(m, 2)`` candidates to objective values.
    """
    ax = np.arange(-3.0, 3.0 + step / 2, step) / f
    T0, T1 = np.meshgrid(ax, ax, indexing="ij")
    pts = np.column_stack([T0.ravel(), T1.ravel()])
    c = pts[np.argmin(fun(pts))]
    h = step / f
    for _ in range(levels):
        a = np.linspace(-2 * h, 2 * h, 41)
        A, B = np.meshgrid(c[0] + a, c[1] + a, indexing="ij")
        pts = np.column_stack([A.ravel(), B.ravel()])
        c = pts[np.argmin(fun(pts))]
        h /= 10
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere_l1():
    return generate_scene(ScenePreset(kind="sphere", size=48), L1)


@pytest.fixture(scope="session")
def sphere_l3():
    return generate_scene(ScenePreset(kind="sphere", size=48), L3)


@pytest.fixture(scope="session")
def small_views():
    return hemisphere_views(ScenePreset(kind="hemisphere", size=40), L3)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
