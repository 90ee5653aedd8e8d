import numpy as np
import pytest

from mvsfs.errors import NonFiniteInput
from mvsfs.evalgen import L3, mae_normals, smooth_depth
from mvsfs.geometry import Intrinsics
from mvsfs.solver import (
    SFSProblem,
    SolverOptions,
    SolverState,
    default_init,
    dual_update,
    energy,
    penalty_weights,
    solve_sfs,
    solve_sfs_fixed_point,
    theta_update,
    z_update,
)


def test_options_validation():
    for bad in ({"beta0": 0}, {"mu": 1.0}, {"tau": 0.5}, {"max_outer_iters": 0},
                {"stop_patience": 0}, {"grad_scheme": "upwind"}):
        with pytest.raises(ValueError):
            SolverOptions(**bad)
    assert SolverOptions(grad_scheme="forward").grad_scheme.value == "forward"


def test_default_init():
    mask = np.ones((3, 3), dtype=bool)
    assert np.all(default_init(mask, Intrinsics.orthographic()) == 0)
    persp = Intrinsics.perspective(100.0, 1.0, 1.0)
    np.testing.assert_allclose(default_init(mask, persp, 20.0), np.log(20.0))
    with pytest.raises(ValueError):
        default_init(mask, persp)


def test_penalty_weights():
    np.testing.assert_array_equal(penalty_weights(Intrinsics.orthographic(), 2), [1, 1])
    np.testing.assert_array_equal(penalty_weights(Intrinsics.perspective(10.0, 0, 0), 3), [100, 100, 1])


def test_energy_zero_at_ground_truth(sphere_l3):
    sc = sphere_l3
    assert energy(sc.depth, sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask) < 1e-25
    with pytest.raises(NonFiniteInput):
        energy(np.full(sc.mask.shape, np.nan), sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask)


def _state(sc, rng):
    prob = SFSProblem.build(sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask)
    z0 = prob.domain.gather(smooth_depth(sc.depth, sc.mask, 4))
    st = SolverState.start(prob, z0, 0.7)
    st.theta = st.theta + rng.normal(0, 0.05, st.theta.shape)
    st.duals = rng.normal(0, 0.01, st.theta.shape)
    return prob, st


def test_z_update_is_stationary_for_augmented_lagrangian(sphere_l3, rng):
    prob, st = _state(sphere_l3, rng)
    opts = SolverOptions(cg_tol=1e-12, cg_max_iters=5000)
    z, info = z_update(st, prob, opts)
    assert info.converged
    d = prob.domain
    from mvsfs.shading import linear_fields

    a, b = linear_fields(st.theta, d.xt, d.yt, d.intr.f, prob.rho, prob.I, prob.L)
    bg = st.beta * d.intr.f**2

    def lagrangian(zv):
        g = d.gradient(zv)
        r = np.einsum("pci,pi->pc", a, g) - b
        c = g - st.theta
        return np.sum(r * r) + np.sum(st.duals * c) + 0.5 * bg * np.sum(c * c)

    # the function is quadratic, so a central difference is exact up to rounding
    for _ in range(5):
        v = rng.normal(size=d.n)
        h = 1e-3
        deriv = (lagrangian(z + h * v) - lagrangian(z - h * v)) / (2 * h)
        curv = (lagrangian(z + h * v) - 2 * lagrangian(z) + lagrangian(z - h * v)) / h**2
        assert abs(deriv) <= 1e-6 * max(curv, 1.0)


def test_theta_update_reduces_pixel_objective(sphere_l3, rng):
    from mvsfs import _pykernels as pk

    prob, st = _state(sphere_l3, rng)
    d = prob.domain
    g = d.gradient(st.z)
    args = (g, None, st.duals, st.beta, st.beta, d.xt, d.yt, d.intr.f, prob.rho, prob.I, prob.L, None, None, 0.0)
    theta, nu, nf = theta_update(st, prob, SolverOptions())
    assert nf == 0
    assert np.all(pk.pixel_objective(theta, *args) <= pk.pixel_objective(st.theta, *args) + 1e-15)


def test_dual_update_balances_penalty():
    opts = SolverOptions(mu=10.0, tau=2.0)
    theta = np.zeros((4, 2))
    st = SolverState(np.zeros(4), theta, np.zeros((4, 2)), 1.0, 0, theta.copy())
    duals, beta = dual_update(st, np.ones((4, 2)), opts)
    np.testing.assert_array_equal(duals, np.ones((4, 2)))
    assert beta == 2.0  # primal residual dominates
    st.theta_prev = np.full((4, 2), 5.0)
    _, beta = dual_update(st, np.full((4, 2), 1e-3), opts)
    assert beta == 0.5  # dual residual dominates
    _, beta = dual_update(st, np.full((4, 2), 5.0), opts, weights=[4.0, 4.0])
    assert beta == 1.0


def test_solve_from_smoothed_init_improves(sphere_l3):
    sc = sphere_l3
    init = smooth_depth(sc.depth, sc.mask, 4)
    depth, rep = solve_sfs(sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask, init)
    assert rep.converged
    assert rep.final_energy < rep.initial_energy
    assert mae_normals(depth, sc.normals, sc.intr, sc.mask) < mae_normals(init, sc.normals, sc.intr, sc.mask)
    assert np.all(np.isnan(depth[~sc.mask]))
    d = rep.to_dict()
    assert d["iterations"] == rep.iterations and len(d["energy_trace"]) == rep.iterations + 1


def test_solve_returns_best_iterate(sphere_l3):
    sc = sphere_l3
    depth, rep = solve_sfs(sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask, None,
                           SolverOptions(max_outer_iters=5))
    assert not rep.converged and rep.iterations == 5
    assert rep.final_energy == pytest.approx(min(rep.energy_trace))
    e = energy(depth, sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask)
    assert e == pytest.approx(rep.final_energy, rel=1e-12)


def test_fixed_point_baseline_runs(sphere_l3):
    sc = sphere_l3
    init = smooth_depth(sc.depth, sc.mask, 4)
    depth, rep = solve_sfs_fixed_point(sc.image, sc.albedo, sc.lighting, sc.intr, sc.mask, init,
                                       SolverOptions(max_outer_iters=20))
    assert rep.method == "fixed_point"
    assert rep.final_energy <= rep.initial_energy


def test_rejects_bad_inputs(sphere_l3):
    sc = sphere_l3
    bad = sc.image.copy()
    bad[sc.mask] = np.nan
    with pytest.raises(NonFiniteInput):
        solve_sfs(bad, 1.0, L3, sc.intr, sc.mask)
    with pytest.raises(ValueError):
        solve_sfs(sc.image[..., :2], 1.0, L3, sc.intr, sc.mask)
    with pytest.raises(ValueError):
        solve_sfs(sc.image, 1.0, L3, Intrinsics.perspective(100.0, 20, 20), sc.mask)
