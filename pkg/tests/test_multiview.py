import numpy as np
import pytest

from mvsfs.errors import OrthographicUnsupported, ViewCountTooSmall
from mvsfs.evalgen import generate_matches
from mvsfs.geometry import Intrinsics, backproject, project
from mvsfs.multiview import (
    CorrespondenceSet,
    CouplingOptions,
    View,
    _build_problems,
    _Coupling,
    consistency_residual,
    fuse_point_cloud,
    match_distances,
    match_stats,
    mv_energy,
    solve_mvsfs,
)
from mvsfs.solver import SolverOptions


def bundle_of(scenes):
    return [View(s.image, s.albedo, s.lighting, s.intr, s.pose, s.mask) for s in scenes]


def test_correspondences_are_canonical():
    c = CorrespondenceSet([(1, 5, 6, 0, 7, 8), (0, 1, 2, 1, 3, 4)])
    assert list(c) == [(0, 7, 8, 1, 5, 6), (0, 1, 2, 1, 3, 4)]
    assert len(c) == 2
    with pytest.raises(ValueError):
        CorrespondenceSet([(0, 1, 1, 0, 2, 2)])
    with pytest.raises(ValueError):
        CorrespondenceSet([(0, 1, 1, 1, 2, 2), (1, 2, 2, 0, 1, 1)])
    assert c.relabel({0: 2, 1: 0}) == CorrespondenceSet([(2, 7, 8, 0, 5, 6), (2, 1, 2, 0, 3, 4)])


def test_validate_checks_masks():
    masks = [np.ones((4, 4), bool), np.ones((4, 4), bool)]
    masks[1][0, 0] = False
    CorrespondenceSet([(0, 1, 1, 1, 2, 2)]).validate(masks)
    with pytest.raises(ValueError):
        CorrespondenceSet([(0, 1, 1, 1, 0, 0)]).validate(masks)
    with pytest.raises(ValueError):
        CorrespondenceSet([(0, 1, 1, 2, 1, 1)]).validate(masks)


def test_consistency_residual_vanishes_at_exact_points(small_views, rng):
    a, b = small_views
    ys, xs = np.nonzero(a.mask)
    for k in rng.choice(len(ys), 20, replace=False):
        x, y = float(xs[k]), float(ys[k])
        X = backproject(x, y, a.depth[ys[k], xs[k]], a.intr, a.pose)
        px, py, dj = project(X, b.intr, b.pose)
        r = consistency_residual(a.depth[ys[k], xs[k]], np.log(dj), (0, x, y, 1, float(px), float(py)),
                                 a.intr, b.intr, a.pose, b.pose)
        assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(X)


def test_generated_matches_are_close_at_ground_truth(small_views):
    m = generate_matches(small_views, 30, seed=3)
    assert len(m) == 30
    m.validate([v.mask for v in small_views])
    dist = match_distances([v.depth for v in small_views], small_views, m)
    # rounding to the nearest pixel moves a point by at most about one pixel footprint
    footprint = np.exp(np.nanmax(small_views[0].depth)) / small_views[0].intr.f
    assert dist.max() <= 2 * footprint
    assert generate_matches(small_views, 30, seed=3) == m


def test_pixel_terms_match_coupling_energy_derivative(small_views, rng):
    bundle = bundle_of(small_views)
    m = generate_matches(small_views, 25, seed=1)
    probs = _build_problems(bundle, SolverOptions().grad_scheme)
    cp = _Coupling(probs, bundle, m)
    zs = [p.domain.gather(v.depth) + rng.normal(0, 1e-3, p.domain.n) for p, v in zip(probs, small_views)]
    lam = 1e-5
    for v in (0, 1):
        alpha, gamma = cp.pixel_terms(v, zs)
        touched = np.flatnonzero(alpha)
        assert len(touched) == 25
        for p in touched[:5]:
            h = 1e-6
            up = [z.copy() for z in zs]
            dn = [z.copy() for z in zs]
            up[v][p] += h
            dn[v][p] -= h
            fd = (cp.energy(up, lam) - cp.energy(dn, lam)) / (2 * h)
            e = np.exp(zs[v][p])
            exact = lam * (alpha[p] * e * e - gamma[p] * e)
            assert fd == pytest.approx(exact, rel=1e-5)


def test_match_stats(small_views):
    m = CorrespondenceSet(generate_matches(small_views, 10, seed=0))
    s = match_stats(m, small_views)
    assert s["count"][0, 1] == 10 and s["count"].sum() == 10
    np.testing.assert_allclose(s["coverage"][0], 10 / small_views[0].mask.sum())


def test_fused_ground_truth_lies_on_sphere(small_views):
    cloud = fuse_point_cloud([v.depth for v in small_views], small_views)
    assert len(cloud) == sum(v.mask.sum() for v in small_views)
    r = np.linalg.norm(cloud.positions, axis=1)
    np.testing.assert_allclose(r, 5e5, rtol=1e-9)
    assert cloud.colors.shape == (len(cloud), 3)
    np.testing.assert_array_equal(np.bincount(cloud.view), [v.mask.sum() for v in small_views])


def test_bundle_checks(small_views):
    bundle = bundle_of(small_views)
    with pytest.raises(ViewCountTooSmall):
        solve_mvsfs(bundle[:1], CorrespondenceSet())
    ortho = [View(v.image, v.albedo, v.lighting, Intrinsics.orthographic(), v.pose, v.mask) for v in bundle]
    with pytest.raises(OrthographicUnsupported):
        solve_mvsfs(ortho, CorrespondenceSet())
    with pytest.raises(ValueError):
        CouplingOptions(lam=-1.0)


def test_coupled_solve_runs_and_reports(small_views):
    bundle = bundle_of(small_views)
    m = generate_matches(small_views, 20, seed=0)
    opts = CouplingOptions(lam=1e-5, solver=SolverOptions(max_outer_iters=15))
    nominal = float(np.exp(np.nanmedian(small_views[0].depth)))
    depths, rep = solve_mvsfs(bundle, m, None, opts, nominal)
    assert rep.method == "admm_multiview" and rep.iterations <= 15
    assert len(depths) == 2 and all(d.shape == v.mask.shape for d, v in zip(depths, bundle))
    assert rep.final_energy == pytest.approx(mv_energy(depths, bundle, m, 1e-5), rel=1e-10)
    assert rep.final_energy <= rep.initial_energy
