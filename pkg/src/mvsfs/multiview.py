"""Multi-view shape-from-shading coupled through sparse correspondences.

Each view carries the auxiliary field ``theta = (z_x, z_y, z)``.  Matched
pixels contribute ``lam / 2 * |exp(theta3_i) q_i - exp(theta3_j) q_j - (t_j - t_i)|^2``
with ``q = R [p~ / f, 1]``, so the depth steps stay linear and the
coupling enters only the per-pixel Newton solves.  Partner values are
frozen inside a view's theta-update and views are swept in index order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import InconsistentCalibration, NonFiniteInput, OrthographicUnsupported, ViewCountTooSmall
from .geometry import Intrinsics, Pose, backproject, camera_rays
from .solver import (
    SFSProblem,
    SolveReport,
    SolverOptions,
    _Tracker,
    data_weights,
    default_init,
    dual_update,
    gradient_adjoint,
    gradient_normal_matrix,
    penalty_weights,
    solve_normal_equations,
    solve_sfs,
)


class CorrespondenceSet:
    """Sparse pixel matches ``(i, x_i, y_i, j, x_j, y_j)`` stored with ``i < j``.

    Matches given with ``i > j`` are flipped on construction; ``i == j`` and
    repeated matches are rejected.
    """

    def __init__(self, matches=()):
        rows = []
        seen = set()
        for m in matches:
            i, xi, yi, j, xj, yj = (int(v) for v in m)
            if i == j:
                raise ValueError(f"match {m} pairs a view with itself")
            if i > j:
                i, xi, yi, j, xj, yj = j, xj, yj, i, xi, yi
            key = (i, xi, yi, j, xj, yj)
            if key in seen:
                raise ValueError(f"duplicate match {key}")
            seen.add(key)
            rows.append(key)
        self._rows = np.array(rows, dtype=np.int64).reshape(-1, 6)

    def __len__(self):
        return len(self._rows)

    def __iter__(self):
        return (tuple(int(v) for v in r) for r in self._rows)

    def __eq__(self, other):
        return isinstance(other, CorrespondenceSet) and np.array_equal(self._rows, other._rows)

    @property
    def array(self) -> np.ndarray:
        return self._rows.copy()

    def validate(self, masks):
        """Check every matched pixel lies inside its view's mask."""
        for i, xi, yi, j, xj, yj in self:
            for v, x, y in ((i, xi, yi), (j, xj, yj)):
                if v >= len(masks):
                    raise ValueError(f"match refers to view {v}, only {len(masks)} views")
                m = masks[v]
                if not (0 <= y < m.shape[0] and 0 <= x < m.shape[1] and m[y, x]):
                    raise ValueError(f"matched pixel ({x}, {y}) is outside the mask of view {v}")

    def relabel(self, perm):
        """Matches with view ``v`` renamed to ``perm[v]``."""
        return CorrespondenceSet(
            (perm[i], xi, yi, perm[j], xj, yj) for i, xi, yi, j, xj, yj in self
        )


@dataclass
class View:
    image: np.ndarray
    albedo: np.ndarray
    lighting: np.ndarray
    intr: Intrinsics
    pose: Pose
    mask: np.ndarray


@dataclass
class CouplingOptions:
    lam: float = 1e-5
    solver: SolverOptions = field(default_factory=SolverOptions)

    #: range over which the coupling weight is documented to behave alike
    VALID_RANGE = (1e-8, 1e-2)

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("coupling weight must be non-negative")


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray | None
    view: np.ndarray

    def __len__(self):
        return len(self.positions)


def _check_bundle(bundle, need_pair=True):
    if need_pair and len(bundle) < 2:
        raise ViewCountTooSmall(f"coupled solving needs at least 2 views, got {len(bundle)}")
    for k, v in enumerate(bundle):
        if not v.intr.is_perspective:
            raise OrthographicUnsupported(f"view {k} is not perspective")
        mask = np.asarray(v.mask)
        if np.asarray(v.image).shape[:2] != mask.shape:
            raise InconsistentCalibration(f"view {k}: image and mask sizes differ")
        alb = np.asarray(v.albedo)
        if alb.ndim >= 2 and alb.shape[:2] != mask.shape:
            raise InconsistentCalibration(f"view {k}: albedo and mask sizes differ")


def consistency_residual(z_i, z_j, match, intr_i: Intrinsics, intr_j: Intrinsics,
                         pose_i: Pose, pose_j: Pose) -> np.ndarray:
    """3-vector ``C_ij - d_ij`` for one match.

    ``z_i`` and ``z_j`` are log-depth maps (or scalars read at the matched
    pixels); ``match`` is ``(i, x_i, y_i, j, x_j, y_j)``.
    """
    _, xi, yi, _, xj, yj = match
    zi = np.asarray(z_i)[yi, xi] if np.ndim(z_i) == 2 else float(z_i)
    zj = np.asarray(z_j)[yj, xj] if np.ndim(z_j) == 2 else float(z_j)
    qi = pose_i.R @ camera_rays(xi, yi, intr_i)
    qj = pose_j.R @ camera_rays(xj, yj, intr_j)
    return np.exp(zi) * qi - np.exp(zj) * qj - (pose_j.t - pose_i.t)


class _Coupling:
    """Precomputed match geometry in terms of per-view pixel indices."""

    def __init__(self, problems, bundle, matches: CorrespondenceSet):
        arr = matches.array
        self.vi, self.vj = arr[:, 0], arr[:, 3]
        self.pi = np.array([problems[i].domain.index[y, x] for i, x, y in arr[:, :3]], dtype=np.int64)
        self.pj = np.array([problems[j].domain.index[y, x] for j, x, y in arr[:, 3:]], dtype=np.int64)
        if len(arr) and (self.pi.min() < 0 or self.pj.min() < 0):
            raise ValueError("a matched pixel is outside its view's mask")
        self.qi = np.array([bundle[i].pose.R @ camera_rays(x, y, bundle[i].intr) for i, x, y in arr[:, :3]]).reshape(-1, 3)
        self.qj = np.array([bundle[j].pose.R @ camera_rays(x, y, bundle[j].intr) for j, x, y in arr[:, 3:]]).reshape(-1, 3)
        self.dt = np.array([bundle[j].pose.t - bundle[i].pose.t for i, j in zip(self.vi, self.vj)]).reshape(-1, 3)
        self.n_views = len(problems)
        self.sizes = [p.domain.n for p in problems]

    def residuals(self, z3):
        """Per-match 3-vectors for per-view log-depth vectors ``z3``."""
        ei = np.array([z3[i][p] for i, p in zip(self.vi, self.pi)])
        ej = np.array([z3[j][p] for j, p in zip(self.vj, self.pj)])
        return np.exp(ei)[:, None] * self.qi - np.exp(ej)[:, None] * self.qj - self.dt

    def energy(self, z3, lam):
        if len(self.vi) == 0:
            return 0.0
        r = self.residuals(z3)
        return 0.5 * lam * float(np.sum(r * r))

    def pixel_terms(self, v, z3):
        """``alpha = sum |A|^2`` and ``gamma = sum A . B`` for every pixel of view ``v``."""
        n = self.sizes[v]
        alpha = np.zeros(n)
        gamma = np.zeros(n)
        side_i = self.vi == v
        if side_i.any():
            A = self.qi[side_i]
            ej = np.exp(np.array([z3[j][p] for j, p in zip(self.vj[side_i], self.pj[side_i])]))
            B = ej[:, None] * self.qj[side_i] + self.dt[side_i]
            np.add.at(alpha, self.pi[side_i], np.sum(A * A, axis=1))
            np.add.at(gamma, self.pi[side_i], np.sum(A * B, axis=1))
        side_j = self.vj == v
        if side_j.any():
            A = self.qj[side_j]
            ei = np.exp(np.array([z3[i][p] for i, p in zip(self.vi[side_j], self.pi[side_j])]))
            B = ei[:, None] * self.qi[side_j] - self.dt[side_j]
            np.add.at(alpha, self.pj[side_j], np.sum(A * A, axis=1))
            np.add.at(gamma, self.pj[side_j], np.sum(A * B, axis=1))
        return alpha, gamma


def coupled_energy(problems, coupling: _Coupling, zs, lam) -> float:
    """Sum of per-view PDE energies plus the weighted consistency term."""
    return sum(p.energy(z) for p, z in zip(problems, zs)) + coupling.energy(zs, lam)


def _build_problems(bundle, grad):
    return [SFSProblem.build(v.image, v.albedo, v.lighting, v.intr, v.mask, grad) for v in bundle]


def _initial_vectors(problems, bundle, inits, nominal_depth):
    out = []
    for k, (p, v) in enumerate(zip(problems, bundle)):
        if inits is not None and inits[k] is not None:
            init = inits[k]
        else:
            nd = nominal_depth[k] if np.ndim(nominal_depth) else nominal_depth
            init = default_init(v.mask, v.intr, nd)
        z = p.domain.gather(init)
        if not np.all(np.isfinite(z)):
            raise NonFiniteInput(f"initial depth of view {k} is not finite inside the mask")
        out.append(z)
    return out


def mv_energy(depths, bundle, matches: CorrespondenceSet, lam, grad=None) -> float:
    """Coupled energy of a set of ``(H, W)`` log-depth maps."""
    grad = grad or SolverOptions().grad_scheme
    problems = _build_problems(bundle, grad)
    coupling = _Coupling(problems, bundle, matches)
    zs = [p.domain.gather(d) for p, d in zip(problems, depths)]
    return coupled_energy(problems, coupling, zs, lam)


def solve_mvsfs(bundle, matches: CorrespondenceSet, inits=None, opts: CouplingOptions | None = None,
                nominal_depth=None):
    """Jointly reconstruct ``N`` perspective views.

    With ``lam == 0`` or no matches the views are solved independently by
    :func:`~mvsfs.solver.solve_sfs` (noted in the report).

    Returns ``(depths, report)`` with one ``(H, W)`` log-depth map per view.
    """
    t0 = time.perf_counter()
    opts = opts or CouplingOptions()
    so = opts.solver
    _check_bundle(bundle)
    matches = matches if matches is not None else CorrespondenceSet()
    matches.validate([np.asarray(v.mask, dtype=bool) for v in bundle])

    if opts.lam == 0 or len(matches) == 0:
        report = SolveReport(method="independent", grad_scheme=so.grad_scheme.value,
                             backend=so.backend or kernels.BACKEND)
        report.notes.append("views solved independently (lam = 0 or no matches)")
        depths = []
        for k, v in enumerate(bundle):
            init = inits[k] if inits is not None else None
            nd = nominal_depth[k] if np.ndim(nominal_depth) else nominal_depth
            d, r = solve_sfs(v.image, v.albedo, v.lighting, v.intr, v.mask, init, so, nd)
            depths.append(d)
            report.iterations = max(report.iterations, r.iterations)
            report.notes.append({"view": k, **r.to_dict()})
        report.converged = all(n["converged"] for n in report.notes[1:])
        report.final_energy = sum(n["final_energy"] for n in report.notes[1:])
        report.final_relative_residual = max(n["final_relative_residual"] for n in report.notes[1:])
        report.wall_time = time.perf_counter() - t0
        return depths, report

    problems = _build_problems(bundle, so.grad_scheme)
    coupling = _Coupling(problems, bundle, matches)
    zs = _initial_vectors(problems, bundle, inits, nominal_depth)
    report = SolveReport(method="admm_multiview", grad_scheme=so.grad_scheme.value,
                         backend=so.backend or kernels.BACKEND)
    depths = coupled_admm(problems, coupling, zs, opts, report)
    report.wall_time = time.perf_counter() - t0
    return [p.domain.scatter(z) for p, z in zip(problems, depths)], report


@dataclass
class _ViewState:
    z: np.ndarray
    theta: np.ndarray
    duals: np.ndarray
    beta: float
    theta_prev: np.ndarray


def _mv_z_update(st: _ViewState, problem: SFSProblem, so: SolverOptions):
    W, rhs_px = data_weights(problem, st.theta[:, :2])
    bg = st.beta * problem.domain.intr.f ** 2
    W[:, 0, 0] += bg
    W[:, 1, 1] += bg
    rhs_px += bg * st.theta[:, :2] - st.duals[:, :2]
    M = gradient_normal_matrix(problem.domain, W) + st.beta * sp.identity(problem.domain.n, format="csr")
    rhs = gradient_adjoint(problem.domain, rhs_px) + st.beta * st.theta[:, 2] - st.duals[:, 2]
    return solve_normal_equations(M, rhs, st.z, so)


def mv_sweep(states, problems, coupling: _Coupling, lam, so: SolverOptions, report=None):
    """One ADMM iteration over all views (z-updates, Gauss-Seidel theta, duals)."""
    for st, p in zip(states, problems):
        st.z, cg = _mv_z_update(st, p, so)
        if report is not None:
            report.cg_failures += int(not cg.converged)
            report.cg_max_residual = max(report.cg_max_residual, cg.residual)
    for v, (st, p) in enumerate(zip(states, problems)):
        theta3 = [s.theta[:, 2] for s in states]
        alpha, gamma = coupling.pixel_terms(v, theta3)
        d = p.domain
        g = d.gradient(st.z)
        st.theta_prev = st.theta
        st.theta, nu, nf = kernels.theta_newton(
            st.theta, g, st.z, st.duals, st.beta * d.intr.f ** 2, st.beta, d.xt, d.yt, d.intr.f, p.rho, p.I, p.L,
            alpha, gamma, float(lam), so.newton_tol, so.newton_max_iters, backend=so.backend,
        )
        if report is not None:
            report.newton_unconverged += nu
            report.newton_fallbacks += nf
    for st, p in zip(states, problems):
        res = np.column_stack([p.domain.gradient(st.z), st.z]) - st.theta
        st.duals, st.beta = dual_update(st, res, so, penalty_weights(p.domain.intr, 3))


def coupled_admm(problems, coupling: _Coupling, zs, opts: CouplingOptions, report: SolveReport):
    so = opts.solver
    states = []
    for p, z in zip(problems, zs):
        th = np.column_stack([p.domain.gradient(z), z])
        states.append(_ViewState(z.copy(), th, np.zeros_like(th), float(so.beta0), th.copy()))
    e0 = coupled_energy(problems, coupling, zs, opts.lam)
    report.initial_energy = e0
    report.energy_trace.append(e0)
    floor = sum(p.energy_floor() for p in problems)
    track = _Tracker(e0, np.concatenate(zs), floor, so.stop_tol, so.stop_patience)
    for k in range(1, so.max_outer_iters + 1):
        mv_sweep(states, problems, coupling, opts.lam, so, report)
        cur = [s.z for s in states]
        e = coupled_energy(problems, coupling, cur, opts.lam)
        report.energy_trace.append(e)
        report.beta_trace.append([s.beta for s in states])
        report.iterations = k
        if track.update(k, e, np.concatenate(cur)):
            report.converged = True
            break
    report.final_relative_residual = track.rel
    report.final_energy = track.best_energy
    report.best_iteration = track.best_iter
    splits = np.cumsum([p.domain.n for p in problems])[:-1]
    return np.split(track.best_z, splits)


def fuse_point_cloud(depths, bundle) -> PointCloud:
    """Backproject every masked pixel of every view into the world frame."""
    pos, col, src = [], [], []
    for k, (z, v) in enumerate(zip(depths, bundle)):
        if not v.intr.is_perspective:
            raise OrthographicUnsupported(f"view {k} is not perspective")
        mask = np.asarray(v.mask, dtype=bool) & np.isfinite(z)
        ys, xs = np.nonzero(mask)
        pos.append(backproject(xs, ys, np.asarray(z)[ys, xs], v.intr, v.pose))
        img = np.asarray(v.image, dtype=float)
        if img.ndim == 2:
            img = img[..., None]
        col.append(img[ys, xs])
        src.append(np.full(len(ys), k))
    colors = np.concatenate(col) if col and len({c.shape[1] for c in col}) == 1 else None
    return PointCloud(np.concatenate(pos), colors, np.concatenate(src))


def match_distances(depths, bundle, matches: CorrespondenceSet) -> np.ndarray:
    """3-D distance between the two backprojected ends of every match."""
    out = []
    for m in matches:
        i, _, _, j, _, _ = m
        r = consistency_residual(depths[i], depths[j], m, bundle[i].intr, bundle[j].intr,
                                 bundle[i].pose, bundle[j].pose)
        out.append(np.linalg.norm(r))
    return np.array(out)


def match_stats(matches: CorrespondenceSet, bundle) -> dict:
    """Match counts per view pair and the fraction of each mask that is matched.

    Returns ``{"count": (N, N) int array, "coverage": (N,) float array}``;
    ``count[i][j]`` (``i < j``) counts matches between views ``i`` and ``j``.
    """
    n = len(bundle)
    count = np.zeros((n, n), dtype=int)
    touched = [set() for _ in range(n)]
    for i, xi, yi, j, xj, yj in matches:
        count[i, j] += 1
        touched[i].add((xi, yi))
        touched[j].add((xj, yj))
    coverage = np.array([
        len(touched[k]) / max(int(np.count_nonzero(v.mask)), 1) for k, v in enumerate(bundle)
    ])
    return {"count": count, "coverage": coverage}
