"""Single-view shape-from-shading by ADMM, and the fixed-point baseline.

The unknown depth ``z`` is split from its gradient by an auxiliary field
``theta``; ADMM then alternates a sparse linear least-squares solve in
``z`` (conjugate gradient), an independent two-variable Newton solve per
pixel in ``theta``, and a multiplier ascent.  The penalty is adapted by
residual balancing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import EmptyDomain, NonFiniteInput
from .geometry import Intrinsics
from .operators import GradientScheme, MaskDomain
from .shading import albedo_pixels, as_lighting, linear_fields, residual_terms


@dataclass
class SolverOptions:
    beta0: float = 1e-1
    mu: float = 10.0
    tau: float = 2.0
    stop_tol: float = 1e-3
    #: consecutive iterations the relative change must stay below ``stop_tol``
    stop_patience: int = 1
    max_outer_iters: int = 500
    cg_tol: float = 1e-9
    cg_max_iters: int = 1000
    newton_tol: float = 1e-9
    newton_max_iters: int = 20
    grad_scheme: GradientScheme = GradientScheme.AVERAGED
    #: kernel backend, ``None`` for the one selected at import
    backend: str | None = None

    def __post_init__(self):
        self.grad_scheme = GradientScheme(self.grad_scheme)
        for name in ("beta0", "stop_tol", "cg_tol", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.mu > 1 or not self.tau > 1:
            raise ValueError("mu and tau must exceed 1")
        if (self.max_outer_iters < 1 or self.cg_max_iters < 1 or self.newton_max_iters < 1
                or self.stop_patience < 1):
            raise ValueError("iteration limits must be at least 1")


@dataclass
class SFSProblem:
    """Image data gathered over the masked pixels of one view."""

    domain: MaskDomain
    I: np.ndarray
    rho: np.ndarray
    L: np.ndarray

    @classmethod
    def build(cls, I, rho, L, intr: Intrinsics, mask, grad=GradientScheme.AVERAGED):
        L = as_lighting(L)
        domain = MaskDomain.build(mask, intr, grad)
        I = np.asarray(I, dtype=float)
        if I.ndim == 2:
            I = I[..., None]
        if I.shape[:2] != domain.shape:
            raise ValueError(f"image shape {I.shape[:2]} does not match mask {domain.shape}")
        if I.shape[2] != L.shape[0]:
            raise ValueError(f"image has {I.shape[2]} channels, lighting has {L.shape[0]}")
        Ip = domain.gather(I)
        rho_p = albedo_pixels(domain, rho, L.shape[0])
        if not (np.all(np.isfinite(Ip)) and np.all(np.isfinite(rho_p))):
            raise NonFiniteInput("image or albedo is not finite inside the mask")
        return cls(domain, Ip, rho_p, L)

    @property
    def channels(self) -> int:
        return self.L.shape[0]

    def residuals(self, z):
        g = self.domain.gradient(z)
        d = self.domain
        return residual_terms(g, g, d.xt, d.yt, d.intr.f, self.rho, self.I, self.L, order=0)

    def energy(self, z) -> float:
        r = self.residuals(z)
        return float(np.sum(r * r))

    def energy_floor(self) -> float:
        """Energy below which the image is reproduced to about 1e-6 relative accuracy."""
        return 1e-12 * max(float(np.sum(self.I**2)), 1.0)


@dataclass
class SolverState:
    """ADMM iterate.  ``duals`` are the unscaled multipliers, same arity as ``theta``."""

    z: np.ndarray
    theta: np.ndarray
    duals: np.ndarray
    beta: float
    k: int = 0
    theta_prev: np.ndarray | None = None

    @classmethod
    def start(cls, problem: SFSProblem, z0, beta0):
        z0 = np.asarray(z0, dtype=float)
        theta = problem.domain.gradient(z0)
        return cls(z0.copy(), theta, np.zeros_like(theta), float(beta0), 0, theta.copy())


def penalty_weights(intr: Intrinsics, k: int = 2) -> np.ndarray:
    """Per-component weights ``(f**2, f**2[, 1])`` of the constraint norm.

    The penalty and residual balancing act on ``f``-scaled gradients, the
    quantities the normal actually depends on, so the same ``beta`` fits
    any focal length.  Orthographic cameras (``f = 1``) give unit weights.
    """
    f2 = intr.f ** 2
    return np.array([f2, f2, 1.0][:k])


@dataclass
class CGInfo:
    iterations: int
    residual: float
    converged: bool


@dataclass
class SolveReport:
    iterations: int = 0
    final_energy: float = float("nan")
    final_relative_residual: float = float("nan")
    energy_trace: list = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = False
    best_iteration: int = 0
    initial_energy: float = float("nan")
    cg_failures: int = 0
    cg_max_residual: float = 0.0
    newton_unconverged: int = 0
    newton_fallbacks: int = 0
    beta_trace: list = field(default_factory=list)
    method: str = "admm"
    grad_scheme: str = "averaged"
    backend: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["energy_trace"] = [float(e) for e in self.energy_trace]
        # multi-view runs record one penalty per view
        out["beta_trace"] = np.asarray(self.beta_trace, dtype=float).tolist()
        return out


def gradient_normal_matrix(domain: MaskDomain, W):
    """``G^T W G`` for per-pixel symmetric 2x2 weights ``W`` of shape ``(n, 2, 2)``."""
    Dx, Dy = domain.Dx, domain.Dy
    wxx = sp.diags(W[:, 0, 0])
    wxy = sp.diags(W[:, 0, 1])
    wyy = sp.diags(W[:, 1, 1])
    cross = Dx.T @ wxy @ Dy
    return (Dx.T @ wxx @ Dx + Dy.T @ wyy @ Dy + cross + cross.T).tocsr()


def gradient_adjoint(domain: MaskDomain, v):
    """``G^T v`` for a per-pixel ``(n, 2)`` field."""
    return domain.Dx.T @ v[:, 0] + domain.Dy.T @ v[:, 1]


def solve_normal_equations(M, rhs, x0, opts: SolverOptions):
    M = sp.csr_matrix(M)
    M.sort_indices()
    x, it, res = kernels.pcg(
        M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data, rhs, x0,
        opts.cg_tol, opts.cg_max_iters, backend=opts.backend,
    )
    return x, CGInfo(int(it), float(res), bool(res <= opts.cg_tol))


def data_weights(problem: SFSProblem, theta):
    """Per-pixel normal-equation weight ``2 sum_c a a^T`` and right side ``2 sum_c b a``."""
    d = problem.domain
    a, b = linear_fields(theta, d.xt, d.yt, d.intr.f, problem.rho, problem.I, problem.L)
    W = 2 * np.einsum("pci,pcj->pij", a, a)
    r = 2 * np.einsum("pc,pci->pi", b, a)
    return W, r


def z_update(state: SolverState, problem: SFSProblem, opts: SolverOptions):
    """Minimize the augmented Lagrangian in ``z`` with ``theta`` and duals frozen.

    Returns the new pixel vector and a :class:`CGInfo`.
    """
    W, rhs_px = data_weights(problem, state.theta[:, :2])
    bg = state.beta * problem.domain.intr.f ** 2
    W[:, 0, 0] += bg
    W[:, 1, 1] += bg
    rhs_px += bg * state.theta[:, :2] - state.duals[:, :2]
    M = gradient_normal_matrix(problem.domain, W)
    rhs = gradient_adjoint(problem.domain, rhs_px)
    return solve_normal_equations(M, rhs, state.z, opts)


def theta_update(state: SolverState, problem: SFSProblem, opts: SolverOptions):
    """Per-pixel Newton solve of the ``theta``-subproblem at the current ``z``.

    Returns ``(theta, n_unconverged, n_fallback)``.
    """
    d = problem.domain
    g = d.gradient(state.z)
    return kernels.theta_newton(
        state.theta, g, None, state.duals, state.beta * d.intr.f ** 2, state.beta, d.xt, d.yt, d.intr.f,
        problem.rho, problem.I, problem.L, None, None, 0.0,
        opts.newton_tol, opts.newton_max_iters, backend=opts.backend,
    )


def constraint_residual(state: SolverState, problem: SFSProblem):
    """``(Gz, z) - theta`` truncated to ``theta``'s arity."""
    g = problem.domain.gradient(state.z)
    if state.theta.shape[1] == 3:
        g = np.column_stack([g, state.z])
    return g - state.theta


def dual_update(state: SolverState, primal_residual, opts: SolverOptions, weights=None):
    """Multiplier ascent followed by residual balancing of ``beta``.

    ``primal_residual`` is the constraint violation ``(Gz[, z]) - theta``
    and ``weights`` the per-component norm weights (see
    :func:`penalty_weights`; unit weights if omitted).  Multipliers are kept
    unscaled, so a change of ``beta`` leaves them as they are (the scaled
    multiplier ``duals / beta`` is what gets rescaled).
    Returns ``(duals, beta)``.
    """
    w = np.ones(primal_residual.shape[1]) if weights is None else np.asarray(weights, float)
    duals = state.duals + state.beta * w * primal_residual
    sw = np.sqrt(w)
    r = float(np.linalg.norm(sw * primal_residual))
    prev = state.theta if state.theta_prev is None else state.theta_prev
    s = state.beta * float(np.linalg.norm(sw * (state.theta - prev)))
    beta = state.beta
    if r > opts.mu * s:
        beta *= opts.tau
    elif s > opts.mu * r:
        beta /= opts.tau
    return duals, beta


def default_init(mask, intr: Intrinsics, nominal_depth=None):
    """Constant plane: depth 0 (orthographic) or log of ``nominal_depth`` (perspective)."""
    mask = np.asarray(mask, dtype=bool)
    if intr.is_perspective:
        if nominal_depth is None or not nominal_depth > 0:
            raise ValueError("perspective default init needs a positive nominal_depth")
        value = float(np.log(nominal_depth))
    else:
        value = 0.0
    out = np.full(mask.shape, np.nan)
    out[mask] = value
    return out


def _prepare(I, rho, l, intr, mask, init, opts, nominal_depth):
    opts = opts or SolverOptions()
    problem = SFSProblem.build(I, rho, l, intr, mask, opts.grad_scheme)
    if init is None:
        init = default_init(mask, intr, nominal_depth)
    z0 = problem.domain.gather(init)
    if not np.all(np.isfinite(z0)):
        raise NonFiniteInput("initial depth is not finite inside the mask")
    return problem, z0, opts


class _Tracker:
    """Best-iterate bookkeeping and the relative-energy stopping rule.

    The change must stay below ``stop_tol`` for ``patience`` consecutive
    iterations.  An energy at or below ``floor`` also counts, since relative
    changes of roundoff-level energies are noise.
    """

    def __init__(self, energy0, z0, floor, stop_tol, patience=1):
        self.best_energy = energy0
        self.best_z = z0.copy()
        self.best_iter = 0
        self.prev = energy0
        self.floor = floor
        self.stop_tol = stop_tol
        self.patience = patience
        self.hits = 0
        self.rel = float("nan")

    def update(self, k, energy, z):
        if np.isfinite(energy) and energy < self.best_energy:
            self.best_energy, self.best_z, self.best_iter = energy, z.copy(), k
        self.rel = abs(energy - self.prev) / max(self.prev, self.floor)
        self.prev = energy
        small = self.rel <= self.stop_tol or energy <= self.floor
        self.hits = self.hits + 1 if small else 0
        return self.hits >= self.patience


def admm_loop(problem: SFSProblem, z0, opts: SolverOptions, report: SolveReport):
    """Run ADMM from ``z0``; returns the best pixel vector."""
    state = SolverState.start(problem, z0, opts.beta0)
    e0 = problem.energy(state.z)
    report.initial_energy = e0
    report.energy_trace.append(e0)
    track = _Tracker(e0, state.z, problem.energy_floor(), opts.stop_tol, opts.stop_patience)
    weights = penalty_weights(problem.domain.intr, 2)
    for k in range(1, opts.max_outer_iters + 1):
        state.z, cg = z_update(state, problem, opts)
        if not cg.converged:
            report.cg_failures += 1
        report.cg_max_residual = max(report.cg_max_residual, cg.residual)
        state.theta_prev = state.theta
        state.theta, nu, nf = theta_update(state, problem, opts)
        report.newton_unconverged += nu
        report.newton_fallbacks += nf
        state.duals, state.beta = dual_update(
            state, constraint_residual(state, problem), opts, weights)
        state.k = k
        e = problem.energy(state.z)
        report.energy_trace.append(e)
        report.beta_trace.append(state.beta)
        report.iterations = k
        if track.update(k, e, state.z):
            report.converged = True
            break
    report.final_relative_residual = track.rel
    report.final_energy = track.best_energy
    report.best_iteration = track.best_iter
    return track.best_z


def solve_sfs(I, rho, l, intr: Intrinsics, mask, init=None, opts: SolverOptions | None = None,
              nominal_depth=None):
    """Shape-from-shading by ADMM.

    Args:
        I: ``(H, W)`` or ``(H, W, C)`` image, linear intensities.
        rho: albedo, scalar, ``(C,)`` or per-pixel map.
        l: ``(C, 9)`` lighting.
        intr: camera intrinsics; ``z`` is log-depth for perspective cameras.
        mask: ``(H, W)`` boolean domain.
        init: initial ``(H, W)`` depth; a constant plane if omitted.
        opts: solver options.
        nominal_depth: distance of the default plane for perspective cameras.

    Returns:
        ``(depth, report)``: the lowest-energy iterate as an ``(H, W)`` map
        (NaN outside the mask) and a :class:`SolveReport`.
    """
    t0 = time.perf_counter()
    problem, z0, opts = _prepare(I, rho, l, intr, mask, init, opts, nominal_depth)
    report = SolveReport(grad_scheme=opts.grad_scheme.value,
                         backend=opts.backend or kernels.BACKEND)
    z = admm_loop(problem, z0, opts, report)
    report.wall_time = time.perf_counter() - t0
    return problem.domain.scatter(z), report


def solve_sfs_fixed_point(I, rho, l, intr: Intrinsics, mask, init=None,
                          opts: SolverOptions | None = None, nominal_depth=None):
    """Baseline: freeze ``a`` and ``b`` at the current gradient and solve for ``z``.

    The linear least-squares problem of each step is rank deficient; CG
    started from the current iterate picks the solution closest to it.
    Stopping rule and return policy match :func:`solve_sfs`.
    """
    t0 = time.perf_counter()
    problem, z, opts = _prepare(I, rho, l, intr, mask, init, opts, nominal_depth)
    report = SolveReport(method="fixed_point", grad_scheme=opts.grad_scheme.value,
                         backend=opts.backend or kernels.BACKEND)
    e0 = problem.energy(z)
    report.initial_energy = e0
    report.energy_trace.append(e0)
    track = _Tracker(e0, z, problem.energy_floor(), opts.stop_tol, opts.stop_patience)
    for k in range(1, opts.max_outer_iters + 1):
        W, rhs_px = data_weights(problem, problem.domain.gradient(z))
        M = gradient_normal_matrix(problem.domain, W)
        z, cg = solve_normal_equations(M, gradient_adjoint(problem.domain, rhs_px), z, opts)
        if not cg.converged:
            report.cg_failures += 1
        report.cg_max_residual = max(report.cg_max_residual, cg.residual)
        e = problem.energy(z)
        report.energy_trace.append(e)
        report.iterations = k
        if track.update(k, e, z):
            report.converged = True
            break
    report.final_relative_residual = track.rel
    report.final_energy = track.best_energy
    report.best_iteration = track.best_iter
    report.wall_time = time.perf_counter() - t0
    return problem.domain.scatter(track.best_z), report


def energy(z, I, rho, l, intr: Intrinsics, mask, grad=GradientScheme.AVERAGED) -> float:
    """Least-squares PDE energy of a depth map ``z`` over the mask."""
    problem = SFSProblem.build(I, rho, l, intr, mask, grad)
    zp = problem.domain.gather(z)
    if not np.all(np.isfinite(zp)):
        raise NonFiniteInput("depth is not finite inside the mask")
    return problem.energy(zp)


__all__ = [
    "CGInfo", "EmptyDomain", "SFSProblem", "SolveReport", "SolverOptions", "SolverState",
    "default_init", "dual_update", "energy", "penalty_weights", "solve_sfs", "solve_sfs_fixed_point",
    "theta_update", "z_update",
]
