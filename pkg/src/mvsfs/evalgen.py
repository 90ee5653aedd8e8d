"""Synthetic scenes, lighting presets, match sampling and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionMismatch, EmptyDomain, NotEnoughVisiblePixels, RankDeficient
from .geometry import (
    Intrinsics,
    Pose,
    backproject,
    camera_rays,
    look_at,
    normal_from_gradient,
    pixel_grid,
    project,
)
from .operators import GradientScheme, MaskDomain
from .shading import albedo_pixels, as_lighting, render, sh_basis

L1 = np.array([[0.1, -0.25, -0.7, 0.2, 0, 0, 0, 0, 0]])
L2 = np.array([[0.2, 0.3, -0.7, 0.5, -0.2, -0.2, 0.3, 0.3, 0.2]])
L3 = np.array(
    [
        [-0.2, -0.2, -1, 0.4, 0.1, -0.1, -0.1, -0.1, 0.05],
        [0, 0.2, -1, 0.3, 0, 0.2, 0.1, 0, 0.1],
        [0.2, -0.2, -1, 0.2, -0.1, 0, 0, 0.1, 0],
    ]
)
#: frontal directional light; reduces the PDE to the eikonal equation when C = 1
EIKONAL = np.array([[0, 0, -1.0, 0, 0, 0, 0, 0, 0]])

LIGHTING_PRESETS = {"l1": L1, "l2": L2, "l3": L3, "eikonal": EIKONAL}


def lighting_preset(spec) -> np.ndarray:
    """Lighting from a preset name (``"l1"``, ``"l2"``, ``"l3"``, ``"eikonal"``) or a ``(C, 9)`` array."""
    if isinstance(spec, str):
        try:
            return LIGHTING_PRESETS[spec.lower()].astype(float).copy()
        except KeyError:
            raise ValueError(f"unknown lighting preset {spec!r}") from None
    return as_lighting(spec)


@dataclass
class ScenePreset:
    """A synthetic surface.

    ``kind`` is one of ``sphere``, ``hemisphere``, ``blob``, ``ramp`` or
    ``composite``.  All kinds except ``hemisphere`` are seen by an
    orthographic camera with depth in pixel units; ``hemisphere`` is a
    sphere seen through perspective cameras (see :func:`hemisphere_views`).
    Unused parameters are ignored.
    """

    kind: str = "sphere"
    size: int = 128
    radius: float | None = None
    center: tuple | None = None
    sigma: float | None = None
    amplitude: float | None = None
    slope: tuple = (0.3, -0.2)
    albedo: float | str = 1.0
    #: fraction of the sphere radius kept in the mask (avoids grazing slopes)
    mask_fraction: float = 0.9
    n_views: int = 2
    view_angle: float = 25.0
    options: dict = field(default_factory=dict)


@dataclass
class Scene:
    image: np.ndarray
    depth: np.ndarray
    albedo: np.ndarray
    lighting: np.ndarray
    intr: Intrinsics
    mask: np.ndarray
    normals: np.ndarray
    pose: Pose = field(default_factory=Pose)
    grad_scheme: GradientScheme = GradientScheme.AVERAGED


def _sphere(size, radius, center, mask_fraction):
    xs, ys = pixel_grid((size, size))
    cx, cy = center
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    mask = r2 <= (mask_fraction * radius) ** 2
    depth = np.full((size, size), np.nan)
    # camera looks along +z, so the visible cap is the near side
    depth[mask] = 2 * radius - np.sqrt(radius**2 - r2[mask])
    return depth, mask


def _blob(size, sigma, amplitude, center):
    xs, ys = pixel_grid((size, size))
    cx, cy = center
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    depth = -amplitude * np.exp(-r2 / (2 * sigma**2))
    return depth, np.ones((size, size), dtype=bool)


def _composite(size):
    xs, ys = pixel_grid((size, size))
    s = size / 128.0
    depth = np.zeros((size, size))
    for cx, cy, sig, amp in [(40, 45, 14, 18), (88, 40, 10, -10), (64, 92, 18, 22), (98, 96, 8, 6)]:
        depth -= amp * s * np.exp(-((xs - cx * s) ** 2 + (ys - cy * s) ** 2) / (2 * (sig * s) ** 2))
    depth += 0.05 * xs
    return depth, np.ones((size, size), dtype=bool)


def _albedo_map(spec, shape, channels):
    if isinstance(spec, str):
        if spec != "pattern":
            raise ValueError(f"unknown albedo spec {spec!r}")
        xs, ys = pixel_grid(shape)
        base = 0.8 + 0.15 * np.sin(xs / 9.0) * np.cos(ys / 13.0)
        return np.repeat(base[..., None], channels, axis=2)
    return np.full(shape + (channels,), float(spec))


def discrete_normals(depth, intr: Intrinsics, mask, grad=GradientScheme.AVERAGED):
    """Unit normals ``(H, W, 3)`` from the discrete gradient of ``depth``; NaN off-mask."""
    domain = MaskDomain.build(mask, intr, grad)
    z = domain.gather(depth)
    g = domain.gradient(z)
    n = normal_from_gradient(g[:, 0], g[:, 1], intr, domain.xs, domain.ys)
    return domain.scatter(n)


def _finish_scene(depth, mask, intr, lighting, albedo_spec, noise_sd, seed, grad, pose=None):
    L = lighting_preset(lighting)
    albedo = _albedo_map(albedo_spec, mask.shape, L.shape[0])
    image = render(depth, albedo, L, intr, mask, grad)
    if noise_sd > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, noise_sd, image.shape)
        image = np.where(mask[..., None], image + noise, np.nan)
    normals = discrete_normals(depth, intr, mask, grad)
    albedo = np.where(mask[..., None], albedo, np.nan)
    return Scene(image, depth, albedo, L, intr, mask, normals, pose or Pose(), GradientScheme(grad))


def generate_scene(preset: ScenePreset | str = "sphere", lighting="l1", noise_sd=0.0, seed=0,
                   grad=GradientScheme.AVERAGED) -> Scene:
    """Render a synthetic scene and return it with all ground truth."""
    if isinstance(preset, str):
        preset = ScenePreset(kind=preset)
    size = preset.size
    center = preset.center or ((size - 1) / 2.0, (size - 1) / 2.0)
    kind = preset.kind.lower()
    intr = Intrinsics.orthographic()
    if kind == "sphere":
        radius = preset.radius or 0.44 * size
        depth, mask = _sphere(size, radius, center, preset.mask_fraction)
    elif kind == "blob":
        depth, mask = _blob(size, preset.sigma or size / 6.0, preset.amplitude or size / 5.0, center)
    elif kind == "ramp":
        xs, ys = pixel_grid((size, size))
        depth = preset.slope[0] * xs + preset.slope[1] * ys
        mask = np.ones((size, size), dtype=bool)
    elif kind == "composite":
        depth, mask = _composite(size)
    elif kind == "hemisphere":
        views = hemisphere_views(preset, lighting, noise_sd, seed, grad)
        return views[0]
    else:
        raise ValueError(f"unknown scene kind {preset.kind!r}")
    return _finish_scene(depth, mask, intr, lighting, preset.albedo, noise_sd, seed, grad)


def sphere_depth_perspective(intr: Intrinsics, pose: Pose, shape, radius, center=(0, 0, 0),
                             max_angle=70.0):
    """Log-depth of a sphere seen by a perspective camera, and the visible mask.

    Pixels whose surface normal makes more than ``max_angle`` degrees with
    the viewing ray are left out of the mask.
    """
    xs, ys = pixel_grid(shape)
    rays_cam = camera_rays(xs, ys, intr)
    rays = rays_cam @ pose.R.T
    oc = pose.t - np.asarray(center, dtype=float)
    a = np.sum(rays * rays, axis=-1)
    b = 2 * np.sum(rays * oc, axis=-1)
    c = oc @ oc - radius**2
    disc = b * b - 4 * a * c
    hit = disc > 0
    lam = np.full(shape, np.nan)
    lam[hit] = (-b[hit] - np.sqrt(disc[hit])) / (2 * a[hit])
    pts = pose.t + lam[..., None] * rays
    nrm = (pts - center) / radius
    cosang = -np.sum(nrm * rays, axis=-1) / np.sqrt(a)
    mask = hit & (lam > 0) & (cosang >= np.cos(np.deg2rad(max_angle)))
    z = np.full(shape, np.nan)
    # lam multiplies a ray with unit camera-z component, so it is the camera depth
    z[mask] = np.log(lam[mask])
    return z, mask


def hemisphere_views(preset: ScenePreset | None = None, lighting="l3", noise_sd=0.0, seed=0,
                     grad=GradientScheme.AVERAGED, radius=5e5, distance=5e6, focal=None):
    """Perspective views of a sphere from cameras on a horizontal arc.

    Cameras sit at ``distance`` from the sphere centre, ``view_angle``
    degrees apart, all looking at the centre.  The same camera-frame
    lighting is used for every view.  Returns a list of :class:`Scene`.
    """
    preset = preset or ScenePreset(kind="hemisphere")
    size = preset.size
    radius = preset.options.get("radius", radius) if preset.radius is None else preset.radius
    distance = preset.options.get("distance", distance)
    if focal is None:
        # sphere silhouette spans about 80 % of the image
        focal = preset.options.get("focal", 0.4 * size * np.sqrt(distance**2 - radius**2) / radius)
    c = (size - 1) / 2.0
    intr = Intrinsics.perspective(focal, c, c)
    views = []
    n = preset.n_views
    for v in range(n):
        ang = np.deg2rad(preset.view_angle * (v - (n - 1) / 2.0))
        center = distance * np.array([np.sin(ang), 0.0, -np.cos(ang)])
        pose = look_at(center, (0.0, 0.0, 0.0))
        z, mask = sphere_depth_perspective(intr, pose, (size, size), radius,
                                           max_angle=preset.options.get("max_angle", 70.0))
        views.append(_finish_scene(z, mask, intr, lighting, preset.albedo, noise_sd, seed + v, grad, pose))
    return views


def smooth_depth(depth, mask, sigma):
    """Mask-aware Gaussian smoothing (normalized convolution)."""
    mask = np.asarray(mask, dtype=bool)
    z = np.where(mask, depth, 0.0)
    num = gaussian_filter(z, sigma, mode="nearest")
    den = gaussian_filter(mask.astype(float), sigma, mode="nearest")
    out = np.full(mask.shape, np.nan)
    out[mask] = num[mask] / den[mask]
    return out


def mae_normals(est, gt_normals, intr: Intrinsics, mask, grad=GradientScheme.AVERAGED) -> float:
    """Mean angular error in degrees between normals of ``est`` and ``gt_normals``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyDomain("empty mask")
    n_est = discrete_normals(est, intr, mask, grad)[mask]
    return mean_angle(n_est, np.asarray(gt_normals, dtype=float)[mask])


def mean_angle(n1, n2) -> float:
    """Mean angle in degrees between two stacks of (not necessarily unit) vectors."""
    n1 = n1 / np.linalg.norm(n1, axis=-1, keepdims=True)
    n2 = n2 / np.linalg.norm(n2, axis=-1, keepdims=True)
    cos = np.clip(np.sum(n1 * n2, axis=-1), -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(cos))))


def rmse_image(I_est, I_in, mask) -> float:
    """Root mean square difference over masked pixels and all channels."""
    I_est = np.asarray(I_est, dtype=float)
    I_in = np.asarray(I_in, dtype=float)
    if I_est.shape != I_in.shape:
        raise DimensionMismatch(f"image shapes differ: {I_est.shape} vs {I_in.shape}")
    mask = np.asarray(mask, dtype=bool)
    if I_est.shape[:2] != mask.shape:
        raise DimensionMismatch(f"mask shape {mask.shape} does not match images {I_est.shape[:2]}")
    diff = (I_est - I_in)[mask]
    return float(np.sqrt(np.mean(diff**2)))


def calibrate_lighting(I, rough_depth, rho, intr: Intrinsics, mask,
                       grad=GradientScheme.AVERAGED) -> np.ndarray:
    """Per-channel least-squares fit of the nine lighting coefficients.

    Normals come from the discrete gradient of ``rough_depth``.  Raises
    :class:`RankDeficient` when the basis samples do not span all nine
    coefficients.
    """
    domain = MaskDomain.build(mask, intr, grad)
    I = np.asarray(I, dtype=float)
    if I.ndim == 2:
        I = I[..., None]
    C = I.shape[2]
    z = domain.gather(rough_depth)
    g = domain.gradient(z)
    B = sh_basis(normal_from_gradient(g[:, 0], g[:, 1], intr, domain.xs, domain.ys))
    rho_p = albedo_pixels(domain, rho, C)
    Ip = domain.gather(I)
    L = np.zeros((C, 9))
    for c in range(C):
        A = rho_p[:, c : c + 1] * B
        rank = np.linalg.matrix_rank(A)
        if rank < 9:
            raise RankDeficient(rank, c)
        L[c] = np.linalg.lstsq(A, Ip[:, c], rcond=None)[0]
    return L


def generate_matches(views, count, seed=0, pair=(0, 1), depth_tol=1e-3):
    """Random ground-truth correspondences between two perspective views.

    Pixels of view ``i`` are drawn without replacement; each one is
    backprojected with its ground-truth log-depth, projected into view
    ``j`` and rounded to the nearest pixel.  A candidate is kept when the
    rounded pixel lies in view ``j``'s mask and passes a z-buffer test
    against view ``j``'s ground-truth depth (relative tolerance
    ``depth_tol`` plus the depth change across one pixel).

    Returns a :class:`~mvsfs.multiview.CorrespondenceSet`.
    """
    from .multiview import CorrespondenceSet

    i, j = pair
    vi, vj = views[i], views[j]
    rng = np.random.default_rng(seed)
    ys, xs = np.nonzero(vi.mask)
    order = rng.permutation(len(ys))
    x_pts = backproject(xs[order], ys[order], vi.depth[ys[order], xs[order]], vi.intr, vi.pose)
    px, py, pdepth = project(x_pts, vj.intr, vj.pose)
    h, w = vj.mask.shape
    qx = np.rint(px).astype(int)
    qy = np.rint(py).astype(int)
    inside = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h) & (pdepth > 0)
    ok = np.zeros(len(order), dtype=bool)
    zj = np.exp(vj.depth)
    gy, gx = np.gradient(np.where(vj.mask, zj, np.nan))
    slope = np.nan_to_num(np.abs(gx) + np.abs(gy), nan=0.0)
    qi = np.flatnonzero(inside)
    qxi, qyi = qx[qi], qy[qi]
    in_mask = vj.mask[qyi, qxi]
    zbuf = zj[qyi, qxi]
    vis = in_mask & (np.abs(zbuf - pdepth[qi]) <= depth_tol * pdepth[qi] + slope[qyi, qxi])
    ok[qi[vis]] = True
    sel = np.flatnonzero(ok)[:count]
    if len(sel) < count:
        raise NotEnoughVisiblePixels(f"only {len(sel)} co-visible pixels, {count} requested")
    sel = np.sort(sel)
    matches = [
        (i, int(xs[order[k]]), int(ys[order[k]]), j, int(qx[k]), int(qy[k])) for k in sel
    ]
    return CorrespondenceSet(matches)


__all__ = [
    "EIKONAL", "L1", "L2", "L3", "LIGHTING_PRESETS", "Scene", "ScenePreset",
    "calibrate_lighting", "discrete_normals", "generate_matches", "generate_scene",
    "hemisphere_views", "lighting_preset", "mae_normals", "mean_angle", "rmse_image",
    "smooth_depth", "sphere_depth_perspective",
]
