"""Command-line interface.

Subcommands: ``gen-scene``, ``render``, ``solve``, ``solve-mv``,
``calibrate-light``, ``eval`` and ``fuse``.  All but ``gen-scene`` read a
JSON scene configuration (see :mod:`mvsfs.fileio`).

Exit status: 0 on success, 1 on invalid input, 2 when a solver stopped at
its iteration limit (the best iterate is still written).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import fileio
from .errors import MVSFSError
from .operators import GradientScheme

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors: exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


class _InputError(Exception):
    pass


# --------------------------------------------------------------------------- gen-scene


def _cmd_gen_scene(args):
    from .evalgen import ScenePreset, generate_matches, generate_scene, hemisphere_views
    from .solver import SolverOptions

    albedo = args.albedo if args.albedo == "pattern" else float(args.albedo)
    preset = ScenePreset(kind=args.preset, size=args.size, albedo=albedo, n_views=args.views)
    grad = GradientScheme(args.grad_scheme)
    out = args.out
    os.makedirs(out, exist_ok=True)
    if args.preset == "hemisphere":
        scenes = hemisphere_views(preset, args.lighting, args.noise, args.seed, grad)
    else:
        scenes = [generate_scene(preset, args.lighting, args.noise, args.seed, grad)]
    fileio.write_lighting(os.path.join(out, "lighting.txt"), scenes[0].lighting)
    views = []
    for k, sc in enumerate(scenes):
        names = {key: os.path.join(out, f"{key}_{k}.{ext}") for key, ext in
                 [("image", "pfm"), ("preview", "png"), ("mask", "png"), ("gt_depth", "pfm")]}
        fileio.write_pfm(names["image"], sc.image)
        fileio.write_png(names["preview"], sc.image)
        fileio.write_mask(names["mask"], sc.mask)
        fileio.write_pfm(names["gt_depth"], sc.depth)
        if albedo == "pattern":
            alb = os.path.join(out, f"albedo_{k}.pfm")
            fileio.write_pfm(alb, sc.albedo)
        else:
            alb = albedo
        views.append(fileio.ViewConfig(
            image=names["image"], mask=names["mask"], lighting=os.path.join(out, "lighting.txt"),
            intrinsics=sc.intr, pose=sc.pose, albedo=alb, gt_depth=names["gt_depth"],
        ))
    matches = None
    nominal = None
    if len(scenes) > 1:
        matches = os.path.join(out, "matches.txt")
        fileio.write_matches(matches, generate_matches(scenes, args.matches, seed=args.seed))
    if scenes[0].intr.is_perspective:
        nominal = float(np.median(np.exp(scenes[0].depth[scenes[0].mask])))
    cfg = fileio.SceneConfig(
        views=views, matches=matches,
        solver={"grad_scheme": grad.value, "max_outer_iters": SolverOptions().max_outer_iters},
        coupling={"lambda": 1e-5}, output=os.path.join(out, "out"),
        nominal_depth=nominal, seed=args.seed,
    )
    path = os.path.join(out, "scene.json")
    fileio.save_scene_config(path, cfg)
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------------- helpers


def _load(args):
    cfg = fileio.load_scene_config(args.config)
    return cfg, [fileio.load_view(v) for v in cfg.views]


def _pick(views, k):
    if not 0 <= k < len(views):
        raise _InputError(f"view {k} out of range (scene has {len(views)} views)")
    return views[k]


def _read_depth(path, view):
    d = fileio.read_pfm(path).astype(np.float64)
    if d.shape != view.mask.shape:
        raise _InputError(f"depth {d.shape} does not match mask {view.mask.shape}")
    if not np.all(np.isfinite(d[view.mask])):
        raise _InputError(f"depth {path} is not finite inside the mask")
    return d


def _options(cfg, args):
    return fileio.solver_options(
        cfg, max_outer_iters=getattr(args, "max_iters", None),
        grad_scheme=getattr(args, "grad_scheme", None), backend=getattr(args, "backend", None),
    )


def _output_dir(cfg, args):
    out = args.out or cfg.output
    os.makedirs(out, exist_ok=True)
    return out


# --------------------------------------------------------------------------- subcommands


def _cmd_render(args):
    from .shading import render

    cfg, views = _load(args)
    v = _pick(views, args.view)
    depth = _read_depth(args.depth, v)
    grad = fileio.solver_options(cfg).grad_scheme
    img = render(depth, v.albedo, v.lighting, v.intr, v.mask, grad)
    fileio.write_png(args.out + ".png", img)
    if img.shape[2] in (1, 3):
        fileio.write_pfm(args.out + ".pfm", img)
    print(args.out + ".png")
    return EXIT_OK


def _cmd_solve(args):
    from .solver import solve_sfs

    if args.lam is not None:
        raise _InputError("--lambda applies to multi-view solving only; use solve-mv")
    cfg, views = _load(args)
    v = _pick(views, args.view)
    init = _read_depth(args.init, v) if args.init else None
    opts = _options(cfg, args)
    depth, report = solve_sfs(v.image, v.albedo, v.lighting, v.intr, v.mask, init, opts,
                              cfg.nominal_depth)
    out = _output_dir(cfg, args)
    fileio.write_pfm(os.path.join(out, f"depth_view{args.view}.pfm"), depth)
    fileio.write_report(os.path.join(out, f"report_view{args.view}.json"), report.to_dict())
    print(f"iterations {report.iterations}  energy {report.final_energy:.6g}  "
          f"relative change {report.final_relative_residual:.3g}  converged {report.converged}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _cmd_solve_mv(args):
    from .multiview import CouplingOptions, solve_mvsfs

    cfg, views = _load(args)
    if cfg.matches is None:
        raise _InputError("scene has no matches file")
    matches = fileio.read_matches(cfg.matches)
    lam = args.lam if args.lam is not None else float(cfg.coupling.get("lambda", 1e-5))
    opts = CouplingOptions(lam=lam, solver=_options(cfg, args))
    depths, report = solve_mvsfs(views, matches, None, opts, cfg.nominal_depth)
    out = _output_dir(cfg, args)
    for k, d in enumerate(depths):
        fileio.write_pfm(os.path.join(out, f"depth_view{k}.pfm"), d)
    rep = report.to_dict()
    rep["lambda"] = lam
    fileio.write_report(os.path.join(out, "report.json"), rep)
    print(f"views {len(depths)}  lambda {lam:g}  iterations {report.iterations}  "
          f"energy {report.final_energy:.6g}  converged {report.converged}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _cmd_calibrate(args):
    from .evalgen import calibrate_lighting

    cfg, views = _load(args)
    v = _pick(views, args.view)
    depth = _read_depth(args.depth, v)
    rho = 1.0 if args.unit_albedo else v.albedo
    L = calibrate_lighting(v.image, depth, rho, v.intr, v.mask, fileio.solver_options(cfg).grad_scheme)
    if args.out:
        fileio.write_lighting(args.out, L)
    for row in L:
        print(" ".join(f"{c:.6g}" for c in row))
    return EXIT_OK


def _cmd_eval(args):
    from .evalgen import discrete_normals, mae_normals, rmse_image
    from .shading import render

    cfg, views = _load(args)
    v = _pick(views, args.view)
    depth = _read_depth(args.depth, v)
    grad = fileio.solver_options(cfg).grad_scheme
    gt_path = args.gt or cfg.views[args.view].gt_depth
    if gt_path:
        gt = _read_depth(gt_path, v)
        mae = mae_normals(depth, discrete_normals(gt, v.intr, v.mask, grad), v.intr, v.mask, grad)
        print(f"MAE-N {mae:.4f}")
    img = render(depth, v.albedo, v.lighting, v.intr, v.mask, grad)
    image = v.image if v.image.ndim == 3 else v.image[..., None]
    print(f"RMSE-I {rmse_image(img, image, v.mask):.6f}")
    return EXIT_OK


def _cmd_fuse(args):
    from .multiview import fuse_point_cloud

    cfg, views = _load(args)
    if args.depths:
        paths = args.depths
    else:
        paths = [os.path.join(cfg.output, f"depth_view{k}.pfm") for k in range(len(views))]
    if len(paths) != len(views):
        raise _InputError(f"{len(paths)} depth files for {len(views)} views")
    depths = [_read_depth(p, v) for p, v in zip(paths, views)]
    cloud = fuse_point_cloud(depths, views)
    out = args.out or os.path.join(cfg.output, "cloud.ply")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    fileio.write_ply(out, cloud)
    print(f"{len(cloud)} points -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mvsfs", description="Shape-from-shading under spherical-harmonics lighting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scene", help="write a synthetic scene directory")
    g.add_argument("--preset", default="sphere",
                   choices=["sphere", "hemisphere", "blob", "ramp", "composite"])
    g.add_argument("--lighting", default="l1", choices=["l1", "l2", "l3", "eikonal"])
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sd")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--albedo", default="1.0", help="constant value or 'pattern'")
    g.add_argument("--views", type=int, default=2, help="hemisphere views")
    g.add_argument("--matches", type=int, default=150, help="hemisphere matches")
    g.add_argument("--grad-scheme", default="averaged", choices=[s.value for s in GradientScheme])
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_scene)

    def scene_cmd(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="scene JSON")
        s.set_defaults(func=func)
        return s

    def solver_flags(s):
        s.add_argument("--max-iters", type=int)
        s.add_argument("--grad-scheme", choices=[x.value for x in GradientScheme])
        s.add_argument("--backend", choices=["python", "cython"])
        s.add_argument("--out", help="output directory (default: the scene's)")

    s = scene_cmd("render", _cmd_render, "render a depth file with a view's lighting")
    s.add_argument("--depth", required=True)
    s.add_argument("--view", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix; writes .png and .pfm")

    s = scene_cmd("solve", _cmd_solve, "single-view reconstruction")
    s.add_argument("--view", type=int, default=0)
    s.add_argument("--init", help="initial depth PFM")
    s.add_argument("--lambda", dest="lam", type=float, help=argparse.SUPPRESS)
    solver_flags(s)

    s = scene_cmd("solve-mv", _cmd_solve_mv, "coupled multi-view reconstruction")
    s.add_argument("--lambda", dest="lam", type=float, help="coupling weight (default 1e-5)")
    solver_flags(s)

    s = scene_cmd("calibrate-light", _cmd_calibrate, "fit lighting to a rough depth map")
    s.add_argument("--depth", required=True)
    s.add_argument("--view", type=int, default=0)
    s.add_argument("--unit-albedo", action="store_true", help="assume albedo 1")
    s.add_argument("--out", help="lighting file to write")

    s = scene_cmd("eval", _cmd_eval, "print MAE-N and RMSE-I of a depth file")
    s.add_argument("--depth", required=True)
    s.add_argument("--view", type=int, default=0)
    s.add_argument("--gt", help="ground-truth depth (default: the scene's)")

    s = scene_cmd("fuse", _cmd_fuse, "fuse depth files into a PLY point cloud")
    s.add_argument("--depths", nargs="+")
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _InputError as exc:
        parser.print_usage(sys.stderr)
        print(f"mvsfs {args.command}: error: {exc}", file=sys.stderr)
    except (MVSFSError, ValueError, OSError) as exc:
        print(f"mvsfs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
