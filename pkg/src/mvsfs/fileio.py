"""File formats: PFM rasters, PNG images and masks, match and lighting text
files, ASCII PLY point clouds, and the JSON scene configuration.

Every text writer uses shortest round-trip float formatting, so saving a
loaded file reproduces its values bit for bit.  PNG images are read as
linear intensities: 8- and 16-bit samples are divided by 255 or 65535 and
no gamma curve is applied.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError
from .geometry import Intrinsics, Pose
from .multiview import CorrespondenceSet, PointCloud

# --------------------------------------------------------------------------- PFM

_PFM_HEADER = re.compile(rb"\A(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def write_pfm(path, data):
    """Write a ``(H, W)`` or ``(H, W, 3)`` array as little-endian float32 PFM.

    Rows are stored bottom to top as the format requires.  NaN values are
    kept.
    """
    arr = np.asarray(data)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(arr[::-1], dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(body.tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array, top row first."""
    raw = Path(path).read_bytes()
    m = _PFM_HEADER.match(raw)
    if m is None:
        raise ParseError("not a PFM header", path=path, line=1)
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    try:
        scale = float(scale)
    except ValueError:
        raise ParseError(f"bad PFM scale {scale!r}", path=path, line=3) from None
    if scale == 0:
        raise ParseError("PFM scale must be nonzero", path=path, line=3)
    ch = 3 if tag == b"PF" else 1
    offset = m.end()
    need = w * h * ch * 4
    if len(raw) - offset < need:
        raise ParseError(
            f"PFM data truncated at byte {len(raw)}: expected {need} bytes after offset {offset}",
            path=path,
        )
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(raw, dtype=dtype, count=w * h * ch, offset=offset).astype(np.float32)
    arr = arr.reshape((h, w, ch) if ch == 3 else (h, w))
    return arr[::-1].copy()


# --------------------------------------------------------------------------- PNG


def read_png(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG as linear ``[0, 1]`` floats, ``(H, W)`` or ``(H, W, 3)``."""
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise ParseError(f"cannot read image: {exc}", path=path) from None
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode in ("L", "RGB"):
        arr = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode in ("RGBA", "LA", "P", "1"):
        img = img.convert("RGB" if img.mode in ("RGBA", "P") else "L")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    else:
        raise ParseError(f"unsupported PNG mode {img.mode}", path=path)
    return arr


def write_png(path, image, bits=8):
    """Write ``[0, 1]`` intensities as PNG, clipped, no gamma; NaN becomes 0.

    ``bits=16`` is supported for single-channel images.
    """
    arr = np.nan_to_num(np.asarray(image, dtype=float), nan=0.0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    arr = np.clip(arr, 0.0, 1.0)
    if bits == 16:
        if arr.ndim != 2:
            raise ValueError("16-bit PNG output is single-channel only")
        Image.fromarray(np.rint(arr * 65535).astype(np.uint16)).save(path)
    elif bits == 8:
        Image.fromarray(np.rint(arr * 255).astype(np.uint8)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_mask(path) -> np.ndarray:
    """Boolean mask: nonzero pixels (any channel) are inside."""
    arr = read_png(path)
    return arr.any(axis=2) if arr.ndim == 3 else arr > 0


def write_mask(path, mask):
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255).save(path)


def read_image(path) -> np.ndarray:
    """Image by extension: PFM (raw floats) or PNG."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path).astype(np.float64)
    return read_png(path)


# --------------------------------------------------------------------------- text files


def _fmt(v) -> str:
    return repr(float(v))


def _data_lines(path):
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError:
        raise ParseError("file is not text", path=path) from None
    for k, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            yield k, body.split()


def read_matches(path) -> CorrespondenceSet:
    """Parse ``i x_i y_i j x_j y_j`` lines (0-based integers, ``#`` comments)."""
    rows = []
    for k, tok in _data_lines(path):
        if len(tok) != 6:
            raise ParseError(f"expected 6 integers, found {len(tok)} fields", path=path, line=k)
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise ParseError(f"non-integer field in {' '.join(tok)!r}", path=path, line=k) from None
        if min(vals) < 0:
            raise ParseError("negative index", path=path, line=k)
        rows.append(vals)
    try:
        return CorrespondenceSet(rows)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None


def write_matches(path, matches: CorrespondenceSet):
    with open(path, "w") as fh:
        fh.write("# i x_i y_i j x_j y_j\n")
        for m in matches:
            fh.write(" ".join(str(v) for v in m) + "\n")


def read_lighting(path) -> np.ndarray:
    """``C`` lines of 9 coefficients; returns a ``(C, 9)`` array."""
    rows = []
    for k, tok in _data_lines(path):
        if len(tok) != 9:
            raise ParseError(f"expected 9 coefficients, found {len(tok)}", path=path, line=k)
        try:
            rows.append([float(t) for t in tok])
        except ValueError:
            raise ParseError(f"non-numeric coefficient in {' '.join(tok)!r}", path=path, line=k) from None
    if not rows:
        raise ParseError("no lighting coefficients", path=path)
    return np.array(rows)


def write_lighting(path, L):
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[1] != 9:
        raise ValueError(f"lighting must have 9 columns, got {L.shape}")
    with open(path, "w") as fh:
        for row in L:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


# --------------------------------------------------------------------------- PLY


def write_ply(path, cloud: PointCloud):
    """ASCII PLY with float positions and, if present, uchar RGB colors."""
    n = len(cloud)
    colors = None
    if cloud.colors is not None:
        c = np.asarray(cloud.colors, dtype=float)
        if c.shape[1] == 1:
            c = np.repeat(c, 3, axis=1)
        if c.shape[1] == 3:
            colors = np.rint(np.clip(np.nan_to_num(c), 0, 1) * 255).astype(int)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if colors is not None:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for k in range(n):
            line = " ".join(_fmt(v) for v in cloud.positions[k])
            if colors is not None:
                line += " " + " ".join(str(v) for v in colors[k])
            fh.write(line + "\n")


def read_ply(path):
    """Read an ASCII PLY written by :func:`write_ply`; returns ``(positions, colors or None)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", path=path, line=1)
    n = None
    props = []
    k = 1
    while k < len(lines):
        tok = lines[k].split()
        k += 1
        if not tok:
            continue
        if tok[0] == "format" and tok[1:2] != ["ascii"]:
            raise ParseError("only ASCII PLY is supported", path=path, line=k)
        if tok[0] == "element" and tok[1] == "vertex":
            n = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    else:
        raise ParseError("missing end_header", path=path)
    if n is None:
        raise ParseError("no vertex element", path=path)
    data = []
    for j in range(n):
        if k + j >= len(lines):
            raise ParseError(f"expected {n} vertices, found {j}", path=path, line=k + j + 1)
        tok = lines[k + j].split()
        if len(tok) != len(props):
            raise ParseError(f"expected {len(props)} values", path=path, line=k + j + 1)
        data.append([float(t) for t in tok])
    data = np.array(data).reshape(n, len(props))
    colors = data[:, 3:6].astype(int) if len(props) >= 6 else None
    return data[:, :3], colors


# --------------------------------------------------------------------------- scene configuration


@dataclass
class ViewConfig:
    """One view of a scene; paths are absolute after loading."""

    image: str
    mask: str
    lighting: str | list
    intrinsics: Intrinsics
    pose: Pose = field(default_factory=Pose)
    albedo: float | str = 1.0
    gt_depth: str | None = None

    def to_dict(self, root=None) -> dict:
        def rel(p):
            if p is None or root is None or not isinstance(p, str):
                return p
            return os.path.relpath(p, root)

        lighting = self.lighting
        if isinstance(lighting, str) and os.path.sep in lighting:
            lighting = rel(lighting)
        return {
            "image": rel(self.image),
            "mask": rel(self.mask),
            "lighting": lighting,
            "albedo": rel(self.albedo) if isinstance(self.albedo, str) else self.albedo,
            "intrinsics": self.intrinsics.to_dict(),
            "pose": self.pose.to_dict(),
            "gt_depth": rel(self.gt_depth),
        }


@dataclass
class SceneConfig:
    """Scene description: views, optional matches, solver and coupling options."""

    views: list
    matches: str | None = None
    solver: dict = field(default_factory=dict)
    coupling: dict = field(default_factory=dict)
    output: str = "out"
    nominal_depth: float | None = None
    seed: int = 0
    root: str = "."

    def to_dict(self) -> dict:
        return {
            "views": [v.to_dict(self.root) for v in self.views],
            "matches": os.path.relpath(self.matches, self.root) if self.matches else None,
            "solver": dict(self.solver),
            "coupling": dict(self.coupling),
            "output": os.path.relpath(self.output, self.root),
            "nominal_depth": self.nominal_depth,
            "seed": self.seed,
        }


_SOLVER_KEYS = {
    "beta0", "mu", "tau", "stop_tol", "stop_patience", "max_outer_iters", "cg_tol",
    "cg_max_iters", "newton_tol", "newton_max_iters", "grad_scheme", "backend",
}


def _resolve(root, p, what, path, must_exist=True):
    if not isinstance(p, str) or not p:
        raise ParseError(f"{what} must be a path string", path=path)
    full = p if os.path.isabs(p) else os.path.normpath(os.path.join(root, p))
    if must_exist and not os.path.exists(full):
        raise ParseError(f"{what} not found: {p}", path=path)
    return full


def load_scene_config(path) -> SceneConfig:
    """Load and validate a JSON scene configuration.

    Relative paths are resolved against the file's directory; every
    referenced input must exist.
    """
    path = os.fspath(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg} (column {exc.colno})", path=path, line=exc.lineno) from None
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc.strerror}", path=path) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", path=path)
    root = os.path.dirname(os.path.abspath(path))
    raw_views = doc.get("views")
    if not isinstance(raw_views, list) or not raw_views:
        raise ParseError("'views' must be a non-empty list", path=path)
    top_mask = doc.get("mask")
    views = []
    for k, v in enumerate(raw_views):
        if not isinstance(v, dict):
            raise ParseError(f"view {k} must be an object", path=path)
        try:
            intr = Intrinsics.from_dict(v.get("intrinsics", {"mode": "orthographic"}))
            pose = Pose.from_dict(v["pose"]) if v.get("pose") else Pose()
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"view {k}: bad camera: {exc}", path=path) from None
        lighting = v.get("lighting", "l1")
        if isinstance(lighting, str) and lighting.lower() not in ("l1", "l2", "l3", "eikonal"):
            lighting = _resolve(root, lighting, f"view {k} lighting", path)
        elif not isinstance(lighting, (str, list)):
            raise ParseError(f"view {k}: lighting must be a preset, path or list", path=path)
        albedo = v.get("albedo", 1.0)
        if isinstance(albedo, str):
            albedo = _resolve(root, albedo, f"view {k} albedo", path)
        elif not isinstance(albedo, (int, float)) or not albedo > 0:
            raise ParseError(f"view {k}: albedo must be a positive number or a path", path=path)
        mask = v.get("mask", top_mask)
        views.append(ViewConfig(
            image=_resolve(root, v.get("image"), f"view {k} image", path),
            mask=_resolve(root, mask, f"view {k} mask", path),
            lighting=lighting,
            intrinsics=intr,
            pose=pose,
            albedo=float(albedo) if not isinstance(albedo, str) else albedo,
            gt_depth=_resolve(root, v["gt_depth"], f"view {k} gt_depth", path) if v.get("gt_depth") else None,
        ))
    solver = doc.get("solver", {}) or {}
    unknown = set(solver) - _SOLVER_KEYS
    if unknown:
        raise ParseError(f"unknown solver options: {sorted(unknown)}", path=path)
    coupling = doc.get("coupling", {}) or {}
    lam = coupling.get("lambda", 1e-5)
    if not isinstance(lam, (int, float)) or lam < 0:
        raise ParseError("coupling.lambda must be a non-negative number", path=path)
    matches = doc.get("matches")
    nominal = doc.get("nominal_depth")
    if nominal is not None and not (isinstance(nominal, (int, float)) and nominal > 0):
        raise ParseError("nominal_depth must be positive", path=path)
    cfg = SceneConfig(
        views=views,
        matches=_resolve(root, matches, "matches", path) if matches else None,
        solver=dict(solver),
        coupling=dict(coupling),
        output=_resolve(root, doc.get("output", "out"), "output", path, must_exist=False),
        nominal_depth=float(nominal) if nominal is not None else None,
        seed=int(doc.get("seed", 0)),
        root=root,
    )
    # option ranges are checked by the option classes themselves
    try:
        solver_options(cfg)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad solver options: {exc}", path=path) from None
    return cfg


def save_scene_config(path, cfg: SceneConfig):
    cfg.root = os.path.dirname(os.path.abspath(path))
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def solver_options(cfg: SceneConfig, **overrides):
    from .solver import SolverOptions

    opts = dict(cfg.solver)
    opts.update({k: v for k, v in overrides.items() if v is not None})
    return SolverOptions(**opts)


def load_view(vc: ViewConfig):
    """Arrays of one configured view as a :class:`~mvsfs.multiview.View`."""
    from .evalgen import lighting_preset
    from .multiview import View

    image = read_image(vc.image)
    mask = read_mask(vc.mask)
    if image.shape[:2] != mask.shape:
        raise ParseError(f"image {image.shape[:2]} and mask {mask.shape} sizes differ", path=vc.image)
    if isinstance(vc.lighting, str) and os.path.exists(vc.lighting):
        L = read_lighting(vc.lighting)
    else:
        L = lighting_preset(vc.lighting)
    albedo = read_image(vc.albedo) if isinstance(vc.albedo, str) else float(vc.albedo)
    return View(image, albedo, L, vc.intrinsics, vc.pose, mask)


def write_report(path, report: dict):
    """JSON report; NaN and infinities are written as strings."""

    def clean(v):
        if isinstance(v, float) and not np.isfinite(v):
            return str(v)
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return clean(v.item())
        return v

    Path(path).write_text(json.dumps(clean(report), indent=2) + "\n")


__all__ = [
    "SceneConfig", "ViewConfig", "load_scene_config", "load_view", "read_image", "read_lighting",
    "read_mask", "read_matches", "read_pfm", "read_ply", "read_png", "save_scene_config",
    "solver_options", "write_lighting", "write_mask", "write_matches", "write_pfm", "write_ply",
    "write_png", "write_report",
]
