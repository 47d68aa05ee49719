"""Orthographic flat-shaded rasterization of a coarse triangle mesh.

Conventions: pixel ``(row, col)`` has its center at image coordinates
``(x=col, y=row)``. The camera looks down the -z axis from +z, so larger
depth is closer. Model +y maps to image up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MeshFormatError, ShapeMismatchError

# Projected vertices are snapped to 1/256 px so edge tests are exact and
# integer translations shift coverage exactly.
_SUBPIXEL = 256.0


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) == 0:
            raise MeshFormatError("mesh has no faces")
        if not np.all(np.isfinite(v)):
            raise MeshFormatError("mesh has non-finite vertices")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshFormatError("face index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def radius(self) -> float:
        return float(np.sqrt((self.vertices**2).sum(axis=1)).max())


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class Pose:
    """Rotations about x, y, z (radians) and the image-plane position in px."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.tx, self.ty)


@dataclass(frozen=True)
class RenderConfig:
    width: int = 40
    height: int = 40
    ortho_scale: float = 10.0
    light_dir: tuple[float, float, float] = field(
        default=(0.3, 0.4, math.sqrt(1.0 - 0.3**2 - 0.4**2))
    )
    ambient: float = 0.2

    def __post_init__(self):
        if not self.ortho_scale > 0:
            raise DataError(f"ortho_scale must be positive, got {self.ortho_scale}")
        if self.width < 1 or self.height < 1:
            raise DataError("image dimensions must be positive")
        norm = math.sqrt(sum(c * c for c in self.light_dir))
        if abs(norm - 1.0) > 1e-9:
            raise DataError(f"light_dir must be a unit vector (norm {norm})")
        if not 0.0 <= self.ambient <= 1.0:
            raise DataError("ambient must lie in [0, 1]")

    def with_size(self, width: int, height: int) -> "RenderConfig":
        return RenderConfig(width, height, self.ortho_scale, self.light_dir, self.ambient)


def load_mesh(path) -> Mesh:
    """Read the ``v``/``f`` subset of a Wavefront OBJ file.

    Face tokens may carry ``/vt/vn`` suffixes, which are ignored. Polygons
    are fan-triangulated around their first vertex.
    """
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0] not in ("v", "f"):
                continue
            try:
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                    verts.append([float(p) for p in parts[1:4]])
                else:
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) < 3:
                        raise ValueError("face needs at least 3 vertices")
                    for k in range(1, len(idx) - 1):
                        faces.append((idx[0] - 1, idx[k] - 1, idx[k + 1] - 1))
            except ValueError as exc:
                raise MeshFormatError(f"{path}:{lineno}: malformed line: {exc}") from None
    if not faces:
        raise MeshFormatError(f"{path}: no faces")
    flat = [i for f in faces for i in f]
    if min(flat) < 0 or max(flat) >= len(verts):
        raise MeshFormatError(f"{path}: face index out of range (have {len(verts)} vertices)")
    return Mesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %r %r %r\n" % tuple(float(c) for c in v))
        for f in mesh.faces:
            fh.write("f %d %d %d\n" % tuple(int(i) + 1 for i in f))


def rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rz(gamma) @ Ry(beta) @ Rx(alpha)."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]])
    return rz @ ry @ rx


def project(mesh: Mesh, pose: Pose, cfg: RenderConfig) -> np.ndarray:
    """Image-space vertex positions ``(V, 3)``: snapped x, y and model depth z."""
    rot = mesh.vertices @ rotation_matrix(pose.alpha, pose.beta, pose.gamma).T
    xy = np.empty_like(rot)
    xy[:, 0] = pose.tx + cfg.ortho_scale * rot[:, 0]
    xy[:, 1] = pose.ty - cfg.ortho_scale * rot[:, 1]
    xy[:, :2] = np.round(xy[:, :2] * _SUBPIXEL) / _SUBPIXEL
    xy[:, 2] = rot[:, 2]
    return xy


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


_CHUNK_ELEMS = 1 << 21


def rasterize(mesh: Mesh, pose: Pose, cfg: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Depth-buffered coverage.

    Returns ``(face_id, depth)``: the index of the visible face per pixel
    (-1 where empty) and its interpolated depth (-inf where empty). A pixel
    is covered when its center is strictly inside a triangle or on a top or
    left edge, so triangles sharing an edge never double-cover it. At equal
    depth the lower face index wins.
    """
    h, w = cfg.height, cfg.width
    face_id = np.full((h, w), -1, dtype=np.int64)
    depth = np.full((h, w), -np.inf)
    pts = project(mesh, pose, cfg)
    c0 = max(int(math.ceil(pts[:, 0].min())), 0)
    c1 = min(int(math.floor(pts[:, 0].max())), w - 1)
    r0 = max(int(math.ceil(pts[:, 1].min())), 0)
    r1 = min(int(math.floor(pts[:, 1].max())), h - 1)
    if c0 > c1 or r0 > r1:
        return face_id, depth
    py, px = np.mgrid[r0 : r1 + 1, c0 : c1 + 1].astype(np.float64)
    tri = pts[mesh.faces]
    area = _edge(tri[:, 0, 0], tri[:, 0, 1], tri[:, 1, 0], tri[:, 1, 1], tri[:, 2, 0], tri[:, 2, 1])
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]  # counter-clockwise winding
    area = np.abs(area)
    keep = np.flatnonzero(area != 0)
    win = (slice(r0, r1 + 1), slice(c0, c1 + 1))
    dwin, fwin = depth[win], face_id[win]
    step = max(1, _CHUNK_ELEMS // px.size)
    for s in range(0, keep.size, step):
        idx = keep[s : s + step]
        t = tri[idx][:, :, :, None, None]
        inside = np.ones((idx.size,) + px.shape, dtype=bool)
        z = np.zeros(inside.shape)
        for a, b, c in ((1, 2, 0), (2, 0, 1), (0, 1, 2)):
            ax, ay, bx, by = t[:, a, 0], t[:, a, 1], t[:, b, 0], t[:, b, 1]
            e = _edge(ax, ay, bx, by, px, py)
            dy = by - ay
            top_left = (dy < 0) | ((dy == 0) & (bx > ax))
            inside &= (e > 0) | ((e == 0) & top_left)
            z += e * t[:, c, 2]
        z = np.where(inside, z / area[idx][:, None, None], -np.inf)
        best = np.argmax(z, axis=0)  # first maximum keeps the lower index
        zb = np.take_along_axis(z, best[None], 0)[0]
        closer = zb > dwin
        dwin[closer] = zb[closer]
        fwin[closer] = idx[best[closer]]
    return face_id, depth


def face_shading(mesh: Mesh, pose: Pose, cfg: RenderConfig) -> np.ndarray:
    """Per-face Lambertian term max(0, n.l) with normals turned toward the camera."""
    rot = mesh.vertices @ rotation_matrix(pose.alpha, pose.beta, pose.gamma).T
    a, b, c = rot[mesh.faces[:, 0]], rot[mesh.faces[:, 1]], rot[mesh.faces[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1)
    norm[norm == 0] = 1.0
    n /= norm[:, None]
    n[n[:, 2] < 0] *= -1.0
    return np.maximum(0.0, n @ np.asarray(cfg.light_dir, dtype=np.float64))


def render_object(mesh: Mesh, pose: Pose, w_d: float, cfg: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Render the object layer and its silhouette mask.

    Covered pixels get ``clamp(ambient + w_d * max(0, n.l))``; uncovered
    pixels of the layer are zero.
    """
    face_id, _ = rasterize(mesh, pose, cfg)
    return shade(face_id, face_shading(mesh, pose, cfg), w_d, cfg.ambient)


def shade(face_id: np.ndarray, lambert: np.ndarray, w_d: float, ambient: float):
    mask = face_id >= 0
    layer = np.zeros(face_id.shape)
    layer[mask] = np.clip(ambient + w_d * lambert[face_id[mask]], 0.0, 1.0)
    return layer, mask


def composite(layer: np.ndarray, mask: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Layer where the mask is set, background elsewhere.

    A grayscale layer over a color background is broadcast across channels.
    """
    layer = np.asarray(layer, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != background.shape[:2] or layer.shape[:2] != mask.shape:
        raise ShapeMismatchError(
            f"layer {layer.shape}, mask {mask.shape} and background {background.shape} differ"
        )
    if layer.ndim == 2 and background.ndim == 3:
        layer = np.repeat(layer[:, :, None], background.shape[2], axis=2)
    elif layer.shape != background.shape:
        raise ShapeMismatchError(f"layer {layer.shape} does not match background {background.shape}")
    sel = mask if background.ndim == 2 else mask[:, :, None]
    return np.where(sel, layer, background)
