"""Mesh ingestion, surface sampling, viewpoints, augmentation, splatting.

Sampling and augmentation are pure functions of (input, seed); geometry
math runs in float64 and point clouds are stored as float32, matching the
on-disk UPC1 layout.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "Mesh",
    "PointCloud",
    "Viewpoint",
    "AugmentSpec",
    "MeshError",
    "UnreadableMeshError",
    "MeshSyntaxError",
    "MeshIndexError",
    "EmptyMeshError",
    "DegenerateMeshError",
    "PointCloudFormatError",
    "load_mesh",
    "sample_surface",
    "farthest_point_sample",
    "normalize_unit_sphere",
    "make_viewpoints",
    "augment",
    "render_pointsplat",
    "write_pointcloud",
    "read_pointcloud",
]

UPC1_MAGIC = b"UPC1"


class MeshError(ValueError):
    pass


class UnreadableMeshError(MeshError):
    pass


class MeshSyntaxError(MeshError):
    pass


class MeshIndexError(MeshError):
    pass


class EmptyMeshError(MeshError):
    pass


class DegenerateMeshError(MeshError):
    pass


class PointCloudFormatError(ValueError):
    pass


@dataclasses.dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64 vertex indices

    def validate(self) -> None:
        if self.triangles.shape[0] < 1:
            raise EmptyMeshError("mesh has no triangles")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("mesh has non-finite vertices")
        if self.triangles.min(initial=0) < 0 or \
                self.triangles.max(initial=-1) >= len(self.vertices):
            raise MeshIndexError("triangle index out of range")


@dataclasses.dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float32
    colors: np.ndarray | None = None  # (N, 3) float32 in [0, 1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def validate(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.n < 1:
            raise ValueError(f"point cloud must be (N>=1, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.colors is not None:
            if self.colors.shape != self.points.shape:
                raise ValueError("colors must match points shape")
            if self.colors.min() < 0.0 or self.colors.max() > 1.0:
                raise ValueError("colors must lie in [0, 1]")


@dataclasses.dataclass(frozen=True)
class Viewpoint:
    azimuth: float  # degrees in [0, 360)
    elevation: float  # degrees
    index: int


@dataclasses.dataclass(frozen=True)
class AugmentSpec:
    rotate_z: bool = False
    scale_range: tuple[float, float] = (1.0, 1.0)
    jitter_sigma: float = 0.0
    dropout_rate: float = 0.0

    def validate(self) -> None:
        lo, hi = self.scale_range
        if lo > hi:
            raise ValueError(f"scale_range lo {lo} > hi {hi}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.jitter_sigma < 0.0:
            raise ValueError("jitter_sigma must be >= 0")


def load_mesh(path) -> Mesh:
    """Parse an OBJ subset: `v x y z` and `f i j k [l ...]` lines.

    Polygon faces are fan-triangulated; `i/j/k`-style face tokens use the
    leading vertex index; all other line types are ignored.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise UnreadableMeshError(f"cannot read mesh file {path}: {e}") from e

    vertices: list[list[float]] = []
    faces: list[tuple[int, ...]] = []
    face_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise MeshSyntaxError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError as e:
                raise MeshSyntaxError(f"line {lineno}: bad vertex coordinate") from e
        elif tokens[0] == "f":
            if len(tokens) < 4:
                raise MeshSyntaxError(f"line {lineno}: face needs >= 3 indices")
            try:
                idx = tuple(int(t.split("/")[0]) for t in tokens[1:])
            except ValueError as e:
                raise MeshSyntaxError(f"line {lineno}: bad face index") from e
            faces.append(idx)
            face_lines.append(lineno)

    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(verts)):
        raise MeshSyntaxError("mesh has non-finite vertex coordinates")

    triangles: list[tuple[int, int, int]] = []
    for idx, lineno in zip(faces, face_lines):
        for i in idx:
            if i < 1 or i > len(verts):
                raise MeshIndexError(
                    f"line {lineno}: vertex index {i} out of range (1..{len(verts)})"
                )
        zero_based = [i - 1 for i in idx]
        for a, b in zip(zero_based[1:-1], zero_based[2:]):  # fan rule
            triangles.append((zero_based[0], a, b))

    if not triangles:
        raise EmptyMeshError(f"{path}: no triangles")
    mesh = Mesh(vertices=verts, triangles=np.asarray(triangles, dtype=np.int64))
    mesh.validate()
    return mesh


def _triangle_areas(mesh: Mesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_surface(mesh: Mesh, n: int, seed: int) -> PointCloud:
    """Area-weighted uniform surface sampling (square-root trick)."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    mesh.validate()
    areas = _triangle_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateMeshError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    pts = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c
    return PointCloud(points=pts.astype(np.float32))


def farthest_point_sample(pc: PointCloud, m: int, start: int = 0) -> list[int]:
    """Greedy max-min subset of m point indices; ties go to the lowest index."""
    n = pc.n
    if not 1 <= m <= n:
        raise ValueError(f"subsample size {m} out of range for {n} points")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range for {n} points")
    pts = pc.points.astype(np.float64)
    chosen = [start]
    dists = np.sum((pts - pts[start]) ** 2, axis=1)
    dists[start] = -1.0
    for _ in range(m - 1):
        nxt = int(np.argmax(dists))
        chosen.append(nxt)
        dists = np.minimum(dists, np.sum((pts - pts[nxt]) ** 2, axis=1))
        dists[nxt] = -1.0
    return chosen


def normalize_unit_sphere(pc: PointCloud) -> PointCloud:
    """Subtract the centroid, scale so the farthest point sits at norm 1."""
    pc.validate()
    pts = pc.points.astype(np.float64)
    centered = pts - pts.mean(axis=0)
    scale = np.max(np.linalg.norm(centered, axis=1))
    if scale < 1e-12:
        raise ValueError("cannot normalize: all points identical")
    return PointCloud(points=(centered / scale).astype(np.float32),
                      colors=pc.colors)


def make_viewpoints(k: int, elevation: float = 30.0) -> list[Viewpoint]:
    """k viewpoints with azimuths equally spaced by 360/k degrees."""
    if k < 1:
        raise ValueError(f"view count must be >= 1, got {k}")
    step = 360.0 / k
    return [Viewpoint(azimuth=i * step, elevation=elevation, index=i)
            for i in range(k)]


def augment(pc: PointCloud, spec: AugmentSpec, seed: int) -> PointCloud:
    """Random z-rotation, uniform scale, Gaussian jitter, then point dropout.

    Each stage draws from the seeded generator only when enabled, so an
    all-off spec is a bitwise identity.
    """
    spec.validate()
    pc.validate()
    rng = np.random.default_rng(seed)
    pts = pc.points.astype(np.float64)
    colors = pc.colors

    if spec.rotate_z:
        theta = rng.uniform(0.0, 2.0 * math.pi)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ rot.T

    lo, hi = spec.scale_range
    if lo < hi:
        pts = pts * rng.uniform(lo, hi)
    elif lo != 1.0:
        pts = pts * lo

    if spec.jitter_sigma > 0.0:
        pts = pts + rng.normal(0.0, spec.jitter_sigma, pts.shape)

    if spec.dropout_rate > 0.0:
        keep = rng.random(len(pts)) >= spec.dropout_rate
        if not keep.any():
            keep[0] = True
        pts = pts[keep]
        if colors is not None:
            colors = colors[keep]

    return PointCloud(points=pts.astype(np.float32), colors=colors)


def _camera_frame(view: Viewpoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    az = math.radians(view.azimuth)
    el = math.radians(view.elevation)
    cam = np.array([math.cos(el) * math.cos(az),
                    math.cos(el) * math.sin(az),
                    math.sin(el)])
    fwd = -cam
    up0 = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up0)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight along z
        right = np.array([-math.sin(az), math.cos(az), 0.0])
    else:
        right = right / nr
    up = np.cross(right, fwd)
    return right, up, fwd


def render_pointsplat(pc: PointCloud, view: Viewpoint, res: int) -> np.ndarray:
    """Orthographic depth splat: nearest point per pixel, background 0."""
    if res < 1:
        raise ValueError(f"resolution must be >= 1, got {res}")
    pc.validate()
    pts = pc.points.astype(np.float64)
    if np.max(np.linalg.norm(pts, axis=1)) > 1.0 + 1e-3:
        raise ValueError("render_pointsplat expects a unit-sphere-normalized cloud")
    right, up, fwd = _camera_frame(view)
    u = pts @ right
    v = pts @ up
    depth = pts @ fwd  # in [-1, 1]; -1 is nearest to the camera
    cols = np.rint((u + 1.0) / 2.0 * (res - 1)).astype(np.int64) if res > 1 \
        else np.zeros(len(pts), dtype=np.int64)
    rows = np.rint((1.0 - v) / 2.0 * (res - 1)).astype(np.int64) if res > 1 \
        else np.zeros(len(pts), dtype=np.int64)
    nearness = (1.0 - depth) / 2.0
    img = np.zeros((res, res), dtype=np.float32)
    np.maximum.at(img, (rows, cols), nearness.astype(np.float32))
    return img


def write_pointcloud(pc: PointCloud, path) -> None:
    """Write the UPC1 binary layout (little-endian)."""
    pc.validate()
    has_color = pc.colors is not None
    with open(path, "wb") as f:
        f.write(UPC1_MAGIC)
        f.write(struct.pack("<IIB", 1, pc.n, 1 if has_color else 0))
        f.write(pc.points.astype("<f4").tobytes())
        if has_color:
            f.write(pc.colors.astype("<f4").tobytes())


def read_pointcloud(path) -> PointCloud:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != UPC1_MAGIC:
        raise PointCloudFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 13:
        raise PointCloudFormatError(f"{path}: truncated header")
    version, n, has_color = struct.unpack("<IIB", blob[4:13])
    if version != 1:
        raise PointCloudFormatError(f"{path}: unsupported version {version}")
    need = 13 + n * 12 * (2 if has_color else 1)
    if len(blob) != need:
        raise PointCloudFormatError(
            f"{path}: payload length {len(blob)} != expected {need}"
        )
    pts = np.frombuffer(blob, dtype="<f4", count=n * 3, offset=13).reshape(n, 3)
    colors = None
    if has_color:
        colors = np.frombuffer(blob, dtype="<f4", count=n * 3,
                               offset=13 + n * 12).reshape(n, 3)
        colors = np.ascontiguousarray(colors)
    pc = PointCloud(points=np.ascontiguousarray(pts), colors=colors)
    pc.validate()
    return pc
