"""Synthetic primitive shapes and mock frozen encoders.

Provides a fully offline stand-in for the real data path: parametric
meshes per category, and image/text embeddings scattered around a
per-category unit anchor in the frozen space. Noise scales are perturbation
radii: an embedding is normalize(anchor + sigma * unit_direction).
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from pathlib import Path

import numpy as np

from .embedstore import (EmbeddingTable, ShapeRecord, TripletManifest,
                         ViewRecord, write_manifest, write_table)
from .evaluation import LabelEmbeddings
from .geometry import (Mesh, make_viewpoints, normalize_unit_sphere,
                       render_pointsplat, sample_surface, write_pointcloud)

__all__ = [
    "PRIMITIVES",
    "SynthSpec",
    "SynthShape",
    "SynthDataset",
    "MockEncoders",
    "gen_dataset",
    "mock_frozen_encoders",
    "split_manifest",
    "build_synth_dataset",
    "write_pgm",
]

PRIMITIVES = ("sphere", "cube", "cylinder", "cone", "torus", "pyramid",
              "capsule", "ellipsoid")

_SAMPLE_SEED_SALT = 0x9E3779B9  # decorrelates surface sampling from mesh jitter


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    categories: tuple[str, ...] = PRIMITIVES
    per_class_train: int = 35
    per_class_test: int = 10
    shape_noise: float = 0.01  # uniform vertex noise half-width
    embed_dim: int = 64
    image_noise: float = 0.05  # perturbation radius around the anchor
    text_noise: float = 0.05
    views: int = 12
    captions_per_view: int = 10
    wrong_captions_per_view: int = 0
    view_bias: float = 0.0  # systematic per-(category, view) offset magnitude
    points_per_cloud: int = 2048
    scale_range: tuple[float, float] = (0.85, 1.15)
    seed: int = 0

    def validate(self) -> None:
        if len(self.categories) < 2:
            raise ValueError("need >= 2 categories")
        unknown = set(self.categories) - set(PRIMITIVES)
        if unknown:
            raise ValueError(f"unknown primitive kinds {sorted(unknown)}")
        if min(self.shape_noise, self.image_noise, self.text_noise) < 0:
            raise ValueError("noise scales must be >= 0")
        if self.per_class_train < 1 or self.per_class_test < 0:
            raise ValueError("per-class counts out of range")
        if self.views < 1 or self.captions_per_view < 1:
            raise ValueError("views and captions_per_view must be >= 1")
        if not 0 <= self.wrong_captions_per_view < self.captions_per_view:
            raise ValueError("wrong_captions_per_view must be < captions_per_view")
        if self.view_bias < 0:
            raise ValueError("view_bias must be >= 0")
        if self.points_per_cloud < 1:
            raise ValueError("points_per_cloud must be >= 1")
        if self.scale_range[0] > self.scale_range[1]:
            raise ValueError("bad scale_range")


@dataclasses.dataclass
class SynthShape:
    shape_id: str
    category: int
    split: str  # "train" | "test"
    ordinal: int
    mesh: Mesh


@dataclasses.dataclass
class SynthDataset:
    spec: SynthSpec
    categories: list[str]
    shapes: list[SynthShape]

    def split_shapes(self, split: str) -> list[SynthShape]:
        return [s for s in self.shapes if s.split == split]


def _lat_long_sphere(slices: int, stacks: int, radii=(1.0, 1.0, 1.0)) -> Mesh:
    verts = []
    for i in range(stacks + 1):
        theta = np.pi * i / stacks
        for j in range(slices):
            phi = 2.0 * np.pi * j / slices
            verts.append([radii[0] * np.sin(theta) * np.cos(phi),
                          radii[1] * np.sin(theta) * np.sin(phi),
                          radii[2] * np.cos(theta)])
    tris = []
    for i in range(stacks):
        for j in range(slices):
            a = i * slices + j
            b = i * slices + (j + 1) % slices
            c = (i + 1) * slices + j
            d = (i + 1) * slices + (j + 1) % slices
            tris.append([a, b, c])
            tris.append([b, d, c])
    return Mesh(vertices=np.asarray(verts, dtype=np.float64),
                triangles=np.asarray(tris, dtype=np.int64))


def _ring(radius: float, z: float, segments: int) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(segments) / segments
    return np.stack([radius * np.cos(ang), radius * np.sin(ang),
                     np.full(segments, z)], axis=1)


def _tube(bottom: np.ndarray, top: np.ndarray, offset: int) -> list[list[int]]:
    n = len(bottom)
    tris = []
    for j in range(n):
        a, b = offset + j, offset + (j + 1) % n
        c, d = offset + n + j, offset + n + (j + 1) % n
        tris.append([a, b, c])
        tris.append([b, d, c])
    return tris


def _fan(center_idx: int, ring_idx: list[int], flip: bool = False) -> list[list[int]]:
    tris = []
    n = len(ring_idx)
    for j in range(n):
        a, b = ring_idx[j], ring_idx[(j + 1) % n]
        tris.append([center_idx, b, a] if flip else [center_idx, a, b])
    return tris


def _cylinder(radius=0.5, half_h=0.7, segments=48) -> Mesh:
    bottom = _ring(radius, -half_h, segments)
    top = _ring(radius, half_h, segments)
    verts = [bottom, top,
             np.array([[0.0, 0.0, -half_h]]), np.array([[0.0, 0.0, half_h]])]
    tris = _tube(bottom, top, 0)
    tris += _fan(2 * segments, list(range(segments)), flip=True)
    tris += _fan(2 * segments + 1, [segments + j for j in range(segments)])
    return Mesh(vertices=np.concatenate(verts), triangles=np.asarray(tris))


def _cone(radius=0.6, base_z=-0.5, apex_z=0.7, segments=48) -> Mesh:
    base = _ring(radius, base_z, segments)
    verts = [base, np.array([[0.0, 0.0, apex_z]]), np.array([[0.0, 0.0, base_z]])]
    tris = _fan(segments, list(range(segments)))
    tris += _fan(segments + 1, list(range(segments)), flip=True)
    return Mesh(vertices=np.concatenate(verts), triangles=np.asarray(tris))


def _torus(ring_r=0.7, tube_r=0.28, segments=48, sides=24) -> Mesh:
    verts = []
    for i in range(segments):
        u = 2.0 * np.pi * i / segments
        for j in range(sides):
            v = 2.0 * np.pi * j / sides
            r = ring_r + tube_r * np.cos(v)
            verts.append([r * np.cos(u), r * np.sin(u), tube_r * np.sin(v)])
    tris = []
    for i in range(segments):
        for j in range(sides):
            a = i * sides + j
            b = i * sides + (j + 1) % sides
            c = ((i + 1) % segments) * sides + j
            d = ((i + 1) % segments) * sides + (j + 1) % sides
            tris.append([a, b, c])
            tris.append([b, d, c])
    return Mesh(vertices=np.asarray(verts), triangles=np.asarray(tris))


def _cube(half=0.62) -> Mesh:
    corners = np.array([[sx, sy, sz] for sx in (-half, half)
                        for sy in (-half, half) for sz in (-half, half)])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x faces
        (0, 4, 5, 1), (2, 3, 7, 6),  # y faces
        (0, 2, 6, 4), (1, 5, 7, 3),  # z faces
    ]
    tris = []
    for q in quads:
        tris.append([q[0], q[1], q[2]])
        tris.append([q[0], q[2], q[3]])
    return Mesh(vertices=corners, triangles=np.asarray(tris))


def _pyramid(half=0.55, base_z=-0.45, apex_z=0.65) -> Mesh:
    verts = np.array([
        [-half, -half, base_z], [half, -half, base_z],
        [half, half, base_z], [-half, half, base_z],
        [0.0, 0.0, apex_z],
    ])
    tris = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4],
                     [0, 2, 1], [0, 3, 2]])
    return Mesh(vertices=verts, triangles=tris)


def _capsule(radius=0.35, half_h=0.45, segments=32, cap_stacks=12) -> Mesh:
    # two hemispherical caps joined by one cylindrical band between equators
    verts = [np.array([[0.0, 0.0, half_h + radius]])]  # top pole
    ring_starts: list[int] = []
    count = 1
    # upper cap: near top pole down to its equator at z = +half_h
    for i in range(1, cap_stacks + 1):
        theta = (np.pi / 2) * i / cap_stacks
        ring_starts.append(count)
        verts.append(_ring(radius * np.sin(theta),
                           half_h + radius * np.cos(theta), segments))
        count += segments
    # lower cap: its equator at z = -half_h down toward the bottom pole
    for i in range(cap_stacks):
        theta = (np.pi / 2) * (1.0 - i / cap_stacks)
        ring_starts.append(count)
        verts.append(_ring(radius * np.sin(theta),
                           -half_h - radius * np.cos(theta), segments))
        count += segments
    verts.append(np.array([[0.0, 0.0, -half_h - radius]]))  # bottom pole
    all_verts = np.concatenate(verts)
    bottom_pole = len(all_verts) - 1

    tris = _fan(0, list(range(ring_starts[0], ring_starts[0] + segments)),
                flip=True)
    for r0, r1 in zip(ring_starts[:-1], ring_starts[1:]):
        for j in range(segments):
            a, b = r0 + j, r0 + (j + 1) % segments
            c, d = r1 + j, r1 + (j + 1) % segments
            tris.append([a, b, c])
            tris.append([b, d, c])
    tris += _fan(bottom_pole,
                 list(range(ring_starts[-1], ring_starts[-1] + segments)))
    return Mesh(vertices=all_verts, triangles=np.asarray(tris))


_GENERATORS = {
    "sphere": lambda: _lat_long_sphere(104, 52),
    "ellipsoid": lambda: _lat_long_sphere(64, 32, radii=(1.0, 0.62, 0.45)),
    "cube": _cube,
    "cylinder": _cylinder,
    "cone": _cone,
    "torus": _torus,
    "pyramid": _pyramid,
    "capsule": _capsule,
}


def make_primitive(kind: str) -> Mesh:
    try:
        return _GENERATORS[kind]()
    except KeyError:
        raise ValueError(f"unknown primitive kind {kind!r}") from None


def _jitter_instance(mesh: Mesh, spec: SynthSpec, seed: int) -> Mesh:
    rng = np.random.default_rng(seed)
    verts = mesh.vertices.copy()
    lo, hi = spec.scale_range
    if lo < hi:
        verts = verts * rng.uniform(lo, hi)
    elif lo != 1.0:
        verts = verts * lo
    theta = rng.uniform(0.0, 2.0 * np.pi)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    verts = verts @ rot.T
    if spec.shape_noise > 0:
        verts = verts + rng.uniform(-spec.shape_noise, spec.shape_noise,
                                    verts.shape)
    return Mesh(vertices=verts, triangles=mesh.triangles)


def gen_dataset(spec: SynthSpec) -> SynthDataset:
    """Instance meshes with per-instance jitter; first per_class_train of
    each class form the train split. Per-shape seeds are seed XOR ordinal."""
    spec.validate()
    base = {kind: make_primitive(kind) for kind in spec.categories}
    shapes = []
    ordinal = 0
    per_class = spec.per_class_train + spec.per_class_test
    for cat_idx, kind in enumerate(spec.categories):
        for i in range(per_class):
            mesh = _jitter_instance(base[kind], spec, seed=spec.seed ^ ordinal)
            shapes.append(SynthShape(
                shape_id=f"{kind}-{i:03d}",
                category=cat_idx,
                split="train" if i < spec.per_class_train else "test",
                ordinal=ordinal,
                mesh=mesh,
            ))
            ordinal += 1
    return SynthDataset(spec=spec, categories=list(spec.categories),
                        shapes=shapes)


@dataclasses.dataclass
class MockEncoders:
    image_table: EmbeddingTable
    text_table: EmbeddingTable
    labels: LabelEmbeddings
    manifest: TripletManifest  # all shapes, split via split_manifest


def _noisy_anchor(anchor: np.ndarray, sigma: float,
                  rng: np.random.Generator) -> np.ndarray:
    if sigma == 0.0:
        return anchor.copy()
    g = rng.normal(size=anchor.shape)
    g /= np.linalg.norm(g)
    v = anchor.astype(np.float64) + sigma * g
    return (v / np.linalg.norm(v)).astype(np.float32)


def _unit_rows(rng: np.random.Generator, shape) -> np.ndarray:
    rows = rng.normal(size=shape)
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def mock_frozen_encoders(spec: SynthSpec, dataset: SynthDataset) -> MockEncoders:
    """Anchor-based frozen-space stand-in.

    Category anchors are seeded unit Gaussians; every view's image embedding
    and caption candidates scatter around the shape's anchor. Two optional
    structured corruptions model real failure modes: ``view_bias`` displaces
    everything seen from view v of category c by a fixed direction (the shape
    genuinely looks different from there), and ``wrong_captions_per_view``
    captions scatter around a per-category confusion target instead (the
    captioner consistently mistakes category c for some other class).
    """
    spec.validate()
    c = len(spec.categories)
    if spec.embed_dim < c:
        warnings.warn(
            f"embed_dim {spec.embed_dim} < {c} categories: anchors may collide",
            stacklevel=2,
        )
    rng = np.random.default_rng(spec.seed)
    anchors = _unit_rows(rng, (c, spec.embed_dim)).astype(np.float32)
    bias_dirs = _unit_rows(rng, (c, spec.views, spec.embed_dim))
    confused_with = np.array([
        (cat + 1 + int(rng.integers(c - 1))) % c for cat in range(c)
    ])

    def view_center(category: int, view: int) -> np.ndarray:
        anchor = anchors[category].astype(np.float64)
        if spec.view_bias == 0.0:
            return anchors[category]
        v = anchor + spec.view_bias * bias_dirs[category, view]
        return (v / np.linalg.norm(v)).astype(np.float32)

    image_rows, text_rows, records = [], [], []
    n_right = spec.captions_per_view - spec.wrong_captions_per_view
    for shape in dataset.shapes:
        views = []
        for v in range(spec.views):
            center = view_center(shape.category, v)
            image_rows.append(_noisy_anchor(center, spec.image_noise, rng))
            caption_rows = []
            for _ in range(n_right):
                caption_rows.append(len(text_rows))
                text_rows.append(_noisy_anchor(center, spec.text_noise, rng))
            wrong_anchor = anchors[confused_with[shape.category]]
            for _ in range(spec.wrong_captions_per_view):
                caption_rows.append(len(text_rows))
                text_rows.append(_noisy_anchor(wrong_anchor,
                                               spec.text_noise, rng))
            views.append(ViewRecord(view_index=v,
                                    image_row=len(image_rows) - 1,
                                    caption_rows=caption_rows))
        records.append(ShapeRecord(
            shape_id=shape.shape_id,
            point_cloud_path=f"clouds/{shape.shape_id}.upc",
            label=shape.category,
            views=views,
        ))

    return MockEncoders(
        image_table=EmbeddingTable(rows=np.stack(image_rows),
                                   provenance="mock-image-encoder"),
        text_table=EmbeddingTable(rows=np.stack(text_rows),
                                  provenance="mock-text-encoder"),
        labels=LabelEmbeddings(names=list(spec.categories), rows=anchors),
        manifest=TripletManifest(shapes=records),
    )


def split_manifest(manifest: TripletManifest, dataset: SynthDataset,
                   split: str) -> TripletManifest:
    wanted = {s.shape_id for s in dataset.split_shapes(split)}
    return TripletManifest(
        shapes=[s for s in manifest.shapes if s.shape_id in wanted]
    )


def write_pgm(img: np.ndarray, path) -> None:
    """8-bit binary PGM, for handing rendered views to external tooling."""
    gray = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(gray.tobytes())


def build_synth_dataset(spec: SynthSpec, out_dir,
                        write_views: bool = False) -> dict:
    """Generate and persist a full synthetic dataset under ``out_dir``.

    Writes UPC1 clouds, ULP2 image/text/label tables, per-split manifests,
    and category names; optionally PGM splat renders of every view.
    """
    out = Path(out_dir)
    dataset = gen_dataset(spec)
    encoders = mock_frozen_encoders(spec, dataset)

    (out / "clouds").mkdir(parents=True, exist_ok=True)
    viewpoints = make_viewpoints(spec.views)
    if write_views:
        (out / "views").mkdir(exist_ok=True)
    for shape in dataset.shapes:
        pc = sample_surface(shape.mesh, spec.points_per_cloud,
                            seed=spec.seed ^ shape.ordinal ^ _SAMPLE_SEED_SALT)
        pc = normalize_unit_sphere(pc)
        write_pointcloud(pc, out / "clouds" / f"{shape.shape_id}.upc")
        if write_views:
            for vp in viewpoints:
                img = render_pointsplat(pc, vp, res=96)
                write_pgm(img, out / "views"
                          / f"{shape.shape_id}_{vp.index:02d}.pgm")

    write_table(encoders.image_table, out / "images.ulp2")
    write_table(encoders.text_table, out / "texts.ulp2")
    write_table(EmbeddingTable(rows=encoders.labels.rows,
                               provenance="mock-label-encoder"),
                out / "labels.ulp2")
    write_manifest(split_manifest(encoders.manifest, dataset, "train"),
                   out / "manifest_train.json")
    if dataset.split_shapes("test"):
        write_manifest(split_manifest(encoders.manifest, dataset, "test"),
                       out / "manifest_test.json")
    (out / "categories.json").write_text(json.dumps(
        {"categories": dataset.categories, "embed_dim": spec.embed_dim},
        indent=2, sort_keys=True) + "\n")
    return {
        "shapes": len(dataset.shapes),
        "train": len(dataset.split_shapes("train")),
        "test": len(dataset.split_shapes("test")),
        "views": spec.views,
        "captions_per_view": spec.captions_per_view,
    }
