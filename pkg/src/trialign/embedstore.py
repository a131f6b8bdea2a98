"""Frozen-space embedding tables, triplet manifests, and caption ranking.

Tables hold L2-normalized float32 rows and are immutable after load; all
similarity scores are recomputed from rows at use time, never persisted.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "EmbeddingTable",
    "ViewRecord",
    "ShapeRecord",
    "TripletManifest",
    "EmbedStoreError",
    "TableFormatError",
    "TableNormError",
    "ManifestError",
    "write_table",
    "read_table",
    "clip_score",
    "rank_captions",
    "select_topk",
    "write_manifest",
    "read_manifest",
]

ULP2_MAGIC = b"ULP2"
NORM_TOL = 1e-3


class EmbedStoreError(ValueError):
    pass


class TableFormatError(EmbedStoreError):
    pass


class TableNormError(EmbedStoreError):
    pass


class ManifestError(EmbedStoreError):
    pass


@dataclasses.dataclass
class EmbeddingTable:
    rows: np.ndarray  # (M, D) float32, unit rows
    provenance: str = ""

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    def validate(self) -> None:
        if self.rows.ndim != 2 or self.count < 1 or self.dim < 1:
            raise TableFormatError(f"table must be (M>=1, D>=1), got {self.rows.shape}")
        norms = np.linalg.norm(self.rows.astype(np.float64), axis=1)
        bad = np.where(np.abs(norms - 1.0) > NORM_TOL)[0]
        if bad.size:
            raise TableNormError(
                f"row {bad[0]} has norm {norms[bad[0]]:.6f}, expected 1 +/- {NORM_TOL}"
            )


def write_table(table: EmbeddingTable, path) -> None:
    table.validate()
    with open(path, "wb") as f:
        f.write(ULP2_MAGIC)
        f.write(struct.pack("<III", 1, table.dim, table.count))
        f.write(table.rows.astype("<f4").tobytes())


def read_table(path) -> EmbeddingTable:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != ULP2_MAGIC:
        raise TableFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise TableFormatError(f"{path}: truncated header")
    version, dim, count = struct.unpack("<III", blob[4:16])
    if version != 1:
        raise TableFormatError(f"{path}: unsupported version {version}")
    need = 16 + 4 * dim * count
    if len(blob) != need:
        raise TableFormatError(f"{path}: payload length {len(blob)} != expected {need}")
    rows = np.frombuffer(blob, dtype="<f4", offset=16).reshape(count, dim)
    table = EmbeddingTable(rows=np.ascontiguousarray(rows), provenance=str(path))
    table.validate()
    return table


def clip_score(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two (approximately unit) embedding rows."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise EmbedStoreError(f"clip_score: shape mismatch {a.shape} vs {b.shape}")
    for name, v in (("a", a), ("b", b)):
        norm = float(np.linalg.norm(v.astype(np.float64)))
        if abs(norm - 1.0) > NORM_TOL:
            raise TableNormError(f"clip_score: operand {name} has norm {norm:.6f}")
    return float(np.dot(a.astype(np.float64), b.astype(np.float64)))


@dataclasses.dataclass
class ViewRecord:
    view_index: int
    image_row: int
    caption_rows: list[int]


@dataclasses.dataclass
class ShapeRecord:
    shape_id: str
    point_cloud_path: str
    label: int | None
    views: list[ViewRecord]


@dataclasses.dataclass
class TripletManifest:
    shapes: list[ShapeRecord]

    def validate(self, image_count: int | None = None,
                 text_count: int | None = None) -> None:
        if not self.shapes:
            raise ManifestError("manifest has no shapes")
        for shape in self.shapes:
            if not shape.views:
                raise ManifestError(f"shape {shape.shape_id!r} has no views")
            for view in shape.views:
                if not view.caption_rows:
                    raise ManifestError(
                        f"shape {shape.shape_id!r} view {view.view_index} "
                        "has no caption rows"
                    )
                if image_count is not None and not 0 <= view.image_row < image_count:
                    raise ManifestError(
                        f"shape {shape.shape_id!r}: image_row {view.image_row} "
                        f"out of range (table has {image_count} rows)"
                    )
                if text_count is not None:
                    for r in view.caption_rows:
                        if not 0 <= r < text_count:
                            raise ManifestError(
                                f"shape {shape.shape_id!r}: caption row {r} "
                                f"out of range (table has {text_count} rows)"
                            )


_VIEW_KEYS = {"view_index", "image_row", "caption_rows"}
_SHAPE_KEYS = {"shape_id", "point_cloud_path", "label", "views"}


def manifest_to_dict(manifest: TripletManifest) -> dict:
    return {
        "shapes": [
            {
                "shape_id": s.shape_id,
                "point_cloud_path": s.point_cloud_path,
                "label": s.label,
                "views": [
                    {
                        "view_index": v.view_index,
                        "image_row": v.image_row,
                        "caption_rows": list(v.caption_rows),
                    }
                    for v in s.views
                ],
            }
            for s in manifest.shapes
        ]
    }


def manifest_from_dict(doc: dict) -> TripletManifest:
    if set(doc) != {"shapes"}:
        raise ManifestError(f"manifest must have exactly a 'shapes' key, got {sorted(doc)}")
    shapes = []
    for s in doc["shapes"]:
        extra = set(s) - _SHAPE_KEYS
        if extra:
            raise ManifestError(f"unknown shape keys {sorted(extra)}")
        missing = _SHAPE_KEYS - set(s)
        if missing:
            raise ManifestError(f"shape record missing keys {sorted(missing)}")
        views = []
        for v in s["views"]:
            if set(v) != _VIEW_KEYS:
                raise ManifestError(
                    f"shape {s['shape_id']!r}: view keys must be "
                    f"{sorted(_VIEW_KEYS)}, got {sorted(v)}"
                )
            views.append(ViewRecord(
                view_index=int(v["view_index"]),
                image_row=int(v["image_row"]),
                caption_rows=[int(r) for r in v["caption_rows"]],
            ))
        label = s["label"]
        shapes.append(ShapeRecord(
            shape_id=str(s["shape_id"]),
            point_cloud_path=str(s["point_cloud_path"]),
            label=None if label is None else int(label),
            views=views,
        ))
    return TripletManifest(shapes=shapes)


def write_manifest(manifest: TripletManifest, path) -> None:
    doc = manifest_to_dict(manifest)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> TripletManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON: {e}") from e
    manifest = manifest_from_dict(doc)
    manifest.validate()
    return manifest


def rank_captions(view: ViewRecord, image_table: EmbeddingTable,
                  text_table: EmbeddingTable) -> list[int]:
    """Caption rows of a view sorted by CLIP score descending, stable on ties."""
    if not view.caption_rows:
        raise ManifestError(f"view {view.view_index} has no captions to rank")
    if not 0 <= view.image_row < image_table.count:
        raise ManifestError(f"image_row {view.image_row} out of range")
    img = image_table.rows[view.image_row].astype(np.float64)
    cand = text_table.rows[np.asarray(view.caption_rows)].astype(np.float64)
    scores = cand @ img
    order = np.argsort(-scores, kind="stable")
    return [view.caption_rows[i] for i in order]


def select_topk(view: ViewRecord, k: int, image_table: EmbeddingTable,
                text_table: EmbeddingTable) -> np.ndarray:
    """One aggregated text embedding: the top row (k=1) or the normalized
    mean of the top-k ranked rows."""
    if not 1 <= k <= len(view.caption_rows):
        raise EmbedStoreError(
            f"top-k k={k} out of range for {len(view.caption_rows)} captions"
        )
    ranked = rank_captions(view, image_table, text_table)
    if k == 1:
        return text_table.rows[ranked[0]].copy()
    mean = np.mean(text_table.rows[ranked[:k]].astype(np.float64), axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-6:
        raise EmbedStoreError(
            f"top-{k} ensemble collapsed to near-zero mean (norm {norm:.2e})"
        )
    return (mean / norm).astype(np.float32)
