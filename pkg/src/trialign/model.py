"""Trainable point-cloud encoder: shared per-point MLP, max pool, head.

A compact permutation-invariant encoder projecting clouds into the frozen
image/text embedding space. Built entirely from the ag op catalog so the
whole thing is differentiable end to end.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import ag
from .geometry import PointCloud

__all__ = ["EncoderConfig", "EncoderParams", "init_params", "encode",
           "EncoderError"]


class EncoderError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int
    in_channels: int = 3
    point_mlp_widths: tuple[int, ...] = (64, 128, 256)
    head_widths: tuple[int, ...] | None = None  # defaults to (256, embed_dim)
    layernorm: bool = False  # per-point feature normalization after hidden relus

    def __post_init__(self):
        if self.head_widths is None:
            object.__setattr__(self, "head_widths", (256, self.embed_dim))
        else:
            object.__setattr__(self, "head_widths", tuple(self.head_widths))
        object.__setattr__(self, "point_mlp_widths", tuple(self.point_mlp_widths))

    def validate(self) -> None:
        if self.in_channels not in (3, 6):
            raise EncoderError(f"in_channels must be 3 or 6, got {self.in_channels}")
        if self.embed_dim < 1:
            raise EncoderError(f"embed_dim must be >= 1, got {self.embed_dim}")
        widths = (*self.point_mlp_widths, *self.head_widths)
        if not widths or any(w < 1 for w in widths):
            raise EncoderError(f"layer widths must be >= 1, got {widths}")
        if self.head_widths[-1] != self.embed_dim:
            raise EncoderError(
                f"last head width {self.head_widths[-1]} must equal "
                f"embed_dim {self.embed_dim}"
            )


@dataclasses.dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, ag.Tensor]

    def named(self) -> dict[str, ag.Tensor]:
        return dict(self.tensors)


def _layer_names(config: EncoderConfig) -> list[tuple[str, int, int]]:
    names = []
    fan_in = config.in_channels
    for i, w in enumerate(config.point_mlp_widths):
        names.append((f"point_mlp.{i}", fan_in, w))
        fan_in = w
    for i, w in enumerate(config.head_widths):
        names.append((f"head.{i}", fan_in, w))
        fan_in = w
    return names


def init_params(config: EncoderConfig, seed: int, dtype=np.float32) -> EncoderParams:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    tensors: dict[str, ag.Tensor] = {}
    for name, fan_in, fan_out in _layer_names(config):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors[f"{name}.weight"] = ag.leaf(w, requires_grad=True, dtype=dtype)
        tensors[f"{name}.bias"] = ag.leaf(
            np.zeros(fan_out), requires_grad=True, dtype=dtype
        )
    return EncoderParams(config=config, tensors=tensors)


def _cloud_features(pc: PointCloud, config: EncoderConfig) -> np.ndarray:
    if pc.n < 1:
        raise EncoderError("cannot encode an empty point cloud")
    if not np.all(np.isfinite(pc.points)):
        raise EncoderError("point cloud has non-finite coordinates")
    if np.max(np.linalg.norm(pc.points.astype(np.float64), axis=1)) > 2.0:
        raise EncoderError("point cloud is not normalized (max norm > 2)")
    if config.in_channels == 3:
        return pc.points
    if pc.colors is not None:
        colors = pc.colors
    else:
        colors = np.full_like(pc.points, 0.5)
    return np.concatenate([pc.points, colors], axis=1)


def _row_layernorm(h: ag.Tensor) -> ag.Tensor:
    """Center and unit-variance-scale each feature row (no affine terms).

    (x - mean) / std == l2_normalize(x - mean) * sqrt(width); composed from
    catalog ops so gradients flow. Row-wise, so permutation invariance over
    points is untouched.
    """
    width = h.shape[1]
    ht = ag.transpose(h)
    col_means = ag.mean_over_axis(ht, axis=0)
    centered = ag.transpose(ag.add(ht, ag.scale_by_scalar(col_means, -1.0)))
    return ag.scale_by_scalar(ag.l2_normalize_rows(centered),
                              float(np.sqrt(width)))


def encode(params: EncoderParams, batch: list[PointCloud]) -> ag.Tensor:
    """Embed a batch of clouds into unit-norm rows of shape (B, embed_dim)."""
    if not batch:
        raise EncoderError("cannot encode an empty batch")
    config = params.config
    dtype = next(iter(params.tensors.values())).data.dtype
    n_point = len(config.point_mlp_widths)
    n_head = len(config.head_widths)
    fan_in = params.tensors["point_mlp.0.weight"].shape[0] if n_point else \
        params.tensors["head.0.weight"].shape[0]
    if fan_in != config.in_channels:
        raise EncoderError(
            f"channel mismatch: params expect {fan_in} input channels, "
            f"config says {config.in_channels}"
        )

    rows = []
    for pc in batch:
        h = ag.leaf(_cloud_features(pc, config), dtype=dtype)
        for i in range(n_point):
            h = ag.matmul(h, params.tensors[f"point_mlp.{i}.weight"])
            h = ag.add(h, params.tensors[f"point_mlp.{i}.bias"])
            if i < n_point - 1:
                if config.layernorm:
                    # pre-activation: relu output rows can be entirely zero,
                    # which has no well-defined normalization
                    h = _row_layernorm(h)
                h = ag.relu(h)
        h = ag.max_over_axis(h, axis=0)
        for i in range(n_head):
            h = ag.matmul(h, params.tensors[f"head.{i}.weight"])
            h = ag.add(h, params.tensors[f"head.{i}.bias"])
            if i < n_head - 1:
                h = ag.relu(h)
        rows.append(ag.l2_normalize_rows(h))
    return ag.concat_rows(rows) if len(rows) > 1 else rows[0]
