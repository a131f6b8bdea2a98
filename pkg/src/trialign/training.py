"""Tri-modal contrastive training: objective, batch sampling, loop, checkpoints.

The objective is the symmetric InfoNCE pair: point-to-image plus
point-to-text, sharing one learnable temperature. Gradients flow only into
the encoder and the temperature; image/text features are frozen rows.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import ag
from .embedstore import EmbeddingTable, TripletManifest, select_topk
from .geometry import (AugmentSpec, PointCloud, augment, farthest_point_sample,
                       read_pointcloud)
from .model import EncoderConfig, EncoderParams, encode, init_params

__all__ = [
    "LogitScale",
    "TrainConfig",
    "Checkpoint",
    "TrainingError",
    "NonFiniteLossError",
    "CheckpointFormatError",
    "CheckpointCorruptError",
    "contrastive_loss",
    "total_loss",
    "sample_batch",
    "BatchSample",
    "train",
    "TrainResult",
    "save_checkpoint",
    "load_checkpoint",
]

UCKP_MAGIC = b"UCKP"
LOSS_LOG_HEADER = "step,loss_total,loss_p2i,loss_p2t,tau"


class TrainingError(ValueError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


class CheckpointFormatError(TrainingError):
    pass


class CheckpointCorruptError(TrainingError):
    pass


class LogitScale:
    """Learnable temperature: s with tau = exp(-s), logits scaled by exp(s)."""

    def __init__(self, s: ag.Tensor):
        self.s = s

    @classmethod
    def init(cls, tau_init: float = 0.07, dtype=np.float32) -> "LogitScale":
        if tau_init <= 0:
            raise TrainingError(f"tau_init must be positive, got {tau_init}")
        return cls(ag.leaf(np.log(1.0 / tau_init), requires_grad=True, dtype=dtype))

    @property
    def tau(self) -> float:
        return float(np.exp(-self.s.data))

    @property
    def scale(self) -> float:
        return float(np.exp(self.s.data))

    def clamp(self, max_scale: float = 100.0) -> None:
        limit = self.s.data.dtype.type(np.log(max_scale))
        if self.s.data > limit:
            self.s.data = np.asarray(limit, dtype=self.s.data.dtype)


def _as_feature_tensor(x, name: str) -> ag.Tensor:
    t = x if isinstance(x, ag.Tensor) else ag.leaf(np.asarray(x))
    if t.data.ndim != 2 or t.shape[0] < 1:
        raise TrainingError(f"{name} must be a (B>=1, D) matrix, got {t.shape}")
    norms = np.linalg.norm(t.data.astype(np.float64), axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-3:
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise TrainingError(
            f"{name} row {worst} has norm {norms[worst]:.6f}, expected unit rows"
        )
    return t


def contrastive_loss(f_p, f_x, logit_scale: LogitScale,
                     reduction: str = "mean") -> ag.Tensor:
    """Symmetric InfoNCE over in-batch similarity logits.

    logits = (f_p @ f_x^T) * exp(s); the loss is -(1/2) the sum of correct
    log-softmax entries over rows and over columns, divided by B when
    ``reduction`` is "mean".
    """
    if reduction not in ("sum", "mean"):
        raise TrainingError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    tp = _as_feature_tensor(f_p, "f_p")
    tx = _as_feature_tensor(f_x, "f_x")
    if tp.shape != tx.shape:
        raise TrainingError(f"feature shape mismatch: {tp.shape} vs {tx.shape}")
    b = tp.shape[0]
    logits = ag.scale_by_scalar(ag.matmul(tp, ag.transpose(tx)),
                                ag.exp_scalar(logit_scale.s))
    over_rows = ag.nll_diagonal(ag.log_softmax_rows(logits))
    over_cols = ag.nll_diagonal(ag.log_softmax_rows(ag.transpose(logits)))
    loss = ag.scale_by_scalar(ag.add(over_rows, over_cols), 0.5)
    if reduction == "mean":
        loss = ag.scale_by_scalar(loss, 1.0 / b)
    return loss


def _loss_parts(f_p, f_i, f_t, logit_scale, weights, reduction):
    w_i, w_t = weights
    if w_i < 0 or w_t < 0:
        raise TrainingError(f"loss weights must be >= 0, got {weights}")
    p2i = contrastive_loss(f_p, f_i, logit_scale, reduction)
    p2t = contrastive_loss(f_p, f_t, logit_scale, reduction)
    total = ag.add(ag.scale_by_scalar(p2i, float(w_i)),
                   ag.scale_by_scalar(p2t, float(w_t)))
    return total, p2i, p2t


def total_loss(f_p, f_i, f_t, logit_scale: LogitScale,
               weights: tuple[float, float] = (1.0, 1.0),
               reduction: str = "mean") -> ag.Tensor:
    """Weighted sum of the point-to-image and point-to-text losses."""
    return _loss_parts(f_p, f_i, f_t, logit_scale, weights, reduction)[0]


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    steps: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    reduction: str = "mean"
    w_image: float = 1.0
    w_text: float = 1.0
    tau_init: float = 0.07
    tau_max: float = 100.0
    caption_top_k: int = 1
    point_budget: int = 2048
    subsample: str = "fps"
    cosine_decay: bool = False
    workers: int = 1
    augment: AugmentSpec = dataclasses.field(default_factory=AugmentSpec)

    def lr_at(self, step: int) -> float:
        """Flat lr, or half-cosine decay to 0 over the run when enabled."""
        if not self.cosine_decay or self.steps <= 1:
            return self.lr
        return self.lr * 0.5 * (1.0 + np.cos(np.pi * (step - 1) / self.steps))

    def validate(self) -> None:
        if self.batch_size < 2:
            raise TrainingError(
                f"contrastive training needs batch_size >= 2, got {self.batch_size}"
            )
        if self.steps < 0 or self.lr < 0:
            raise TrainingError("steps and lr must be non-negative")
        if self.w_image < 0 or self.w_text < 0:
            raise TrainingError("loss weights must be >= 0")
        if self.tau_init <= 0 or self.tau_max <= 0:
            raise TrainingError("tau_init and tau_max must be positive")
        if self.reduction not in ("sum", "mean"):
            raise TrainingError(f"unknown reduction {self.reduction!r}")
        if self.caption_top_k < 1:
            raise TrainingError("caption_top_k must be >= 1")
        if self.point_budget < 1:
            raise TrainingError("point_budget must be >= 1")
        if self.subsample not in ("fps", "truncate"):
            raise TrainingError(f"unknown subsample mode {self.subsample!r}")
        if self.workers < 1:
            raise TrainingError(f"workers must be >= 1, got {self.workers}")
        self.augment.validate()


@dataclasses.dataclass
class BatchSample:
    shape_ids: list[str]
    clouds: list[PointCloud]
    image_features: np.ndarray  # (B, D) float32
    text_features: np.ndarray  # (B, D) float32


def sample_batch(
    manifest: TripletManifest,
    image_table: EmbeddingTable,
    text_table: EmbeddingTable,
    batch_size: int,
    rng: np.random.Generator,
    *,
    cloud_root: Path,
    point_budget: int,
    augment_spec: AugmentSpec | None = None,
    caption_top_k: int = 1,
    subsample: str = "fps",
    workers: int = 1,
) -> BatchSample:
    """Draw B distinct shapes, one random view each, with the top-k caption
    aggregate as the text feature; clouds are loaded, augmented, and cut to
    the point budget.

    All randomness is drawn from ``rng`` up front, so assembling items with
    multiple workers yields a batch identical to the sequential one.
    """
    n = len(manifest.shapes)
    if batch_size > n:
        raise TrainingError(f"batch_size {batch_size} exceeds {n} shapes")
    picked = rng.choice(n, size=batch_size, replace=False)
    plan = []
    for shape_idx in picked:
        shape = manifest.shapes[int(shape_idx)]
        view = shape.views[int(rng.integers(len(shape.views)))]
        plan.append((shape, view, int(rng.integers(2**63))))

    def assemble(entry) -> PointCloud:
        shape, _view, aug_seed = entry
        path = Path(shape.point_cloud_path)
        if not path.is_absolute():
            path = cloud_root / path
        try:
            pc = read_pointcloud(path)
        except (OSError, ValueError) as e:
            raise TrainingError(
                f"shape {shape.shape_id!r}: cannot load point cloud {path}: {e}"
            ) from e
        if augment_spec is not None:
            pc = augment(pc, augment_spec, seed=aug_seed)
        if pc.n > point_budget:
            if subsample == "truncate":
                keep = list(range(point_budget))
            else:
                keep = farthest_point_sample(pc, point_budget, start=0)
            pc = PointCloud(
                points=pc.points[keep],
                colors=None if pc.colors is None else pc.colors[keep],
            )
        return pc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            clouds = list(pool.map(assemble, plan))
    else:
        clouds = [assemble(entry) for entry in plan]
    return BatchSample(
        shape_ids=[shape.shape_id for shape, _v, _s in plan],
        clouds=clouds,
        image_features=np.stack(
            [image_table.rows[view.image_row] for _s, view, _ in plan]
        ).astype(np.float32),
        text_features=np.stack(
            [select_topk(view, caption_top_k, image_table, text_table)
             for _s, view, _ in plan]
        ).astype(np.float32),
    )


@dataclasses.dataclass
class Checkpoint:
    config: dict
    tensors: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    step: int
    rng_state: dict

    def encoder_params(self) -> EncoderParams:
        cfg = EncoderConfig(
            embed_dim=self.config["model"]["embed_dim"],
            in_channels=self.config["model"]["in_channels"],
            point_mlp_widths=tuple(self.config["model"]["point_mlp_widths"]),
            head_widths=tuple(self.config["model"]["head_widths"]),
            layernorm=self.config["model"].get("layernorm", False),
        )
        tensors = {
            k: ag.leaf(v, requires_grad=True, dtype=np.float32)
            for k, v in self.tensors.items()
            if k != "logit_scale.s"
        }
        return EncoderParams(config=cfg, tensors=tensors)

    def logit_scale(self) -> LogitScale:
        return LogitScale(ag.leaf(self.tensors["logit_scale.s"],
                                  requires_grad=True, dtype=np.float32))

    def digest(self) -> str:
        return hashlib.sha256(_checkpoint_body(self)).hexdigest()


@dataclasses.dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_rows: list[tuple[int, float, float, float, float]]


def _model_config_dict(cfg: EncoderConfig) -> dict:
    return {
        "embed_dim": cfg.embed_dim,
        "in_channels": cfg.in_channels,
        "point_mlp_widths": list(cfg.point_mlp_widths),
        "head_widths": list(cfg.head_widths),
        "layernorm": cfg.layernorm,
    }


def _train_config_dict(cfg: TrainConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["augment"] = {
        "rotate_z": cfg.augment.rotate_z,
        "scale_range": list(cfg.augment.scale_range),
        "jitter_sigma": cfg.augment.jitter_sigma,
        "dropout_rate": cfg.augment.dropout_rate,
    }
    return doc


def train(
    manifest: TripletManifest,
    image_table: EmbeddingTable,
    text_table: EmbeddingTable,
    model_config: EncoderConfig,
    train_config: TrainConfig,
    *,
    cloud_root: Path,
    out_dir: Path | None = None,
) -> TrainResult:
    """Run the alignment loop and return the final checkpoint plus loss log.

    On a non-finite loss the previous step's state is written to
    ``last_good.uckp`` (when ``out_dir`` is given) and the run aborts.
    """
    model_config.validate()
    train_config.validate()
    if image_table.dim != model_config.embed_dim or \
            text_table.dim != model_config.embed_dim:
        raise TrainingError(
            f"table dims ({image_table.dim}, {text_table.dim}) must equal "
            f"encoder embed_dim {model_config.embed_dim}"
        )
    manifest.validate(image_count=image_table.count, text_count=text_table.count)

    config_doc = {
        "model": _model_config_dict(model_config),
        "train": _train_config_dict(train_config),
    }
    params = init_params(model_config, seed=train_config.seed)
    scale = LogitScale.init(train_config.tau_init)
    named = {**params.tensors, "logit_scale.s": scale.s}
    state = ag.AdamState.init(named)
    rng = np.random.default_rng(train_config.seed)

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(
            config=config_doc,
            tensors={k: t.data.copy() for k, t in named.items()},
            opt_m={k: v.copy() for k, v in state.m.items()},
            opt_v={k: v.copy() for k, v in state.v.items()},
            step=step,
            rng_state=rng.bit_generator.state,
        )

    log_path = out_dir / "loss_log.csv" if out_dir is not None else None
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text(LOSS_LOG_HEADER + "\n")

    loss_rows: list[tuple[int, float, float, float, float]] = []
    last_good = snapshot(0)
    aug = train_config.augment
    use_aug = (aug.rotate_z or aug.scale_range != (1.0, 1.0)
               or aug.jitter_sigma > 0 or aug.dropout_rate > 0)
    for step in range(1, train_config.steps + 1):
        batch = sample_batch(
            manifest, image_table, text_table, train_config.batch_size, rng,
            cloud_root=cloud_root,
            point_budget=train_config.point_budget,
            augment_spec=aug if use_aug else None,
            caption_top_k=train_config.caption_top_k,
            subsample=train_config.subsample,
            workers=train_config.workers,
        )
        f_p = encode(params, batch.clouds)
        total, p2i, p2t = _loss_parts(
            f_p, batch.image_features, batch.text_features, scale,
            (train_config.w_image, train_config.w_text), train_config.reduction,
        )
        if not np.isfinite(total.data):
            if out_dir is not None:
                save_checkpoint(last_good, out_dir / "last_good.uckp")
            raise NonFiniteLossError(
                step, f"non-finite loss at step {step}; last good state retained"
            )
        ag.zero_grads(list(named.values()))
        ag.backward(total)
        grads = {k: t.grad for k, t in named.items()}
        hyper = ag.AdamHyper(lr=train_config.lr_at(step),
                             beta1=train_config.beta1,
                             beta2=train_config.beta2, eps=train_config.eps)
        ag.adam_step(named, grads, state, hyper)
        scale.clamp(train_config.tau_max)
        row = (step, float(total.data), float(p2i.data), float(p2t.data),
               scale.tau)
        loss_rows.append(row)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]!r}\n")
        last_good = snapshot(step)

    result = TrainResult(checkpoint=snapshot(train_config.steps),
                         loss_rows=loss_rows)
    if out_dir is not None:
        save_checkpoint(result.checkpoint, out_dir / "checkpoint.uckp")
    return result


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    name_b = name.encode()
    dims = arr.shape
    return (struct.pack("<I", len(name_b)) + name_b
            + struct.pack("<I", len(dims))
            + struct.pack(f"<{len(dims)}I", *dims)
            + payload)


def _checkpoint_body(ckpt: Checkpoint) -> bytes:
    cfg_bytes = json.dumps(ckpt.config, sort_keys=True,
                           separators=(",", ":")).encode()
    parts = [UCKP_MAGIC, struct.pack("<I", 1),
             struct.pack("<I", len(cfg_bytes)), cfg_bytes]
    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        parts.append(_pack_tensor(name, ckpt.tensors[name]))
    opt_entries = [(f"m.{k}", v) for k, v in sorted(ckpt.opt_m.items())]
    opt_entries += [(f"v.{k}", v) for k, v in sorted(ckpt.opt_v.items())]
    parts.append(struct.pack("<I", len(opt_entries)))
    for name, arr in opt_entries:
        parts.append(_pack_tensor(name, arr))
    parts.append(struct.pack("<Q", ckpt.step))
    rng_bytes = json.dumps(ckpt.rng_state, sort_keys=True,
                           separators=(",", ":")).encode()
    parts.append(struct.pack("<I", len(rng_bytes)))
    parts.append(rng_bytes)
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    body = _checkpoint_body(ckpt)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointCorruptError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def tensor(self) -> tuple[str, np.ndarray]:
        name = self.take(self.u32()).decode()
        ndim = self.u32()
        dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim)) if ndim else ()
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims)
        return name, arr.copy()  # copy: writable, and keeps 0-d shapes 0-d


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != UCKP_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 36:
        raise CheckpointCorruptError(f"{path}: truncated checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointCorruptError(f"{path}: content digest mismatch")
    r = _Reader(body, path)
    r.take(4)  # magic
    version = r.u32()
    if version != 1:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    config = json.loads(r.take(r.u32()).decode())
    tensors = dict(r.tensor() for _ in range(r.u32()))
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name, arr = r.tensor()
        if name.startswith("m."):
            opt_m[name[2:]] = arr
        elif name.startswith("v."):
            opt_v[name[2:]] = arr
        else:
            raise CheckpointFormatError(f"{path}: bad optimizer entry {name!r}")
    step = r.u64()
    rng_state = json.loads(r.take(r.u32()).decode())
    if r.off != len(body):
        raise CheckpointCorruptError(f"{path}: trailing bytes after payload")
    return Checkpoint(config=config, tensors=tensors, opt_m=opt_m, opt_v=opt_v,
                      step=step, rng_state=rng_state)
