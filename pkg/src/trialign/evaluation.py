"""Zero-shot classification against label embeddings, metrics, and probes.

Metric fractions are computed with exact rational arithmetic from integer
tallies, so identities like class-average == overall under balanced classes
hold exactly.
"""

from __future__ import annotations

import dataclasses
from fractions import Fraction

import numpy as np

from . import ag
from .model import EncoderParams, encode

__all__ = [
    "LabelEmbeddings",
    "EvalReport",
    "EvalError",
    "ProbeConfig",
    "zero_shot_classify",
    "compute_metrics",
    "linear_probe",
    "finetune",
    "fit_classifier",
]


class EvalError(ValueError):
    pass


@dataclasses.dataclass
class LabelEmbeddings:
    names: list[str]
    rows: np.ndarray  # (C, D) float32, unit rows

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def validate(self) -> None:
        if self.count < 2:
            raise EvalError(f"need >= 2 categories, got {self.count}")
        if len(self.names) != self.count:
            raise EvalError(
                f"{len(self.names)} names for {self.count} embedding rows"
            )
        norms = np.linalg.norm(self.rows.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-3:
            raise EvalError("label embedding rows must be unit norm")


@dataclasses.dataclass
class EvalReport:
    top1: float
    top5: float
    overall_accuracy: float
    class_average_accuracy: float
    confusion: np.ndarray  # (C, C) int64, rows = truth, cols = top-1 prediction

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "top5": self.top5,
            "overall_accuracy": self.overall_accuracy,
            "class_average_accuracy": self.class_average_accuracy,
            "confusion": self.confusion.tolist(),
        }

    def csv_row(self) -> str:
        return (f"{self.top1!r},{self.top5!r},{self.overall_accuracy!r},"
                f"{self.class_average_accuracy!r}")


def rank_scores(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k column ids per row by score descending; ties to the lower id."""
    order = np.argsort(-scores.astype(np.float64), axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def zero_shot_classify(f_p: np.ndarray, labels: LabelEmbeddings) -> np.ndarray:
    """Rank categories by cosine similarity; returns (B, min(5, C)) ids."""
    labels.validate()
    f_p = np.asarray(f_p)
    if f_p.ndim != 2 or f_p.shape[1] != labels.dim:
        raise EvalError(
            f"embedding dim mismatch: {f_p.shape} vs labels dim {labels.dim}"
        )
    scores = f_p.astype(np.float64) @ labels.rows.astype(np.float64).T
    return rank_scores(scores, min(5, labels.count))


def compute_metrics(predictions: np.ndarray, ground_truth,
                    num_classes: int) -> EvalReport:
    """Tally top-1/top-5, overall, and class-average accuracy.

    Classes with zero samples are excluded from the class-average mean.
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(ground_truth, dtype=np.int64)
    if predictions.ndim != 2 or len(predictions) != len(truth):
        raise EvalError(
            f"predictions {predictions.shape} do not match {len(truth)} labels"
        )
    if len(truth) == 0:
        raise EvalError("cannot compute metrics on empty input")
    if truth.min() < 0 or truth.max() >= num_classes:
        raise EvalError("ground-truth label out of range")
    if predictions.min() < 0 or predictions.max() >= num_classes:
        raise EvalError("predicted label out of range")

    n = len(truth)
    top1_hits = int(np.sum(predictions[:, 0] == truth))
    top5_hits = int(np.sum(np.any(predictions == truth[:, None], axis=1)))
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (truth, predictions[:, 0]), 1)

    recalls = []
    for c in range(num_classes):
        total = int(confusion[c].sum())
        if total:
            recalls.append(Fraction(int(confusion[c, c]), total))
    class_avg = sum(recalls, Fraction(0)) / len(recalls)
    return EvalReport(
        top1=float(Fraction(top1_hits, n)),
        top5=float(Fraction(top5_hits, n)),
        overall_accuracy=float(Fraction(top1_hits, n)),
        class_average_accuracy=float(class_avg),
        confusion=confusion,
    )


@dataclasses.dataclass(frozen=True)
class ProbeConfig:
    steps: int = 200
    lr: float = 1e-2
    encoder_lr: float | None = None  # finetune: None follows lr, 0 freezes
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _canonical_order(n: int, ids) -> np.ndarray:
    if ids is None:
        return np.arange(n)
    if len(ids) != n:
        raise EvalError(f"{len(ids)} ids for {n} samples")
    return np.argsort(np.asarray(ids), kind="stable")


def _check_train_labels(train_y: np.ndarray) -> None:
    if len(np.unique(train_y)) < 2:
        raise EvalError("training set is degenerate: fewer than 2 classes")


def _init_head(dim: int, num_classes: int, seed: int) -> dict[str, ag.Tensor]:
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / dim)
    return {
        "probe.weight": ag.leaf(rng.uniform(-bound, bound, (dim, num_classes)),
                                requires_grad=True),
        "probe.bias": ag.leaf(np.zeros(num_classes), requires_grad=True),
    }


def _cross_entropy(logits: ag.Tensor, onehot: ag.Tensor, n: int) -> ag.Tensor:
    picked = ag.sum_all(ag.multiply(ag.log_softmax_rows(logits), onehot))
    return ag.scale_by_scalar(picked, -1.0 / n)


def linear_probe(train_x, train_y, test_x, test_y, num_classes: int,
                 config: ProbeConfig, ids=None):
    """Single linear layer with softmax cross-entropy on frozen embeddings."""
    train_x = np.asarray(train_x, dtype=np.float32)
    train_y = np.asarray(train_y, dtype=np.int64)
    order = _canonical_order(len(train_y), ids)
    train_x, train_y = train_x[order], train_y[order]
    _check_train_labels(train_y)

    head = _init_head(train_x.shape[1], num_classes, config.seed)
    x_leaf = ag.leaf(train_x)
    onehot = np.zeros((len(train_y), num_classes), dtype=np.float32)
    onehot[np.arange(len(train_y)), train_y] = 1.0
    onehot_leaf = ag.leaf(onehot)
    state = ag.AdamState.init(head)
    hyper = ag.AdamHyper(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                         eps=config.eps)
    for _ in range(config.steps):
        logits = ag.add(ag.matmul(x_leaf, head["probe.weight"]),
                        head["probe.bias"])
        loss = _cross_entropy(logits, onehot_leaf, len(train_y))
        ag.zero_grads(list(head.values()))
        ag.backward(loss)
        ag.adam_step(head, {k: t.grad for k, t in head.items()}, state, hyper)

    test_x = np.asarray(test_x, dtype=np.float32)
    scores = (test_x.astype(np.float64)
              @ head["probe.weight"].data.astype(np.float64)
              + head["probe.bias"].data.astype(np.float64))
    predictions = rank_scores(scores, min(5, num_classes))
    report = compute_metrics(predictions, test_y, num_classes)
    return head, report


def finetune(encoder: EncoderParams, train_clouds, train_y, test_clouds,
             test_y, num_classes: int, config: ProbeConfig, ids=None):
    """Unfreeze the encoder behind a linear classification head.

    ``encoder_lr`` 0 keeps the encoder bitwise frozen, reproducing the
    linear-probe path on this encoder's embeddings.
    """
    train_y = np.asarray(train_y, dtype=np.int64)
    order = _canonical_order(len(train_y), ids)
    train_clouds = [train_clouds[i] for i in order]
    train_y = train_y[order]
    _check_train_labels(train_y)

    dim = encoder.config.embed_dim
    head = _init_head(dim, num_classes, config.seed)
    onehot = np.zeros((len(train_y), num_classes), dtype=np.float32)
    onehot[np.arange(len(train_y)), train_y] = 1.0
    onehot_leaf = ag.leaf(onehot)

    enc_lr = config.lr if config.encoder_lr is None else config.encoder_lr
    head_state = ag.AdamState.init(head)
    head_hyper = ag.AdamHyper(lr=config.lr, beta1=config.beta1,
                              beta2=config.beta2, eps=config.eps)
    enc_state = ag.AdamState.init(encoder.tensors)
    enc_hyper = ag.AdamHyper(lr=enc_lr, beta1=config.beta1,
                             beta2=config.beta2, eps=config.eps)
    update_encoder = enc_lr > 0.0

    for _ in range(config.steps):
        emb = encode(encoder, train_clouds)
        logits = ag.add(ag.matmul(emb, head["probe.weight"]), head["probe.bias"])
        loss = _cross_entropy(logits, onehot_leaf, len(train_y))
        everything = {**head, **encoder.tensors}
        ag.zero_grads(list(everything.values()))
        ag.backward(loss)
        ag.adam_step(head, {k: t.grad for k, t in head.items()},
                     head_state, head_hyper)
        if update_encoder:
            ag.adam_step(encoder.tensors,
                         {k: t.grad for k, t in encoder.tensors.items()},
                         enc_state, enc_hyper)

    test_emb = encode(encoder, list(test_clouds)).data
    scores = (test_emb.astype(np.float64)
              @ head["probe.weight"].data.astype(np.float64)
              + head["probe.bias"].data.astype(np.float64))
    predictions = rank_scores(scores, min(5, num_classes))
    report = compute_metrics(predictions, test_y, num_classes)
    return {"head": head, "encoder": encoder}, report


def fit_classifier(mode: str, config: ProbeConfig, **kwargs):
    if mode == "linear_probe":
        return linear_probe(config=config, **kwargs)
    if mode == "finetune":
        return finetune(config=config, **kwargs)
    raise EvalError(f"unknown classifier mode {mode!r}")
