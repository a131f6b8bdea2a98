"""Built-in gradient oracle suite: per-op checks and the full composition.

Runs every catalog op through grad_check on small random float64 inputs,
then checks encode -> total_loss end to end. Used by the CLI and by the
acceptance suite.
"""

from __future__ import annotations

import numpy as np

from . import ag
from .geometry import PointCloud
from .model import EncoderConfig, EncoderParams, encode, init_params
from .training import LogitScale, total_loss

__all__ = ["catalog_grad_checks", "composition_grad_check", "run_all"]


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return ag.leaf(rng.uniform(lo, hi, shape), requires_grad=True,
                   dtype=np.float64)


def _const(rng, shape, lo=0.5, hi=1.5):
    return ag.leaf(rng.uniform(lo, hi, shape), dtype=np.float64)


def _gap_spaced(rng, shape, gap=0.05):
    vals = gap * np.arange(1, int(np.prod(shape)) + 1)
    rng.shuffle(vals)
    return ag.leaf(vals.reshape(shape), requires_grad=True, dtype=np.float64)


def _op_cases(rng):
    """(builder, params) per catalog op; inputs avoid relu/max kinks."""
    signed = rng.uniform(0.1, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    cases = {}

    p = {"a": _leaf(rng, (3, 2)), "b": _leaf(rng, (2, 4))}
    cases["matmul"] = (lambda q: ag.sum_all(ag.matmul(q["a"], q["b"])), p)

    p = {"a": _leaf(rng, (3, 4)), "b": _leaf(rng, (4,))}
    cases["add"] = (
        lambda q: ag.sum_all(ag.multiply(ag.add(q["a"], q["b"]),
                                         ag.add(q["a"], q["b"]))), p)

    p = {"a": _leaf(rng, (3, 4)), "b": _leaf(rng, (3, 4))}
    cases["subtract"] = (
        lambda q: ag.sum_all(ag.multiply(ag.subtract(q["a"], q["b"]),
                                         ag.subtract(q["a"], q["b"]))), p)

    p = {"a": _leaf(rng, (4, 3)), "b": _leaf(rng, (4, 3))}
    cases["elementwise-multiply"] = (
        lambda q: ag.sum_all(ag.multiply(q["a"], q["b"])), p)

    p = {"x": ag.leaf(signed, requires_grad=True, dtype=np.float64)}
    cases["relu"] = (
        lambda q: ag.sum_all(ag.multiply(ag.relu(q["x"]), ag.relu(q["x"]))), p)

    p = {"x": _gap_spaced(rng, (4, 6))}
    w = _const(rng, (1, 6))
    cases["max-over-axis"] = (
        lambda q: ag.sum_all(ag.multiply(ag.max_over_axis(q["x"], 0), w)), p)

    p = {"x": _leaf(rng, (4, 6))}
    w2 = _const(rng, (4, 1))
    cases["mean-over-axis"] = (
        lambda q: ag.sum_all(ag.multiply(ag.mean_over_axis(q["x"], 1), w2)), p)

    p = {"x": _leaf(rng, (3, 5))}
    w3 = _const(rng, (5, 3))
    cases["transpose"] = (
        lambda q: ag.sum_all(ag.multiply(ag.transpose(q["x"]), w3)), p)

    p = {"a": _leaf(rng, (2, 3)), "b": _leaf(rng, (3, 3))}
    w4 = _const(rng, (5, 3))
    cases["concat-rows"] = (
        lambda q: ag.sum_all(ag.multiply(ag.concat_rows([q["a"], q["b"]]), w4)),
        p)

    p = {"x": _leaf(rng, (2, 5), lo=0.3, hi=1.0)}
    w5 = _const(rng, (2, 5))
    cases["l2-normalize-rows"] = (
        lambda q: ag.sum_all(ag.multiply(ag.l2_normalize_rows(q["x"]), w5)), p)

    p = {"x": _leaf(rng, (3, 3)),
         "c": ag.leaf(np.asarray(rng.uniform(0.5, 1.5)), requires_grad=True,
                      dtype=np.float64)}
    cases["scale-by-scalar"] = (
        lambda q: ag.sum_all(ag.scale_by_scalar(q["x"], q["c"])), p)

    p = {"s": ag.leaf(np.asarray(rng.uniform(-1.0, 1.0)), requires_grad=True,
                      dtype=np.float64)}
    cases["exp-scalar"] = (lambda q: ag.exp_scalar(q["s"]), p)

    p = {"x": _leaf(rng, (3, 5))}
    w6 = _const(rng, (3, 5))
    cases["log-softmax-rows"] = (
        lambda q: ag.sum_all(ag.multiply(ag.log_softmax_rows(q["x"]), w6)), p)

    p = {"x": _leaf(rng, (4, 4))}
    cases["negative-log-likelihood-diagonal"] = (
        lambda q: ag.nll_diagonal(ag.log_softmax_rows(q["x"])), p)

    p = {"x": _leaf(rng, (4, 6))}
    cases["sum-all"] = (
        lambda q: ag.sum_all(ag.multiply(q["x"], q["x"])), p)

    return cases


def catalog_grad_checks(seed: int = 0, step: float = 1e-3,
                        tol: float = 1e-4) -> dict[str, ag.GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = {}
    for kind, (builder, params) in _op_cases(rng).items():
        reports[kind] = ag.grad_check(builder, params, step=step, tol=tol)
    return reports


def composition_grad_check(seed: int = 0, step: float = 1e-3,
                           tol: float = 1e-4, batch: int = 3, dim: int = 8,
                           points: int = 4) -> ag.GradCheckReport:
    """encode -> total_loss, differentiated through every encoder parameter
    and the logit scale."""
    rng = np.random.default_rng(seed)
    config = EncoderConfig(embed_dim=dim, point_mlp_widths=(8, 12),
                           head_widths=(12, dim))
    params = init_params(config, seed=seed, dtype=np.float64)
    scale = LogitScale.init(0.07, dtype=np.float64)
    clouds = []
    for _ in range(batch):
        pts = rng.normal(size=(points, 3))
        pts /= np.max(np.linalg.norm(pts, axis=1))
        clouds.append(PointCloud(points=pts.astype(np.float32)))

    def unit(shape):
        rows = rng.normal(size=shape)
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    f_i = ag.leaf(unit((batch, dim)), dtype=np.float64)
    f_t = ag.leaf(unit((batch, dim)), dtype=np.float64)
    named = {**params.tensors, "logit_scale.s": scale.s}

    def builder(_q):
        # grad_check perturbs the shared tensors in place
        f_p = encode(EncoderParams(config, params.tensors), clouds)
        return total_loss(f_p, f_i, f_t, LogitScale(named["logit_scale.s"]),
                          reduction="mean")

    return ag.grad_check(builder, named, step=step, tol=tol)


def run_all(seed: int = 0, step: float = 1e-3, tol: float = 1e-4):
    """All checks; returns (passed, report text)."""
    lines = []
    ok = True
    for kind, report in catalog_grad_checks(seed, step, tol).items():
        entry = max(report.entries, key=lambda e: e.max_rel_err)
        status = "ok" if report.passed else "FAIL"
        skipped = sum(e.skipped for e in report.entries)
        lines.append(f"op {kind}: max_rel_err={entry.max_rel_err:.3e} "
                     f"skipped={skipped} [{status}]")
        ok = ok and report.passed
    comp = composition_grad_check(seed, step, tol)
    status = "ok" if comp.passed else "FAIL"
    worst = max(comp.entries, key=lambda e: e.max_rel_err)
    skipped = sum(e.skipped for e in comp.entries)
    lines.append(f"composition encode->total_loss: "
                 f"max_rel_err={worst.max_rel_err:.3e} "
                 f"params={len(comp.entries)} skipped={skipped} [{status}]")
    ok = ok and comp.passed
    return ok, "\n".join(lines)
