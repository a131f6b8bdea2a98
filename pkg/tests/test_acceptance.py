"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The end-to-end criteria
build synthetic datasets, train from scratch, and evaluate zero-shot; the
whole module takes a few minutes on a laptop CPU.
"""

import time

import numpy as np
import pytest

from trialign import ag, selfcheck, synth
from trialign import training as tr
from trialign.embedstore import (EmbeddingTable, TableFormatError, ViewRecord,
                                 rank_captions, read_table, select_topk,
                                 write_table)
from trialign.evaluation import compute_metrics
from trialign.geometry import (PointCloud, PointCloudFormatError,
                               farthest_point_sample, read_pointcloud,
                               write_pointcloud)
from trialign.model import EncoderConfig, init_params, encode

from helpers import run_zero_shot_pipeline, tiny_spec
from oracles import (brute_force_fps, naive_symmetric_infonce, recount_metrics)


def report_line(number, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number}: {status} - {detail}")
    assert ok, detail


def test_criterion_1_gradient_oracle():
    started = time.perf_counter()
    ok, report = selfcheck.run_all(seed=0, step=1e-3, tol=1e-4)
    elapsed = time.perf_counter() - started
    ok = ok and elapsed < 10.0
    report_line(1, ok, f"op catalog + composition grad checks in {elapsed:.2f}s "
                       f"(tol 1e-4)\n{report}")


def test_criterion_2_loss_oracle_equivalence():
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(100):
        b = int(rng.integers(1, 9))
        d = int(rng.integers(2, 17))
        fp = rng.normal(size=(b, d))
        fp /= np.linalg.norm(fp, axis=1, keepdims=True)
        fx = rng.normal(size=(b, d))
        fx /= np.linalg.norm(fx, axis=1, keepdims=True)
        tau = float(rng.uniform(0.05, 1.5))
        scale = tr.LogitScale.init(tau, dtype=np.float64)
        loss = tr.contrastive_loss(ag.leaf(fp, dtype=np.float64),
                                   ag.leaf(fx, dtype=np.float64),
                                   scale, reduction="sum")
        oracle = naive_symmetric_infonce(fp, fx, tau, "sum")
        worst = max(worst, abs(float(loss.data) - oracle))

    single = tr.contrastive_loss(
        ag.leaf(np.ones((1, 4)) / 2.0, dtype=np.float64),
        ag.leaf(np.ones((1, 4)) / 2.0, dtype=np.float64),
        tr.LogitScale.init(0.3, dtype=np.float64), reduction="sum")
    b2 = tr.contrastive_loss(ag.leaf(np.eye(2), dtype=np.float64),
                             ag.leaf(np.eye(2), dtype=np.float64),
                             tr.LogitScale.init(1.0, dtype=np.float64),
                             reduction="sum")
    ok = (worst < 1e-6 and float(single.data) == 0.0
          and abs(float(b2.data) - 0.62652) < 5e-6)
    report_line(2, ok, f"100 random instances max |diff| = {worst:.2e}; "
                       f"B=1 loss = {float(single.data)}; "
                       f"B=2 hand value = {float(b2.data):.5f}")


def test_criterion_3_permutation_duplicate_invariance():
    config = EncoderConfig(embed_dim=16, point_mlp_widths=(16, 32),
                           head_widths=(32, 16))
    params = init_params(config, seed=5)
    rng = np.random.default_rng(30)
    failures = 0
    for trial in range(100):
        n = int(rng.integers(8, 64))
        pts = rng.normal(size=(n, 3))
        pts /= np.max(np.linalg.norm(pts, axis=1))
        pc = PointCloud(points=pts.astype(np.float32))
        base = encode(params, [pc]).data.tobytes()
        perm = rng.permutation(n)
        permuted = encode(params, [PointCloud(points=pc.points[perm].copy())]
                          ).data.tobytes()
        dup_idx = rng.integers(0, n, size=n // 2)
        doubled = np.concatenate([pc.points, pc.points[dup_idx]])
        duplicated = encode(params, [PointCloud(points=doubled)]).data.tobytes()
        if base != permuted or base != duplicated:
            failures += 1
    report_line(3, failures == 0,
                f"100 trials, {failures} bitwise mismatches under "
                "permutation/duplication")


def test_criterion_4_fps_and_ranking_oracles():
    rng = np.random.default_rng(40)
    fps_bad = 0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        m = int(rng.integers(1, n + 1))
        start = int(rng.integers(n))
        pts = rng.normal(size=(n, 3)).astype(np.float32)
        pc = PointCloud(points=pts)
        if farthest_point_sample(pc, m, start) != brute_force_fps(pts, m, start):
            fps_bad += 1

    rank_bad = 0
    for _ in range(200):
        n_cap = int(rng.integers(1, 11))
        d = int(rng.integers(2, 12))
        img = rng.normal(size=(1, d))
        img /= np.linalg.norm(img)
        caps = rng.normal(size=(n_cap, d))
        caps /= np.linalg.norm(caps, axis=1, keepdims=True)
        image_table = EmbeddingTable(rows=img.astype(np.float32))
        text_table = EmbeddingTable(rows=caps.astype(np.float32))
        view = ViewRecord(view_index=0, image_row=0,
                          caption_rows=list(range(n_cap)))
        got = rank_captions(view, image_table, text_table)
        scores = [float(np.dot(caps[i].astype(np.float64),
                               img[0].astype(np.float64))) for i in range(n_cap)]
        oracle = sorted(range(n_cap), key=lambda i: (-scores[i], i))
        if got != oracle:
            rank_bad += 1
        k = int(rng.integers(1, n_cap + 1))
        agg = select_topk(view, k, image_table, text_table)
        if k == 1:
            ok_topk = agg.tobytes() == caps[oracle[0]].astype(np.float32).tobytes()
        else:
            mean = caps[oracle[:k]].astype(np.float64).mean(axis=0)
            expect = mean / np.linalg.norm(mean)
            ok_topk = np.max(np.abs(agg.astype(np.float64) - expect)) < 1e-6
        if not ok_topk:
            rank_bad += 1

    # exact-tie paths: duplicated scores and the zero-noise mock
    image_table = EmbeddingTable(rows=np.eye(1, 4, dtype=np.float32))
    tie_caps = np.zeros((4, 4), dtype=np.float32)
    for i, s in enumerate((0.2, 0.9, 0.9, 0.1)):
        tie_caps[i, 0] = s
        tie_caps[i, 1] = np.sqrt(1 - s * s)
    tie_view = ViewRecord(view_index=0, image_row=0, caption_rows=[0, 1, 2, 3])
    tie_ok = rank_captions(tie_view, image_table,
                           EmbeddingTable(rows=tie_caps)) == [1, 2, 0, 3]
    spec = tiny_spec(image_noise=0.0, text_noise=0.0)
    dataset = synth.gen_dataset(spec)
    mock = synth.mock_frozen_encoders(spec, dataset)
    view = mock.manifest.shapes[0].views[0]
    tie_ok = tie_ok and rank_captions(
        view, mock.image_table, mock.text_table) == view.caption_rows

    ok = fps_bad == 0 and rank_bad == 0 and tie_ok
    report_line(4, ok, f"fps mismatches={fps_bad}/200, "
                       f"ranking mismatches={rank_bad}/200, ties ok={tie_ok}")


# Reference configuration, calibrated once and frozen: encoder widths and
# light augmentation are free choices of the run; everything else is pinned
# by the criterion.
CRITERION5_MODEL = EncoderConfig(embed_dim=64, point_mlp_widths=(48, 96, 192),
                                 head_widths=(192, 64))


def criterion5_spec(seed):
    return synth.SynthSpec(per_class_train=35, per_class_test=10,
                           embed_dim=64, image_noise=0.05, text_noise=0.05,
                           views=12, captions_per_view=10,
                           points_per_cloud=2048, seed=seed)


def criterion5_train(seed):
    from trialign.geometry import AugmentSpec
    return tr.TrainConfig(batch_size=32, steps=300, lr=1e-3, seed=seed,
                          point_budget=2048,
                          augment=AugmentSpec(rotate_z=True,
                                              scale_range=(0.95, 1.05),
                                              jitter_sigma=0.002))


def test_criterion_5_end_to_end_alignment(tmp_path):
    results = []
    for seed in (0, 1, 2):
        started = time.perf_counter()
        report, result = run_zero_shot_pipeline(
            tmp_path, criterion5_spec(seed), CRITERION5_MODEL,
            criterion5_train(seed))
        elapsed = time.perf_counter() - started
        losses = [row[1] for row in result.loss_rows]
        improved = np.mean(losses[-50:]) < np.mean(losses[:50])
        results.append((seed, report.top1, report.top5, elapsed, improved))
    ok = all(t1 >= 0.85 and t5 >= 0.99 and dt < 180.0 and improved
             for _, t1, t5, dt, improved in results)
    detail = "; ".join(
        f"seed {s}: top1={t1:.3f} top5={t5:.3f} {dt:.0f}s loss_improved={imp}"
        for s, t1, t5, dt, imp in results)
    report_line(5, ok, detail + " (thresholds: top1>=0.85, top5>=0.99, <180s)")


def _trend_spec(seed, views, **overrides):
    base = dict(per_class_train=12, per_class_test=6, embed_dim=16,
                image_noise=0.05, text_noise=0.05, views=views,
                captions_per_view=10, view_bias=0.45,
                points_per_cloud=256, seed=seed)
    base.update(overrides)
    return synth.SynthSpec(**base)


_TREND_MODEL = EncoderConfig(embed_dim=16, point_mlp_widths=(24, 48, 96),
                             head_widths=(96, 16))


def test_criterion_6_views_ablation_trend(tmp_path):
    means = {}
    for views in (1, 2, 8):
        accs = []
        for seed in range(5):
            cfg = tr.TrainConfig(batch_size=16, steps=240, lr=1e-3, seed=seed,
                                 point_budget=256)
            report, _ = run_zero_shot_pipeline(
                tmp_path, _trend_spec(seed, views), _TREND_MODEL, cfg)
            accs.append(report.top1)
        means[views] = float(np.mean(accs))
    ok = (means[2] >= means[1] - 0.01) and (means[8] >= means[2] - 0.01)
    report_line(6, ok, f"mean top-1 by views: "
                       f"1 -> {means[1]:.3f}, 2 -> {means[2]:.3f}, "
                       f"8 -> {means[8]:.3f} (non-decreasing within 1pp)")


def test_criterion_7_topk_caption_trend(tmp_path):
    means = {}
    for k in (1, 10):
        accs = []
        for seed in range(5):
            spec = _trend_spec(seed, views=4, embed_dim=8, view_bias=0.0,
                               wrong_captions_per_view=2)
            cfg = tr.TrainConfig(batch_size=16, steps=120, lr=1e-3, seed=seed,
                                 point_budget=256, caption_top_k=k,
                                 w_image=0.5)
            model = EncoderConfig(embed_dim=8, point_mlp_widths=(24, 48, 96),
                                  head_widths=(96, 8))
            report, _ = run_zero_shot_pipeline(tmp_path, spec, model, cfg)
            accs.append(report.top1)
        means[k] = float(np.mean(accs))
    ok = means[1] >= means[10]
    report_line(7, ok, f"2/10 wrong captions: top-1 with k=1 -> {means[1]:.3f} "
                       f">= k=10 -> {means[10]:.3f}")


def test_criterion_8_determinism_and_formats(tmp_path):
    problems = []

    # same seed/config twice: identical dataset bytes and checkpoint digests
    spec = tiny_spec(per_class_train=4, seed=11)
    for name in ("a", "b"):
        synth.build_synth_dataset(spec, tmp_path / name)
    files_a = sorted((tmp_path / "a").rglob("*"))
    for fa in files_a:
        if fa.is_file():
            fb = tmp_path / "b" / fa.relative_to(tmp_path / "a")
            if fa.read_bytes() != fb.read_bytes():
                problems.append(f"dataset file differs: {fa.name}")

    from helpers import build_tiny, tiny_model_config, tiny_train_config
    data = build_tiny(tmp_path, seed=3)
    digests = set()
    for _ in range(2):
        result = tr.train(data["manifest_train"], data["images"],
                          data["texts"], tiny_model_config(),
                          tiny_train_config(steps=6), cloud_root=data["root"])
        digests.add(result.checkpoint.digest())
    if len(digests) != 1:
        problems.append("training digests differ across identical runs")

    # round-trips are bit-exact
    rng = np.random.default_rng(8)
    pc = PointCloud(points=rng.normal(size=(21, 3)).astype(np.float32),
                    colors=rng.random((21, 3)).astype(np.float32))
    write_pointcloud(pc, tmp_path / "c.upc")
    back = read_pointcloud(tmp_path / "c.upc")
    if back.points.tobytes() != pc.points.tobytes() or \
            back.colors.tobytes() != pc.colors.tobytes():
        problems.append("UPC1 round-trip not bit-exact")
    rows = rng.normal(size=(9, 12))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    table = EmbeddingTable(rows=rows.astype(np.float32))
    write_table(table, tmp_path / "t.ulp2")
    if read_table(tmp_path / "t.ulp2").rows.tobytes() != table.rows.tobytes():
        problems.append("ULP2 round-trip not bit-exact")
    ckpt = result.checkpoint
    tr.save_checkpoint(ckpt, tmp_path / "c.uckp")
    if tr.load_checkpoint(tmp_path / "c.uckp").digest() != ckpt.digest():
        problems.append("checkpoint round-trip digest mismatch")

    # corruption rejections with the owning error classes
    (tmp_path / "bad.upc").write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(PointCloudFormatError):
        read_pointcloud(tmp_path / "bad.upc")
    (tmp_path / "bad.ulp2").write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(TableFormatError):
        read_table(tmp_path / "bad.ulp2")
    (tmp_path / "bad.uckp").write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(tr.CheckpointFormatError):
        tr.load_checkpoint(tmp_path / "bad.uckp")
    blob = (tmp_path / "c.upc").read_bytes()
    (tmp_path / "trunc.upc").write_bytes(blob[:-3])
    with pytest.raises(PointCloudFormatError):
        read_pointcloud(tmp_path / "trunc.upc")
    blob = (tmp_path / "t.ulp2").read_bytes()
    (tmp_path / "trunc.ulp2").write_bytes(blob[:-3])
    with pytest.raises(TableFormatError):
        read_table(tmp_path / "trunc.ulp2")
    blob = (tmp_path / "c.uckp").read_bytes()
    (tmp_path / "trunc.uckp").write_bytes(blob[:-3])
    with pytest.raises(tr.CheckpointCorruptError):
        tr.load_checkpoint(tmp_path / "trunc.uckp")

    report_line(8, not problems,
                "determinism + round-trips + corruption rejection "
                + ("ok" if not problems else "; ".join(problems)))


def test_criterion_9_metrics_correctness():
    rng = np.random.default_rng(90)
    mismatches = 0
    for _ in range(1000):
        c = int(rng.integers(2, 9))
        n = int(rng.integers(1, 40))
        truth = rng.integers(0, c, size=n)
        k = min(5, c)
        pred = np.stack([rng.permutation(c)[:k] for _ in range(n)])
        report = compute_metrics(pred, truth, num_classes=c)
        oracle = recount_metrics(pred, truth, c)
        if not (np.isclose(report.top1, oracle["top1"])
                and np.isclose(report.top5, oracle["top5"])
                and np.isclose(report.overall_accuracy, oracle["overall"])
                and np.isclose(report.class_average_accuracy,
                               oracle["class_average"])):
            mismatches += 1

    truth = [0] * 90 + [1] * 10
    pred = np.zeros((100, 1), dtype=np.int64)
    hand = compute_metrics(pred, truth, num_classes=2)
    hand_ok = (hand.overall_accuracy == 0.9
               and hand.class_average_accuracy == 0.5)
    report_line(9, mismatches == 0 and hand_ok,
                f"1000 random recounts, {mismatches} mismatches; "
                f"90/10 hand case overall={hand.overall_accuracy} "
                f"class_avg={hand.class_average_accuracy}")


def test_criterion_10_exporter_conformance(tmp_path):
    # secondary-component criterion: runs only when exporter/dist is built;
    # criteria 1-9 above never touch the exporter
    import json
    import shutil
    import subprocess
    from pathlib import Path

    from trialign.embedstore import clip_score

    exporter_cli = Path(__file__).resolve().parents[1] / "exporter" / "dist" / "cli.js"
    node = shutil.which("node")
    if node is None or not exporter_cli.is_file():
        pytest.skip("secondary exporter not built; criteria 1-9 stand alone")

    data = tmp_path / "data"
    spec = tiny_spec(categories=("cube", "sphere"), per_class_train=2,
                     per_class_test=0, views=2, points_per_cloud=128, seed=9)
    synth.build_synth_dataset(spec, data, write_views=True)
    views = sorted((data / "views").glob("*.pgm"))
    lines = []
    for p in views:
        stem, idx = p.stem.rsplit("_", 1)
        lines.append(f"{stem}\t{int(idx)}\t{p.resolve()}")
    images_tsv = tmp_path / "images.tsv"
    images_tsv.write_text("\n".join(lines) + "\n")

    def exporter(*args):
        out = subprocess.run([node, str(exporter_cli), *args],
                             capture_output=True, text=True, check=True)
        return json.loads(out.stdout.strip())

    out_dir = tmp_path / "exported"
    exporter("export-captions", "--images", str(images_tsv),
             "--out", str(tmp_path / "caps"), "--n", "10")
    exporter("export-triplets", "--images", str(images_tsv),
             "--captions", str(tmp_path / "caps" / "captions.tsv"),
             "--out", str(out_dir), "--dim", "32")

    # read_table enforces the 1e-3 unit-norm invariant on every row
    images_table = read_table(out_dir / "images.ulp2")
    texts_table = read_table(out_dir / "texts.ulp2")
    norms = np.linalg.norm(images_table.rows.astype(np.float64), axis=1)
    norm_ok = bool(np.max(np.abs(norms - 1.0)) <= 1e-3)

    sidecar = json.loads((out_dir / "texts.ulp2.sidecar.json").read_text())
    worst = 0.0
    for pair in sidecar["pairs"][:20]:
        ours = clip_score(images_table.rows[pair["image_row"]],
                          texts_table.rows[pair["text_row"]])
        worst = max(worst, abs(ours - pair["cosine"]))
    ok = norm_ok and worst < 1e-5
    report_line(10, ok, f"exported tables load (rows={images_table.count}, "
                        f"{texts_table.count}); max clip_score vs sidecar "
                        f"cosine diff = {worst:.2e}")
