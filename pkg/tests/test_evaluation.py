import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trialign import evaluation as ev
from trialign.model import init_params

from helpers import tiny_model_config
from oracles import recount_metrics


def make_labels(rng, c=6, d=16):
    rows = rng.normal(size=(c, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return ev.LabelEmbeddings(names=[f"cat{i}" for i in range(c)],
                              rows=rows.astype(np.float32))


class TestZeroShotClassify:
    def test_exact_match_wins(self):
        rng = np.random.default_rng(1)
        labels = make_labels(rng)
        f_p = labels.rows[3:4].copy()
        pred = ev.zero_shot_classify(f_p, labels)
        assert pred[0, 0] == 3

    def test_tie_prefers_lower_id(self):
        rng = np.random.default_rng(2)
        labels = make_labels(rng, c=4)
        labels.rows[2] = labels.rows[1]
        f_p = labels.rows[1:2].copy()
        pred = ev.zero_shot_classify(f_p, labels)
        assert pred[0, 0] == 1
        assert pred[0, 1] == 2

    def test_matches_argsort_oracle(self):
        rng = np.random.default_rng(3)
        labels = make_labels(rng, c=6, d=8)
        f_p = rng.normal(size=(20, 8))
        f_p /= np.linalg.norm(f_p, axis=1, keepdims=True)
        pred = ev.zero_shot_classify(f_p.astype(np.float32), labels)
        scores = f_p @ labels.rows.astype(np.float64).T
        for i in range(20):
            oracle = sorted(range(6), key=lambda c: (-scores[i, c], c))[:5]
            assert pred[i].tolist() == oracle

    def test_rescaling_invariance_exact(self):
        rng = np.random.default_rng(4)
        labels = make_labels(rng)
        f_p = rng.normal(size=(10, 16)).astype(np.float32)
        a = ev.zero_shot_classify(f_p, labels)
        b = ev.zero_shot_classify(3.7 * f_p, labels)
        assert np.array_equal(a, b)

    def test_dim_mismatch(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ev.EvalError):
            ev.zero_shot_classify(np.ones((2, 3), dtype=np.float32),
                                  make_labels(rng))

    def test_topk_capped_by_class_count(self):
        rng = np.random.default_rng(6)
        labels = make_labels(rng, c=3)
        pred = ev.zero_shot_classify(labels.rows[:2].copy(), labels)
        assert pred.shape == (2, 3)


class TestComputeMetrics:
    def test_all_correct(self):
        pred = np.array([[0, 1], [1, 0], [2, 1]])
        report = ev.compute_metrics(pred, [0, 1, 2], num_classes=3)
        assert report.top1 == report.top5 == 1.0
        assert report.overall_accuracy == report.class_average_accuracy == 1.0

    def test_imbalance_hand_case(self):
        # 90 of class 0, 10 of class 1, everything predicted class 0
        truth = [0] * 90 + [1] * 10
        pred = np.zeros((100, 1), dtype=np.int64)
        report = ev.compute_metrics(pred, truth, num_classes=2)
        assert report.overall_accuracy == pytest.approx(0.9)
        assert report.class_average_accuracy == pytest.approx(0.5)

    def test_confusion_rows_sum_to_class_counts(self):
        rng = np.random.default_rng(7)
        truth = rng.integers(0, 4, size=50)
        pred = rng.integers(0, 4, size=(50, 2))
        report = ev.compute_metrics(pred, truth, num_classes=4)
        for c in range(4):
            assert report.confusion[c].sum() == np.sum(truth == c)

    def test_top1_le_top5(self):
        rng = np.random.default_rng(8)
        truth = rng.integers(0, 6, size=80)
        pred = rng.integers(0, 6, size=(80, 5))
        report = ev.compute_metrics(pred, truth, num_classes=6)
        assert report.top1 <= report.top5

    def test_empty_rejected(self):
        with pytest.raises(ev.EvalError):
            ev.compute_metrics(np.zeros((0, 1), dtype=np.int64), [],
                               num_classes=2)

    def test_zero_sample_classes_excluded(self):
        pred = np.array([[0], [1]])
        report = ev.compute_metrics(pred, [0, 0], num_classes=3)
        assert report.class_average_accuracy == pytest.approx(0.5)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 60),
           c=st.integers(2, 8))
    def test_matches_recount_oracle(self, seed, n, c):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, c, size=n)
        k = min(5, c)
        pred = np.stack([rng.permutation(c)[:k] for _ in range(n)])
        report = ev.compute_metrics(pred, truth, num_classes=c)
        oracle = recount_metrics(pred, truth, c)
        assert report.top1 == pytest.approx(oracle["top1"])
        assert report.top5 == pytest.approx(oracle["top5"])
        assert report.overall_accuracy == pytest.approx(oracle["overall"])
        assert report.class_average_accuracy == pytest.approx(
            oracle["class_average"])

    def test_balanced_classes_class_avg_equals_overall_exactly(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            c = int(rng.integers(2, 7))
            per = int(rng.integers(1, 9))
            truth = np.repeat(np.arange(c), per)
            pred = rng.integers(0, c, size=(c * per, 1))
            report = ev.compute_metrics(pred, truth, num_classes=c)
            assert report.class_average_accuracy == report.overall_accuracy


def separable_embeddings(rng, n_per_class=20, d=8, margin=4.0):
    a = rng.normal(size=d)
    a /= np.linalg.norm(a)
    x0 = rng.normal(size=(n_per_class, d)) + margin * a
    x1 = rng.normal(size=(n_per_class, d)) - margin * a
    x = np.concatenate([x0, x1]).astype(np.float32)
    y = np.array([0] * n_per_class + [1] * n_per_class)
    return x, y


class TestProbes:
    def test_linearly_separable_probe(self):
        rng = np.random.default_rng(10)
        x, y = separable_embeddings(rng)
        head, report = ev.linear_probe(x, y, x, y, num_classes=2,
                                       config=ev.ProbeConfig(steps=200))
        assert report.top1 >= 0.99

    def test_permuted_order_same_weights_with_ids(self):
        rng = np.random.default_rng(11)
        x, y = separable_embeddings(rng)
        ids = [f"s{i:03d}" for i in range(len(y))]
        cfg = ev.ProbeConfig(steps=50)
        head_a, _ = ev.linear_probe(x, y, x, y, num_classes=2, config=cfg,
                                    ids=ids)
        perm = rng.permutation(len(y))
        head_b, _ = ev.linear_probe(x[perm], y[perm], x, y, num_classes=2,
                                    config=cfg, ids=[ids[i] for i in perm])
        for k in head_a:
            assert head_a[k].data.tobytes() == head_b[k].data.tobytes()

    def test_single_class_rejected(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(10, 4)).astype(np.float32)
        with pytest.raises(ev.EvalError):
            ev.linear_probe(x, np.zeros(10, dtype=int), x,
                            np.zeros(10, dtype=int), num_classes=2,
                            config=ev.ProbeConfig())

    def test_frozen_finetune_equals_probe(self):
        from trialign.geometry import PointCloud
        from trialign.model import encode
        rng = np.random.default_rng(13)
        cfg_model = tiny_model_config(embed_dim=8)
        encoder = init_params(cfg_model, seed=3)
        clouds = []
        labels = []
        for i in range(12):
            pts = rng.normal(size=(20, 3))
            pts[:, 2] += (i % 2) * 2.0 - 1.0
            pts /= np.max(np.linalg.norm(pts, axis=1))
            clouds.append(PointCloud(points=pts.astype(np.float32)))
            labels.append(i % 2)
        labels = np.array(labels)
        probe_cfg = ev.ProbeConfig(steps=30, encoder_lr=0.0)

        emb = encode(encoder, clouds).data
        head_probe, report_probe = ev.linear_probe(
            emb, labels, emb, labels, num_classes=2, config=probe_cfg)
        result_ft, report_ft = ev.finetune(
            encoder, clouds, labels, clouds, labels, num_classes=2,
            config=probe_cfg)
        for k in head_probe:
            assert head_probe[k].data.tobytes() == \
                result_ft["head"][k].data.tobytes()
        assert report_probe.top1 == report_ft.top1

    def test_fit_classifier_dispatch(self):
        rng = np.random.default_rng(14)
        x, y = separable_embeddings(rng, n_per_class=8)
        _, report = ev.fit_classifier(
            "linear_probe", ev.ProbeConfig(steps=50),
            train_x=x, train_y=y, test_x=x, test_y=y, num_classes=2)
        assert report.top1 > 0.9
        with pytest.raises(ev.EvalError):
            ev.fit_classifier("boosted_trees", ev.ProbeConfig())
