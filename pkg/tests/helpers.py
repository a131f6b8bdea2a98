"""Shared builders for small on-disk synthetic datasets."""

import numpy as np

from trialign import synth
from trialign.cli import _embed_manifest
from trialign.embedstore import read_manifest, read_table
from trialign.evaluation import (LabelEmbeddings, compute_metrics,
                                 zero_shot_classify)
from trialign.model import EncoderConfig
from trialign.training import TrainConfig, train


def tiny_spec(**overrides) -> synth.SynthSpec:
    base = dict(
        categories=("cube", "sphere"),
        per_class_train=3,
        per_class_test=1,
        shape_noise=0.0,
        embed_dim=8,
        image_noise=0.02,
        text_noise=0.02,
        views=4,
        captions_per_view=3,
        points_per_cloud=64,
        scale_range=(0.9, 1.1),
        seed=0,
    )
    base.update(overrides)
    return synth.SynthSpec(**base)


def build_tiny(tmp_path, **overrides):
    spec = tiny_spec(**overrides)
    out = tmp_path / "data"
    synth.build_synth_dataset(spec, out)
    return {
        "spec": spec,
        "root": out,
        "manifest_train": read_manifest(out / "manifest_train.json"),
        "manifest_test": read_manifest(out / "manifest_test.json"),
        "images": read_table(out / "images.ulp2"),
        "texts": read_table(out / "texts.ulp2"),
        "labels": read_table(out / "labels.ulp2"),
    }


def tiny_model_config(embed_dim=8, **kw) -> EncoderConfig:
    return EncoderConfig(embed_dim=embed_dim, point_mlp_widths=(8, 16),
                         head_widths=(16, embed_dim), **kw)


def tiny_train_config(**overrides) -> TrainConfig:
    base = dict(batch_size=4, steps=10, lr=1e-3, seed=0, point_budget=64)
    base.update(overrides)
    return TrainConfig(**base)


def run_zero_shot_pipeline(tmp_path, spec: synth.SynthSpec,
                           model_config: EncoderConfig,
                           train_config: TrainConfig):
    """Build a synthetic dataset, train, and zero-shot-evaluate the test split.

    Returns the evaluation report and the per-step loss rows.
    """
    root = tmp_path / f"data-{spec.seed}-{spec.views}-{train_config.caption_top_k}"
    synth.build_synth_dataset(spec, root)
    manifest = read_manifest(root / "manifest_train.json")
    images = read_table(root / "images.ulp2")
    texts = read_table(root / "texts.ulp2")
    result = train(manifest, images, texts, model_config, train_config,
                   cloud_root=root)
    test_manifest = read_manifest(root / "manifest_test.json")
    encoder = result.checkpoint.encoder_params()
    _ids, truth, emb = _embed_manifest(
        test_manifest, encoder, train_config.point_budget,
        train_config.subsample, root)
    labels = LabelEmbeddings(names=list(spec.categories),
                             rows=read_table(root / "labels.ulp2").rows)
    predictions = zero_shot_classify(emb, labels)
    report = compute_metrics(predictions, np.asarray(truth),
                             num_classes=len(spec.categories))
    return report, result
