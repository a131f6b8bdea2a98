"""Command-line entry point.

Config-file-first with flag overrides (flags win). Exit codes: 0 success,
1 usage error, 2 data/validation error, 3 numerical failure. All artifacts
land under the output directory; wall-clock timestamps are confined to
run.log so repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import ag, selfcheck, synth
from .embedstore import (EmbeddingTable, EmbedStoreError, TripletManifest,
                         clip_score, rank_captions, read_manifest, read_table,
                         write_manifest, write_table)
from .evaluation import (EvalError, LabelEmbeddings, ProbeConfig, compute_metrics,
                         finetune, linear_probe, zero_shot_classify)
from .geometry import (AugmentSpec, MeshError, PointCloud,
                       PointCloudFormatError, farthest_point_sample, load_mesh,
                       normalize_unit_sphere, read_pointcloud, sample_surface,
                       write_pointcloud)
from .model import EncoderConfig, EncoderError, encode
from .training import (CheckpointFormatError, NonFiniteLossError, TrainConfig,
                       TrainingError, load_checkpoint, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SUBCOMMANDS = ("build-synth", "sample-points", "rank-captions", "train",
               "eval-zeroshot", "eval-probe", "embed", "grad-check", "info")


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_CONFIG_SCHEMA = {
    "data": {"manifest", "image_table", "text_table", "point_budget",
             "channels", "caption_top_k", "subsample"},
    "model": {"embed_dim", "in_channels", "point_mlp_widths", "head_widths",
              "layernorm"},
    "train": {"batch_size", "steps", "lr", "beta1", "beta2", "eps", "seed",
              "reduction", "w_image", "w_text", "tau_init", "tau_max",
              "cosine_decay", "workers", "augment"},
    "eval": {"manifest", "labels_table", "categories", "checkpoint"},
    "output": {"dir"},
}
_AUGMENT_KEYS = {"rotate_z", "scale_range", "jitter_sigma", "dropout_rate"}


def load_run_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    validate_run_config(doc)
    return doc


def validate_run_config(doc: dict) -> None:
    unknown = set(doc) - set(_CONFIG_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    for section, keys in doc.items():
        if not isinstance(keys, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        extra = set(keys) - _CONFIG_SCHEMA[section]
        if extra:
            raise ConfigError(
                f"unknown keys {sorted(extra)} in config section {section!r}"
            )
    aug = doc.get("train", {}).get("augment")
    if aug is not None:
        extra = set(aug) - _AUGMENT_KEYS
        if extra:
            raise ConfigError(f"unknown augment keys {sorted(extra)}")


def apply_overrides(doc: dict, sets: list[str]) -> None:
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        doc.setdefault(section, {})[key] = value
    validate_run_config(doc)


def _build_model_config(doc: dict) -> EncoderConfig:
    model = doc.get("model", {})
    data = doc.get("data", {})
    if "embed_dim" not in model:
        raise ConfigError("config needs model.embed_dim")
    in_channels = model.get("in_channels", data.get("channels", 3))
    if "channels" in data and "in_channels" in model \
            and data["channels"] != model["in_channels"]:
        raise ConfigError(
            f"data.channels {data['channels']} conflicts with "
            f"model.in_channels {model['in_channels']}"
        )
    cfg = EncoderConfig(
        embed_dim=int(model["embed_dim"]),
        in_channels=int(in_channels),
        point_mlp_widths=tuple(model.get("point_mlp_widths", (64, 128, 256))),
        head_widths=tuple(model["head_widths"]) if "head_widths" in model
        else None,
        layernorm=bool(model.get("layernorm", False)),
    )
    cfg.validate()
    return cfg


def _build_train_config(doc: dict, seed_override=None,
                        workers_override=None) -> TrainConfig:
    data = doc.get("data", {})
    section = dict(doc.get("train", {}))
    aug_doc = section.pop("augment", None)
    aug = AugmentSpec() if aug_doc is None else AugmentSpec(
        rotate_z=bool(aug_doc.get("rotate_z", False)),
        scale_range=tuple(aug_doc.get("scale_range", (1.0, 1.0))),
        jitter_sigma=float(aug_doc.get("jitter_sigma", 0.0)),
        dropout_rate=float(aug_doc.get("dropout_rate", 0.0)),
    )
    cfg = TrainConfig(
        **section,
        augment=aug,
        caption_top_k=int(data.get("caption_top_k", 1)),
        point_budget=int(data.get("point_budget", 2048)),
        subsample=data.get("subsample", "fps"),
    )
    if seed_override is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed_override))
    if workers_override is not None:
        cfg = dataclasses.replace(cfg, workers=int(workers_override))
    cfg.validate()
    return cfg


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _out_dir(doc: dict, args) -> Path:
    out = getattr(args, "out", None) or doc.get("output", {}).get("dir")
    if not out:
        raise ConfigError("no output directory (set output.dir or pass --out)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log(out: Path, message: str) -> None:
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(out / "run.log", "a") as f:
        f.write(f"[{stamp}] {message}\n")


def _load_triplet_inputs(doc: dict):
    data = doc.get("data", {})
    for key in ("manifest", "image_table", "text_table"):
        if key not in data:
            raise ConfigError(f"config needs data.{key}")
    manifest_path = _require_file(data["manifest"], "manifest")
    manifest = read_manifest(manifest_path)
    images = read_table(_require_file(data["image_table"], "image table"))
    texts = read_table(_require_file(data["text_table"], "text table"))
    return manifest, images, texts, manifest_path.parent


def _embed_manifest(manifest: TripletManifest, encoder, point_budget: int,
                    subsample: str, root: Path, batch: int = 32):
    """Deterministic (no augmentation) embeddings for every manifest shape."""
    ids, labels, rows = [], [], []
    clouds = []
    for shape in manifest.shapes:
        path = Path(shape.point_cloud_path)
        if not path.is_absolute():
            path = root / path
        try:
            pc = read_pointcloud(path)
        except (OSError, ValueError) as e:
            raise ConfigError(
                f"shape {shape.shape_id!r}: cannot load {path}: {e}") from e
        if pc.n > point_budget:
            if subsample == "truncate":
                keep = list(range(point_budget))
            else:
                keep = farthest_point_sample(pc, point_budget, start=0)
            pc = PointCloud(points=pc.points[keep],
                            colors=None if pc.colors is None
                            else pc.colors[keep])
        ids.append(shape.shape_id)
        labels.append(shape.label)
        clouds.append(pc)
    for i in range(0, len(clouds), batch):
        rows.append(encode(encoder, clouds[i:i + batch]).data)
    return ids, labels, np.concatenate(rows, axis=0)


def _load_labels(doc: dict) -> LabelEmbeddings:
    ev = doc.get("eval", {})
    for key in ("labels_table", "categories"):
        if key not in ev:
            raise ConfigError(f"config needs eval.{key}")
    table = read_table(_require_file(ev["labels_table"], "labels table"))
    cats_doc = json.loads(
        _require_file(ev["categories"], "categories file").read_text())
    names = cats_doc.get("categories")
    if not isinstance(names, list):
        raise ConfigError("categories file must contain a 'categories' list")
    labels = LabelEmbeddings(names=[str(n) for n in names], rows=table.rows)
    labels.validate()
    return labels


def _write_report(out: Path, report, name: str = "report") -> None:
    (out / f"{name}.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / f"{name}.csv").write_text(
        "top1,top5,overall_accuracy,class_average_accuracy\n"
        + report.csv_row() + "\n")
    conf_lines = [",".join(str(v) for v in row) for row in report.confusion]
    (out / "confusion.csv").write_text("\n".join(conf_lines) + "\n")


def cmd_build_synth(args) -> int:
    spec = synth.SynthSpec(
        categories=tuple(args.categories.split(",")) if args.categories
        else synth.PRIMITIVES,
        per_class_train=args.per_class_train,
        per_class_test=args.per_class_test,
        shape_noise=args.shape_noise,
        embed_dim=args.dim,
        image_noise=args.image_noise,
        text_noise=args.text_noise,
        views=args.views,
        captions_per_view=args.captions_per_view,
        wrong_captions_per_view=args.wrong_captions,
        points_per_cloud=args.points,
        scale_range=(args.scale_lo, args.scale_hi),
        seed=args.seed if args.seed is not None else 0,
    )
    spec.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    info = synth.build_synth_dataset(spec, out, write_views=args.write_views)
    _log(out, f"build-synth finished in {time.perf_counter() - started:.2f}s")
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_sample_points(args) -> int:
    mesh = load_mesh(_require_file(args.mesh, "mesh file"))
    pc = sample_surface(mesh, args.n,
                        seed=args.seed if args.seed is not None else 0)
    pc = normalize_unit_sphere(pc)
    if args.fps is not None:
        keep = farthest_point_sample(pc, args.fps, start=0)
        pc = PointCloud(points=pc.points[keep])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or (Path(args.mesh).stem + ".upc")
    write_pointcloud(pc, out / name)
    print(json.dumps({"points": pc.n, "file": name}, sort_keys=True))
    return EXIT_OK


def cmd_rank_captions(args) -> int:
    doc = load_run_config(args.config)
    apply_overrides(doc, args.set or [])
    manifest, images, texts, _root = _load_triplet_inputs(doc)
    manifest.validate(image_count=images.count, text_count=texts.count)
    out = _out_dir(doc, args)
    started = time.perf_counter()
    rankings = {
        shape.shape_id: {
            str(view.view_index): rank_captions(view, images, texts)
            for view in shape.views
        }
        for shape in manifest.shapes
    }
    (out / "rankings.json").write_text(
        json.dumps(rankings, indent=2, sort_keys=True) + "\n")
    _log(out, f"rank-captions finished in {time.perf_counter() - started:.2f}s")
    print(json.dumps({"shapes": len(rankings)}, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    doc = load_run_config(args.config)
    apply_overrides(doc, args.set or [])
    manifest, images, texts, root = _load_triplet_inputs(doc)
    model_config = _build_model_config(doc)
    train_config = _build_train_config(doc, seed_override=args.seed,
                                       workers_override=args.workers)
    out = _out_dir(doc, args)
    started = time.perf_counter()
    result = train(manifest, images, texts, model_config, train_config,
                   cloud_root=root, out_dir=out)
    _log(out, f"train finished in {time.perf_counter() - started:.2f}s")
    summary = {
        "steps": train_config.steps,
        "final_loss": result.loss_rows[-1][1] if result.loss_rows else None,
        "checkpoint": "checkpoint.uckp",
        "digest": result.checkpoint.digest(),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _resolve_checkpoint(doc: dict, args):
    path = args.checkpoint or doc.get("eval", {}).get("checkpoint")
    if not path:
        raise ConfigError("no checkpoint (set eval.checkpoint or --checkpoint)")
    return load_checkpoint(_require_file(path, "checkpoint"))


def cmd_eval_zeroshot(args) -> int:
    doc = load_run_config(args.config)
    apply_overrides(doc, args.set or [])
    ev = doc.get("eval", {})
    if "manifest" not in ev:
        raise ConfigError("config needs eval.manifest")
    manifest_path = _require_file(ev["manifest"], "eval manifest")
    manifest = read_manifest(manifest_path)
    labels = _load_labels(doc)
    ckpt = _resolve_checkpoint(doc, args)
    encoder = ckpt.encoder_params()
    if labels.dim != encoder.config.embed_dim:
        raise ConfigError(
            f"labels dim {labels.dim} != encoder dim {encoder.config.embed_dim}"
        )
    data = doc.get("data", {})
    out = _out_dir(doc, args)
    started = time.perf_counter()
    ids, truth, emb = _embed_manifest(
        manifest, encoder, int(data.get("point_budget", 2048)),
        data.get("subsample", "fps"), manifest_path.parent)
    missing = [i for i, t in zip(ids, truth) if t is None]
    if missing:
        raise ConfigError(f"shape {missing[0]!r} has no label for evaluation")
    predictions = zero_shot_classify(emb, labels)
    report = compute_metrics(predictions, truth, num_classes=labels.count)
    _write_report(out, report)
    _log(out, f"eval-zeroshot finished in {time.perf_counter() - started:.2f}s")
    print(json.dumps({"top1": report.top1, "top5": report.top5,
                      "samples": len(ids)}, sort_keys=True))
    return EXIT_OK


def cmd_eval_probe(args) -> int:
    doc = load_run_config(args.config)
    apply_overrides(doc, args.set or [])
    ev = doc.get("eval", {})
    data = doc.get("data", {})
    if "manifest" not in data:
        raise ConfigError("config needs data.manifest (train split)")
    if "manifest" not in ev:
        raise ConfigError("config needs eval.manifest (held-out split)")
    train_path = _require_file(data["manifest"], "train manifest")
    test_path = _require_file(ev["manifest"], "eval manifest")
    train_manifest = read_manifest(train_path)
    test_manifest = read_manifest(test_path)
    ckpt = _resolve_checkpoint(doc, args)
    encoder = ckpt.encoder_params()
    budget = int(data.get("point_budget", 2048))
    subsample = data.get("subsample", "fps")
    num_classes = max(
        (s.label for s in train_manifest.shapes + test_manifest.shapes
         if s.label is not None), default=-1) + 1
    if num_classes < 2:
        raise ConfigError("probe needs labeled manifests with >= 2 classes")
    out = _out_dir(doc, args)
    started = time.perf_counter()
    seed = args.seed if args.seed is not None else 0
    probe_cfg = ProbeConfig(steps=args.probe_steps, lr=args.probe_lr,
                            encoder_lr=args.encoder_lr, seed=seed)

    def split_inputs(manifest, path):
        ids, labels, emb = _embed_manifest(manifest, encoder, budget,
                                           subsample, path.parent)
        if any(lbl is None for lbl in labels):
            raise ConfigError("probe needs a label on every shape")
        return ids, np.asarray(labels), emb

    train_ids, train_y, train_emb = split_inputs(train_manifest, train_path)
    _test_ids, test_y, test_emb = split_inputs(test_manifest, test_path)
    if args.mode == "linear_probe":
        _head, report = linear_probe(train_emb, train_y, test_emb, test_y,
                                     num_classes, probe_cfg, ids=train_ids)
    else:
        train_clouds = _load_clouds(train_manifest, train_path.parent, budget,
                                    subsample)
        test_clouds = _load_clouds(test_manifest, test_path.parent, budget,
                                   subsample)
        _bundle, report = finetune(encoder, train_clouds, train_y, test_clouds,
                                   test_y, num_classes, probe_cfg,
                                   ids=train_ids)
    _write_report(out, report)
    _log(out, f"eval-probe finished in {time.perf_counter() - started:.2f}s")
    print(json.dumps({"mode": args.mode, "top1": report.top1,
                      "class_average": report.class_average_accuracy},
                     sort_keys=True))
    return EXIT_OK


def _load_clouds(manifest, root, budget, subsample):
    clouds = []
    for shape in manifest.shapes:
        path = Path(shape.point_cloud_path)
        if not path.is_absolute():
            path = root / path
        pc = read_pointcloud(path)
        if pc.n > budget:
            keep = (list(range(budget)) if subsample == "truncate"
                    else farthest_point_sample(pc, budget, start=0))
            pc = PointCloud(points=pc.points[keep])
        clouds.append(pc)
    return clouds


def cmd_embed(args) -> int:
    doc = load_run_config(args.config)
    apply_overrides(doc, args.set or [])
    data = doc.get("data", {})
    if "manifest" not in data:
        raise ConfigError("config needs data.manifest")
    manifest_path = _require_file(data["manifest"], "manifest")
    manifest = read_manifest(manifest_path)
    ckpt = _resolve_checkpoint(doc, args)
    encoder = ckpt.encoder_params()
    out = _out_dir(doc, args)
    started = time.perf_counter()
    ids, _labels, emb = _embed_manifest(
        manifest, encoder, int(data.get("point_budget", 2048)),
        data.get("subsample", "fps"), manifest_path.parent)
    write_table(EmbeddingTable(rows=emb, provenance="trialign-encoder"),
                out / "embeddings.ulp2")
    (out / "embedding_rows.json").write_text(
        json.dumps({"rows": ids}, indent=2, sort_keys=True) + "\n")
    _log(out, f"embed finished in {time.perf_counter() - started:.2f}s")
    print(json.dumps({"rows": len(ids), "dim": int(emb.shape[1])},
                     sort_keys=True))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    ok, report = selfcheck.run_all(seed=seed, step=args.step, tol=args.tol)
    print(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grad_check.txt").write_text(report + "\n")
    if not ok:
        print("grad-check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _info_for(path: Path) -> dict:
    with open(path, "rb") as f:
        blob = f.read(4)
    if path.suffix == ".json":
        manifest = read_manifest(path)
        views = sum(len(s.views) for s in manifest.shapes)
        return {"kind": "manifest", "shapes": len(manifest.shapes),
                "views": views}
    if blob == b"ULP2":
        table = read_table(path)
        return {"kind": "ulp2", "rows": table.count, "dim": table.dim}
    if blob == b"UPC1":
        pc = read_pointcloud(path)
        return {"kind": "upc1", "points": pc.n,
                "has_color": pc.colors is not None}
    if blob == b"UCKP":
        ckpt = load_checkpoint(path)
        return {"kind": "checkpoint", "step": ckpt.step,
                "tensors": sorted(ckpt.tensors),
                "digest": ckpt.digest()}
    raise ConfigError(f"unrecognized file format: {path}")


def cmd_info(args) -> int:
    if args.clip_score:
        needed = (args.image_table, args.image_row, args.text_table,
                  args.text_row)
        if any(v is None for v in needed):
            raise UsageError("--clip-score needs --image-table, --image-row, "
                             "--text-table, and --text-row")
        images = read_table(_require_file(args.image_table, "image table"))
        texts = read_table(_require_file(args.text_table, "text table"))
        if not 0 <= args.image_row < images.count:
            raise ConfigError(f"image row {args.image_row} out of range")
        if not 0 <= args.text_row < texts.count:
            raise ConfigError(f"text row {args.text_row} out of range")
        score = clip_score(images.rows[args.image_row], texts.rows[args.text_row])
        print(json.dumps({"clip_score": score}, sort_keys=True))
        return EXIT_OK
    if args.merge_fragments:
        merged: list = []
        seen: set[str] = set()
        for frag in args.merge_fragments:
            manifest = read_manifest(_require_file(frag, "manifest fragment"))
            for shape in manifest.shapes:
                if shape.shape_id in seen:
                    raise ConfigError(
                        f"duplicate shape {shape.shape_id!r} in {frag}")
                seen.add(shape.shape_id)
                merged.append(shape)
        if not args.out:
            raise UsageError("--merge-fragments requires --out")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(TripletManifest(shapes=merged), out / "manifest.json")
        print(json.dumps({"shapes": len(merged)}, sort_keys=True))
        return EXIT_OK
    if not args.path:
        raise UsageError("info requires a path (or --clip-score/--merge-fragments)")
    info = _info_for(_require_file(args.path, "file"))
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="trialign",
                     description="Tri-modal point-cloud alignment pipeline")
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=None,
                       help="override every seeded operation in this command")
        return p

    p = add("build-synth", cmd_build_synth,
            help="generate a synthetic dataset with mock frozen encoders")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", default=None,
                   help="comma-separated primitive kinds (default: all 8)")
    p.add_argument("--per-class-train", type=int, default=35)
    p.add_argument("--per-class-test", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--shape-noise", type=float, default=0.01)
    p.add_argument("--image-noise", type=float, default=0.05)
    p.add_argument("--text-noise", type=float, default=0.05)
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--captions-per-view", type=int, default=10)
    p.add_argument("--wrong-captions", type=int, default=0)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--scale-lo", type=float, default=0.85)
    p.add_argument("--scale-hi", type=float, default=1.15)
    p.add_argument("--write-views", action="store_true",
                   help="also write PGM splat renders per view")

    p = add("sample-points", cmd_sample_points,
            help="sample a normalized point cloud from an OBJ mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None, help="output file name")
    p.add_argument("--fps", type=int, default=None,
                   help="farthest-point subsample to this count")

    for name, fn in (("rank-captions", cmd_rank_captions),
                     ("train", cmd_train)):
        p = add(name, fn, help=f"{name} from a run config")
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (flags win)")
        if name == "train":
            p.add_argument("--workers", type=int, default=None,
                           help="batch-assembly workers (default 1; output "
                                "is identical for any worker count)")

    for name, fn in (("eval-zeroshot", cmd_eval_zeroshot),
                     ("embed", cmd_embed)):
        p = add(name, fn, help=f"{name} using a checkpoint")
        p.add_argument("--config", required=True)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")

    p = add("eval-probe", cmd_eval_probe,
            help="linear probe or finetune classification")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--mode", choices=("linear_probe", "finetune"),
                   default="linear_probe")
    p.add_argument("--probe-steps", type=int, default=200)
    p.add_argument("--probe-lr", type=float, default=1e-2)
    p.add_argument("--encoder-lr", type=float, default=None)

    p = add("grad-check", cmd_grad_check,
            help="gradient oracle over the op catalog and full composition")
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", default=None)

    p = add("info", cmd_info, help="inspect or merge pipeline artifacts")
    p.add_argument("path", nargs="?", default=None)
    p.add_argument("--clip-score", action="store_true",
                   help="print the cosine between an image row and a text row")
    p.add_argument("--image-table", default=None)
    p.add_argument("--image-row", type=int, default=None)
    p.add_argument("--text-table", default=None)
    p.add_argument("--text-row", type=int, default=None)
    p.add_argument("--merge-fragments", nargs="+", default=None,
                   metavar="MANIFEST")
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            parser.print_help()
            return EXIT_USAGE
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, ag.NonFiniteGradError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, MeshError, PointCloudFormatError, EmbedStoreError,
            TrainingError, EvalError, EncoderError, CheckpointFormatError,
            ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
