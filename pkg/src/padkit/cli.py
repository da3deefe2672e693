"""Command-line surface: train, evaluate, predict, and dataset utilities.

A run is described by a sectioned key-value config file (configparser
syntax).  ``cmd_train`` writes every artifact of a run — checkpoints,
training log, normalization stats, and a fully resolved copy of the
config (all defaults expanded, all paths absolute) that re-parses to
the exact ``RunConfig`` the run used.

Sections and keys::

    [model]    image_size patch_size embed_dim depth num_heads mlp_ratio
               num_register_tokens drop_rate
    [train]    loss focal_gamma class_weights optimizer weight_decay
               momentum adam_betas adam_eps lr_head lr_backbone batch_size
               max_epochs patience trainable_blocks embeddings_trainable
    [augment]  enabled fas_aug_probability rotation_degrees jitter_gain
               params_file
    [data]     train_manifest val_manifest stats
    [run]      output_dir seed

Relative paths resolve against the config file's directory.  The seed
in ``[run]`` is the run seed: it is propagated into the train plan and
the augmentation policy so one value drives every stochastic component.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import sys
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .augment import OPERATORS, AugParams, AugPolicy, load_params, save_params
from .data import (
    NormalizationStats,
    class_distribution,
    compute_stats,
    crop_resize,
    load_manifest,
    read_image,
    sample_frames,
    write_image,
)
from .errors import ConfigError, IngestionError, PadkitError
from .metrics import DEFAULT_THRESHOLD, full_report, save_scores
from .train import FreezePolicy, TrainPlan, fit, score_predictions
from .vit import ModelConfig, build_model, forward_image, live_probability
from .weights import load_model, save_weights

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
SECTIONS = ("model", "train", "augment", "data", "run")


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """Everything one training run needs, fully resolved."""

    model: ModelConfig
    train: TrainPlan
    augment: AugPolicy
    augment_enabled: bool
    train_manifest: Path | None
    val_manifest: Path | None
    stats_path: Path | None
    output_dir: Path
    seed: int

    def __post_init__(self):
        for field_name in ("train_manifest", "val_manifest", "stats_path"):
            value = getattr(self, field_name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"data.{field_name}: no such file {value}")
        if self.train.seed != self.seed or self.augment.seed != self.seed:
            raise ConfigError("run.seed must propagate to the train plan and augment policy")


class _SectionReader:
    """Typed key access over one config section with unknown-key tracking."""

    def __init__(self, parser: configparser.ConfigParser, section: str, base: Path):
        self.section = section
        self.base = base
        self.raw = dict(parser[section]) if parser.has_section(section) else {}
        self.unread = set(self.raw)

    def _get(self, key: str):
        self.unread.discard(key)
        return self.raw.get(key)

    def _parse(self, key: str, text: str, cast):
        try:
            return cast(text)
        except ValueError as exc:
            raise ConfigError(f"{self.section}.{key}: {exc}") from exc

    def value(self, key: str, cast, default):
        text = self._get(key)
        if text is None:
            return default
        return self._parse(key, text, cast)

    def pair(self, key: str, default):
        text = self._get(key)
        if text is None:
            return default
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        if len(parts) != 2:
            raise ConfigError(f"{self.section}.{key}: expected two comma-separated values")
        return (
            self._parse(key, parts[0], float),
            self._parse(key, parts[1], float),
        )

    def int_set(self, key: str, default):
        text = self._get(key)
        if text is None:
            return default
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        return frozenset(self._parse(key, p, int) for p in parts)

    def boolean(self, key: str, default: bool) -> bool:
        text = self._get(key)
        if text is None:
            return default
        lowered = text.strip().lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{self.section}.{key}: expected a boolean, got {text!r}")

    def path(self, key: str, default=None):
        text = self._get(key)
        if text is None:
            return default
        candidate = Path(text)
        if not candidate.is_absolute():
            candidate = self.base / candidate
        return candidate.resolve()

    def check_consumed(self) -> None:
        if self.unread:
            key = sorted(self.unread)[0]
            raise ConfigError(f"{self.section}.{key}: unknown key")


def parse_config(
    path,
    *,
    seed: int | None = None,
    output_dir=None,
) -> RunConfig:
    """Parse a run config file; CLI flags may override seed and output_dir."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"{path}: unknown section [{unknown[0]}]")
    base = path.parent

    model_sec = _SectionReader(parser, "model", base)
    model = ModelConfig(
        image_size=model_sec.value("image_size", int, 224),
        patch_size=model_sec.value("patch_size", int, 14),
        embed_dim=model_sec.value("embed_dim", int, 768),
        depth=model_sec.value("depth", int, 12),
        num_heads=model_sec.value("num_heads", int, 12),
        mlp_ratio=model_sec.value("mlp_ratio", float, 4.0),
        num_register_tokens=model_sec.value("num_register_tokens", int, 4),
        drop_rate=model_sec.value("drop_rate", float, 0.0),
    )
    model_sec.check_consumed()

    run_sec = _SectionReader(parser, "run", base)
    run_seed = run_sec.value("seed", int, 0)
    if seed is not None:
        run_seed = seed
    resolved_output = run_sec.path("output_dir", base / "run")
    if output_dir is not None:
        resolved_output = Path(output_dir).resolve()
    run_sec.check_consumed()

    train_sec = _SectionReader(parser, "train", base)
    trainable_blocks = train_sec.int_set("trainable_blocks", frozenset({model.depth}))
    bad = sorted(i for i in trainable_blocks if i > model.depth)
    if bad:
        raise ConfigError(
            f"train.trainable_blocks: block {bad[0]} exceeds model depth {model.depth}"
        )
    plan = TrainPlan(
        freeze=FreezePolicy(
            trainable_blocks=trainable_blocks,
            embeddings_trainable=train_sec.boolean("embeddings_trainable", False),
        ),
        loss=train_sec.value("loss", str, "focal"),
        focal_gamma=train_sec.value("focal_gamma", float, 2.0),
        class_weights=train_sec.pair("class_weights", (1.0, 1.0)),
        optimizer=train_sec.value("optimizer", str, "adamw"),
        weight_decay=train_sec.value("weight_decay", float, 0.01),
        momentum=train_sec.value("momentum", float, 0.9),
        adam_betas=train_sec.pair("adam_betas", (0.9, 0.999)),
        adam_eps=train_sec.value("adam_eps", float, 1e-8),
        lr_head=train_sec.value("lr_head", float, 5e-5),
        lr_backbone=train_sec.value("lr_backbone", float, 5e-6),
        batch_size=train_sec.value("batch_size", int, 32),
        max_epochs=train_sec.value("max_epochs", int, 200),
        patience=train_sec.value("patience", int, 20),
        seed=run_seed,
    )
    train_sec.check_consumed()

    aug_sec = _SectionReader(parser, "augment", base)
    params_file = aug_sec.path("params_file")
    policy = AugPolicy(
        fas_aug_probability=aug_sec.value("fas_aug_probability", float, 0.2),
        rotation_degrees=aug_sec.value("rotation_degrees", float, 10.0),
        jitter_gain=aug_sec.pair("jitter_gain", (0.9, 1.1)),
        seed=run_seed,
        params=load_params(params_file) if params_file is not None else AugParams(),
    )
    augment_enabled = aug_sec.boolean("enabled", True)
    aug_sec.check_consumed()

    data_sec = _SectionReader(parser, "data", base)
    train_manifest = data_sec.path("train_manifest")
    val_manifest = data_sec.path("val_manifest")
    stats_path = data_sec.path("stats")
    data_sec.check_consumed()

    return RunConfig(
        model=model,
        train=plan,
        augment=policy,
        augment_enabled=augment_enabled,
        train_manifest=train_manifest,
        val_manifest=val_manifest,
        stats_path=stats_path,
        output_dir=resolved_output,
        seed=run_seed,
    )


def write_config(path, cfg: RunConfig) -> None:
    """Write a fully expanded config that re-parses to an identical RunConfig.

    The augmentation parameter ranges are written next to the config as
    ``fas_aug_params.cfg`` and referenced from the [augment] section.
    """
    path = Path(path)
    params_file = path.parent / "fas_aug_params.cfg"
    save_params(params_file, cfg.augment.params)
    m, t, a = cfg.model, cfg.train, cfg.augment
    lines = [
        "[model]",
        f"image_size = {m.image_size}",
        f"patch_size = {m.patch_size}",
        f"embed_dim = {m.embed_dim}",
        f"depth = {m.depth}",
        f"num_heads = {m.num_heads}",
        f"mlp_ratio = {m.mlp_ratio!r}",
        f"num_register_tokens = {m.num_register_tokens}",
        f"drop_rate = {m.drop_rate!r}",
        "",
        "[train]",
        f"loss = {t.loss}",
        f"focal_gamma = {t.focal_gamma!r}",
        f"class_weights = {t.class_weights[0]!r}, {t.class_weights[1]!r}",
        f"optimizer = {t.optimizer}",
        f"weight_decay = {t.weight_decay!r}",
        f"momentum = {t.momentum!r}",
        f"adam_betas = {t.adam_betas[0]!r}, {t.adam_betas[1]!r}",
        f"adam_eps = {t.adam_eps!r}",
        f"lr_head = {t.lr_head!r}",
        f"lr_backbone = {t.lr_backbone!r}",
        f"batch_size = {t.batch_size}",
        f"max_epochs = {t.max_epochs}",
        f"patience = {t.patience}",
        f"trainable_blocks = {', '.join(str(i) for i in sorted(t.freeze.trainable_blocks))}",
        f"embeddings_trainable = {str(t.freeze.embeddings_trainable).lower()}",
        "",
        "[augment]",
        f"enabled = {str(cfg.augment_enabled).lower()}",
        f"fas_aug_probability = {a.fas_aug_probability!r}",
        f"rotation_degrees = {a.rotation_degrees!r}",
        f"jitter_gain = {a.jitter_gain[0]!r}, {a.jitter_gain[1]!r}",
        f"params_file = {params_file}",
        "",
        "[data]",
    ]
    for key in ("train_manifest", "val_manifest", "stats_path"):
        value = getattr(cfg, key)
        if value is not None:
            lines.append(f"{'stats' if key == 'stats_path' else key} = {value}")
    lines += [
        "",
        "[run]",
        f"output_dir = {cfg.output_dir}",
        f"seed = {cfg.seed}",
        "",
    ]
    path.write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands


def _nonempty_manifest(path, split: str | None):
    manifest = load_manifest(path, split=split)
    if not manifest.records:
        where = f"split {split!r} of {path}" if split else str(path)
        raise IngestionError(f"no records in {where}")
    return manifest


def cmd_train(args) -> int:
    cfg = parse_config(args.config, seed=args.seed, output_dir=args.output_dir)
    for field_name in ("train_manifest", "val_manifest"):
        if getattr(cfg, field_name) is None:
            raise ConfigError(f"data.{field_name}: required for training")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    train_manifest = _nonempty_manifest(cfg.train_manifest, "train")
    val_manifest = _nonempty_manifest(cfg.val_manifest, "val")
    if cfg.stats_path is not None:
        stats = NormalizationStats.load(cfg.stats_path)
    else:
        stats = compute_stats(train_manifest, out_size=cfg.model.image_size)
        cfg = dataclasses.replace(cfg, stats_path=_write_stats(out, stats))

    model = build_model(cfg.model, seed=cfg.seed)
    result = fit(
        model,
        train_manifest.records,
        val_manifest.records,
        cfg.train,
        augment_policy=cfg.augment if cfg.augment_enabled else None,
        stats=stats,
        log_path=out / "training_log.csv",
    )

    final_path = out / "checkpoint_final.npz"
    save_weights(final_path, model)
    model.load_state_dict(result.best_state)
    best_path = out / "checkpoint_best.npz"
    save_weights(best_path, model)
    write_config(out / "resolved.cfg", cfg)

    print(f"best epoch {result.best_epoch} val acer {result.best_metric!r}")
    print(f"checkpoints {best_path} {final_path}")
    print(f"log {out / 'training_log.csv'}")
    return 0


def _write_stats(out: Path, stats: NormalizationStats) -> Path:
    stats_path = out / "stats.txt"
    stats.save(stats_path)
    return stats_path


def cmd_evaluate(args) -> int:
    model = load_model(args.checkpoint)
    manifest = _nonempty_manifest(args.manifest, args.split)
    stats = NormalizationStats.load(args.stats) if args.stats else None
    preds = score_predictions(model, manifest.records, stats)
    report = full_report(preds, threshold=args.threshold, worst_case=args.worst_case_apcer)

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = [s.source_id or str(i) for i, s in enumerate(manifest.records)]
    save_scores(out / "scores.txt", preds, ids=ids)
    (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    frame = read_image(args.image)
    pixels = crop_resize(frame, None, model.config.image_size)
    if args.stats:
        from .data import normalize

        pixels = normalize(pixels, NormalizationStats.load(args.stats))
    result = forward_image(model, pixels)
    print(repr(live_probability(result.logits)))
    return 0


def _panel_label(index: int, kind: str) -> str:
    return f"({chr(ord('a') + index)}) {kind}"


def cmd_augment_preview(args) -> int:
    frame = read_image(args.image)
    base = crop_resize(frame, None, args.panel_size)
    params = load_params(args.params) if args.params else AugParams()
    panels = []
    for i, op in enumerate(OPERATORS):
        rng = np.random.default_rng([args.seed, i])
        augmented = np.clip(op.fn(base, params, rng), 0.0, 1.0)
        panel = np.ascontiguousarray((augmented * 255.0).round().astype(np.uint8))
        for color, thickness in (((0, 0, 0), 3), ((255, 255, 255), 1)):
            cv2.putText(
                panel,
                _panel_label(i, op.kind),
                (4, 16),
                cv2.FONT_HERSHEY_SIMPLEX,
                0.38,
                color,
                thickness,
                cv2.LINE_AA,
            )
        panels.append(panel)
    sheet = np.concatenate(
        [np.concatenate(panels[:4], axis=1), np.concatenate(panels[4:], axis=1)], axis=0
    )
    write_image(args.output, sheet.astype(np.float32) / 255.0)
    print(args.output)
    return 0


def cmd_stats(args) -> int:
    manifest = _nonempty_manifest(args.manifest, args.split)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = compute_stats(manifest, out_size=args.size)
    stats_path = _write_stats(out, stats)
    distribution = class_distribution(manifest)
    (out / "distribution.txt").write_text(distribution.to_text(), encoding="utf-8")
    with open(stats_path, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    sys.stdout.write(distribution.to_text())
    return 0


def _video_stream_seed(seed: int, source_id: str) -> list[int]:
    digest = hashlib.sha256(source_id.encode("utf-8")).digest()
    return [seed, int.from_bytes(digest[:8], "big")]


def cmd_frames_extract(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for video_dir in args.videos:
        video_dir = Path(video_dir)
        if not video_dir.is_dir():
            raise IngestionError(f"not a frame directory: {video_dir}")
        frames = sorted(
            p for p in video_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not frames:
            raise IngestionError(f"no frames in {video_dir}")
        source_id = video_dir.name
        rng = np.random.default_rng(_video_stream_seed(args.seed, source_id))
        indices, chosen = sample_frames(frames, args.k, rng)
        dest = out / source_id
        dest.mkdir(parents=True, exist_ok=True)
        for index, frame_path in zip(indices, chosen):
            image = read_image(frame_path)
            target = dest / f"{index}{frame_path.suffix.lower()}"
            write_image(target, image)
        print(f"{source_id}: {len(indices)} frames -> {dest}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="padkit", description="Presentation-attack detection toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a run config")
    train.add_argument("--config", required=True, help="run config file")
    train.add_argument("--seed", type=int, default=None, help="override run seed")
    train.add_argument("--output-dir", default=None, help="override output directory")
    train.set_defaults(fn=cmd_train)

    evaluate = sub.add_parser("evaluate", help="score a manifest and report metrics")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--manifest", required=True)
    evaluate.add_argument("--split", default=None, help="optional split filter")
    evaluate.add_argument("--stats", default=None, help="normalization stats file")
    evaluate.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    evaluate.add_argument(
        "--worst-case-apcer",
        action="store_true",
        help="report the worst per-attack-type APCER as the headline APCER",
    )
    evaluate.add_argument("--output-dir", default=".")
    evaluate.set_defaults(fn=cmd_evaluate)

    predict = sub.add_parser("predict", help="print the live probability of one image")
    predict.add_argument("image")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--stats", default=None)
    predict.set_defaults(fn=cmd_predict)

    preview = sub.add_parser(
        "augment-preview", help="write a labeled contact sheet of all 8 operators"
    )
    preview.add_argument("image")
    preview.add_argument("--output", default="augment_preview.png")
    preview.add_argument("--seed", type=int, default=0)
    preview.add_argument("--params", default=None, help="operator parameter file")
    preview.add_argument("--panel-size", type=int, default=224)
    preview.set_defaults(fn=cmd_augment_preview)

    stats = sub.add_parser("stats", help="dataset normalization stats + class balance")
    stats.add_argument("--manifest", required=True)
    stats.add_argument("--split", default="train")
    stats.add_argument("--size", type=int, default=None, help="resize before accumulating")
    stats.add_argument("--output-dir", default=".")
    stats.set_defaults(fn=cmd_stats)

    frames = sub.add_parser(
        "frames-extract", help="sample k frames per video directory, without replacement"
    )
    frames.add_argument("videos", nargs="+", help="directories of decoded frames")
    frames.add_argument("--k", type=int, default=5)
    frames.add_argument("--seed", type=int, default=0)
    frames.add_argument("--output-dir", default=".")
    frames.set_defaults(fn=cmd_frames_extract)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PadkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
