"""Dataset manifests, frame sampling, face cropping, and normalization.

Images are float32 H x W x 3 arrays in [0, 1], RGB. A manifest is a
line-structured text file, one sample per line:

    path, label, attack_type, split, bbox, source_id

where bbox is either empty or `x;y;w;h` in source-pixel units. Field
order is fixed; a `#` line is a comment. The normalization sidecar holds
the six stats values in fixed order: mean_r mean_g mean_b std_r std_g
std_b, one per line as `key value`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, IngestionError
from .metrics import LIVE, SPOOF

LIVE_TAG = "Live"
UNKNOWN_TAG = "Unknown"

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class BBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise IngestionError(f"degenerate bbox {self.as_text()}")

    def as_text(self) -> str:
        return f"{self.x};{self.y};{self.w};{self.h}"

    @classmethod
    def from_text(cls, text: str) -> "BBox":
        parts = text.split(";")
        if len(parts) != 4:
            raise IngestionError(f"bbox must be x;y;w;h, got {text!r}")
        return cls(*(int(p) for p in parts))


@dataclass
class Sample:
    """One labeled face image, either in memory or as a path to decode."""

    label: str
    attack_type: str | None = None  # defaults to "Live"/"Unknown" by label
    source_id: str = ""
    path: str | None = None
    bbox: BBox | None = None
    split: str = "train"
    image: np.ndarray | None = None  # decoded pixels, [0,1] RGB

    def __post_init__(self):
        if self.label not in (LIVE, SPOOF):
            raise ConfigError(f"label must be '{LIVE}' or '{SPOOF}', got {self.label!r}")
        if self.attack_type is None:
            self.attack_type = LIVE_TAG if self.label == LIVE else UNKNOWN_TAG
        if (self.label == LIVE) != (self.attack_type == LIVE_TAG):
            raise ConfigError(
                f"label {self.label!r} inconsistent with attack_type {self.attack_type!r} "
                f"(live samples and only live samples carry the tag {LIVE_TAG!r})"
            )


@dataclass
class NormalizationStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,), strictly positive

    def save(self, path) -> None:
        names = ["mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b"]
        values = list(self.mean) + list(self.std)
        with open(path, "w", encoding="utf-8") as fh:
            for name, value in zip(names, values):
                fh.write(f"{name} {float(value)!r}\n")

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        values = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    name, value = line.split()
                    values[name] = float(value)
        mean = np.array([values["mean_r"], values["mean_g"], values["mean_b"]])
        std = np.array([values["std_r"], values["std_g"], values["std_b"]])
        return cls(mean=mean, std=std)


@dataclass
class DatasetManifest:
    records: list[Sample]
    split: str = "train"
    stats: NormalizationStats | None = None

    def __len__(self):
        return len(self.records)


def read_image(path) -> np.ndarray:
    """Decode an image file to float32 RGB in [0,1]."""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise IngestionError(f"cannot decode image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def write_image(path, image: np.ndarray) -> None:
    """Encode a float [0,1] RGB array; rounds to 8-bit."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    bgr = cv2.cvtColor((arr * 255.0).round().astype(np.uint8), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise IngestionError(f"cannot write image {path}")


def save_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# path, label, attack_type, split, bbox, source_id\n")
        for s in manifest.records:
            bbox = s.bbox.as_text() if s.bbox else ""
            fh.write(f"{s.path}, {s.label}, {s.attack_type}, {s.split}, {bbox}, {s.source_id}\n")


def load_manifest(path, split: str | None = None) -> DatasetManifest:
    """Parse a manifest file; optionally keep only one split.

    Paths must be unique; relative paths resolve against the manifest's
    directory.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    base = path.parent
    records: list[Sample] = []
    seen_paths: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 6:
                raise IngestionError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            rec_path, label, attack_type, rec_split, bbox_text, source_id = parts
            if rec_path in seen_paths:
                raise IngestionError(f"{path}:{lineno}: duplicate record path {rec_path!r}")
            seen_paths.add(rec_path)
            if split is not None and rec_split != split:
                continue
            resolved = rec_path if Path(rec_path).is_absolute() else str(base / rec_path)
            records.append(
                Sample(
                    label=label,
                    attack_type=attack_type or None,
                    source_id=source_id,
                    path=resolved,
                    bbox=BBox.from_text(bbox_text) if bbox_text else None,
                    split=rec_split,
                )
            )
    return DatasetManifest(records=records, split=split or "all")


def sample_frames(frames, k: int, rng: np.random.Generator):
    """Pick k distinct frames uniformly without replacement (all, if fewer).

    Returns (indices, frames) with indices ascending for reproducible order.
    """
    n = len(frames)
    if n == 0:
        raise IngestionError("cannot sample frames from an empty video")
    take = min(k, n)
    indices = np.sort(rng.choice(n, size=take, replace=False))
    return indices.tolist(), [frames[i] for i in indices]


def crop_resize(frame: np.ndarray, bbox: BBox | None, out_size: int) -> np.ndarray:
    """Crop to the face bbox (clamped to the frame) and resize bilinearly.

    Without a bbox, falls back to the largest center square.
    """
    h, w = frame.shape[:2]
    if bbox is None:
        side = min(h, w)
        y0 = (h - side) // 2
        x0 = (w - side) // 2
        region = frame[y0 : y0 + side, x0 : x0 + side]
    else:
        x0, y0 = max(bbox.x, 0), max(bbox.y, 0)
        x1, y1 = min(bbox.x + bbox.w, w), min(bbox.y + bbox.h, h)
        if x1 <= x0 or y1 <= y0:
            raise IngestionError(f"bbox {bbox.as_text()} does not intersect {w}x{h} frame")
        if (x0, y0, x1, y1) != (bbox.x, bbox.y, bbox.x + bbox.w, bbox.y + bbox.h):
            warnings.warn(f"bbox {bbox.as_text()} clamped to {w}x{h} frame", stacklevel=2)
        region = frame[y0:y1, x0:x1]
    return cv2.resize(region, (out_size, out_size), interpolation=cv2.INTER_LINEAR)


def load_pixels(sample: Sample, out_size: int | None = None) -> np.ndarray:
    """Materialize a sample's pixels at the requested square size."""
    if sample.image is not None:
        image = sample.image
        if out_size is not None and image.shape[:2] != (out_size, out_size):
            image = crop_resize(image, sample.bbox, out_size)
        return image
    if sample.path is None:
        raise IngestionError("sample has neither decoded pixels nor a path")
    frame = read_image(sample.path)
    if out_size is None:
        return frame
    return crop_resize(frame, sample.bbox, out_size)


def compute_stats(manifest: DatasetManifest, out_size: int | None = None) -> NormalizationStats:
    """Per-channel mean/std over every pixel of the training split.

    Single-pass moment accumulation in float64; refuses non-train manifests
    so evaluation data can never leak into the statistics.
    """
    if manifest.split != "train":
        raise ConfigError(
            f"normalization statistics must come from the train split, got {manifest.split!r}"
        )
    if not manifest.records:
        raise ConfigError("cannot compute statistics over an empty manifest")
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for sample in manifest.records:
        pixels = load_pixels(sample, out_size).reshape(-1, 3).astype(np.float64)
        total += pixels.sum(axis=0)
        total_sq += (pixels**2).sum(axis=0)
        count += pixels.shape[0]
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    std = np.sqrt(var)
    if (std < STD_FLOOR).any():
        warnings.warn(f"degenerate channel std {std}; flooring at {STD_FLOOR}", stacklevel=2)
        std = np.maximum(std, STD_FLOOR)
    return NormalizationStats(mean=mean, std=std)


def normalize(image: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return (image - stats.mean.astype(image.dtype)) / stats.std.astype(image.dtype)


def denormalize(image: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return image * stats.std.astype(image.dtype) + stats.mean.astype(image.dtype)


@dataclass
class ClassDistribution:
    counts: dict[str, int]
    n_live: int
    n_spoof: int

    @property
    def live_spoof_ratio(self) -> float | None:
        """spoof count per live sample; None when either class is absent."""
        if self.n_live == 0 or self.n_spoof == 0:
            return None
        return self.n_spoof / self.n_live

    def to_text(self) -> str:
        lines = [f"{tag} {self.counts[tag]}" for tag in sorted(self.counts)]
        ratio = self.live_spoof_ratio
        lines.append(f"live:spoof 1:{ratio!r}" if ratio is not None else "live:spoof degenerate")
        return "\n".join(lines) + "\n"


def class_distribution(manifest: DatasetManifest) -> ClassDistribution:
    """Per-attack-type counts plus the live:spoof imbalance ratio."""
    if not manifest.records:
        raise ConfigError("cannot summarize an empty manifest")
    counts: dict[str, int] = {}
    n_live = n_spoof = 0
    for s in manifest.records:
        tag = s.attack_type or UNKNOWN_TAG
        counts[tag] = counts.get(tag, 0) + 1
        if s.label == LIVE:
            n_live += 1
        else:
            n_spoof += 1
    return ClassDistribution(counts=counts, n_live=n_live, n_spoof=n_spoof)
