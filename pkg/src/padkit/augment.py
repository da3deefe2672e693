"""Traditional augmentation and the eight FAS-specific augmentation operators.

Three operators simulate capture noise and preserve the label
(hand_tremble, low_resolution, color_diversity); the other five stamp
artifacts that only presentation attacks exhibit, so they force the
label to spoof (color_distortion, sfc_halftone, bn_halftone,
specular_reflection, moire_pattern).

All operators are pure functions of (image, params, rng) over float
RGB images in [0,1]; outputs are clipped back into [0,1]. Parameter
ranges live in one `AugParams` record and can be loaded from a
key-value text file, so they can be retuned without code changes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace
from typing import Callable

import cv2
import numpy as np
from scipy import ndimage

from .data import Sample
from .errors import ConfigError
from .metrics import SPOOF

PRESERVE = "preserve"
FORCE_SPOOF = "force_spoof"

# RGB luma weights (ITU-R BT.601), used by the saturation rescale.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def per_sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Counter-based stream: (seed, epoch, sample-index) fixes every draw."""
    return np.random.default_rng([seed, epoch, index])


@dataclass(frozen=True)
class AugParams:
    """Every tunable range of the eight operators, in one place.

    Ranges are uniform-sampling bounds unless noted. These defaults are
    provisional; adjust via `load_params` rather than editing code.
    """

    tremble_length: tuple[int, int] = (3, 9)  # motion-blur kernel, px
    lowres_factor: tuple[float, float] = (2.0, 4.0)  # downscale factor
    diversity_gain: tuple[float, float] = (0.8, 1.2)  # per-channel gain
    saturation_scale: tuple[float, float] = (0.5, 0.9)
    gamma_shift: tuple[float, float] = (0.8, 1.3)
    screen_period: tuple[float, float] = (4.0, 8.0)  # halftone cell, px
    screen_angles: tuple[float, float, float] = (15.0, 45.0, 75.0)  # deg, per channel
    bn_threshold_jitter: float = 0.05
    specular_peak: tuple[float, float] = (0.3, 0.8)
    specular_sigma: tuple[float, float] = (0.05, 0.2)  # fraction of min(H, W)
    moire_frequency: tuple[float, float] = (0.05, 0.25)  # cycles/px
    moire_contrast: tuple[float, float] = (0.05, 0.15)
    moire_frequency_gap: tuple[float, float] = (1.02, 1.10)  # f2/f1
    moire_angle_gap: float = 0.15  # rad


def save_params(path, params: AugParams) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# FAS-Aug operator parameter ranges\n")
        for field in dataclasses.fields(params):
            value = getattr(params, field.name)
            if isinstance(value, tuple):
                fh.write(f"{field.name} {' '.join(repr(float(v)) for v in value)}\n")
            else:
                fh.write(f"{field.name} {float(value)!r}\n")


def load_params(path) -> AugParams:
    known = {f.name: f for f in dataclasses.fields(AugParams)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, *rest = line.split()
            if name not in known:
                raise ConfigError(f"{path}:{lineno}: unknown augmentation parameter {name!r}")
            if not rest:
                raise ConfigError(f"{path}:{lineno}: parameter {name!r} has no value")
            parsed = tuple(float(v) for v in rest)
            if name == "tremble_length":
                parsed = tuple(int(v) for v in parsed)
            values[name] = parsed if len(parsed) > 1 else parsed[0]
    return AugParams(**values)


@dataclass(frozen=True)
class AugPolicy:
    fas_aug_probability: float = 0.2
    rotation_degrees: float = 10.0
    jitter_gain: tuple[float, float] = (0.9, 1.1)
    seed: int = 0
    params: AugParams = AugParams()

    def __post_init__(self):
        if not 0.0 <= self.fas_aug_probability <= 1.0:
            raise ConfigError(
                f"fas_aug_probability must lie in [0,1], got {self.fas_aug_probability}"
            )
        if self.rotation_degrees < 0:
            raise ConfigError(f"rotation_degrees must be >= 0, got {self.rotation_degrees}")


def _clip(image: np.ndarray) -> np.ndarray:
    return np.clip(image, 0.0, 1.0)


def _line_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized straight-line PSF through the kernel center."""
    kernel = np.zeros((length, length), dtype=np.float64)
    c = (length - 1) / 2.0
    ts = np.linspace(-c, c, num=4 * length)
    xs = c + ts * np.cos(angle)
    ys = c + ts * np.sin(angle)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    # Bilinear splat of the sample points onto the grid.
    for dx, dy, w in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        np.add.at(
            kernel,
            (np.clip(y0 + dy, 0, length - 1), np.clip(x0 + dx, 0, length - 1)),
            w,
        )
    return kernel / kernel.sum()


def hand_tremble(image: np.ndarray, params: AugParams, rng: np.random.Generator) -> np.ndarray:
    """Short linear motion blur at a random angle (camera shake)."""
    lo, hi = params.tremble_length
    length = int(rng.integers(lo, hi + 1))
    angle = rng.uniform(0.0, np.pi)
    kernel = _line_kernel(length, angle)[:, :, None]
    blurred = ndimage.convolve(image.astype(np.float64), kernel, mode="reflect")
    return _clip(blurred).astype(image.dtype)


def low_resolution(image: np.ndarray, params: AugParams, rng: np.random.Generator) -> np.ndarray:
    """Bilinear down/up round trip, losing high-frequency detail."""
    factor = rng.uniform(*params.lowres_factor)
    h, w = image.shape[:2]
    small = cv2.resize(
        image,
        (max(1, round(w / factor)), max(1, round(h / factor))),
        interpolation=cv2.INTER_LINEAR,
    )
    return _clip(cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR))


def color_diversity(image: np.ndarray, params: AugParams, rng: np.random.Generator) -> np.ndarray:
    """Per-channel gain jitter, as from a white-balance shift."""
    gains = rng.uniform(*params.diversity_gain, size=3)
    return _clip(image * gains.astype(image.dtype))


def color_distortion(image: np.ndarray, params: AugParams, rng: np.random.Generator) -> np.ndarray:
    """Print-like gamut compression: desaturate, then shift gamma."""
    saturation = rng.uniform(*params.saturation_scale)
    gamma = rng.uniform(*params.gamma_shift)
    luma = (image.astype(np.float64) @ _LUMA)[..., None]
    compressed = _clip(luma + saturation * (image - luma))
    return (compressed**gamma).astype(image.dtype)


def sfc_halftone(image: np.ndarray, params: AugParams, rng: np.random.Generator) -> np.ndarray:
    """Clustered-dot ordered dithering with rotated per-channel screens."""
    period = rng.uniform(*params.screen_period)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(3, 2))
    h, w = image.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.empty_like(image)
    for ch in range(3):
        theta = np.deg2rad(params.screen_angles[ch])
        u = xs * np.cos(theta) + ys * np.sin(theta)
        v = -xs * np.sin(theta) + ys * np.cos(theta)
        # Threshold surface in [0,1]; its bumps cluster into round dots.
        screen = 0.5 + 0.25 * (
            np.cos(2.0 * np.pi * u / period + phases[ch, 0])
            + np.cos(2.0 * np.pi * v / period + phases[ch, 1])
        )
        out[:, :, ch] = (image[:, :, ch] > screen).astype(image.dtype)
    return out


def bn_halftone(image: np.ndarray, params: AugParams, rng: np.random.Generator) -> np.ndarray:
    """Error-diffusion dithering (Floyd–Steinberg weights), per channel.

    The serial scan makes this the one operator with a Python pixel
    loop; intended for crop-sized inputs, not full frames.
    """
    jitter = params.bn_threshold_jitter
    h, w = image.shape[:2]
    thresholds = 0.5 + rng.uniform(-jitter, jitter, size=(h, w, 1))
    work = image.astype(np.float64).copy()
    out = np.zeros_like(work)
    for y in range(h):
        row = work[y]
        nxt = work[y + 1] if y + 1 < h else None
        for x in range(w):
            old = row[x]
            new = (old >= thresholds[y, x]).astype(np.float64)
            out[y, x] = new
            err = old - new
            if x + 1 < w:
                row[x + 1] += err * (7 / 16)
            if nxt is not None:
                if x > 0:
                    nxt[x - 1] += err * (3 / 16)
                nxt[x] += err * (5 / 16)
                if x + 1 < w:
                    nxt[x + 1] += err * (1 / 16)
    return out.astype(image.dtype)


def specular_reflection(
    image: np.ndarray, params: AugParams, rng: np.random.Generator
) -> np.ndarray:
    """Additive elliptical Gaussian highlight; output >= input pointwise."""
    h, w = image.shape[:2]
    cx = rng.uniform(0.2, 0.8) * w
    cy = rng.uniform(0.2, 0.8) * h
    sx, sy = rng.uniform(*params.specular_sigma, size=2) * min(h, w)
    theta = rng.uniform(0.0, np.pi)
    peak = rng.uniform(*params.specular_peak)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (xs - cx) * np.cos(theta) + (ys - cy) * np.sin(theta)
    v = -(xs - cx) * np.sin(theta) + (ys - cy) * np.cos(theta)
    highlight = peak * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))
    return _clip(image + highlight[:, :, None].astype(image.dtype))


def moire_pattern(image: np.ndarray, params: AugParams, rng: np.random.Generator) -> np.ndarray:
    """Product of two near-frequency gratings (low-frequency beat bands)."""
    f1 = rng.uniform(*params.moire_frequency)
    f2 = f1 * rng.uniform(*params.moire_frequency_gap)
    theta1 = rng.uniform(0.0, np.pi)
    theta2 = theta1 + rng.uniform(-params.moire_angle_gap, params.moire_angle_gap)
    contrast = rng.uniform(*params.moire_contrast)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=2)
    h, w = image.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    g1 = np.cos(2.0 * np.pi * f1 * (xs * np.cos(theta1) + ys * np.sin(theta1)) + phases[0])
    g2 = np.cos(2.0 * np.pi * f2 * (xs * np.cos(theta2) + ys * np.sin(theta2)) + phases[1])
    modulation = 1.0 + contrast * g1 * g2
    return _clip(image * modulation[:, :, None].astype(image.dtype))


@dataclass(frozen=True)
class AugmentationOp:
    kind: str
    label_effect: str
    fn: Callable[[np.ndarray, AugParams, np.random.Generator], np.ndarray]


OPERATORS: tuple[AugmentationOp, ...] = (
    AugmentationOp("hand_tremble", PRESERVE, hand_tremble),
    AugmentationOp("low_resolution", PRESERVE, low_resolution),
    AugmentationOp("color_diversity", PRESERVE, color_diversity),
    AugmentationOp("color_distortion", FORCE_SPOOF, color_distortion),
    AugmentationOp("sfc_halftone", FORCE_SPOOF, sfc_halftone),
    AugmentationOp("bn_halftone", FORCE_SPOOF, bn_halftone),
    AugmentationOp("specular_reflection", FORCE_SPOOF, specular_reflection),
    AugmentationOp("moire_pattern", FORCE_SPOOF, moire_pattern),
)

OPERATOR_BY_KIND = {op.kind: op for op in OPERATORS}


def apply_fas_aug(sample: Sample, policy: AugPolicy, rng: np.random.Generator) -> Sample:
    """Fire with probability `fas_aug_probability`; else pass through.

    On firing, one of the eight operators is drawn uniformly. A
    force_spoof operator rewrites both the label and the attack tag to
    the operator kind (the stamped artifact now dominates whatever the
    sample was before); preserve operators leave both untouched.
    """
    if rng.random() >= policy.fas_aug_probability:
        return sample
    op = OPERATORS[int(rng.integers(len(OPERATORS)))]
    image = op.fn(sample.image, policy.params, rng)
    if op.label_effect == FORCE_SPOOF:
        return replace(sample, image=image, label=SPOOF, attack_type=op.kind)
    return replace(sample, image=image)


def traditional_augment(
    image: np.ndarray, policy: AugPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Random rotation (reflect padding) plus per-channel color jitter."""
    angle = rng.uniform(-policy.rotation_degrees, policy.rotation_degrees)
    if angle != 0.0:
        h, w = image.shape[:2]
        matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, 1.0)
        image = cv2.warpAffine(
            image,
            matrix,
            (w, h),
            flags=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_REFLECT_101,
        )
    gains = rng.uniform(*policy.jitter_gain, size=3)
    return _clip(image * gains.astype(image.dtype))
