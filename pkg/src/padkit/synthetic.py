"""Procedural toy data for end-to-end checks and demos.

Live images are smooth random gradient fields with mild sensor noise;
spoof images are the same kind of scene passed through a print/display
artifact operator (clustered-dot halftone or moiré), so the two classes
differ exactly by the artifacts the detector is supposed to catch.
"""

from __future__ import annotations

import numpy as np

from .augment import OPERATOR_BY_KIND, AugParams
from .data import Sample
from .metrics import LIVE, SPOOF

SPOOF_KINDS = ("sfc_halftone", "moire_pattern")

# The toy task must be well-posed: live scenes are smooth low-frequency
# fields (~2 cycles per image) plus white sensor noise, so toy moiré
# uses a clearly textural frequency band and a strong contrast — at the
# production defaults the bands sit near the noise floor, where a
# four-block model cannot pick them up from a few hundred examples.
TOY_PARAMS = AugParams(moire_frequency=(0.15, 0.25), moire_contrast=(0.50, 0.65))


def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """One channel: linear ramp plus two low-frequency cosine waves, in [0.15, 0.85]."""
    axis = np.linspace(0.0, 1.0, size)
    xs, ys = np.meshgrid(axis, axis)
    field = rng.uniform(-1.0, 1.0) * xs + rng.uniform(-1.0, 1.0) * ys
    for _ in range(2):
        fx, fy = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        field = field + rng.uniform(0.3, 1.0) * np.cos(2.0 * np.pi * (fx * xs + fy * ys) + phase)
    span = np.ptp(field)
    unit = (field - field.min()) / (span if span > 1e-9 else 1.0)
    return 0.15 + 0.7 * unit


def live_image(rng: np.random.Generator, size: int, noise: float = 0.015) -> np.ndarray:
    channels = np.stack([_smooth_field(rng, size) for _ in range(3)], axis=-1)
    noisy = channels + rng.normal(0.0, noise, size=channels.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def spoof_image(
    base: np.ndarray, rng: np.random.Generator, params: AugParams
) -> tuple[np.ndarray, str]:
    kind = SPOOF_KINDS[int(rng.integers(len(SPOOF_KINDS)))]
    return OPERATOR_BY_KIND[kind].fn(base, params, rng), kind


def toy_dataset(
    n_train: int,
    n_val: int,
    size: int = 56,
    seed: int = 0,
    params: AugParams | None = None,
) -> tuple[list[Sample], list[Sample]]:
    """Balanced train/val sample lists with decoded in-memory pixels.

    Even indices are live, odd are spoofed versions of a fresh scene,
    each drawn from its own counter-based stream so any prefix of the
    dataset is stable as sizes change.
    """
    params = params if params is not None else TOY_PARAMS

    def build(count: int, split: str, stream: int) -> list[Sample]:
        samples = []
        for i in range(count):
            rng = np.random.default_rng([seed, stream, i])
            base = live_image(rng, size)
            if i % 2 == 0:
                samples.append(
                    Sample(label=LIVE, image=base, split=split, source_id=f"{split}-{i}")
                )
            else:
                image, kind = spoof_image(base, rng, params)
                samples.append(
                    Sample(
                        label=SPOOF,
                        attack_type=kind,
                        image=image,
                        split=split,
                        source_id=f"{split}-{i}",
                    )
                )
        return samples

    return build(n_train, "train", 1), build(n_val, "val", 2)
