"""Weight archives: a flat key -> tensor container with a config sidecar.

The container is an uncompressed .npz holding every model parameter under
its state-dict name (scheme documented in vit.py). A JSON sidecar next to
it records the originating ModelConfig so checkpoints are self-describing.
Round trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch

from .errors import WeightLoadError
from .vit import ModelConfig, RegisterViT


def descriptor_path(archive_path) -> Path:
    return Path(archive_path).with_suffix(".json")


def save_weights(path, model: RegisterViT) -> None:
    """Write all parameters plus the config sidecar."""
    path = Path(path)
    arrays = {name: tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    with open(descriptor_path(path), "w", encoding="utf-8") as fh:
        json.dump({"model": dataclasses.asdict(model.config)}, fh, indent=2)
        fh.write("\n")


def read_archive_config(path) -> ModelConfig:
    """Recover the ModelConfig recorded in an archive's sidecar."""
    sidecar = descriptor_path(path)
    if not sidecar.exists():
        raise WeightLoadError(f"missing archive descriptor {sidecar}")
    with open(sidecar, encoding="utf-8") as fh:
        payload = json.load(fh)
    return ModelConfig(**payload["model"])


def load_weights(path, model: RegisterViT) -> RegisterViT:
    """Assign every archive tensor onto the model, validating the full key set.

    All offending keys (missing, extra, mis-shaped) are reported together.
    """
    path = Path(path)
    if not path.exists():
        raise WeightLoadError(f"weight archive not found: {path}")
    with np.load(path) as archive:
        arrays = {name: archive[name] for name in archive.files}
    expected = model.state_dict()
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    mismatched = sorted(
        name
        for name in set(expected) & set(arrays)
        if tuple(arrays[name].shape) != tuple(expected[name].shape)
    )
    if missing or extra or mismatched:
        parts = []
        if missing:
            parts.append("missing keys: " + ", ".join(missing))
        if extra:
            parts.append("unexpected keys: " + ", ".join(extra))
        if mismatched:
            parts.append(
                "shape mismatches: "
                + ", ".join(
                    f"{name} (archive {tuple(arrays[name].shape)}, "
                    f"model {tuple(expected[name].shape)})"
                    for name in mismatched
                )
            )
        raise WeightLoadError("; ".join(parts))
    dtype = next(model.parameters()).dtype
    state = {name: torch.from_numpy(arr.copy()).to(dtype) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model


def load_model(path) -> RegisterViT:
    """Build a model from an archive's sidecar config and load its weights."""
    if not Path(path).exists():
        raise WeightLoadError(f"weight archive not found: {path}")
    config = read_archive_config(path)
    return load_weights(path, RegisterViT(config))
