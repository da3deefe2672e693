"""Training engine: losses, freeze policies, schedules, and the epoch loop.

The classifier is fine-tuned with a focal loss (optionally plain
cross-entropy), per-group learning rates (head vs. backbone), per-step
cosine annealing over the full planned run, and early stopping on the
validation ACER. Freeze policies select which encoder blocks train;
frozen parameters are guaranteed bitwise untouched.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
import torch

from .augment import AugPolicy, apply_fas_aug, per_sample_rng, traditional_augment
from .data import NormalizationStats, Sample, load_pixels, normalize
from .errors import ConfigError, NumericError, PolicyError, ScheduleError
from .metrics import (
    DEFAULT_THRESHOLD,
    LIVE,
    SPOOF,
    PredictionSet,
    PredRecord,
    acer,
    apcer,
    bpcer,
)
from .vit import RegisterViT

PROB_EPS = 1e-7

LABEL_TO_INDEX = {LIVE: 0, SPOOF: 1}

FOCAL = "focal"
CROSS_ENTROPY = "cross_entropy"
ADAMW = "adamw"
NESTEROV_SGD = "nesterov_sgd"

VAL_ACER = "val_acer"


# ---------------------------------------------------------------------------
# Losses


def focal_loss(
    live_prob: float,
    label: str,
    gamma: float = 2.0,
    class_weights: tuple[float, float] = (1.0, 1.0),
) -> float:
    """Reference scalar focal loss, −w·(1−p_t)^γ·ln(p_t).

    `class_weights` is (w_live, w_spoof); the true-class probability is
    clamped to [1e-7, 1−1e-7] so saturation never produces log(0).
    """
    if label == LIVE:
        p_t, weight = live_prob, class_weights[0]
    elif label == SPOOF:
        p_t, weight = 1.0 - live_prob, class_weights[1]
    else:
        raise ConfigError(f"label must be '{LIVE}' or '{SPOOF}', got {label!r}")
    p_t = min(max(p_t, PROB_EPS), 1.0 - PROB_EPS)
    return -weight * (1.0 - p_t) ** gamma * math.log(p_t)


def cross_entropy(
    live_prob: float,
    label: str,
    class_weights: tuple[float, float] = (1.0, 1.0),
) -> float:
    """Weighted binary cross-entropy, −w·ln(p_t), same clamping as focal.

    Deliberately written out rather than delegating to focal_loss(γ=0)
    so the two can be checked against each other.
    """
    if label == LIVE:
        p_t, weight = live_prob, class_weights[0]
    elif label == SPOOF:
        p_t, weight = 1.0 - live_prob, class_weights[1]
    else:
        raise ConfigError(f"label must be '{LIVE}' or '{SPOOF}', got {label!r}")
    p_t = min(max(p_t, PROB_EPS), 1.0 - PROB_EPS)
    return -weight * math.log(p_t)


def focal_loss_from_logits(
    logits: torch.Tensor,
    labels: torch.Tensor,
    gamma: float = 2.0,
    class_weights: tuple[float, float] = (1.0, 1.0),
) -> torch.Tensor:
    """Batched, differentiable focal loss over raw (B, 2) logits.

    `labels` holds class indices (0 = live, 1 = spoof). Returns the
    batch mean. γ = 0 with unit weights is exactly cross-entropy.
    """
    probs = torch.softmax(logits, dim=-1)
    p_t = probs.gather(1, labels.view(-1, 1)).squeeze(1)
    p_t = p_t.clamp(PROB_EPS, 1.0 - PROB_EPS)
    weights = logits.new_tensor(class_weights)[labels]
    return (-weights * (1.0 - p_t) ** gamma * torch.log(p_t)).mean()


def label_indices(labels) -> torch.Tensor:
    return torch.tensor([LABEL_TO_INDEX[label] for label in labels], dtype=torch.long)


# ---------------------------------------------------------------------------
# Schedule


@dataclass(frozen=True)
class LrSchedule:
    eta_max: float
    eta_min: float = 0.0
    total_steps: int = 1

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 <= self.eta_min <= self.eta_max:
            raise ConfigError(
                f"need 0 <= eta_min <= eta_max, got eta_min={self.eta_min} eta_max={self.eta_max}"
            )


def cosine_lr(step: int, schedule: LrSchedule) -> float:
    """η(t) = η_min + ½(η_max−η_min)(1 + cos(π t / T)); exact at both ends."""
    if not 0 <= step <= schedule.total_steps:
        raise ScheduleError(f"step {step} outside [0, {schedule.total_steps}]")
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * step / schedule.total_steps))


# ---------------------------------------------------------------------------
# Freeze policy and optimizer


@dataclass(frozen=True)
class FreezePolicy:
    """Which parts of the model train. The head always does.

    `trainable_blocks` holds 1-based encoder block indices;
    `embeddings_trainable` covers the patch projection, class token,
    register tokens, and positional embeddings as one unit.
    """

    trainable_blocks: frozenset[int] = frozenset()
    embeddings_trainable: bool = False
    head_trainable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "trainable_blocks", frozenset(self.trainable_blocks))
        if not self.head_trainable:
            raise PolicyError("the classification head is always trainable")
        bad = sorted(i for i in self.trainable_blocks if i < 1)
        if bad:
            raise PolicyError(f"block indices are 1-based, got {bad}")


def last_block_policy(depth: int) -> FreezePolicy:
    """Fine-tune only the final encoder block (plus the head)."""
    return FreezePolicy(trainable_blocks=frozenset({depth}))


def full_unfreeze_policy(depth: int) -> FreezePolicy:
    """Everything trains: all blocks and the embeddings."""
    return FreezePolicy(
        trainable_blocks=frozenset(range(1, depth + 1)),
        embeddings_trainable=True,
    )


@dataclass
class FreezePartition:
    """Disjoint name→parameter maps covering the whole model."""

    trainable: dict[str, torch.nn.Parameter]
    frozen: dict[str, torch.nn.Parameter]
    head_names: tuple[str, ...]
    backbone_names: tuple[str, ...]


def _parameter_group(name: str) -> str:
    """Map a parameter name to 'head', 'embeddings', or 'block_{i}' (1-based)."""
    if name.startswith(("head.", "final_norm.")):
        # The final norm feeds only the classifier, so it trains with it.
        return "head"
    if name.startswith("blocks."):
        return f"block_{int(name.split('.')[1]) + 1}"
    return "embeddings"


def apply_freeze(model: RegisterViT, policy: FreezePolicy) -> FreezePartition:
    """Set requires_grad per the policy and return the partition."""
    depth = model.config.depth
    bad = sorted(i for i in policy.trainable_blocks if not 1 <= i <= depth)
    if bad:
        raise PolicyError(f"trainable block indices {bad} outside [1, {depth}]")
    trainable: dict[str, torch.nn.Parameter] = {}
    frozen: dict[str, torch.nn.Parameter] = {}
    head_names: list[str] = []
    backbone_names: list[str] = []
    for name, param in model.named_parameters():
        group = _parameter_group(name)
        if group == "head":
            keep = True
            head_names.append(name)
        elif group == "embeddings":
            keep = policy.embeddings_trainable
        else:
            keep = int(group.removeprefix("block_")) in policy.trainable_blocks
        param.requires_grad_(keep)
        if keep:
            trainable[name] = param
            if group != "head":
                backbone_names.append(name)
        else:
            frozen[name] = param
    return FreezePartition(
        trainable=trainable,
        frozen=frozen,
        head_names=tuple(head_names),
        backbone_names=tuple(backbone_names),
    )


@dataclass(frozen=True)
class TrainPlan:
    freeze: FreezePolicy
    loss: str = FOCAL
    focal_gamma: float = 2.0
    class_weights: tuple[float, float] = (1.0, 1.0)
    optimizer: str = ADAMW
    weight_decay: float = 0.01
    momentum: float = 0.9
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    lr_head: float = 5e-5
    lr_backbone: float = 5e-6
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.loss not in (FOCAL, CROSS_ENTROPY):
            raise ConfigError(f"loss must be '{FOCAL}' or '{CROSS_ENTROPY}', got {self.loss!r}")
        if self.optimizer not in (ADAMW, NESTEROV_SGD):
            raise ConfigError(
                f"optimizer must be '{ADAMW}' or '{NESTEROV_SGD}', got {self.optimizer!r}"
            )
        if self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if len(self.class_weights) != 2 or any(w <= 0 for w in self.class_weights):
            raise ConfigError(f"class_weights must be 2 positive values, got {self.class_weights}")
        if self.lr_head <= 0 or self.lr_backbone <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_head < self.lr_backbone:
            warnings.warn(
                f"lr_head {self.lr_head} < lr_backbone {self.lr_backbone}: the head is "
                "usually fine-tuned more aggressively than the backbone",
                stacklevel=2,
            )
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not 1 <= self.patience < self.max_epochs:
            raise ConfigError(
                f"patience must lie in [1, max_epochs), got {self.patience} with "
                f"max_epochs {self.max_epochs}"
            )


def build_optimizer(partition: FreezePartition, plan: TrainPlan) -> torch.optim.Optimizer:
    """Two parameter groups (head / backbone), each with its own base lr."""
    groups = []
    if partition.backbone_names:
        groups.append(
            {
                "params": [partition.trainable[n] for n in partition.backbone_names],
                "lr": plan.lr_backbone,
                "base_lr": plan.lr_backbone,
                "name": "backbone",
            }
        )
    groups.append(
        {
            "params": [partition.trainable[n] for n in partition.head_names],
            "lr": plan.lr_head,
            "base_lr": plan.lr_head,
            "name": "head",
        }
    )
    if plan.optimizer == ADAMW:
        return torch.optim.AdamW(
            groups,
            betas=plan.adam_betas,
            eps=plan.adam_eps,
            weight_decay=plan.weight_decay,
        )
    return torch.optim.SGD(
        groups,
        momentum=plan.momentum,
        nesterov=plan.momentum > 0,
    )


def check_finite_grads(named_params: dict[str, torch.nn.Parameter]) -> None:
    bad = sorted(
        name
        for name, param in named_params.items()
        if param.grad is not None and not torch.isfinite(param.grad).all()
    )
    if bad:
        raise NumericError("non-finite gradients in: " + ", ".join(bad))


def optimizer_step(
    optimizer: torch.optim.Optimizer,
    partition: FreezePartition,
    step: int,
    total_steps: int,
) -> dict[str, float]:
    """One update: cosine-anneal each group's lr, verify grads, step.

    Returns the learning rate actually used per group. Frozen
    parameters are absent from every group, so they cannot move.
    """
    check_finite_grads(partition.trainable)
    used = {}
    for group in optimizer.param_groups:
        group["lr"] = cosine_lr(step, LrSchedule(group["base_lr"], 0.0, total_steps))
        used[group["name"]] = group["lr"]
    optimizer.step()
    return used


# ---------------------------------------------------------------------------
# Early stopping


@dataclass
class EarlyStopState:
    monitored: str = VAL_ACER
    best_metric: float = math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0

    def update(self, value: float, epoch: int) -> bool:
        """Record one epoch's metric; True if it strictly improved."""
        if value < self.best_metric:
            self.best_metric = value
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    def should_stop(self, patience: int) -> bool:
        return self.epochs_since_best >= patience


# ---------------------------------------------------------------------------
# Training log


LOG_HEADER = "epoch,step,split,loss,lr_head,lr_backbone,acer,timestamp"


@dataclass(frozen=True)
class LogRecord:
    epoch: int
    step: int
    split: str
    loss: float
    lr_head: float
    lr_backbone: float
    acer: float | None
    timestamp: float

    def to_line(self) -> str:
        acer_text = "" if self.acer is None else repr(self.acer)
        return (
            f"{self.epoch},{self.step},{self.split},{self.loss!r},"
            f"{self.lr_head!r},{self.lr_backbone!r},{acer_text},{self.timestamp!r}"
        )

    @classmethod
    def from_line(cls, line: str) -> "LogRecord":
        epoch, step, split, loss, lr_head, lr_backbone, acer_text, timestamp = line.split(",")
        return cls(
            epoch=int(epoch),
            step=int(step),
            split=split,
            loss=float(loss),
            lr_head=float(lr_head),
            lr_backbone=float(lr_backbone),
            acer=float(acer_text) if acer_text else None,
            timestamp=float(timestamp),
        )


class TrainingLog:
    """Append-only record list, optionally mirrored to a text file."""

    def __init__(self, path=None):
        self.records: list[LogRecord] = []
        self._fh = open(path, "w", encoding="utf-8") if path is not None else None
        if self._fh:
            self._fh.write(LOG_HEADER + "\n")
            self._fh.flush()

    def append(self, record: LogRecord) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(record.to_line() + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def read_log(path) -> list[LogRecord]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0] != LOG_HEADER:
        raise ConfigError(f"{path} is not a training log (bad header)")
    return [LogRecord.from_line(line) for line in lines[1:]]


# ---------------------------------------------------------------------------
# Batch assembly and evaluation


def _materialize(
    sample: Sample,
    image_size: int,
    epoch: int,
    index: int,
    augment_policy: AugPolicy | None,
    stats: NormalizationStats | None,
) -> tuple[np.ndarray, str]:
    """Decode, augment (train only), and normalize one sample."""
    image = load_pixels(sample, image_size)
    label = sample.label
    if augment_policy is not None:
        rng = per_sample_rng(augment_policy.seed, epoch, index)
        image = traditional_augment(image, augment_policy, rng)
        augmented = apply_fas_aug(replace(sample, image=image), augment_policy, rng)
        image, label = augmented.image, augmented.label
    if stats is not None:
        image = normalize(image, stats)
    return image.astype(np.float32), label


def predict_probabilities(
    model: RegisterViT,
    samples: list[Sample],
    stats: NormalizationStats | None = None,
    batch_size: int = 64,
) -> np.ndarray:
    """Live probability per sample, batched, without touching grads."""
    size = model.config.image_size
    was_training = model.training
    model.eval()
    probs = []
    try:
        with torch.no_grad():
            for start in range(0, len(samples), batch_size):
                chunk = samples[start : start + batch_size]
                pixels = [_materialize(s, size, 0, 0, None, stats)[0] for s in chunk]
                images = torch.from_numpy(np.stack(pixels)).to(next(model.parameters()).dtype)
                logits = model(images)
                probs.append(torch.softmax(logits, dim=-1)[:, 0].double().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(probs)


def score_predictions(
    model: RegisterViT,
    samples: list[Sample],
    stats: NormalizationStats | None = None,
    batch_size: int = 64,
) -> PredictionSet:
    probs = predict_probabilities(model, samples, stats, batch_size)
    return PredictionSet(
        records=[
            PredRecord(score=float(p), label=s.label, attack_type=s.attack_type)
            for p, s in zip(probs, samples)
        ]
    )


# ---------------------------------------------------------------------------
# The epoch loop


@dataclass
class FitResult:
    best_state: dict[str, torch.Tensor]
    best_epoch: int
    best_metric: float
    epochs_run: int
    steps_run: int
    log: TrainingLog


def _batch_loss(plan: TrainPlan, logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    gamma = plan.focal_gamma if plan.loss == FOCAL else 0.0
    return focal_loss_from_logits(logits, labels, gamma, plan.class_weights)


def fit(
    model: RegisterViT,
    train_samples: list[Sample],
    val_samples: list[Sample],
    plan: TrainPlan,
    *,
    augment_policy: AugPolicy | None = None,
    stats: NormalizationStats | None = None,
    log_path=None,
    threshold: float = DEFAULT_THRESHOLD,
) -> FitResult:
    """Train until max_epochs or until val ACER stalls for `patience` epochs.

    Returns the best-epoch state dict (cloned), not the final one; the
    model itself is left at its final state. The cosine schedule spans
    the full planned run (max_epochs), not the possibly-shorter actual
    one, so early stopping does not warp the lr curve.
    """
    if not train_samples or not val_samples:
        raise ConfigError("train and validation sets must both be non-empty")
    size = model.config.image_size
    partition = apply_freeze(model, plan.freeze)
    optimizer = build_optimizer(partition, plan)
    steps_per_epoch = math.ceil(len(train_samples) / plan.batch_size)
    total_steps = steps_per_epoch * plan.max_epochs
    head_schedule = LrSchedule(plan.lr_head, 0.0, total_steps)
    backbone_schedule = LrSchedule(plan.lr_backbone, 0.0, total_steps)
    torch.manual_seed(plan.seed)

    early = EarlyStopState()
    log = TrainingLog(log_path)
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    global_step = 0
    epochs_run = 0
    try:
        for epoch in range(1, plan.max_epochs + 1):
            epochs_run = epoch
            order = np.random.default_rng([plan.seed, epoch]).permutation(len(train_samples))
            model.train()
            for start in range(0, len(order), plan.batch_size):
                batch_indices = order[start : start + plan.batch_size]
                pixels, labels = [], []
                for index in batch_indices:
                    image, label = _materialize(
                        train_samples[index], size, epoch, int(index), augment_policy, stats
                    )
                    pixels.append(image)
                    labels.append(label)
                images = torch.from_numpy(np.stack(pixels)).to(next(model.parameters()).dtype)
                targets = label_indices(labels)
                optimizer.zero_grad(set_to_none=True)
                logits = model(images)
                loss = _batch_loss(plan, logits, targets)
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch} step {global_step}")
                loss.backward()
                used = optimizer_step(optimizer, partition, global_step, total_steps)
                log.append(
                    LogRecord(
                        epoch=epoch,
                        step=global_step,
                        split="train",
                        loss=float(loss.detach()),
                        lr_head=used["head"],
                        lr_backbone=used.get(
                            "backbone", cosine_lr(global_step, backbone_schedule)
                        ),
                        acer=None,
                        timestamp=time.time(),
                    )
                )
                global_step += 1

            probs = predict_probabilities(model, val_samples, stats, plan.batch_size)
            val_preds = PredictionSet(
                records=[
                    PredRecord(score=float(p), label=s.label, attack_type=s.attack_type)
                    for p, s in zip(probs, val_samples)
                ]
            )
            val_acer = acer(apcer(val_preds, threshold), bpcer(val_preds, threshold))
            gamma = plan.focal_gamma if plan.loss == FOCAL else 0.0
            val_loss = float(
                np.mean(
                    [
                        focal_loss(float(p), s.label, gamma, plan.class_weights)
                        for p, s in zip(probs, val_samples)
                    ]
                )
            )
            # lr columns carry the schedule position at the epoch boundary.
            boundary = min(global_step, total_steps)
            log.append(
                LogRecord(
                    epoch=epoch,
                    step=global_step,
                    split="val",
                    loss=val_loss,
                    lr_head=cosine_lr(boundary, head_schedule),
                    lr_backbone=cosine_lr(boundary, backbone_schedule),
                    acer=val_acer,
                    timestamp=time.time(),
                )
            )
            if early.update(val_acer, epoch):
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            if early.should_stop(plan.patience):
                break
    finally:
        log.close()
    return FitResult(
        best_state=best_state,
        best_epoch=early.best_epoch,
        best_metric=early.best_metric,
        epochs_run=epochs_run,
        steps_run=global_step,
        log=log,
    )
