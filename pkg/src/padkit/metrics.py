"""Presentation-attack-detection error metrics.

Scores are live-probabilities in [0, 1]. A record is classified spoof
when its score falls below the operating threshold; a score exactly at
the threshold counts as live (documented tie rule). APCER is the
fraction of spoof records classified live, BPCER the fraction of live
records classified spoof, ACER their mean. AUC uses the rank (Mann-
Whitney) statistic with ties counted 1/2, EER a discrete sweep over the
distinct scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError

LIVE = "live"
SPOOF = "spoof"

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class PredRecord:
    """One scored sample: live-probability, ground-truth label, optional attack tag."""

    score: float
    label: str
    attack_type: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0,1], got {self.score}")
        if self.label not in (LIVE, SPOOF):
            raise ValueError(f"label must be '{LIVE}' or '{SPOOF}', got {self.label!r}")


@dataclass
class PredictionSet:
    """A collection of scored evaluation records."""

    records: list[PredRecord]

    def __len__(self):
        return len(self.records)

    def live_scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records if r.label == LIVE], dtype=np.float64)

    def spoof_scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records if r.label == SPOOF], dtype=np.float64)

    def spoof_records(self) -> list[PredRecord]:
        return [r for r in self.records if r.label == SPOOF]

    def attack_tags(self) -> list[str]:
        """Distinct attack tags among spoof records, in first-seen order."""
        seen: dict[str, None] = {}
        for r in self.records:
            if r.label == SPOOF and r.attack_type is not None:
                seen.setdefault(r.attack_type, None)
        return list(seen)


@dataclass
class MetricsReport:
    """The full PAD metric bundle at one operating threshold."""

    apcer: float
    apcer_worst: float | None
    bpcer: float
    acer: float
    auc: float
    acc: float
    eer: float
    threshold: float
    per_attack_apcer: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"apcer {self.apcer!r}",
            f"apcer_worst {'n/a' if self.apcer_worst is None else repr(self.apcer_worst)}",
            f"bpcer {self.bpcer!r}",
            f"acer {self.acer!r}",
            f"auc {self.auc!r}",
            f"acc {self.acc!r}",
            f"eer {self.eer!r}",
            f"threshold {self.threshold!r}",
        ]
        if self.per_attack_apcer:
            lines.append("")
            lines.append("attack_type apcer")
            for tag in sorted(self.per_attack_apcer):
                lines.append(f"{tag} {self.per_attack_apcer[tag]!r}")
        return "\n".join(lines) + "\n"


def classify(score: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    """Binary decision on a live-probability: spoof iff score < threshold."""
    return SPOOF if score < threshold else LIVE


def apcer(preds: PredictionSet, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of spoof records classified live at the threshold."""
    scores = preds.spoof_scores()
    if scores.size == 0:
        raise UndefinedMetricError("apcer: prediction set has no spoof records")
    return float(np.count_nonzero(scores >= threshold) / scores.size)


def bpcer(preds: PredictionSet, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of live records classified spoof at the threshold."""
    scores = preds.live_scores()
    if scores.size == 0:
        raise UndefinedMetricError("bpcer: prediction set has no live records")
    return float(np.count_nonzero(scores < threshold) / scores.size)


def acer(apcer_value: float, bpcer_value: float) -> float:
    """Average classification error rate: the mean of APCER and BPCER."""
    return (apcer_value + bpcer_value) / 2.0


def per_attack_apcer(preds: PredictionSet, threshold: float = DEFAULT_THRESHOLD) -> dict[str, float]:
    """APCER restricted to each attack tag present among spoof records.

    Spoof records without a tag are skipped here; apcer_worst_case refuses
    them outright.
    """
    out: dict[str, float] = {}
    for tag in preds.attack_tags():
        sub = PredictionSet([r for r in preds.spoof_records() if r.attack_type == tag])
        out[tag] = apcer(sub, threshold)
    return out


def apcer_worst_case(preds: PredictionSet, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Maximum per-attack-type APCER (the rigorous variant)."""
    spoofs = preds.spoof_records()
    if not spoofs:
        raise UndefinedMetricError("apcer_worst: prediction set has no spoof records")
    untagged = sum(1 for r in spoofs if r.attack_type is None)
    if untagged:
        raise UndefinedMetricError(
            f"apcer_worst: {untagged} spoof record(s) carry no attack_type tag"
        )
    return max(per_attack_apcer(preds, threshold).values())


def acc(preds: PredictionSet, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of records whose thresholded decision matches the label."""
    if not preds.records:
        raise UndefinedMetricError("acc: prediction set is empty")
    correct = sum(1 for r in preds.records if classify(r.score, threshold) == r.label)
    return correct / len(preds.records)


def auc(preds: PredictionSet) -> float:
    """Probability a random live score exceeds a random spoof score, ties 1/2.

    Computed from average ranks, which equals the trapezoidal ROC area.
    """
    live = preds.live_scores()
    spoof = preds.spoof_scores()
    if live.size == 0 or spoof.size == 0:
        raise UndefinedMetricError("auc: need at least one live and one spoof record")
    ranks = rankdata(np.concatenate([live, spoof]), method="average")
    rank_sum = float(ranks[: live.size].sum())
    n_l, n_s = live.size, spoof.size
    return (rank_sum - n_l * (n_l + 1) / 2.0) / (n_l * n_s)


def eer(preds: PredictionSet) -> tuple[float, float]:
    """Equal error rate by sweeping every distinct score as threshold.

    At threshold t, FAR is the fraction of spoof records accepted as live
    (score >= t) and FRR the fraction of live records rejected (score < t).
    Returns ((FAR+FRR)/2, t) at the t minimizing |FAR-FRR|; ties break
    toward the lower threshold.
    """
    live = np.sort(preds.live_scores())
    spoof = np.sort(preds.spoof_scores())
    if live.size == 0 or spoof.size == 0:
        raise UndefinedMetricError("eer: need at least one live and one spoof record")
    thresholds = np.unique(np.concatenate([live, spoof]))
    far = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
    frr = np.searchsorted(live, thresholds, side="left") / live.size
    best = int(np.argmin(np.abs(far - frr)))  # argmin takes the first, i.e. lowest t
    return float((far[best] + frr[best]) / 2.0), float(thresholds[best])


def full_report(
    preds: PredictionSet,
    threshold: float = DEFAULT_THRESHOLD,
    worst_case: bool = False,
) -> MetricsReport:
    """Bundle every metric at one threshold into an internally consistent report.

    With worst_case=True the headline APCER (and hence ACER) uses the
    worst-case variant, which requires every spoof record to be tagged.
    Without it, apcer_worst is still reported when tags allow, else n/a.
    """
    apcer_value = apcer(preds, threshold)
    bpcer_value = bpcer(preds, threshold)
    per_attack = per_attack_apcer(preds, threshold)
    if worst_case or all(r.attack_type is not None for r in preds.spoof_records()):
        worst = apcer_worst_case(preds, threshold)
    else:
        worst = None
    headline_apcer = worst if worst_case else apcer_value
    eer_value, _ = eer(preds)
    return MetricsReport(
        apcer=headline_apcer,
        apcer_worst=worst,
        bpcer=bpcer_value,
        acer=acer(headline_apcer, bpcer_value),
        auc=auc(preds),
        acc=acc(preds, threshold),
        eer=eer_value,
        threshold=threshold,
        per_attack_apcer=per_attack,
    )


def save_scores(path, preds: PredictionSet, ids: list[str] | None = None) -> None:
    """Write a score file, one `id, score, label, attack_type` record per line."""
    if ids is None:
        ids = [str(i) for i in range(len(preds.records))]
    if len(ids) != len(preds.records):
        raise ValueError("ids and records length mismatch")
    with open(path, "w", encoding="utf-8") as fh:
        for rid, r in zip(ids, preds.records):
            tag = r.attack_type if r.attack_type is not None else ""
            fh.write(f"{rid}, {r.score!r}, {r.label}, {tag}\n")


def load_scores(path) -> tuple[PredictionSet, list[str]]:
    """Read a score file written by save_scores; returns (records, ids)."""
    records = []
    ids = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            rid, score, label, tag = parts
            ids.append(rid)
            records.append(PredRecord(float(score), label, tag or None))
    return PredictionSet(records), ids
