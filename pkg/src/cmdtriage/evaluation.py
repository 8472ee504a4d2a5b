"""Dataset handling and metrics: AUROC, 3-way accuracy, timing, success gap."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .prompts import SceneDescription, parse_scene

logger = logging.getLogger(__name__)

LABELS = ("certain", "ambiguous", "infeasible")
ROBOT_TYPES = ("cook", "clean", "massage", "other")

# The triage pipeline says "clear"; the dataset says "certain".
_LABEL_ALIASES = {"clear": "certain"}


class DatasetError(Exception):
    """Malformed dataset file or record."""


class MetricError(Exception):
    """Metric precondition violated."""


@dataclass
class SagcRecord:
    goal_text: str
    robot_type: str
    scene: SceneDescription
    label: str
    scene_id: str

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise DatasetError(f"unknown label {self.label!r}, expected one of {LABELS}")
        if self.robot_type not in ROBOT_TYPES:
            raise DatasetError(
                f"unknown robot_type {self.robot_type!r}, expected one of {ROBOT_TYPES}"
            )

    @property
    def is_uncertain(self) -> bool:
        """Uncertain = ambiguous or infeasible (the positive class for AUROC)."""
        return self.label != "certain"


def load_sagc(path: str | Path) -> list[SagcRecord]:
    """Load newline-delimited JSON records; abort naming the first bad line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                record = SagcRecord(
                    goal_text=raw["goal_text"],
                    robot_type=raw["robot_type"],
                    scene=parse_scene(raw["scene"]),
                    label=raw["label"],
                    scene_id=raw["scene_id"],
                )
            except DatasetError as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from None
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetError(f"{path}: line {lineno}: malformed record ({exc})") from None
            records.append(record)
    counts = class_counts(records)
    logger.info("loaded %d records from %s: %s", len(records), path, dict(counts))
    return records


def class_counts(records: Sequence[SagcRecord]) -> Counter:
    return Counter(r.label for r in records)


def auroc(scores: Sequence[float], is_positive: Sequence[bool]) -> float:
    """Rank-based AUROC with mid-rank tie handling.

    Equals the Mann-Whitney U statistic divided by n_pos * n_neg; positives
    are the uncertain rows (higher score = more uncertain).
    """
    if len(scores) != len(is_positive):
        raise MetricError(f"{len(scores)} scores vs {len(is_positive)} labels")
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(is_positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both a positive and a negative example")

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=float)
    ranks[order] = np.arange(1, len(scores) + 1, dtype=float)
    # Average the ranks within each tie group.
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    for start, stop in zip(
        np.concatenate(([0], boundaries)),
        np.concatenate((boundaries, [len(scores)])),
    ):
        if stop - start > 1:
            ranks[order[start:stop]] = (start + 1 + stop) / 2.0

    u = float(ranks[positive].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _canonical_label(label: str) -> str:
    label = label.lower()
    label = _LABEL_ALIASES.get(label, label)
    if label not in LABELS:
        raise MetricError(f"unknown label {label!r}")
    return label


def accuracy3(
    predictions: Sequence[str], gold: Sequence[str]
) -> tuple[float, np.ndarray]:
    """Exact-match fraction over the 3 classes plus the confusion matrix.

    Confusion rows index the gold label, columns the prediction, both in
    LABELS order (certain, ambiguous, infeasible).
    """
    if len(predictions) != len(gold):
        raise MetricError(f"{len(predictions)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise MetricError("empty input")
    index = {label: i for i, label in enumerate(LABELS)}
    confusion = np.zeros((3, 3), dtype=int)
    for pred, actual in zip(predictions, gold):
        confusion[index[_canonical_label(actual)], index[_canonical_label(pred)]] += 1
    accuracy = float(np.trace(confusion)) / len(gold)
    return accuracy, confusion


def timing_metric(
    questioned: Sequence[bool],
    is_ambiguous: Sequence[bool],
    variant: str = "rate_difference",
) -> float:
    """How well questions land on the rows that need them.

    rate_difference (default): question rate on ambiguous rows minus question
    rate on the others; in [-1, 1].
    question_share: among the questioned rows, the share that were ambiguous
    minus the share that were not (0.0 when nothing was questioned).
    """
    if len(questioned) != len(is_ambiguous):
        raise MetricError(f"{len(questioned)} question flags vs {len(is_ambiguous)} labels")
    q = np.asarray(questioned, dtype=bool)
    amb = np.asarray(is_ambiguous, dtype=bool)
    if variant == "rate_difference":
        if not amb.any() or amb.all():
            raise MetricError("need at least one ambiguous and one non-ambiguous row")
        return float(q[amb].mean() - q[~amb].mean())
    if variant == "question_share":
        if not q.any():
            return 0.0
        return float(amb[q].mean() - (~amb)[q].mean())
    raise MetricError(f"unknown timing variant {variant!r}")


def success_gap(before: Sequence[bool], after: Sequence[bool]) -> float:
    """Success-rate change after interaction, in percentage points."""
    if len(before) != len(after):
        raise MetricError(f"{len(before)} before flags vs {len(after)} after flags")
    if not before:
        raise MetricError("empty episode set")
    before_rate = float(np.mean(np.asarray(before, dtype=float)))
    after_rate = float(np.mean(np.asarray(after, dtype=float)))
    return (after_rate - before_rate) * 100.0


def stratify(
    records: Sequence[SagcRecord], by: str
) -> dict[str, list[SagcRecord]]:
    """Order-preserving partition by robot_type, label, or scene_id."""
    if by not in ("robot_type", "label", "scene_id"):
        raise MetricError(f"cannot stratify by {by!r}")
    groups: dict[str, list[SagcRecord]] = {}
    for record in records:
        groups.setdefault(getattr(record, by), []).append(record)
    return groups


@dataclass
class MetricsReport:
    """Aggregated metrics for one evaluation run; serializes to JSON/text."""

    schema_version: str = "1"
    auroc: dict[str, float | str] = field(default_factory=dict)
    accuracy3: float | None = None
    confusion: list[list[int]] | None = None
    timing: float | None = None
    a_gap: float | None = None
    n: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {"schema_version": self.schema_version, "n": self.n}
        if self.auroc:
            out["auroc"] = self.auroc
        if self.accuracy3 is not None:
            out["accuracy3"] = self.accuracy3
        if self.confusion is not None:
            out["confusion"] = self.confusion
            out["confusion_labels"] = list(LABELS)
        if self.timing is not None:
            out["timing"] = self.timing
        if self.a_gap is not None:
            out["a_gap"] = self.a_gap
        return out

    def to_table(self) -> str:
        rows: list[tuple[str, str]] = []
        for name, value in self.auroc.items():
            rows.append((f"auroc[{name}]", value if isinstance(value, str) else f"{value:.4f}"))
        if self.accuracy3 is not None:
            rows.append(("accuracy3", f"{self.accuracy3:.4f}"))
        if self.timing is not None:
            rows.append(("timing", f"{self.timing:.4f}"))
        if self.a_gap is not None:
            rows.append(("a_gap", f"{self.a_gap:+.1f}"))
        for label, count in self.n.items():
            rows.append((f"n[{label}]", str(count)))
        if not rows:
            return "(empty report)"
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)
