"""Verifiable rewards (IoU accuracy + binary format), group difficulty
statistics, bucket classification, and the difficulty-coefficient family.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .geometry import BBox, iou
from .response import ParsedResponse

NEGLOG_CLAMP_FLOOR = 1e-6

EASY_THRESHOLD = 0.7
HARD_THRESHOLD = 0.3


@dataclass(frozen=True)
class RewardBreakdown:
    acc: float
    format: int
    total: float


class DifficultyBucket(enum.Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


class PhiKind(enum.Enum):
    NEG_LOG = "neg_log"
    SQUARED_COMPLEMENT = "squared_complement"
    EXP_COMPLEMENT = "exp_complement"
    NONE = "none"


def accuracy_reward(parsed: ParsedResponse, gt: BBox, salvage: bool = True) -> float:
    """IoU of the parsed box against ground truth; 0 when no box is usable.

    A box recovered from a malformed response only counts when salvage is
    enabled, keeping accuracy and format rewards independent signals.
    """
    if parsed.box is None:
        return 0.0
    if not parsed.format_ok and not salvage:
        return 0.0
    return iou(parsed.box, gt)


def format_reward(parsed: ParsedResponse) -> int:
    return 1 if parsed.format_ok else 0


def total_reward(parsed: ParsedResponse, gt: BBox, salvage: bool = True) -> RewardBreakdown:
    acc = accuracy_reward(parsed, gt, salvage)
    fmt = format_reward(parsed)
    return RewardBreakdown(acc=acc, format=fmt, total=acc + fmt)


def mean_iou(group: list[RewardBreakdown]) -> float:
    """Mean accuracy reward of a group: the per-sample difficulty statistic."""
    if not group:
        raise ValueError("mean_iou of an empty group")
    return sum(r.acc for r in group) / len(group)


def bucket(miou: float) -> DifficultyBucket:
    """Easy above 0.7, hard below 0.3, medium otherwise (bounds inclusive)."""
    if miou > EASY_THRESHOLD:
        return DifficultyBucket.EASY
    if miou < HARD_THRESHOLD:
        return DifficultyBucket.HARD
    return DifficultyBucket.MEDIUM


def phi(kind: PhiKind, miou: float) -> float:
    """Difficulty coefficient: a decreasing function of the group mean IoU.

    NEG_LOG clamps its argument to [1e-6, 1] first, so all-miss groups
    (miou = 0) still get a finite weight.
    """
    if kind is PhiKind.NONE:
        return 1.0
    if kind is PhiKind.NEG_LOG:
        return -math.log(min(1.0, max(NEGLOG_CLAMP_FLOOR, miou)))
    if kind is PhiKind.SQUARED_COMPLEMENT:
        return (1.0 - miou) ** 2
    if kind is PhiKind.EXP_COMPLEMENT:
        return math.exp(1.0 - miou)
    raise ValueError(f"unknown phi kind: {kind!r}")
