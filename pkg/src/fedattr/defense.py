"""Geometry-based trimming and its reading as a per-round detector.

Each round, updates farthest from the coordinate-wise median are trimmed;
a trimmed client counts as "detected" for precision/recall/F1 scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class TrimDecision:
    t: int
    distances: np.ndarray
    trimmed: frozenset[int]
    kept: frozenset[int]


@dataclass(frozen=True)
class DetectionScore:
    precision: float
    recall: float
    f1: float


def trim_round(
    updates: Sequence[np.ndarray],
    n: Sequence[int],
    tau: float,
    *,
    t: int = 0,
) -> TrimDecision:
    """Trim the ceil(tau*N) updates farthest from the coordinate-wise median.

    Distance ties break toward the higher client id.  Aggregation afterwards
    runs over the kept clients only (enforce mode); `n` is accepted for
    interface symmetry with the aggregator.
    """
    num = len(updates)
    if num < 2:
        raise ValueError("trimming needs at least two clients")
    if len(n) != num:
        raise ValueError("updates and counts differ in length")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    stacked = np.stack(updates)
    center = np.median(stacked, axis=0)
    distances = np.linalg.norm(stacked - center, axis=1)
    m = math.ceil(tau * num)
    order = sorted(range(num), key=lambda i: (-distances[i], -i))
    trimmed = frozenset(order[:m])
    kept = frozenset(range(num)) - trimmed
    return TrimDecision(t=t, distances=distances, trimmed=trimmed, kept=kept)


@dataclass(frozen=True)
class PlausibilityFlag:
    distance: float
    flagged: bool


def plausibility_check(
    update: np.ndarray, kept_updates: Sequence[np.ndarray], eps: float
) -> PlausibilityFlag:
    """Cosine deviation of an update from the median of a benign reference set.

    Reported, never enforced.  Zero vectors get the orthogonal convention
    (distance 1).
    """
    if len(kept_updates) == 0:
        raise ValueError("reference set is empty")
    center = np.median(np.stack(kept_updates), axis=0)
    nu = float(np.linalg.norm(update))
    nc = float(np.linalg.norm(center))
    if nu == 0.0 or nc == 0.0:
        d = 1.0
    else:
        d = 1.0 - float(np.dot(update, center)) / (nu * nc)
    return PlausibilityFlag(distance=d, flagged=d > eps)


def detection_metrics(
    decisions: Sequence[TrimDecision], malicious: set[int]
) -> DetectionScore:
    """Per-round precision/recall/F1 against the known malicious set, averaged."""
    if len(decisions) == 0:
        raise ValueError("no rounds to score")
    if len(malicious) == 0:
        raise ValueError("malicious set is empty; recall undefined")
    ps, rs, fs = [], [], []
    for dec in decisions:
        hit = len(dec.trimmed & malicious)
        p = hit / len(dec.trimmed) if dec.trimmed else 0.0
        r = hit / len(malicious)
        f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return DetectionScore(
        precision=float(np.mean(ps)),
        recall=float(np.mean(rs)),
        f1=float(np.mean(fs)),
    )
