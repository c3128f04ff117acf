"""Server-side attribution evaluators over a finished training log.

Per-round coalition utilities feed an exact (or permutation-sampled) Shapley
evaluator and leave-one-out variants; raw values are then shift-min
normalized into shares and ranked.  Evaluators only read the log, never
influence training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .flcore import FLConfig, TrainingLog, run_training, utility, weighted_aggregate
from .models import LabeledBatch, ModelSpec

EVALUATORS = ("fedsv_exact", "fedsv_mc", "loo_round", "loo_retrain")

_EXACT_LIMIT = 16


@dataclass
class CoalitionUtility:
    """Round-t coalition game: v(S) = U(w_t + weighted aggregate over S)."""

    t: int
    base_w: np.ndarray
    updates: tuple[np.ndarray, ...]
    n: tuple[int, ...]
    spec: ModelSpec
    test: LabeledBatch
    _cache: dict[int, float] = field(default_factory=dict, repr=False)

    @classmethod
    def from_round(cls, record, spec: ModelSpec, test: LabeledBatch) -> "CoalitionUtility":
        return cls(record.t, record.w_t, record.updates, record.n, spec, test)

    @property
    def num_clients(self) -> int:
        return len(self.updates)

    def value_mask(self, mask: int) -> float:
        cached = self._cache.get(mask)
        if cached is not None:
            return cached
        if mask == 0:
            v = utility(self.spec, self.base_w, self.test)
        else:
            members = [i for i in range(self.num_clients) if mask >> i & 1]
            agg = weighted_aggregate(
                [self.updates[i] for i in members], [self.n[i] for i in members]
            )
            v = utility(self.spec, self.base_w + agg, self.test)
        self._cache[mask] = v
        return v

    def value(self, subset: Iterable[int]) -> float:
        mask = 0
        for i in subset:
            if not 0 <= i < self.num_clients:
                raise ValueError(f"client {i} not in this round")
            mask |= 1 << i
        return self.value_mask(mask)


def coalition_value(cu: CoalitionUtility, subset: Iterable[int]) -> float:
    return cu.value(subset)


def shapley_exact(cu: CoalitionUtility) -> np.ndarray:
    """Exact Shapley values via the weighted-marginal sum over all subsets."""
    num = cu.num_clients
    if num > _EXACT_LIMIT:
        raise ValueError(
            f"{num} clients exceeds the enumeration guard ({_EXACT_LIMIT}); "
            "use shapley_mc"
        )
    # weight for a coalition of size s not containing i: s!(N-1-s)!/N!
    fact = [math.factorial(j) for j in range(num + 1)]
    weights = [
        fact[s] * fact[num - 1 - s] / fact[num] for s in range(num)
    ]
    values = np.empty(1 << num)
    for mask in range(1 << num):
        values[mask] = cu.value_mask(mask)
    phi = np.zeros(num)
    for i in range(num):
        bit = 1 << i
        for mask in range(1 << num):
            if mask & bit:
                continue
            s = bin(mask).count("1")
            phi[i] += weights[s] * (values[mask | bit] - values[mask])
    return phi


def shapley_mc(
    cu: CoalitionUtility, num_permutations: int, seed: int
) -> np.ndarray:
    """Mean marginal contribution over seeded uniform random permutations."""
    if num_permutations < 1:
        raise ValueError("num_permutations must be at least 1")
    num = cu.num_clients
    rng = np.random.default_rng(seed)
    totals = np.zeros(num)
    for _ in range(num_permutations):
        perm = rng.permutation(num)
        mask = 0
        before = cu.value_mask(0)
        for i in perm:
            mask |= 1 << int(i)
            after = cu.value_mask(mask)
            totals[i] += after - before
            before = after
    return totals / num_permutations


@dataclass(frozen=True)
class AttributionReport:
    evaluator: str
    raw: np.ndarray
    shares: np.ndarray
    ranks: np.ndarray

    @classmethod
    def from_raw(cls, evaluator: str, raw: np.ndarray) -> "AttributionReport":
        shares = normalize_shares(raw)
        return cls(evaluator, np.asarray(raw, dtype=np.float64), shares, rank_clients(shares))


def normalize_shares(raw: np.ndarray) -> np.ndarray:
    """Shift by the minimum and rescale to sum to one; uniform if degenerate."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size < 1:
        raise ValueError("need at least one client")
    shifted = raw - raw.min()
    total = shifted.sum()
    if total == 0.0:
        return np.full(raw.size, 1.0 / raw.size)
    return shifted / total


def rank_clients(shares: np.ndarray) -> np.ndarray:
    """Rank 1 = largest share; ties break toward the lower client id."""
    order = sorted(range(len(shares)), key=lambda i: (-shares[i], i))
    ranks = np.empty(len(shares), dtype=np.int64)
    for pos, i in enumerate(order):
        ranks[i] = pos + 1
    return ranks


def fedsv(
    log: TrainingLog,
    spec: ModelSpec,
    test: LabeledBatch,
    mode: str = "exact",
    *,
    num_permutations: int = 200,
    seed: int = 0,
) -> AttributionReport:
    """Federated Shapley: per-round values summed across all rounds."""
    if mode not in ("exact", "mc"):
        raise ValueError(f"unknown FedSV mode {mode!r}")
    total = np.zeros(log.num_clients)
    for rec in log.rounds:
        cu = CoalitionUtility.from_round(rec, spec, test)
        if mode == "exact":
            total += shapley_exact(cu)
        else:
            total += shapley_mc(cu, num_permutations, seed + rec.t)
    name = "fedsv_exact" if mode == "exact" else "fedsv_mc"
    return AttributionReport.from_raw(name, total)


def loo_round(
    log: TrainingLog, spec: ModelSpec, test: LabeledBatch
) -> AttributionReport:
    """Leave-one-out on logged rounds: sum_t v_t(All) - v_t(All minus i)."""
    num = log.num_clients
    total = np.zeros(num)
    full_mask = (1 << num) - 1
    for rec in log.rounds:
        cu = CoalitionUtility.from_round(rec, spec, test)
        v_all = cu.value_mask(full_mask)
        for i in range(num):
            total[i] += v_all - cu.value_mask(full_mask & ~(1 << i))
    return AttributionReport.from_raw("loo_round", total)


def loo_retrain(cfg: FLConfig, client_id: int) -> float:
    """Utility drop from rerunning the whole training without one client."""
    full = run_training(cfg)
    reduced = run_training(cfg.without_client(client_id))
    return full.final_utility - reduced.final_utility


def loo_retrain_report(cfg: FLConfig) -> AttributionReport:
    full = run_training(cfg)
    raw = np.array(
        [
            full.final_utility
            - run_training(cfg.without_client(s.client_id)).final_utility
            for s in cfg.shards
        ]
    )
    return AttributionReport.from_raw("loo_retrain", raw)


def write_report_csv(
    reports: list[tuple[str, str, AttributionReport]], path
) -> None:
    """Tabular dump; rows are (run_id, evaluator, client, raw, share, rank, phase)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["run_id", "evaluator", "client_id", "raw", "share", "rank", "phase"]
        )
        for run_id, phase, report in reports:
            for i in range(len(report.raw)):
                writer.writerow(
                    [
                        run_id,
                        report.evaluator,
                        i,
                        repr(float(report.raw[i])),
                        repr(float(report.shares[i])),
                        int(report.ranks[i]),
                        phase,
                    ]
                )
