"""FedAvg round loop: broadcast, client behaviors, weighted aggregation, logging.

Client behaviors are interchangeable plug-ins invoked through one contract;
a behavior sees only the broadcast history, its own shard, and its own RNG
stream.  Every round is recorded so evaluators and defenses can replay the
run without touching training.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import streams
from .data import ClientShard
from .defense import TrimDecision, trim_round
from .models import (
    LabeledBatch,
    ModelSpec,
    accuracy,
    init_params,
    params_from_bytes,
    params_to_bytes,
    sgd_train,
)

DEFENSE_MODES = ("off", "monitor", "enforce")


@dataclass(frozen=True)
class LocalHP:
    """Client-side training hyperparameters (shared by all clients)."""

    epochs: int = 2
    batch_size: int = 32
    eta_w: float = 0.1


@dataclass(frozen=True)
class RoundContext:
    """What a behavior is allowed to see: broadcast history and its own shard."""

    t: int
    w_t: np.ndarray
    history: tuple[np.ndarray, ...]  # w_1 .. w_t, read-only
    shard: ClientShard
    hp: LocalHP
    rng: np.random.Generator


class Behavior(Protocol):
    def __call__(self, ctx: RoundContext) -> np.ndarray: ...


@dataclass(frozen=True)
class RoundRecord:
    t: int
    w_t: np.ndarray
    updates: tuple[np.ndarray, ...]
    n: tuple[int, ...]
    w_next: np.ndarray
    test_utility_after: float
    trim: TrimDecision | None = None


@dataclass(frozen=True)
class TrainingLog:
    rounds: tuple[RoundRecord, ...]
    final_utility: float
    fingerprint: str

    @property
    def num_clients(self) -> int:
        return len(self.rounds[0].updates)


@dataclass(frozen=True)
class FLConfig:
    spec: ModelSpec
    shards: Sequence[ClientShard]
    behaviors: Sequence[Behavior]
    hp: LocalHP
    rounds: int
    test: LabeledBatch
    master_seed: int
    defense_mode: str = "off"
    trim_tau: float = 0.1
    fingerprint: str = ""

    def __post_init__(self) -> None:
        if len(self.shards) != len(self.behaviors):
            raise ValueError("one behavior per shard required")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.defense_mode not in DEFENSE_MODES:
            raise ValueError(f"unknown defense mode {self.defense_mode!r}")

    def without_client(self, client_id: int) -> "FLConfig":
        """Drop one client, keeping everyone else's id-keyed RNG streams intact."""
        keep = [i for i, s in enumerate(self.shards) if s.client_id != client_id]
        if len(keep) == len(self.shards):
            raise ValueError(f"no client with id {client_id}")
        return FLConfig(
            spec=self.spec,
            shards=[self.shards[i] for i in keep],
            behaviors=[self.behaviors[i] for i in keep],
            hp=self.hp,
            rounds=self.rounds,
            test=self.test,
            master_seed=self.master_seed,
            defense_mode=self.defense_mode,
            trim_tau=self.trim_tau,
            fingerprint=self.fingerprint,
        )


class FLRunError(RuntimeError):
    def __init__(self, round_index: int, client_id: int, cause: Exception):
        super().__init__(f"round {round_index}, client {client_id}: {cause}")
        self.round_index = round_index
        self.client_id = client_id


def weighted_aggregate(
    updates: Sequence[np.ndarray], n: Sequence[int]
) -> np.ndarray:
    """Data-size-weighted average of client updates."""
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    if len(updates) != len(n):
        raise ValueError("updates and counts differ in length")
    counts = np.asarray(n, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("sample counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("sample counts sum to zero")
    agg = np.zeros_like(updates[0])
    for u, w in zip(updates, counts):
        agg += (w / total) * u
    return agg


def benign_local_update(
    spec: ModelSpec,
    w_t: np.ndarray,
    shard: ClientShard,
    hp: LocalHP,
    seed: int,
) -> np.ndarray:
    """Local SGD on the client's own shard; returns trained params minus w_t."""
    trained = sgd_train(
        spec, w_t, shard.data, hp.epochs, hp.batch_size, hp.eta_w, seed
    )
    return trained - w_t


class BenignBehavior:
    """Standard client: trains on its shard, reports the weight delta."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    def __call__(self, ctx: RoundContext) -> np.ndarray:
        seed = int(ctx.rng.integers(0, 2**63))
        return benign_local_update(self.spec, ctx.w_t, ctx.shard, ctx.hp, seed)


def utility(spec: ModelSpec, params: np.ndarray, test: LabeledBatch) -> float:
    """Global utility metric: held-out test accuracy."""
    return accuracy(spec, params, test)


def run_training(cfg: FLConfig) -> TrainingLog:
    """Run T FedAvg rounds and record every broadcast, update, and aggregate."""
    w = init_params(cfg.spec, streams.child_seed(cfg.master_seed, "init"))
    w.setflags(write=False)
    history: list[np.ndarray] = [w]
    records: list[RoundRecord] = []
    n = tuple(int(s.n_i) for s in cfg.shards)

    for t in range(1, cfg.rounds + 1):
        updates: list[np.ndarray] = []
        for shard, behavior in zip(cfg.shards, cfg.behaviors):
            rng = streams.stream(cfg.master_seed, "client", shard.client_id, t)
            ctx = RoundContext(t, w, tuple(history), shard, cfg.hp, rng)
            try:
                u = np.asarray(behavior(ctx), dtype=np.float64)
            except Exception as exc:
                raise FLRunError(t, shard.client_id, exc) from exc
            if u.shape != w.shape or not np.all(np.isfinite(u)):
                raise FLRunError(
                    t, shard.client_id, ValueError("bad update shape or non-finite")
                )
            updates.append(u)

        trim = None
        kept_idx = list(range(len(updates)))
        if cfg.defense_mode != "off":
            trim = trim_round(updates, n, cfg.trim_tau, t=t)
            if cfg.defense_mode == "enforce":
                kept_idx = sorted(trim.kept)

        agg = weighted_aggregate(
            [updates[i] for i in kept_idx], [n[i] for i in kept_idx]
        )
        w_next = w + agg
        w_next.setflags(write=False)
        util = utility(cfg.spec, w_next, cfg.test)
        records.append(
            RoundRecord(t, w, tuple(updates), n, w_next, util, trim)
        )
        w = w_next
        history.append(w)

    return TrainingLog(tuple(records), records[-1].test_utility_after, cfg.fingerprint)


# --- line-delimited persistence -------------------------------------------

def _enc(vec: np.ndarray) -> str:
    return base64.b64encode(params_to_bytes(vec)).decode("ascii")


def _dec(blob: str) -> np.ndarray:
    return params_from_bytes(base64.b64decode(blob))


def save_log(log: TrainingLog, path) -> None:
    """One JSON line per round, preceded by a header line."""
    with open(path, "w") as fh:
        header = {
            "kind": "training_log",
            "fingerprint": log.fingerprint,
            "rounds": len(log.rounds),
            "final_utility": log.final_utility,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in log.rounds:
            row = {
                "t": rec.t,
                "w_t": _enc(rec.w_t),
                "updates": [_enc(u) for u in rec.updates],
                "n": list(rec.n),
                "w_next": _enc(rec.w_next),
                "test_utility_after": rec.test_utility_after,
                "trimmed": sorted(rec.trim.trimmed) if rec.trim else None,
                "distances": (
                    [float(d) for d in rec.trim.distances] if rec.trim else None
                ),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_log(path) -> TrainingLog:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "training_log":
            raise ValueError("not a training log")
        records = []
        for line in fh:
            row = json.loads(line)
            trim = None
            if row["trimmed"] is not None:
                all_ids = set(range(len(row["updates"])))
                trim = TrimDecision(
                    t=row["t"],
                    distances=np.array(row["distances"]),
                    trimmed=frozenset(row["trimmed"]),
                    kept=frozenset(all_ids - set(row["trimmed"])),
                )
            records.append(
                RoundRecord(
                    t=row["t"],
                    w_t=_dec(row["w_t"]),
                    updates=tuple(_dec(u) for u in row["updates"]),
                    n=tuple(row["n"]),
                    w_next=_dec(row["w_next"]),
                    test_utility_after=row["test_utility_after"],
                    trim=trim,
                )
            )
    return TrainingLog(tuple(records), header["final_utility"], header["fingerprint"])
