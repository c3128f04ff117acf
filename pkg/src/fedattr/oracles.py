"""Brute-force reference implementations used by tests and acceptance checks.

These deliberately share no arithmetic with the production paths they verify:
Shapley values are averaged over explicitly enumerated permutations, and
gradients come from plain central differences.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Mapping

import numpy as np


def shapley_bruteforce(
    table: Mapping[frozenset[int], float], num_players: int
) -> np.ndarray:
    """Average marginal contribution over all num_players! orderings.

    `table` must map every subset of range(num_players), as a frozenset, to
    its coalition value (the empty frozenset included).
    """
    if num_players < 1:
        raise ValueError("need at least one player")
    if num_players > 8:
        raise ValueError("enumeration over permutations is capped at 8 players")
    totals = np.zeros(num_players)
    for perm in itertools.permutations(range(num_players)):
        coalition: frozenset[int] = frozenset()
        before = table[coalition]
        for player in perm:
            coalition = coalition | {player}
            after = table[coalition]
            totals[player] += after - before
            before = after
    return totals / math.factorial(num_players)


def fd_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float
) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (f(hi) - f(lo)) / (2.0 * step)
    return grad
