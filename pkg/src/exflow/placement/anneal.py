"""Simulated annealing over balanced partitions.

A move swaps the partitions of two experts in the same layer, so balance
holds by construction. Because costs only link adjacent layers, the change
in crossings for a swap comes from two cached tables per layer:

* ``to_prev[j, a, g]``: weight from partition ``g`` of layer ``j-1`` into ``a``;
* ``to_next[j, a, g]``: weight from ``a`` into partition ``g`` of layer ``j+1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numba
import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import ConfigError
from .core import crossings_for_groups


@dataclass(frozen=True)
class AnnealParams:
    """Annealing schedule. ``None`` fields take the defaults.

    ``max_iters`` defaults to ``20_000 * L`` per restart and
    ``initial_temperature`` to the mean positive transition weight.
    """

    restarts: int = 8
    max_iters: Optional[int] = None
    initial_temperature: Optional[float] = None
    cooling: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ConfigError(f"restarts must be positive, got {self.restarts}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError(f"max_iters must be positive, got {self.max_iters}")
        if self.initial_temperature is not None and self.initial_temperature < 0:
            raise ConfigError("initial_temperature must be non-negative")
        if not 0.0 < self.cooling <= 1.0:
            raise ConfigError(f"cooling must be in (0, 1], got {self.cooling}")

    def to_dict(self) -> dict:
        return asdict(self)


@numba.njit(cache=True)
def _anneal(weights, labels, members, cap, temp0, cooling, r_layer, r_slot, r_other, r_u):
    num_pairs, E, _ = weights.shape
    L = num_pairs + 1
    P = E // cap

    to_prev = np.zeros((L, E, P))
    to_next = np.zeros((L, E, P))
    for j in range(num_pairs):
        for a in range(E):
            for b in range(E):
                w = weights[j, a, b]
                if w != 0.0:
                    to_next[j, a, labels[j + 1, b]] += w
                    to_prev[j + 1, b, labels[j, a]] += w

    cost = 0.0
    for j in range(num_pairs):
        for a in range(E):
            for b in range(E):
                if labels[j, a] != labels[j + 1, b]:
                    cost += weights[j, a, b]

    best = cost
    best_labels = labels.copy()
    temp = temp0
    n_iter = r_layer.shape[0]
    done = 0
    for it in range(n_iter):
        if best == 0.0:
            break
        done = it + 1
        j = r_layer[it]
        s1 = r_slot[it]
        g = s1 // cap
        s2 = r_other[it]
        if s2 >= g * cap:
            s2 += cap
        h = s2 // cap
        a = members[j, s1]
        b = members[j, s2]

        delta = (to_prev[j, a, g] + to_next[j, a, g] - to_prev[j, a, h] - to_next[j, a, h]
                 + to_prev[j, b, h] + to_next[j, b, h] - to_prev[j, b, g] - to_next[j, b, g])

        accept = delta <= 0.0
        if not accept and temp > 0.0:
            accept = r_u[it] < np.exp(-delta / temp)
        if accept:
            labels[j, a] = h
            labels[j, b] = g
            members[j, s1] = b
            members[j, s2] = a
            if j + 1 < L:
                for c in range(E):
                    wa = weights[j, a, c]
                    wb = weights[j, b, c]
                    to_prev[j + 1, c, g] += wb - wa
                    to_prev[j + 1, c, h] += wa - wb
            if j > 0:
                for c in range(E):
                    wa = weights[j - 1, c, a]
                    wb = weights[j - 1, c, b]
                    to_next[j - 1, c, g] += wb - wa
                    to_next[j - 1, c, h] += wa - wb
            cost += delta
            if cost < best:
                best = cost
                best_labels[:, :] = labels
        temp *= cooling
    return best_labels, best, done


def _members_from_labels(labels: np.ndarray) -> np.ndarray:
    # slot s holds an expert of partition s // cap
    return np.stack([np.argsort(row, kind="stable") for row in labels]).astype(np.int64)


def _best_fit_layer(profit: np.ndarray, cap: int) -> np.ndarray:
    """Balanced labels maximizing ``sum_b profit[b, label[b]]``."""
    slots = np.repeat(profit, cap, axis=1)  # column s is partition s // cap
    rows, cols = linear_sum_assignment(slots, maximize=True)
    labels = np.empty(profit.shape[0], dtype=np.int64)
    labels[rows] = cols // cap
    return labels


def chain_initial_labels(weights: np.ndarray, first: np.ndarray, num_parts: int) -> np.ndarray:
    """Extend layer-0 labels forward, each layer best matching the one before."""
    L, E = weights.shape[0] + 1, weights.shape[1]
    cap = E // num_parts
    labels = np.empty((L, E), dtype=np.int64)
    labels[0] = first
    onehot = np.zeros((E, num_parts))
    for j in range(L - 1):
        onehot[:] = 0.0
        onehot[np.arange(E), labels[j]] = 1.0
        profit = weights[j].T @ onehot  # profit[b, h]: weight into b from partition h
        labels[j + 1] = _best_fit_layer(profit, cap)
    return labels


def align_suffixes(weights: np.ndarray, labels: np.ndarray, num_parts: int) -> np.ndarray:
    """Relabel each suffix of layers by the partition permutation that best fits its boundary.

    Permuting the labels of layers ``j..L-1`` together only changes the cost
    across boundary ``j-1 -> j``, so each step never increases the total.
    """
    labels = labels.copy()
    L = labels.shape[0]
    for j in range(1, L):
        fit = np.zeros((num_parts, num_parts))
        np.add.at(fit, (labels[j - 1][:, None], labels[j][None, :]), weights[j - 1])
        rows, cols = linear_sum_assignment(fit, maximize=True)
        perm = np.empty(num_parts, dtype=np.int64)
        perm[cols] = rows
        labels[j:] = perm[labels[j:]]
    return labels


def _run(weights, labels, cap, temp0, cooling, n_iter, rng):
    L, E = labels.shape
    r_layer = rng.integers(0, L, n_iter)
    r_slot = rng.integers(0, E, n_iter)
    r_other = rng.integers(0, E - cap, n_iter)
    r_u = rng.random(n_iter)
    best, cost, done = _anneal(weights, labels.copy(), _members_from_labels(labels), cap, temp0, cooling,
                               r_layer, r_slot, r_other, r_u)
    return np.asarray(best), float(cost), int(done)


def anneal_partition(weights: np.ndarray, num_parts: int, params: AnnealParams = AnnealParams()):
    """Best ``(L, E)`` labels found, their crossing cost, and run statistics.

    Each restart starts from a random layer-0 labeling extended by
    :func:`chain_initial_labels`, anneals, then alternates suffix alignment
    with zero-temperature swap passes until the cost stops improving.
    """
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    L, E = weights.shape[0] + 1, weights.shape[1]
    if num_parts < 1 or E % num_parts:
        raise ConfigError(f"{E} experts cannot be split evenly into {num_parts} partitions")
    cap = E // num_parts
    n_iter = params.max_iters if params.max_iters is not None else 20_000 * L
    positive = weights[weights > 0]
    temp0 = params.initial_temperature
    if temp0 is None:
        temp0 = float(positive.mean()) if positive.size else 0.0

    base = np.repeat(np.arange(num_parts, dtype=np.int64), cap)
    seeds = np.random.SeedSequence(params.seed).spawn(params.restarts)
    best = None
    total_iters = 0
    for restart, ss in enumerate(seeds):
        rng = np.random.Generator(np.random.PCG64(ss))
        first = rng.permutation(base)
        if num_parts == 1 or not positive.size:
            labels = np.tile(first, (L, 1))
            cost = crossings_for_groups(weights, labels)
        else:
            labels = chain_initial_labels(weights, first, num_parts)
            labels, cost, done = _run(weights, labels, cap, temp0, params.cooling, n_iter, rng)
            total_iters += done
            while cost > 0:
                aligned = align_suffixes(weights, labels, num_parts)
                if crossings_for_groups(weights, aligned) >= cost:
                    break
                labels, cost, done = _run(weights, aligned, cap, 0.0, 1.0, max(n_iter // 4, 1), rng)
                total_iters += done
        # strict improvement only: ties keep the lowest restart index
        if best is None or cost < best[1]:
            best = (labels, cost, restart)
    labels, cost, best_restart = best
    return labels, cost, {"iterations": total_iters, "restarts": params.restarts,
                          "best_restart": best_restart, "initial_temperature": temp0}
