"""Exact solver: dynamic program over the layer chain.

Every layer independently picks one balanced labeled assignment of its
experts to ``P`` partitions, and the cost only couples adjacent layers, so a
shortest path through ``S`` states per layer is optimal. ``S`` is the
multinomial ``E! / ((E/P)!)**P``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..errors import ConfigError, StateCapExceeded

DEFAULT_STATE_CAP = 10_000
_CHUNK = 512


def num_balanced_assignments(num_experts: int, num_parts: int) -> int:
    cap = num_experts // num_parts
    return math.factorial(num_experts) // math.factorial(cap) ** num_parts


@lru_cache(maxsize=32)
def balanced_assignments(num_experts: int, num_parts: int) -> np.ndarray:
    """All balanced labelings, ``(S, E)``, in lexicographic order."""
    cap = num_experts // num_parts
    out = []
    label = [0] * num_experts
    left = [cap] * num_parts

    def rec(i):
        if i == num_experts:
            out.append(tuple(label))
            return
        for p in range(num_parts):
            if left[p]:
                left[p] -= 1
                label[i] = p
                rec(i + 1)
                left[p] += 1

    rec(0)
    arr = np.array(out, dtype=np.int64).reshape(-1, num_experts)
    arr.setflags(write=False)
    return arr


def _same_group_weight(states: np.ndarray, onehot: np.ndarray, weight: np.ndarray, rows: slice) -> np.ndarray:
    # same[s, t] = sum_{a,b} w[a,b] * [states[s,a] == states[t,b]]
    block = onehot[rows]  # (s, E, P)
    acc = np.zeros((block.shape[0], states.shape[0]))
    for p in range(onehot.shape[2]):
        acc += (block[:, :, p] @ weight) @ onehot[:, :, p].T
    return acc


def exact_partition(weights: np.ndarray, num_parts: int, state_cap: int = DEFAULT_STATE_CAP):
    """Optimal ``(L, E)`` partition labels and their weighted crossing count.

    ``weights`` is ``(L-1, E, E)``. Among optimal solutions, the
    lexicographically smallest labeling (layer 0 first) is returned.
    """
    weights = np.asarray(weights, dtype=np.float64)
    L, E = weights.shape[0] + 1, weights.shape[1]
    if num_parts < 1 or E % num_parts:
        raise ConfigError(f"{E} experts cannot be split evenly into {num_parts} partitions")
    S = num_balanced_assignments(E, num_parts)
    if S > state_cap:
        raise StateCapExceeded(
            f"exact solver needs {S} states per layer (cap {state_cap}) for E={E}, P={num_parts}; "
            "use the annealing solver instead (--solver anneal)"
        )
    states = balanced_assignments(E, num_parts)
    onehot = (states[:, :, None] == np.arange(num_parts)).astype(np.float64)
    totals = weights.sum(axis=(1, 2))

    # cost_to_go[j][s]: best cost of layers j..L-1 given layer j uses state s
    cost_to_go = [None] * L
    cost_to_go[L - 1] = np.zeros(S)
    for j in range(L - 2, -1, -1):
        nxt = cost_to_go[j + 1]
        cur = np.empty(S)
        for start in range(0, S, _CHUNK):
            rows = slice(start, min(start + _CHUNK, S))
            cost = totals[j] - _same_group_weight(states, onehot, weights[j], rows)
            cur[rows] = (cost + nxt[None, :]).min(axis=1)
        cost_to_go[j] = cur

    chosen = [int(np.argmin(cost_to_go[0]))]
    for j in range(L - 1):
        s = chosen[-1]
        row = totals[j] - _same_group_weight(states, onehot, weights[j], slice(s, s + 1))[0]
        total = row + cost_to_go[j + 1]
        # argmin returns the first (lexicographically smallest) minimizer
        chosen.append(int(np.argmin(total)))
    labels = states[chosen].copy()
    return labels, float(cost_to_go[0][chosen[0]])
