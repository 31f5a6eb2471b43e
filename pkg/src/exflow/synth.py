"""Seeded synthetic routing traces with a planted expert partition.

Random numbers come from the PCG64 generator (``numpy.random.PCG64`` seeded
through ``SeedSequence(seed)``), consumed only through its raw 64-bit output
stream (``random_raw``), which is fixed by the PCG64 definition and does not
depend on numpy's distribution code. A raw word ``r`` becomes a uniform
float ``u = (r >> 11) * 2**-53`` and a uniform index in ``[0, n)`` as
``floor(u * n)``.

Stream layout, drawn in this order for ``T`` tokens:

* layer 0: ``T`` words, the starting expert of each token;
* each later layer: ``T`` words for the stay-in-group coin, ``T`` for the
  in-group pick, ``T`` for the uniform pick. All three blocks are always
  drawn so the stream position never depends on earlier outcomes.

When ``shuffle_seed`` is set, each layer's expert ids are relabeled by a
permutation from a second PCG64 stream seeded with ``shuffle_seed``
(Fisher-Yates, layers in order). Two traces with the same ``shuffle_seed``
and different ``seed`` come from the same "model" but different tokens.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .trace_model import RoutingTrace

_U64_MAX = 2**64 - 1
_INV_2_53 = 1.0 / (1 << 53)


@dataclass(frozen=True)
class SynthConfig:
    num_experts: int
    num_layers: int
    num_tokens: int
    affinity_strength: float
    planted_groups: int
    seed: int
    shuffle_seed: Optional[int] = None

    def __post_init__(self):
        if self.num_experts < 1:
            raise ConfigError(f"num_experts must be >= 1, got {self.num_experts}")
        if self.num_layers < 2:
            raise ConfigError(f"num_layers must be >= 2, got {self.num_layers}")
        if self.num_tokens < 1:
            raise ConfigError(f"num_tokens must be >= 1, got {self.num_tokens}")
        if not 0.0 <= self.affinity_strength <= 1.0:
            raise ConfigError(f"affinity_strength must be in [0, 1], got {self.affinity_strength}")
        if self.planted_groups < 1 or self.num_experts % self.planted_groups:
            raise ConfigError(
                f"planted groups {self.planted_groups} must divide num_experts {self.num_experts}"
            )
        for name in ("seed", "shuffle_seed"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= _U64_MAX:
                raise ConfigError(f"{name} must be a 64-bit unsigned integer, got {v}")

    @property
    def group_size(self) -> int:
        return self.num_experts // self.planted_groups

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform(bitgen: np.random.PCG64, size: int) -> np.ndarray:
    return (bitgen.random_raw(size) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def _uniform_index(bitgen: np.random.PCG64, n: int, size: int) -> np.ndarray:
    return np.minimum((_uniform(bitgen, size) * n).astype(np.int64), n - 1)


def label_permutations(config: SynthConfig) -> np.ndarray:
    """``perm[l, latent] -> observed`` expert id for every layer.

    Identity when ``shuffle_seed`` is None.
    """
    E, L = config.num_experts, config.num_layers
    perms = np.tile(np.arange(E, dtype=np.int64), (L, 1))
    if config.shuffle_seed is None:
        return perms
    bitgen = np.random.PCG64(np.random.SeedSequence(config.shuffle_seed))
    for layer in range(L):
        p = perms[layer]
        u = _uniform(bitgen, max(E - 1, 0))
        for k, i in enumerate(range(E - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            p[i], p[j] = p[j], p[i]
    return perms


def generate_markov_trace(config: SynthConfig) -> RoutingTrace:
    E, L, T = config.num_experts, config.num_layers, config.num_tokens
    size = config.group_size
    alpha = config.affinity_strength
    bitgen = np.random.PCG64(np.random.SeedSequence(config.seed))

    latent = np.empty((T, L), dtype=np.int64)
    latent[:, 0] = _uniform_index(bitgen, E, T)
    for layer in range(1, L):
        stay = _uniform(bitgen, T) < alpha
        in_group = (latent[:, layer - 1] // size) * size + _uniform_index(bitgen, size, T)
        anywhere = _uniform_index(bitgen, E, T)
        latent[:, layer] = np.where(stay, in_group, anywhere)

    perms = label_permutations(config)
    observed = perms[np.arange(L)[None, :], latent]
    return RoutingTrace(E, L, observed)


def expected_planted_locality(config: SynthConfig) -> float:
    """Probability that one transition stays inside the current planted group."""
    a = config.affinity_strength
    return a + (1.0 - a) / config.planted_groups


def planted_groups_of(config: SynthConfig) -> np.ndarray:
    """``(L, E)`` planted group id of every observed expert id."""
    perms = label_permutations(config)
    groups = np.empty_like(perms)
    latent_group = np.arange(config.num_experts) // config.group_size
    for layer in range(config.num_layers):
        groups[layer, perms[layer]] = latent_group
    return groups


def planted_placement(config: SynthConfig, topology):
    """Contiguous placement in the generator's latent (pre-relabeling) expert order.

    Optimal whenever every GPU holds whole planted groups.
    """
    from .placement.core import Placement

    topology.check_divides(config.num_experts)
    cap = config.num_experts // topology.num_gpus
    perms = label_permutations(config)
    assign = np.empty_like(perms)
    latent_gpu = np.arange(config.num_experts) // cap
    for layer in range(config.num_layers):
        assign[layer, perms[layer]] = latent_gpu
    return Placement(config.num_experts, config.num_layers, topology.num_nodes, topology.gpus_per_node, assign)
