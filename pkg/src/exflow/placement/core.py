"""Topology, placements, the crossing objective and baseline placements."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, ShapeMismatchError
from ..trace_model import TransitionCounts

LEVELS = ("node", "gpu")

PLACEMENT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["experts", "layers", "nodes", "gpus_per_node", "assign"],
    "properties": {
        "experts": {"type": "integer", "minimum": 1},
        "layers": {"type": "integer", "minimum": 1},
        "nodes": {"type": "integer", "minimum": 1},
        "gpus_per_node": {"type": "integer", "minimum": 1},
        "assign": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
    },
}


@dataclass(frozen=True)
class Topology:
    num_nodes: int
    gpus_per_node: int
    intra_node_hop_cost: float = 1.0
    inter_node_hop_cost: float = 4.0

    def __post_init__(self):
        if self.num_nodes < 1 or self.gpus_per_node < 1:
            raise ConfigError("num_nodes and gpus_per_node must be positive")
        if not self.inter_node_hop_cost >= self.intra_node_hop_cost >= 0:
            raise ConfigError("hop costs must satisfy inter_node >= intra_node >= 0")

    @property
    def num_gpus(self) -> int:
        return self.num_nodes * self.gpus_per_node

    def node_of(self, gpu):
        return gpu // self.gpus_per_node

    def check_divides(self, num_experts: int) -> None:
        for parts, what in ((self.num_nodes, "nodes"), (self.num_gpus, "GPUs")):
            if num_experts % parts:
                raise ConfigError(f"{num_experts} experts do not divide evenly over {parts} {what}")


@dataclass(frozen=True, eq=False)
class Placement:
    """GPU id of every (layer, expert); balanced on every layer."""

    num_experts: int
    num_layers: int
    num_nodes: int
    gpus_per_node: int
    assign: np.ndarray

    def __post_init__(self):
        a = np.array(self.assign, dtype=np.int64)
        E, L, G = self.num_experts, self.num_layers, self.num_gpus
        if a.shape != (L, E):
            raise ShapeMismatchError(f"assign has shape {a.shape}, expected ({L}, {E})")
        if E % G:
            raise ConfigError(f"{E} experts do not divide evenly over {G} GPUs")
        if a.size and (a.min() < 0 or a.max() >= G):
            raise ConfigError(f"GPU ids must lie in [0, {G})")
        cap = E // G
        for layer in range(L):
            if not (np.bincount(a[layer], minlength=G) == cap).all():
                raise ConfigError(f"layer {layer} is unbalanced: every GPU must hold exactly {cap} experts")
        a.setflags(write=False)
        object.__setattr__(self, "assign", a)

    @property
    def num_gpus(self) -> int:
        return self.num_nodes * self.gpus_per_node

    @property
    def node_assign(self) -> np.ndarray:
        return self.assign // self.gpus_per_node

    def groups(self, level: str) -> np.ndarray:
        if level == "gpu":
            return self.assign
        if level == "node":
            return self.node_assign
        raise ConfigError(f"level must be one of {LEVELS}, got {level!r}")

    def matches(self, topology: Topology) -> bool:
        return (self.num_nodes, self.gpus_per_node) == (topology.num_nodes, topology.gpus_per_node)

    def to_dict(self) -> dict:
        return {
            "experts": self.num_experts,
            "layers": self.num_layers,
            "nodes": self.num_nodes,
            "gpus_per_node": self.gpus_per_node,
            "assign": self.assign.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Placement":
        try:
            return cls(d["experts"], d["layers"], d["nodes"], d["gpus_per_node"], d["assign"])
        except KeyError as exc:
            raise ShapeMismatchError(f"placement JSON missing key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Placement":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, Placement):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass
class SolveReport:
    objective: float
    solver: str
    seed: Optional[int] = None
    iterations: int = 0
    restarts: int = 0
    optimality_gap: Optional[float] = None
    stages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        return cls(**d)


def _check_counts(counts: TransitionCounts) -> None:
    if counts.gap != 1:
        raise ConfigError(f"placement needs consecutive-layer counts (gap 1), got gap {counts.gap}")


def crossings_for_groups(weights: np.ndarray, groups: np.ndarray) -> float:
    """Weighted crossings of a ``(L, E)`` group labeling under ``(L-1, E, E)`` weights."""
    same = groups[:-1, :, None] == groups[1:, None, :]
    return float(np.where(same, 0, weights).sum())


def objective_crossings(counts: TransitionCounts, placement: Placement, level: str = "gpu") -> float:
    _check_counts(counts)
    if (counts.num_experts, counts.num_layers) != (placement.num_experts, placement.num_layers):
        raise ShapeMismatchError(
            f"counts are E={counts.num_experts}, L={counts.num_layers}; "
            f"placement is E={placement.num_experts}, L={placement.num_layers}"
        )
    return crossings_for_groups(counts.matrices, placement.groups(level))


def contiguous_placement(num_experts: int, num_layers: int, topology: Topology) -> Placement:
    """Expert ``i`` on GPU ``i // (E/G)`` at every layer."""
    topology.check_divides(num_experts)
    cap = num_experts // topology.num_gpus
    row = np.arange(num_experts) // cap
    return Placement(num_experts, num_layers, topology.num_nodes, topology.gpus_per_node,
                     np.tile(row, (num_layers, 1)))


def random_placement(num_experts: int, num_layers: int, topology: Topology, seed: int) -> Placement:
    topology.check_divides(num_experts)
    rng = np.random.default_rng(seed)
    cap = num_experts // topology.num_gpus
    base = np.repeat(np.arange(topology.num_gpus), cap)
    assign = np.stack([rng.permutation(base) for _ in range(num_layers)])
    return Placement(num_experts, num_layers, topology.num_nodes, topology.gpus_per_node, assign)
