"""Replay routing traces under vanilla and context-coherent expert parallelism.

Vanilla: before every MoE layer a token is dispatched from its home GPU to the
expert's GPU and brought back afterwards for attention (two Alltoalls per
layer). Context-coherent: every GPU holds all contexts, so the token stays
where its last expert ran and only moves when the next expert lives on a
different GPU (one Alltoall per layer plus one AllGather per iteration).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .placement.core import Placement, Topology
from .trace_model import RoutingTrace

MODES = ("vanilla", "coherent")
TIERS = ("intra_gpu", "intra_node", "inter_node")
METHODS = ("deepspeed", "fastermoe", "tamoe", "exflow")
GATINGS = ("top1", "top2")


@dataclass(frozen=True)
class SimConfig:
    mode: str
    topology: Topology
    tokens_per_gpu: int = 1
    iterations: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.tokens_per_gpu < 1:
            raise ConfigError("tokens_per_gpu must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@dataclass(frozen=True)
class HopRecord:
    layer: int
    src_gpu: int
    dst_gpu: int
    crossed: bool
    tier: str
    hops: int


@dataclass(frozen=True)
class SimReport:
    """Aggregate replay statistics.

    Hop counts and ``estimated_latency`` are totals over all iterations;
    collective counts are per iteration. ``locality_gpu``/``locality_node``
    are measured over layer-to-layer transitions (is the next expert on the
    GPU/node where the previous expert ran); the dispatch from the home GPU
    into layer 0 is reported separately as ``first_layer_locality_gpu``.
    """

    mode: str
    num_tokens: int
    num_layers: int
    num_gpus: int
    hops_intra_node: int
    hops_inter_node: int
    crossings: int
    locality_gpu: float
    locality_node: float
    first_layer_locality_gpu: float
    p: float
    p_star: float
    alltoall_count: int
    allgather_count: int
    session_allgather_count: int
    volume_units: float
    estimated_latency: float
    iterations: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimReport":
        return cls(**d)


def _tier(src: int, dst: int, gpus_per_node: int) -> str:
    if src == dst:
        return "intra_gpu"
    if src // gpus_per_node == dst // gpus_per_node:
        return "intra_node"
    return "inter_node"


def _check_shapes(placement: Placement, topology: Topology, num_layers: int, num_experts: int) -> None:
    if not placement.matches(topology):
        raise ShapeMismatchError(
            f"placement is for {placement.num_nodes}x{placement.gpus_per_node} GPUs, "
            f"topology is {topology.num_nodes}x{topology.gpus_per_node}"
        )
    if (placement.num_layers, placement.num_experts) != (num_layers, num_experts):
        raise ShapeMismatchError(
            f"trace has L={num_layers}, E={num_experts}; placement has "
            f"L={placement.num_layers}, E={placement.num_experts}"
        )


def token_hops(path: Sequence[int], home_gpu: int, placement: Placement, mode: str,
               topology: Topology) -> List[HopRecord]:
    """Per-layer movement of one token. ``hops`` is 2 for a vanilla round trip."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    path = list(path)
    _check_shapes(placement, topology, len(path), placement.num_experts)
    if not 0 <= home_gpu < topology.num_gpus:
        raise ConfigError(f"home GPU {home_gpu} out of range [0, {topology.num_gpus})")
    gpn = topology.gpus_per_node
    records = []
    current = home_gpu
    for layer, expert in enumerate(path):
        dst = int(placement.assign[layer, expert])
        src = home_gpu if mode == "vanilla" else current
        crossed = dst != src
        hops = (2 if mode == "vanilla" else 1) if crossed else 0
        records.append(HopRecord(layer, src, dst, crossed, _tier(src, dst, gpn), hops))
        current = dst
    return records


def volume_table1(G: int, N: int, L: int, ratio: float, gating: str = "top1", method: str = "deepspeed") -> float:
    """Forward communication volume per iteration for one method.

    ``ratio`` is p (deepspeed), p_topo (fastermoe, tamoe) or p* (exflow).
    """
    if min(G, N, L) <= 0:
        raise ConfigError("G, N and L must be positive")
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"ratio must be in [0, 1], got {ratio}")
    if gating not in GATINGS:
        raise ConfigError(f"gating must be one of {GATINGS}, got {gating!r}")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    k = 1 if gating == "top1" else 2
    if method == "exflow":
        return G * N * (k * L * ratio + G)
    return 2 * k * G * N * L * ratio


def collective_counts(mode: str, num_layers: int) -> Dict[str, int]:
    if mode == "vanilla":
        return {"alltoall": 2 * num_layers, "allgather": 0, "session_allgather": 0}
    if mode == "coherent":
        return {"alltoall": num_layers, "allgather": 1, "session_allgather": 1}
    raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


def round_robin_homes(num_tokens: int, num_gpus: int) -> np.ndarray:
    return np.arange(num_tokens, dtype=np.int64) % num_gpus


def simulate(trace: RoutingTrace, placement: Placement, config: SimConfig,
             homes: Optional[Sequence[int]] = None) -> SimReport:
    """Replay every token; homes default to round-robin by token index."""
    topo = config.topology
    _check_shapes(placement, topo, trace.num_layers, trace.num_experts)
    T, L, G = trace.num_tokens, trace.num_layers, topo.num_gpus
    if homes is None:
        homes = round_robin_homes(T, G)
    else:
        homes = np.asarray(homes, dtype=np.int64)
        if homes.shape != (T,):
            raise ShapeMismatchError(f"expected {T} home GPUs, got {homes.shape}")
        if homes.size and (homes.min() < 0 or homes.max() >= G):
            raise ConfigError(f"home GPUs must lie in [0, {G})")

    gpn = topo.gpus_per_node
    gpus = placement.assign[np.arange(L)[None, :], trace.paths]  # (T, L) expert GPU per event
    nodes = gpus // gpn
    home_nodes = homes // gpn

    if config.mode == "vanilla":
        src, src_nodes = np.broadcast_to(homes[:, None], gpus.shape), np.broadcast_to(home_nodes[:, None], gpus.shape)
        per_cross = 2
    else:
        src = np.concatenate([homes[:, None], gpus[:, :-1]], axis=1)
        src_nodes = src // gpn
        per_cross = 1
    crossed = gpus != src
    inter = crossed & (nodes != src_nodes)
    intra = crossed & ~inter

    it = config.iterations
    hops_inter = int(inter.sum()) * per_cross * it
    hops_intra = int(intra.sum()) * per_cross * it

    same_gpu = gpus[:, 1:] == gpus[:, :-1]
    same_node = nodes[:, 1:] == nodes[:, :-1]
    p = float((gpus != homes[:, None]).mean())
    p_star = float((gpus != np.concatenate([homes[:, None], gpus[:, :-1]], axis=1)).mean())

    counts = collective_counts(config.mode, L)
    if config.mode == "vanilla":
        volume = volume_table1(G, config.tokens_per_gpu, L, p, "top1", "deepspeed")
    else:
        volume = volume_table1(G, config.tokens_per_gpu, L, p_star, "top1", "exflow")

    return SimReport(
        mode=config.mode,
        num_tokens=T,
        num_layers=L,
        num_gpus=G,
        hops_intra_node=hops_intra,
        hops_inter_node=hops_inter,
        crossings=hops_intra + hops_inter,
        locality_gpu=float(same_gpu.mean()),
        locality_node=float(same_node.mean()),
        first_layer_locality_gpu=float((gpus[:, 0] == homes).mean()),
        p=p,
        p_star=p_star,
        alltoall_count=counts["alltoall"],
        allgather_count=counts["allgather"],
        session_allgather_count=counts["session_allgather"],
        volume_units=float(volume),
        estimated_latency=float(hops_intra * topo.intra_node_hop_cost + hops_inter * topo.inter_node_hop_cost),
        iterations=it,
    )


_RATIO_FIELDS = ("crossings", "hops_intra_node", "hops_inter_node", "locality_gpu", "locality_node",
                 "volume_units", "estimated_latency")


def _ratio(value: float, base: float) -> Optional[float]:
    if value == base:
        return 1.0
    if base == 0:
        return None
    return value / base


@dataclass
class Comparison:
    baseline: str
    rows: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"baseline": self.baseline, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        header = ["placement", "mode", "crossings", "intra_node", "inter_node", "loc_gpu", "loc_node",
                  "p", "p_star", "alltoall", "allgather", "latency", "latency_ratio"]
        table = [header]
        for r in self.rows:
            rep = r["report"]
            lr = r["ratios"]["estimated_latency"]
            table.append([
                r["placement"], r["mode"], str(rep["crossings"]), str(rep["hops_intra_node"]),
                str(rep["hops_inter_node"]), f"{rep['locality_gpu']:.4f}", f"{rep['locality_node']:.4f}",
                f"{rep['p']:.4f}", f"{rep['p_star']:.4f}", str(rep["alltoall_count"]),
                str(rep["allgather_count"]), f"{rep['estimated_latency']:g}",
                "n/a" if lr is None else f"{lr:.4f}",
            ])
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in table) + "\n"


def compare_modes(trace: RoutingTrace, placements: Mapping[str, Placement], config: SimConfig,
                  homes: Optional[Sequence[int]] = None) -> Comparison:
    """Simulate every placement in both modes, with ratios against a baseline.

    The baseline is the ``contiguous`` placement in vanilla mode when present,
    otherwise the first placement by name.
    """
    if not placements:
        raise ConfigError("compare_modes needs at least one placement")
    names = sorted(placements)
    baseline = "contiguous" if "contiguous" in placements else names[0]
    reports = {}
    for name in names:
        for mode in MODES:
            cfg = SimConfig(mode, config.topology, config.tokens_per_gpu, config.iterations)
            reports[name, mode] = simulate(trace, placements[name], cfg, homes)
    base = reports[baseline, "vanilla"]
    out = Comparison(baseline)
    for name in names:
        for mode in MODES:
            rep = reports[name, mode]
            ratios = {f: _ratio(getattr(rep, f), getattr(base, f)) for f in _RATIO_FIELDS}
            out.rows.append({"placement": name, "mode": mode, "report": rep.to_dict(), "ratios": ratios})
    return out
