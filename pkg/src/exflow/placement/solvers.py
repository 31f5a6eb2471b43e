"""Public solvers returning balanced :class:`Placement` objects."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from ..errors import ConfigError, StateCapExceeded
from ..trace_model import TransitionCounts
from .anneal import AnnealParams, anneal_partition
from .core import Placement, SolveReport, Topology, _check_counts, objective_crossings
from .exact import DEFAULT_STATE_CAP, exact_partition, num_balanced_assignments

log = logging.getLogger(__name__)


def _flat_topology(num_parts: int, topology: Optional[Topology]) -> Topology:
    if topology is None:
        return Topology(1, num_parts)
    if topology.num_gpus != num_parts:
        raise ConfigError(f"num_parts={num_parts} does not match topology with {topology.num_gpus} GPUs")
    return topology


def _as_placement(labels: np.ndarray, topo: Topology) -> Placement:
    L, E = labels.shape
    return Placement(E, L, topo.num_nodes, topo.gpus_per_node, labels)


def solve_exact_dp(counts: TransitionCounts, num_parts: int, *, topology: Optional[Topology] = None,
                   state_cap: int = DEFAULT_STATE_CAP):
    """Optimal GPU-level placement over ``num_parts`` GPUs.

    ``topology`` only decides how GPU ids are grouped into nodes in the
    returned placement; by default everything sits on one node.
    """
    _check_counts(counts)
    topo = _flat_topology(num_parts, topology)
    labels, cost = exact_partition(counts.matrices, num_parts, state_cap)
    placement = _as_placement(labels, topo)
    return placement, SolveReport(objective=cost, solver="exact-dp", optimality_gap=0.0)


def solve_local_search(counts: TransitionCounts, num_parts: int, params: AnnealParams = AnnealParams(), *,
                       topology: Optional[Topology] = None, reference_objective: Optional[float] = None):
    _check_counts(counts)
    topo = _flat_topology(num_parts, topology)
    labels, cost, info = anneal_partition(counts.matrices, num_parts, params)
    placement = _as_placement(labels, topo)
    gap = None
    if reference_objective is not None:
        gap = relative_gap(cost, reference_objective)
    return placement, SolveReport(objective=cost, solver="local-search", seed=params.seed,
                                  iterations=info["iterations"], restarts=info["restarts"], optimality_gap=gap)


def relative_gap(value: float, optimum: float) -> float:
    if optimum == 0:
        return 0.0 if value == 0 else float("inf")
    return (value - optimum) / optimum


def _partition(weights: np.ndarray, num_parts: int, params: AnnealParams, state_cap: int):
    """Exact DP under the state cap, annealing otherwise."""
    E = weights.shape[1]
    if num_balanced_assignments(E, num_parts) <= state_cap:
        labels, cost = exact_partition(weights, num_parts, state_cap)
        return labels, cost, {"method": "exact-dp", "iterations": 0}
    labels, cost, info = anneal_partition(weights, num_parts, params)
    return labels, cost, {"method": "local-search", "iterations": info["iterations"]}


def solve_staged(counts: TransitionCounts, topology: Topology, params: AnnealParams = AnnealParams(), *,
                 state_cap: int = DEFAULT_STATE_CAP):
    """Two-stage placement: experts to nodes first, then each node's experts to its GPUs.

    Stage 2 only sees transitions whose endpoints both landed on that node;
    pairs split across nodes are already counted by stage 1.
    """
    _check_counts(counts)
    E, L = counts.num_experts, counts.num_layers
    topology.check_divides(E)
    n, g = topology.num_nodes, topology.gpus_per_node
    w = counts.matrices.astype(np.float64)

    if n == 1:
        node_labels = np.zeros((L, E), dtype=np.int64)
        stage1 = {"method": "identity", "iterations": 0}
        node_cost = 0.0
    else:
        node_labels, node_cost, stage1 = _partition(w, n, params, state_cap)
    stage1["objective"] = node_cost
    log.info("stage 1 (%s): inter-node crossings %g", stage1["method"], node_cost)

    assign = np.empty((L, E), dtype=np.int64)
    per_node = E // n
    stage2 = []
    for node in range(n):
        # local expert k of layer j is members[j][k] (sorted by expert id)
        members = np.stack([np.flatnonzero(node_labels[j] == node) for j in range(L)])
        assert members.shape == (L, per_node)
        sub = np.stack([w[j][np.ix_(members[j], members[j + 1])] for j in range(L - 1)])
        if g == 1:
            local = np.zeros((L, per_node), dtype=np.int64)
            cost, info = 0.0, {"method": "identity", "iterations": 0}
        else:
            node_params = AnnealParams(params.restarts, params.max_iters, params.initial_temperature,
                                       params.cooling, params.seed + node + 1)
            local, cost, info = _partition(sub, g, node_params, state_cap)
        for j in range(L):
            assign[j, members[j]] = node * g + local[j]
        info["objective"] = cost
        info["node"] = node
        stage2.append(info)
        log.info("stage 2 node %d (%s): intra-node crossings %g", node, info["method"], cost)

    placement = Placement(E, L, n, g, assign)
    objective = objective_crossings(counts, placement, "gpu")
    intra = sum(s["objective"] for s in stage2)
    # gpu-level crossings split exactly into inter-node + intra-node cross-GPU
    assert objective == node_cost + intra, (objective, node_cost, intra)
    report = SolveReport(
        objective=objective,
        solver="staged",
        seed=params.seed,
        iterations=stage1["iterations"] + sum(s["iterations"] for s in stage2),
        restarts=params.restarts,
        stages={
            "inter_node_crossings": node_cost,
            "intra_node_crossings": intra,
            "weighted_cost": node_cost * topology.inter_node_hop_cost + intra * topology.intra_node_hop_cost,
            "stage1": stage1,
            "stage2": stage2,
        },
    )
    return placement, report


def exact_reference(counts: TransitionCounts, num_parts: int, state_cap: int = DEFAULT_STATE_CAP):
    """Exact optimum if it is within the state cap, else None."""
    try:
        return exact_partition(counts.matrices, num_parts, state_cap)[1]
    except StateCapExceeded:
        return None


def weighted_cost(counts: TransitionCounts, placement: Placement, topology: Topology) -> float:
    inter = objective_crossings(counts, placement, "node")
    intra = objective_crossings(counts, placement, "gpu") - inter
    return inter * topology.inter_node_hop_cost + intra * topology.intra_node_hop_cost



SOLVERS = ("exact", "anneal", "staged")


def solve_placement(counts: TransitionCounts, topology: Topology, solver: str = "staged",
                    params: AnnealParams = AnnealParams(), *, state_cap: int = DEFAULT_STATE_CAP,
                    with_gap: bool = False):
    """Dispatch to one solver; ``exact`` and ``anneal`` partition directly over all GPUs.

    With ``with_gap``, heuristic reports carry ``optimality_gap`` against the
    exact optimum whenever that is within the state cap.
    """
    topology.check_divides(counts.num_experts)
    G = topology.num_gpus
    if solver == "exact":
        return solve_exact_dp(counts, G, topology=topology, state_cap=state_cap)
    if solver == "anneal":
        placement, report = solve_local_search(counts, G, params, topology=topology)
    elif solver == "staged":
        placement, report = solve_staged(counts, topology, params, state_cap=state_cap)
    else:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {solver!r}")
    optimum = exact_reference(counts, G, state_cap) if with_gap else None
    if optimum is not None:
        report.optimality_gap = relative_gap(report.objective, optimum)
    return placement, report
