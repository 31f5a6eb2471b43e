"""Multi-step experiments: sample-size sufficiency and profile/holdout consistency."""

from __future__ import annotations

import logging
from typing import Dict, List, Sequence

import numpy as np

from .comm_sim import SimConfig, simulate
from .errors import ConfigError, ShapeMismatchError
from .placement import AnnealParams, Topology, contiguous_placement, solve_placement
from .trace_model import RoutingTrace, count_transitions

log = logging.getLogger(__name__)


def subsample_tokens(trace: RoutingTrace, size: int, seed: int, repeat: int) -> RoutingTrace:
    """``size`` tokens drawn uniformly without replacement, in original order."""
    if not 1 <= size <= trace.num_tokens:
        raise ConfigError(f"sample size {size} outside [1, {trace.num_tokens}] tokens")
    rng = np.random.default_rng([seed, size, repeat])
    idx = np.sort(rng.choice(trace.num_tokens, size=size, replace=False))
    return trace.subset(idx)


def _coherent_report(trace, placement, topology):
    return simulate(trace, placement, SimConfig("coherent", topology))


def sample_size_sweep(trace: RoutingTrace, sizes: Sequence[int], repeats: int, seed: int,
                      topology: Topology, solver: str = "staged",
                      params: AnnealParams = AnnealParams()) -> Dict:
    """Solve placements from token subsamples and score each on the full trace.

    The solver seed is ``params.seed`` for every solve, so a sample holding
    every token reproduces the full-trace placement exactly.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    for size in sizes:
        if not 1 <= size <= trace.num_tokens:
            raise ConfigError(f"sample size {size} > {trace.num_tokens} tokens in trace")

    full_pl, full_rep = solve_placement(count_transitions(trace), topology, solver, params)
    full = _coherent_report(trace, full_pl, topology)
    base = _coherent_report(trace, contiguous_placement(trace.num_experts, trace.num_layers, topology), topology)

    rows: List[dict] = []
    for size in sizes:
        samples = []
        for r in range(repeats):
            sub = subsample_tokens(trace, size, seed, r)
            pl, _ = solve_placement(count_transitions(sub), topology, solver, params)
            rep = _coherent_report(trace, pl, topology)
            speedup = base.estimated_latency / rep.estimated_latency if rep.estimated_latency else float("inf")
            samples.append((rep.locality_gpu, rep.locality_node, speedup))
            log.info("size %d repeat %d: locality_gpu %.4f", size, r, rep.locality_gpu)
        arr = np.array(samples)
        rows.append({
            "sample_size": int(size),
            "repeats": repeats,
            "locality_gpu_mean": float(arr[:, 0].mean()),
            "locality_gpu_std": float(arr[:, 0].std()),
            "locality_node_mean": float(arr[:, 1].mean()),
            "locality_node_std": float(arr[:, 1].std()),
            "latency_speedup_mean": float(arr[:, 2].mean()),
            "latency_speedup_std": float(arr[:, 2].std()),
            "locality_gpu_samples": arr[:, 0].tolist(),
        })
    return {
        "full": {"locality_gpu": full.locality_gpu, "locality_node": full.locality_node,
                 "objective": full_rep.objective,
                 "latency_speedup": base.estimated_latency / full.estimated_latency if full.estimated_latency else float("inf")},
        "rows": rows,
    }


SWEEP_COLUMNS = ("sample_size", "repeats", "locality_gpu_mean", "locality_gpu_std", "locality_node_mean",
                 "locality_node_std", "latency_speedup_mean", "latency_speedup_std",
                 "full_locality_gpu", "full_locality_node")


def sweep_csv(result: Dict) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for row in result["rows"]:
        vals = dict(row, full_locality_gpu=result["full"]["locality_gpu"],
                    full_locality_node=result["full"]["locality_node"])
        lines.append(",".join(str(vals[c]) if isinstance(vals[c], int) else f"{vals[c]:.6f}" for c in SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"


def holdout_consistency(profile: RoutingTrace, evaluation: RoutingTrace, topology: Topology,
                        solver: str = "staged", params: AnnealParams = AnnealParams()) -> Dict:
    """Solve on ``profile``; compare locality on ``evaluation`` against ``profile``."""
    if (profile.num_experts, profile.num_layers) != (evaluation.num_experts, evaluation.num_layers):
        raise ShapeMismatchError(
            f"profile trace is E={profile.num_experts}, L={profile.num_layers}; "
            f"eval trace is E={evaluation.num_experts}, L={evaluation.num_layers}"
        )
    placement, report = solve_placement(count_transitions(profile), topology, solver, params)
    prof = _coherent_report(profile, placement, topology)
    ev = _coherent_report(evaluation, placement, topology)
    return {
        "profile": {"locality_gpu": prof.locality_gpu, "locality_node": prof.locality_node},
        "eval": {"locality_gpu": ev.locality_gpu, "locality_node": ev.locality_node},
        "ratio": {
            "intra_gpu": ev.locality_gpu / prof.locality_gpu if prof.locality_gpu else None,
            "intra_node": ev.locality_node / prof.locality_node if prof.locality_node else None,
        },
        "solve_report": report.to_dict(),
        "placement": placement.to_dict(),
    }
