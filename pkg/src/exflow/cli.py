"""Command-line entry point: ``exflow {gen|affinity|solve|simulate|sweep|holdout}``.

Every command writes its artifacts to the paths given by ``--out`` or
``--out-dir`` plus a ``*.manifest.json`` sidecar recording the resolved
parameters. Logs go to stderr. Exit status is 0 on success, 1 for data or
runtime errors and 2 for usage or validation errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .comm_sim import MODES, SimConfig, compare_modes, simulate
from .errors import ConfigError, ExflowError
from .fixtures import two_token_fixture
from .placement import (
    SOLVERS,
    AnnealParams,
    Placement,
    Topology,
    contiguous_placement,
    random_placement,
    solve_placement,
)
from .synth import SynthConfig, generate_markov_trace
from .trace_model import (
    conditional_probabilities,
    count_transitions,
    export_heatmap_csv,
    read_trace,
    row_entropy_bits,
    write_trace,
)
from .workflows import holdout_consistency, sample_size_sweep, sweep_csv

log = logging.getLogger("exflow")


@dataclass
class RunManifest:
    command: str
    params: Dict
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    version: str = __version__
    duration_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}


def _topology(args) -> Topology:
    return Topology(args.nodes, args.gpus_per_node, args.intra_cost, args.inter_cost)


def _anneal_params(args) -> AnnealParams:
    return AnnealParams(args.restarts, args.max_iters, args.initial_temperature, args.cooling, args.seed)


def _parse_int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- commands -------------------------------------------------------------


def cmd_gen(args) -> dict:
    cfg = SynthConfig(args.experts, args.layers, args.tokens, args.alpha, args.groups, args.seed,
                      args.shuffle_seed)
    trace = generate_markov_trace(cfg)
    write_trace(trace, args.out)
    log.info("wrote %d tokens to %s", trace.num_tokens, args.out)
    return {"outputs": [str(args.out)]}


def cmd_affinity(args) -> dict:
    trace = read_trace(args.trace)
    counts = count_transitions(trace, args.gap)
    aff = conditional_probabilities(counts)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entropy = row_entropy_bits(aff)
    outputs, layers = [], []
    for j in range(counts.num_pairs):
        path = out_dir / f"affinity_gap{args.gap}_layer{j:02d}.csv"
        path.write_text(export_heatmap_csv(aff, j), encoding="ascii")
        outputs.append(str(path))
        layers.append({
            "source_layer": j,
            "dest_layer": j + args.gap,
            "row_max": [round(float(v), 12) for v in aff.matrices[j].max(axis=1)],
            "row_entropy_bits": [round(float(v), 12) for v in entropy[j]],
            "seen": aff.seen[j].tolist(),
        })
    summary = out_dir / "summary.json"
    _dump_json({"gap": args.gap, "experts": trace.num_experts, "layers": trace.num_layers,
                "tokens": trace.num_tokens, "pairs": layers, "manifest": "manifest.json"}, summary)
    outputs.append(str(summary))
    return {"inputs": [str(args.trace)], "outputs": outputs}


def cmd_solve(args) -> dict:
    trace = read_trace(args.trace)
    topo = _topology(args)
    placement, report = solve_placement(count_transitions(trace), topo, args.solver, _anneal_params(args),
                                        state_cap=args.state_cap, with_gap=True)
    _dump_json(placement.to_dict(), args.out)
    report_path = args.report or f"{args.out}.report.json"
    _dump_json({"solve_report": report.to_dict(), "placement": str(args.out),
                "manifest": _manifest_path(Path(args.out)).name}, report_path)
    log.info("%s objective %g", report.solver, report.objective)
    return {"inputs": [str(args.trace)], "outputs": [str(args.out), str(report_path)]}


def _load_placements(specs: List[str], trace, topo: Topology, seed: int) -> Dict[str, Placement]:
    placements = {}
    for spec in specs:
        name, _, path = spec.partition("=")
        if not path:
            path = name
            name = "contiguous" if path == "contiguous" else "random" if path == "random" else Path(path).stem
        if path == "contiguous":
            placements[name] = contiguous_placement(trace.num_experts, trace.num_layers, topo)
        elif path == "random":
            placements[name] = random_placement(trace.num_experts, trace.num_layers, topo, seed)
        else:
            with open(path, encoding="utf-8") as fh:
                placements[name] = Placement.from_dict(json.load(fh))
    return placements


def cmd_simulate(args) -> dict:
    homes = None
    if args.fixture == "two-token":
        trace, fixture_pl, homes, topo = two_token_fixture()
        placements = {"contiguous": fixture_pl}
        inputs = ["fixture:two-token"]
    else:
        if not args.trace:
            raise ConfigError("simulate needs --trace (or --fixture)")
        trace = read_trace(args.trace)
        topo = _topology(args)
        placements = _load_placements(args.placement or ["contiguous"], trace, topo, args.seed)
        inputs = [str(args.trace)] + [p.partition("=")[2] or p for p in (args.placement or [])]
    if args.homes is not None:
        homes = args.homes

    if args.mode == "both":
        comparison = compare_modes(trace, placements, SimConfig("vanilla", topo, args.tokens_per_gpu,
                                                                args.iterations), homes)
        payload = comparison.to_dict()
        sys.stdout.write(comparison.to_text())
    else:
        cfg = SimConfig(args.mode, topo, args.tokens_per_gpu, args.iterations)
        payload = {"reports": {name: simulate(trace, placements[name], cfg, homes).to_dict()
                               for name in sorted(placements)}}
    payload["manifest"] = _manifest_path(Path(args.out)).name
    _dump_json(payload, args.out)
    return {"inputs": inputs, "outputs": [str(args.out)]}


def cmd_sweep(args) -> dict:
    trace = read_trace(args.trace)
    result = sample_size_sweep(trace, args.sizes, args.repeats, args.seed, _topology(args), args.solver,
                               _anneal_params(args))
    Path(args.out).write_text(sweep_csv(result), encoding="ascii")
    return {"inputs": [str(args.trace)], "outputs": [str(args.out)]}


def cmd_holdout(args) -> dict:
    profile = read_trace(args.profile_trace)
    evaluation = read_trace(args.eval_trace)
    result = holdout_consistency(profile, evaluation, _topology(args), args.solver, _anneal_params(args))
    result["manifest"] = _manifest_path(Path(args.out)).name
    _dump_json(result, args.out)
    r = result["ratio"]
    log.info("eval/profile locality: intra-GPU %.3f, intra-node %.3f", r["intra_gpu"] or 0, r["intra_node"] or 0)
    return {"inputs": [str(args.profile_trace), str(args.eval_trace)], "outputs": [str(args.out)]}


# -- parser ---------------------------------------------------------------


def _add_topology(p, nodes=1, gpus=4):
    g = p.add_argument_group("topology")
    g.add_argument("--nodes", type=int, default=nodes)
    g.add_argument("--gpus-per-node", type=int, default=gpus)
    g.add_argument("--intra-cost", type=float, default=1.0, help="cost per intra-node hop")
    g.add_argument("--inter-cost", type=float, default=4.0, help="cost per inter-node hop")


def _add_solver(p, default="staged"):
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=SOLVERS, default=default)
    g.add_argument("--restarts", type=int, default=8)
    g.add_argument("--max-iters", type=int, default=None, help="per restart (default 20000*L)")
    g.add_argument("--initial-temperature", type=float, default=None, help="default: mean positive weight")
    g.add_argument("--cooling", type=float, default=0.999)
    g.add_argument("--state-cap", type=int, default=10_000, help="max DP states per layer for exact solves")
    g.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"exflow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic routing trace")
    p.add_argument("--experts", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--tokens", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True, help="affinity strength in [0, 1]")
    p.add_argument("--groups", type=int, required=True, help="planted groups (must divide experts)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=None,
                   help="relabel experts per layer with this seed (same value = same model)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("affinity", help="per-layer affinity heatmaps (CSV) and a JSON summary")
    p.add_argument("--trace", required=True)
    p.add_argument("--gap", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_affinity)

    p = sub.add_parser("solve", help="solve the expert placement")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="placement JSON")
    p.add_argument("--report", default=None, help="solve report JSON (default <out>.report.json)")
    _add_topology(p)
    _add_solver(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="replay a trace under one or more placements")
    p.add_argument("--trace")
    p.add_argument("--fixture", choices=["two-token"], default=None,
                   help="use the bundled two-token example (trace, placement and homes)")
    p.add_argument("--placement", action="append",
                   help="NAME=PATH, PATH, 'contiguous' or 'random'; repeatable")
    p.add_argument("--mode", choices=("both",) + MODES, default="both")
    p.add_argument("--tokens-per-gpu", type=int, default=1)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--homes", type=_parse_int_list, default=None,
                   help="explicit home GPU per token (default round-robin)")
    p.add_argument("--seed", type=int, default=0, help="seed for the 'random' placement")
    p.add_argument("--out", required=True)
    _add_topology(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="placement quality vs. number of profiled tokens")
    p.add_argument("--trace", required=True)
    p.add_argument("--sizes", type=_parse_int_list, required=True, help="e.g. 100,1000,3000")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True, help="CSV")
    _add_topology(p)
    _add_solver(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("holdout", help="profile on one trace, evaluate on another")
    p.add_argument("--profile-trace", required=True)
    p.add_argument("--eval-trace", required=True)
    p.add_argument("--out", required=True)
    _add_topology(p)
    _add_solver(p)
    p.set_defaults(func=cmd_holdout)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        io = args.func(args)
    except ConfigError as exc:
        print(f"exflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ExflowError, OSError) as exc:
        print(f"exflow {args.command}: error: {exc}", file=sys.stderr)
        return 1
    manifest = RunManifest(args.command, _params(args), io.get("inputs", []), io.get("outputs", []),
                           duration_s=round(time.perf_counter() - start, 6))
    target = Path(args.out_dir) if getattr(args, "out_dir", None) else Path(args.out)
    _dump_json(manifest.to_dict(), _manifest_path(target))
    return 0


if __name__ == "__main__":
    sys.exit(main())
