"""Bundled example scenario: two tokens on a 3-layer MoE-8 over 4 GPUs."""

import json
from importlib import resources

TWO_TOKEN_HOMES = (1, 3)


def _read(name: str) -> str:
    return resources.files(__name__).joinpath(name).read_text(encoding="ascii")


def two_token_fixture():
    """``(trace, placement, homes, topology)`` for the two-token worked example."""
    from ..placement.core import Placement, Topology
    from ..trace_model import parse_trace

    trace = parse_trace(_read("two_token.trace"))
    placement = Placement.from_dict(json.loads(_read("two_token_placement.json")))
    return trace, placement, list(TWO_TOKEN_HOMES), Topology(1, 4)
