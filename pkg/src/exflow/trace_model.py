"""Routing traces, transition counts and inter-layer affinity matrices.

A routing trace records, for every profiled token, the expert it was sent to
at each MoE layer. Counting how often a token moves from expert ``a`` at
layer ``j`` to expert ``b`` at layer ``j + gap`` gives the empirical
conditional probability ``P(b at j+gap | a at j)`` used to place experts.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import ConfigError, TraceFormatError

TRACE_MAGIC = "EXFLOW-TRACE v1"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RoutingTrace:
    """Expert ids chosen for ``T`` tokens over ``L`` MoE layers.

    ``paths`` is a read-only ``(T, L)`` int64 array.
    """

    num_experts: int
    num_layers: int
    paths: np.ndarray

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=np.int64)
        if self.num_experts < 1:
            raise ConfigError(f"num_experts must be >= 1, got {self.num_experts}")
        if self.num_layers < 2:
            raise ConfigError(f"num_layers must be >= 2, got {self.num_layers}")
        if paths.ndim != 2 or paths.shape[0] < 1:
            raise ConfigError("trace needs at least one token path")
        if paths.shape[1] != self.num_layers:
            raise ConfigError(f"path length {paths.shape[1]} ≠ L={self.num_layers}")
        if paths.min() < 0 or paths.max() >= self.num_experts:
            raise ConfigError(f"expert ids must lie in [0,{self.num_experts})")
        object.__setattr__(self, "paths", _frozen(paths))

    @property
    def num_tokens(self) -> int:
        return self.paths.shape[0]

    def subset(self, token_indices) -> "RoutingTrace":
        return RoutingTrace(self.num_experts, self.num_layers, self.paths[np.asarray(token_indices)])

    def __eq__(self, other):
        if not isinstance(other, RoutingTrace):
            return NotImplemented
        return (
            self.num_experts == other.num_experts
            and self.num_layers == other.num_layers
            and np.array_equal(self.paths, other.paths)
        )

    def __hash__(self):
        return hash((self.num_experts, self.num_layers, self.paths.tobytes()))


@dataclass(frozen=True, eq=False)
class TransitionCounts:
    """Per-layer-pair transition counts ``c[j, a, b]`` for a fixed layer gap.

    ``matrices`` has shape ``(L - gap, E, E)``; ``row_totals[j, a]`` is the
    number of tokens at expert ``a`` in layer ``j``.
    """

    gap: int
    matrices: np.ndarray
    row_totals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrices", _frozen(np.asarray(self.matrices, dtype=np.int64)))
        object.__setattr__(self, "row_totals", _frozen(np.asarray(self.row_totals, dtype=np.int64)))

    @classmethod
    def from_matrices(cls, matrices, gap: int = 1) -> "TransitionCounts":
        """Build counts directly from weight matrices (e.g. hand-written test instances)."""
        m = np.asarray(matrices, dtype=np.int64)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ConfigError(f"expected (pairs, E, E) matrices, got shape {m.shape}")
        if (m < 0).any():
            raise ConfigError("transition counts must be non-negative")
        return cls(gap, m, m.sum(axis=2))

    @property
    def num_experts(self) -> int:
        return self.matrices.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.matrices.shape[0]

    @property
    def num_layers(self) -> int:
        return self.num_pairs + self.gap

    def __eq__(self, other):
        if not isinstance(other, TransitionCounts):
            return NotImplemented
        return self.gap == other.gap and np.array_equal(self.matrices, other.matrices)


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """Row-stochastic conditional probabilities; unseen rows are all zero."""

    gap: int
    matrices: np.ndarray
    seen: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrices", _frozen(np.asarray(self.matrices, dtype=np.float64)))
        object.__setattr__(self, "seen", _frozen(np.asarray(self.seen, dtype=bool)))

    @property
    def num_experts(self) -> int:
        return self.matrices.shape[1]


TextInput = Union[str, Iterable[str], io.TextIOBase]


def parse_trace(text: TextInput) -> RoutingTrace:
    """Parse EXFLOW-TRACE v1 text.

    Accepts a string, an open text file, or any iterable of lines. Errors
    carry the 1-based line number of the offending line.
    """
    lines = text.splitlines() if isinstance(text, str) else (ln.rstrip("\n") for ln in text)

    header = None
    num_experts = num_layers = None
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if header is None:
            if line != TRACE_MAGIC:
                raise TraceFormatError(f"missing or bad header {line!r} at line {lineno}; expected {TRACE_MAGIC!r}")
            header = line
            continue
        if not line or line.startswith("#"):
            continue
        if num_experts is None:
            fields = line.split()
            if len(fields) != 4 or fields[0] != "E" or fields[2] != "L":
                raise TraceFormatError(f"bad dimension line {line!r} at line {lineno}; expected 'E <experts> L <layers>'")
            try:
                num_experts, num_layers = int(fields[1]), int(fields[3])
            except ValueError:
                raise TraceFormatError(f"non-integer dimension at line {lineno}") from None
            if num_experts <= 0 or num_layers <= 0:
                raise TraceFormatError(f"E and L must be positive (E={num_experts}, L={num_layers}) at line {lineno}")
            if num_layers < 2:
                raise TraceFormatError(f"L={num_layers} < 2: affinity needs at least one layer pair, at line {lineno}")
            continue
        fields = line.split()
        if len(fields) != num_layers:
            raise TraceFormatError(f"path length {len(fields)} ≠ L={num_layers} at line {lineno}")
        try:
            ids = [int(f) for f in fields]
        except ValueError:
            raise TraceFormatError(f"non-integer token in {line!r} at line {lineno}") from None
        for e in ids:
            if not 0 <= e < num_experts:
                raise TraceFormatError(f"expert id {e} out of range [0,{num_experts}) at line {lineno}")
        rows.append(ids)

    if header is None:
        raise TraceFormatError("empty input: missing header")
    if num_experts is None:
        raise TraceFormatError("missing 'E <experts> L <layers>' line")
    if not rows:
        raise TraceFormatError("trace contains no token paths")
    return RoutingTrace(num_experts, num_layers, np.array(rows, dtype=np.int64))


def serialize_trace(trace: RoutingTrace) -> str:
    out = [TRACE_MAGIC, f"E {trace.num_experts} L {trace.num_layers}"]
    out.extend(" ".join(map(str, row)) for row in trace.paths.tolist())
    return "\n".join(out) + "\n"


def read_trace(path) -> RoutingTrace:
    with open(path, encoding="ascii") as fh:
        return parse_trace(fh)


def write_trace(trace: RoutingTrace, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(serialize_trace(trace))


def count_transitions(trace: RoutingTrace, gap: int = 1) -> TransitionCounts:
    L, E = trace.num_layers, trace.num_experts
    if not 1 <= gap <= L - 1:
        raise ConfigError(f"gap {gap} out of range [1, {L - 1}] for L={L}")
    src = trace.paths[:, : L - gap]
    dst = trace.paths[:, gap:]
    # flat index: pair j, source a, destination b
    flat = (np.arange(L - gap) * E * E)[None, :] + src * E + dst
    mats = np.bincount(flat.ravel(), minlength=(L - gap) * E * E).reshape(L - gap, E, E)
    return TransitionCounts(gap, mats, mats.sum(axis=2))


def conditional_probabilities(counts: TransitionCounts) -> AffinityMatrix:
    totals = counts.row_totals
    seen = totals > 0
    probs = np.zeros(counts.matrices.shape, dtype=np.float64)
    np.divide(counts.matrices, totals[:, :, None], out=probs, where=seen[:, :, None])
    return AffinityMatrix(counts.gap, probs, seen)


def most_affiliated(aff: AffinityMatrix, layer: int, expert: int) -> int:
    """Destination expert with the highest affinity; ties go to the lowest index."""
    if not 0 <= layer < aff.matrices.shape[0]:
        raise ConfigError(f"layer {layer} out of range [0, {aff.matrices.shape[0]})")
    if not 0 <= expert < aff.num_experts:
        raise ConfigError(f"expert {expert} out of range [0, {aff.num_experts})")
    if not aff.seen[layer, expert]:
        raise ConfigError(f"no observations for expert {expert} at layer {layer}")
    return int(np.argmax(aff.matrices[layer, expert]))


def export_heatmap_csv(aff: AffinityMatrix, source_layer: int) -> str:
    n = aff.matrices.shape[0]
    if not 0 <= source_layer < n:
        raise ConfigError(f"source layer {source_layer} out of range [0, {n}) for gap {aff.gap}")
    rows = aff.matrices[source_layer]
    return "".join(",".join(f"{v:.6f}" for v in row) + "\n" for row in rows)


def row_entropy_bits(aff: AffinityMatrix) -> np.ndarray:
    p = aff.matrices
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=2)
