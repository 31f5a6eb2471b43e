"""The balanced expert-placement integer program and its LP-format export.

Variables:

* ``x_i_j_p`` = 1 when expert ``i`` of layer ``j`` is held by partition ``p``;
* ``R_a_b_j`` = 1 when tokens going from expert ``a`` (layer ``j``) to expert
  ``b`` (layer ``j+1``) cross partitions.

Tokens that share ``(a, b, j)`` are merged into a single ``R`` variable whose
objective coefficient is their count, so the model has at most ``E*E*(L-1)``
crossing variables regardless of the number of tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from ..errors import ConfigError
from ..trace_model import TransitionCounts
from .core import LEVELS, _check_counts


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: Tuple[Tuple[float, str], ...]
    sense: str  # "=", ">=" or "<="
    rhs: float


@dataclass
class IlpModel:
    num_experts: int
    num_layers: int
    num_parts: int
    level: str
    x_vars: List[str] = field(default_factory=list)
    r_vars: List[str] = field(default_factory=list)
    objective: Dict[str, float] = field(default_factory=dict)
    constraints: List[Constraint] = field(default_factory=list)

    @property
    def variables(self) -> List[str]:
        return self.x_vars + self.r_vars

    def constraints_of(self, kind: str) -> List[Constraint]:
        return [c for c in self.constraints if c.name.startswith(kind + "_")]


def x_name(expert: int, layer: int, part: int) -> str:
    return f"x_{expert}_{layer}_{part}"


def r_name(a: int, b: int, layer: int) -> str:
    return f"R_{a}_{b}_{layer}"


def build_ilp(counts: TransitionCounts, num_parts: int, level: str = "gpu") -> IlpModel:
    _check_counts(counts)
    if level not in LEVELS:
        raise ConfigError(f"level must be one of {LEVELS}, got {level!r}")
    E, L, P = counts.num_experts, counts.num_layers, num_parts
    if P < 1 or E % P:
        raise ConfigError(f"{E} experts cannot be split evenly into {P} partitions")
    cap = E // P
    model = IlpModel(E, L, P, level)

    for j in range(L):
        for i in range(E):
            for p in range(P):
                model.x_vars.append(x_name(i, j, p))

    for j in range(L):
        for p in range(P):
            terms = tuple((1.0, x_name(i, j, p)) for i in range(E))
            model.constraints.append(Constraint(f"balance_{j}_{p}", terms, "=", float(cap)))
    for j in range(L):
        for i in range(E):
            terms = tuple((1.0, x_name(i, j, p)) for p in range(P))
            model.constraints.append(Constraint(f"exclusive_{i}_{j}", terms, "=", 1.0))

    w = counts.matrices
    for j in range(L - 1):
        for a in range(E):
            for b in range(E):
                weight = int(w[j, a, b])
                if weight <= 0:
                    continue
                r = r_name(a, b, j)
                model.r_vars.append(r)
                model.objective[r] = float(weight)
                for p in range(P):
                    xa, xb = x_name(a, j, p), x_name(b, j + 1, p)
                    # R >= x_a - x_b  and  R >= x_b - x_a
                    model.constraints.append(
                        Constraint(f"cross1_{a}_{b}_{j}_{p}", ((1.0, r), (-1.0, xa), (1.0, xb)), ">=", 0.0))
                    model.constraints.append(
                        Constraint(f"cross2_{a}_{b}_{j}_{p}", ((1.0, r), (-1.0, xb), (1.0, xa)), ">=", 0.0))
    return model


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _expr(terms) -> str:
    parts = []
    for coef, var in terms:
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = var if mag == 1 else f"{_num(mag)} {var}"
        parts.append(f"{sign} {body}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def export_lp(model: IlpModel) -> str:
    """CPLEX LP-format text; variable order and naming are deterministic."""
    lines = [
        f"\\ expert placement: E={model.num_experts} L={model.num_layers} "
        f"P={model.num_parts} level={model.level}",
        "Minimize",
    ]
    obj_terms = [(model.objective[r], r) for r in model.r_vars]
    lines.append(" obj: " + (_expr(obj_terms) if obj_terms else "0"))
    lines.append("Subject To")
    for c in model.constraints:
        lines.append(f" {c.name}: {_expr(c.terms)} {c.sense} {_num(c.rhs)}")
    lines.append("Binary")
    for v in model.variables:
        lines.append(f" {v}")
    lines.append("End")
    return "\n".join(lines) + "\n"
