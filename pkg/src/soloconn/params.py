"""Trainable-parameter accounting: closed-form budget plus actual enumeration.

The closed form is n*floor((1-s)*d*r) + r*T + d*T where n is the number of
codec matrices (2) and T the number of connections. The homotopy gate's
scalar mixing coefficients are not part of the closed form; enumeration
reports them as an explicit +T correction line rather than folding them in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError


def kept_count(d: int, r: int, s: float) -> int:
    """Entries left unmasked in one d*r codec matrix at sparsity s.

    floor of (1-s)*d*r, with a tiny rounding guard so float noise in (1-s)
    cannot shift a mathematically integral product across the floor.
    """
    if d < 1 or r < 1:
        raise ConfigError(f"d and r must be positive, got d={d}, r={r}")
    if not 0.0 <= s < 1.0:
        raise ConfigError(f"sparsity must be in [0, 1), got {s}")
    return int(math.floor(round((1.0 - s) * d * r, 9)))


def budget_formula(d: int, r: int, s: float, n: int, t: int) -> int:
    """Closed-form adapter budget: n*floor((1-s)*d*r) + r*T + d*T."""
    if n < 1 or t < 0:
        raise ConfigError(f"n must be positive and T non-negative, got n={n}, T={t}")
    return n * kept_count(d, r, s) + r * t + d * t


def lora_budget(d: int, rank: int, n_blocks: int) -> int:
    """Trainable count for the low-rank attention baseline: 2*(d*r + r*d) per block."""
    if rank < 1:
        raise ConfigError(f"rank must be positive, got {rank}")
    return n_blocks * 2 * (d * rank + rank * d)


@dataclass
class ParamBudget:
    kind: str                       # "solo" | "lora" | "none"
    d: int = 0
    r: int = 0
    s: float = 0.0
    n: int = 2
    t: int = 0
    formula_total: int = 0
    enumerated_total: int = 0
    groups: dict = field(default_factory=dict)

    def breakdown_lines(self) -> list[str]:
        lines = [f"{name:>18}  {count}" for name, count in sorted(self.groups.items())]
        lines.append(f"{'formula_total':>18}  {self.formula_total}")
        lines.append(f"{'enumerated_total':>18}  {self.enumerated_total}")
        return lines


def enumerate_trainables(model, adapter_set=None) -> ParamBudget:
    """Walk every trainable tensor, excluding frozen base weights and masked slots.

    Masked codec slots are structurally pinned to zero, so they are not
    counted: the codec contributes the population of its masks, not the
    dense matrix sizes.
    """
    groups: dict[str, int] = {}
    base = sum(p.data.size for _, p in model.trainable_parameters())
    if base:
        groups["base"] = base

    kind = "none"
    if adapter_set is not None:
        kind = adapter_set.kind
        for group, count in adapter_set.trainable_group_counts().items():
            if count:
                groups[group] = groups.get(group, 0) + count

    total = sum(groups.values())
    budget = ParamBudget(kind=kind, enumerated_total=total, groups=groups)
    if adapter_set is not None and adapter_set.kind == "solo":
        cfg = adapter_set.config
        budget.d = adapter_set.d_model
        budget.r = cfg.rank
        budget.s = cfg.sparsity
        budget.t = len(adapter_set.connections)
        budget.formula_total = budget_formula(budget.d, budget.r, budget.s, 2, budget.t)
    elif adapter_set is not None and adapter_set.kind == "lora":
        budget.d = adapter_set.d_model
        budget.r = adapter_set.rank
        budget.formula_total = lora_budget(budget.d, adapter_set.rank, adapter_set.n_blocks)
    return budget
