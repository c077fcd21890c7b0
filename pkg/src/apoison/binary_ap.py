"""Two-feature binary association poisoning.

The joint-level transform moves probability mass epsilon from the
off-diagonal cells onto the diagonal:

    (a, b, c, d) -> (a + e, b - e, c - e, d + e),
    e in [max{-a, -d, b-1, c-1}, 0) u (0, min{b, c, 1-a, 1-d}]

which leaves both features' marginals untouched.  Positive e pushes the
pair toward positive correlation, negative e toward negative correlation,
and e = bc - ad lands exactly on independence.

At dataset level the transform is realized by sample replacement: for a
positive attack, n rows in cell (1,0) are swapped for pool rows in (1,1)
and n rows in (0,1) for pool rows in (0,0), keeping the table size and the
per-feature 1-counts of both features exactly constant.  The negative
attack mirrors this with the diagonal cells as donors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._rng import derive_rng
from .dataset import DataTable
from .errors import ConfigError, DataError, ExtentOutOfBoundsError, InfeasibleAttackError
from .metrics import BinaryJoint

__all__ = [
    "PoisonExtent",
    "BinaryAttackSpec",
    "AblationSpec",
    "ReplacementRecord",
    "ReplacementReport",
    "AblationCell",
    "epsilon_bounds",
    "apply_ap_joint",
    "independence_epsilon",
    "poison_binary_table",
    "negative_poison_binary_table",
    "run_binary_attack",
    "mix_ablation",
]

_BOUND_TOL = 1e-12


@dataclass(frozen=True)
class PoisonExtent:
    """Signed probability-mass extent of a joint-level attack."""

    epsilon: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.epsilon) or self.epsilon == 0.0:
            raise ExtentOutOfBoundsError(f"extent must be finite and nonzero, got {self.epsilon!r}")

    @property
    def direction(self) -> str:
        return "positive" if self.epsilon > 0 else "negative"


def epsilon_bounds(joint: BinaryJoint) -> tuple[float, float]:
    """Feasibility interval endpoints (lower <= 0 <= upper) for the extent."""
    a, b, c, d = joint.p00, joint.p01, joint.p10, joint.p11
    lower = max(-a, -d, b - 1.0, c - 1.0)
    upper = min(b, c, 1.0 - a, 1.0 - d)
    return lower, upper


def apply_ap_joint(joint: BinaryJoint, epsilon: float | PoisonExtent) -> BinaryJoint:
    """Joint-level poisoning: (a, b, c, d) -> (a+e, b-e, c-e, d+e)."""
    e = epsilon.epsilon if isinstance(epsilon, PoisonExtent) else float(epsilon)
    if e == 0.0:
        raise ExtentOutOfBoundsError("extent 0 is excluded: the attack must move mass")
    lower, upper = epsilon_bounds(joint)
    if e < lower - _BOUND_TOL:
        raise ExtentOutOfBoundsError(f"extent {e} below lower bound {lower}")
    if e > upper + _BOUND_TOL:
        raise ExtentOutOfBoundsError(f"extent {e} above upper bound {upper}")
    cells = np.array(
        [joint.p00 + e, joint.p01 - e, joint.p10 - e, joint.p11 + e], dtype=float
    )
    cells[np.abs(cells) < 1e-15] = 0.0  # roundoff at the feasibility boundary
    return BinaryJoint(*cells)


def independence_epsilon(joint: BinaryJoint) -> float:
    """The extent bc - ad that sends the pair exactly to independence."""
    return joint.p01 * joint.p10 - joint.p00 * joint.p11


@dataclass(frozen=True)
class BinaryAttackSpec:
    """Declarative description of one two-feature replacement attack.

    ``extent`` is the fraction x of the target split to replace per donor
    cell (n = round-half-even(x * N)); ``None`` requests the maximal
    feasible n.  Replacement rows come from ``pool_split`` and are
    consumed without reuse unless ``allow_duplicates`` is set.
    """

    pair: tuple[str, str]
    direction: str = "positive"
    extent: float | None = None
    seed: int = 0
    pool_split: str = "test"
    target_split: str = "train"
    allow_duplicates: bool = False

    def __post_init__(self) -> None:
        if len(self.pair) != 2 or self.pair[0] == self.pair[1]:
            raise ConfigError(f"attack pair must name two distinct features, got {self.pair}")
        if self.direction not in ("positive", "negative"):
            raise ConfigError(f"direction must be 'positive' or 'negative', got {self.direction!r}")
        if self.extent is not None:
            x = float(self.extent)
            if not math.isfinite(x) or not (0.0 < x <= 1.0):
                raise ConfigError(f"extent must lie in (0, 1], got {self.extent!r}")
        object.__setattr__(self, "pair", tuple(self.pair))


@dataclass(frozen=True)
class ReplacementRecord:
    removed: int
    inserted: int
    cell_from: tuple[int, int]
    cell_to: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "removed": self.removed,
            "inserted": self.inserted,
            "cell_from": list(self.cell_from),
            "cell_to": list(self.cell_to),
        }


@dataclass(frozen=True)
class ReplacementReport:
    """What a replacement attack did: n rows per donor cell, and the
    (removed, inserted) row pairing."""

    pair: tuple[str, str]
    direction: str
    n_per_cell: int
    records: tuple[ReplacementRecord, ...]

    @property
    def total_replacements(self) -> int:
        return len(self.records)

    def to_json_lines(self) -> str:
        return "\n".join(json.dumps(r.to_dict()) for r in self.records)


def _cell_rows(x: np.ndarray, y: np.ndarray, rows: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    out = {}
    for cx in (0, 1):
        for cy in (0, 1):
            mask = (x[rows] == cx) & (y[rows] == cy)
            out[(cx, cy)] = rows[mask]
    return out


def _resolve_n(
    spec: BinaryAttackSpec,
    n_target: int,
    donor_counts: dict[tuple[int, int], int],
    pool_counts: dict[tuple[int, int], int],
) -> int:
    limits = dict(donor_counts)
    if not spec.allow_duplicates:
        limits.update(pool_counts)
    feasible = min(limits.values())
    if spec.extent is None:
        n = feasible
    else:
        n = round(spec.extent * n_target)
    if n == 0:
        raise InfeasibleAttackError(
            f"attack on {spec.pair} resolves to 0 replacements (extent excludes 0); "
            f"maximum feasible n is {feasible}"
        )
    for cell, count in donor_counts.items():
        if count < n:
            raise InfeasibleAttackError(
                f"insufficient donor rows in cell {cell}: need {n}, have {count}; "
                f"maximum feasible n is {feasible}"
            )
    for cell, count in pool_counts.items():
        if spec.allow_duplicates:
            if count == 0:
                raise InfeasibleAttackError(f"pool has no rows in receiving cell {cell}")
        elif count < n:
            raise InfeasibleAttackError(
                f"pool exhausted in receiving cell {cell}: need {n}, have {count}; "
                f"maximum feasible n is {feasible}"
            )
    return n


def _replace(
    table: DataTable,
    spec: BinaryAttackSpec,
    moves: Sequence[tuple[tuple[int, int], tuple[int, int]]],
    target_rows: np.ndarray,
    pool_rows: np.ndarray,
) -> tuple[DataTable, ReplacementReport]:
    x = table.column(spec.pair[0])
    y = table.column(spec.pair[1])
    donor_cells = _cell_rows(x, y, target_rows)
    pool_cells = _cell_rows(x, y, pool_rows)
    donor_counts = {frm: len(donor_cells[frm]) for frm, _ in moves}
    pool_counts = {to: len(pool_cells[to]) for _, to in moves}
    n = _resolve_n(spec, len(target_rows), donor_counts, pool_counts)

    rng = derive_rng(spec.seed, "binary-ap", spec.direction, *spec.pair)
    new_cols = [col.copy() for col in table.columns]
    records = []
    for frm, to in moves:
        removed = rng.choice(donor_cells[frm], size=n, replace=False)
        inserted = rng.choice(pool_cells[to], size=n, replace=spec.allow_duplicates)
        for col, src in zip(new_cols, table.columns):
            col[removed] = src[inserted]
        records.extend(
            ReplacementRecord(int(r), int(p), frm, to)
            for r, p in zip(removed, inserted)
        )
    report = ReplacementReport(
        pair=spec.pair, direction=spec.direction, n_per_cell=n, records=tuple(records)
    )
    return table.with_columns(new_cols), report


def _attack_rows(table: DataTable, spec: BinaryAttackSpec) -> tuple[np.ndarray, np.ndarray]:
    if not table.has_splits:
        raise DataError("replacement attack needs split tags to locate the pool")
    target_rows = table.split_indices(spec.target_split)
    pool_rows = table.split_indices(spec.pool_split)
    if len(target_rows) == 0:
        raise DataError(f"target split {spec.target_split!r} is empty")
    if len(pool_rows) == 0:
        raise InfeasibleAttackError(f"pool split {spec.pool_split!r} is empty")
    return target_rows, pool_rows


_POSITIVE_MOVES = (((1, 0), (1, 1)), ((0, 1), (0, 0)))
_NEGATIVE_MOVES = (((1, 1), (1, 0)), ((0, 0), (0, 1)))


def poison_binary_table(table: DataTable, spec: BinaryAttackSpec) -> tuple[DataTable, ReplacementReport]:
    """Positive replacement attack: (1,0)->(1,1) and (0,1)->(0,0)."""
    if spec.direction != "positive":
        raise ConfigError("poison_binary_table implements the positive direction")
    target_rows, pool_rows = _attack_rows(table, spec)
    return _replace(table, spec, _POSITIVE_MOVES, target_rows, pool_rows)


def negative_poison_binary_table(table: DataTable, spec: BinaryAttackSpec) -> tuple[DataTable, ReplacementReport]:
    """Negative replacement attack: (1,1)->(1,0) and (0,0)->(0,1)."""
    if spec.direction != "negative":
        raise ConfigError("negative_poison_binary_table implements the negative direction")
    target_rows, pool_rows = _attack_rows(table, spec)
    return _replace(table, spec, _NEGATIVE_MOVES, target_rows, pool_rows)


def run_binary_attack(table: DataTable, spec: BinaryAttackSpec) -> tuple[DataTable, ReplacementReport]:
    if spec.direction == "positive":
        return poison_binary_table(table, spec)
    return negative_poison_binary_table(table, spec)


@dataclass(frozen=True)
class AblationSpec:
    """Adversary-control ablation grid over [0, 100] percent."""

    step_pct: float = 5.0
    repetitions: int = 1
    fractions: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.fractions is None:
            if not (0.0 < self.step_pct <= 100.0):
                raise ConfigError(f"step_pct must lie in (0, 100], got {self.step_pct}")
            steps = int(round(100.0 / self.step_pct))
            if abs(steps * self.step_pct - 100.0) > 1e-9:
                raise ConfigError(f"step_pct {self.step_pct} does not divide 100")
            grid = tuple(i * self.step_pct for i in range(steps + 1))
        else:
            grid = tuple(float(f) for f in self.fractions)
            if any(f < 0.0 or f > 100.0 for f in grid):
                raise ConfigError(f"fractions must lie in [0, 100], got {grid}")
        object.__setattr__(self, "fractions", grid)

    @property
    def grid(self) -> tuple[float, ...]:
        return self.fractions


@dataclass(frozen=True)
class AblationCell:
    fraction_pct: float
    repetition: int
    table: DataTable
    report: ReplacementReport | None


def _share(rng: np.random.Generator, rows: np.ndarray, fraction_pct: float) -> np.ndarray:
    size = round(len(rows) * fraction_pct / 100.0)
    if size >= len(rows):
        return rows
    chosen = rng.choice(rows, size=size, replace=False)
    return np.sort(chosen)


def mix_ablation(
    clean: DataTable, spec: AblationSpec, attack: BinaryAttackSpec
) -> list[AblationCell]:
    """For each (fraction, repetition), the maximal feasible attack
    restricted to a seeded fraction-share of the target and pool rows.

    At fraction 0 (or when the share holds no feasible replacement) the
    clean table passes through unchanged.
    """
    target_rows, pool_rows = _attack_rows(clean, attack)
    moves = _POSITIVE_MOVES if attack.direction == "positive" else _NEGATIVE_MOVES
    max_spec = BinaryAttackSpec(
        pair=attack.pair,
        direction=attack.direction,
        extent=None,
        seed=attack.seed,
        pool_split=attack.pool_split,
        target_split=attack.target_split,
        allow_duplicates=attack.allow_duplicates,
    )
    cells = []
    for fraction in spec.grid:
        for rep in range(spec.repetitions):
            share_rng = derive_rng(attack.seed, "ablation-share", fraction, rep)
            tgt = _share(share_rng, target_rows, fraction)
            pool = _share(share_rng, pool_rows, fraction)
            try:
                poisoned, report = _replace(clean, max_spec, moves, tgt, pool) \
                    if (len(tgt) and len(pool)) else (clean, None)
            except InfeasibleAttackError:
                poisoned, report = clean, None  # share too small to move anything
            cells.append(AblationCell(fraction, rep, poisoned, report))
    return cells
