"""Multi-feature binary poisoning via per-stratum pair attacks.

For a feature pair (X, Y), rows are grouped into strata by the bit pattern
of every other binary column.  Within a stratum the positive count update

    (n00, n01, n10, n11) -> (n00 + e, n01 - e, n10 - e, n11 + e)

is materialized by flipping the Y bit of e rows in cell (0,1) and e rows
in cell (1,0), which preserves every per-stratum marginal count (hence all
global marginals) and every joint involving a feature that is constant on
the stratum (hence all joints other than the attacked pair's).

A pass sweeps all feature pairs in lexicographic order, taking the maximal
feasible e = min(n01, n10) in every stratum.  Each productive pass strictly
grows the total on-diagonal count, so repeating until a pass moves nothing
terminates in finitely many passes, with every (pair, stratum) left with a
zero off-diagonal cell.

XOR encoding with a target bit vector v (flip column j iff v_j = 1) turns
this uniformly positive procedure into one targeting arbitrary signs:
after decoding, pairs with equal target bits end up positively associated
and pairs with opposite bits negatively.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

from ._rng import derive_rng
from .dataset import DataTable, FeatureKind, StrataCounts, group_pair_cells
from .errors import DataError

__all__ = [
    "TargetVector",
    "PairSweep",
    "PassReport",
    "xor_encode",
    "strata_ap",
    "pairwise_ap_pass",
    "multivariate_attack",
]


@dataclass(frozen=True)
class TargetVector:
    """Desired group: bit j says whether feature j is taken inverted."""

    bits: tuple[int, ...]

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise DataError(f"target vector entries must be 0 or 1, got {self.bits}")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)


def _as_target(v) -> TargetVector:
    return v if isinstance(v, TargetVector) else TargetVector(tuple(v))


def xor_encode(table: DataTable, v, features: Sequence[str] | None = None) -> DataTable:
    """Flip feature j iff v_j = 1; an exact involution."""
    target = _as_target(v)
    names = tuple(features) if features is not None else table.binary_names()
    if len(target) != len(names):
        raise DataError(f"target vector length {len(target)} != feature count {len(names)}")
    for name in names:
        if table.kind(name) is not FeatureKind.BINARY:
            raise DataError(f"cannot XOR-encode non-binary column {name!r}")
    new_cols = list(table.columns)
    for name, bit in zip(names, target.bits):
        if bit:
            idx = table.index(name)
            new_cols[idx] = 1 - table.columns[idx]
    return table.with_columns(new_cols)


def strata_ap(counts: StrataCounts, stratum: str, epsilon_count: int) -> StrataCounts:
    """Count-level positive poisoning of one stratum: (+e, -e, -e, +e)."""
    if stratum not in counts.counts:
        raise DataError(f"no stratum {stratum!r}")
    n00, n01, n10, n11 = counts.counts[stratum]
    if not (0 < epsilon_count <= min(n01, n10)):
        raise DataError(
            f"epsilon {epsilon_count} must lie in (0, min(n01={n01}, n10={n10})]"
        )
    updated = dict(counts.counts)
    updated[stratum] = (n00 + epsilon_count, n01 - epsilon_count, n10 - epsilon_count, n11 + epsilon_count)
    return StrataCounts(pair=counts.pair, remaining=counts.remaining, counts=updated)


@dataclass(frozen=True)
class PairSweep:
    pair: tuple[str, str]
    tau: int
    strata_touched: int


@dataclass(frozen=True)
class PassReport:
    index: int
    sweeps: tuple[PairSweep, ...]

    @property
    def tau_total(self) -> int:
        return sum(s.tau for s in self.sweeps)

    def to_json_lines(self) -> str:
        return "\n".join(
            json.dumps(
                {
                    "pass": self.index,
                    "pair": list(s.pair),
                    "tau": s.tau,
                    "strata_touched": s.strata_touched,
                }
            )
            for s in self.sweeps
        )


def _check_all_binary(table: DataTable) -> None:
    for name, kind in zip(table.names, table.kinds):
        if kind is not FeatureKind.BINARY:
            raise DataError(f"non-binary column {name!r} in the strata scope")


def pairwise_ap_pass(
    table: DataTable,
    features: Sequence[str] | None = None,
    seed: int = 0,
    pass_index: int = 0,
) -> tuple[DataTable, PassReport]:
    """One sweep of maximal per-stratum positive poisoning over all pairs.

    Pairs iterate in lexicographic name order; within a stratum cell the
    rows to flip are chosen by a seeded draw.  Pair sweeps see the flips of
    the pairs before them in the same pass.
    """
    _check_all_binary(table)
    names = tuple(sorted(features)) if features is not None else tuple(sorted(table.names))
    if len(names) < 2:
        raise DataError("need at least two features to poison pairwise")
    for name in names:
        table.index(name)  # validates existence
    work = {name: col.copy() for name, col in zip(table.names, table.columns)}
    sweeps = []
    for x_name, y_name in itertools.combinations(names, 2):
        remaining = [work[n] for n in table.names if n not in (x_name, y_name)]
        groups = group_pair_cells(work[x_name], work[y_name], remaining)
        tau = 0
        touched = 0
        y_col = work[y_name]
        for key in sorted(groups):
            cells = groups[key]
            c01 = cells.get((0, 1), ())
            c10 = cells.get((1, 0), ())
            eps = min(len(c01), len(c10))
            if eps == 0:
                continue
            rng = derive_rng(seed, "mv-pass", pass_index, x_name, y_name, key)
            y_col[rng.choice(c01, size=eps, replace=False)] = 0
            y_col[rng.choice(c10, size=eps, replace=False)] = 1
            tau += eps
            touched += 1
        sweeps.append(PairSweep(pair=(x_name, y_name), tau=tau, strata_touched=touched))
    out = table.with_columns([work[n] for n in table.names])
    return out, PassReport(index=pass_index, sweeps=tuple(sweeps))


def multivariate_attack(
    table: DataTable,
    v,
    features: Sequence[str] | None = None,
    seed: int = 0,
) -> tuple[DataTable, tuple[PassReport, ...]]:
    """XOR-encode, run pairwise passes to termination, decode.

    On return every (pair, stratum) of the encoded table has a zero
    off-diagonal cell; per-feature 1-counts match the input exactly.  The
    target vector v aligns with ``features`` (default: the table's binary
    columns in table order).
    """
    target = _as_target(v)
    names = tuple(features) if features is not None else table.binary_names()
    if len(target) != len(names):
        raise DataError(f"target vector length {len(target)} != feature count {len(names)}")
    encoded = xor_encode(table, target, names)
    reports = []
    pass_index = 0
    while True:
        encoded, report = pairwise_ap_pass(encoded, names, seed=seed, pass_index=pass_index)
        if report.tau_total == 0:
            break
        reports.append(report)
        pass_index += 1
    return xor_encode(encoded, target, names), tuple(reports)
