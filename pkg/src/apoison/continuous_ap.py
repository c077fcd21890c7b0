"""Continuous-feature attacks built on the pairwise-swap covariance identity.

Swapping the y-values of rows i and j changes the covariance by exactly

    delta_cov = (1/n) * (x_i - x_j) * (y_j - y_i)

while leaving both means and both variances untouched, so a swap with
positive delta strictly increases the Pearson correlation.  Sorting rows
by x and repeatedly swapping adjacent positive-delta inversions therefore
climbs monotonically to the rearrangement-inequality maximum (sorted-x
against sorted-y); the descending mirror reaches the minimum.

No such local rule exists for mutual information: the same margin-
preserving diagonal mass move raises MI when the surrounding joint density
is diagonal-heavy and lowers it when it is off-diagonal-heavy.
``build_mi_counterexample`` returns a pair of small discrete joints with
identical marginals realizing both signs for one identical move.

The dataset-level attack replaces rows instead of swapping them: for each
row it aims at the covariance-extremal target value, takes the nearest
pool row, and keeps the replacement only if the exact PCC moves strictly
in the attack direction; a k-NN MI estimate refreshed every ``mi_refresh``
acceptances gates whole batches, reverting any batch that moves MI the
wrong way.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from ._rng import derive_rng
from .dataset import DataTable, FeatureKind
from .errors import ConfigError, DataError, InfeasibleAttackError
from .metrics import ContinuousPair, knn_mi, pcc

__all__ = [
    "SwapDelta",
    "AscentResult",
    "ContinuousAttackSpec",
    "ContinuousReplacement",
    "ContinuousPoisonReport",
    "MiCounterexample",
    "delta_cov",
    "pearson_ascent",
    "pearson_descent",
    "poison_continuous_table",
    "discrete_grid_mi",
    "build_mi_counterexample",
]


@dataclass(frozen=True)
class SwapDelta:
    """Covariance change of swapping y_i and y_j."""

    i: int
    j: int
    delta_cov: float


def delta_cov(pair: ContinuousPair, i: int, j: int) -> float:
    """(1/n)(x_i - x_j)(y_j - y_i); the exact covariance change of the swap."""
    n = len(pair)
    if i == j:
        raise DataError("swap indices must differ")
    for idx in (i, j):
        if not (0 <= idx < n):
            raise DataError(f"index {idx} out of range for n={n}")
    return (pair.x[i] - pair.x[j]) * (pair.y[j] - pair.y[i]) / n


@dataclass(frozen=True)
class AscentResult:
    """Outcome of the adjacent-swap climb.

    ``order`` holds the original row indices sorted by x; ``y_values`` the
    y assignment over that order after all accepted swaps.
    """

    order: np.ndarray
    y_values: np.ndarray
    swaps: int
    pcc: float


def _adjacent_swap_sort(pair: ContinuousPair, ascending: bool) -> AscentResult:
    order = np.argsort(pair.x, kind="stable")
    xs = pair.x[order]
    ys = pair.y[order].copy()
    n = len(xs)
    swaps = 0
    swapped = True
    while swapped:
        swapped = False
        for k in range(n - 1):
            if xs[k] < xs[k + 1] and (ys[k] > ys[k + 1] if ascending else ys[k] < ys[k + 1]):
                ys[k], ys[k + 1] = ys[k + 1], ys[k]
                swaps += 1
                swapped = True
    final = pcc(ContinuousPair(xs, ys))
    return AscentResult(order=order, y_values=ys, swaps=swaps, pcc=final)


def pearson_ascent(pair: ContinuousPair) -> AscentResult:
    """Sort by x, swap adjacent inversions with positive delta_cov until
    none remain; terminates with y ascending and PCC at its maximum over
    all y permutations."""
    return _adjacent_swap_sort(pair, ascending=True)


def pearson_descent(pair: ContinuousPair) -> AscentResult:
    """Mirror climb for negative attacks: every accepted adjacent swap has
    negative delta_cov; terminates at the PCC minimum (y descending)."""
    return _adjacent_swap_sort(pair, ascending=False)


@dataclass(frozen=True)
class ContinuousAttackSpec:
    """Pool-replacement attack on a continuous feature pair.

    ``mi_refresh`` is the batch size m between MI checkpoints (default
    max(1, N/100) for the target split size N).
    """

    pair: tuple[str, str]
    direction: str = "positive"
    mi_refresh: int | None = None
    k: int = 3
    seed: int = 0
    pool_split: str = "test"
    target_split: str = "train"
    allow_duplicates: bool = False

    def __post_init__(self) -> None:
        if len(self.pair) != 2 or self.pair[0] == self.pair[1]:
            raise ConfigError(f"attack pair must name two distinct features, got {self.pair}")
        if self.direction not in ("positive", "negative"):
            raise ConfigError(f"direction must be 'positive' or 'negative', got {self.direction!r}")
        if self.mi_refresh is not None and self.mi_refresh < 1:
            raise ConfigError(f"mi_refresh must be >= 1, got {self.mi_refresh}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "pair", tuple(self.pair))


@dataclass(frozen=True)
class ContinuousReplacement:
    row: int
    pool_row: int
    pcc_before: float
    pcc_after: float
    mi_checkpoint: float

    def to_dict(self) -> dict:
        return {
            "row": self.row,
            "pool_row": self.pool_row,
            "pcc_before": self.pcc_before,
            "pcc_after": self.pcc_after,
            "mi_checkpoint": self.mi_checkpoint,
        }


@dataclass(frozen=True)
class ContinuousPoisonReport:
    pair: tuple[str, str]
    direction: str
    records: tuple[ContinuousReplacement, ...]
    reverted: int
    pcc_initial: float
    pcc_final: float
    mi_initial: float
    mi_final: float
    mean_before: dict[str, float]
    mean_after: dict[str, float]

    @property
    def mean_shift(self) -> dict[str, float]:
        return {k: abs(self.mean_after[k] - self.mean_before[k]) for k in self.mean_before}

    def to_json_lines(self) -> str:
        return "\n".join(json.dumps(r.to_dict()) for r in self.records)


class _MomentState:
    """Running first and second moments of the attacked pair."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.n = len(x)
        self.sx = float(np.sum(x))
        self.sy = float(np.sum(y))
        self.sxx = float(np.sum(x * x))
        self.syy = float(np.sum(y * y))
        self.sxy = float(np.sum(x * y))

    def snapshot(self) -> tuple[float, float, float, float, float]:
        return (self.sx, self.sy, self.sxx, self.syy, self.sxy)

    def restore(self, snap) -> None:
        self.sx, self.sy, self.sxx, self.syy, self.sxy = snap

    def replaced(self, xi, yi, xp, yp) -> tuple[float, float, float, float, float]:
        return (
            self.sx - xi + xp,
            self.sy - yi + yp,
            self.sxx - xi * xi + xp * xp,
            self.syy - yi * yi + yp * yp,
            self.sxy - xi * yi + xp * yp,
        )

    @staticmethod
    def pcc_of(sums, n) -> float | None:
        sx, sy, sxx, syy, sxy = sums
        var_x = sxx / n - (sx / n) ** 2
        var_y = syy / n - (sy / n) ** 2
        if var_x <= 0.0 or var_y <= 0.0:
            return None
        cov = sxy / n - (sx / n) * (sy / n)
        return cov / math.sqrt(var_x * var_y)

    @property
    def mean_x(self) -> float:
        return self.sx / self.n

    def pcc(self) -> float | None:
        return self.pcc_of(self.snapshot(), self.n)


def poison_continuous_table(
    table: DataTable, spec: ContinuousAttackSpec
) -> tuple[DataTable, ContinuousPoisonReport]:
    """Greedy pool-replacement attack on one continuous pair.

    For each target row (seeded order): aim at (x_i, y*) with y* the unit-
    interval extremizer of the covariance delta, take the Euclidean-nearest
    available pool row in (x, y) space (lowest pool index on ties), and
    accept only if the exact PCC strictly moves in the attack direction.
    Every ``mi_refresh`` acceptances the k-NN MI is re-estimated; a batch
    that moves the estimate against the attack direction is reverted and
    scanning continues.
    """
    x_name, y_name = spec.pair
    for name in spec.pair:
        if table.kind(name) is not FeatureKind.CONTINUOUS:
            raise DataError(f"attacked feature {name!r} must be continuous")
    if not table.has_splits:
        raise DataError("replacement attack needs split tags to locate the pool")
    target = table.split_indices(spec.target_split)
    pool = table.split_indices(spec.pool_split)
    if len(target) == 0:
        raise DataError(f"target split {spec.target_split!r} is empty")
    if len(pool) == 0:
        raise InfeasibleAttackError(f"pool split {spec.pool_split!r} is empty")

    x = table.column(x_name)[target].copy()
    y = table.column(y_name)[target].copy()
    pool_x = table.column(x_name)[pool]
    pool_y = table.column(y_name)[pool]
    n = len(target)
    m = spec.mi_refresh if spec.mi_refresh is not None else max(1, n // 100)
    positive = spec.direction == "positive"

    state = _MomentState(x, y)
    pcc_initial = pcc(ContinuousPair(x, y))
    mi_initial = knn_mi(ContinuousPair(x, y), spec.k)
    mean_before = {x_name: float(np.mean(x)), y_name: float(np.mean(y))}

    checkpoint = mi_initial
    available = np.ones(len(pool), dtype=bool)
    replacement = np.full(n, -1, dtype=np.int64)  # target pos -> pool pos
    committed: list[ContinuousReplacement] = []
    batch: list[dict] = []
    batch_snap = state.snapshot()
    reverted = 0

    def gate_passes(mi_new: float, pcc_now: float) -> bool:
        if positive:
            return mi_new >= checkpoint
        return (mi_new <= checkpoint) if pcc_now > 0.0 else (mi_new >= checkpoint)

    def flush_batch() -> None:
        nonlocal batch, batch_snap, checkpoint, reverted
        if not batch:
            return
        mi_new = knn_mi(ContinuousPair(x, y), spec.k)
        pcc_now = state.pcc()
        if gate_passes(mi_new, pcc_now if pcc_now is not None else 0.0):
            committed.extend(
                ContinuousReplacement(
                    row=int(target[rec["pos"]]),
                    pool_row=int(pool[rec["pool_pos"]]),
                    pcc_before=rec["pcc_before"],
                    pcc_after=rec["pcc_after"],
                    mi_checkpoint=mi_new,
                )
                for rec in batch
            )
            checkpoint = mi_new
        else:
            for rec in reversed(batch):
                pos = rec["pos"]
                x[pos] = rec["old_x"]
                y[pos] = rec["old_y"]
                if not spec.allow_duplicates:
                    available[rec["pool_pos"]] = True
                replacement[pos] = -1
            state.restore(batch_snap)
            reverted += len(batch)
        batch = []
        batch_snap = state.snapshot()

    order = derive_rng(spec.seed, "continuous-ap", spec.direction, *spec.pair).permutation(n)
    for pos in order:
        candidates = np.flatnonzero(available) if not spec.allow_duplicates else None
        if candidates is not None and len(candidates) == 0:
            raise InfeasibleAttackError("pool exhausted: no replacement rows remain")
        xi, yi = float(x[pos]), float(y[pos])
        if positive:
            y_star = 1.0 if xi > state.mean_x else 0.0
        else:
            y_star = 0.0 if xi > state.mean_x else 1.0
        if candidates is None:
            dist = (pool_x - xi) ** 2 + (pool_y - y_star) ** 2
            pool_pos = int(np.argmin(dist))
        else:
            dist = (pool_x[candidates] - xi) ** 2 + (pool_y[candidates] - y_star) ** 2
            pool_pos = int(candidates[np.argmin(dist)])
        xp, yp = float(pool_x[pool_pos]), float(pool_y[pool_pos])
        pcc_before = state.pcc()
        new_sums = state.replaced(xi, yi, xp, yp)
        pcc_after = state.pcc_of(new_sums, n)
        if pcc_before is None or pcc_after is None:
            continue
        # a sub-1e-12 delta is float noise, not a strict change of the exact PCC
        if (pcc_after - pcc_before <= 1e-12) if positive else (pcc_before - pcc_after <= 1e-12):
            continue
        x[pos], y[pos] = xp, yp
        state.restore(new_sums)
        if not spec.allow_duplicates:
            available[pool_pos] = False
        replacement[pos] = pool_pos
        batch.append(
            {
                "pos": int(pos),
                "pool_pos": pool_pos,
                "old_x": xi,
                "old_y": yi,
                "pcc_before": pcc_before,
                "pcc_after": pcc_after,
            }
        )
        if len(batch) == m:
            flush_batch()
    flush_batch()

    new_cols = [col.copy() for col in table.columns]
    kept = np.flatnonzero(replacement >= 0)
    if len(kept):
        dst = target[kept]
        src = pool[replacement[kept]]
        for col, source in zip(new_cols, table.columns):
            col[dst] = source[src]
    poisoned = table.with_columns(new_cols)

    fx = poisoned.column(x_name)[target]
    fy = poisoned.column(y_name)[target]
    final_pair = ContinuousPair(fx, fy)
    report = ContinuousPoisonReport(
        pair=spec.pair,
        direction=spec.direction,
        records=tuple(committed),
        reverted=reverted,
        pcc_initial=pcc_initial,
        pcc_final=pcc(final_pair),
        mi_initial=mi_initial,
        mi_final=knn_mi(final_pair, spec.k),
        mean_before=mean_before,
        mean_after={x_name: float(np.mean(fx)), y_name: float(np.mean(fy))},
    )
    return poisoned, report


def discrete_grid_mi(masses: Sequence[Sequence[float]]) -> float:
    """Exact MI of a discrete joint given as a grid of cell masses."""
    p = np.asarray(masses, dtype=float)
    if np.any(p < 0):
        raise DataError("cell masses must be nonnegative")
    total = float(p.sum())
    if total <= 0:
        raise DataError("cell masses must not all be zero")
    p = p / total
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    out = 0.0
    for r in range(p.shape[0]):
        for c in range(p.shape[1]):
            if p[r, c] > 0:
                out += p[r, c] * math.log(p[r, c] / (px[r] * py[c]))
    return out


@dataclass(frozen=True)
class MiCounterexample:
    """One margin-preserving diagonal mass move, two backgrounds, two MI signs.

    Backgrounds A and B are discrete joints on the same grid with identical
    marginals.  Moving ``epsilon`` mass onto the diagonal of the 2x2 block
    (rows ``block_rows`` x cols ``block_cols``) raises the covariance by the
    same positive amount in both, yet raises exact MI in A and lowers it in
    B: the sign follows the block's log odds ratio, which the two points
    being "swapped" cannot see.
    """

    x_coords: tuple[Fraction, ...]
    y_coords: tuple[Fraction, ...]
    mass_a: tuple[tuple[Fraction, ...], ...]
    mass_b: tuple[tuple[Fraction, ...], ...]
    block_rows: tuple[int, int]
    block_cols: tuple[int, int]
    epsilon: Fraction
    delta_mi_a: float
    delta_mi_b: float
    delta_cov_a: Fraction
    delta_cov_b: Fraction

    def apply_move(self, masses, epsilon: Fraction | None = None):
        """The shifted grid: +epsilon on the block diagonal, -epsilon off it."""
        eps = self.epsilon if epsilon is None else epsilon
        return _apply_block_move(masses, self.block_rows, self.block_cols, eps)

    def cov_change(self, epsilon: Fraction | None = None) -> Fraction:
        """Exact covariance change of the move (marginals are unchanged,
        so it equals the change in E[XY])."""
        eps = self.epsilon if epsilon is None else epsilon
        return _block_cov_change(self.x_coords, self.y_coords, self.block_rows, self.block_cols, eps)

    def mi_change(self, masses, epsilon: Fraction | None = None) -> float:
        eps = self.epsilon if epsilon is None else epsilon
        return _block_mi_change(masses, self.block_rows, self.block_cols, eps)

    def to_dict(self) -> dict:
        def grid(masses):
            return [[str(v) for v in row] for row in masses]

        return {
            "x_coords": [str(v) for v in self.x_coords],
            "y_coords": [str(v) for v in self.y_coords],
            "mass_a": grid(self.mass_a),
            "mass_b": grid(self.mass_b),
            "block_rows": list(self.block_rows),
            "block_cols": list(self.block_cols),
            "epsilon": str(self.epsilon),
            "delta_mi_a": self.delta_mi_a,
            "delta_mi_b": self.delta_mi_b,
            "delta_cov": str(self.delta_cov_a),
            "delta_pcc_sign": 1,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _apply_block_move(masses, rows, cols, eps: Fraction):
    r0, r1 = rows
    c0, c1 = cols
    grid = [list(row) for row in masses]
    grid[r0][c0] += eps
    grid[r1][c1] += eps
    grid[r0][c1] -= eps
    grid[r1][c0] -= eps
    if min(grid[r0][c1], grid[r1][c0]) < 0:
        raise DataError(f"move of {eps} empties an off-diagonal cell")
    return tuple(tuple(row) for row in grid)


def _block_cov_change(x_coords, y_coords, rows, cols, eps: Fraction) -> Fraction:
    x0, x1 = x_coords[rows[0]], x_coords[rows[1]]
    y0, y1 = y_coords[cols[0]], y_coords[cols[1]]
    return eps * (x1 - x0) * (y1 - y0)


def _block_mi_change(masses, rows, cols, eps: Fraction) -> float:
    before = [[float(v) for v in row] for row in masses]
    after = [[float(v) for v in row] for row in _apply_block_move(masses, rows, cols, eps)]
    return discrete_grid_mi(after) - discrete_grid_mi(before)


def build_mi_counterexample() -> MiCounterexample:
    """The fixed 3x3 witness that no local swap rule controls MI.

    Both backgrounds have uniform 1/3 marginals on {0, 1/2, 1}.  In A the
    top-left 2x2 block has odds ratio 9 (diagonal-heavy), in B the same
    block has odds ratio 1/9, so the identical epsilon = 1/64 diagonal move
    raises MI in A and lowers it in B while adding covariance
    epsilon * (1/2) * (1/2) = 1/256 > 0 to both.
    """
    f = Fraction
    x_coords = (f(0), f(1, 2), f(1))
    y_coords = (f(0), f(1, 2), f(1))
    mass_a = tuple(
        tuple(f(v, 36) for v in row) for row in ((6, 2, 4), (2, 6, 4), (4, 4, 4))
    )
    mass_b = tuple(
        tuple(f(v, 36) for v in row) for row in ((2, 6, 4), (6, 2, 4), (4, 4, 4))
    )
    block_rows, block_cols = (0, 1), (0, 1)
    eps = f(1, 64)
    return MiCounterexample(
        x_coords=x_coords,
        y_coords=y_coords,
        mass_a=mass_a,
        mass_b=mass_b,
        block_rows=block_rows,
        block_cols=block_cols,
        epsilon=eps,
        delta_mi_a=_block_mi_change(mass_a, block_rows, block_cols, eps),
        delta_mi_b=_block_mi_change(mass_b, block_rows, block_cols, eps),
        delta_cov_a=_block_cov_change(x_coords, y_coords, block_rows, block_cols, eps),
        delta_cov_b=_block_cov_change(x_coords, y_coords, block_rows, block_cols, eps),
    )
