import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from apoison.continuous_ap import (
    ContinuousAttackSpec,
    build_mi_counterexample,
    delta_cov,
    discrete_grid_mi,
    pearson_ascent,
    pearson_descent,
    poison_continuous_table,
)
from apoison.dataset import DataTable, FeatureKind
from apoison.errors import ConfigError, DataError
from apoison.metrics import ContinuousPair, pcc
from conftest import cov_oracle, grid_mi_oracle


def swap_cov_oracle(x, y, i, j):
    """Covariance change measured by physically performing the swap."""
    swapped = list(y)
    swapped[i], swapped[j] = swapped[j], swapped[i]
    return cov_oracle(x, swapped) - cov_oracle(x, y)


def brute_force_extreme_pcc(x, y, best=max):
    # PCC ignores joint row order, so enumerate against sorted x; the
    # optimum is then attained at the exact value sequence the climb ends
    # in, making float-exact comparison meaningful.
    xs = np.sort(np.asarray(x))
    values = []
    for perm in itertools.permutations(y):
        values.append(pcc(ContinuousPair(xs, np.asarray(perm))))
    return best(values)


def count_inversions(seq):
    n = len(seq)
    return sum(1 for i in range(n) for j in range(i + 1, n) if seq[i] > seq[j])


class TestDeltaCov:
    def test_equal_x_gives_zero(self):
        pair = ContinuousPair(np.array([0.4, 0.4, 0.9]), np.array([0.1, 0.8, 0.5]))
        assert delta_cov(pair, 0, 1) == 0.0

    def test_two_point_case(self):
        pair = ContinuousPair(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        value = delta_cov(pair, 0, 1)
        assert value == pytest.approx(0.5, abs=1e-15)
        assert value == pytest.approx(swap_cov_oracle([0.0, 1.0], [1.0, 0.0], 0, 1), abs=1e-15)

    def test_matches_recomputation_randomly(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(size=300)
        y = rng.uniform(size=300)
        pair = ContinuousPair(x, y)
        for _ in range(100):
            i, j = rng.choice(300, size=2, replace=False)
            assert delta_cov(pair, int(i), int(j)) == pytest.approx(
                swap_cov_oracle(x.tolist(), y.tolist(), int(i), int(j)), abs=1e-12
            )

    def test_swap_preserves_moments(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(size=50)
        y = rng.uniform(size=50)
        swapped = y.copy()
        swapped[[3, 31]] = swapped[[31, 3]]
        a, b = ContinuousPair(x, y), ContinuousPair(x, swapped)
        assert b.mu_y == pytest.approx(a.mu_y, abs=1e-15)
        assert b.sigma_y == pytest.approx(a.sigma_y, abs=1e-15)
        assert b.mu_x == a.mu_x and b.sigma_x == a.sigma_x

    def test_index_validation(self):
        pair = ContinuousPair(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        with pytest.raises(DataError):
            delta_cov(pair, 0, 0)
        with pytest.raises(DataError):
            delta_cov(pair, 0, 5)


class TestPearsonAscent:
    def test_small_example_sorts(self):
        pair = ContinuousPair(np.array([0.0, 0.5, 1.0]), np.array([1.0, 0.0, 0.5]))
        result = pearson_ascent(pair)
        assert result.y_values.tolist() == [0.0, 0.5, 1.0]
        assert result.pcc == pytest.approx(1.0)

    def test_already_sorted_zero_swaps(self):
        pair = ContinuousPair(np.array([0.1, 0.2, 0.9]), np.array([0.3, 0.5, 0.8]))
        assert pearson_ascent(pair).swaps == 0

    def test_exhaustive_optimality(self):
        rng = np.random.default_rng(14)
        for _ in range(60):
            n = int(rng.integers(2, 8))
            x = rng.uniform(size=n)
            y = rng.uniform(size=n)
            result = pearson_ascent(ContinuousPair(x, y))
            assert result.pcc == brute_force_extreme_pcc(x, y, max)

    def test_swap_count_is_inversion_count(self):
        rng = np.random.default_rng(15)
        x = rng.uniform(size=40)  # distinct almost surely
        y = rng.uniform(size=40)
        result = pearson_ascent(ContinuousPair(x, y))
        order = np.argsort(x, kind="stable")
        assert result.swaps == count_inversions(y[order].tolist())
        assert result.swaps <= 40 * 39 / 2

    def test_strictly_improves_when_swapping(self):
        rng = np.random.default_rng(16)
        x = rng.uniform(size=30)
        y = rng.uniform(size=30)
        result = pearson_ascent(ContinuousPair(x, y))
        if result.swaps > 0:
            assert result.pcc > pcc(ContinuousPair(x, y))


class TestPearsonDescent:
    def test_small_example(self):
        pair = ContinuousPair(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]))
        result = pearson_descent(pair)
        assert result.y_values.tolist() == [1.0, 0.5, 0.0]
        assert result.pcc == pytest.approx(-1.0)

    def test_exhaustive_minimality(self):
        rng = np.random.default_rng(17)
        for _ in range(60):
            n = int(rng.integers(2, 8))
            x = rng.uniform(size=n)
            y = rng.uniform(size=n)
            result = pearson_descent(ContinuousPair(x, y))
            assert result.pcc == brute_force_extreme_pcc(x, y, min)

    def test_idempotent(self):
        rng = np.random.default_rng(18)
        x = np.sort(rng.uniform(size=25))
        y = rng.uniform(size=25)
        first = pearson_descent(ContinuousPair(x, y))
        second = pearson_descent(ContinuousPair(x, first.y_values))
        assert second.swaps == 0
        assert second.pcc == pytest.approx(first.pcc, abs=1e-15)


def correlated_split_table(n_train=400, n_pool=800, rho=0.85, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=n_train + n_pool)
    from scipy.special import ndtr

    u = ndtr(z)
    splits = np.concatenate(
        [np.zeros(n_train, dtype=np.int8), np.full(n_pool, 2, dtype=np.int8)]
    )
    return DataTable(("x", "y"), (FeatureKind.CONTINUOUS,) * 2, (u[:, 0], u[:, 1]), splits)


class TestPoisonContinuousTable:
    def test_positive_attack_raises_pcc(self):
        # pool is an exact copy of the train rows with y independently shuffled
        rng = np.random.default_rng(21)
        x = rng.uniform(size=300)
        y = rng.uniform(size=300)
        pool_y = rng.permutation(y)
        splits = np.concatenate([np.zeros(300, dtype=np.int8), np.full(300, 2, dtype=np.int8)])
        table = DataTable(
            ("x", "y"),
            (FeatureKind.CONTINUOUS,) * 2,
            (np.concatenate([x, x]), np.concatenate([y, pool_y])),
            splits,
        )
        spec = ContinuousAttackSpec(pair=("x", "y"), seed=5)
        poisoned, report = poison_continuous_table(table, spec)
        assert report.pcc_final > report.pcc_initial
        assert len(report.records) > 0
        # per-record strict monotonicity in the acceptance log
        for rec in report.records:
            assert rec.pcc_after > rec.pcc_before

    def test_no_strict_gain_no_replacements(self):
        # train already at the PCC maximum (y = x) and a pool of identical
        # rows: no replacement can strictly increase the exact PCC
        rng = np.random.default_rng(22)
        x = rng.uniform(size=100)
        splits = np.concatenate([np.zeros(100, dtype=np.int8), np.full(100, 2, dtype=np.int8)])
        table = DataTable(
            ("x", "y"),
            (FeatureKind.CONTINUOUS,) * 2,
            (np.concatenate([x, x]), np.concatenate([x, x])),
            splits,
        )
        poisoned, report = poison_continuous_table(
            table, ContinuousAttackSpec(pair=("x", "y"), seed=1)
        )
        assert len(report.records) == 0
        assert poisoned.equals(table)

    def test_negative_attack_on_positive_data(self):
        # strongly positive association: the negative attack drags PCC down and,
        # while PCC stays positive, MI falls alongside it
        table = correlated_split_table(rho=0.85, seed=23)
        spec = ContinuousAttackSpec(pair=("x", "y"), direction="negative", seed=6)
        poisoned, report = poison_continuous_table(table, spec)
        assert report.pcc_final < report.pcc_initial
        assert report.mi_final < report.mi_initial

    def test_replay_log_reproduces_table(self):
        table = correlated_split_table(rho=0.0, seed=24, n_train=200, n_pool=400)
        spec = ContinuousAttackSpec(pair=("x", "y"), seed=7)
        poisoned, report = poison_continuous_table(table, spec)
        cols = [col.copy() for col in table.columns]
        for rec in report.records:
            for col, src in zip(cols, table.columns):
                col[rec.row] = src[rec.pool_row]
        replayed = table.with_columns(cols)
        assert replayed.equals(poisoned)

    def test_deterministic(self):
        table = correlated_split_table(rho=0.3, seed=25, n_train=150, n_pool=300)
        spec = ContinuousAttackSpec(pair=("x", "y"), seed=8)
        a, ra = poison_continuous_table(table, spec)
        b, rb = poison_continuous_table(table, spec)
        assert a.equals(b)
        assert ra.records == rb.records

    def test_mean_shift_reported_small(self):
        table = correlated_split_table(rho=0.0, seed=26)
        spec = ContinuousAttackSpec(pair=("x", "y"), seed=9)
        _, report = poison_continuous_table(table, spec)
        assert set(report.mean_shift) == {"x", "y"}
        assert all(v < 0.2 for v in report.mean_shift.values())

    def test_log_json_lines(self):
        table = correlated_split_table(rho=0.0, seed=27, n_train=120, n_pool=240)
        _, report = poison_continuous_table(
            table, ContinuousAttackSpec(pair=("x", "y"), seed=10)
        )
        if report.records:
            line = json.loads(report.to_json_lines().splitlines()[0])
            assert set(line) == {"row", "pool_row", "pcc_before", "pcc_after", "mi_checkpoint"}

    def test_requires_continuous_pair(self):
        rng = np.random.default_rng(1)
        table = DataTable(
            ("x", "b"),
            (FeatureKind.CONTINUOUS, FeatureKind.BINARY),
            (rng.uniform(size=10), rng.integers(0, 2, size=10).astype(np.int8)),
            np.zeros(10, dtype=np.int8),
        )
        with pytest.raises(DataError):
            poison_continuous_table(table, ContinuousAttackSpec(pair=("x", "b")))

    def test_direction_validation(self):
        with pytest.raises(ConfigError):
            ContinuousAttackSpec(pair=("x", "y"), direction="sideways")


class TestMiCounterexample:
    def test_sign_pattern(self):
        cx = build_mi_counterexample()
        assert cx.delta_mi_a > 0
        assert cx.delta_mi_b < 0
        assert cx.delta_cov_a > 0
        assert cx.delta_cov_b > 0

    def test_exact_marginal_preservation(self):
        cx = build_mi_counterexample()
        for masses in (cx.mass_a, cx.mass_b):
            moved = cx.apply_move(masses)
            before_rows = [sum(row) for row in masses]
            after_rows = [sum(row) for row in moved]
            assert before_rows == after_rows  # exact Fraction equality
            before_cols = [sum(col) for col in zip(*masses)]
            after_cols = [sum(col) for col in zip(*moved)]
            assert before_cols == after_cols

    def test_backgrounds_share_marginals(self):
        cx = build_mi_counterexample()
        rows_a = [sum(row) for row in cx.mass_a]
        rows_b = [sum(row) for row in cx.mass_b]
        cols_a = [sum(col) for col in zip(*cx.mass_a)]
        cols_b = [sum(col) for col in zip(*cx.mass_b)]
        assert rows_a == rows_b and cols_a == cols_b

    def test_independent_mi_verification(self):
        # definition-level oracle, separate from the library implementation
        cx = build_mi_counterexample()
        for masses, delta in ((cx.mass_a, cx.delta_mi_a), (cx.mass_b, cx.delta_mi_b)):
            moved = cx.apply_move(masses)
            oracle_delta = grid_mi_oracle(moved) - grid_mi_oracle(masses)
            assert delta == pytest.approx(oracle_delta, abs=1e-12)
            assert discrete_grid_mi(masses) == pytest.approx(grid_mi_oracle(masses), abs=1e-12)

    def test_first_order_linearity(self):
        cx = build_mi_counterexample()
        for masses, delta in ((cx.mass_a, cx.delta_mi_a), (cx.mass_b, cx.delta_mi_b)):
            halved = cx.mi_change(masses, cx.epsilon / 2)
            assert 0.8 <= 2 * halved / delta <= 1.2

    def test_log_ratio_sign_criterion(self):
        cx = build_mi_counterexample()
        for masses, delta in ((cx.mass_a, cx.delta_mi_a), (cx.mass_b, cx.delta_mi_b)):
            r0, r1 = cx.block_rows
            c0, c1 = cx.block_cols
            odds = (masses[r0][c0] * masses[r1][c1]) / (masses[r0][c1] * masses[r1][c0])
            assert math.copysign(1, delta) == math.copysign(1, math.log(float(odds)))

    def test_move_cov_exact(self):
        cx = build_mi_counterexample()
        assert cx.delta_cov_a == Fraction(1, 256)
        # exact recomputation of E[XY] change from the mass move
        for masses in (cx.mass_a, cx.mass_b):
            moved = cx.apply_move(masses)
            exy = lambda grid: sum(
                grid[r][c] * cx.x_coords[r] * cx.y_coords[c]
                for r in range(3)
                for c in range(3)
            )
            assert exy(moved) - exy(masses) == cx.delta_cov_a

    def test_json_payload(self):
        cx = build_mi_counterexample()
        payload = json.loads(cx.to_json())
        assert payload["epsilon"] == "1/64"
        assert payload["delta_pcc_sign"] == 1
        assert payload["delta_mi_a"] > 0 > payload["delta_mi_b"]
