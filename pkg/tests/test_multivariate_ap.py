import itertools
import json

import numpy as np
import pytest

from apoison.dataset import DataTable, FeatureKind, empirical_joint, partition_strata
from apoison.errors import DataError
from apoison.metrics import mcc_binary, mi_binary
from apoison.multivariate_ap import (
    TargetVector,
    multivariate_attack,
    pairwise_ap_pass,
    strata_ap,
    xor_encode,
)


def table_from_rows(rows, names=None):
    arr = np.array(rows, dtype=np.int8)
    d = arr.shape[1]
    names = tuple(names) if names else tuple(f"F{j+1}" for j in range(d))
    return DataTable(names, (FeatureKind.BINARY,) * d, tuple(arr[:, j] for j in range(d)))


def random_table(rng, d, n, p_low=0.25, p_high=0.75):
    probs = rng.uniform(p_low, p_high, size=d)
    cols = tuple((rng.uniform(size=n) < p).astype(np.int8) for p in probs)
    return DataTable(tuple(f"F{j+1}" for j in range(d)), (FeatureKind.BINARY,) * d, cols)


def ones_counts(table):
    return {name: int(table.column(name).sum()) for name in table.names}


def all_pair_joints(table):
    names = sorted(table.names)
    return {
        (a, b): tuple(empirical_joint(table, (a, b)).as_array())
        for a, b in itertools.combinations(names, 2)
    }


class TestXorEncode:
    def test_all_zeros_identity(self):
        table = table_from_rows([(0, 1, 0), (1, 0, 1)])
        assert xor_encode(table, (0, 0, 0)).equals(table)

    def test_flip_middle(self):
        table = table_from_rows([(0, 0, 0)])
        encoded = xor_encode(table, (0, 1, 0))
        assert [int(c[0]) for c in encoded.columns] == [0, 1, 0]

    def test_involution(self):
        rng = np.random.default_rng(31)
        table = random_table(rng, 4, 50)
        v = (1, 0, 1, 1)
        assert xor_encode(xor_encode(table, v), v).equals(table)

    def test_single_flip_negates_mcc(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            table = random_table(rng, 2, 64)
            joint = empirical_joint(table, ("F1", "F2"))
            encoded = xor_encode(table, (0, 1))
            flipped = empirical_joint(encoded, ("F1", "F2"))
            try:
                assert mcc_binary(flipped) == pytest.approx(-mcc_binary(joint), abs=1e-12)
            except DataError:
                continue  # degenerate marginal in a random draw

    def test_length_mismatch(self):
        table = table_from_rows([(0, 1)])
        with pytest.raises(DataError):
            xor_encode(table, (0, 1, 0))

    def test_target_vector_validation(self):
        with pytest.raises(DataError):
            TargetVector((0, 2))


class TestStrataAp:
    def _counts(self):
        table = table_from_rows(
            [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)]
        )
        return table, partition_strata(table, ("F1", "F2"))

    def test_unit_update(self):
        _, counts = self._counts()
        updated = strata_ap(counts, "0", 1)
        assert updated.counts["0"] == (2, 0, 0, 2)
        assert updated.counts["1"] == (1, 1, 1, 1)

    def test_marginals_preserved(self):
        _, counts = self._counts()
        updated = strata_ap(counts, "1", 1)
        n00, n01, n10, n11 = updated.counts["1"]
        assert (n00 + n01, n10 + n11) == (2, 2)  # x-marginals
        assert (n00 + n10, n01 + n11) == (2, 2)  # y-marginals

    def test_epsilon_bounds(self):
        _, counts = self._counts()
        with pytest.raises(DataError):
            strata_ap(counts, "0", 2)
        with pytest.raises(DataError):
            strata_ap(counts, "0", 0)

    def test_global_counts_shift_only_touched_cells(self):
        _, counts = self._counts()
        updated = strata_ap(counts, "0", 1)
        before = np.array(counts.global_counts())
        after = np.array(updated.global_counts())
        assert (after - before).tolist() == [1, -1, -1, 1]


class TestPairwiseApPass:
    def test_d2_single_stratum(self):
        table = table_from_rows([(0, 0), (0, 1), (1, 0), (1, 1)])
        out, report = pairwise_ap_pass(table, seed=1)
        joint = empirical_joint(out, ("F1", "F2"))
        assert tuple(joint.as_array()) == (0.5, 0.0, 0.0, 0.5)
        assert report.tau_total == 1

    def test_d3_full_combinatorial_cube(self):
        table = table_from_rows([tuple(map(int, f"{i:03b}")) for i in range(8)])
        out, report = pairwise_ap_pass(table, seed=2)
        # after one pass every stratum of every pair has a zero off-diagonal
        for pair in itertools.combinations(sorted(out.names), 2):
            strata = partition_strata(out, pair)
            for cells in strata.counts.values():
                assert min(cells[1], cells[2]) == 0

    def test_pass_monotone_mi_mcc(self):
        # MCC rises unconditionally (tau >= 0 against fixed marginals); MI
        # rises whenever the pair does not start the pass negatively
        # associated -- a negative pair first falls toward independence, so
        # its MI dips exactly on the sign-crossing pass.
        rng = np.random.default_rng(33)
        for _ in range(10):
            table = random_table(rng, 3, 128)
            out, report = pairwise_ap_pass(table, seed=3)
            for pair in itertools.combinations(sorted(table.names), 2):
                before = empirical_joint(table, pair)
                after = empirical_joint(out, pair)
                mcc_before = mcc_binary(before)
                assert mcc_binary(after) >= mcc_before - 1e-12
                if mcc_before >= 0.0:
                    assert mi_binary(after) >= mi_binary(before) - 1e-12
                else:
                    assert mcc_binary(after) >= mcc_before  # crossing toward 0

    def test_third_party_joints_exact_after_single_pair_sweep(self):
        rng = np.random.default_rng(34)
        table = random_table(rng, 5, 200)
        out, _ = pairwise_ap_pass(table, features=("F2", "F4"), seed=4)
        before = all_pair_joints(table)
        after = all_pair_joints(out)
        for pair in before:
            if pair == ("F2", "F4"):
                continue
            assert before[pair] == after[pair]

    def test_log_lines(self):
        table = table_from_rows([(0, 0), (0, 1), (1, 0), (1, 1)])
        _, report = pairwise_ap_pass(table, seed=1, pass_index=3)
        line = json.loads(report.to_json_lines().splitlines()[0])
        assert line == {"pass": 3, "pair": ["F1", "F2"], "tau": 1, "strata_touched": 1}


class TestMultivariateAttack:
    def test_d2_reduces_to_maximal_pair_attack(self):
        rng = np.random.default_rng(35)
        table = random_table(rng, 2, 100)
        out, _ = multivariate_attack(table, (0, 0), seed=5)
        counts = partition_strata(table, ("F1", "F2")).counts[""]
        eps = min(counts[1], counts[2])
        expected = (counts[0] + eps, counts[1] - eps, counts[2] - eps, counts[3] + eps)
        assert partition_strata(out, ("F1", "F2")).counts[""] == expected

    def test_marginals_exact(self):
        rng = np.random.default_rng(36)
        for _ in range(10):
            d = int(rng.integers(2, 6))
            table = random_table(rng, d, int(rng.integers(32, 200)))
            v = tuple(rng.integers(0, 2, size=d).tolist())
            out, _ = multivariate_attack(table, v, seed=6)
            assert ones_counts(out) == ones_counts(table)

    def test_sign_pattern_010(self):
        rng = np.random.default_rng(37)
        table = random_table(rng, 3, 256, p_low=0.4, p_high=0.6)
        out, _ = multivariate_attack(table, (0, 1, 0), seed=7)
        deltas = {}
        for pair in (("F1", "F3"), ("F1", "F2"), ("F2", "F3")):
            deltas[pair] = mcc_binary(empirical_joint(out, pair)) - mcc_binary(
                empirical_joint(table, pair)
            )
        assert deltas[("F1", "F3")] > 0
        assert deltas[("F1", "F2")] < 0
        assert deltas[("F2", "F3")] < 0

    def test_termination_and_pass_bound(self):
        rng = np.random.default_rng(38)
        for _ in range(25):
            d = int(rng.integers(2, 6))
            n = int(rng.integers(16, 128))
            table = random_table(rng, d, n)
            encoded_deficit = 0
            for pair in itertools.combinations(sorted(table.names), 2):
                for cells in partition_strata(table, pair).counts.values():
                    encoded_deficit += min(cells[1], cells[2])
            out, passes = multivariate_attack(table, (0,) * d, seed=8)
            assert len(passes) <= max(encoded_deficit, 1)
            # terminal state: every stratum of every pair has a zero off-diagonal
            for pair in itertools.combinations(sorted(out.names), 2):
                for cells in partition_strata(out, pair).counts.values():
                    assert min(cells[1], cells[2]) == 0

    def test_terminal_input_zero_passes(self):
        table = table_from_rows([(0, 0), (0, 0), (1, 1)])
        out, passes = multivariate_attack(table, (0, 0), seed=9)
        assert passes == ()
        assert out.equals(table)

    def test_xor_conjugation_identity(self):
        rng = np.random.default_rng(39)
        table = random_table(rng, 3, 64)
        v = (0, 1, 1)
        direct, _ = multivariate_attack(table, v, seed=10)
        encoded = xor_encode(table, v)
        attacked, _ = multivariate_attack(encoded, (0, 0, 0), seed=10)
        conjugated = xor_encode(attacked, v)
        assert direct.equals(conjugated)

    def test_mi_mcc_nondecreasing_every_pass(self):
        rng = np.random.default_rng(40)
        for _ in range(5):
            table = random_table(rng, 4, 150)
            encoded = table
            while True:
                after, report = pairwise_ap_pass(encoded, seed=11)
                if report.tau_total == 0:
                    break
                for pair in itertools.combinations(sorted(table.names), 2):
                    mcc_before = mcc_binary(empirical_joint(encoded, pair))
                    mcc_after = mcc_binary(empirical_joint(after, pair))
                    assert mcc_after >= mcc_before - 1e-12
                    if mcc_before >= 0.0:
                        assert mi_binary(empirical_joint(after, pair)) >= (
                            mi_binary(empirical_joint(encoded, pair)) - 1e-12
                        )
                encoded = after

    def test_rejects_continuous_columns(self):
        table = DataTable(
            ("a", "b", "x"),
            (FeatureKind.BINARY, FeatureKind.BINARY, FeatureKind.CONTINUOUS),
            (np.array([0, 1]), np.array([1, 0]), np.array([0.5, 0.5])),
        )
        with pytest.raises(DataError):
            multivariate_attack(table, (0, 0), features=("a", "b"), seed=1)
