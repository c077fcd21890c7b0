import math

import numpy as np
import pytest

from apoison.dataset import DataTable, FeatureKind

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str = ""):
        line = f"{name}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# ---------------------------------------------------------------- fixtures


def binary_table(counts, names=("f1", "f2"), seed=None, splits=None):
    """A two-column binary table with the given (n00, n01, n10, n11) cells,
    optionally shuffled."""
    rows = []
    for (x, y), n in zip(((0, 0), (0, 1), (1, 0), (1, 1)), counts):
        rows.extend([(x, y)] * n)
    arr = np.array(rows, dtype=np.int8)
    if seed is not None:
        arr = arr[np.random.default_rng(seed).permutation(len(arr))]
    return DataTable(
        names=tuple(names),
        kinds=(FeatureKind.BINARY, FeatureKind.BINARY),
        columns=(arr[:, 0], arr[:, 1]),
        splits=splits,
    )


def attack_table(train_counts, pool_counts, names=("f1", "f2"), seed=0):
    """Train rows with ``train_counts`` cells plus a test-split pool with
    ``pool_counts`` cells."""
    train = binary_table(train_counts, names, seed=seed)
    pool = binary_table(pool_counts, names, seed=seed + 1)
    cols = tuple(
        np.concatenate([a, b]) for a, b in zip(train.columns, pool.columns)
    )
    splits = np.concatenate(
        [np.zeros(train.n_rows, dtype=np.int8), np.full(pool.n_rows, 2, dtype=np.int8)]
    )
    return DataTable(train.names, train.kinds, cols, splits)


def random_joint(rng, floor=0.0):
    """A random valid 2x2 joint (Dirichlet), optionally with a cell floor."""
    p = rng.dirichlet(np.ones(4))
    if floor:
        p = (p + floor) / (1.0 + 4 * floor)
    return p


# ----------------------------------------------------------------- oracles


def mi_oracle(p00, p01, p10, p11):
    """Definition-level binary MI, independent of the library code path."""
    total = 0.0
    for pij, pi, qj in (
        (p00, p00 + p01, p00 + p10),
        (p01, p00 + p01, p01 + p11),
        (p10, p10 + p11, p00 + p10),
        (p11, p10 + p11, p01 + p11),
    ):
        if pij > 0:
            total += pij * math.log(pij / (pi * qj))
    return total


def cmi_oracle(p):
    """I(F1;F2|F3) by one direct sum over all 8 cells."""
    p = np.asarray(p, dtype=float).reshape(2, 2, 2)
    pz = p.sum(axis=(0, 1))
    pxz = p.sum(axis=1)
    pyz = p.sum(axis=0)
    total = 0.0
    for x in (0, 1):
        for y in (0, 1):
            for z in (0, 1):
                if p[x, y, z] > 0:
                    total += p[x, y, z] * math.log(
                        p[x, y, z] * pz[z] / (pxz[x, z] * pyz[y, z])
                    )
    return total


def cov_oracle(x, y):
    """Plain-Python covariance sum (1/n convention)."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    return sum((a - mx) * (b - my) for a, b in zip(x, y)) / n


def grid_mi_oracle(masses):
    """Definition-level MI of a discrete grid joint (plain loops)."""
    masses = [[float(v) for v in row] for row in masses]
    total = sum(sum(row) for row in masses)
    px = [sum(row) / total for row in masses]
    py = [sum(masses[r][c] for r in range(len(masses))) / total for c in range(len(masses[0]))]
    out = 0.0
    for r, row in enumerate(masses):
        for c, m in enumerate(row):
            p = m / total
            if p > 0:
                out += p * math.log(p / (px[r] * py[c]))
    return out
