"""Association and significance measures.

All information quantities use natural logarithms (nats) and the convention
0*ln(0) = 0.  For a 2x2 joint over binary features (F1, F2) the cells are

    p00 = P(F1=0, F2=0)    p01 = P(F1=0, F2=1)
    p10 = P(F1=1, F2=0)    p11 = P(F1=1, F2=1)

with marginal orientation fixed as u = P(F1=0) = p00+p01 and
v = P(F2=0) = p00+p10 throughout the package.

Continuous-pair moments use the 1/n convention for variances and
covariances.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, ndtr
from scipy.stats import rankdata

from .errors import DataError, DegenerateMarginalError, ZeroVarianceError

__all__ = [
    "BinaryJoint",
    "ContinuousPair",
    "AssociationReport",
    "MwuResult",
    "mi_binary",
    "mcc_binary",
    "pcc",
    "knn_mi",
    "conditional_mi_binary",
    "interaction_information_binary",
    "mwu_test",
]

_SUM_TOL = 1e-9

# Exact MWU enumeration is used below this group size; beyond it the
# normal approximation with tie and continuity corrections takes over.
_EXACT_MIN_SIZE = 8
_EXACT_MAX_ARRANGEMENTS = 500_000


@dataclass(frozen=True)
class BinaryJoint:
    """2x2 joint probability table (p00, p01, p10, p11)."""

    p00: float
    p01: float
    p10: float
    p11: float

    def __post_init__(self) -> None:
        cells = self.as_array()
        if not np.all(np.isfinite(cells)):
            raise DataError("joint cells must be finite")
        if np.any(cells < -1e-12) or np.any(cells > 1 + 1e-12):
            raise DataError(f"joint cells must lie in [0, 1], got {cells.tolist()}")
        if abs(float(cells.sum()) - 1.0) > _SUM_TOL:
            raise DataError(f"joint cells must sum to 1, got {float(cells.sum())!r}")

    @classmethod
    def from_counts(cls, n00: int, n01: int, n10: int, n11: int) -> "BinaryJoint":
        total = n00 + n01 + n10 + n11
        if total <= 0:
            raise DataError("empty contingency table")
        if min(n00, n01, n10, n11) < 0:
            raise DataError("negative cell count")
        return cls(n00 / total, n01 / total, n10 / total, n11 / total)

    def as_array(self) -> np.ndarray:
        return np.array([self.p00, self.p01, self.p10, self.p11], dtype=float)

    @property
    def marginals(self) -> tuple[float, float, float, float]:
        """(P(F1=0), P(F1=1), P(F2=0), P(F2=1))."""
        return (
            self.p00 + self.p01,
            self.p10 + self.p11,
            self.p00 + self.p10,
            self.p01 + self.p11,
        )


@dataclass(frozen=True)
class ContinuousPair:
    """Two aligned continuous features with values in [0, 1]."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True)
        if x.ndim != 1 or y.ndim != 1:
            raise DataError("continuous pair values must be one-dimensional")
        if len(x) != len(y):
            raise DataError(f"length mismatch: {len(x)} vs {len(y)}")
        if len(x) < 2:
            raise DataError("continuous pair needs at least 2 samples")
        for name, arr in (("x", x), ("y", y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite value in {name}")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise DataError(f"{name} values must lie in [0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.x)

    @cached_property
    def mu_x(self) -> float:
        return float(np.mean(self.x))

    @cached_property
    def mu_y(self) -> float:
        return float(np.mean(self.y))

    @cached_property
    def sigma_x(self) -> float:
        return float(np.sqrt(np.mean((self.x - self.mu_x) ** 2)))

    @cached_property
    def sigma_y(self) -> float:
        return float(np.sqrt(np.mean((self.y - self.mu_y) ** 2)))

    @cached_property
    def cov(self) -> float:
        return float(np.mean((self.x - self.mu_x) * (self.y - self.mu_y)))


@dataclass(frozen=True)
class AssociationReport:
    """One measured association value plus estimator parameters."""

    metric: str
    pair: tuple[str, str]
    value: float
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "pair": list(self.pair),
            "value": self.value,
            "params": dict(self.params),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class MwuResult:
    """Mann-Whitney U statistic (a-greater direction) and p-values."""

    u: float
    p_greater: float
    p_less: float
    p_two_sided: float

    def to_dict(self) -> dict:
        return {
            "u": self.u,
            "p_greater": self.p_greater,
            "p_less": self.p_less,
            "p_two_sided": self.p_two_sided,
        }


def mi_binary(joint: BinaryJoint) -> float:
    """Exact mutual information of a 2x2 joint, in nats.

    MI = sum_ij p_ij * ln(p_ij / (p_i. * p_.j)), nonnegative by Jensen;
    tiny negative roundoff is clamped to 0.
    """
    u0, u1, v0, v1 = joint.marginals
    row = (u0, u0, u1, u1)
    col = (v0, v1, v0, v1)
    total = 0.0
    for pij, pi, qj in zip(joint.as_array(), row, col):
        if pij > 0.0:
            total += pij * math.log(pij / (pi * qj))
    return total if total > 0.0 else 0.0


def mcc_binary(joint: BinaryJoint) -> float:
    """Matthews correlation coefficient of a 2x2 joint.

    (p00*p11 - p10*p01) / sqrt(p0.*p1.*p.0*p.1); requires all four
    marginals strictly positive.
    """
    u0, u1, v0, v1 = joint.marginals
    if min(u0, u1, v0, v1) <= 0.0:
        raise DegenerateMarginalError(
            f"MCC undefined: zero marginal in (P(F1=0), P(F1=1), P(F2=0), P(F2=1)) = "
            f"({u0}, {u1}, {v0}, {v1})"
        )
    value = (joint.p00 * joint.p11 - joint.p10 * joint.p01) / math.sqrt(u0 * u1 * v0 * v1)
    return min(1.0, max(-1.0, value))


def pcc(pair: ContinuousPair) -> float:
    """Pearson correlation coefficient, cov/(sigma_x*sigma_y)."""
    if pair.sigma_x == 0.0:
        raise ZeroVarianceError("PCC undefined: feature x has zero variance")
    if pair.sigma_y == 0.0:
        raise ZeroVarianceError("PCC undefined: feature y has zero variance")
    value = pair.cov / (pair.sigma_x * pair.sigma_y)
    return min(1.0, max(-1.0, value))


def knn_mi(pair: ContinuousPair, k: int = 3) -> float:
    """k-nearest-neighbour mutual information estimate, in nats.

    Kraskov-Stoegbauer-Grassberger variant 1: with eps_i the Chebyshev
    distance to the k-th joint neighbour of point i, and n_x(i), n_y(i)
    the counts of points strictly within eps_i along each marginal,

        MI ~= psi(k) + psi(n) - mean_i[psi(n_x(i)+1) + psi(n_y(i)+1)]

    Negative estimates are clamped to 0.  Deterministic: no noise is
    added to the inputs, so duplicate-heavy data (e.g. y identical to x)
    sits in the estimator's divergent regime and is reported as-is.
    """
    n = len(pair)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k >= n:
        raise DataError(f"k must be < number of samples ({n}), got {k}")
    points = np.column_stack([pair.x, pair.y])
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=k + 1, p=np.inf)
    eps = dist[:, k]

    def strict_counts(values: np.ndarray) -> np.ndarray:
        order = np.sort(values)
        upper = np.searchsorted(order, values + eps, side="left")
        lower = np.searchsorted(order, values - eps, side="right")
        counts = upper - lower - 1  # open interval always contains self
        return np.where(eps > 0.0, counts, 0)

    nx = strict_counts(pair.x)
    ny = strict_counts(pair.y)
    est = float(digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1)))
    return est if est > 0.0 else 0.0


def _as_joint3(joint3) -> np.ndarray:
    p = np.asarray(joint3, dtype=float)
    if p.size != 8:
        raise DataError(f"expected 8 cells over (F1, F2, F3), got {p.size}")
    p = p.reshape(2, 2, 2)
    if np.any(p < -1e-12):
        raise DataError("joint cells must be nonnegative")
    if abs(float(p.sum()) - 1.0) > _SUM_TOL:
        raise DataError(f"joint cells must sum to 1, got {float(p.sum())!r}")
    return p


def conditional_mi_binary(joint3) -> float:
    """I(F1;F2|F3) for an eight-cell table indexed [f1, f2, f3].

    Sum over z of P(F3=z) times the MI of the conditional 2x2 table;
    conditioning events of probability zero contribute nothing.
    """
    p = _as_joint3(joint3)
    total = 0.0
    for z in (0, 1):
        pz = float(p[:, :, z].sum())
        if pz <= 0.0:
            continue
        cond = p[:, :, z] / pz
        total += pz * mi_binary(
            BinaryJoint(cond[0, 0], cond[0, 1], cond[1, 0], cond[1, 1])
        )
    return total


def interaction_information_binary(joint3) -> float:
    """Interaction information I(F1;F2|F3) - I(F1;F2).

    Sign convention: positive values indicate synergy (conditioning on F3
    reveals dependence), negative values redundancy.
    """
    p = _as_joint3(joint3)
    pxy = p.sum(axis=2)
    pair_mi = mi_binary(BinaryJoint(pxy[0, 0], pxy[0, 1], pxy[1, 0], pxy[1, 1]))
    return conditional_mi_binary(p) - pair_mi


def _mwu_exact(ranks: np.ndarray, n_a: int, u_obs: float) -> tuple[float, float]:
    """Enumerate all assignments of group a's positions among the pooled
    midranks; returns (p_greater, p_less) with the observed point included."""
    offset = n_a * (n_a + 1) / 2.0
    n_ge = 0
    n_le = 0
    total = 0
    for combo in itertools.combinations(range(len(ranks)), n_a):
        u = ranks[list(combo)].sum() - offset
        total += 1
        if u >= u_obs - 1e-9:
            n_ge += 1
        if u <= u_obs + 1e-9:
            n_le += 1
    return n_ge / total, n_le / total


def mwu_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> MwuResult:
    """Mann-Whitney U test of two independent samples.

    U is the a-greater statistic computed via midranks.  For
    min(n_a, n_b) < 8 the null distribution is enumerated exactly
    (midranks make this valid under ties); otherwise a normal
    approximation with tie and continuity corrections is used.
    p_greater tests "a stochastically greater than b";
    p_two_sided = min(1, 2*min(p_greater, p_less)).
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DataError("both samples must be nonempty")
    n_a, n_b = a.size, b.size
    n = n_a + n_b
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled, method="average")
    u = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)

    if min(n_a, n_b) < _EXACT_MIN_SIZE and math.comb(n, n_a) <= _EXACT_MAX_ARRANGEMENTS:
        p_greater, p_less = _mwu_exact(ranks, n_a, u)
    else:
        mu = n_a * n_b / 2.0
        _, tie_counts = np.unique(pooled, return_counts=True)
        tie_term = float(np.sum(tie_counts**3 - tie_counts))
        var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
        if var <= 0.0:
            p_greater = p_less = 1.0  # all observations tied
        else:
            sd = math.sqrt(var)
            p_greater = float(1.0 - ndtr((u - mu - 0.5) / sd))
            p_less = float(ndtr((u - mu + 0.5) / sd))
    p_two = min(1.0, 2.0 * min(p_greater, p_less))
    return MwuResult(u=u, p_greater=p_greater, p_less=p_less, p_two_sided=p_two)
