"""Baseline detectors and desk-scale generative demos.

Detectors compare a suspect table against statistics stored from the clean
one: Level 0 the row count, Level 1 per-feature marginals (binary) or
means (continuous), Level 2 additionally every pairwise statistic -- exact
2x2 joints for binary pairs, Pearson correlations for continuous pairs.
Margin-preserving pair attacks pass Levels 0-1 at zero tolerance by
construction and surface only at Level 2.

Toy generators stand in for large generative models at desk scale: the
binary kind stores and resamples the exact empirical joint over all
feature patterns (d <= 12), the copula kind pairs empirical per-feature
quantile maps with a Gaussian copula on the observed correlation matrix.
They capture the fitted distribution essentially perfectly, so whatever
association the attack planted in the training rows reappears in sampled
data; the end-to-end demo quantifies that with rank-sum comparisons of
clean-fit versus poisoned-fit sampling runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._rng import derive_rng, derive_seed
from .binary_ap import BinaryAttackSpec, run_binary_attack
from .continuous_ap import ContinuousAttackSpec, poison_continuous_table
from .dataset import DataTable, FeatureKind, empirical_joint, select_split
from .errors import ConfigError, DataError
from .metrics import (
    ContinuousPair,
    MwuResult,
    knn_mi,
    mcc_binary,
    mi_binary,
    mwu_test,
    pcc,
)

__all__ = [
    "TolerancePolicy",
    "DetectorBaseline",
    "Violation",
    "DetectorVerdict",
    "ToyGeneratorModel",
    "MetricComparison",
    "DemoReport",
    "build_baseline",
    "run_detector",
    "fit_toy_generator",
    "sample_toy_generator",
    "end_to_end_demo",
]

MAX_CONTINGENCY_FEATURES = 12


@dataclass(frozen=True)
class TolerancePolicy:
    """Absolute tolerances per statistic family.

    ``None`` selects the statistical default: 3 standard errors for
    continuous means, 3/sqrt(N) for correlations.  Count-exact statistics
    (size, binary marginals, binary joints) default to zero.
    """

    size: float = 0.0
    binary_marginal: float = 0.0
    binary_joint: float = 0.0
    continuous_mean: float | None = None
    correlation: float | None = None


@dataclass(frozen=True)
class Violation:
    statistic: str
    features: tuple[str, ...]
    baseline: float
    suspect: float
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "features": list(self.features),
            "baseline": self.baseline,
            "suspect": self.suspect,
            "tolerance": self.tolerance,
        }


@dataclass(frozen=True)
class DetectorVerdict:
    passed: bool
    violations: tuple[Violation, ...]

    @property
    def flagged_pairs(self) -> tuple[tuple[str, str], ...]:
        pairs = {v.features for v in self.violations if len(v.features) == 2}
        return tuple(sorted(pairs))

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "flagged",
            "violations": [v.to_dict() for v in self.violations],
        }


@dataclass(frozen=True)
class DetectorBaseline:
    """Clean-table statistics for one detector level (0, 1, or 2).

    A level-k baseline carries every level-(k-1) statistic as well.
    """

    level: int
    schema: tuple[tuple[str, str], ...]
    n_rows: int
    size_tolerance: float
    marginals: dict[str, tuple[float, float]] = field(default_factory=dict)
    joints: dict[tuple[str, str], tuple[tuple[float, float, float, float], float]] = field(default_factory=dict)
    correlations: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)

    def statistic_count(self) -> dict[str, int]:
        return {
            "size": 1,
            "marginals": len(self.marginals),
            "pairwise": len(self.joints) + len(self.correlations),
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "level": self.level,
                "schema": [list(item) for item in self.schema],
                "n_rows": self.n_rows,
                "size_tolerance": self.size_tolerance,
                "marginals": {k: list(v) for k, v in self.marginals.items()},
                "joints": {"|".join(k): [list(v[0]), v[1]] for k, v in self.joints.items()},
                "correlations": {"|".join(k): list(v) for k, v in self.correlations.items()},
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DetectorBaseline":
        raw = json.loads(text)
        return cls(
            level=int(raw["level"]),
            schema=tuple((n, k) for n, k in raw["schema"]),
            n_rows=int(raw["n_rows"]),
            size_tolerance=float(raw["size_tolerance"]),
            marginals={k: tuple(v) for k, v in raw["marginals"].items()},
            joints={
                tuple(k.split("|")): (tuple(v[0]), float(v[1]))
                for k, v in raw["joints"].items()
            },
            correlations={tuple(k.split("|")): tuple(v) for k, v in raw["correlations"].items()},
        )


def _marginal(table: DataTable, name: str) -> float:
    col = table.column(name)
    if table.kind(name) is FeatureKind.BINARY:
        return float(np.count_nonzero(col)) / table.n_rows
    return float(np.mean(col))


def build_baseline(
    clean: DataTable, level: int, tolerances: TolerancePolicy | None = None
) -> DetectorBaseline:
    """Record the clean table's statistics for the requested level."""
    if level not in (0, 1, 2):
        raise ConfigError(f"detector level must be 0, 1, or 2, got {level}")
    tol = tolerances or TolerancePolicy()
    n = clean.n_rows
    marginals: dict[str, tuple[float, float]] = {}
    joints: dict[tuple[str, str], tuple[tuple[float, float, float, float], float]] = {}
    correlations: dict[tuple[str, str], tuple[float, float]] = {}
    if level >= 1:
        for name, kind in zip(clean.names, clean.kinds):
            if kind is FeatureKind.BINARY:
                marginals[name] = (_marginal(clean, name), tol.binary_marginal)
            else:
                col = clean.column(name)
                se = float(np.std(col)) / math.sqrt(n)
                t = tol.continuous_mean if tol.continuous_mean is not None else 3.0 * se
                marginals[name] = (float(np.mean(col)), t)
    if level >= 2:
        binary = tuple(sorted(clean.binary_names()))
        for i, a in enumerate(binary):
            for b in binary[i + 1 :]:
                joint = empirical_joint(clean, (a, b))
                joints[(a, b)] = (tuple(joint.as_array().tolist()), tol.binary_joint)
        continuous = tuple(sorted(clean.continuous_names()))
        corr_tol = tol.correlation if tol.correlation is not None else 3.0 / math.sqrt(n)
        for i, a in enumerate(continuous):
            for b in continuous[i + 1 :]:
                value = pcc(ContinuousPair(clean.column(a), clean.column(b)))
                correlations[(a, b)] = (value, corr_tol)
    return DetectorBaseline(
        level=level,
        schema=tuple(zip(clean.names, (k.value for k in clean.kinds))),
        n_rows=n,
        size_tolerance=tol.size,
        marginals=marginals,
        joints=joints,
        correlations=correlations,
    )


def run_detector(baseline: DetectorBaseline, suspect: DataTable) -> DetectorVerdict:
    """Flag iff any stored statistic deviates beyond its tolerance."""
    schema = tuple(zip(suspect.names, (k.value for k in suspect.kinds)))
    if schema != baseline.schema:
        raise DataError("suspect schema does not match the baseline schema")
    violations: list[Violation] = []
    if abs(suspect.n_rows - baseline.n_rows) > baseline.size_tolerance:
        violations.append(
            Violation("size", (), float(baseline.n_rows), float(suspect.n_rows), baseline.size_tolerance)
        )
    for name, (value, tol) in baseline.marginals.items():
        observed = _marginal(suspect, name)
        if abs(observed - value) > tol:
            violations.append(Violation("marginal", (name,), value, observed, tol))
    for (a, b), (cells, tol) in baseline.joints.items():
        observed = empirical_joint(suspect, (a, b)).as_array()
        worst = int(np.argmax(np.abs(observed - np.asarray(cells))))
        if abs(observed[worst] - cells[worst]) > tol:
            violations.append(
                Violation("joint", (a, b), cells[worst], float(observed[worst]), tol)
            )
    for (a, b), (value, tol) in baseline.correlations.items():
        observed = pcc(ContinuousPair(suspect.column(a), suspect.column(b)))
        if abs(observed - value) > tol:
            violations.append(Violation("correlation", (a, b), value, observed, tol))
    return DetectorVerdict(passed=not violations, violations=tuple(violations))


@dataclass(frozen=True)
class ToyGeneratorModel:
    """Fit-and-sample stand-in for a trained generator.

    kind "binary-contingency": the exact empirical distribution over all
    2^d feature patterns.  kind "gaussian-copula": per-feature empirical
    quantile maps plus the (PSD-clipped) correlation matrix.
    """

    kind: str
    names: tuple[str, ...]
    n_fit: int
    probabilities: np.ndarray | None = None
    quantiles: tuple[np.ndarray, ...] | None = None
    correlation: np.ndarray | None = None


def _clip_psd(corr: np.ndarray) -> np.ndarray:
    corr = (corr + corr.T) / 2.0
    eigval, eigvec = np.linalg.eigh(corr)
    eigval = np.clip(eigval, 0.0, None)
    fixed = eigvec @ np.diag(eigval) @ eigvec.T
    scale = np.sqrt(np.clip(np.diag(fixed), 1e-12, None))
    fixed = fixed / np.outer(scale, scale)
    np.fill_diagonal(fixed, 1.0)
    return (fixed + fixed.T) / 2.0


def fit_toy_generator(table: DataTable, kind: str) -> ToyGeneratorModel:
    if kind == "binary-contingency":
        if set(table.kinds) != {FeatureKind.BINARY}:
            raise DataError("binary-contingency generator requires all-binary columns")
        d = table.n_cols
        if d > MAX_CONTINGENCY_FEATURES:
            raise DataError(
                f"binary-contingency generator supports at most {MAX_CONTINGENCY_FEATURES} features, got {d}"
            )
        codes = np.zeros(table.n_rows, dtype=np.int64)
        for j, col in enumerate(table.columns):
            codes |= col.astype(np.int64) << j
        probs = np.bincount(codes, minlength=2**d).astype(float) / table.n_rows
        return ToyGeneratorModel(
            kind=kind, names=table.names, n_fit=table.n_rows, probabilities=probs
        )
    if kind == "gaussian-copula":
        if set(table.kinds) != {FeatureKind.CONTINUOUS}:
            raise DataError("gaussian-copula generator requires all-continuous columns")
        quantiles = tuple(np.sort(col) for col in table.columns)
        data = np.column_stack(table.columns)
        if data.shape[1] == 1:
            corr = np.ones((1, 1))
        else:
            corr = _clip_psd(np.corrcoef(data, rowvar=False))
        return ToyGeneratorModel(
            kind=kind,
            names=table.names,
            n_fit=table.n_rows,
            quantiles=quantiles,
            correlation=corr,
        )
    raise ConfigError(f"unknown generator kind {kind!r}")


def sample_toy_generator(model: ToyGeneratorModel, n: int, seed: int) -> DataTable:
    """n i.i.d. draws from the fitted model; deterministic per seed."""
    if n < 1:
        raise DataError(f"sample size must be >= 1, got {n}")
    rng = derive_rng(seed, "toy-sample", model.kind)
    d = len(model.names)
    if model.kind == "binary-contingency":
        codes = rng.choice(len(model.probabilities), size=n, p=model.probabilities)
        cols = tuple(((codes >> j) & 1).astype(np.int8) for j in range(d))
        kinds = (FeatureKind.BINARY,) * d
        return DataTable(model.names, kinds, cols)
    eigval, eigvec = np.linalg.eigh(model.correlation)
    factor = eigvec @ np.diag(np.sqrt(np.clip(eigval, 0.0, None)))
    z = rng.standard_normal((n, d)) @ factor.T
    u = ndtr(z)
    cols = tuple(
        np.quantile(model.quantiles[j], u[:, j], method="linear") for j in range(d)
    )
    kinds = (FeatureKind.CONTINUOUS,) * d
    return DataTable(model.names, kinds, cols)


@dataclass(frozen=True)
class MetricComparison:
    metric: str
    clean: tuple[float, ...]
    poisoned: tuple[float, ...]
    mwu: MwuResult

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "clean": list(self.clean),
            "poisoned": list(self.poisoned),
            "mwu": {
                "p_greater": self.mwu.p_greater,
                "p_less": self.mwu.p_less,
                "p_two_sided": self.mwu.p_two_sided,
            },
        }


@dataclass(frozen=True)
class DemoReport:
    pair: tuple[str, str]
    repetitions: int
    sample_size: int
    fidelity: tuple[MetricComparison, ...]
    stealth: tuple[MetricComparison, ...]

    def comparison(self, metric: str) -> MetricComparison:
        for item in self.fidelity + self.stealth:
            if item.metric == metric:
                return item
        raise KeyError(metric)

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "repetitions": self.repetitions,
            "sample_size": self.sample_size,
            "fidelity": [c.to_dict() for c in self.fidelity],
            "stealth": [c.to_dict() for c in self.stealth],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _pair_measures(table: DataTable, pair: tuple[str, str], k: int) -> dict[str, float]:
    a, b = pair
    if table.kind(a) is FeatureKind.BINARY:
        joint = empirical_joint(table, pair)
        return {
            "MI": mi_binary(joint),
            "MCC": mcc_binary(joint),
            f"marginal:{a}": _marginal(table, a),
            f"marginal:{b}": _marginal(table, b),
        }
    cp = ContinuousPair(table.column(a), table.column(b))
    return {
        "kNN-MI": knn_mi(cp, k),
        "PCC": pcc(cp),
        f"mean:{a}": _marginal(table, a),
        f"mean:{b}": _marginal(table, b),
    }


def end_to_end_demo(
    clean: DataTable,
    attack_spec: BinaryAttackSpec | ContinuousAttackSpec | None,
    repetitions: int,
    *,
    sample_size: int = 10_000,
    base_seed: int = 0,
    k: int = 3,
) -> DemoReport:
    """Fit-and-sample both arms and compare fidelity and stealth metrics.

    Each arm fits a toy generator on its training rows and draws
    ``repetitions`` independent samples (seeds base_seed + i); rank-sum
    tests compare the per-sample metrics between arms.  ``attack_spec``
    None runs a zero-extent control where both arms fit the same table.
    """
    if repetitions < 2:
        raise ConfigError(f"need at least 2 repetitions per arm, got {repetitions}")
    if attack_spec is None:
        poisoned = clean
        pair = None
    elif isinstance(attack_spec, BinaryAttackSpec):
        poisoned, _ = run_binary_attack(clean, attack_spec)
        pair = attack_spec.pair
    elif isinstance(attack_spec, ContinuousAttackSpec):
        poisoned, _ = poison_continuous_table(clean, attack_spec)
        pair = attack_spec.pair
    else:
        raise ConfigError(f"unsupported attack spec {type(attack_spec).__name__}")
    if pair is None:
        pair = clean.names[:2]

    kind = (
        "binary-contingency"
        if clean.kind(pair[0]) is FeatureKind.BINARY
        else "gaussian-copula"
    )
    fidelity_names = ("MI", "MCC") if kind == "binary-contingency" else ("kNN-MI", "PCC")

    values: dict[str, dict[str, list[float]]] = {"clean": {}, "poisoned": {}}
    for arm, source in (("clean", clean), ("poisoned", poisoned)):
        fit_data = select_split(source, "train") if source.has_splits else source
        fit_cols = [fit_data.index(name) for name in pair]
        fit_pair = DataTable(
            tuple(pair),
            tuple(fit_data.kinds[i] for i in fit_cols),
            tuple(fit_data.columns[i] for i in fit_cols),
        )
        model = fit_toy_generator(fit_pair, kind)
        for i in range(repetitions):
            sample = sample_toy_generator(model, sample_size, derive_seed(base_seed, "demo", arm, i))
            for name, value in _pair_measures(sample, tuple(pair), k).items():
                values[arm].setdefault(name, []).append(value)

    comparisons = {
        name: MetricComparison(
            metric=name,
            clean=tuple(values["clean"][name]),
            poisoned=tuple(values["poisoned"][name]),
            mwu=mwu_test(values["clean"][name], values["poisoned"][name]),
        )
        for name in values["clean"]
    }
    fidelity = tuple(comparisons[name] for name in fidelity_names)
    stealth = tuple(c for name, c in comparisons.items() if name not in fidelity_names)
    return DemoReport(
        pair=tuple(pair),
        repetitions=repetitions,
        sample_size=sample_size,
        fidelity=fidelity,
        stealth=stealth,
    )
