"""Command-line front end.

One JSON config document describes a run; flags override config values.
Subcommands: poison, metrics, detect, generate, simulate, counterexample.
Exit codes: 0 success, 2 config error, 3 data error, 4 infeasible attack.
All randomness derives from the single config seed through named streams,
so reruns of the same config are bit-identical on data outputs.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import derive_seed
from .binary_ap import AblationSpec, BinaryAttackSpec, mix_ablation, run_binary_attack
from .continuous_ap import (
    ContinuousAttackSpec,
    build_mi_counterexample,
    poison_continuous_table,
)
from .dataset import (
    DataTable,
    FeatureKind,
    empirical_joint,
    load_table,
    save_table,
    select_split,
    split_table,
    take,
)
from .errors import ApoisonError, ConfigError, DataError, InfeasibleAttackError
from .metrics import (
    AssociationReport,
    ContinuousPair,
    knn_mi,
    mcc_binary,
    mi_binary,
    mwu_test,
    pcc,
)
from .multivariate_ap import multivariate_attack
from .stealth import (
    DetectorBaseline,
    TolerancePolicy,
    build_baseline,
    end_to_end_demo,
    fit_toy_generator,
    run_detector,
    sample_toy_generator,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4


@dataclass
class RunConfig:
    dataset: str
    schema: dict[str, str]
    seed: int
    out: str = "out"
    splits: list[float] | None = None
    attack: dict = field(default_factory=dict)
    detector: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("dataset", "schema", "seed"):
            if key not in raw:
                raise ConfigError(f"config is missing required key {key!r}")
        known = {
            "dataset", "schema", "seed", "out", "splits",
            "attack", "detector", "generator", "ablation", "metrics",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        schema = raw["schema"]
        if not isinstance(schema, dict) or not schema:
            raise ConfigError("schema must be a nonempty object of column -> kind")
        for name, kind in schema.items():
            if kind not in ("binary", "continuous"):
                raise ConfigError(f"schema column {name!r} has unknown kind {kind!r}")
        try:
            seed = int(raw["seed"])
        except (TypeError, ValueError):
            raise ConfigError(f"seed must be an integer, got {raw['seed']!r}") from None
        cfg = cls(
            dataset=str(raw["dataset"]),
            schema=dict(schema),
            seed=seed,
            out=str(raw.get("out", "out")),
            splits=list(raw["splits"]) if raw.get("splits") is not None else None,
            attack=dict(raw.get("attack") or {}),
            detector=dict(raw.get("detector") or {}),
            generator=dict(raw.get("generator") or {}),
            ablation=dict(raw.get("ablation") or {}),
            metrics=dict(raw.get("metrics") or {}),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for block_name, block in (("attack", self.attack), ("metrics", self.metrics)):
            for pair in self._referenced_pairs(block):
                for name in pair:
                    if name not in self.schema:
                        raise ConfigError(
                            f"{block_name} references column {name!r} not in schema"
                        )
        for name in self.attack.get("features", []):
            if name not in self.schema:
                raise ConfigError(f"attack references column {name!r} not in schema")
        if self.attack:
            kind = self.attack.get("type")
            if kind not in ("binary", "continuous", "multivariate"):
                raise ConfigError(f"attack type must be binary|continuous|multivariate, got {kind!r}")
            if kind in ("binary", "continuous") and "pair" not in self.attack:
                raise ConfigError(f"{kind} attack needs a 'pair'")
            if kind == "binary" and "extent" in self.attack and self.attack["extent"] is not None:
                x = self.attack["extent"]
                if not isinstance(x, (int, float)) or not (0 < float(x) <= 1):
                    raise ConfigError(f"attack extent must lie in (0, 1], got {x!r}")
            if kind == "multivariate":
                if "target" not in self.attack:
                    raise ConfigError("multivariate attack needs a 'target' bit vector")

    @staticmethod
    def _referenced_pairs(block: dict) -> list[tuple[str, str]]:
        pairs = []
        if "pair" in block:
            pairs.append(tuple(block["pair"]))
        for pair in block.get("pairs", []):
            pairs.append(tuple(pair))
        return pairs


def _provenance(cfg: RunConfig) -> dict:
    return {
        "tool": "apoison",
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": cfg.seed,
    }


def _load_dataset(cfg: RunConfig) -> DataTable:
    table = load_table(cfg.dataset, cfg.schema)
    if not table.has_splits:
        if cfg.splits is not None:
            table = split_table(table, cfg.splits, derive_seed(cfg.seed, "split"))
    return table


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pair_metrics(table: DataTable, pair: tuple[str, str], k: int) -> list[AssociationReport]:
    kinds = {table.kind(name) for name in pair}
    if kinds == {FeatureKind.BINARY}:
        joint = empirical_joint(table, pair)
        return [
            AssociationReport("MI", pair, mi_binary(joint)),
            AssociationReport("MCC", pair, mcc_binary(joint)),
        ]
    if kinds == {FeatureKind.CONTINUOUS}:
        cp = ContinuousPair(table.column(pair[0]), table.column(pair[1]))
        return [
            AssociationReport("PCC", pair, pcc(cp)),
            AssociationReport("kNN-MI", pair, knn_mi(cp, k), {"k": k}),
        ]
    raise ConfigError(f"pair {pair} mixes binary and continuous features")


def _attack_specs(cfg: RunConfig):
    block = cfg.attack
    kind = block["type"]
    common = {
        "seed": int(block.get("seed", cfg.seed)),
        "pool_split": block.get("pool_split", "test"),
        "target_split": block.get("target_split", "train"),
        "allow_duplicates": bool(block.get("allow_duplicates", False)),
    }
    if kind == "binary":
        return BinaryAttackSpec(
            pair=tuple(block["pair"]),
            direction=block.get("direction", "positive"),
            extent=block.get("extent"),
            **common,
        )
    if kind == "continuous":
        return ContinuousAttackSpec(
            pair=tuple(block["pair"]),
            direction=block.get("direction", "positive"),
            mi_refresh=block.get("mi_refresh"),
            k=int(block.get("k", 3)),
            **common,
        )
    return None  # multivariate handled separately


def _run_attack(cfg: RunConfig, table: DataTable):
    """Dispatch the configured attack; returns (poisoned, log_lines, pairs)."""
    kind = cfg.attack["type"]
    if kind == "multivariate":
        features = cfg.attack.get("features") or list(table.binary_names())
        target = cfg.attack["target"]
        seed = int(cfg.attack.get("seed", cfg.seed))
        if table.has_splits:
            rows = table.split_indices(cfg.attack.get("target_split", "train"))
            sub = take(table, rows, keep_splits=False)
            attacked, passes = multivariate_attack(sub, target, features, seed=seed)
            cols = [col.copy() for col in table.columns]
            for j in range(table.n_cols):
                cols[j][rows] = attacked.columns[j]
            poisoned = table.with_columns(cols)
        else:
            poisoned, passes = multivariate_attack(table, target, features, seed=seed)
        log = "\n".join(p.to_json_lines() for p in passes if p.sweeps)
        pairs = [
            (a, b)
            for i, a in enumerate(sorted(features))
            for b in sorted(features)[i + 1 :]
        ]
        return poisoned, log, pairs
    spec = _attack_specs(cfg)
    if isinstance(spec, BinaryAttackSpec):
        poisoned, report = run_binary_attack(table, spec)
    else:
        poisoned, report = poison_continuous_table(table, spec)
    return poisoned, report.to_json_lines(), [tuple(spec.pair)]


def _tolerances(cfg: RunConfig) -> TolerancePolicy:
    block = cfg.detector.get("tolerances", {})
    return TolerancePolicy(
        size=float(block.get("size", 0.0)),
        binary_marginal=float(block.get("binary_marginal", 0.0)),
        binary_joint=float(block.get("binary_joint", 0.0)),
        continuous_mean=block.get("continuous_mean"),
        correlation=block.get("correlation"),
    )


def _scope(table: DataTable, split: str | None) -> DataTable:
    if split is None:
        return table
    return select_split(table, split)


def cmd_poison(cfg: RunConfig) -> dict:
    if not cfg.attack:
        raise ConfigError("poison needs an attack block in the config")
    table = _load_dataset(cfg)
    poisoned, log_lines, pairs = _run_attack(cfg, table)
    out = _out_dir(cfg)
    save_table(poisoned, out / "poisoned.csv")
    (out / "replacements.jsonl").write_text(log_lines + ("\n" if log_lines else ""), encoding="utf-8")

    scope_split = cfg.attack.get("target_split", "train") if table.has_splits else None
    clean_scope = _scope(table, scope_split)
    pois_scope = _scope(poisoned, scope_split)
    k = int(cfg.metrics.get("k", 3))
    fidelity = []
    for pair in pairs:
        fidelity.append(
            {
                "pair": list(pair),
                "before": [r.to_dict() for r in _pair_metrics(clean_scope, pair, k)],
                "after": [r.to_dict() for r in _pair_metrics(pois_scope, pair, k)],
            }
        )
    tol = _tolerances(cfg)
    verdicts = {}
    for level in (0, 1, 2):
        baseline = build_baseline(clean_scope, level, tol)
        verdicts[f"level{level}"] = run_detector(baseline, pois_scope).to_dict()
    marginal_deltas = {}
    for name in poisoned.names:
        col_c = clean_scope.column(name)
        col_p = pois_scope.column(name)
        stat_c = float(np.mean(col_c))
        stat_p = float(np.mean(col_p))
        marginal_deltas[name] = {"clean": stat_c, "poisoned": stat_p, "delta": stat_p - stat_c}
    stealth = {"marginals": marginal_deltas, "detectors": verdicts}
    if cfg.generator:
        spec = _attack_specs(cfg) if cfg.attack["type"] != "multivariate" else None
        if spec is not None:
            demo = end_to_end_demo(
                table,
                spec,
                int(cfg.generator.get("repetitions", 10)),
                sample_size=int(cfg.generator.get("sample_size", 10_000)),
                base_seed=derive_seed(cfg.seed, "demo"),
                k=k,
            )
            stealth["mwu_demo"] = demo.to_dict()
    report = {
        "config": {"dataset": cfg.dataset, "attack": cfg.attack, "seed": cfg.seed},
        "fidelity": fidelity,
        "stealth": stealth,
        "outputs": {"poisoned_csv": str(out / "poisoned.csv")},
        "provenance": _provenance(cfg),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    return report

def cmd_metrics(cfg: RunConfig) -> dict:
    table = _load_dataset(cfg)
    block = cfg.metrics
    split = block.get("split")
    scope = _scope(table, split) if table.has_splits and split else table
    pairs = [tuple(p) for p in block.get("pairs", [])]
    if not pairs:
        binary = scope.binary_names()
        pairs = [(a, b) for i, a in enumerate(binary) for b in binary[i + 1 :]]
        continuous = scope.continuous_names()
        pairs += [(a, b) for i, a in enumerate(continuous) for b in continuous[i + 1 :]]
    if not pairs:
        raise ConfigError("no measurable pairs: give metrics.pairs explicitly")
    k = int(block.get("k", 3))
    reports = []
    for pair in pairs:
        reports.extend(r.to_dict() for r in _pair_metrics(scope, pair, k))
    out = _out_dir(cfg)
    report = {
        "config": {"dataset": cfg.dataset, "split": split, "k": k},
        "metrics": reports,
        "provenance": _provenance(cfg),
    }
    (out / "metrics.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    return report


def cmd_detect(cfg: RunConfig, suspect_path: str, baseline_path: str | None, level: int) -> dict:
    suspect = load_table(suspect_path, cfg.schema)
    if baseline_path:
        baseline = DetectorBaseline.from_json(Path(baseline_path).read_text(encoding="utf-8"))
    else:
        clean = _load_dataset(cfg)
        scope = select_split(clean, "train") if clean.has_splits else clean
        baseline = build_baseline(scope, level, _tolerances(cfg))
    suspect_scope = select_split(suspect, "train") if suspect.has_splits else suspect
    verdict = run_detector(baseline, suspect_scope)
    out = _out_dir(cfg)
    report = {
        "config": {"suspect": suspect_path, "level": baseline.level},
        "verdict": verdict.to_dict(),
        "provenance": _provenance(cfg),
    }
    (out / "detect.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    (out / "baseline.json").write_text(baseline.to_json(), encoding="utf-8")
    return report


def cmd_generate(cfg: RunConfig) -> dict:
    if not cfg.generator:
        raise ConfigError("generate needs a generator block in the config")
    table = _load_dataset(cfg)
    scope = select_split(table, "train") if table.has_splits else table
    kind = cfg.generator.get("kind", "binary-contingency")
    n = int(cfg.generator.get("sample_size", 10_000))
    model = fit_toy_generator(scope, kind)
    sample = sample_toy_generator(model, n, derive_seed(cfg.seed, "generate"))
    out = _out_dir(cfg)
    save_table(sample, out / "generated.csv")
    report = {
        "config": {"kind": kind, "sample_size": n, "fit_rows": model.n_fit},
        "outputs": {"generated_csv": str(out / "generated.csv")},
        "provenance": _provenance(cfg),
    }
    (out / "generate.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    return report


def _simulate_cell(args) -> tuple[float, int, float, float]:
    cfg, cell, kind, sample_size, k = args
    fit_data = select_split(cell.table, "train") if cell.table.has_splits else cell.table
    pair = tuple(cfg.attack["pair"])
    cols = [fit_data.index(name) for name in pair]
    fit_pair = DataTable(
        pair,
        tuple(fit_data.kinds[i] for i in cols),
        tuple(fit_data.columns[i] for i in cols),
    )
    model = fit_toy_generator(fit_pair, kind)
    seed = derive_seed(cfg.seed, "simulate", cell.fraction_pct, cell.repetition)
    sample = sample_toy_generator(model, sample_size, seed)
    joint = empirical_joint(sample, pair)
    return cell.fraction_pct, cell.repetition, mi_binary(joint), mcc_binary(joint)


def cmd_simulate(cfg: RunConfig) -> dict:
    if not cfg.ablation:
        raise ConfigError("simulate needs an ablation block in the config")
    if cfg.attack.get("type") != "binary":
        raise ConfigError("simulate supports binary attacks")
    table = _load_dataset(cfg)
    attack = _attack_specs(cfg)
    ablation = AblationSpec(
        step_pct=float(cfg.ablation.get("step", 5.0)),
        repetitions=int(cfg.ablation.get("repetitions", 1)),
        fractions=tuple(cfg.ablation["fractions"]) if cfg.ablation.get("fractions") else None,
    )
    cells = mix_ablation(table, ablation, attack)
    sample_size = int(cfg.generator.get("sample_size", 10_000))
    k = int(cfg.metrics.get("k", 3))
    jobs = [(cfg, cell, "binary-contingency", sample_size, k) for cell in cells]
    threads = max(1, int(os.environ.get("APOISON_THREADS", "1")))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_simulate_cell, jobs))
    else:
        rows = [_simulate_cell(job) for job in jobs]
    rows.sort(key=lambda r: (r[0], r[1]))

    by_fraction: dict[float, dict[str, list[float]]] = {}
    for fraction, rep, mi, mcc in rows:
        group = by_fraction.setdefault(fraction, {"MI": [], "MCC": []})
        group["MI"].append(mi)
        group["MCC"].append(mcc)
    fractions = sorted(by_fraction)
    base = by_fraction[fractions[0]]
    summary = []
    for fraction in fractions:
        group = by_fraction[fraction]
        entry = {
            "fraction_pct": fraction,
            "mean_mi": float(np.mean(group["MI"])),
            "mean_mcc": float(np.mean(group["MCC"])),
            "mi": group["MI"],
            "mcc": group["MCC"],
            "mwu_vs_base": {
                metric.lower(): mwu_test(base[metric], group[metric]).to_dict()
                for metric in ("MI", "MCC")
            },
        }
        summary.append(entry)
    out = _out_dir(cfg)
    with open(out / "simulate.csv", "w", encoding="utf-8") as fh:
        fh.write("fraction_pct,repetition,mi,mcc\n")
        for fraction, rep, mi, mcc in rows:
            fh.write(f"{fraction},{rep},{mi!r},{mcc!r}\n")
    report = {
        "config": {"attack": cfg.attack, "ablation": cfg.ablation, "sample_size": sample_size},
        "fractions": summary,
        "provenance": _provenance(cfg),
    }
    (out / "simulate.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    return report


def cmd_counterexample(out_dir: str) -> dict:
    fixture = build_mi_counterexample()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "counterexample.json").write_text(fixture.to_json(), encoding="utf-8")
    return fixture.to_dict()


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apoison",
        description="Association poisoning toolkit: attacks, metrics, detectors, demos.",
    )
    parser.add_argument("--version", action="version", version=f"apoison {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--k", type=int, help="override k for the kNN MI estimator")

    p = sub.add_parser("poison", help="run the configured attack, write poisoned CSV + report")
    common(p)
    p = sub.add_parser("metrics", help="measure associations for configured pairs")
    common(p)
    p = sub.add_parser("detect", help="compare a suspect table against a clean baseline")
    common(p)
    p.add_argument("--suspect", required=True, help="CSV to screen")
    p.add_argument("--baseline", help="stored baseline JSON (default: build from config dataset)")
    p.add_argument(
        "--level", type=int, choices=(0, 1, 2),
        help="detector level (default: config detector.level, else 2)",
    )
    p = sub.add_parser("generate", help="fit the toy generator and sample from it")
    common(p)
    p = sub.add_parser("simulate", help="adversary-fraction ablation over poison/fit/sample/measure")
    common(p)
    p.add_argument("--fraction-step", type=float, help="override ablation step (percent)")
    p = sub.add_parser("counterexample", help="emit the local-rule MI counterexample fixture")
    p.add_argument("--out", default="out", help="output directory")
    return parser


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "k", None) is not None:
        cfg.metrics = {**cfg.metrics, "k": int(args.k)}
    if getattr(args, "fraction_step", None) is not None:
        cfg.ablation = {**cfg.ablation, "step": float(args.fraction_step)}
        cfg.ablation.pop("fractions", None)
    if getattr(args, "level", None) is not None:
        cfg.detector = {**cfg.detector, "level": int(args.level)}
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "counterexample":
            cmd_counterexample(args.out)
            print(json.dumps({"status": "ok", "out": args.out}))
            return EXIT_OK
        cfg = _apply_overrides(RunConfig.from_file(args.config), args)
        if args.command == "poison":
            cmd_poison(cfg)
        elif args.command == "metrics":
            cmd_metrics(cfg)
        elif args.command == "detect":
            cmd_detect(cfg, args.suspect, args.baseline, int(cfg.detector.get("level", 2)))
        elif args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        print(json.dumps({"status": "ok", "out": cfg.out}))
        return EXIT_OK
    except ConfigError as exc:
        _fail("config", exc)
        return EXIT_CONFIG
    except InfeasibleAttackError as exc:
        _fail("infeasible", exc)
        return EXIT_INFEASIBLE
    except DataError as exc:
        _fail("data", exc)
        return EXIT_DATA
    except ApoisonError as exc:  # fallback for future subtypes
        _fail("error", exc)
        return EXIT_DATA


def _fail(kind: str, exc: Exception) -> None:
    print(json.dumps({"error": {"type": kind, "message": str(exc)}}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
