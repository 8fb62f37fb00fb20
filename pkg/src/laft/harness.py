"""Experiment orchestration: config-driven runs, diagnostics, persistence.

An experiment executes inject -> oracle fetch -> fit -> evaluate once per
repeat seed, writing one run directory per seed plus an aggregate report.
All artifacts are reproducible from (config, seeds, oracle cache) alone: no
timestamps or machine state enter any output file, and the oracle cache is
shared across seeds and reruns.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import ClassSet, Dataset, DatasetError, load_dataset, save_dataset
from .noise import NoiseSpec, inject, save_flip_records
from .objective import LossWeights
from .oracle import (
    CountingClient,
    HttpChatClient,
    OracleCache,
    OracleOutputs,
    OracleUnavailableError,
    SimulatedClient,
    fetch_oracle_outputs,
)
from .augment import AugmentationKind, AUGMENTATION_NAMES
from .separate import EC, HC, TN, SubsetAssignment, ThresholdSchedule, ideal_separate
from .trainer import (
    RunRecord,
    TrainConfig,
    evaluate_accuracy,
    fit,
    write_metrics_csv,
    write_steps_csv,
)

__all__ = [
    "ConfigError",
    "StageFailure",
    "HarnessError",
    "OracleSettings",
    "ExperimentConfig",
    "SeedResult",
    "DiagnosticsReport",
    "parse_config_text",
    "experiment_config_from_mapping",
    "noise_spec_from_mapping",
    "oracle_settings_from_mapping",
    "train_config_from_mapping",
    "config_to_text",
    "load_experiment_config",
    "run_experiment",
    "subset_report",
    "confidence_dynamics",
    "write_confidence_dynamics_csv",
    "write_subset_report_csv",
    "sweep_noise",
]

# Decorrelates validation-split noise from training-split noise per seed.
VAL_NOISE_SEED_OFFSET = 7919


class HarnessError(RuntimeError):
    """Diagnostics requested without the data they need."""


class ConfigError(ValueError):
    """Malformed experiment configuration (exit code 1)."""


class StageFailure(RuntimeError):
    """A pipeline stage failed (exit code 2); partial artifacts are kept."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class OracleSettings:
    mode: str = "simulate"
    model_id: str = "sim-oracle"
    accuracy: float = 0.75
    sharpness: float = 0.75
    seed: int = 0
    views: int = 4
    views_seed: int = 0
    aug_rate: float = 0.1
    retries: int = 3
    cache_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("simulate", "http"):
            raise ConfigError(f"oracle mode must be 'simulate' or 'http', got {self.mode!r}")
        if not 1 <= self.views <= len(AUGMENTATION_NAMES):
            raise ConfigError(f"oracle views must be in [1, {len(AUGMENTATION_NAMES)}]")


@dataclass(frozen=True)
class ExperimentConfig:
    train_path: str
    val_path: str
    test_path: str
    noise: NoiseSpec | None = None
    oracle: OracleSettings = field(default_factory=OracleSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (1,)
    out_dir: str = "runs/experiment"
    name: str = "experiment"

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("repeat seeds must be distinct")
        if not self.seeds:
            raise ConfigError("need at least one repeat seed")


@dataclass
class SeedResult:
    seed: int
    test_accuracy: float
    best_epoch: int | None
    rundir: str
    record: RunRecord
    subset_rows: list[dict] | None
    dynamics: list[dict] | None


@dataclass
class DiagnosticsReport:
    """Aggregate of one experiment: accuracy statistics plus per-seed diagnostics."""

    name: str
    accuracies: list[float]
    mean_accuracy: float
    std_accuracy: float
    seed_results: list[SeedResult]
    client_calls: int
    out_dir: str


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    mapping: dict[str, str] = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not 'key = value': {rawline!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {lineno} has an empty key")
        if key in mapping:
            raise ConfigError(f"duplicate config key {key!r} at line {lineno}")
        mapping[key] = value.strip()
    return mapping


def _convert(key: str, value: str, kind):
    try:
        if kind is bool:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind.__name__}") from None


_CONFIG_SCHEMA: dict[str, type] = {
    "name": str,
    "train_path": str,
    "val_path": str,
    "test_path": str,
    "out_dir": str,
    "seeds": str,
    "noise.kind": str,
    "noise.ratio": float,
    "noise.seed": int,
    "noise.feature_projection_seed": int,
    "oracle.mode": str,
    "oracle.model_id": str,
    "oracle.accuracy": float,
    "oracle.sharpness": float,
    "oracle.seed": int,
    "oracle.views": int,
    "oracle.views_seed": int,
    "oracle.aug_rate": float,
    "oracle.retries": int,
    "oracle.cache_dir": str,
    "train.method": str,
    "train.ablation": str,
    "train.learning_rate": float,
    "train.batch_size": int,
    "train.max_epochs": int,
    "train.early_stop_patience": int,
    "train.max_tokens": int,
    "train.n_buckets": int,
    "schedule.tau_hat": float,
    "schedule.tau_tilde": float,
    "schedule.lam": float,
    "weights.lambda_h": float,
    "weights.lambda_n": float,
    "weights.alpha": float,
    "weights.beta": float,
}


def _typed_mapping(mapping: dict[str, str]) -> dict:
    for key in mapping:
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
    return {key: _convert(key, value, _CONFIG_SCHEMA[key]) for key, value in mapping.items()}


def noise_spec_from_mapping(mapping: dict[str, str]) -> NoiseSpec | None:
    typed = _typed_mapping(mapping)
    kind = typed.get("noise.kind", "none")
    if kind.lower() == "none":
        return None
    try:
        return NoiseSpec(
            kind=kind.upper(),
            ratio=typed.get("noise.ratio", 0.0),
            seed=typed.get("noise.seed", 0),
            feature_projection_seed=typed.get("noise.feature_projection_seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def oracle_settings_from_mapping(mapping: dict[str, str]) -> OracleSettings:
    typed = _typed_mapping(mapping)
    return OracleSettings(
        mode=typed.get("oracle.mode", "simulate"),
        model_id=typed.get("oracle.model_id", "sim-oracle"),
        accuracy=typed.get("oracle.accuracy", 0.75),
        sharpness=typed.get("oracle.sharpness", 0.75),
        seed=typed.get("oracle.seed", 0),
        views=typed.get("oracle.views", 4),
        views_seed=typed.get("oracle.views_seed", 0),
        aug_rate=typed.get("oracle.aug_rate", 0.1),
        retries=typed.get("oracle.retries", 3),
        cache_dir=typed.get("oracle.cache_dir", None),
    )


def train_config_from_mapping(mapping: dict[str, str]) -> TrainConfig:
    typed = _typed_mapping(mapping)
    try:
        schedule = ThresholdSchedule(
            tau_hat=typed.get("schedule.tau_hat", 0.8),
            tau_tilde=typed.get("schedule.tau_tilde", 0.8),
            lam=typed.get("schedule.lam", 0.7),
        )
        weights = LossWeights(
            lambda_h=typed.get("weights.lambda_h", 1.0),
            lambda_n=typed.get("weights.lambda_n", 1.0),
            alpha=typed.get("weights.alpha", 1.5),
            beta=typed.get("weights.beta", 0.9),
        )
        return TrainConfig(
            learning_rate=typed.get("train.learning_rate", 1e-4),
            batch_size=typed.get("train.batch_size", 32),
            max_epochs=typed.get("train.max_epochs", 100),
            early_stop_patience=typed.get("train.early_stop_patience", 10),
            max_tokens=typed.get("train.max_tokens", 256),
            n_buckets=typed.get("train.n_buckets", 2**15),
            schedule=schedule,
            weights=weights,
            ablation=typed.get("train.ablation", "full"),
            method=typed.get("train.method", "laft"),
        )
    except (ValueError, RuntimeError) as exc:
        raise ConfigError(str(exc)) from None


def experiment_config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from flat dotted keys.

    Unknown keys are rejected so typos fail loudly.
    """
    typed = _typed_mapping(mapping)
    for required in ("train_path", "val_path", "test_path"):
        if required not in mapping:
            raise ConfigError(f"missing required config key {required!r}")

    seeds_text = typed.get("seeds", "1")
    try:
        seeds = tuple(int(s.strip()) for s in seeds_text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"cannot parse seeds {seeds_text!r}") from None

    return ExperimentConfig(
        train_path=typed["train_path"],
        val_path=typed["val_path"],
        test_path=typed["test_path"],
        noise=noise_spec_from_mapping(mapping),
        oracle=oracle_settings_from_mapping(mapping),
        train=train_config_from_mapping(mapping),
        seeds=seeds,
        out_dir=typed.get("out_dir", "runs/experiment"),
        name=typed.get("name", "experiment"),
    )


def config_to_text(cfg: ExperimentConfig) -> str:
    """Render the effective configuration back to the flat key = value format."""
    lines = [
        f"name = {cfg.name}",
        f"train_path = {cfg.train_path}",
        f"val_path = {cfg.val_path}",
        f"test_path = {cfg.test_path}",
        f"out_dir = {cfg.out_dir}",
        f"seeds = {','.join(str(s) for s in cfg.seeds)}",
    ]
    if cfg.noise is None:
        lines.append("noise.kind = none")
    else:
        lines += [
            f"noise.kind = {cfg.noise.kind}",
            f"noise.ratio = {cfg.noise.ratio!r}",
            f"noise.seed = {cfg.noise.seed}",
            f"noise.feature_projection_seed = {cfg.noise.feature_projection_seed}",
        ]
    o = cfg.oracle
    lines += [
        f"oracle.mode = {o.mode}",
        f"oracle.model_id = {o.model_id}",
        f"oracle.accuracy = {o.accuracy!r}",
        f"oracle.sharpness = {o.sharpness!r}",
        f"oracle.seed = {o.seed}",
        f"oracle.views = {o.views}",
        f"oracle.views_seed = {o.views_seed}",
        f"oracle.aug_rate = {o.aug_rate!r}",
        f"oracle.retries = {o.retries}",
    ]
    if o.cache_dir is not None:
        lines.append(f"oracle.cache_dir = {o.cache_dir}")
    t = cfg.train
    lines += [
        f"train.method = {t.method}",
        f"train.ablation = {t.ablation}",
        f"train.learning_rate = {t.learning_rate!r}",
        f"train.batch_size = {t.batch_size}",
        f"train.max_epochs = {t.max_epochs}",
        f"train.early_stop_patience = {t.early_stop_patience}",
        f"train.max_tokens = {t.max_tokens}",
        f"train.n_buckets = {t.n_buckets}",
        f"schedule.tau_hat = {t.schedule.tau_hat!r}",
        f"schedule.tau_tilde = {t.schedule.tau_tilde!r}",
        f"schedule.lam = {t.schedule.lam!r}",
        f"weights.lambda_h = {t.weights.lambda_h!r}",
        f"weights.lambda_n = {t.weights.lambda_n!r}",
        f"weights.alpha = {t.weights.alpha!r}",
        f"weights.beta = {t.weights.beta!r}",
    ]
    return "\n".join(lines) + "\n"


def load_experiment_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    mapping = parse_config_text(text)
    if overrides:
        mapping.update(overrides)
    return experiment_config_from_mapping(mapping)


def _build_client(cfg: ExperimentConfig, classes: ClassSet) -> CountingClient:
    if cfg.oracle.mode == "simulate":
        inner = SimulatedClient(
            classes,
            target_accuracy=cfg.oracle.accuracy,
            sharpness=cfg.oracle.sharpness,
            seed=cfg.oracle.seed,
            model_id=cfg.oracle.model_id,
        )
    else:
        inner = HttpChatClient(model_id=cfg.oracle.model_id)
    return CountingClient(inner)


def subset_report(
    assignment: SubsetAssignment, train: Dataset, llm_labels: dict[str, int]
) -> list[dict]:
    """Oracle-label accuracy and size per subset, for the ideal and realized splits.

    The ideal split uses the held-out true labels; both rows share the same
    coarse easy set and the same overall accuracy by construction. Requires
    a synthetic-noise dataset (true labels present).
    """
    if not train.has_true_labels:
        raise HarnessError("subset report needs true labels (synthetic-noise runs only)")
    by_id = {s.id: s for s in train}
    correct = {sid: float(llm_labels[sid] == by_id[sid].true_label) for sid in by_id}

    easy = assignment.ids_in(EC)
    disagreed = set(by_id) - easy
    hard_star, noisy_star = ideal_separate(disagreed, train)
    realized = {EC: easy, HC: assignment.ids_in(HC), TN: assignment.ids_in(TN)}
    ideal = {EC: easy, HC: hard_star, TN: noisy_star}

    def accuracy(ids: set[str]) -> float | None:
        if not ids:
            return None
        return float(np.mean([correct[sid] for sid in sorted(ids)]))

    overall = float(np.mean(list(correct.values())))
    rows = []
    for partition, subsets in (("ideal", ideal), ("realized", realized)):
        rows.append(
            {
                "partition": partition,
                "ec_accuracy": accuracy(subsets[EC]),
                "ec_size": len(subsets[EC]),
                "hc_accuracy": accuracy(subsets[HC]),
                "hc_size": len(subsets[HC]),
                "tn_accuracy": accuracy(subsets[TN]),
                "tn_size": len(subsets[TN]),
                "overall_accuracy": overall,
                "overall_size": len(by_id),
            }
        )
    return rows


def write_subset_report_csv(rows: list[dict], path: str | Path) -> None:
    cols = [
        "partition",
        "ec_accuracy",
        "ec_size",
        "hc_accuracy",
        "hc_size",
        "tn_accuracy",
        "tn_size",
        "overall_accuracy",
        "overall_size",
    ]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join("" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else str(row[c])) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def confidence_dynamics(record: RunRecord) -> list[dict]:
    """Per-epoch mean assigned-label confidence, split into clean and flipped series."""
    if not record.epochs:
        return []
    if all(e.mean_conf_clean is None and e.mean_conf_flipped is None for e in record.epochs):
        raise HarnessError("confidence dynamics need flip information (true labels)")
    return [
        {"epoch": e.epoch, "mean_conf_clean": e.mean_conf_clean, "mean_conf_flipped": e.mean_conf_flipped}
        for e in record.epochs
    ]


def write_confidence_dynamics_csv(rows: list[dict], path: str | Path) -> None:
    lines = ["epoch,mean_conf_clean,mean_conf_flipped"]
    for row in rows:
        cells = [str(row["epoch"])]
        for key in ("mean_conf_clean", "mean_conf_flipped"):
            cells.append("" if row[key] is None else repr(row[key]))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_report(report: DiagnosticsReport, path: Path) -> None:
    payload = {
        "name": report.name,
        "accuracies": report.accuracies,
        "mean_accuracy": report.mean_accuracy,
        "std_accuracy": report.std_accuracy,
        "client_calls": report.client_calls,
        "seeds": [
            {
                "seed": r.seed,
                "test_accuracy": r.test_accuracy,
                "best_epoch": r.best_epoch,
                "rundir": r.rundir,
                "subset_report": r.subset_rows,
            }
            for r in report.seed_results
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig) -> DiagnosticsReport:
    """Run inject -> oracle fetch -> fit -> evaluate for every repeat seed.

    Per-seed artifacts land in ``<out_dir>/seed_<s>/``; the aggregate report
    is written to ``<out_dir>/report.json``. Noise seeds are derived from
    the configured noise seed plus the repeat seed, so each repeat draws
    different flips over the same clean data.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    try:
        train_clean = load_dataset(cfg.train_path, "infer", "train")
        val_clean = load_dataset(cfg.val_path, train_clean.classes, "validation")
        test = load_dataset(cfg.test_path, train_clean.classes, "test")
    except (OSError, DatasetError) as exc:
        raise StageFailure("load", exc) from exc

    cache = OracleCache(cfg.oracle.cache_dir or out / "cache")
    client = _build_client(cfg, train_clean.classes)
    kinds = [AugmentationKind(name, cfg.oracle.aug_rate) for name in AUGMENTATION_NAMES[: cfg.oracle.views]]

    seed_results: list[SeedResult] = []
    for seed in cfg.seeds:
        rundir = out / f"seed_{seed}"
        rundir.mkdir(parents=True, exist_ok=True)

        try:
            if cfg.noise is not None:
                train_spec = replace(cfg.noise, seed=cfg.noise.seed + seed)
                val_spec = replace(cfg.noise, seed=cfg.noise.seed + seed + VAL_NOISE_SEED_OFFSET)
                train_noisy, flips = inject(train_clean, train_spec)
                val_noisy, _ = inject(val_clean, val_spec)
                save_dataset(train_noisy, rundir / "train_noisy.csv")
                save_dataset(val_noisy, rundir / "val_noisy.csv")
                save_flip_records(flips, train_clean.classes, rundir / "train_noisy.flips.csv")
            else:
                train_noisy, val_noisy = train_clean, val_clean
        except Exception as exc:
            raise StageFailure("inject", exc) from exc

        outputs: OracleOutputs | None = None
        if cfg.train.method == "laft":
            try:
                outputs = fetch_oracle_outputs(
                    train_noisy,
                    client,
                    cache,
                    kinds=kinds,
                    views_seed=cfg.oracle.views_seed,
                    retries=cfg.oracle.retries,
                )
            except OracleUnavailableError:
                raise
            except Exception as exc:
                raise StageFailure("oracle", exc) from exc

        try:
            train_cfg = dataclasses.replace(cfg.train, seed=seed)
            model, record = fit(train_noisy, val_noisy, outputs, train_cfg)
            write_metrics_csv(record, rundir / "metrics.csv")
            write_steps_csv(record, rundir / "steps.csv")
            model.save(rundir / "model.bin")
            (rundir / "config.echo").write_text(config_to_text(cfg), encoding="utf-8")
        except Exception as exc:
            raise StageFailure("train", exc) from exc

        try:
            accuracy = evaluate_accuracy(model, test)
            record.test_accuracy = accuracy
        except Exception as exc:
            raise StageFailure("evaluate", exc) from exc

        subset_rows = None
        dynamics = None
        try:
            if cfg.train.method == "laft" and train_noisy.has_true_labels and record.assignments:
                subset_rows = subset_report(record.assignments[-1], train_noisy, outputs.llm_labels)
                write_subset_report_csv(subset_rows, rundir / "subset_report.csv")
                dynamics = confidence_dynamics(record)
                write_confidence_dynamics_csv(dynamics, rundir / "confidence_dynamics.csv")
            (rundir / "result.json").write_text(
                json.dumps({"seed": seed, "test_accuracy": accuracy, "best_epoch": record.best_epoch}, sort_keys=True)
                + "\n",
                encoding="utf-8",
            )
        except Exception as exc:
            raise StageFailure("report", exc) from exc

        seed_results.append(
            SeedResult(
                seed=seed,
                test_accuracy=accuracy,
                best_epoch=record.best_epoch,
                rundir=str(rundir),
                record=record,
                subset_rows=subset_rows,
                dynamics=dynamics,
            )
        )

    accuracies = [r.test_accuracy for r in seed_results]
    report = DiagnosticsReport(
        name=cfg.name,
        accuracies=accuracies,
        mean_accuracy=float(np.mean(accuracies)),
        std_accuracy=float(np.std(accuracies)),
        seed_results=seed_results,
        client_calls=client.calls,
        out_dir=str(out),
    )
    _write_report(report, out / "report.json")
    return report


def sweep_noise(cfg: ExperimentConfig, ratios: list[float], kinds: tuple[str, ...] = ("SN", "AN", "IDN")) -> list[dict]:
    """One experiment per (noise kind, ratio); accuracy table written as CSV."""
    if cfg.noise is None:
        raise ConfigError("noise sweep needs a base noise spec (noise.kind must not be none)")
    rows = []
    for kind in kinds:
        for ratio in ratios:
            sub = dataclasses.replace(
                cfg,
                noise=dataclasses.replace(cfg.noise, kind=kind, ratio=ratio),
                out_dir=str(Path(cfg.out_dir) / f"{kind.lower()}_{ratio:g}"),
                name=f"{cfg.name}-{kind.lower()}-{ratio:g}",
            )
            report = run_experiment(sub)
            rows.append(
                {
                    "kind": kind,
                    "ratio": ratio,
                    "mean_accuracy": report.mean_accuracy,
                    "std_accuracy": report.std_accuracy,
                }
            )
    lines = ["kind,ratio,mean_accuracy,std_accuracy"]
    for row in rows:
        lines.append(f"{row['kind']},{row['ratio']!r},{row['mean_accuracy']!r},{row['std_accuracy']!r}")
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out_dir) / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
