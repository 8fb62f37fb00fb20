"""Command line interface.

Subcommands: data, noise, augment, oracle, separate, train, experiment,
report. Exit codes: 0 success, 1 config error, 2 stage failure, 3 oracle
unavailable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .augment import AugmentError, AugmentationKind, augment
from .corpus import DatasetError, load_dataset, save_dataset, split_dataset
from .harness import (
    ConfigError,
    HarnessError,
    StageFailure,
    config_to_text,
    load_experiment_config,
    oracle_settings_from_mapping,
    parse_config_text,
    run_experiment,
    train_config_from_mapping,
)
from .noise import NoiseError, NoiseSpec, inject, save_flip_records
from .objective import ObjectiveError
from .oracle import (
    CountingClient,
    HttpChatClient,
    OracleCache,
    OracleError,
    OracleUnavailableError,
    SimulatedClient,
    fetch_oracle_outputs,
)
from .augment import AUGMENTATION_NAMES
from .separate import SeparationError, assign_subsets, classifier_confidence
from .trainer import (
    LinearTextClassifier,
    TrainerError,
    evaluate_accuracy,
    fit,
    write_metrics_csv,
    write_steps_csv,
)


def _load_mapping(path: str | None, overrides: list[str] | None) -> dict[str, str]:
    mapping: dict[str, str] = {}
    if path:
        try:
            mapping = parse_config_text(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def cmd_data_validate(args) -> int:
    dataset = load_dataset(args.path, "infer")
    print(f"{args.path}: ok")
    print(f"  samples: {len(dataset)}")
    print(f"  classes: {len(dataset.classes)} ({', '.join(dataset.classes.names)})")
    print(f"  true labels: {'yes' if dataset.has_true_labels else 'no'}")
    return 0


def cmd_data_split(args) -> int:
    dataset = load_dataset(args.path, "infer")
    train, val = split_dataset(dataset, (args.train_frac, args.val_frac), args.seed)
    prefix = args.out_prefix or str(Path(args.path).with_suffix(""))
    train_path, val_path = f"{prefix}.train.csv", f"{prefix}.val.csv"
    save_dataset(train, train_path)
    save_dataset(val, val_path)
    print(f"wrote {train_path} ({len(train)} samples) and {val_path} ({len(val)} samples)")
    return 0


def cmd_noise_inject(args) -> int:
    dataset = load_dataset(args.path, "infer")
    transition_map = None
    if args.map:
        transition_map = {}
        with open(args.map, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["from", "to"]:
                raise ConfigError(f"{args.map}: transition map header must be 'from,to'")
            for row in reader:
                transition_map[dataset.classes.index(row[0])] = dataset.classes.index(row[1])
    spec = NoiseSpec(
        kind=args.kind.upper(),
        ratio=args.ratio,
        seed=args.seed,
        transition_map=transition_map,
        feature_projection_seed=args.feature_projection_seed,
    )
    noisy, flips = inject(dataset, spec)
    save_dataset(noisy, args.out)
    flips_path = f"{args.out.removesuffix('.csv')}.flips.csv" if args.out.endswith(".csv") else f"{args.out}.flips.csv"
    save_flip_records(flips, dataset.classes, flips_path)
    print(f"flipped {len(flips)} of {len(dataset)} labels ({spec.kind}, ratio {spec.ratio})")
    print(f"wrote {args.out} and {flips_path}")
    return 0


def cmd_augment_preview(args) -> int:
    kind = AugmentationKind(args.kind, args.rate)
    print(augment(args.text, kind, args.seed))
    return 0


def _build_cli_client(args, classes):
    if args.simulate:
        return CountingClient(
            SimulatedClient(
                classes,
                target_accuracy=args.accuracy,
                sharpness=args.sharpness,
                seed=args.oracle_seed,
                model_id=args.model,
            )
        )
    return CountingClient(HttpChatClient(model_id=args.model))


def cmd_oracle_fetch(args) -> int:
    dataset = load_dataset(args.path, "infer")
    cache = OracleCache(args.cache)
    client = _build_cli_client(args, dataset.classes)
    kinds = [AugmentationKind(name, args.aug_rate) for name in AUGMENTATION_NAMES[: args.views]]
    outputs = fetch_oracle_outputs(
        dataset, client, cache, kinds=kinds, views_seed=args.views_seed, retries=args.retries
    )
    print(f"fetched oracle outputs for {len(outputs.llm_labels)} samples")
    print(f"  client calls: {client.calls}")
    print(f"  cache records: {len(cache)}")
    return 0


def cmd_separate(args) -> int:
    mapping = _load_mapping(args.config, args.set)
    oracle_settings = oracle_settings_from_mapping(mapping)
    train_cfg = train_config_from_mapping(mapping)
    data_path = args.data or mapping.get("train_path")
    if not data_path:
        raise ConfigError("need --data or a train_path config key")
    dataset = load_dataset(data_path, "infer")
    cache_dir = args.oracle_cache or oracle_settings.cache_dir
    if not cache_dir:
        raise ConfigError("need --oracle-cache or an oracle.cache_dir config key")
    cache = OracleCache(cache_dir)
    kinds = [AugmentationKind(name, oracle_settings.aug_rate) for name in AUGMENTATION_NAMES[: oracle_settings.views]]
    outputs = fetch_oracle_outputs(
        dataset,
        None,
        cache,
        kinds=kinds,
        views_seed=oracle_settings.views_seed,
        model_id=oracle_settings.model_id,
    )

    if args.model:
        model = LinearTextClassifier.load(args.model)
    else:
        model = LinearTextClassifier(dataset.classes.names, train_cfg.n_buckets, train_cfg.max_tokens)
    probs = classifier_confidence(model.logits(model.featurize(dataset.texts())))
    classifier_conf = {sid: probs[i] for i, sid in enumerate(dataset.ids())}
    easy = {s.id for s in dataset if outputs.llm_labels[s.id] == s.assigned_label}
    assignment = assign_subsets(
        dataset, easy, outputs.aggregated, classifier_conf, train_cfg.schedule, args.epoch
    )
    sizes = assignment.sizes()
    lines = ["sample_id,subset"]
    for s in dataset:
        lines.append(f"{s.id},{assignment.mapping[s.id]}")
    lines.append(f"(summary),EC={sizes['EC']} HC={sizes['HC']} TN={sizes['TN']}")
    out_path = args.out or "partition.csv"
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"epoch {args.epoch}: EC={sizes['EC']} HC={sizes['HC']} TN={sizes['TN']} -> {out_path}")
    return 0


def cmd_train(args) -> int:
    mapping = _load_mapping(args.config, args.set)
    train_cfg = train_config_from_mapping(mapping)
    if args.seed is not None:
        import dataclasses

        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    oracle_settings = oracle_settings_from_mapping(mapping)
    train = load_dataset(args.data, "infer")
    val = load_dataset(args.val, train.classes, "validation")
    outputs = None
    if train_cfg.method == "laft":
        cache = OracleCache(args.oracle_cache)
        kinds = [AugmentationKind(name, oracle_settings.aug_rate) for name in AUGMENTATION_NAMES[: oracle_settings.views]]
        outputs = fetch_oracle_outputs(
            train,
            None,
            cache,
            kinds=kinds,
            views_seed=oracle_settings.views_seed,
            model_id=oracle_settings.model_id,
        )
    model, record = fit(train, val, outputs, train_cfg)
    rundir = Path(args.out)
    rundir.mkdir(parents=True, exist_ok=True)
    model.save(rundir / "model.bin")
    write_metrics_csv(record, rundir / "metrics.csv")
    write_steps_csv(record, rundir / "steps.csv")
    config_lines = [f"{k} = {v}" for k, v in sorted(mapping.items())]
    (rundir / "config.echo").write_text("\n".join(config_lines) + "\n", encoding="utf-8")
    best = record.best_epoch if record.best_epoch is not None else "-"
    best_acc = max((e.val_accuracy for e in record.epochs), default=float("nan"))
    print(f"trained {len(record.epochs)} epochs; best epoch {best} (val accuracy {best_acc:.4f})")
    print(f"artifacts in {rundir}")
    return 0


def cmd_experiment(args) -> int:
    overrides = dict(item.split("=", 1) for item in (args.set or []) if "=" in item)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    cfg = load_experiment_config(args.config, {k.strip(): v.strip() for k, v in overrides.items()})
    report = run_experiment(cfg)
    print(f"experiment {report.name}: {len(report.accuracies)} seed(s)")
    for r in report.seed_results:
        print(f"  seed {r.seed}: test accuracy {r.test_accuracy:.4f} (best epoch {r.best_epoch})")
    print(f"mean accuracy {report.mean_accuracy:.4f} +/- {report.std_accuracy:.4f}")
    print(f"report: {Path(report.out_dir) / 'report.json'}")
    return 0


def cmd_report(args) -> int:
    report_path = Path(args.run) / "report.json"
    if not report_path.exists():
        raise ConfigError(f"no report.json under {args.run}")
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    print(f"experiment {payload['name']}")
    accs = payload["accuracies"]
    print(f"accuracy over {len(accs)} seed(s): mean {payload['mean_accuracy']:.4f} +/- {payload['std_accuracy']:.4f}")
    for entry in payload["seeds"]:
        print(f"  seed {entry['seed']}: {entry['test_accuracy']:.4f}")
        rows = entry.get("subset_report")
        if rows:
            for row in rows:
                cells = []
                for key in ("ec", "hc", "tn"):
                    acc = row[f"{key}_accuracy"]
                    acc_text = "-" if acc is None else f"{acc:.4f}"
                    cells.append(f"{key.upper()} {acc_text} (n={row[f'{key}_size']})")
                print(
                    f"    {row['partition']:>8}: "
                    + "  ".join(cells)
                    + f"  overall {row['overall_accuracy']:.4f} (n={row['overall_size']})"
                )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laft", description="Noise-robust text classifier fine-tuning with LLM guidance")
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="dataset utilities").add_subparsers(dest="subcommand", required=True)
    p = data.add_parser("validate", help="check a dataset CSV")
    p.add_argument("path")
    p.set_defaults(func=cmd_data_validate)
    p = data.add_parser("split", help="seeded train/validation split")
    p.add_argument("path")
    p.add_argument("--train-frac", type=float, required=True)
    p.add_argument("--val-frac", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-prefix")
    p.set_defaults(func=cmd_data_split)

    noise = sub.add_parser("noise", help="label noise injection").add_subparsers(dest="subcommand", required=True)
    p = noise.add_parser("inject", help="inject synthetic label noise")
    p.add_argument("path")
    p.add_argument("--kind", choices=["sn", "an", "idn"], required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--map", help="class transition map CSV (header from,to); AN only")
    p.add_argument("--feature-projection-seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_noise_inject)

    aug = sub.add_parser("augment", help="text augmentation").add_subparsers(dest="subcommand", required=True)
    p = aug.add_parser("preview", help="print one augmented view")
    p.add_argument("text")
    p.add_argument("--kind", choices=list(AUGMENTATION_NAMES), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rate", type=float, default=0.1)
    p.set_defaults(func=cmd_augment_preview)

    oracle = sub.add_parser("oracle", help="oracle confidence fetching").add_subparsers(dest="subcommand", required=True)
    p = oracle.add_parser("fetch", help="populate the oracle cache for a dataset")
    p.add_argument("path")
    p.add_argument("--model", required=True)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--cache", required=True)
    p.add_argument("--simulate", action="store_true")
    p.add_argument("--accuracy", type=float, default=0.75)
    p.add_argument("--sharpness", type=float, default=0.75)
    p.add_argument("--oracle-seed", type=int, default=0)
    p.add_argument("--views-seed", type=int, default=0)
    p.add_argument("--aug-rate", type=float, default=0.1)
    p.add_argument("--retries", type=int, default=3)
    p.set_defaults(func=cmd_oracle_fetch)

    p = sub.add_parser("separate", help="emit the EC/HC/TN partition at an epoch")
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--config", help="config file with oracle.* and train.* keys")
    p.add_argument("--data", help="noisy training CSV (overrides train_path)")
    p.add_argument("--oracle-cache", help="oracle cache directory (overrides oracle.cache_dir)")
    p.add_argument("--model", help="model.bin snapshot; omitted means an untrained model")
    p.add_argument("-o", "--out", help="partition CSV path (default partition.csv)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("train", help="train one classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--oracle-cache", required=True)
    p.add_argument("--config", help="config file with train.*, schedule.*, weights.*, oracle.* keys")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run a full multi-seed experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="print the report of a finished experiment")
    p.add_argument("--run", required=True, help="experiment output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OracleUnavailableError as exc:
        print(f"oracle unavailable: {exc}", file=sys.stderr)
        return 3
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        DatasetError,
        NoiseError,
        AugmentError,
        OracleError,
        SeparationError,
        ObjectiveError,
        TrainerError,
        HarnessError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
