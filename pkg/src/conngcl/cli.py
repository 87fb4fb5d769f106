"""Command-line driver: generate, train, evaluate, export-embeddings, sweep, gradcheck.

Runs are configured by a JSON file merged over built-in defaults, with
individual flags taking final precedence. Exit codes: 0 success, 2 config
error, 3 I/O error, 4 numerical abort, 5 gradient verification failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import evaluation, training
from .augment import AugmentConfig
from .data import (
    Dataset,
    SplitSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .errors import DataError, NumericalError, ValidationError
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .optim import OBJECTIVES, finite_difference_check, sample_fd_instance

SEED_ENV_VAR = "GCL_SEED"

DEFAULT_CONFIG: dict = {
    "model": {"layer_widths": [32, 16, 8]},
    "train": {
        "mode": "contrastive",
        "use_decoder": True,
        "use_augmentation": True,
        "lambda": None,
        "tau": 1.0,
        "seed": None,
        "baseline_epochs": 300,
        "batch_size_baseline": 64,
        "baseline_learning_rate": 1e-3,
        "pretrain": {"epochs": 3000, "batch_size": 128, "learning_rate": 1e-3},
        "finetune": {
            "total_epochs": 200,
            "frozen_epochs": 100,
            "lr_frozen": 1e-3,
            "lr_full": 1e-4,
            "batch_size": 16,
        },
    },
    "augment": {"edge_drop_prob": 0.2, "mask_count_max": None},
    "split": {
        "train_frac": 0.8,
        "val_frac": 0.1,
        "test_frac": 0.1,
        "seed": None,
        "train_proportion": 1.0,
    },
    "data": None,
    "output_dir": None,
}

SYNTHETIC_KEYS = {"n_subjects", "nodes", "class_gap", "noise_sigma", "seed"}


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc


def _merge_config(base: dict, override: dict, path: str = "") -> None:
    for key, val in override.items():
        if key not in base:
            raise ValidationError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            _merge_config(base[key], val, path + key + ".")
        else:
            base[key] = val


def _validate_data_section(data) -> None:
    if data is None:
        raise ValidationError("no dataset given: set 'data' in the config or pass --data")
    if not isinstance(data, dict):
        raise ValidationError(f"'data' must be an object, got {type(data).__name__}")
    if set(data) == {"path"}:
        return
    if set(data) == {"synthetic"}:
        extra = set(data["synthetic"]) - SYNTHETIC_KEYS
        if extra:
            raise ValidationError(f"unknown synthetic-generator keys {sorted(extra)}")
        return
    raise ValidationError("'data' must hold exactly one of 'path' or 'synthetic'")


def load_config(config_path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config root must be a JSON object")
        _merge_config(cfg, loaded)
    return cfg


def _resolve_seeds(cfg: dict) -> None:
    if cfg["train"]["seed"] is None:
        cfg["train"]["seed"] = _env_seed()
    if cfg["split"]["seed"] is None:
        cfg["split"]["seed"] = _env_seed()


def _build_train_config(cfg: dict) -> training.TrainConfig:
    t = cfg["train"]
    return training.TrainConfig(
        mode=t["mode"],
        use_decoder=bool(t["use_decoder"]),
        use_augmentation=bool(t["use_augmentation"]),
        lam=t["lambda"],
        tau=t["tau"],
        seed=t["seed"],
        baseline_epochs=t["baseline_epochs"],
        batch_size_baseline=t["batch_size_baseline"],
        baseline_learning_rate=t["baseline_learning_rate"],
        pretrain=training.PretrainConfig(**t["pretrain"]),
        finetune=training.FinetuneConfig(**t["finetune"]),
        augment=AugmentConfig(**cfg["augment"]),
    )


def _build_split_spec(cfg: dict) -> SplitSpec:
    return SplitSpec(**cfg["split"])


def _load_data_section(cfg: dict) -> Dataset:
    data = cfg["data"]
    _validate_data_section(data)
    if "path" in data:
        return load_dataset(data["path"])
    syn = dict(data["synthetic"])
    syn.setdefault("seed", _env_seed())
    return generate_synthetic(
        n_subjects=syn.get("n_subjects", 1000),
        n=syn.get("nodes", 32),
        class_gap=syn.get("class_gap", 0.3),
        noise_sigma=syn.get("noise_sigma", 0.05),
        seed=syn["seed"],
    )


def _apply_train_overrides(cfg: dict, args: argparse.Namespace) -> None:
    t = cfg["train"]
    direct = {
        "mode": "mode",
        "lam": "lambda",
        "tau": "tau",
        "seed": "seed",
        "baseline_epochs": "baseline_epochs",
        "baseline_batch": "batch_size_baseline",
        "baseline_lr": "baseline_learning_rate",
    }
    for attr, key in direct.items():
        val = getattr(args, attr, None)
        if val is not None:
            t[key] = val
    if getattr(args, "decoder", None) in ("on", "off"):
        t["use_decoder"] = args.decoder == "on"
    if getattr(args, "augment", None) is not None:
        t["use_augmentation"] = args.augment == "on"
    pre = {"pretrain_epochs": "epochs", "pretrain_batch": "batch_size", "pretrain_lr": "learning_rate"}
    for attr, key in pre.items():
        val = getattr(args, attr, None)
        if val is not None:
            t["pretrain"][key] = val
    fine = {
        "finetune_k": "total_epochs",
        "finetune_m": "frozen_epochs",
        "finetune_batch": "batch_size",
        "lr_frozen": "lr_frozen",
        "lr_full": "lr_full",
    }
    for attr, key in fine.items():
        val = getattr(args, attr, None)
        if val is not None:
            t["finetune"][key] = val
    if getattr(args, "edge_drop_prob", None) is not None:
        cfg["augment"]["edge_drop_prob"] = args.edge_drop_prob
    if getattr(args, "mask_count_max", None) is not None:
        cfg["augment"]["mask_count_max"] = args.mask_count_max
    if getattr(args, "train_proportion", None) is not None:
        cfg["split"]["train_proportion"] = args.train_proportion
    if getattr(args, "split_seed", None) is not None:
        cfg["split"]["seed"] = args.split_seed
    if getattr(args, "layer_widths", None) is not None:
        cfg["model"]["layer_widths"] = [int(w) for w in args.layer_widths.split(",")]
    if getattr(args, "data", None) is not None:
        cfg["data"] = {"path": args.data}
    if getattr(args, "out", None) is not None:
        cfg["output_dir"] = args.out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", newline="\n")


def _write_report_jsonl(path: Path, reports: list[training.TrainReport]) -> None:
    lines = []
    for report in reports:
        for rec in report.records:
            lines.append(json.dumps(asdict(rec), sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), newline="\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    ds = generate_synthetic(args.subjects, args.nodes, args.class_gap, args.noise_sigma, seed)
    manifest = save_dataset(ds, args.out)
    print(f"wrote {len(ds)} subjects ({ds.n} nodes) to {manifest}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _apply_train_overrides(cfg, args)
    _resolve_seeds(cfg)
    if cfg["output_dir"] is None:
        raise ValidationError("no output directory: set 'output_dir' or pass --out")
    train_cfg = _build_train_config(cfg)
    split_spec = _build_split_spec(cfg)
    ds = _load_data_section(cfg)
    model_cfg = ModelConfig(ds.n, tuple(cfg["model"]["layer_widths"]))

    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", cfg)

    t0 = time.perf_counter()
    train, val, test = split_dataset(ds, split_spec)
    reports: list[training.TrainReport] = []
    if train_cfg.mode == "baseline":
        params, report = training.train_baseline(train, val, train_cfg, model_cfg)
        reports.append(report)
    else:
        params, pretrained, pre_report, fine_report = training.run_contrastive(
            train, val, train_cfg, model_cfg
        )
        reports.extend([pre_report, fine_report])
        save_checkpoint(pretrained, model_cfg, out_dir / "checkpoint_pretrain.json")
    save_checkpoint(params, model_cfg, out_dir / "checkpoint.json")
    _write_report_jsonl(out_dir / "report.jsonl", reports)

    test_result = evaluation.evaluate(params, test)
    last = reports[-1]
    summary = {
        "mode": train_cfg.mode,
        "architecture": "encoder-decoder" if train_cfg.use_decoder else "encoder",
        "augmentation": "on" if train_cfg.use_augmentation else "off",
        "seed": train_cfg.seed,
        "n_train": len(train),
        "n_val": len(val),
        "n_test": len(test),
        "best_val_accuracy": last.best_val_accuracy,
        "best_epoch": last.best_epoch,
        "final_val_accuracy": last.final_val_accuracy,
        "test_accuracy": test_result.accuracy,
    }
    # summary.json stays byte-stable across reruns; timing goes to stderr only
    _write_json(out_dir / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    print(f"total wall time {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    result = evaluation.evaluate(params, ds)
    print(
        json.dumps(
            {"accuracy": result.accuracy, "n_correct": result.n_correct, "n_total": result.n_total},
            sort_keys=True,
        )
    )
    return 0


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    out = evaluation.export_embeddings(params, ds, args.out)
    print(f"wrote {len(ds)} embeddings to {out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _apply_train_overrides(cfg, args)
    _resolve_seeds(cfg)
    if cfg["output_dir"] is None:
        raise ValidationError("no output directory: set 'output_dir' or pass --out")
    ds = _load_data_section(cfg)
    model_cfg = ModelConfig(ds.n, tuple(cfg["model"]["layer_widths"]))
    split_spec = _build_split_spec(cfg)

    proportions = [float(tok) for tok in args.proportions.split(",")]
    seeds = [int(tok) for tok in args.seeds.split(",")]
    decoders = {"on": [True], "off": [False], "both": [True, False]}[args.decoder or "on"]
    configs = []
    from dataclasses import replace

    base = _build_train_config(cfg)
    for use_decoder in decoders:
        for mode in ("baseline", "contrastive"):
            for use_aug in (True, False):
                configs.append(
                    replace(base, mode=mode, use_decoder=use_decoder,
                            use_augmentation=use_aug, lam=None)
                )

    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", cfg)
    result = evaluation.proportion_sweep(
        ds,
        proportions,
        configs,
        seeds,
        split_spec=split_spec,
        model_config=model_cfg,
        out_path=out_dir / "sweep.csv",
        jobs=args.jobs,
    )
    n_err = sum(1 for r in result.rows if r["status"] != "ok")
    print(f"wrote {len(result.rows)} rows to {out_dir / 'sweep.csv'} ({n_err} errors)")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    worst = 0.0
    ok = True
    for objective in OBJECTIVES:
        inputs, params = sample_fd_instance(objective, seed)
        report = finite_difference_check(objective, inputs, params, step=args.step)
        worst = max(worst, report.max_rel_error)
        ok = ok and report.passed
        status = "pass" if report.passed else "FAIL"
        print(f"{objective}: max relative error {report.max_rel_error:.3e} [{status}]")
    if not ok:
        print(f"gradient check failed (worst {worst:.3e} >= {1e-5:g})", file=sys.stderr)
        return 5
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser, decoder_choices=("on", "off")) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data", help="dataset directory or manifest path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=["baseline", "contrastive"])
    p.add_argument("--decoder", choices=list(decoder_choices))
    p.add_argument("--augment", choices=["on", "off"])
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--layer-widths", help="comma-separated encoder widths")
    p.add_argument("--baseline-epochs", type=int)
    p.add_argument("--baseline-batch", type=int)
    p.add_argument("--baseline-lr", type=float)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--pretrain-batch", type=int)
    p.add_argument("--pretrain-lr", type=float)
    p.add_argument("--finetune-K", dest="finetune_k", type=int)
    p.add_argument("--finetune-M", dest="finetune_m", type=int)
    p.add_argument("--finetune-batch", type=int)
    p.add_argument("--lr-frozen", type=float)
    p.add_argument("--lr-full", type=float)
    p.add_argument("--edge-drop-prob", type=float)
    p.add_argument("--mask-count-max", type=int)
    p.add_argument("--train-proportion", type=float)
    p.add_argument("--split-seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conngcl",
        description="Graph contrastive learning on connectivity matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--nodes", type=int, default=32)
    p.add_argument("--class-gap", type=float, default=0.3)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one configuration end to end")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy of a checkpoint over a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="per-subject embeddings with principal coordinates")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("sweep", help="accuracy across training-set proportions")
    _add_train_flags(p, decoder_choices=("on", "off", "both"))
    p.add_argument("--proportions", default="0.1,0.3,0.5,0.7,1.0")
    p.add_argument("--seeds", default="0")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int)
    p.add_argument("--step", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return 0 if code == 0 else 2
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def app() -> None:
    sys.exit(main())


if __name__ == "__main__":
    app()
