"""Command-line entry point: gen-data, train, eval, ablate.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors (bad
arguments, missing or invalid config file).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    ARM_LABELS,
    ARM_ORDER,
    ConfigError,
    ExperimentConfig,
    build_federation_config,
    build_label_space,
    build_model_config,
    canonical_dumps,
    load_config,
    resolve_dataset,
)
from .datagen import generate, load_dataset, save_dataset
from .federation import _frozen_records, evaluate_global, run_training
from .metrics import MetricsReport, evaluate
from .model import forward, load_checkpoint, save_checkpoint

TABLE_HEADER = ("C-AP", "C-P", "C-R", "C-F1", "O-AP", "O-P", "O-R", "O-F1")


def _metrics_table(rows: list[tuple[str, MetricsReport]], label_width: int = 20) -> str:
    out = ["Metrics".ljust(label_width) + "".join(h.rjust(8) for h in TABLE_HEADER)]
    for label, report in rows:
        out.append(label.ljust(label_width) + "".join(f"{v:8.2f}" for v in report.scaled()))
    return "\n".join(out)


def _mean_report(reports: list[MetricsReport]) -> MetricsReport:
    stacked = np.array([r.values() for r in reports])
    return MetricsReport(*stacked.mean(axis=0))


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    if cfg.dataset_source != "generate":
        raise ConfigError("gen-data needs dataset.source = generate")
    spec = cfg.dataset_spec
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out_dir = args.out or cfg.dataset_path or cfg.output.dir
    dataset = generate(spec)
    save_dataset(dataset, out_dir)
    sizes = dataset.sizes()
    print(f"wrote dataset to {out_dir}")
    print(f"clients: {dataset.num_clients}  classes: {dataset.num_classes}  "
          f"feature_dim: {dataset.feature_dim}  test samples: {len(dataset.test)}")
    hist = ", ".join(f"client_{k}={n}" for k, n in enumerate(sizes))
    print(f"shard sizes: {hist}")
    return 0


def _train_once(cfg: ExperimentConfig, dataset, mode, seed, out_dir: Path, parallel: int,
                eval_every: int):
    model_cfg = build_model_config(cfg, dataset, mode)
    label_space = build_label_space(cfg, mode, model_cfg)
    fed_cfg = build_federation_config(cfg, dataset, mode=mode, seed=seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, reports = run_training(
        fed_cfg,
        dataset,
        model_cfg,
        label_space,
        eval_every=eval_every,
        parallel=parallel,
        log_path=out_dir / "rounds.log",
        metrics_log_path=out_dir / "metrics.log",
        checkpoint_dir=out_dir,
        checkpoint_every=cfg.output.checkpoint_every,
    )
    save_checkpoint(out_dir / "final.ckpt", model_cfg, params, _frozen_records(label_space))
    final = evaluate_global(params, dataset, model_cfg, mode, label_space)
    return params, reports, final


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset = resolve_dataset(cfg)
    out_dir = Path(args.out or cfg.output.dir)
    seed = cfg.federation.seed if args.seed is None else args.seed
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.canonical").write_text(canonical_dumps(cfg))
    _, reports, final = _train_once(
        cfg, dataset, cfg.federation.mode, seed, out_dir, args.parallel, cfg.output.eval_every
    )
    table = _metrics_table([(cfg.federation.mode, final)])
    (out_dir / "final_metrics.txt").write_text(table + "\n")
    print(f"trained {cfg.federation.mode} for {cfg.federation.rounds} rounds "
          f"({len(reports)} reports) -> {out_dir}")
    print(table)
    return 0


def cmd_eval(args) -> int:
    model_cfg, params, frozen = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if model_cfg.num_classes != dataset.num_classes:
        raise ValueError(
            f"checkpoint has {model_cfg.num_classes} classes, dataset has {dataset.num_classes}"
        )
    if model_cfg.feature_dim != dataset.feature_dim:
        raise ValueError(
            f"checkpoint expects feature_dim {model_cfg.feature_dim}, "
            f"dataset has {dataset.feature_dim}"
        )
    if "label_embeddings" in params.names():
        rows = params["label_embeddings"].data
    else:
        rows = frozen.get("label_embeddings")
    chunks = []
    feats = dataset.test.features
    for lo in range(0, feats.shape[0], 128):
        logits = forward(params, feats[lo : lo + 128], rows, model_cfg)
        chunks.append(1.0 / (1.0 + np.exp(-logits.data)))
    report = evaluate(np.concatenate(chunks, axis=0), dataset.test.labels)
    print(_metrics_table([("checkpoint", report)]))
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    dataset = resolve_dataset(cfg)
    out_dir = Path(args.out or cfg.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = cfg.ablate_seeds if args.seed is None else (args.seed,)

    results: dict[str, list[MetricsReport]] = {arm: [] for arm in ARM_ORDER}
    for arm in ARM_ORDER:
        for seed in seeds:
            run_dir = out_dir / arm.replace("+", "_") / f"seed_{seed}"
            _, _, final = _train_once(cfg, dataset, arm, seed, run_dir, args.parallel,
                                      eval_every=0)
            results[arm].append(final)
            print(f"[{ARM_LABELS[arm]}] seed {seed}: {final.format_row()}")

    rows = [(ARM_LABELS[arm], _mean_report(results[arm])) for arm in ARM_ORDER]
    table = _metrics_table(rows, label_width=22)
    summary = [
        table,
        "",
        f"mean over {len(seeds)} seed(s): {', '.join(str(s) for s in seeds)}",
    ]
    for arm in ARM_ORDER:
        per_seed = "; ".join(
            f"seed {s}: c_ap={r.c_ap * 100:.2f}" for s, r in zip(seeds, results[arm])
        )
        summary.append(f"{ARM_LABELS[arm]}: {per_seed}")
    text = "\n".join(summary)
    (out_dir / "ablation.txt").write_text(text + "\n")
    print(text)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedlgt",
        description="Desk-scale federated multi-label classification experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--parallel", type=int, default=1,
                       help="max concurrent client updates per round")

    p_gen = sub.add_parser("gen-data", help="write the synthetic dataset directory")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen_data)

    p_train = sub.add_parser("train", help="run federated training")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the four-arm comparison")
    common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
