"""Command-line interface.

Subcommand style over a single entry point. Every command prints its
documented report to stdout (CSV lines), sends diagnostics to stderr, and
uses a uniform exit-code contract: 0 success, 1 runtime or I/O failure,
2 argument or configuration errors. Commands that write a delimited report
to disk render a figure next to it.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import generate_synthetic, read_manifest
from .errors import ContractError, MgcmaError
from .training import (
    ABLATION_VARIANTS,
    TrainConfig,
    cross_validate,
    evaluate,
    export_embeddings,
    gradient_audit,
    run_ablations,
    train,
    write_ablation_csv,
)

GRADIENT_TOLERANCE = 1e-4


class _Usage(Exception):
    """Argument-level problem; maps to exit code 2."""


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve_manifest(data_arg: str):
    path = Path(data_arg)
    if path.is_dir():
        path = path / "manifest.jsonl"
    return read_manifest(path)


def _load_train_config(args, manifest_dim: int) -> TrainConfig:
    """Config file first, then the paper-scale preset, then flag overrides."""
    merged: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            try:
                merged = json.load(f)
            except json.JSONDecodeError as e:
                raise _Usage(f"config is not valid JSON: {e}") from None
        if not isinstance(merged, dict):
            raise _Usage("config must be a JSON object")
    pipeline = dict(merged.get("pipeline", {}))
    pipeline.setdefault("model_dim", manifest_dim)
    if getattr(args, "paper_scale", False):
        pipeline.update(num_heads=12, n_blocks=6)
        merged.update(learning_rate=1e-5, batch_size=4, max_epochs=100)
    for flag, key in (
        ("lr", "learning_rate"),
        ("batch_size", "batch_size"),
        ("epochs", "max_epochs"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    merged["pipeline"] = pipeline
    try:
        cfg = TrainConfig.from_dict(merged)
    except (MgcmaError, TypeError) as e:
        raise _Usage(f"invalid configuration: {e}") from None
    if cfg.pipeline.model_dim != manifest_dim:
        raise _Usage(
            f"config model_dim {cfg.pipeline.model_dim} does not match "
            f"dataset dim {manifest_dim}"
        )
    return cfg


def _metrics_csv_lines(report, per_fold=True) -> list:
    lines = ["scope,wa,ua"]
    if per_fold:
        for i, fold in enumerate(report.per_fold, start=1):
            lines.append(f"fold{i},{fold.wa:.6f},{fold.ua:.6f}")
    scope = "pooled" if report.per_fold else "overall"
    lines.append(f"{scope},{report.wa:.6f},{report.ua:.6f}")
    return lines


def cmd_gen_data(args) -> int:
    try:
        manifest = generate_synthetic(
            args.out,
            n_pairs=args.pairs,
            n_classes=args.classes,
            dim=args.dim,
            len_speech=args.len_speech,
            len_text=args.len_text,
            separation=args.separation,
            seed=args.seed,
            session_shift=args.session_shift,
        )
    except ContractError as e:
        raise _Usage(str(e)) from None
    _say(f"wrote {len(manifest.records)} pairs under {args.out}")
    print("pairs,dim,classes,manifest")
    print(f"{len(manifest.records)},{manifest.dim},{args.classes},{Path(args.out) / 'manifest.jsonl'}")
    return 0


def cmd_train(args) -> int:
    manifest = _resolve_manifest(args.data)
    cfg = _load_train_config(args, manifest.dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _say(f"training on {len(manifest.records)} pairs for {cfg.max_epochs} epochs")
    result = train(
        manifest,
        cfg,
        checkpoint_path=out / "model.ckpt",
        log_path=out / "train_log.jsonl",
    )
    from .plots import render_training_curves

    render_training_curves(result.log, out / "train_curves.png")
    _say(f"wrote {out / 'model.ckpt'}, {out / 'train_log.jsonl'}, {out / 'train_curves.png'}")
    last = result.log[-1]
    keys = ["epoch", "l_da", "l_ia", "l_ce", "total", "train_wa", "train_ua"]
    print(",".join(keys))
    print(",".join(str(last[k]) for k in keys))
    return 0


def cmd_eval(args) -> int:
    manifest = _resolve_manifest(args.data)
    report = evaluate(args.model, manifest)
    for line in _metrics_csv_lines(report, per_fold=False):
        print(line)
    if report.missing_classes:
        _say(f"warning: classes absent from the test set: {report.missing_classes}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(
            "\n".join(_metrics_csv_lines(report, per_fold=False)) + "\n", encoding="utf-8"
        )
        from .plots import render_confusion_heatmap

        render_confusion_heatmap(report, out / "confusion.png")
        _say(f"wrote {out / 'metrics.csv'}, {out / 'confusion.png'}")
    return 0


def cmd_cross_validate(args) -> int:
    manifest = _resolve_manifest(args.data)
    cfg = _load_train_config(args, manifest.dim)
    _say(f"cross-validating {len(manifest.records)} pairs, 5 folds")
    report = cross_validate(manifest, cfg)
    lines = _metrics_csv_lines(report)
    for line in lines:
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        from .plots import render_confusion_heatmap

        render_confusion_heatmap(report, out / "confusion.png")
        _say(f"wrote {out / 'metrics.csv'}, {out / 'confusion.png'}")
    return 0


def cmd_ablate(args) -> int:
    manifest = _resolve_manifest(args.data)
    cfg = _load_train_config(args, manifest.dim)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise _Usage(f"unknown variants: {unknown}; choose from {sorted(ABLATION_VARIANTS)}")
    if not variants:
        raise _Usage("no variants given")
    rows = []
    for i, system in enumerate(variants, start=1):
        _say(f"[{i}/{len(variants)}] {system}: {ABLATION_VARIANTS[system] or 'bare classifier'}")
        rows.extend(run_ablations(manifest, cfg, [system]))
    print("system,configuration,wa,ua")
    for row in rows:
        print(f"{row.system},{row.configuration},{row.report.wa:.6f},{row.report.ua:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(rows, out / "ablation.csv")
        from .plots import render_ablation_bars

        render_ablation_bars(rows, out / "ablation.png")
        _say(f"wrote {out / 'ablation.csv'}, {out / 'ablation.png'}")
    return 0


def cmd_grad_check(args) -> int:
    if args.tolerance <= 0:
        raise _Usage(f"tolerance must be positive, got {args.tolerance}")
    rows = gradient_audit(seed=args.seed)
    print("component,max_rel_error,tolerance,status")
    worst_fail = False
    for name, err in rows:
        ok = err < args.tolerance
        worst_fail |= not ok
        print(f"{name},{err:.6e},{args.tolerance:.1e},{'pass' if ok else 'FAIL'}")
    return 1 if worst_fail else 0


def cmd_export(args) -> int:
    manifest = _resolve_manifest(args.data)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    try:
        written = export_embeddings(args.model, manifest, args.tap, out)
    except ContractError as e:
        raise _Usage(str(e)) from None
    # figure sibling: same stem, .png
    import csv as _csv

    with open(out, "r", encoding="utf-8") as f:
        rows = list(_csv.DictReader(f))
    dim = sum(1 for k in rows[0] if k.startswith("v"))
    vectors = [[float(r[f"v{i}"]) for i in range(dim)] for r in rows]
    from .plots import render_embedding_scatter

    figure = out.with_suffix(".png")
    render_embedding_scatter(
        vectors, [r["label"] for r in rows], [r["modality"] for r in rows], figure
    )
    _say(f"wrote {out}, {figure}")
    print("rows,out")
    print(f"{written},{out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgcma",
        description="Multi-granularity cross-modal alignment for speech-text emotion recognition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--pairs", required=True, type=int, help="number of speech-text pairs")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--len-speech", type=int, default=10)
    p.add_argument("--len-text", type=int, default=8)
    p.add_argument("--separation", type=float, default=1.0, help="class separation scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--session-shift", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_data)

    def add_train_options(p):
        p.add_argument("--config", help="JSON run config (TrainConfig document)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument(
            "--paper-scale",
            action="store_true",
            help="full-scale preset: 12 heads, 6 blocks, lr 1e-5, batch 4, 100 epochs",
        )

    p = sub.add_parser("train", help="train on the full manifest")
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="output directory")
    add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for metrics.csv and confusion.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-validate", help="leave-one-session-out evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="directory for metrics.csv and confusion.png")
    add_train_options(p)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("ablate", help="run ablation/sequence variants S0-S9")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", default=",".join(sorted(ABLATION_VARIANTS)))
    p.add_argument("--out", help="directory for ablation.csv and ablation.png")
    add_train_options(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference audit of all loss terms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=GRADIENT_TOLERANCE)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("export-embeddings", help="per-utterance vectors at a tap point")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tap", required=True, choices=["encoder", "post_alignment", "pooled"])
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except _Usage as e:
        _say(f"error: {e}")
        return 2
    except (MgcmaError, OSError) as e:
        _say(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
