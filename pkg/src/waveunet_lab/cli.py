"""Experiment driver: train, evaluate, search, report.

Every command exits 0 on success and nonzero with a category-prefixed
message on stderr otherwise. Outputs are deterministic given identical
inputs and seeds; wall-clock timestamps live only in manifests.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path
from typing import Any, Optional

import yaml

from .checkpoint import load_checkpoint
from .config import (
    DatasetConfig,
    ExperimentConfig,
    RunManifest,
    now_iso,
    read_manifest,
    write_manifest,
)
from .errors import ArgumentError, ConfigurationError, ReportError, WaveUNetLabError
from .evaluation import (
    EvalReport,
    correlation_points_csv,
    correlation_report,
    eval_report_json,
    evaluate_model,
    reports_table_csv,
    scatter_plot,
)
from .freeze import apply_freeze
from .model import build_separator
from .specs import ArchitectureSpec, FreezeSpec, model_name
from .training import TrainConfig, train


def _dataset_from_args(args, channels: Optional[int] = None) -> DatasetConfig:
    if getattr(args, "synthetic", None):
        synthetic: dict[str, Any] = {"tracks": args.synthetic, "seed": args.seed or 0}
        if channels is not None:
            synthetic["channels"] = channels
        return DatasetConfig(synthetic=synthetic, split_seed=args.seed or 0)
    if getattr(args, "dataset", None):
        return DatasetConfig(path=args.dataset, split_seed=args.seed or 0)
    raise ArgumentError("one of --dataset or --synthetic is required")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.data_seed = args.seed
    if args.synthetic:
        cfg.dataset = DatasetConfig(
            synthetic={"tracks": args.synthetic, "seed": args.seed or cfg.data_seed},
            split_seed=args.seed or cfg.data_seed,
        )
    return cfg


def _check_rerun(run_dir: Path, config_snapshot: dict) -> None:
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        existing = read_manifest(manifest_path)
        if existing.config and existing.config != config_snapshot:
            raise ConfigurationError(
                f"run directory {run_dir} already holds a different configuration; "
                "run names must be unique within an output directory"
            )


def _print_report(report: EvalReport, stream=None) -> None:
    stream = stream or sys.stdout
    print(f"model {report.model} (stages={report.stages}, regime={report.regime}, "
          f"metric={report.metric})", file=stream)
    for source, stats in report.sources.items():
        if stats is None:
            print(f"  {source:>14}: no usable segments", file=stream)
            continue
        print(
            f"  {source:>14}: med {stats['median']:7.2f}  mad {stats['mad']:6.2f}  "
            f"mean {stats['mean']:7.2f}  sd {stats['sd']:6.2f}  "
            f"(segments {report.segment_counts[source]}, "
            f"excluded {report.excluded_counts[source]})",
            file=stream,
        )


# ----- train -----------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _apply_overrides(ExperimentConfig.from_yaml(args.config), args)
    run_dir = Path(cfg.output_dir) / cfg.run_name
    snapshot_dict = cfg.to_dict()
    _check_rerun(run_dir, snapshot_dict)
    started = now_iso()

    split = cfg.dataset.load()
    separator = build_separator(cfg.architecture)
    partition = apply_freeze(separator, cfg.freeze)
    result = train(
        partition,
        split,
        cfg.training,
        data_seed=cfg.data_seed,
        out_dir=run_dir,
        checkpoint_extra={"model": cfg.run_name},
    )

    manifest = RunManifest(
        run_name=cfg.run_name,
        kind="train",
        started=started,
        finished=now_iso(),
        config=snapshot_dict,
        seeds={
            "model": cfg.architecture.seed,
            "freeze": cfg.freeze.freeze_seed,
            "data": cfg.data_seed,
        },
        artifacts={
            "initial_checkpoint": "initial.ckpt",
            "best_checkpoint": "best.ckpt",
            "history": "history.jsonl",
        },
        results={
            "best_validation_loss": result.state.best_validation_loss,
            "best_epoch": result.state.best_epoch,
            "epochs": result.state.epoch,
            "final_phase": result.state.phase,
        },
    )
    write_manifest(manifest, run_dir / "manifest.json")
    print(f"trained {cfg.run_name}: {result.state.epoch} epochs, "
          f"best validation loss {result.state.best_validation_loss:.6f} "
          f"at epoch {result.state.best_epoch} (phase {result.state.phase})")
    print(f"artifacts in {run_dir}")
    return 0


# ----- evaluate --------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    if args.stages < 1:
        raise ArgumentError(f"stages must be >= 1, got {args.stages}")
    ckpt_path = Path(args.checkpoint)
    ckpt = load_checkpoint(ckpt_path)
    separator = ckpt.build()
    dataset = _dataset_from_args(args, channels=separator.spec.audio_channels)
    split = dataset.load()
    freeze = ckpt.freeze_spec
    model = ckpt.extra.get("model") or ckpt_path.stem
    report = evaluate_model(
        separator,
        split,
        stages=args.stages,
        model=model,
        regime=freeze.regime if freeze else "U",
    )
    out_dir = Path(args.out) if args.out else ckpt_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    base = f"eval_{model}_s{args.stages}"
    (out_dir / f"{base}.json").write_text(eval_report_json(report) + "\n")
    (out_dir / f"{base}.csv").write_text(reports_table_csv([report]))
    manifest = RunManifest(
        run_name=f"{model}_s{args.stages}",
        kind="evaluate",
        started=now_iso(),
        finished=now_iso(),
        config={"checkpoint": str(ckpt_path), "stages": args.stages,
                "dataset": dataset.to_dict()},
        artifacts={"eval_report": f"{base}.json", "eval_table": f"{base}.csv"},
    )
    write_manifest(manifest, out_dir / f"{base}.manifest.json")
    _print_report(report)
    return 0


# ----- search ----------------------------------------------------------------------


def _merge_training(base: dict, overrides: dict | None) -> TrainConfig:
    merged = dict(base)
    merged.update(overrides or {})
    return TrainConfig.from_dict(merged)


def _parse_search_file(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise ConfigurationError(f"variants file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    if "baseline" not in raw:
        raise ConfigurationError("missing section baseline")
    if not raw.get("variants"):
        raise ConfigurationError("missing section variants")
    return raw


def cmd_search(args) -> int:
    raw = _parse_search_file(Path(args.variants))
    out_dir = Path(args.out or raw.get("output_dir") or "search")
    data_seed = args.seed if args.seed is not None else int(raw.get("data_seed", 0))
    freeze_seed = int(raw.get("freeze_seed", 0))
    shared_training = raw.get("training") or {}
    if args.synthetic:
        dataset_cfg = DatasetConfig(
            synthetic={"tracks": args.synthetic, "seed": data_seed}, split_seed=data_seed
        )
    else:
        dataset_cfg = DatasetConfig.from_dict(raw.get("dataset") or {})
    split = dataset_cfg.load()

    def parse_entry(entry: dict, role: str) -> dict:
        arch = ArchitectureSpec.from_dict(entry.get("architecture") or {})
        training = _merge_training(shared_training, entry.get("training"))
        name = entry.get("name") or model_name(
            arch, FreezeSpec(regime="U"), stages=training.stages,
            identity_loss=training.use_identity_loss,
        )
        return {"role": role, "name": str(name), "architecture": arch, "training": training}

    entries = [parse_entry(raw["baseline"], "baseline")]
    entries += [parse_entry(v, "variant") for v in raw["variants"]]
    variant_names = [e["name"] for e in entries[1:]]
    if len(set(variant_names)) != len(variant_names):
        dupes = sorted({n for n in variant_names if variant_names.count(n) > 1})
        raise ReportError(f"duplicate variant names: {dupes}")
    if len(variant_names) < 3:
        raise ReportError(f"need at least 3 variants beyond the baseline, got {len(variant_names)}")

    started = now_iso()
    reports: dict[str, tuple[EvalReport, EvalReport]] = {}
    for entry in entries:
        pair: dict[str, EvalReport] = {}
        for regime in ("J", "U"):
            freeze = FreezeSpec(regime=regime, freeze_seed=freeze_seed)
            run_name = f"{regime}{entry['name'][1:]}" if entry["name"][:1] in "UJ" \
                else f"{entry['name']}_{regime}"
            run_dir = out_dir / run_name
            separator = build_separator(entry["architecture"])
            partition = apply_freeze(separator, freeze)
            result = train(
                partition, split, entry["training"], data_seed=data_seed,
                out_dir=run_dir, checkpoint_extra={"model": run_name},
            )
            best = result.best_checkpoint.build()
            report = evaluate_model(
                best, split, stages=entry["training"].stages,
                model=run_name, regime=regime,
            )
            (run_dir / "eval.json").write_text(eval_report_json(report) + "\n")
            manifest = RunManifest(
                run_name=run_name,
                kind="train",
                started=started,
                finished=now_iso(),
                config={
                    "architecture": entry["architecture"].to_dict(),
                    "freeze": freeze.to_dict(),
                    "training": entry["training"].to_dict(),
                    "dataset": dataset_cfg.to_dict(),
                    "data_seed": data_seed,
                },
                artifacts={
                    "initial_checkpoint": "initial.ckpt",
                    "best_checkpoint": "best.ckpt",
                    "history": "history.jsonl",
                    "eval_report": "eval.json",
                },
                results={"best_validation_loss": result.state.best_validation_loss},
            )
            write_manifest(manifest, run_dir / "manifest.json")
            pair[regime] = report
            mean_voc = report.mean("vocals")
            print(f"  {run_name}: mean vocal SDR "
                  f"{'n/a' if mean_voc is None else f'{mean_voc:.2f} dB'}")
        reports[entry["name"]] = (pair["J"], pair["U"])

    baseline_pair = reports[entries[0]["name"]]
    variant_pairs = [reports[n] for n in variant_names]
    corr = correlation_report(variant_pairs, baseline_pair)

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "correlation.json").write_text(
        json.dumps(corr.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    for source, source_corr in corr.by_source.items():
        (out_dir / f"points_{source}.csv").write_text(correlation_points_csv(source_corr))
        scatter_plot(source_corr, out_dir / f"scatter_{source}.png")

    ranking = sorted(
        [(n, j.mean("vocals")) for n, (j, _u) in reports.items()],
        key=lambda kv: -kv[1],
    )
    ranking_lines = ["rank,name,j_mean_vocal_sdr"]
    ranking_lines += [f"{i + 1},{n},{v:.6f}" for i, (n, v) in enumerate(ranking)]
    (out_dir / "ranking.csv").write_text("\n".join(ranking_lines) + "\n")

    manifest = RunManifest(
        run_name="search",
        kind="search",
        started=started,
        finished=now_iso(),
        config={"variants_file": str(args.variants), "data_seed": data_seed,
                "freeze_seed": freeze_seed, "dataset": dataset_cfg.to_dict()},
        artifacts={
            "correlation": "correlation.json",
            "ranking": "ranking.csv",
            **{f"scatter_{s}": f"scatter_{s}.png" for s in corr.by_source},
        },
        results={
            s: {"pearson": c.pearson, "spearman": c.spearman, "quadrants": c.quadrants}
            for s, c in corr.by_source.items()
        },
    )
    write_manifest(manifest, out_dir / "manifest.json")
    voc = corr.by_source["vocals"]
    print(f"search complete: vocal Spearman {voc.spearman:.2f}, "
          f"Pearson {voc.pearson:.2f}, quadrants {voc.quadrants}")
    print("J-proxy ranking (mean vocal SDR):")
    for i, (n, v) in enumerate(ranking):
        print(f"  {i + 1}. {n}: {v:.2f} dB")
    return 0


# ----- report ----------------------------------------------------------------------


def _load_eval_reports(directory: Path) -> list[EvalReport]:
    manifests = sorted(directory.rglob("*manifest.json"))
    if not manifests:
        raise ReportError(f"no manifests found under {directory}")
    reports: dict[str, EvalReport] = {}
    for mpath in manifests:
        manifest = read_manifest(mpath)
        rel = manifest.artifacts.get("eval_report")
        if not rel:
            continue
        rpath = mpath.parent / rel
        if rpath.exists():
            report = EvalReport.from_dict(json.loads(rpath.read_text()))
            reports.setdefault(f"{report.model}_s{report.stages}", report)
    return [reports[k] for k in sorted(reports)]


def cmd_report(args) -> int:
    directory = Path(args.dir)
    if not directory.is_dir():
        raise ReportError(f"{directory} is not a directory")
    reports = _load_eval_reports(directory)
    if not reports:
        raise ReportError(f"no evaluation reports found under {directory}")
    out_dir = Path(args.out) if args.out else directory
    out_dir.mkdir(parents=True, exist_ok=True)

    table = reports_table_csv(reports)
    (out_dir / "report_table.csv").write_text(table)

    lines = [f"{len(reports)} evaluated model(s); metric: {reports[0].metric}", ""]
    for report in reports:
        buf = io.StringIO()
        _print_report(report, stream=buf)
        lines.append(buf.getvalue().rstrip())
    text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(text)

    # J/U pairs by name suffix allow re-emitting the proxy scatter
    by_model = {r.model: r for r in reports}
    pairs = []
    baseline = None
    for name, u_report in sorted(by_model.items()):
        if not name.startswith("U"):
            continue
        j_name = "J" + name[1:]
        if j_name not in by_model:
            continue
        if name == "U1":
            baseline = (by_model[j_name], u_report)
        else:
            pairs.append((by_model[j_name], u_report))
    scatter_note = "not enough (J, U) pairs for a correlation scatter"
    if baseline is not None and len(pairs) >= 3:
        corr = correlation_report(pairs, baseline)
        for source, source_corr in corr.by_source.items():
            (out_dir / f"points_{source}.csv").write_text(correlation_points_csv(source_corr))
            scatter_plot(source_corr, out_dir / f"scatter_{source}.png")
        scatter_note = "correlation scatters written"
    print(text)
    print(scatter_note)
    return 0


# ----- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waveunet-lab",
        description="Waveform source separation lab: training regimes, "
                    "structural variants, projection-SDR evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the data seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--synthetic", type=int, default=None, metavar="N",
                       help="use a synthetic corpus with N tracks")

    p_train = sub.add_parser("train", help="train one experiment from a config file")
    p_train.add_argument("--config", required=True, help="experiment YAML file")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on a test split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--stages", type=int, default=1,
                        help="inference refinement stages")
    p_eval.add_argument("--dataset", type=str, default=None, help="dataset root")
    common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_search = sub.add_parser(
        "search", help="train (J, U) pairs for a variant set and correlate"
    )
    p_search.add_argument("--variants", required=True, help="variant set YAML file")
    common(p_search)
    p_search.set_defaults(func=cmd_search)

    p_report = sub.add_parser("report", help="consolidate run reports in a directory")
    p_report.add_argument("--dir", required=True)
    common(p_report)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WaveUNetLabError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
