"""Command-line entry point.

Subcommands: simulate, gen-corpus, calibrate-thresholds, classify,
train-vision, eval-vision, metrics, report, replay, serve. Exit codes:
0 ok, 2 config error, 3 i/o error, 4 runtime or training failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import GlobalConfig, load_config
from .errors import ConfigError, SutureSimError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUNTIME = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (comments allowed)")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="suturesim",
        description="Deterministic anastomosis-robot simulator and analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run full procedures and write reports")
    _add_common(p)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--scenario", help="scenario JSON file (faults, prompts, jogs)")

    p = sub.add_parser("gen-corpus", help="write a labeled synthetic A-scan corpus")
    _add_common(p)
    p.add_argument("--counts", default="tissue=17,air=16,nitinol=16",
                   help="per-material scan counts, e.g. tissue=17,air=16")
    p.add_argument("--noise-levels", default=None,
                   help="comma-separated noise levels (default: calibrated level)")

    p = sub.add_parser("calibrate-thresholds",
                       help="sweep thresholds over a corpus (or --sweep-noise)")
    _add_common(p)
    p.add_argument("--corpus", help="corpus directory (for the threshold sweep)")
    p.add_argument("--sweep-noise", action="store_true",
                   help="sweep the synthetic noise level against bench rates")
    p.add_argument("--scans-per-level", type=int, default=200)

    p = sub.add_parser("classify", help="classify a corpus and print the confusion")
    _add_common(p)
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("train-vision", help="build the pair dataset and train")
    _add_common(p)
    p.add_argument("--pairs", type=int, default=540)
    p.add_argument("--ratio", type=float, default=3.0)
    p.add_argument("--save-dataset", action="store_true")

    p = sub.add_parser("eval-vision", help="evaluate a trained pair classifier")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", help="dataset directory (default: regenerate)")
    p.add_argument("--pairs", type=int, default=540)
    p.add_argument("--ratio", type=float, default=3.0)

    p = sub.add_parser("metrics", help="pooled statistics over run reports")
    _add_common(p)
    p.add_argument("--runs-dir", required=True)

    p = sub.add_parser("report", help="comparison report against the fixtures")
    _add_common(p)
    p.add_argument("--runs-dir", required=True)

    p = sub.add_parser("replay", help="re-execute an event log and verify its hash")
    p.add_argument("log", help="event log (.jsonl) to replay")

    p = sub.add_parser("serve", help="real-time mode with the operator console")
    _add_common(p)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--time-scale", type=float, default=0.002,
                   help="wall seconds per simulated second")
    p.add_argument("--scenario", help="scenario JSON file")

    return parser


def _load(args) -> GlobalConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return load_config(getattr(args, "config", None), overrides)


def _out_dir(config: GlobalConfig, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, artifacts: list) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump({"command": command, "artifacts": sorted(artifacts)},
                  fh, indent=2, sort_keys=True)


def _read_scenario(path: str | None) -> dict | None:
    if not path:
        return None
    from .config import strip_json_comments
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    try:
        return json.loads(strip_json_comments(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed scenario {path}: {exc}") from exc


def cmd_simulate(args) -> int:
    from . import metrics as metrics_mod
    from .runner import (batch_summary, run_single, simulated_for_comparison,
                         stratified_offsets, stream_rng, write_event_log)

    config = _load(args)
    scenario = _read_scenario(args.scenario)
    out = _out_dir(config, args)
    artifacts = []
    ladder_rng = stream_rng(config.seed, 0xBA7C4, "calibration-ladder")
    residuals = stratified_offsets(
        args.runs, config.devices.arm.calibration_residual_sd_mm, ladder_rng)
    reports = []
    for r in range(args.runs):
        report, runner = run_single(config, run_index=r, scenario=scenario,
                                    calibration_residual_mm=residuals[r])
        reports.append(report)
        report_path = out / f"report_{r:03d}.json"
        with open(report_path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        log_path = out / f"events_{r:03d}.jsonl"
        write_event_log(log_path, config, runner, report, scenario)
        artifacts += [report_path.name, log_path.name]
        print(f"run {r}: time/stitch {report.time_per_stitch_s:.1f} s, "
              f"autonomy {report.autonomy_fraction:.2f}, "
              f"interventions {report.intervention_count}")

    summary = batch_summary(reports)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    artifacts.append("summary.json")

    comparison = metrics_mod.compare_report(simulated_for_comparison(reports),
                                            metrics_mod.load_fixtures())
    with open(out / "comparison.json", "w") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
    (out / "comparison.md").write_text(
        metrics_mod.render_report_markdown(comparison))
    artifacts += ["comparison.json", "comparison.md"]
    _write_manifest(out, "simulate", artifacts)
    print(f"wrote {len(artifacts)} artifacts to {out}")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    from .oct_synth import gen_corpus, manifest_digest

    config = _load(args)
    out = _out_dir(config, args)
    counts = {}
    try:
        for part in args.counts.split(","):
            name, value = part.split("=")
            counts[name.strip()] = int(value)
    except ValueError as exc:
        raise ConfigError(f"bad --counts {args.counts!r}: {exc}") from exc
    if args.noise_levels:
        levels = [float(v) for v in args.noise_levels.split(",")]
    else:
        levels = [config.synth.calibrated_noise_level]
    manifest = gen_corpus(counts, levels, config.seed, out,
                          n_samples=config.oct.n_samples,
                          depth_span_mm=config.oct.depth_span_mm)
    print(f"{len(manifest['entries'])} scans -> {out} "
          f"(manifest sha256 {manifest_digest(manifest)[:12]})")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibrate import sweep_noise, sweep_thresholds, write_json

    config = _load(args)
    out = _out_dir(config, args)
    artifacts = []
    if args.sweep_noise:
        result = sweep_noise(n_scans=args.scans_per_level, seed=config.seed,
                             config=config)
        write_json(out / "noise_sweep.json", result)
        artifacts.append("noise_sweep.json")
        chosen = result["chosen"]
        print(f"chosen noise level {chosen['noise_level']}: "
              f"edge {chosen['edge_rate']:.3f}, material {chosen['material_rate']:.3f}")
    else:
        if not args.corpus:
            raise ConfigError("--corpus is required unless --sweep-noise is set")
        result = sweep_thresholds(Path(args.corpus))
        write_json(out / "threshold_sweep.json", result)
        artifacts.append("threshold_sweep.json")
        op = result["operating_point"]
        print(f"operating point tau_air={op['tau_air']} tau_rmse={op['tau_rmse']} "
              f"balanced accuracy {op['balanced_accuracy']:.3f}")
    _write_manifest(out, "calibrate-thresholds", artifacts)
    return EXIT_OK


def cmd_classify(args) -> int:
    from .calibrate import classify_corpus
    from .oct_core import ClassifierThresholds

    config = _load(args)
    out = _out_dir(config, args)
    thresholds = ClassifierThresholds(
        tau_air=config.oct.tau_air, tau_rmse=config.oct.tau_rmse,
        tau_surface=config.oct.tau_surface,
        smoothing_window=config.oct.smoothing_window)
    result = classify_corpus(Path(args.corpus), thresholds)
    with open(out / "classification.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    _write_manifest(out, "classify", ["classification.json"])
    print(f"accuracy {result['accuracy']:.3f} over {result['n']} scans")
    for truth, row in result["confusion"].items():
        print(f"  {truth:8s} -> {row}")
    return EXIT_OK


def cmd_train_vision(args) -> int:
    from .vision import (build_dataset, evaluate, save_dataset, save_model,
                         train, write_curve_csv)

    config = _load(args)
    out = _out_dir(config, args)
    split = build_dataset(args.pairs, args.ratio, config.seed,
                          camera_config=config.devices.camera)
    result = train(split, config.vision, rng_seed=config.seed)
    metrics = evaluate(result.model, split.test)
    artifacts = ["model.pt", "curve.csv", "vision_metrics.json"]
    save_model(out / "model.pt", result, config.hash())
    write_curve_csv(out / "curve.csv", result.curve)
    payload = {
        "test_accuracy": metrics.accuracy,
        "test_f1_missed": metrics.f1_missed,
        "confusion": metrics.confusion,
        "epochs_trained": len(result.curve),
        "best_epoch": result.best_epoch,
        "stopped_early": result.stopped_early,
        "split": {part: len(getattr(split, part)) for part in ("train", "val", "test")},
    }
    with open(out / "vision_metrics.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    if args.save_dataset:
        save_dataset(split, out / "dataset")
        artifacts.append("dataset")
    _write_manifest(out, "train-vision", artifacts)
    print(f"test accuracy {metrics.accuracy:.4f}, F1 {metrics.f1_missed:.4f} "
          f"({len(result.curve)} epochs, early stop: {result.stopped_early})")
    return EXIT_OK


def cmd_eval_vision(args) -> int:
    from .vision import build_dataset, evaluate, load_dataset, load_model

    config = _load(args)
    out = _out_dir(config, args)
    model, _ = load_model(Path(args.model))
    if args.dataset:
        split = load_dataset(Path(args.dataset))
    else:
        split = build_dataset(args.pairs, args.ratio, config.seed,
                              camera_config=config.devices.camera)
    metrics = evaluate(model, split.test)
    payload = {"test_accuracy": metrics.accuracy,
               "test_f1_missed": metrics.f1_missed,
               "confusion": metrics.confusion}
    with open(out / "eval_metrics.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    _write_manifest(out, "eval-vision", ["eval_metrics.json"])
    print(f"test accuracy {metrics.accuracy:.4f}, F1 {metrics.f1_missed:.4f}")
    return EXIT_OK


def _load_reports(runs_dir: Path) -> list:
    paths = sorted(Path(runs_dir).glob("report_*.json"))
    if not paths:
        raise SutureSimError(f"no report_*.json files under {runs_dir}")
    reports = []
    for path in paths:
        with open(path) as fh:
            reports.append(json.load(fh))
    return reports


class _ReportView:
    """Duck-typed view over a report JSON for the summary helpers."""

    def __init__(self, data: dict):
        self.placement_stats = data.get("placement_stats")
        self.lumen = data["lumen"]
        self.time_per_stitch_s = data["time_per_stitch_s"]
        self.autonomy_fraction = data["autonomy_fraction"]
        self.crossed_stitch = data["crossed_stitch"]
        self.disconnect_count = data["disconnect_count"]


def cmd_metrics(args) -> int:
    from .runner import batch_summary

    config = _load(args)
    out = _out_dir(config, args)
    reports = [_ReportView(d) for d in _load_reports(Path(args.runs_dir))]
    summary = batch_summary(reports)
    with open(out / "metrics_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    _write_manifest(out, "metrics", ["metrics_summary.json"])
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    from . import metrics as metrics_mod
    from .runner import simulated_for_comparison

    config = _load(args)
    out = _out_dir(config, args)
    reports = [_ReportView(d) for d in _load_reports(Path(args.runs_dir))]
    comparison = metrics_mod.compare_report(simulated_for_comparison(reports),
                                            metrics_mod.load_fixtures())
    with open(out / "comparison.json", "w") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
    markdown = metrics_mod.render_report_markdown(comparison)
    (out / "comparison.md").write_text(markdown)
    _write_manifest(out, "report", ["comparison.json", "comparison.md"])
    print(markdown)
    return EXIT_OK


def cmd_replay(args) -> int:
    from .runner import replay_event_log

    result = replay_event_log(Path(args.log))
    if result["match"]:
        print(f"replay ok: trace hash {result['replayed_hash'][:16]} matches")
        return EXIT_OK
    print(f"replay MISMATCH: recorded {result['recorded_hash'][:16]} "
          f"!= replayed {result['replayed_hash'][:16]}", file=sys.stderr)
    return EXIT_RUNTIME


def cmd_serve(args) -> int:
    import uvicorn

    from .serve import create_app

    config = _load(args)
    scenario = _read_scenario(args.scenario)
    app = create_app(config, scenario=scenario, time_scale=args.time_scale)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_HANDLERS = {
    "simulate": cmd_simulate,
    "gen-corpus": cmd_gen_corpus,
    "calibrate-thresholds": cmd_calibrate,
    "classify": cmd_classify,
    "train-vision": cmd_train_vision,
    "eval-vision": cmd_eval_vision,
    "metrics": cmd_metrics,
    "report": cmd_report,
    "replay": cmd_replay,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SutureSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
