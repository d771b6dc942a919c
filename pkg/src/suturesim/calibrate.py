"""Calibration sweeps: classifier thresholds over a labeled corpus and the
noise operating point at which edge detection reproduces the reference
bench rates.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oct_core, oct_synth
from .config import GlobalConfig
from .errors import InvalidArgumentError
from .oct_core import ClassifierThresholds, Material

# bench reference rates the noise sweep aims for
TARGET_EDGE_RATE = 0.898
TARGET_MATERIAL_RATE = 0.886


def corpus_template(entries, thresholds: ClassifierThresholds) -> oct_core.TissueTemplate:
    """Extract the matching template from the first usable tissue scan."""
    for ascan, label, _ in entries:
        if label is not Material.TISSUE:
            continue
        try:
            return oct_core.extract_template(ascan, thresholds)
        except Exception:
            continue
    raise InvalidArgumentError("corpus holds no usable tissue scan for a template")


def classify_corpus(corpus_dir: Path, thresholds: ClassifierThresholds) -> dict:
    """Label every corpus entry; returns per-file labels and the confusion table."""
    entries = oct_synth.load_corpus(corpus_dir)
    template = corpus_template(entries, thresholds)
    names = [m.value for m in Material]
    confusion = {truth: {pred: 0 for pred in names} for truth in names}
    results = []
    hits = 0
    for ascan, label, entry in entries:
        predicted = oct_core.classify(ascan, template, thresholds)
        confusion[label.value][predicted.value] += 1
        hits += int(predicted is label)
        results.append({"file": entry["file"], "label": label.value,
                        "predicted": predicted.value})
    return {
        "n": len(entries),
        "accuracy": hits / len(entries) if entries else 0.0,
        "confusion": confusion,
        "results": results,
    }


def sweep_thresholds(
    corpus_dir: Path,
    tau_air_grid=None,
    tau_rmse_grid=None,
    base: ClassifierThresholds | None = None,
) -> dict:
    """Accuracy grid over (tau_air, tau_rmse) plus the chosen operating point.

    Also reports the tissue-vs-nitinol operating curve along the tau_rmse
    axis (ROC-style: tissue recall against nitinol false-positive rate).
    """
    base = base or ClassifierThresholds()
    tau_air_grid = list(tau_air_grid or np.round(np.arange(0.05, 0.31, 0.05), 2))
    tau_rmse_grid = list(tau_rmse_grid or np.round(np.arange(0.08, 0.41, 0.04), 2))
    entries = oct_synth.load_corpus(corpus_dir)
    template = corpus_template(entries, base)

    grid = []
    best = None
    for tau_air in tau_air_grid:
        for tau_rmse in tau_rmse_grid:
            thresholds = replace(base, tau_air=float(tau_air), tau_rmse=float(tau_rmse))
            per_class = {m.value: [0, 0] for m in Material}  # hits, total
            for ascan, label, _ in entries:
                predicted = oct_core.classify(ascan, template, thresholds)
                per_class[label.value][1] += 1
                per_class[label.value][0] += int(predicted is label)
            rates = {name: (h / t if t else 0.0) for name, (h, t) in per_class.items()}
            balanced = float(np.mean([rates[m.value] for m in Material
                                      if per_class[m.value][1] > 0]))
            point = {"tau_air": float(tau_air), "tau_rmse": float(tau_rmse),
                     "balanced_accuracy": balanced, "per_class_recall": rates}
            grid.append(point)
            if best is None or balanced > best["balanced_accuracy"]:
                best = point

    roc = []
    for tau_rmse in tau_rmse_grid:
        thresholds = replace(base, tau_rmse=float(tau_rmse))
        tissue_hits = tissue_total = 0
        nitinol_fp = nitinol_total = 0
        for ascan, label, _ in entries:
            if label is Material.AIR:
                continue
            predicted = oct_core.classify(ascan, template, thresholds)
            if label is Material.TISSUE:
                tissue_total += 1
                tissue_hits += int(predicted is Material.TISSUE)
            else:
                nitinol_total += 1
                nitinol_fp += int(predicted is Material.TISSUE)
        roc.append({
            "tau_rmse": float(tau_rmse),
            "tissue_recall": tissue_hits / tissue_total if tissue_total else 0.0,
            "nitinol_false_tissue_rate": nitinol_fp / nitinol_total if nitinol_total else 0.0,
        })

    return {"grid": grid, "roc_tau_rmse": roc, "operating_point": best}


def evaluate_noise_level(
    level: float,
    n_scans: int,
    seed: int,
    config: GlobalConfig | None = None,
    edge_tolerance_mm: float | None = None,
) -> dict:
    """Edge-found and material-label rates over synthetic lateral scans."""
    config = config or GlobalConfig()
    cfg = config.oct
    tol = edge_tolerance_mm if edge_tolerance_mm is not None else cfg.edge_tolerance_mm
    thresholds = ClassifierThresholds(
        tau_air=cfg.tau_air, tau_rmse=cfg.tau_rmse, tau_surface=cfg.tau_surface,
        smoothing_window=cfg.smoothing_window)
    wf = config.workflow
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xED6E]))
    found_ok = 0
    material_ok = 0
    for i in range(n_scans):
        true_edge = wf.scene_edge_base_mm + float(
            rng.uniform(-wf.scene_edge_jitter_mm, wf.scene_edge_jitter_mm))
        transition = (Material.NITINOL if float(rng.uniform()) < wf.nitinol_probability
                      else Material.AIR)
        tissue = oct_synth.tissue_profile(level)
        beyond = (oct_synth.nitinol_profile(level) if transition is Material.NITINOL
                  else oct_synth.air_profile(level))
        scan_rng = np.random.default_rng(oct_synth.derive_seed(seed, i))

        def acquire(position, edge=true_edge, tissue=tissue, beyond=beyond,
                    scan_rng=scan_rng):
            profile = tissue if position < edge else beyond
            return oct_synth.gen_ascan(
                profile, scan_rng, n_samples=cfg.n_samples,
                depth_span_mm=cfg.depth_span_mm, fiber_position_mm=position)

        try:
            template = oct_core.extract_template(acquire(0.0), thresholds,
                                                 span_mm=cfg.template_span_mm)
        except Exception:
            continue
        result = oct_core.edge_scan(
            acquire, 0.0, cfg.edge_step_mm, cfg.edge_max_travel_mm, template,
            thresholds, max_attempts=cfg.edge_max_attempts)
        if result.found and abs(result.edge_position_mm - true_edge) <= tol:
            found_ok += 1
            material_ok += int(result.transition_material is transition)
    return {
        "noise_level": float(level),
        "n_scans": n_scans,
        "edge_rate": found_ok / n_scans,
        "material_rate": material_ok / found_ok if found_ok else 0.0,
    }


def sweep_noise(
    levels=None,
    n_scans: int = 200,
    seed: int = 0,
    config: GlobalConfig | None = None,
) -> dict:
    """Find the noise operating point closest to the reference rates."""
    levels = list(levels if levels is not None
                  else np.round(np.arange(0.0, 1.01, 0.1), 2))
    rows = [evaluate_noise_level(level, n_scans, seed, config) for level in levels]
    def distance(row):
        return (abs(row["edge_rate"] - TARGET_EDGE_RATE)
                + abs(row["material_rate"] - TARGET_MATERIAL_RATE))
    chosen = min(rows, key=distance)
    return {"levels": rows, "chosen": chosen,
            "targets": {"edge_rate": TARGET_EDGE_RATE,
                        "material_rate": TARGET_MATERIAL_RATE}}


def write_json(path: Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
