"""Synthetic A-scan generation with ground truth.

Produces labeled depth profiles for the three material classes, lateral
scan sequences over segmented scenes, and on-disk calibration corpora.
Everything is deterministic for a fixed seed; per-file seeds are derived
by mixing the corpus seed with the file index.

The tissue model is a surface step followed by exponential decay with an
anatomical three-layer reflectivity pattern, multiplicative speckle, and
a uniform noise floor. Per-scan jitter of the layer amplitudes/positions
scales with speckle_contrast and is what makes template matching fail at
high noise. Nitinol is a narrow specular peak that extinguishes to the
noise floor; its per-scan height/width variation also rides on
speckle_contrast. Air is floor noise plus occasional broad glints
(residual fluid reflections) whose propensity rides on speckle_contrast.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .oct_core import AScan, Material

DEFAULT_N_SAMPLES = 1024
DEFAULT_DEPTH_SPAN_MM = 5.0

# Vessel-wall layering: depths past the surface (mm), relative amplitudes,
# and gaussian width shared by all layers.
_LAYER_DEPTHS_MM = (0.15, 0.45, 0.80)
_LAYER_AMPLITUDES = (0.5, -0.35, 0.3)
_LAYER_WIDTH_MM = 0.06


@dataclass(frozen=True)
class MaterialProfile:
    """Generator parameters for one material class."""

    material: Material
    surface_depth_mm: float = 1.0
    peak_intensity: float = 0.8
    attenuation_per_mm: float = 1.5
    specular_width_samples: int = 5
    noise_floor: float = 0.03
    speckle_contrast: float = 0.3

    def __post_init__(self):
        if not (0 < self.peak_intensity <= 1):
            raise InvalidArgumentError("peak_intensity must lie in (0, 1]")
        if self.attenuation_per_mm <= 0:
            raise InvalidArgumentError("attenuation_per_mm must be > 0")
        if self.noise_floor < 0 or self.speckle_contrast < 0:
            raise InvalidArgumentError("noise parameters must be >= 0")
        if self.material is not Material.AIR and self.noise_floor >= self.peak_intensity:
            raise InvalidArgumentError("noise_floor must stay below peak_intensity")
        if self.specular_width_samples < 1:
            raise InvalidArgumentError("specular_width_samples must be >= 1")


@dataclass(frozen=True)
class LateralScene:
    """Contiguous (length_mm, MaterialProfile) segments along a scan path."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise InvalidArgumentError("scene needs at least one segment")
        for length, profile in segs:
            if length <= 0:
                raise InvalidArgumentError("segment lengths must be > 0")
            if not isinstance(profile, MaterialProfile):
                raise InvalidArgumentError("segments carry MaterialProfile entries")
        object.__setattr__(self, "segments", segs)

    @property
    def total_length_mm(self) -> float:
        return float(sum(length for length, _ in self.segments))

    def profile_at(self, position_mm: float) -> MaterialProfile:
        if position_mm < 0:
            raise InvalidArgumentError("position must be >= 0")
        start = 0.0
        for length, profile in self.segments:
            if position_mm < start + length:
                return profile
            start += length
        raise InvalidArgumentError(
            f"position {position_mm} mm beyond scene length {self.total_length_mm} mm"
        )

    def material_at(self, position_mm: float) -> Material:
        return self.profile_at(position_mm).material


def air_profile(noise_level: float = 0.0) -> MaterialProfile:
    return MaterialProfile(
        material=Material.AIR,
        noise_floor=0.02 + 0.16 * noise_level,
        speckle_contrast=noise_level,
    )


def tissue_profile(noise_level: float = 0.0, surface_depth_mm: float = 1.0) -> MaterialProfile:
    return MaterialProfile(
        material=Material.TISSUE,
        surface_depth_mm=surface_depth_mm,
        peak_intensity=0.8,
        attenuation_per_mm=1.5,
        noise_floor=0.02 + 0.16 * noise_level,
        speckle_contrast=0.25 + 0.75 * noise_level,
    )


def nitinol_profile(noise_level: float = 0.0, surface_depth_mm: float = 1.0) -> MaterialProfile:
    return MaterialProfile(
        material=Material.NITINOL,
        surface_depth_mm=surface_depth_mm,
        peak_intensity=0.95,
        specular_width_samples=5,
        noise_floor=0.02 + 0.16 * noise_level,
        speckle_contrast=noise_level,
    )


_PROFILE_FACTORIES = {
    Material.AIR: air_profile,
    Material.TISSUE: tissue_profile,
    Material.NITINOL: nitinol_profile,
}


def profile_for(material: Material, noise_level: float = 0.0) -> MaterialProfile:
    return _PROFILE_FACTORIES[material](noise_level)


def _rng_of(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _floor_noise(rng, noise_floor: float, n: int) -> np.ndarray:
    if noise_floor <= 0:
        return np.zeros(n)
    return rng.uniform(0.0, noise_floor, size=n)


def _tissue_samples(profile: MaterialProfile, rng, depths: np.ndarray) -> np.ndarray:
    x = depths - profile.surface_depth_mm
    base = np.where(
        x >= 0,
        profile.peak_intensity * np.exp(-profile.attenuation_per_mm * np.maximum(x, 0.0)),
        0.0,
    )
    amp_jitter = 0.8 * profile.speckle_contrast
    pos_jitter_mm = 0.12 * profile.speckle_contrast
    layer = np.ones_like(depths)
    for depth_mm, amplitude in zip(_LAYER_DEPTHS_MM, _LAYER_AMPLITUDES):
        a = amplitude * (1.0 + amp_jitter * rng.standard_normal())
        mu = depth_mm + pos_jitter_mm * rng.standard_normal()
        layer += a * np.exp(-0.5 * ((x - mu) / _LAYER_WIDTH_MM) ** 2)
    speckle = 1.0 + profile.speckle_contrast * rng.uniform(-1.0, 1.0, size=depths.size)
    signal = base * np.clip(layer, 0.0, None) * speckle
    signal = signal + _floor_noise(rng, profile.noise_floor, depths.size)
    return np.clip(signal, 0.0, 1.0)


def _nitinol_samples(profile: MaterialProfile, rng, depths: np.ndarray, dps_mm: float) -> np.ndarray:
    n = depths.size
    signal = _floor_noise(rng, profile.noise_floor, n)
    height = profile.peak_intensity * (1.0 - 0.45 * profile.speckle_contrast * rng.uniform())
    extra = int(round(profile.speckle_contrast * rng.uniform(0.0, 6.0)))
    width = profile.specular_width_samples + extra
    start = int(np.searchsorted(depths, profile.surface_depth_mm))
    stop = min(start + width, n)
    if start < n:
        signal[start:stop] = np.maximum(signal[start:stop], height)
    return np.clip(signal, 0.0, 1.0)


def _air_samples(profile: MaterialProfile, rng, depths: np.ndarray) -> np.ndarray:
    signal = _floor_noise(rng, profile.noise_floor, depths.size)
    glint_rate = 0.55 * profile.speckle_contrast
    n_glints = int(rng.poisson(glint_rate)) if glint_rate > 0 else 0
    span = float(depths[-1]) if depths.size else 0.0
    for _ in range(n_glints):
        center = rng.uniform(0.2, max(span - 0.2, 0.3))
        width_mm = rng.uniform(0.05, 0.12)
        height = rng.uniform(0.15, 0.50) * (0.25 + 0.75 * profile.speckle_contrast)
        signal += height * np.exp(-0.5 * ((depths - center) / width_mm) ** 2)
    return np.clip(signal, 0.0, 1.0)


def gen_ascan(
    profile: MaterialProfile,
    rng_seed,
    *,
    n_samples: int = DEFAULT_N_SAMPLES,
    depth_span_mm: float = DEFAULT_DEPTH_SPAN_MM,
    fiber_position_mm: float = 0.0,
) -> AScan:
    """Synthesize one labeled A-scan; bit-identical for equal (profile, seed)."""
    if n_samples < 2:
        raise InvalidArgumentError("n_samples must be >= 2")
    rng = _rng_of(rng_seed)
    dps = depth_span_mm / n_samples
    depths = (np.arange(n_samples) + 0.5) * dps
    if profile.material is Material.TISSUE:
        samples = _tissue_samples(profile, rng, depths)
    elif profile.material is Material.NITINOL:
        samples = _nitinol_samples(profile, rng, depths, dps)
    else:
        samples = _air_samples(profile, rng, depths)
    return AScan(samples=samples, depth_per_sample_mm=dps, fiber_position_mm=fiber_position_mm)


def gen_lateral_scan(
    scene: LateralScene,
    step_mm: float,
    rng_seed,
    *,
    n_samples: int = DEFAULT_N_SAMPLES,
    depth_span_mm: float = DEFAULT_DEPTH_SPAN_MM,
) -> list[AScan]:
    """One A-scan per step along the scene, truncated at the scene length."""
    if step_mm <= 0:
        raise InvalidArgumentError("step_mm must be > 0")
    rng = _rng_of(rng_seed)
    count = int(math.floor(scene.total_length_mm / step_mm + 1e-9))
    scans = []
    for i in range(count):
        position = i * step_mm
        scans.append(
            gen_ascan(
                scene.profile_at(position),
                rng,
                n_samples=n_samples,
                depth_span_mm=depth_span_mm,
                fiber_position_mm=position,
            )
        )
    return scans


def derive_seed(base_seed: int, *indices: int) -> np.random.SeedSequence:
    """Stable child seed for parallel-friendly per-item generation."""
    return np.random.SeedSequence([int(base_seed), *[int(i) for i in indices]])


def write_lateral_scan(out_dir: Path, scans: Sequence[AScan]) -> dict:
    """Persist a lateral scan: one CSV per A-scan plus a position manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    positions = {}
    dps = scans[0].depth_per_sample_mm if scans else 0.0
    for i, scan in enumerate(scans):
        name = f"scan_{i:04d}.csv"
        write_ascan_csv(out_dir / name, scan)
        positions[name] = scan.fiber_position_mm
    manifest = {"version": 1, "depth_per_sample_mm": dps,
                "fiber_position_mm": positions}
    with open(out_dir / "positions.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def read_lateral_scan(in_dir: Path) -> list[AScan]:
    """Load a lateral scan directory back in fiber-position order."""
    in_dir = Path(in_dir)
    with open(in_dir / "positions.json") as fh:
        manifest = json.load(fh)
    dps = manifest["depth_per_sample_mm"]
    items = sorted(manifest["fiber_position_mm"].items(), key=lambda kv: kv[1])
    return [read_ascan_csv(in_dir / name, dps, fiber_position_mm=pos)
            for name, pos in items]


def write_ascan_csv(path: Path, ascan: AScan) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "intensity"])
        for i, value in enumerate(ascan.samples):
            writer.writerow([i, repr(float(value))])


def read_ascan_csv(path: Path, depth_per_sample_mm: float, fiber_position_mm: float = 0.0) -> AScan:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["sample_index", "intensity"]:
            raise InvalidArgumentError(f"{path}: expected 'sample_index,intensity' header")
        samples = [float(row[1]) for row in reader]
    return AScan(
        samples=np.asarray(samples),
        depth_per_sample_mm=depth_per_sample_mm,
        fiber_position_mm=fiber_position_mm,
    )


def gen_corpus(
    counts: Mapping,
    noise_levels: Sequence[float],
    rng_seed: int,
    out_dir: Path,
    *,
    n_samples: int = DEFAULT_N_SAMPLES,
    depth_span_mm: float = DEFAULT_DEPTH_SPAN_MM,
) -> dict:
    """Write a labeled A-scan corpus plus manifest.json; returns the manifest.

    counts maps material (Material or its value string) to scans per noise
    level; one file is written per (material, noise level, index) triple.
    """
    if not noise_levels:
        raise InvalidArgumentError("need at least one noise level")
    normalized: dict[Material, int] = {}
    for key, value in counts.items():
        mat = key if isinstance(key, Material) else Material(str(key).lower())
        if int(value) < 1:
            raise InvalidArgumentError(f"count for {mat.value} must be >= 1")
        normalized[mat] = int(value)
    if not normalized:
        raise InvalidArgumentError("counts must name at least one material")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dps = depth_span_mm / n_samples
    entries = []
    file_index = 0
    for level_idx, level in enumerate(noise_levels):
        for material in (Material.TISSUE, Material.AIR, Material.NITINOL):
            if material not in normalized:
                continue
            profile = profile_for(material, float(level))
            for k in range(normalized[material]):
                seed = derive_seed(rng_seed, level_idx, _MATERIAL_INDEX[material], k)
                ascan = gen_ascan(
                    profile, seed, n_samples=n_samples, depth_span_mm=depth_span_mm
                )
                name = f"ascan_{file_index:04d}_{material.value}.csv"
                write_ascan_csv(out_dir / name, ascan)
                entries.append(
                    {
                        "file": name,
                        "label": material.value,
                        "noise_level": float(level),
                        "profile_params": _profile_dict(profile),
                        "seed": [int(rng_seed), level_idx, _MATERIAL_INDEX[material], k],
                        "depth_per_sample_mm": dps,
                    }
                )
                file_index += 1
    manifest = {"version": 1, "rng_seed": int(rng_seed), "entries": entries}
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


_MATERIAL_INDEX = {Material.TISSUE: 0, Material.AIR: 1, Material.NITINOL: 2}


def _profile_dict(profile: MaterialProfile) -> dict:
    d = asdict(profile)
    d["material"] = profile.material.value
    return d


def manifest_digest(manifest: dict) -> str:
    return hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode("utf-8")
    ).hexdigest()


def load_corpus(corpus_dir: Path) -> list[tuple[AScan, Material, dict]]:
    """Load (ascan, label, entry) triples from a corpus directory."""
    corpus_dir = Path(corpus_dir)
    with open(corpus_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    loaded = []
    for entry in manifest["entries"]:
        ascan = read_ascan_csv(
            corpus_dir / entry["file"], entry["depth_per_sample_mm"]
        )
        loaded.append((ascan, Material(entry["label"]), entry))
    return loaded
