"""A-scan processing chain for OCT-guided edge detection.

Implements the tissue classification pipeline: moving-average smoothing,
air gating on the smoothed maximum, peak normalization, sliding-window
RMSE template matching, three-way material labeling, tissue-template
extraction, and the lateral edge-scan routine with bounded retries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateSignalError,
    InsufficientDepthError,
    InvalidArgumentError,
    NoSurfaceFoundError,
    SensorFaultError,
)


class Material(Enum):
    """Three-way label for what lies under the fiber."""

    AIR = "air"
    TISSUE = "tissue"
    NITINOL = "nitinol"


def _as_signal(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidArgumentError("signal must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("signal contains non-finite values")
    if np.any(x < 0):
        raise InvalidArgumentError("signal intensities must be non-negative")
    return x


@dataclass(frozen=True)
class AScan:
    """One OCT depth profile: reflectance intensity versus depth.

    samples are unitless non-negative intensities; depth_per_sample_mm is
    the physical depth covered by one sample; fiber_position_mm is the
    lateral fiber position at acquisition time.
    """

    samples: np.ndarray
    depth_per_sample_mm: float
    fiber_position_mm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_signal(self.samples))
        if not (self.depth_per_sample_mm > 0):
            raise InvalidArgumentError("depth_per_sample_mm must be > 0")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def depth_span_mm(self) -> float:
        return len(self) * self.depth_per_sample_mm


@dataclass(frozen=True)
class TissueTemplate:
    """Saved tissue signature used for RMSE matching (nominal 1 mm span)."""

    samples: np.ndarray
    span_mm: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_signal(self.samples))
        if float(np.max(self.samples)) <= 0:
            raise InvalidArgumentError("template must contain a positive sample")
        if not (self.span_mm > 0):
            raise InvalidArgumentError("span_mm must be > 0")

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class ClassifierThresholds:
    """Tunable thresholds of the classification pipeline.

    tau_air gates on the smoothed maximum; tau_rmse splits tissue from
    nitinol on the minimum matching error; tau_surface locates the tissue
    surface during template extraction; smoothing_window is the odd
    moving-average width in samples.
    """

    tau_air: float = 0.15
    tau_rmse: float = 0.20
    tau_surface: float = 0.30
    smoothing_window: int = 21

    def __post_init__(self):
        if not (0 < self.tau_air < 1):
            raise InvalidArgumentError("tau_air must lie in (0, 1)")
        if not (self.tau_rmse > 0):
            raise InvalidArgumentError("tau_rmse must be > 0")
        if not (self.tau_surface > 0):
            raise InvalidArgumentError("tau_surface must be > 0")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise InvalidArgumentError("smoothing_window must be odd and >= 1")


class EdgeOutcome(Enum):
    EDGE_FOUND = "edge_found"
    NO_EDGE_AFTER_RETRIES = "no_edge_after_retries"


@dataclass(frozen=True)
class EdgeScanResult:
    """Outcome of a lateral edge search.

    classifications is the ordered (fiber_position_mm, Material) record of
    every A-scan taken, across all attempts. edge_position_mm and
    transition_material are present only when the edge was found; the
    transition material is never tissue.
    """

    outcome: EdgeOutcome
    attempts_used: int
    classifications: tuple
    edge_position_mm: float | None = None
    transition_material: Material | None = None

    def __post_init__(self):
        if not (1 <= self.attempts_used <= 3):
            raise InvalidArgumentError("attempts_used must be 1..3")
        if self.outcome is EdgeOutcome.EDGE_FOUND:
            if self.edge_position_mm is None or self.transition_material is None:
                raise InvalidArgumentError("found edge requires position and material")
            if self.transition_material is Material.TISSUE:
                raise InvalidArgumentError("transition material cannot be tissue")

    @property
    def found(self) -> bool:
        return self.outcome is EdgeOutcome.EDGE_FOUND


def smooth_samples(samples, window: int) -> np.ndarray:
    """Centered moving average with truncated (shrinking) windows at the ends.

    Output length equals input length; window must be odd and no larger
    than the signal.
    """
    x = _as_signal(samples)
    if window < 1 or window % 2 == 0:
        raise InvalidArgumentError("window must be odd and >= 1")
    if window > x.size:
        raise InvalidArgumentError("window larger than signal")
    if window == 1:
        return x.copy()
    kernel = np.ones(window)
    sums = np.convolve(x, kernel, mode="same")
    counts = np.convolve(np.ones_like(x), kernel, mode="same")
    return sums / counts


def smooth(signal: AScan, window: int) -> AScan:
    """Smooth an A-scan, preserving its metadata."""
    return AScan(
        samples=smooth_samples(signal.samples, window),
        depth_per_sample_mm=signal.depth_per_sample_mm,
        fiber_position_mm=signal.fiber_position_mm,
    )


def is_air(smoothed: AScan | np.ndarray, tau_air: float) -> bool:
    """Air test: true iff the smoothed maximum is strictly below tau_air."""
    x = smoothed.samples if isinstance(smoothed, AScan) else _as_signal(smoothed)
    return bool(np.max(x) < tau_air)


def normalize(signal) -> np.ndarray:
    """Scale a signal so its maximum is exactly 1.

    Raises DegenerateSignalError on an all-zero signal. Unreachable after
    the air gate in the classification pipeline, but defined for safety.
    """
    x = _as_signal(signal)
    peak = float(np.max(x))
    if peak <= 0:
        raise DegenerateSignalError("cannot normalize an all-zero signal")
    return x / peak


def rmse_profile(template_norm, signal_norm) -> np.ndarray:
    """Sliding-window RMSE between a template and every offset of a signal.

    Both inputs are expected peak-normalized. Returns one value per valid
    offset: output[i] compares the template with the window of equal
    length starting at sample i, so the result has
    len(signal) - len(template) + 1 entries.
    """
    t = _as_signal(template_norm)
    s = _as_signal(signal_norm)
    n = t.size
    if n > s.size:
        raise InvalidArgumentError("template longer than signal")
    windows = np.lib.stride_tricks.sliding_window_view(s, n)
    return np.sqrt(np.mean((windows - t) ** 2, axis=1))


def classify(ascan: AScan, template: TissueTemplate, thr: ClassifierThresholds) -> Material:
    """Label an A-scan as air, tissue, or nitinol.

    Pipeline order: smooth the signal and template, gate on air, peak
    normalize both, then threshold the minimum sliding RMSE. Tissue wins
    on min RMSE strictly below tau_rmse, nitinol at or above it.
    """
    if len(ascan) < len(template) + 1:
        raise InvalidArgumentError(
            f"A-scan ({len(ascan)} samples) must exceed template length "
            f"({len(template)}) by at least one sample"
        )
    s_smooth = smooth_samples(ascan.samples, thr.smoothing_window)
    if is_air(s_smooth, thr.tau_air):
        return Material.AIR
    t_window = min(thr.smoothing_window, len(template) if len(template) % 2 == 1 else len(template) - 1)
    t_smooth = smooth_samples(template.samples, t_window)
    profile = rmse_profile(normalize(t_smooth), normalize(s_smooth))
    if float(np.min(profile)) < thr.tau_rmse:
        return Material.TISSUE
    return Material.NITINOL


def template_sample_count(span_mm: float, depth_per_sample_mm: float) -> int:
    """Samples needed so the template window covers at least span_mm."""
    return int(math.ceil(span_mm / depth_per_sample_mm - 1e-9))


def extract_template(
    ascan: AScan,
    thr: ClassifierThresholds,
    span_mm: float = 1.0,
) -> TissueTemplate:
    """Save the raw-signal window spanning span_mm past the tissue surface.

    The surface is the first sample whose smoothed intensity reaches
    tau_surface. The window is cut from the raw signal: smoothing locates
    the surface but must not blur the stored signature.
    """
    smoothed = smooth_samples(ascan.samples, thr.smoothing_window)
    above = np.nonzero(smoothed >= thr.tau_surface)[0]
    if above.size == 0:
        raise NoSurfaceFoundError(
            f"no smoothed sample reaches tau_surface={thr.tau_surface}"
        )
    start = int(above[0])
    n = template_sample_count(span_mm, ascan.depth_per_sample_mm)
    if start + n > len(ascan):
        raise InsufficientDepthError(
            f"need {n} samples past surface at {start}, have {len(ascan) - start}"
        )
    return TissueTemplate(samples=ascan.samples[start : start + n], span_mm=span_mm)


def edge_scan(
    acquire: Callable[[float], AScan],
    start_mm: float,
    step_mm: float,
    max_travel_mm: float,
    template: TissueTemplate,
    thr: ClassifierThresholds,
    max_attempts: int = 3,
) -> EdgeScanResult:
    """Sweep the fiber laterally until classification leaves tissue.

    Advances from start_mm in step_mm increments, classifying the A-scan
    acquired at each position. The first air or nitinol label halts the
    sweep and marks that fiber position as the vessel edge. A pass that
    ends with only tissue labels restarts from start_mm with fresh
    acquisitions, up to max_attempts passes; exhausting them reports
    NO_EDGE_AFTER_RETRIES so the caller can request an operator jog.

    Acquisition failures raise SensorFaultError, which is a device fault,
    not a failed search.
    """
    if step_mm <= 0:
        raise InvalidArgumentError("step_mm must be > 0")
    if max_travel_mm <= 0:
        raise InvalidArgumentError("max_travel_mm must be > 0")
    if not (1 <= max_attempts <= 3):
        raise InvalidArgumentError("max_attempts must be 1..3")

    n_positions = int(math.floor(max_travel_mm / step_mm + 1e-9)) + 1
    classifications: list[tuple[float, Material]] = []
    for attempt in range(1, max_attempts + 1):
        for i in range(n_positions):
            position = start_mm + i * step_mm
            try:
                scan = acquire(position)
            except SensorFaultError:
                raise
            except Exception as exc:
                raise SensorFaultError(f"acquisition failed at {position} mm") from exc
            label = classify(scan, template, thr)
            classifications.append((position, label))
            if label is not Material.TISSUE:
                return EdgeScanResult(
                    outcome=EdgeOutcome.EDGE_FOUND,
                    attempts_used=attempt,
                    classifications=tuple(classifications),
                    edge_position_mm=position,
                    transition_material=label,
                )
    return EdgeScanResult(
        outcome=EdgeOutcome.NO_EDGE_AFTER_RETRIES,
        attempts_used=max_attempts,
        classifications=tuple(classifications),
    )
