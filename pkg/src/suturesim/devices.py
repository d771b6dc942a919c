"""Simulated hardware: robotic arm with connection faults, tandem vessel
rotator, needle-driving suture tool, vessel with grip/slip mechanics, and
a microcamera producing synthetic before/after frames.

Device state is owned by the simulation event loop; callers outside the
loop interact through bus services only. Noise parameters default to the
bench-calibrated values (rotation repeatability, grip threshold, puncture
bound, bite placement spread).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import (
    ArmConfig,
    CameraConfig,
    MapsConfig,
    SlipConfig,
    ToolConfig,
    VesselConfig,
)
from .errors import ConnectionLostError, InvalidArgumentError, InvalidStateError

SIDES = ("right", "left")


@dataclass(frozen=True)
class CalibrationOffsets:
    x_offset_mm: float = 0.0
    y_offset_mm: float = 0.0
    z_offset_mm: float = 0.0

    def __post_init__(self):
        for value in (self.x_offset_mm, self.y_offset_mm, self.z_offset_mm):
            if not math.isfinite(value):
                raise InvalidArgumentError("offsets must be finite")
        if self.z_offset_mm < 0:
            raise InvalidArgumentError("z offset must be >= 0")

    def as_vector(self) -> np.ndarray:
        return np.array([self.x_offset_mm, self.y_offset_mm, self.z_offset_mm])


def calibrate(flush_distance_reading_mm: float, puncture_jog_mm: tuple) -> CalibrationOffsets:
    """Build offsets from the flush-distance reading and the puncture jog.

    The distance measured with the tool flush against a reference becomes
    the z offset; the jog needed to bring the observed puncture under the
    sensor becomes the x and y offsets.
    """
    dx, dy = float(puncture_jog_mm[0]), float(puncture_jog_mm[1])
    if not all(math.isfinite(v) for v in (flush_distance_reading_mm, dx, dy)):
        raise InvalidArgumentError("calibration readings must be finite")
    if flush_distance_reading_mm < 0:
        raise InvalidArgumentError("flush distance must be >= 0")
    return CalibrationOffsets(x_offset_mm=dx, y_offset_mm=dy,
                              z_offset_mm=flush_distance_reading_mm)


@dataclass(frozen=True)
class ArmState:
    pose: tuple
    connected: bool
    disconnect_count: int
    scan_axis: tuple = (1.0, 0.0, 0.0)


class RoboticArm:
    """Pose-level arm model with calibration offsets and outage accounting.

    The lateral scan axis is fixed at +x in tool coordinates; edge
    positions and needle planes live along it.
    """

    SCAN_AXIS = (1.0, 0.0, 0.0)

    def __init__(self, config: ArmConfig | None = None,
                 offsets: CalibrationOffsets | None = None):
        self.config = config or ArmConfig()
        self.offsets = offsets or CalibrationOffsets()
        self.pose = np.zeros(3)
        self.connected = True
        self.disconnect_count = 0
        self._outage_started_ms: float | None = None
        self._excluded_ms = 0.0

    def state(self) -> ArmState:
        return ArmState(pose=tuple(float(v) for v in self.pose),
                        connected=self.connected,
                        disconnect_count=self.disconnect_count,
                        scan_axis=self.SCAN_AXIS)

    def move_to(self, target) -> ArmState:
        if not self.connected:
            raise ConnectionLostError("arm is disconnected; reconnect before moving")
        target = np.asarray(target, dtype=float)
        if target.shape != (3,):
            raise InvalidArgumentError("target pose must be a 3-vector")
        self.pose = target + self.offsets.as_vector()
        return self.state()

    def drop_connection(self, at_ms: float) -> None:
        if self.connected:
            self.connected = False
            self.disconnect_count += 1
            self._outage_started_ms = at_ms

    def restore_connection(self, at_ms: float) -> None:
        if not self.connected:
            self.connected = True
            if self._outage_started_ms is not None:
                self._excluded_ms += at_ms - self._outage_started_ms
                self._outage_started_ms = None

    def excluded_time_ms(self, now_ms: float) -> float:
        """Total disconnected time, including a still-open outage."""
        open_part = (now_ms - self._outage_started_ms
                     if self._outage_started_ms is not None else 0.0)
        return self._excluded_ms + open_part


def schedule_arm_faults(bus, arm: RoboticArm, endpoint, disconnect_times_s,
                        reconnect_delay_s: float) -> None:
    """Drop the arm connection at each scheduled time; restore after the
    configured delay. Outage intervals are accounted exactly so the caller
    can subtract them from the procedure time."""
    for t_s in disconnect_times_s:
        if t_s < 0:
            raise InvalidArgumentError("fault times must be >= 0")
        at_ms = float(t_s) * 1000.0
        restore_ms = at_ms + reconnect_delay_s * 1000.0

        def drop(at_ms=at_ms):
            arm.drop_connection(at_ms)
            if endpoint is not None:
                endpoint.connected = False
            bus.record("device.arm", "fault", {"at_ms": at_ms})

        def restore(at_ms=restore_ms):
            arm.restore_connection(at_ms)
            if endpoint is not None:
                endpoint.connected = True
            bus.record("device.arm", "reconnect", {"at_ms": at_ms})

        bus.schedule(at_ms, drop)
        bus.schedule(restore_ms, restore)


class MapsRotator:
    """Tandem clamp-carriage rotator with per-side repeatability noise."""

    def __init__(self, config: MapsConfig | None = None, rng=None):
        self.config = config or MapsConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.left_angle_deg = 0.0
        self.right_angle_deg = 0.0

    @property
    def grip_force_n(self) -> float:
        return self.config.grip_force_n

    def _achieved(self, side: str, increment_deg: float) -> float:
        if side == "left":
            offset, sd = self.config.left_mean_offset_deg, self.config.left_sd_deg
        else:
            offset, sd = self.config.right_mean_offset_deg, self.config.right_sd_deg
        noise = self.rng.normal(0.0, sd) if sd > 0 else 0.0
        return increment_deg + offset + noise

    def rotate(self, side: str, increment_deg: float) -> dict:
        """Rotate one or both holders by a multiple of the 45-degree pitch."""
        step = self.config.rotation_step_deg
        if abs(increment_deg / step - round(increment_deg / step)) > 1e-9:
            raise InvalidArgumentError(
                f"increment must be a multiple of {step} degrees"
            )
        achieved = {}
        if side in ("left", "both"):
            delta = self._achieved("left", increment_deg)
            self.left_angle_deg = (self.left_angle_deg + delta) % 360.0
            achieved["left"] = delta
        if side in ("right", "both"):
            delta = self._achieved("right", increment_deg)
            self.right_angle_deg = (self.right_angle_deg + delta) % 360.0
            achieved["right"] = delta
        if not achieved:
            raise InvalidArgumentError("side must be left, right, or both")
        return achieved

    def home(self) -> dict:
        """Rotate both holders back to zero (shortest way), with noise."""
        achieved = {}
        for name in ("left", "right"):
            angle = self.left_angle_deg if name == "left" else self.right_angle_deg
            back = -((angle + 180.0) % 360.0 - 180.0)
            delta = back + (self.rng.normal(0.0, 0.3) if back else 0.0)
            if name == "left":
                self.left_angle_deg = (self.left_angle_deg + delta) % 360.0
            else:
                self.right_angle_deg = (self.right_angle_deg + delta) % 360.0
            achieved[name] = delta
        return achieved


@dataclass
class SlipState:
    axial_mm: float = 0.0
    angular_deg: float = 0.0


@dataclass(frozen=True)
class Placement:
    site: int
    suture_index: int
    bite_depth_mm: float
    angular_position_deg: float
    engaged: bool = True


@dataclass(frozen=True)
class NeedleDriveOutcome:
    engaged: bool
    applied_tangential_force_n: float
    applied_axial_force_n: float
    bite_depth_actual_mm: float | None
    axial_slip_mm: float = 0.0
    angular_slip_deg: float = 0.0

    def __post_init__(self):
        if self.applied_tangential_force_n < 0 or self.applied_axial_force_n < 0:
            raise InvalidArgumentError("forces must be >= 0")


class VesselModel:
    """Vessel geometry, per-site placements, and grip/slip bookkeeping."""

    def __init__(self, config: VesselConfig | None = None,
                 slip_config: SlipConfig | None = None,
                 grip_force_n: float = 0.24):
        self.config = config or VesselConfig()
        if not (0 < self.config.wall_thickness_mm < self.config.diameter_mm / 2):
            raise InvalidArgumentError("wall thickness must lie in (0, diameter/2)")
        self.slip_config = slip_config or SlipConfig()
        self.grip_force_n = grip_force_n
        self.site_pitch_deg = 360.0 / self.config.n_sites
        self.placements: dict[str, list[Placement]] = {side: [] for side in SIDES}
        self.slip_state: dict[str, SlipState] = {side: SlipState() for side in SIDES}

    @property
    def radius_mm(self) -> float:
        return self.config.diameter_mm / 2.0

    def site_angle_deg(self, side: str, site: int) -> float:
        """Nominal site angle shifted by the accumulated angular slip."""
        base = (site - 1) * self.site_pitch_deg
        return base + self.slip_state[side].angular_deg

    def is_sutured(self, side: str, site: int) -> bool:
        return any(p.site == site for p in self.placements[side])

    def apply_forces(self, side: str, tangential_n: float, axial_n: float) -> tuple:
        """Slip response: zero at or below the grip force, linear above it."""
        if tangential_n < 0 or axial_n < 0:
            raise InvalidArgumentError("forces must be >= 0")
        grip = self.grip_force_n
        axial_slip = 0.0
        angular_slip = 0.0
        if axial_n > grip:
            axial_slip = self.slip_config.axial_mm_per_n * (axial_n - grip)
        if tangential_n > grip:
            arc_mm = self.slip_config.tangential_mm_per_n * (tangential_n - grip)
            angular_slip = math.degrees(arc_mm / self.radius_mm)
        state = self.slip_state[side]
        state.axial_mm += axial_slip
        state.angular_deg += angular_slip
        return axial_slip, angular_slip

    def record_placement(self, placement: Placement, side: str) -> None:
        if placement.site < 1 or placement.site > self.config.n_sites:
            raise InvalidArgumentError("site out of range")
        self.placements[side] = [p for p in self.placements[side]
                                 if p.site != placement.site] + [placement]

    def crossed_stitch(self, side: str) -> bool:
        """Angular slip of at least half the pitch overlaps the ring closure."""
        return abs(self.slip_state[side].angular_deg) >= self.site_pitch_deg / 2.0


class SutureTool:
    """Needle driver: force sampling, engagement, slip, bite placement."""

    def __init__(self, config: ToolConfig | None = None, rng=None):
        self.config = config or ToolConfig()
        self.rng = rng if rng is not None else np.random.default_rng()

    def needle_drive(
        self,
        vessel: VesselModel,
        site: int,
        side: str,
        suture_index: int,
        geometric_bite_mm: float,
        replace: bool = False,
        forced_miss: bool = False,
    ) -> NeedleDriveOutcome:
        """Drive the needle at a site; the caller supplies the bite depth
        implied by the commanded needle plane relative to the true edge.

        replace permits re-driving an already-sutured site (retry after a
        vision alarm); forced_miss is a scenario hook that overrides the
        engagement draw without disturbing the random stream.
        """
        if side not in SIDES:
            raise InvalidArgumentError("side must be right or left")
        if vessel.is_sutured(side, site) and not replace:
            raise InvalidStateError(f"site {site} already sutured on {side}")
        cfg = self.config
        tangential = min(float(self.rng.uniform(*cfg.tangential_force_range_n)),
                         cfg.puncture_force_n)
        axial = min(float(self.rng.uniform(*cfg.axial_force_range_n)),
                    cfg.puncture_force_n)
        axial_slip, angular_slip = vessel.apply_forces(side, tangential, axial)
        missed = bool(self.rng.uniform() < cfg.miss_probability) or forced_miss
        bite_actual = None
        if not missed:
            bite_actual = (geometric_bite_mm + cfg.bite_bias_mm
                           + float(self.rng.normal(0.0, cfg.bite_noise_sd_mm)))
            bite_actual = max(bite_actual, 0.0)
            angle = (vessel.site_angle_deg(side, site)
                     + float(self.rng.normal(0.0, cfg.angular_noise_sd_deg)))
            vessel.record_placement(
                Placement(site=site, suture_index=suture_index,
                          bite_depth_mm=bite_actual,
                          angular_position_deg=angle % 360.0),
                side,
            )
        return NeedleDriveOutcome(
            engaged=not missed,
            applied_tangential_force_n=tangential,
            applied_axial_force_n=axial,
            bite_depth_actual_mm=bite_actual,
            axial_slip_mm=axial_slip,
            angular_slip_deg=angular_slip,
        )


@dataclass(frozen=True)
class Frame:
    """Grayscale microcamera frame with renderer ground truth.

    The annotation records what the renderer drew (thread present or not);
    it exists for dataset labels and evaluation only and is never shown to
    a classifier.
    """

    pixels: np.ndarray
    annotation: dict

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise InvalidArgumentError("frame must be square")
        object.__setattr__(self, "pixels", np.clip(px, 0.0, 1.0))

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])


class Microcamera:
    """Renders synthetic suture-site frames: tissue, edge, holder, thread."""

    def __init__(self, config: CameraConfig | None = None, rng=None):
        self.config = config or CameraConfig()
        self.rng = rng if rng is not None else np.random.default_rng()

    def _scene_params(self, site: int, side: str, suture_index: int) -> dict:
        # geometry is pinned per (site, side) so the before and after frames
        # of one pair line up even though pixel noise is fresh per frame
        side_ix = SIDES.index(side) if side in SIDES else 2
        geo = np.random.default_rng(np.random.SeedSequence([side_ix, site, suture_index]))
        return {
            "edge_row": 38 + int(geo.integers(-3, 4)),
            "holder_row": 52 + int(geo.integers(-2, 3)),
            "illum": 0.42 + float(geo.uniform(-0.04, 0.04)),
            "thread_phase": float(geo.uniform(0.0, math.pi)),
            "scene_shift": int(geo.integers(-1, 2)),
        }

    def capture(
        self,
        site: int,
        side: str,
        phase: str,
        last_engaged: bool | None,
        suture_index: int = 0,
    ) -> Frame:
        if phase not in ("before", "after"):
            raise InvalidArgumentError("phase must be 'before' or 'after'")
        n = self.config.frame_size
        params = self._scene_params(site, side, suture_index)
        cols = np.arange(n)[None, :]
        img = np.full((n, n), params["illum"])
        img += 0.10 * (cols / n)  # lateral illumination gradient
        edge = params["edge_row"]
        img[edge:, :] = 0.22  # lumen past the vessel edge
        img[max(edge - 1, 0): edge + 1, :] += 0.25
        # nitinol holder band
        hr = params["holder_row"]
        img[hr : hr + 4, :] = 0.85
        thread_drawn = phase == "after" and bool(last_engaged)
        if thread_drawn:
            # bright filament arcing across the suture site
            x = np.linspace(0, 1, n)
            center = edge - 12
            curve = center + 8 * np.sin(math.pi * x + params["thread_phase"])
            for c in range(n):
                r = int(round(curve[c]))
                if 0 <= r < n:
                    img[r, c] = 0.95
                    if r + 1 < n:
                        img[r + 1, c] = max(img[r + 1, c], 0.75)
        # scene framing varies pair to pair but holds within a pair, so a
        # missed-suture after frame matches its before frame up to noise
        img = np.roll(img, params["scene_shift"], axis=0)
        img = img + self.rng.normal(0.0, self.config.noise_sd, size=(n, n))
        annotation = {
            "site": site,
            "side": side,
            "phase": phase,
            "engaged": None if phase == "before" else bool(last_engaged),
            "thread_drawn": thread_drawn,
        }
        return Frame(pixels=np.clip(img, 0.0, 1.0), annotation=annotation)
