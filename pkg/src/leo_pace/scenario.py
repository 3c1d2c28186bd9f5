"""Geometric and synchronization ground truth for a cluster of LEO satellites.

The global frame is Earth-centered with fixed axes; the centre of the service
area sits on the +Z axis, so a satellite directly above it has the UT at
array-frame elevation -pi/2 (Global frame) or +pi/2 (nadir-pointing frame).
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field

import numpy as np


class SyncDrawMode(str, enum.Enum):
    UNIFORM_RANGE = "UniformRange"
    UNIFORM_ZERO_TO_MAX = "UniformZeroToMax"


class FrameMode(str, enum.Enum):
    GLOBAL = "Global"
    NADIR_POINTING = "NadirPointing"


@dataclass(frozen=True)
class ScenarioConfig:
    num_sats: int = 4
    num_uts: int = 8
    earth_radius: float = 6.4e6
    orbit_altitude: float = 5e5
    service_radius: float = 2e5
    sat_speed: float = 7600.0
    clock_bias_range: tuple[float, float] = (8e-9, 12e-9)
    cfo_range: tuple[float, float] = (1000.0, 1500.0)
    sync_draw_mode: SyncDrawMode = SyncDrawMode.UNIFORM_RANGE
    frame_mode: FrameMode = FrameMode.GLOBAL
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sync_draw_mode", SyncDrawMode(self.sync_draw_mode))
        object.__setattr__(self, "frame_mode", FrameMode(self.frame_mode))
        object.__setattr__(self, "clock_bias_range", tuple(float(v) for v in self.clock_bias_range))
        object.__setattr__(self, "cfo_range", tuple(float(v) for v in self.cfo_range))
        if self.num_sats < 1 or self.num_uts < 1:
            raise ValueError("num_sats and num_uts must both be >= 1")
        for name in ("earth_radius", "orbit_altitude", "service_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.service_radius >= np.pi * self.earth_radius / 2:
            raise ValueError("service_radius must be below a quarter great circle")
        if self.sat_speed < 0:
            raise ValueError("sat_speed must be non-negative")
        for name in ("clock_bias_range", "cfo_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min must not exceed max")

    @property
    def cap_half_angle(self) -> float:
        return self.service_radius / self.earth_radius


@dataclass(frozen=True)
class Satellite:
    position: np.ndarray
    velocity: np.ndarray
    array_rotation: np.ndarray


@dataclass(frozen=True)
class UserTerminal:
    position: np.ndarray
    clock_bias: np.ndarray  # (S,) seconds
    cfo: np.ndarray  # (S,) Hz


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    satellites: tuple[Satellite, ...]
    uts: tuple[UserTerminal, ...]
    mean_bias: np.ndarray = field(init=False)
    mean_cfo: np.ndarray = field(init=False)

    def __post_init__(self):
        b = np.array([ut.clock_bias for ut in self.uts])
        d = np.array([ut.cfo for ut in self.uts])
        object.__setattr__(self, "mean_bias", b.mean(axis=1))
        object.__setattr__(self, "mean_cfo", d.mean(axis=1))

    @property
    def num_sats(self) -> int:
        return len(self.satellites)

    @property
    def num_uts(self) -> int:
        return len(self.uts)

    @property
    def sat_positions(self) -> np.ndarray:
        return np.array([s.position for s in self.satellites])

    @property
    def sat_velocities(self) -> np.ndarray:
        return np.array([s.velocity for s in self.satellites])

    @property
    def ut_positions(self) -> np.ndarray:
        return np.array([u.position for u in self.uts])

    def bias_offsets(self, u: int) -> np.ndarray:
        """Per-satellite clock-bias deviation from the UT's mean bias."""
        return self.uts[u].clock_bias - self.mean_bias[u]

    def cfo_offsets(self, u: int) -> np.ndarray:
        return self.uts[u].cfo - self.mean_cfo[u]

    def with_sync_errors(self, clock_bias: np.ndarray, cfo: np.ndarray) -> "Scenario":
        """Copy with replaced (U, S) clock-bias and CFO tables."""
        uts = tuple(
            UserTerminal(ut.position, np.asarray(clock_bias[u], float), np.asarray(cfo[u], float))
            for u, ut in enumerate(self.uts)
        )
        return Scenario(self.config, self.satellites, uts)

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {
                "num_sats": cfg.num_sats,
                "num_uts": cfg.num_uts,
                "earth_radius": cfg.earth_radius,
                "orbit_altitude": cfg.orbit_altitude,
                "service_radius": cfg.service_radius,
                "sat_speed": cfg.sat_speed,
                "clock_bias_range": list(cfg.clock_bias_range),
                "cfo_range": list(cfg.cfo_range),
                "sync_draw_mode": cfg.sync_draw_mode.value,
                "frame_mode": cfg.frame_mode.value,
                "seed": cfg.seed,
            },
            "satellites": [
                {
                    "position": s.position.tolist(),
                    "velocity": s.velocity.tolist(),
                    "array_rotation": s.array_rotation.tolist(),
                }
                for s in self.satellites
            ],
            "uts": [
                {
                    "position": u.position.tolist(),
                    "clock_bias": u.clock_bias.tolist(),
                    "cfo": u.cfo.tolist(),
                }
                for u in self.uts
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        cfg = dict(data["config"])
        cfg["clock_bias_range"] = tuple(cfg["clock_bias_range"])
        cfg["cfo_range"] = tuple(cfg["cfo_range"])
        config = ScenarioConfig(**cfg)
        sats = tuple(
            Satellite(
                np.asarray(s["position"], float),
                np.asarray(s["velocity"], float),
                np.asarray(s["array_rotation"], float),
            )
            for s in data["satellites"]
        )
        uts = tuple(
            UserTerminal(
                np.asarray(u["position"], float),
                np.asarray(u["clock_bias"], float),
                np.asarray(u["cfo"], float),
            )
            for u in data["uts"]
        )
        return cls(config, sats, uts)


def substream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Independent generator for one purpose (placement, sync, fading, ...).

    Streams are keyed by a stable hash of ``label`` so that draws added to one
    purpose never shift the values seen by another.
    """
    key = (zlib.crc32(label.encode()),) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def _cap_points(rng: np.random.Generator, n: int, radius: float, half_angle: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Uniform on a spherical cap: cos(polar) uniform on [cos(half_angle), 1].
    cos_t = 1.0 - rng.random(n) * (1.0 - np.cos(half_angle))
    polar = np.arccos(np.clip(cos_t, -1.0, 1.0))
    azim = rng.random(n) * 2 * np.pi
    pts = radius * np.stack(
        [np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)], axis=1
    )
    return pts, polar, azim


def nadir_rotation(position: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    """Global-to-array rotation with local +Z toward the Earth centre and local X along velocity."""
    z = -position / np.linalg.norm(position)
    x = velocity - (velocity @ z) * z
    nx = np.linalg.norm(x)
    if nx == 0:
        # Stationary satellite: any horizontal axis will do.
        helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = helper - (helper @ z) * z
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    return np.stack([x, y, z])


def draw_sync_errors(config: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-link clock biases and CFOs, each of shape (U, S).

    Unit uniforms are drawn first and then mapped to the configured interval,
    so two configs that differ only in their ranges share the same underlying
    randomness (this keeps sweeps over the range coupled).
    """
    shape = (config.num_uts, config.num_sats)
    unit_b = rng.random(shape)
    unit_d = rng.random(shape)
    if config.sync_draw_mode is SyncDrawMode.UNIFORM_ZERO_TO_MAX:
        b_lo, d_lo = 0.0, 0.0
    else:
        b_lo, d_lo = config.clock_bias_range[0], config.cfo_range[0]
    b_hi, d_hi = config.clock_bias_range[1], config.cfo_range[1]
    return b_lo + (b_hi - b_lo) * unit_b, d_lo + (d_hi - d_lo) * unit_d


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Place UTs on the Earth cap and satellites on the matching orbital cap.

    Satellites fly along great circles through the cap axis, so each velocity
    is the (signed) meridional unit vector at its position scaled by
    ``sat_speed``.
    """
    place = substream(config.seed, "placement")
    half = config.cap_half_angle
    r_orbit = config.earth_radius + config.orbit_altitude

    ut_pos, _, _ = _cap_points(place, config.num_uts, config.earth_radius, half)
    sat_pos, polar, azim = _cap_points(place, config.num_sats, r_orbit, half)
    signs = np.where(place.random(config.num_sats) < 0.5, -1.0, 1.0)

    sats = []
    for s in range(config.num_sats):
        t, p = polar[s], azim[s]
        meridian = np.array([np.cos(t) * np.cos(p), np.cos(t) * np.sin(p), -np.sin(t)])
        vel = signs[s] * config.sat_speed * meridian
        # Re-project onto the exact orbit radius to keep |p| tight.
        pos = sat_pos[s] * (r_orbit / np.linalg.norm(sat_pos[s]))
        if config.frame_mode is FrameMode.NADIR_POINTING:
            rot = nadir_rotation(pos, vel)
        else:
            rot = np.eye(3)
        sats.append(Satellite(pos, vel, rot))

    bias, cfo = draw_sync_errors(config, substream(config.seed, "sync"))
    uts = tuple(
        UserTerminal(ut_pos[u] * (config.earth_radius / np.linalg.norm(ut_pos[u])), bias[u], cfo[u])
        for u in range(config.num_uts)
    )
    return Scenario(config, tuple(sats), uts)


def link_geometry(p_s: np.ndarray, array_rotation: np.ndarray, p_u: np.ndarray) -> tuple[float, float, float, np.ndarray]:
    """Range, azimuth, elevation and unit direction of ``p_u - p_s`` in the array frame."""
    d = array_rotation @ (np.asarray(p_u, float) - np.asarray(p_s, float))
    rng_ = float(np.linalg.norm(d))
    if rng_ == 0.0:
        raise ValueError("satellite and UT positions coincide")
    az = float(np.arctan2(d[1], d[0]))
    el = float(np.arcsin(np.clip(d[2] / rng_, -1.0, 1.0)))
    return rng_, az, el, d / rng_


def ground_elevation(p_s: np.ndarray, p_u: np.ndarray) -> float:
    """Elevation of the satellite above the UT's local horizon (rad)."""
    los = np.asarray(p_s, float) - np.asarray(p_u, float)
    up = np.asarray(p_u, float) / np.linalg.norm(p_u)
    return float(np.arcsin(np.clip(los @ up / np.linalg.norm(los), -1.0, 1.0)))
