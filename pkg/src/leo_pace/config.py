"""Experiment configuration: YAML schema, validation and conversion to SI objects.

dB/dBm values exist only in the file; :func:`build_settings` is the single
place where they are turned into linear units.
"""

from __future__ import annotations

import difflib
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .channel import (
    ConstantAbsorption,
    ElevationTableAbsorption,
    LossConfig,
    OfdmConfig,
    PilotMode,
    PrecoderMode,
    dbm_to_watt,
)
from .positioning import FimMethod, PositioningConfig
from .scenario import FrameMode, ScenarioConfig, SyncDrawMode
from .uplink import PositionErrorMode

DEFAULTS_PATH = Path(__file__).parent / "configs" / "table1_defaults.yaml"


class ExperimentType(str, enum.Enum):
    POSITIONING_POWER_SWEEP = "PositioningPowerSweep"
    MISMATCH_SURFACE = "MismatchSurface"
    CE_POSITION_ERROR_SWEEP = "CePositionErrorSweep"
    CE_UT_POWER_SWEEP = "CeUtPowerSweep"
    SUM_RATE_ANTENNA_SWEEP = "SumRateAntennaSweep"
    SUM_RATE_UT_POWER_SWEEP = "SumRateUtPowerSweep"
    SOLVER_BENCHMARK = "SolverBenchmark"


class AbsorptionModel(str, enum.Enum):
    CONSTANT = "Constant"
    ELEVATION_TABLE = "ElevationTable"


class ToaSource(str, enum.Enum):
    PSEUDO_TRUE = "PseudoTrue"
    SAMPLED = "Sampled"
    PERFECT = "Perfect"
    ZERO = "Zero"


# ---------------------------------------------------------------- schema

# Each leaf is (kind, default, check). ``check`` returns an error string or None.


def _pos(x):
    return None if x > 0 else "must be positive"


def _nonneg(x):
    return None if x >= 0 else "must be non-negative"


def _ge1(x):
    return None if x >= 1 else "must be >= 1"


def _pair(x):
    if not (isinstance(x, list) and len(x) == 2 and all(_is_num(v) for v in x)):
        return "must be a [min, max] pair of numbers"
    return None if x[0] <= x[1] else "min must not exceed max"


def _num_list(x):
    if not (isinstance(x, list) and x and all(_is_num(v) for v in x)):
        return "must be a nonempty list of numbers"
    return None


def _triple(x):
    return _num_list(x) or (None if len(x) == 3 else "must have 3 entries (grazing, 45 deg, zenith)")


def _int_list(x):
    if not (isinstance(x, list) and x and all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in x)):
        return "must be a nonempty list of positive integers"
    return None


def _enum(cls):
    values = [m.value for m in cls]

    def check(x):
        return None if x in values else f"must be one of {values}"

    return check


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


SCHEMA = {
    "scenario": {
        "num_sats": ("int", 4, _ge1),
        "num_uts": ("int", 8, _ge1),
        "earth_radius_m": ("num", 6.4e6, _pos),
        "orbit_altitude_m": ("num", 5e5, _pos),
        "service_radius_m": ("num", 2e5, _pos),
        "sat_speed_mps": ("num", 7600.0, _nonneg),
        "clock_bias_range_s": ("list", [8e-9, 12e-9], _pair),
        "cfo_range_hz": ("list", [1000.0, 1500.0], _pair),
        "sync_draw_mode": ("str", "UniformRange", _enum(SyncDrawMode)),
        "frame_mode": ("str", "Global", _enum(FrameMode)),
    },
    "ofdm": {
        "carrier_freq_hz": ("num", 12.7e9, _pos),
        "subcarrier_spacing_hz": ("num", 120e3, _pos),
        "num_subcarriers": ("int", 1024, _ge1),
        "n_h": ("int", 16, _ge1),
        "n_v": ("int", 16, _ge1),
        "noise_psd_dbm_hz": ("num", -173.855, None),
        "noise_figure_db": ("num", 10.0, None),
    },
    "loss": {
        "absorption_model": ("str", "Constant", _enum(AbsorptionModel)),
        "absorption_db": ("num", 1.0, _nonneg),
        "absorption_table_db": ("list", [3.0, 1.2, 0.8], _triple),
        "scintillation_db": ("num", 0.5, _nonneg),
        "shadow_fading_db": ("num", 0.0, _nonneg),
        "clutter_db": ("num", 0.0, _nonneg),
    },
    "power": {
        "sat_power_dbm": ("num", 50.0, None),
        "ut_power_dbm": ("num", 40.0, None),
    },
    "positioning": {
        "pilots": ("int", 10000, _ge1),
        "precoder": ("str", "PAB", _enum(PrecoderMode)),
        "pilot_mode": ("str", "AllOnes", _enum(PilotMode)),
        "fim_method": ("str", "ClosedForm", _enum(FimMethod)),
        "min_elevation_rad": ("num", 0.1, _nonneg),
        "angle_error_std_rad": ("num", 0.0, _nonneg),
    },
    "uplink": {
        "pilots": ("int", 1000, _ge1),
        "position_error_m": ("num", 10.0, _nonneg),
        "position_error_mode": ("str", "RandomDirection", _enum(PositionErrorMode)),
    },
    "frame": {
        "subframes_per_frame": ("int", 100, _ge1),
    },
    "beamforming": {
        "max_outer": ("int", 100, _ge1),
        "rel_tol": ("num", 1e-4, _pos),
    },
    "evaluation": {
        "toa_source": ("str", "PseudoTrue", _enum(ToaSource)),
        "cp_bound_s": ("num", 0.5859375e-6, _pos),
    },
    "experiment": {
        "type": ("str", "PositioningPowerSweep", _enum(ExperimentType)),
        "sweep": ("map", {}, None),
        "trials": ("int", 10, _ge1),
        "seed": ("int", 0, _nonneg),
        "output_dir": ("str", "results", None),
    },
}

SWEEP_KEYS = {
    ExperimentType.POSITIONING_POWER_SWEEP: {"sat_power_dbm": _num_list},
    ExperimentType.MISMATCH_SURFACE: {"clock_bias_max_s": _num_list, "cfo_max_hz": _num_list},
    ExperimentType.CE_POSITION_ERROR_SWEEP: {"position_error_m": _num_list},
    ExperimentType.CE_UT_POWER_SWEEP: {"ut_power_dbm": _num_list},
    ExperimentType.SUM_RATE_ANTENNA_SWEEP: {"antennas_per_side": _int_list},
    ExperimentType.SUM_RATE_UT_POWER_SWEEP: {"ut_power_dbm": _num_list},
    ExperimentType.SOLVER_BENCHMARK: {"num_sats": _int_list, "antennas_per_side": _int_list},
}

DEFAULT_SWEEPS = {
    ExperimentType.POSITIONING_POWER_SWEEP: {"sat_power_dbm": [10, 20, 30, 40, 50, 60, 70, 80]},
    ExperimentType.MISMATCH_SURFACE: {
        "clock_bias_max_s": [0.0, 1e-9, 3.16227766016838e-09, 1e-8, 3.16227766016838e-08, 1e-7, 3.16227766016838e-07],
        "cfo_max_hz": [0.0, 1200.0, 1901.87183095334, 3014.2637178115, 4777.28604664197, 7571.48813376232, 12000.0],
    },
    ExperimentType.CE_POSITION_ERROR_SWEEP: {"position_error_m": [1, 10, 100, 1000, 10000, 100000]},
    ExperimentType.CE_UT_POWER_SWEEP: {"ut_power_dbm": [20, 30, 40, 50, 60]},
    ExperimentType.SUM_RATE_ANTENNA_SWEEP: {"antennas_per_side": [2, 4, 8, 12, 16]},
    ExperimentType.SUM_RATE_UT_POWER_SWEEP: {"ut_power_dbm": [20, 30, 40, 50, 60, 70]},
    ExperimentType.SOLVER_BENCHMARK: {"num_sats": [2, 4, 8, 16], "antennas_per_side": [2, 4, 8, 16]},
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# ---------------------------------------------------------------- loading


def _line_index(node, prefix=(), out=None):
    """Map dotted key paths to 1-based source lines using the YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[".".join(path)] = k.start_mark.line + 1
            _line_index(v, path, out)
    return out


def load_yaml(text: str, source: str = "<config>"):
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError([f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}"]) from None
    lines = _line_index(node) if node is not None else {}
    return ({} if data is None else data), lines


def _suggest(key, options):
    close = difflib.get_close_matches(key, list(options), n=1, cutoff=0.6)
    return f" (did you mean '{close[0]}'?)" if close else ""


def _coerce_num(v):
    """PyYAML reads exponent literals without a dot (``8e-9``) as strings; accept them."""
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    if isinstance(v, list):
        return [_coerce_num(x) for x in v]
    if isinstance(v, int) and not isinstance(v, bool):
        return float(v)
    return v


def _kind_ok(kind, v):
    if kind == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if kind == "num":
        return _is_num(v)
    if kind == "str":
        return isinstance(v, str)
    if kind == "list":
        return isinstance(v, list)
    if kind == "map":
        return isinstance(v, dict)
    return True


def validate(data: dict, lines: dict | None = None, source: str = "<config>") -> dict:
    """Check ``data`` against the schema and return it merged over the defaults.

    All problems are collected and raised together as a :class:`ConfigError`.
    """
    lines = lines or {}
    errors = []

    def where(path):
        ln = lines.get(path)
        return f"{source}:{ln}" if ln else source

    if not isinstance(data, dict):
        raise ConfigError([f"{source}: top level must be a mapping"])
    merged = {}
    for sec in data:
        if sec not in SCHEMA:
            errors.append(f"{where(sec)}: unknown section '{sec}'{_suggest(sec, SCHEMA)}")
    for sec, fields in SCHEMA.items():
        given = data.get(sec, {}) or {}
        if not isinstance(given, dict):
            errors.append(f"{where(sec)}: section '{sec}' must be a mapping")
            given = {}
        out = {}
        for key in given:
            if key not in fields:
                errors.append(f"{where(sec + '.' + key)}: unknown key '{sec}.{key}'{_suggest(key, fields)}")
        for key, (kind, default, check) in fields.items():
            path = f"{sec}.{key}"
            v = given.get(key, default)
            if kind == "map" and v is None:
                v = {}  # an explicit null map means "use the defaults"
            if kind == "num":
                v = _coerce_num(v)
            elif kind == "list" and isinstance(v, list):
                v = [_coerce_num(x) if isinstance(x, str) else x for x in v]
            if not _kind_ok(kind, v):
                errors.append(f"{where(path)}: '{path}' has wrong type ({type(v).__name__}), expected {kind}")
                continue
            msg = check(v) if check else None
            if msg:
                errors.append(f"{where(path)}: '{path}' {msg} (got {v!r})")
            out[key] = v
        merged[sec] = out

    exp = merged["experiment"]
    if "type" in exp and exp["type"] in [m.value for m in ExperimentType]:
        etype = ExperimentType(exp["type"])
        allowed = SWEEP_KEYS[etype]
        sweep = dict(DEFAULT_SWEEPS[etype])
        for key, val in (exp.get("sweep") or {}).items():
            path = f"experiment.sweep.{key}"
            if key not in allowed:
                errors.append(f"{where(path)}: unknown sweep axis '{key}' for {etype.value}{_suggest(key, allowed)}")
                continue
            if isinstance(val, list) and allowed[key] is _num_list:
                val = [_coerce_num(x) if isinstance(x, str) else x for x in val]
            msg = allowed[key](val)
            if msg:
                errors.append(f"{where(path)}: '{path}' {msg}")
            sweep[key] = val
        exp["sweep"] = sweep
    sc = merged["scenario"]
    if _is_num(sc.get("service_radius_m")) and _is_num(sc.get("earth_radius_m")):
        if sc["service_radius_m"] >= math.pi * sc["earth_radius_m"] / 2:
            errors.append(f"{where('scenario.service_radius_m')}: 'scenario.service_radius_m' must be below a quarter great circle")
    if errors:
        raise ConfigError(errors)
    return merged


def load_config(path, overrides: dict | None = None) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from None
    data, lines = load_yaml(text, str(path))
    if overrides:
        data = _deep_update(data, overrides)
    return validate(data, lines, str(path))


def default_config() -> dict:
    return load_config(DEFAULTS_PATH)


def _deep_update(base, upd):
    out = dict(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


# ---------------------------------------------------------------- typed settings


@dataclass(frozen=True)
class Settings:
    """Everything a simulation trial needs, in SI units."""

    scenario: ScenarioConfig
    ofdm: OfdmConfig
    loss: LossConfig
    sat_power_w: float
    ut_power_w: float
    positioning: PositioningConfig
    uplink_pilots: int = 1000
    position_error_m: float = 10.0
    position_error_mode: str = "RandomDirection"
    max_outer: int = 100
    rel_tol: float = 1e-4
    toa_source: ToaSource = ToaSource.PSEUDO_TRUE
    cp_bound_s: float = 0.5859375e-6
    extra: dict = field(default_factory=dict)

    @property
    def sat_power_per_subcarrier(self) -> float:
        return self.sat_power_w / self.ofdm.num_subcarriers


def build_settings(cfg: dict) -> Settings:
    sc, of, lo, pw = cfg["scenario"], cfg["ofdm"], cfg["loss"], cfg["power"]
    po, up, bf, ev = cfg["positioning"], cfg["uplink"], cfg["beamforming"], cfg["evaluation"]
    scenario = ScenarioConfig(
        num_sats=sc["num_sats"],
        num_uts=sc["num_uts"],
        earth_radius=sc["earth_radius_m"],
        orbit_altitude=sc["orbit_altitude_m"],
        service_radius=sc["service_radius_m"],
        sat_speed=sc["sat_speed_mps"],
        clock_bias_range=tuple(sc["clock_bias_range_s"]),
        cfo_range=tuple(sc["cfo_range_hz"]),
        sync_draw_mode=sc["sync_draw_mode"],
        frame_mode=sc["frame_mode"],
        seed=cfg["experiment"]["seed"],
    )
    ofdm = OfdmConfig(
        carrier_freq=of["carrier_freq_hz"],
        subcarrier_spacing=of["subcarrier_spacing_hz"],
        num_subcarriers=of["num_subcarriers"],
        n_h=of["n_h"],
        n_v=of["n_v"],
        noise_psd_dbm_hz=of["noise_psd_dbm_hz"],
        noise_figure_db=of["noise_figure_db"],
    )
    if lo["absorption_model"] == "Constant":
        absorption = ConstantAbsorption(lo["absorption_db"])
    else:
        absorption = ElevationTableAbsorption(*lo["absorption_table_db"])
    loss = LossConfig(absorption, lo["scintillation_db"], lo["shadow_fading_db"], lo["clutter_db"])
    positioning = PositioningConfig(
        pilots=po["pilots"],
        precoder=po["precoder"],
        pilot_mode=po["pilot_mode"],
        fim_method=po["fim_method"],
        min_elevation=po["min_elevation_rad"],
        angle_error_std=po["angle_error_std_rad"],
    )
    return Settings(
        scenario=scenario,
        ofdm=ofdm,
        loss=loss,
        sat_power_w=float(dbm_to_watt(pw["sat_power_dbm"])),
        ut_power_w=float(dbm_to_watt(pw["ut_power_dbm"])),
        positioning=positioning,
        uplink_pilots=up["pilots"],
        position_error_m=up["position_error_m"],
        position_error_mode=up["position_error_mode"],
        max_outer=bf["max_outer"],
        rel_tol=bf["rel_tol"],
        toa_source=ToaSource(ev["toa_source"]),
        cp_bound_s=ev["cp_bound_s"],
    )
