"""Batch experiments: Monte-Carlo sweeps over the estimation and beamforming pipeline.

Every trial derives its randomness from ``(seed, trial index)`` alone, so the
results do not depend on how trials are spread over worker threads.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from . import beamforming as bf
from . import evaluation as ev
from .channel import SPEED_OF_LIGHT, dbm_to_watt
from .config import ExperimentType, Settings, ToaSource, build_settings, dump_config
from .mcrb import SingularFimError
from .positioning import DegenerateLinkError, link_params, positioning_bound
from .scenario import SyncDrawMode, generate_scenario, substream
from .uplink import aoa_from_position, channel_vector_lb, pace_bound, perturb_position, uce_crb

log = logging.getLogger(__name__)

TRIAL_ERRORS = (DegenerateLinkError, SingularFimError, np.linalg.LinAlgError)


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(trial),)).generate_state(1, np.uint64)[0])


def gaussian_draw(rng: np.random.Generator, cov) -> np.ndarray:
    """Zero-mean Gaussian sample with covariance ``cov`` (PSD, symmetric)."""
    cov = np.asarray(cov, dtype=float)
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    z = rng.standard_normal(w.size)
    return V @ (np.sqrt(np.clip(w, 0.0, None)) * z)


def _rms(x, axis=None):
    return np.sqrt(np.mean(np.square(x), axis=axis))


# ---------------------------------------------------------------- system-level pipeline


@dataclass
class TrueChannels:
    links: list  # [s][u] LinkParams
    H: np.ndarray  # (S, U, N) flat responses
    toa: np.ndarray  # (S, U)


def true_channels(scenario, ofdm, loss, rng) -> TrueChannels:
    S, U = scenario.num_sats, scenario.num_uts
    phases = rng.uniform(0.0, 2 * np.pi, size=(S, U))
    links = [[link_params(scenario, s, u, ofdm, loss, phases[s, u]) for u in range(U)] for s in range(S)]
    H = np.array([[l.gain * l.steering(ofdm) for l in row] for row in links])
    toa = np.array([[l.toa for l in row] for row in links])
    return TrueChannels(links, H, toa)


@dataclass
class CsiEstimate:
    H: np.ndarray
    toa_comp: np.ndarray
    extras: dict = field(default_factory=dict)


def _toa_comp(source: ToaSource, true_toa, pseudo_toa, var, rng):
    if source is ToaSource.PERFECT:
        return true_toa
    if source is ToaSource.ZERO:
        return 0.0
    if source is ToaSource.SAMPLED:
        return pseudo_toa + np.sqrt(max(var, 0.0)) * rng.standard_normal()
    return pseudo_toa


def positioning_estimates(settings: Settings, scenario, ofdm, rng):
    """Stage-one position and clock-bias estimates for every UT.

    The estimate is the pseudo-true state plus a Gaussian draw from the MCRB.
    """
    p_est, b_est = [], []
    for u in range(scenario.num_uts):
        rep = positioning_bound(scenario, u, ofdm, settings.loss, settings.sat_power_w, settings.positioning)
        draw = gaussian_draw(rng, rep.mcrb)
        p_est.append(rep.pseudo_true[:3] + draw[:3])
        b_est.append(rep.pseudo_true[4] + draw[4])
    return np.array(p_est), np.array(b_est)


def pace_estimates(settings: Settings, scenario, ofdm, truth: TrueChannels, p_est, ut_power_w, rng) -> CsiEstimate:
    S, U = truth.toa.shape
    H = np.zeros_like(truth.H)
    toa_comp = np.zeros((S, U))
    for s in range(S):
        sat = scenario.satellites[s]
        for u in range(U):
            link = truth.links[s][u]
            rep = pace_bound(link, p_est[u], sat.position, ofdm, settings.uplink_pilots, ut_power_w, sat.array_rotation)
            d = gaussian_draw(rng, rep.mcrb[:2, :2])
            gain = rep.pseudo_gain + complex(d[0], d[1])
            H[s, u] = gain * rep.extras["a_assumed"]
            toa_comp[s, u] = _toa_comp(settings.toa_source, link.toa, rep.pseudo_true[2], rep.mcrb[2, 2], rng)
    return CsiEstimate(H, toa_comp)


def uce_estimates(settings: Settings, ofdm, truth: TrueChannels, ut_power_w, rng) -> CsiEstimate:
    S, U, N = truth.H.shape
    H = np.zeros_like(truth.H)
    toa_comp = np.zeros((S, U))
    for s in range(S):
        for u in range(U):
            link = truth.links[s][u]
            _, _, C = uce_crb(link, ofdm, settings.uplink_pilots, ut_power_w)
            d = gaussian_draw(rng, C[: 2 * N, : 2 * N])
            H[s, u] = truth.H[s, u] + d[:N] + 1j * d[N:]
            toa_comp[s, u] = _toa_comp(settings.toa_source, link.toa, link.toa, C[2 * N, 2 * N], rng)
    return CsiEstimate(H, toa_comp)


SYSTEM_METHODS = ("Perfect+WMMSE", "PACE+WMMSE", "UCE+WMMSE", "PACE+NC", "UCE+NC", "PAB")


def system_trial(settings: Settings, trial: int, ut_power_w: float | None = None, n_side: int | None = None, methods=SYSTEM_METHODS):
    """Realized sum rates (bit/s) of each scheme on one random scenario."""
    ofdm = settings.ofdm if n_side is None else settings.ofdm.with_array(n_side, n_side)
    ut_power_w = settings.ut_power_w if ut_power_w is None else ut_power_w
    seed = settings.scenario.seed
    scenario = generate_scenario(replace(settings.scenario, seed=trial_seed(seed, trial)))
    truth = true_channels(scenario, ofdm, settings.loss, substream(seed, "fading", trial))
    noise = ofdm.noise_power
    power = settings.sat_power_w / ofdm.num_subcarriers
    bw = ofdm.bandwidth
    opts = dict(max_outer=settings.max_outer, rel_tol=settings.rel_tol)

    def score(W, toa_comp):
        return ev.realized_rates(truth.H, W, truth.toa, toa_comp, noise, ofdm, settings.cp_bound_s)[0]

    out = {}
    need_pace = any(m.startswith("PACE") or m == "PAB" for m in methods)
    if need_pace:
        p_est, b_est = positioning_estimates(settings, scenario, ofdm, substream(seed, "positioning", trial))
    if "Perfect+WMMSE" in methods:
        W = bf.wmmse_optimize(truth.H, power, noise, bw, **opts).W
        out["Perfect+WMMSE"] = score(W, truth.toa)
    if any(m.startswith("PACE") for m in methods):
        pace = pace_estimates(settings, scenario, ofdm, truth, p_est, ut_power_w, substream(seed, "pace", trial))
        if "PACE+WMMSE" in methods:
            out["PACE+WMMSE"] = score(bf.wmmse_optimize(pace.H, power, noise, bw, **opts).W, pace.toa_comp)
        if "PACE+NC" in methods:
            out["PACE+NC"] = score(ev.nc_baseline(pace.H, power, noise, bw, **opts)[0], pace.toa_comp)
    if any(m.startswith("UCE") for m in methods):
        uce = uce_estimates(settings, ofdm, truth, ut_power_w, substream(seed, "uce", trial))
        if "UCE+WMMSE" in methods:
            out["UCE+WMMSE"] = score(bf.wmmse_optimize(uce.H, power, noise, bw, **opts).W, uce.toa_comp)
        if "UCE+NC" in methods:
            out["UCE+NC"] = score(ev.nc_baseline(uce.H, power, noise, bw, **opts)[0], uce.toa_comp)
    if "PAB" in methods:
        S, U = truth.toa.shape
        angles = np.zeros((S, U, 2))
        toa_comp = np.zeros((S, U))
        for s, sat in enumerate(scenario.satellites):
            for u in range(U):
                angles[s, u] = aoa_from_position(p_est[u], sat.position, sat.array_rotation)
                toa_comp[s, u] = np.linalg.norm(p_est[u] - sat.position) / SPEED_OF_LIGHT + b_est[u]
        out["PAB"] = score(ev.pab_comm_baseline(angles, power, ofdm), toa_comp)
    return out


# ---------------------------------------------------------------- results


@dataclass
class ExperimentResult:
    """Aggregated rows ``(family, axis values..., metric, mean, std, trials)``."""

    experiment: str
    axes: tuple
    rows: list
    provenance: dict
    deterministic: bool = True

    def families(self):
        out = {}
        for r in self.rows:
            out.setdefault(r[0], []).append(r[1:])
        return out

    def lookup(self, metric, *axis_values, family=None):
        for r in self.rows:
            if (family is None or r[0] == family) and r[1 + len(self.axes)] == metric and tuple(r[1 : 1 + len(self.axes)]) == tuple(axis_values):
                return r[-3]
        raise KeyError((metric, axis_values))


def _aggregate(per_trial, family_of=lambda m: "main"):
    """``per_trial``: list of dicts keyed by (axis tuple, metric) -> value (None trials skipped)."""
    keys = []
    seen = set()
    for d in per_trial:
        if d is None:
            continue
        for k in d:
            if k not in seen:
                seen.add(k)
                keys.append(k)
    rows = []
    for axes, metric in keys:
        vals = np.array([d[(axes, metric)] for d in per_trial if d is not None and (axes, metric) in d], dtype=float)
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        rows.append((family_of(metric),) + tuple(float(a) for a in axes) + (metric, float(np.mean(vals)), std, int(vals.size)))
    return rows


def _run_trials(fn, trials, threads):
    def guarded(t):
        try:
            return fn(t)
        except TRIAL_ERRORS as exc:
            log.warning("trial %d excluded: %s", t, exc)
            return None

    if threads <= 1:
        return [guarded(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, range(trials)))


# ---------------------------------------------------------------- experiments


def _fig3_trial(settings: Settings, powers_dbm, trial):
    seed = settings.scenario.seed
    scenario = generate_scenario(replace(settings.scenario, seed=trial_seed(seed, trial)))
    out = {}
    for mode in ("PAB", "VDB"):
        pcfg = replace(settings.positioning, precoder=mode)
        for p_dbm in powers_dbm:
            reps = [positioning_bound(scenario, u, settings.ofdm, settings.loss, float(dbm_to_watt(p_dbm)), pcfg) for u in range(scenario.num_uts)]
            for name, attr in (("LB", "lb_position"), ("MCRB", "mcrb_position"), ("Bias", "bias_position"), ("CRB", "crb_position")):
                out[((p_dbm,), f"{mode}:{name}")] = float(_rms([getattr(r, attr) for r in reps]))
    return out


def surface_point(scenario, settings: Settings, unit_b, unit_d, b_max, d_max, sats_cache=None):
    """Position bounds averaged over the four sign reflections of the sync draw.

    ``unit_b``/``unit_d`` are (U, S) uniforms on [0, 1). The reflections use
    ``u`` and ``1 - u`` for each quantity, which flips the sign of every
    per-satellite deviation from the UT mean while keeping the draw inside
    [0, max]. Returns RMS (over UTs and reflections) of LB, MCRB and bias.
    """
    lb2, m2, b2 = [], [], []
    for ub in (unit_b, 1.0 - unit_b):
        for ud in (unit_d, 1.0 - unit_d):
            sc = scenario.with_sync_errors(b_max * ub, d_max * ud)
            for u in range(sc.num_uts):
                rep = positioning_bound(sc, u, settings.ofdm, settings.loss, settings.sat_power_w, settings.positioning)
                lb2.append(rep.lb_position**2)
                m2.append(rep.mcrb_position**2)
                b2.append(rep.bias_position**2)
    return float(np.sqrt(np.mean(lb2))), float(np.sqrt(np.mean(m2))), float(np.sqrt(np.mean(b2)))


def _fig4_trial(settings: Settings, b_grid, d_grid, trial):
    seed = settings.scenario.seed
    scenario = generate_scenario(replace(settings.scenario, seed=trial_seed(seed, trial)))
    rng = substream(seed, "sync-surface", trial)
    shape = (scenario.num_uts, scenario.num_sats)
    unit_b, unit_d = rng.random(shape), rng.random(shape)
    out = {}
    for b in b_grid:
        for d in d_grid:
            lb, m, bias = surface_point(scenario, settings, unit_b, unit_d, b, d)
            out[((b, d), "LB")] = lb
            out[((b, d), "MCRB")] = m
            out[((b, d), "Bias")] = bias
    return out


def _ce_links(settings: Settings, trial):
    seed = settings.scenario.seed
    scenario = generate_scenario(replace(settings.scenario, seed=trial_seed(seed, trial)))
    truth = true_channels(scenario, settings.ofdm, settings.loss, substream(seed, "fading", trial))
    rng = substream(seed, "position-error", trial)
    dirs = rng.standard_normal((scenario.num_uts, 3))
    return scenario, truth, dirs


def ce_metrics(settings: Settings, scenario, truth, dirs, error_m, ut_power_w):
    """Normalized PACE/UCE bounds, RMS over all links."""
    ofdm = settings.ofdm
    acc = {k: [] for k in ("PACE:LB", "PACE:MCRB", "PACE:Bias", "PACE:CRB", "PACE:VectorLB", "UCE:VectorCRB", "PACE:ToA-LB", "PACE:ToA-CRB", "UCE:ToA-CRB")}
    for s, sat in enumerate(scenario.satellites):
        for u, ut in enumerate(scenario.uts):
            link = truth.links[s][u]
            direction = dirs[u] / np.linalg.norm(dirs[u])
            if settings.position_error_mode == "FixedTangential":
                p_est = perturb_position(ut.position, error_m, "FixedTangential")
            else:
                p_est = ut.position + error_m * direction
            rep = pace_bound(link, p_est, sat.position, ofdm, settings.uplink_pilots, ut_power_w, sat.array_rotation)
            vec, toa_crb, _ = uce_crb(link, ofdm, settings.uplink_pilots, ut_power_w)
            g = rep.gain_abs
            acc["PACE:LB"].append(rep.lb_gain / g)
            acc["PACE:MCRB"].append(rep.mcrb_gain / g)
            acc["PACE:Bias"].append(rep.bias_gain / g)
            acc["PACE:CRB"].append(rep.crb_gain / g)
            acc["PACE:VectorLB"].append(channel_vector_lb(rep, link, ofdm))
            acc["UCE:VectorCRB"].append(vec)
            acc["PACE:ToA-LB"].append(rep.lb_toa / link.toa)
            acc["PACE:ToA-CRB"].append(rep.crb_toa / link.toa)
            acc["UCE:ToA-CRB"].append(toa_crb / link.toa)
    return {k: float(_rms(v)) for k, v in acc.items()}


def _fig6_trial(settings: Settings, errors, trial):
    scenario, truth, dirs = _ce_links(settings, trial)
    out = {}
    for e in errors:
        for k, v in ce_metrics(settings, scenario, truth, dirs, e, settings.ut_power_w).items():
            out[((e,), k)] = v
    return out


def _ce_power_trial(settings: Settings, powers_dbm, trial):
    scenario, truth, dirs = _ce_links(settings, trial)
    out = {}
    for p in powers_dbm:
        for k, v in ce_metrics(settings, scenario, truth, dirs, settings.position_error_m, float(dbm_to_watt(p))).items():
            out[((p,), k)] = v
    return out


def _rate_antenna_trial(settings: Settings, sides, trial):
    out = {}
    for n in sides:
        for k, v in system_trial(settings, trial, n_side=n).items():
            out[((n * n,), k)] = v / 1e6
    return out


def _rate_power_trial(settings: Settings, powers_dbm, trial):
    out = {}
    for p in powers_dbm:
        for k, v in system_trial(settings, trial, ut_power_w=float(dbm_to_watt(p))).items():
            out[((p,), k)] = v / 1e6
    return out


def benchmark_rows(settings: Settings, sats_list, sides, repeats: int = 1, trial: int = 0):
    """Timing of one BCD sweep with the fast and dense solvers.

    Varies the satellite count at the configured array size, then the array size
    at the configured satellite count. Returns per-trial style dict rows.
    """
    seed = settings.scenario.seed
    U = settings.scenario.num_uts
    out = {}
    cases = [(S, settings.ofdm.n_h) for S in sats_list] + [(settings.scenario.num_sats, n) for n in sides]
    done = set()
    for S, n in cases:
        if (S, n) in done:
            continue
        done.add((S, n))
        ofdm = settings.ofdm.with_array(n, n)
        scenario = generate_scenario(replace(settings.scenario, num_sats=S, seed=trial_seed(seed, trial)))
        truth = true_channels(scenario, ofdm, settings.loss, substream(seed, "fading", trial))
        power = settings.sat_power_w / ofdm.num_subcarriers
        for solver in ("fast", "dense"):
            t = bf.time_bcd_sweep(truth.H, power, ofdm.noise_power, solver, repeats=repeats)
            out[((S, n * n, U), solver)] = t
    return out


def run_experiment(cfg: dict, threads: int = 1) -> ExperimentResult:
    """Run the experiment described by a validated config dict."""
    settings = build_settings(cfg)
    exp = cfg["experiment"]
    etype = ExperimentType(exp["type"])
    sweep = exp["sweep"]
    trials = exp["trials"]
    t0 = time.perf_counter()
    deterministic = True
    if etype is ExperimentType.POSITIONING_POWER_SWEEP:
        axes = ("sat_power_dbm",)
        per = _run_trials(lambda t: _fig3_trial(settings, sweep["sat_power_dbm"], t), trials, threads)
        fam = lambda m: "positioning_" + m.split(":")[0].lower()
    elif etype is ExperimentType.MISMATCH_SURFACE:
        axes = ("clock_bias_max_s", "cfo_max_hz")
        s2 = replace(settings, scenario=replace(settings.scenario, sync_draw_mode=SyncDrawMode.UNIFORM_ZERO_TO_MAX))
        per = _run_trials(lambda t: _fig4_trial(s2, sweep["clock_bias_max_s"], sweep["cfo_max_hz"], t), trials, threads)
        fam = lambda m: "mismatch_surface"
    elif etype is ExperimentType.CE_POSITION_ERROR_SWEEP:
        axes = ("position_error_m",)
        per = _run_trials(lambda t: _fig6_trial(settings, sweep["position_error_m"], t), trials, threads)
        fam = lambda m: "ce_toa" if "ToA" in m else "ce_gain"
    elif etype is ExperimentType.CE_UT_POWER_SWEEP:
        axes = ("ut_power_dbm",)
        per = _run_trials(lambda t: _ce_power_trial(settings, sweep["ut_power_dbm"], t), trials, threads)
        fam = lambda m: "ce_toa" if "ToA" in m else "ce_gain"
    elif etype is ExperimentType.SUM_RATE_ANTENNA_SWEEP:
        axes = ("num_antennas",)
        per = _run_trials(lambda t: _rate_antenna_trial(settings, sweep["antennas_per_side"], t), trials, threads)
        fam = lambda m: "sum_rate_mbps"
    elif etype is ExperimentType.SUM_RATE_UT_POWER_SWEEP:
        axes = ("ut_power_dbm",)
        per = _run_trials(lambda t: _rate_power_trial(settings, sweep["ut_power_dbm"], t), trials, threads)
        fam = lambda m: "sum_rate_mbps"
    else:
        axes = ("num_sats", "num_antennas", "num_uts")
        # Timings are measured sequentially so that workers do not compete for cores.
        per = [benchmark_rows(settings, sweep["num_sats"], sweep["antennas_per_side"], trial=t) for t in range(trials)]
        fam = lambda m: "solver_timing_s"
        deterministic = False
    rows = _aggregate(per, fam)
    excluded = sum(p is None for p in per)
    provenance = {
        "experiment": etype.value,
        "seed": exp["seed"],
        "trials": trials,
        "excluded_trials": excluded,
        "code_version": __version__,
        "config": dump_config(cfg),
    }
    log.info("%s finished in %.1f s (%d trials, %d excluded)", etype.value, time.perf_counter() - t0, trials, excluded)
    return ExperimentResult(etype.value, axes, rows, provenance, deterministic)
