"""Acceptance suite: one test per acceptance criterion.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers
before asserting, so ``pytest -v`` output doubles as the acceptance report.
Tolerances are the contract values; nothing here is tuned to make a check pass.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from leo_pace import beamforming as bf
from leo_pace import evaluation as ev
from leo_pace.channel import OfdmConfig, assemble_channel, dbm_to_watt, make_link, steering_vector
from leo_pace.config import load_config
from leo_pace.experiments import (
    _ce_links,
    _fig4_trial,
    ce_metrics,
    run_experiment,
    system_trial,
    trial_seed,
    true_channels,
)
from leo_pace.output import write_result
from leo_pace.positioning import (
    channel_jacobian,
    mismatched_forward,
    mismatched_hessian,
    mismatched_jacobian,
    positioning_bound,
    ut_state,
)
from leo_pace.scenario import ScenarioConfig, SyncDrawMode, generate_scenario, substream
from leo_pace.uplink import UplinkModel, pace_bound, uce_crb

pytestmark = pytest.mark.acceptance

SEEDS = range(10)
DEFAULTS = Path(__file__).resolve().parents[1] / "src" / "leo_pace" / "configs" / "table1_defaults.yaml"


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return _report


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.abs(b), np.finfo(float).tiny)


def _max_fd_error(analytic, fd):
    """Entrywise relative error, with entries that are tiny relative to the column ignored."""
    analytic, fd = np.asarray(analytic), np.asarray(fd)
    scale = np.abs(analytic).max()
    if scale == 0:
        return float(np.abs(fd).max())
    mask = np.abs(analytic) > 1e-6 * scale
    err = np.abs(analytic - fd)[mask] / np.abs(analytic)[mask]
    off = np.abs(fd)[~mask].max(initial=0.0) / scale
    return float(max(err.max(initial=0.0), off))


# ---------------------------------------------------------------- 1


def test_c01_derivative_fidelity(report):
    t0 = time.perf_counter()
    ofdm = OfdmConfig(num_subcarriers=32, n_h=4, n_v=4)
    rng = np.random.default_rng(2024)
    worst = {"position": 0.0, "uplink": 0.0, "channel": 0.0}
    r_steps = np.array([1.0, 1.0, 1.0, 1e-3, 1e-12])
    for cfg_i in range(100):
        sc = generate_scenario(ScenarioConfig(seed=int(rng.integers(1 << 31))))
        u = int(rng.integers(sc.num_uts))
        r = ut_state(sc, u) + np.concatenate([rng.normal(0, 50.0, 3), rng.normal(0, 100.0, 1), rng.normal(0, 1e-9, 1)])
        lam = ofdm.wavelength
        J, H = mismatched_jacobian(r, sc, lam), mismatched_hessian(r, sc, lam)
        for i, h in enumerate(r_steps):
            e = np.zeros(5)
            e[i] = h
            fd = (mismatched_forward(r + e, sc, lam) - mismatched_forward(r - e, sc, lam)) / (2 * h)
            worst["position"] = max(worst["position"], _max_fd_error(J[:, i], fd))
            if i < 3:
                fdh = (mismatched_jacobian(r + e, sc, lam) - mismatched_jacobian(r - e, sc, lam)) / (2 * h)
                for row in range(H.shape[0]):
                    worst["position"] = max(worst["position"], _max_fd_error(H[row, :, i], fdh[row]))

        # Uplink model in the raw stacked form.
        gain = complex(*rng.normal(0, 1e-9, 2))
        az, el = rng.uniform(-np.pi, np.pi), rng.uniform(0.3, 1.5)
        link = make_link(gain, az, el, rng.uniform(1.6e-3, 2.5e-3), rng.uniform(-3e5, 3e5), None)
        a_hat = steering_vector(az + rng.normal(0, 0.02), el + rng.normal(0, 0.02), ofdm.n_h, ofdm.n_v)
        um = UplinkModel(link.steering(ofdm), a_hat, ofdm, 2, 1.0, full=True)
        eta = np.array([link.gain.real, link.gain.imag, link.toa])
        Ju, Hu = um.jacobian(eta), um.hessian(eta)
        for i, h in enumerate([1e-4 * abs(link.gain), 1e-4 * abs(link.gain), 1e-13]):
            e = np.zeros(3)
            e[i] = h
            fd = (um.mismatched_mean(eta + e) - um.mismatched_mean(eta - e)) / (2 * h)
            worst["uplink"] = max(worst["uplink"], _max_fd_error(Ju[:, i], fd))
            fdh = (um.jacobian(eta + e) - um.jacobian(eta - e)) / (2 * h)
            worst["uplink"] = max(worst["uplink"], _max_fd_error(Hu[:, :, i], fdh))

        # Generator columns of the channel-domain FIM on one (symbol, subcarrier).
        ell, k = int(rng.integers(1, 10_000)), int(rng.integers(1, ofdm.num_subcarriers + 1))
        G = channel_jacobian(link, ell, k, ofdm)
        # The carrier phase is ~1e5 rad, so Doppler/delay steps are sized to move the
        # phase by 1e-3 rad; a fixed step would drown in the phase rounding error.
        steps = [
            ("doppler", 1e-3 / (2 * np.pi * ell * ofdm.symbol_duration)),
            ("toa", 1e-3 / (2 * np.pi * k * ofdm.subcarrier_spacing)),
            ("az", 1e-6),
            ("el", 1e-6),
        ]
        for col, (name, h) in enumerate(steps):
            up = replace(link, **{name: getattr(link, name) + h})
            dn = replace(link, **{name: getattr(link, name) - h})
            span = getattr(up, name) - getattr(dn, name)
            fd = (assemble_channel(up, ell, k, ofdm) - assemble_channel(dn, ell, k, ofdm)) / span
            worst["channel"] = max(worst["channel"], _max_fd_error(G[:, col], fd))
        hg = 1e-4 * abs(link.gain)
        for col, dg in ((4, hg), (5, 1j * hg)):
            up = replace(link, gain=link.gain + dg)
            dn = replace(link, gain=link.gain - dg)
            fd = (assemble_channel(up, ell, k, ofdm) - assemble_channel(dn, ell, k, ofdm)) / (2 * hg)
            worst["channel"] = max(worst["channel"], _max_fd_error(G[:, col], fd))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and elapsed < 10.0
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items()) + f"; 100 configs in {elapsed:.1f} s"
    report(1, "derivative fidelity", ok, detail)


# ---------------------------------------------------------------- 2


def test_c02_matched_reduction(report, settings, scenario):
    zero = np.zeros((scenario.num_uts, scenario.num_sats))
    matched = scenario.with_sync_errors(zero, zero)
    worst_pos, worst_bias = 0.0, 0.0
    for u in range(matched.num_uts):
        rep = positioning_bound(matched, u, settings.ofdm, settings.loss, settings.sat_power_w, settings.positioning)
        worst_pos = max(worst_pos, float(np.max(_rel(np.diag(rep.mcrb), np.diag(rep.crb)))))
        scaled_bias = (rep.pseudo_true - rep.true_params) / np.array([1.0, 1.0, 1.0, 1.0, 1e-9])
        worst_bias = max(worst_bias, float(np.abs(scaled_bias).max()))
    truth = true_channels(scenario, settings.ofdm, settings.loss, substream(0, "fading", 0))
    worst_ce = 0.0
    for s, sat in enumerate(scenario.satellites):
        for u, ut in enumerate(scenario.uts):
            link = truth.links[s][u]
            rep = pace_bound(link, ut.position, sat.position, settings.ofdm, settings.uplink_pilots, settings.ut_power_w, sat.array_rotation)
            worst_ce = max(worst_ce, float(np.max(_rel(np.diag(rep.mcrb), np.diag(rep.crb)))))
            scaled = (rep.pseudo_true - rep.true_params) / np.array([rep.gain_abs, rep.gain_abs, 1e-9])
            worst_bias = max(worst_bias, float(np.abs(scaled).max()))
    ok = worst_pos < 1e-6 and worst_ce < 1e-6 and worst_bias < 1e-6
    report(2, "matched-model reduction", ok, f"positioning rel {worst_pos:.2e}, uplink rel {worst_ce:.2e}, scaled bias {worst_bias:.2e}")


# ---------------------------------------------------------------- 3 and 4


@pytest.fixture(scope="module")
def fig3_sweep(settings, scenario):
    powers = np.arange(10.0, 90.0, 10.0)
    out = {}
    for p in powers:
        reps = [positioning_bound(scenario, u, settings.ofdm, settings.loss, float(dbm_to_watt(p)), settings.positioning) for u in range(scenario.num_uts)]
        out[p] = {a: float(np.sqrt(np.mean([getattr(r, a) ** 2 for r in reps]))) for a in ("lb_position", "crb_position", "bias_position", "mcrb_position")}
    return out


def test_c03_crb_power_law(report, fig3_sweep, settings, scenario):
    ratios = [fig3_sweep[p + 20]["crb_position"] / fig3_sweep[p]["crb_position"] for p in (10.0, 30.0, 50.0)]
    per_ut = []
    for u in range(scenario.num_uts):
        a = positioning_bound(scenario, u, settings.ofdm, settings.loss, float(dbm_to_watt(30.0))).crb_position
        b = positioning_bound(scenario, u, settings.ofdm, settings.loss, float(dbm_to_watt(50.0))).crb_position
        per_ut.append(b / a)
    worst = max(abs(r / 0.1 - 1) for r in ratios + per_ut)
    report(3, "CRB power law", worst < 0.05, f"+20 dB ratios {np.round(ratios, 5).tolist()} (per-UT worst deviation {worst:.2e})")


def test_c04_bias_invariance_and_saturation(report, fig3_sweep):
    bias = np.array([v["bias_position"] for v in fig3_sweep.values()])
    variation = float(np.ptp(bias) / bias.mean())
    top = fig3_sweep[80.0]
    lb_ratio = top["lb_position"] / top["bias_position"]
    crb_ratio = top["crb_position"] / top["bias_position"]
    ok = variation < 1e-3 and 1.0 <= lb_ratio <= 1.5 and crb_ratio < 0.1
    report(4, "bias invariance and LB saturation", ok, f"bias variation {variation:.2e}, LB/bias at 80 dBm {lb_ratio:.4f}, CRB/bias {crb_ratio:.2e}")


# ---------------------------------------------------------------- 5


def test_c05_mismatch_surface_monotone(report, settings):
    cfg = load_config(DEFAULTS, {"experiment": {"type": "MismatchSurface", "sweep": None}})
    b_grid = cfg["experiment"]["sweep"]["clock_bias_max_s"]
    d_grid = cfg["experiment"]["sweep"]["cfo_max_hz"]
    s2 = replace(settings, scenario=replace(settings.scenario, sync_draw_mode=SyncDrawMode.UNIFORM_ZERO_TO_MAX))
    data = _fig4_trial(s2, b_grid, d_grid, 0)
    LB = np.array([[data[((b, d), "LB")] for d in d_grid] for b in b_grid])
    slack = 1e-9
    steps_b = (LB[1:, :] - LB[:-1, :]) / LB[:-1, :]
    steps_d = (LB[:, 1:] - LB[:, :-1]) / LB[:, :-1]
    worst = float(min(steps_b.min(), steps_d.min()))
    report(5, "mismatch surface monotone", worst >= -slack, f"7x7 grid, most negative relative step {worst:.2e} (slack {slack:g})")


# ---------------------------------------------------------------- 6 and 7


CE_ERRORS = (0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5)


@pytest.fixture(scope="module")
def ce_table(settings):
    ut_w = float(dbm_to_watt(40.0))
    table = {}
    for t in SEEDS:
        scenario, truth, dirs = _ce_links(settings, t)
        for e in CE_ERRORS:
            table[(t, e)] = ce_metrics(settings, scenario, truth, dirs, e, ut_w)
    return table


def test_c06_pace_vs_uce(report, ce_table):
    ratios = [ce_table[(t, e)]["UCE:VectorCRB"] / ce_table[(t, e)]["PACE:VectorLB"] for t in SEEDS for e in (1.0, 10.0, 100.0)]
    toa = [_rel(ce_table[(t, 0.0)]["PACE:ToA-LB"], ce_table[(t, 0.0)]["UCE:ToA-CRB"]) for t in SEEDS]
    ok = min(ratios) >= 5 and max(toa) < 0.01
    report(6, "PACE vs UCE", ok, f"min UCE/PACE vector ratio {min(ratios):.2f} (median {np.median(ratios):.2f}), max ToA mismatch {max(toa):.2e}")


def test_c07_bias_crossover(report, ce_table):
    errors = CE_ERRORS[1:]
    bias = [np.mean([ce_table[(t, e)]["PACE:Bias"] for t in SEEDS]) for e in errors]
    mcrb = [np.mean([ce_table[(t, e)]["PACE:MCRB"] for t in SEEDS]) for e in errors]
    dominated = [b > m for b, m in zip(bias, mcrb)]
    # Bias may dominate only from 1 km on, and it must dominate somewhere on the sweep.
    below = [d for d, e in zip(dominated, errors) if e < 1e3]
    ok = not any(below) and any(dominated)
    first = next((e for d, e in zip(dominated, errors) if d), None)
    pairs = ", ".join(f"{e:g} m: {b:.3g}/{m:.3g}" for e, b, m in zip(errors, bias, mcrb))
    report(7, "bias crossover", ok, f"first sweep point with bias > MCRB: {first} m; bias/MCRB {pairs}")


# ---------------------------------------------------------------- 8


def test_c08_solver_equivalence(report):
    rng = np.random.default_rng(8)
    worst = {"rel": 0.0, "kkt": 0.0, "slack": 0.0}
    active = 0
    for i in range(100):
        N, U = int(rng.choice([4, 16, 64])), int(rng.choice([2, 4, 8]))
        S = 3
        H = (rng.standard_normal((S, U, N)) + 1j * rng.standard_normal((S, U, N))) * 10 ** rng.uniform(-1, 1)
        W = rng.standard_normal((S, N, U)) + 1j * rng.standard_normal((S, N, U))
        noise = 10 ** rng.uniform(-2, 1)
        mu = bf.update_equalizers(H, W, noise)
        om = bf.update_weights(H, W, mu, noise)
        sub = bf.build_subproblem(int(rng.integers(S)), H, W, mu, om, 10 ** rng.uniform(-3, 3))
        wf, fi = bf.solve_subproblem_fast(sub)
        wd, _ = bf.solve_subproblem_dense_oracle(sub)
        worst["rel"] = max(worst["rel"], float(np.linalg.norm(wf - wd) / np.linalg.norm(wd)))
        worst["kkt"] = max(worst["kkt"], bf.kkt_residual(sub, wf, fi.lam))
        pw = float(np.sum(np.abs(wf) ** 2))
        if fi.lam > 0:
            active += 1
            worst["slack"] = max(worst["slack"], abs(pw - sub.power) / sub.power)
        else:
            worst["slack"] = max(worst["slack"], max(pw - sub.power, 0.0) / sub.power)
    ok = worst["rel"] < 1e-6 and worst["kkt"] < 1e-8 and worst["slack"] <= 1e-10
    report(8, "fast vs dense subproblem solver", ok, f"rel {worst['rel']:.2e}, KKT {worst['kkt']:.2e}, power slack {worst['slack']:.2e} ({active}/100 with active constraint)")


# ---------------------------------------------------------------- 9


def test_c09_wmmse_contract(report, settings, scenario):
    worst_drop = 0.0
    for t in range(5):
        sc = generate_scenario(replace(settings.scenario, seed=trial_seed(0, t)))
        truth = true_channels(sc, settings.ofdm, settings.loss, substream(0, "fading", t))
        res = bf.wmmse_optimize(truth.H, settings.sat_power_w / settings.ofdm.num_subcarriers, settings.ofdm.noise_power, settings.ofdm.bandwidth)
        worst_drop = min(worst_drop, float(np.min(np.diff(res.objective_trace), initial=0.0)))
    rng = np.random.default_rng(9)
    h = (rng.standard_normal((1, 1, 256)) + 1j * rng.standard_normal((1, 1, 256))) * 1e-6
    P, noise, B = 0.1, settings.ofdm.noise_power, settings.ofdm.bandwidth
    res = bf.wmmse_optimize(h, P, noise, B, rel_tol=1e-12)
    closed = B * np.log2(1 + P * np.linalg.norm(h) ** 2 / noise)
    rel = float(_rel(res.rate_trace[-1], closed))
    ok = worst_drop >= -1e-9 and rel < 1e-6
    report(9, "WMMSE contract", ok, f"largest objective drop {worst_drop:.2e}, single-link rate rel err {rel:.2e}")


# ---------------------------------------------------------------- 10


def test_c10_complexity_separation(report, settings):
    t_start = time.perf_counter()
    sc = generate_scenario(replace(settings.scenario, seed=trial_seed(0, 0)))
    times = {}
    for n in (4, 8, 16):
        ofdm = settings.ofdm.with_array(n, n)
        truth = true_channels(sc, ofdm, settings.loss, substream(0, "fading", 0))
        power = settings.sat_power_w / ofdm.num_subcarriers
        times[n * n] = bf.time_bcd_sweep(truth.H, power, ofdm.noise_power, "fast", repeats=5)
    dense = bf.time_bcd_sweep(truth.H, power, ofdm.noise_power, "dense", repeats=1)
    Ns = np.array(sorted(times))
    slope = float(np.polyfit(np.log(Ns), np.log([times[n] for n in Ns]), 1)[0])
    speedup = dense / times[256]
    elapsed = time.perf_counter() - t_start
    ok = speedup >= 10 and abs(slope - 3) <= 0.5 and elapsed < 300
    detail = (
        f"speedup {speedup:.0f}x at S=4,N=256,U=8 (fast {times[256]:.3g} s, dense {dense:.3g} s); "
        f"log-log slope {slope:.2f} over N={Ns.tolist()}; benchmark {elapsed:.0f} s"
    )
    report(10, "complexity separation", ok, detail)


# ---------------------------------------------------------------- 11


def test_c11_evaluation_reduction(report, settings):
    worst = 0.0
    for t in SEEDS:
        sc = generate_scenario(replace(settings.scenario, seed=trial_seed(0, t)))
        truth = true_channels(sc, settings.ofdm, settings.loss, substream(0, "fading", t))
        power = settings.sat_power_w / settings.ofdm.num_subcarriers
        W = bf.wmmse_optimize(truth.H, power, settings.ofdm.noise_power, settings.ofdm.bandwidth).W
        realized = ev.realized_rates(truth.H, W, truth.toa, truth.toa, settings.ofdm.noise_power, settings.ofdm)[0]
        nominal = bf.nominal_sum_rate(truth.H, W, settings.ofdm.noise_power, settings.ofdm.bandwidth)[0]
        worst = max(worst, float(_rel(realized, nominal)))
    report(11, "realized rate with exact compensation equals nominal rate", worst < 1e-9, f"max rel deviation {worst:.2e} over {len(SEEDS)} default scenarios")


# ---------------------------------------------------------------- 12


def test_c12_system_ordering(report, settings):
    rates = [system_trial(settings, t) for t in SEEDS]
    checks = {
        "Perfect>=PACE": lambda r: r["Perfect+WMMSE"] >= r["PACE+WMMSE"],
        "PACE>=UCE": lambda r: r["PACE+WMMSE"] >= r["UCE+WMMSE"],
        "PACE>PACE+NC": lambda r: r["PACE+WMMSE"] > r["PACE+NC"],
        "PACE+NC>PAB": lambda r: r["PACE+NC"] > r["PAB"],
    }
    counts = {k: sum(bool(f(r)) for r in rates) for k, f in checks.items()}
    joint = sum(all(f(r) for f in checks.values()) for r in rates)
    mean = {k: float(np.mean([r[k] for r in rates])) / 1e6 for k in rates[0]}
    frac = mean["PACE+WMMSE"] / mean["Perfect+WMMSE"]
    ok = joint >= 8 and frac >= 0.8
    detail = (
        f"full ordering on {joint}/10 seeds ({', '.join(f'{k} {v}/10' for k, v in counts.items())}); "
        f"PACE/Perfect {frac:.3f}; mean Mbit/s " + ", ".join(f"{k} {v:.2f}" for k, v in mean.items())
    )
    report(12, "system-level ordering", ok, detail)


# ---------------------------------------------------------------- 13


def test_c13_thread_determinism(report, tmp_path):
    base = yaml.safe_load(DEFAULTS.read_text())
    base["ofdm"].update(num_subcarriers=64, n_h=4, n_v=4)
    cases = {
        "PositioningPowerSweep": None,
        "MismatchSurface": {"clock_bias_max_s": [0.0, 1e-8], "cfo_max_hz": [0.0, 3000.0]},
        "CePositionErrorSweep": None,
        "CeUtPowerSweep": None,
        "SumRateAntennaSweep": {"antennas_per_side": [2, 4]},
        "SumRateUtPowerSweep": {"ut_power_dbm": [30.0, 50.0]},
    }
    mismatched = []
    for etype, sweep in cases.items():
        cfg_dict = dict(base, experiment={"type": etype, "trials": 3, "seed": 11, "sweep": sweep})
        path = tmp_path / f"{etype}.yaml"
        path.write_text(yaml.safe_dump(cfg_dict))
        cfg = load_config(path)
        outs = []
        for threads in (1, 3):
            d = tmp_path / f"{etype}-{threads}"
            files = write_result(run_experiment(cfg, threads=threads), d)
            outs.append({f.name: f.read_bytes() for f in files})
        if outs[0] != outs[1]:
            mismatched.append(etype)
    ok = not mismatched
    report(13, "thread-count determinism", ok, f"{len(cases)} experiment types byte-identical with 1 and 3 threads" if ok else f"differs: {mismatched}")
