"""Downlink positioning bounds under per-link synchronization mismatch.

Each satellite contributes a Doppler/delay pair whose accuracy comes from the
channel-domain Fisher information (angles and complex gain treated as
nuisance). Those pairs are then mapped to the UT state
``r = [p (3), cfo (Hz), clock bias (s)]``. The receiver's model assumes a single
CFO and clock bias per UT; the truth adds per-satellite offsets, and the gap
between the two is scored with a misspecified bound.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import mcrb
from .channel import (
    SPEED_OF_LIGHT,
    LossConfig,
    OfdmConfig,
    PilotMode,
    PrecoderMode,
    build_positioning_precoder,
    make_link,
    path_loss,
    pilot_symbols,
    steering_gradient,
    steering_vector,
)
from .scenario import Scenario, ground_elevation, link_geometry

ETA_NAMES = ("doppler", "toa", "az", "el", "re_gain", "im_gain")
R_NAMES = ("x", "y", "z", "cfo", "clock_bias")
R_SCALES = np.array([1.0, 1.0, 1.0, 1.0, 1e-9])


class DegenerateLinkError(np.linalg.LinAlgError):
    pass


class FimMethod(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    DIRECT_SUM = "DirectSum"


@dataclass(frozen=True)
class PositioningConfig:
    pilots: int = 10000
    precoder: PrecoderMode = PrecoderMode.PAB
    pilot_mode: PilotMode = PilotMode.ALL_ONES
    fim_method: FimMethod = FimMethod.CLOSED_FORM
    min_elevation: float = 0.1
    angle_error_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "precoder", PrecoderMode(self.precoder))
        object.__setattr__(self, "pilot_mode", PilotMode(self.pilot_mode))
        object.__setattr__(self, "fim_method", FimMethod(self.fim_method))
        if self.pilots < 1:
            raise ValueError("pilots must be >= 1")


# ---------------------------------------------------------------- channel-domain FIM


def channel_jacobian(link, ell, k, ofdm: OfdmConfig) -> np.ndarray:
    """Derivatives of the channel vector on (ell, k) w.r.t. eta, shape (N, 6)."""
    a = steering_vector(link.az, link.el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)
    da_az, da_el = steering_gradient(link.az, link.el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)
    ramp = np.exp(2j * np.pi * (ell * ofdm.symbol_duration * link.doppler - k * ofdm.subcarrier_spacing * link.toa))
    g = link.gain
    cols = [
        2j * np.pi * ell * ofdm.symbol_duration * g * ramp * a,
        -2j * np.pi * k * ofdm.subcarrier_spacing * g * ramp * a,
        g * ramp * da_az,
        g * ramp * da_el,
        ramp * a,
        1j * ramp * a,
    ]
    return np.stack(cols, axis=1)


def _power_sums(n: int, max_power: int = 2) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=float)
    return np.array([np.sum(i**p) for p in range(max_power + 1)])


def _fim_closed_form(link, f, num_pilots, ofdm):
    a = steering_vector(link.az, link.el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)
    da_az, da_el = steering_gradient(link.az, link.el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)
    c, c_az, c_el = a @ f, da_az @ f, da_el @ f
    g = link.gain
    T, df = ofdm.symbol_duration, ofdm.subcarrier_spacing
    v = np.array([2j * np.pi * T * g * c, -2j * np.pi * df * g * c, g * c_az, g * c_el, c, 1j * c])
    ell_pow = np.array([1, 0, 0, 0, 0, 0])
    k_pow = np.array([0, 1, 0, 0, 0, 0])
    s_ell = _power_sums(num_pilots)
    s_k = _power_sums(ofdm.num_subcarriers)
    moments = s_ell[ell_pow[:, None] + ell_pow[None, :]] * s_k[k_pow[:, None] + k_pow[None, :]]
    return np.real(np.conj(v)[:, None] * v[None, :]) * moments


def _fim_direct_sum(link, beams, num_pilots, ofdm, chunk=64):
    """Brute-force sum over every (ell, k); ``beams`` has shape (L, K, N) or (N,)."""
    K = ofdm.num_subcarriers
    k = np.arange(1, K + 1, dtype=float)
    J = np.zeros((6, 6))
    a = steering_vector(link.az, link.el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)
    da_az, da_el = steering_gradient(link.az, link.el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)
    base = np.stack([a, a, da_az, da_el, a, a], axis=1)  # (N, 6)
    T, df, g = ofdm.symbol_duration, ofdm.subcarrier_spacing, link.gain
    for start in range(0, num_pilots, chunk):
        ell = np.arange(start + 1, min(start + chunk, num_pilots) + 1, dtype=float)
        if beams.ndim == 1:
            proj = np.broadcast_to(beams @ base, (ell.size, K, 6))
        else:
            proj = beams[start : start + ell.size] @ base  # (l, K, 6)
        ramp = np.exp(2j * np.pi * (ell[:, None] * T * link.doppler - k[None, :] * df * link.toa))
        scale = np.empty((ell.size, K, 6), dtype=complex)
        scale[..., 0] = 2j * np.pi * T * g * ell[:, None]
        scale[..., 1] = -2j * np.pi * df * g * k[None, :]
        scale[..., 2] = g
        scale[..., 3] = g
        scale[..., 4] = 1.0
        scale[..., 5] = 1j
        d = (ramp[..., None] * scale * proj).reshape(-1, 6)
        J += np.real(np.conj(d).T @ d)
    return J


def fim_channel_domain(link, precoder, num_pilots: int, ofdm: OfdmConfig, method=FimMethod.CLOSED_FORM, pilots=None) -> np.ndarray:
    """Slepian-Bangs FIM over eta = [doppler, toa, az, el, Re gain, Im gain].

    ``precoder`` is the N x C pilot precoder; ``pilots`` (L, K, C) defaults to
    all ones, in which case the beam is constant and the moment-sum closed form
    applies.
    """
    method = FimMethod(method)
    if num_pilots < 1:
        raise ValueError("num_pilots must be >= 1")
    F = np.asarray(precoder)
    if pilots is None:
        beam = F.sum(axis=1)
        if method is FimMethod.CLOSED_FORM:
            J = _fim_closed_form(link, beam, num_pilots, ofdm)
        else:
            J = _fim_direct_sum(link, beam, num_pilots, ofdm)
    else:
        if method is FimMethod.CLOSED_FORM:
            raise ValueError("closed form needs constant pilots; use DirectSum")
        beams = np.asarray(pilots) @ F.T  # (L, K, N)
        J = _fim_direct_sum(link, beams, num_pilots, ofdm)
    J = 2.0 / ofdm.noise_power * J
    return 0.5 * (J + J.T)


def reduce_nuisance(J: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Schur complement of the nuisance block (last four entries) of a 6x6 FIM.

    The nuisance block is diagonally rescaled before factorization. A rank
    deficient nuisance block is tolerated only when the deficient directions do
    not couple to the kept parameters (e.g. azimuth at exact boresight).
    """
    J = np.asarray(J, dtype=float)
    X, Y, Z = J[:2, :2], J[:2, 2:], J[2:, 2:]
    if not np.all(np.diag(X) > 0):
        raise DegenerateLinkError("no delay/Doppler information (vanishing channel gain or beam)")
    dz = np.sqrt(np.clip(np.diag(Z), 0.0, None))
    if not np.any(dz > 0):
        raise DegenerateLinkError("nuisance block is zero (vanishing channel gain)")
    inv_d = np.where(dz > 0, 1.0 / np.where(dz > 0, dz, 1.0), 0.0)
    Zs = Z * np.outer(inv_d, inv_d)
    Ys = Y * inv_d[None, :]
    w, V = np.linalg.eigh(Zs)
    keep = w > rtol * max(w.max(), 1.0)
    null = V[:, ~keep]
    if null.size:
        leak = np.linalg.norm(Ys @ null) / max(np.linalg.norm(Ys), np.finfo(float).tiny)
        if leak > 1e-8:
            raise DegenerateLinkError("singular nuisance block couples to delay/Doppler")
    Vk = V[:, keep]
    S = X - (Ys @ Vk) @ np.diag(1.0 / w[keep]) @ (Ys @ Vk).T
    return 0.5 * (S + S.T)


# ---------------------------------------------------------------- position-domain models


def ut_state(scenario: Scenario, u: int) -> np.ndarray:
    ut = scenario.uts[u]
    return np.concatenate([ut.position, [scenario.mean_cfo[u], scenario.mean_bias[u]]])


def _check_sats(scenario, sats):
    return np.arange(scenario.num_sats) if sats is None else np.asarray(sats, dtype=int)


def mismatched_forward(r, scenario: Scenario, wavelength: float, sats=None) -> np.ndarray:
    """Interleaved [doppler_s, toa_s] under a single CFO/clock bias per UT."""
    r = np.asarray(r, dtype=float)
    sats = _check_sats(scenario, sats)
    out = np.empty(2 * sats.size)
    for i, s in enumerate(sats):
        sat = scenario.satellites[s]
        d = r[:3] - sat.position
        rng = np.linalg.norm(d)
        if rng == 0:
            raise ValueError("UT coincides with satellite")
        out[2 * i] = sat.velocity @ d / (wavelength * rng) + r[3]
        out[2 * i + 1] = rng / SPEED_OF_LIGHT + r[4]
    return out


def true_forward(r, cfo_offsets, bias_offsets, scenario: Scenario, wavelength: float, sats=None) -> np.ndarray:
    """Like :func:`mismatched_forward` plus per-satellite CFO and clock-bias offsets."""
    sats = _check_sats(scenario, sats)
    out = mismatched_forward(r, scenario, wavelength, sats)
    out[0::2] += np.asarray(cfo_offsets, dtype=float)[sats]
    out[1::2] += np.asarray(bias_offsets, dtype=float)[sats]
    return out


def mismatched_jacobian(r, scenario: Scenario, wavelength: float, sats=None) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    sats = _check_sats(scenario, sats)
    Jm = np.zeros((2 * sats.size, 5))
    for i, s in enumerate(sats):
        sat = scenario.satellites[s]
        d = r[:3] - sat.position
        rng = np.linalg.norm(d)
        v = sat.velocity
        Jm[2 * i, :3] = v / (wavelength * rng) - (v @ d) * d / (wavelength * rng**3)
        Jm[2 * i, 3] = 1.0
        Jm[2 * i + 1, :3] = d / (SPEED_OF_LIGHT * rng)
        Jm[2 * i + 1, 4] = 1.0
    return Jm


def mismatched_hessian(r, scenario: Scenario, wavelength: float, sats=None) -> np.ndarray:
    """Second derivatives, shape (2S, 5, 5); only the position block is nonzero."""
    r = np.asarray(r, dtype=float)
    sats = _check_sats(scenario, sats)
    H = np.zeros((2 * sats.size, 5, 5))
    eye = np.eye(3)
    for i, s in enumerate(sats):
        sat = scenario.satellites[s]
        d = r[:3] - sat.position
        rng = np.linalg.norm(d)
        v = sat.velocity
        vd = v @ d
        H[2 * i, :3, :3] = (
            -(np.outer(v, d) + np.outer(d, v) + vd * eye) / (wavelength * rng**3)
            + 3.0 * vd * np.outer(d, d) / (wavelength * rng**5)
        )
        H[2 * i + 1, :3, :3] = eye / (SPEED_OF_LIGHT * rng) - np.outer(d, d) / (SPEED_OF_LIGHT * rng**3)
    return H


# ---------------------------------------------------------------- full bound


@dataclass
class BoundReport:
    """Bound matrices for one parameter vector plus RMSE summaries."""

    names: tuple
    true_params: np.ndarray
    pseudo_true: np.ndarray
    crb: np.ndarray
    mcrb: np.ndarray
    bias_outer: np.ndarray
    lbm: np.ndarray
    converged: bool = True
    extras: dict = field(default_factory=dict)

    def _rmse(self, m, idx):
        return float(np.sqrt(max(np.trace(m[np.ix_(idx, idx)]), 0.0)))

    @property
    def lb_position(self) -> float:
        return self._rmse(self.lbm, [0, 1, 2])

    @property
    def crb_position(self) -> float:
        return self._rmse(self.crb, [0, 1, 2])

    @property
    def mcrb_position(self) -> float:
        return self._rmse(self.mcrb, [0, 1, 2])

    @property
    def bias_position(self) -> float:
        return self._rmse(self.bias_outer, [0, 1, 2])


def link_params(scenario: Scenario, s: int, u: int, ofdm: OfdmConfig, loss: LossConfig, phase: float = 0.0):
    """True link parameters; ``phase`` is the random carrier phase of the gain."""
    sat, ut = scenario.satellites[s], scenario.uts[u]
    rng_m, az, el, unit = link_geometry(sat.position, sat.array_rotation, ut.position)
    pl = path_loss(rng_m, ground_elevation(sat.position, ut.position), ofdm, loss)
    d = ut.position - sat.position
    doppler = sat.velocity @ d / (ofdm.wavelength * rng_m) + ut.cfo[s]
    toa = rng_m / SPEED_OF_LIGHT + ut.clock_bias[s]
    return make_link(pl.beta * np.exp(1j * phase), az, el, toa, doppler, pl, rng_m)


def pilot_precoder(scenario: Scenario, s: int, ofdm: OfdmConfig, power_w: float, cfg: PositioningConfig, rng=None) -> np.ndarray:
    """Positioning precoder of satellite ``s`` toward all UTs (PAB) or nadir (VDB)."""
    sat = scenario.satellites[s]
    angles = []
    for ut in scenario.uts:
        _, az, el, _ = link_geometry(sat.position, sat.array_rotation, ut.position)
        if cfg.angle_error_std > 0 and rng is not None:
            az, el = az + cfg.angle_error_std * rng.standard_normal(), el + cfg.angle_error_std * rng.standard_normal()
        angles.append((az, el))
    return build_positioning_precoder(cfg.precoder, angles, power_w / ofdm.num_subcarriers, ofdm)


def measurement_fim(scenario: Scenario, u: int, ofdm: OfdmConfig, loss: LossConfig, power_w: float, cfg: PositioningConfig, precoders=None):
    """Stacked block-diagonal delay/Doppler FIM for UT ``u`` and the satellites used."""
    blocks, used = [], []
    for s in range(scenario.num_sats):
        link = link_params(scenario, s, u, ofdm, loss)
        if abs(link.el) < cfg.min_elevation:
            continue
        F = precoders[s] if precoders is not None else pilot_precoder(scenario, s, ofdm, power_w, cfg)
        pilots = None
        if cfg.pilot_mode is not PilotMode.ALL_ONES:
            pilots = pilot_symbols(cfg.pilot_mode, F.shape[1], cfg.pilots, ofdm.num_subcarriers, np.random.default_rng(s))
        J6 = fim_channel_domain(link, F, cfg.pilots, ofdm, cfg.fim_method if pilots is None else FimMethod.DIRECT_SUM, pilots)
        blocks.append(reduce_nuisance(J6))
        used.append(s)
    if not blocks:
        raise DegenerateLinkError("no usable satellite links")
    return linalg.block_diag(*blocks), np.array(used)


def positioning_model(scenario: Scenario, u: int, J: np.ndarray, sats, wavelength: float, matched: bool = False):
    r_true = ut_state(scenario, u)
    cfo_off = np.zeros(scenario.num_sats) if matched else scenario.cfo_offsets(u)
    bias_off = np.zeros(scenario.num_sats) if matched else scenario.bias_offsets(u)
    cov = np.linalg.inv(J)
    cov = 0.5 * (cov + cov.T)
    return mcrb.GaussianModelPair(
        true_params=r_true,
        true_mean=lambda r: true_forward(r, cfo_off, bias_off, scenario, wavelength, sats),
        mismatched_mean=lambda r: mismatched_forward(r, scenario, wavelength, sats),
        mismatched_jacobian=lambda r: mismatched_jacobian(r, scenario, wavelength, sats),
        mismatched_hessian=lambda r: mismatched_hessian(r, scenario, wavelength, sats),
        covariance=cov,
        scales=R_SCALES,
    )


def positioning_bound(
    scenario: Scenario,
    u: int,
    ofdm: OfdmConfig,
    loss: LossConfig | None = None,
    power_w: float = 100.0,
    cfg: PositioningConfig | None = None,
    precoders=None,
    opts: dict | None = None,
) -> BoundReport:
    """Misspecified bound on the UT state, with the matched CRB alongside."""
    loss = LossConfig() if loss is None else loss
    cfg = PositioningConfig() if cfg is None else cfg
    J, sats = measurement_fim(scenario, u, ofdm, loss, power_w, cfg, precoders)
    if sats.size < 3:
        raise DegenerateLinkError("fewer than three satellites; position not identifiable")
    model = positioning_model(scenario, u, J, sats, ofdm.wavelength)
    try:
        crb = mcrb.crb(model)
        mb = mcrb.mismatch_bound(model, opts)
    except mcrb.SingularFimError as exc:
        raise DegenerateLinkError(f"position FIM singular for UT {u}: {exc}") from exc
    return BoundReport(
        names=R_NAMES,
        true_params=mb.true_params,
        pseudo_true=mb.pseudo_true,
        crb=crb,
        mcrb=mb.mcrb,
        bias_outer=mb.bias_outer,
        lbm=mb.lbm,
        converged=mb.converged,
        extras={"sats": sats, "kl": mb.kl_value, "measurement_fim": J},
    )
