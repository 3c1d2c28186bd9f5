"""Uplink channel-gain/ToA estimation bounds given an imperfect UT position.

With a position estimate the satellite knows the arrival direction, so only
``eta = [Re gain, Im gain, toa]`` is estimated. A position error makes the
assumed steering vector wrong, which is scored with a misspecified bound.
The geometry-agnostic alternative (``uce_crb``) estimates the whole channel
vector plus ToA.

The observation on pilot ``ell`` and subcarrier ``k`` is
``gain * exp(-j 2 pi k df toa) * a * sqrt(P/K) * t`` in complex white noise.
All pilots are identical (all-ones), so by default the L_c repetitions and
the N antennas are collapsed onto a two-dimensional subspace spanned by the
true and assumed steering vectors. This keeps every inner product, hence every
bound, unchanged. ``full=True`` builds the raw L_c*K*N stack instead.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import mcrb
from .channel import OfdmConfig, steering_vector
from .scenario import link_geometry

ETA_NAMES = ("re_gain", "im_gain", "toa")


class PositionErrorMode(str, enum.Enum):
    RANDOM_DIRECTION = "RandomDirection"
    FIXED_TANGENTIAL = "FixedTangential"



def aoa_from_position(p_est, p_s, array_rotation=None):
    """Arrival angles (az, el) implied by an estimated UT position."""
    rot = np.eye(3) if array_rotation is None else array_rotation
    _, az, el, _ = link_geometry(p_s, rot, p_est)
    return az, el


def perturb_position(p, magnitude: float, mode=PositionErrorMode.RANDOM_DIRECTION, rng=None):
    """Displace ``p`` by ``magnitude`` metres.

    RandomDirection draws the direction uniformly on the sphere; FixedTangential
    uses the local east direction at ``p`` (deterministic).
    """
    p = np.asarray(p, dtype=float)
    mode = PositionErrorMode(mode)
    if mode is PositionErrorMode.FIXED_TANGENTIAL:
        up = p / np.linalg.norm(p)
        east = np.cross([0.0, 0.0, 1.0], up)
        if np.linalg.norm(east) < 1e-12:
            east = np.array([1.0, 0.0, 0.0])
        direction = east / np.linalg.norm(east)
    else:
        z = rng.standard_normal(3)
        direction = z / np.linalg.norm(z)
    return p + magnitude * direction


class UplinkModel:
    """Means and derivatives of the uplink observation for given steering vectors.

    ``a_true`` and ``a_assumed`` are full N-vectors. Observations are arranged
    as (K, D) arrays flattened row-major, where D is the basis dimension
    (2 in compressed form, N otherwise) and the L_c repetitions are either
    folded into a sqrt(L_c) factor or stacked.
    """

    def __init__(self, a_true, a_assumed, ofdm: OfdmConfig, pilots: int, ut_power_w: float, full: bool = False):
        self.ofdm = ofdm
        self.pilots = int(pilots)
        self.full = full
        amp = np.sqrt(ut_power_w / ofdm.num_subcarriers)
        if full:
            self.basis_true = np.asarray(a_true, complex)
            self.basis_assumed = np.asarray(a_assumed, complex)
            self.reps = self.pilots
            self.amp = amp
        else:
            Q = _orthobasis(a_true, a_assumed)
            self.basis_true = Q.conj().T @ a_true
            self.basis_assumed = Q.conj().T @ a_assumed
            self.reps = 1
            self.amp = amp * np.sqrt(self.pilots)
        self.k = np.arange(1, ofdm.num_subcarriers + 1, dtype=float)
        self.w = 2 * np.pi * ofdm.subcarrier_spacing

    def _mean(self, eta, basis):
        gain = eta[0] + 1j * eta[1]
        ph = np.exp(-1j * self.w * self.k * eta[2])
        m = self.amp * gain * ph[:, None] * basis[None, :]
        return self._flat(m)

    def _flat(self, m, trailing=0):
        if self.reps > 1:
            m = np.broadcast_to(m, (self.reps,) + m.shape)
        lead = m.ndim - trailing
        return m.reshape((-1,) + m.shape[lead:])

    def true_mean(self, eta):
        return self._mean(eta, self.basis_true)

    def mismatched_mean(self, eta):
        return self._mean(eta, self.basis_assumed)

    def jacobian(self, eta):
        gain = eta[0] + 1j * eta[1]
        ph = np.exp(-1j * self.w * self.k * eta[2])
        base = self.amp * ph[:, None] * self.basis_assumed[None, :]  # (K, D)
        J = np.stack([base, 1j * base, -1j * self.w * self.k[:, None] * gain * base], axis=-1)
        return self._flat(J, trailing=1)

    def hessian(self, eta):
        gain = eta[0] + 1j * eta[1]
        ph = np.exp(-1j * self.w * self.k * eta[2])
        base = self.amp * ph[:, None] * self.basis_assumed[None, :]
        wk = self.w * self.k[:, None]
        H = np.zeros(base.shape + (3, 3), dtype=complex)
        H[..., 0, 2] = H[..., 2, 0] = -1j * wk * base
        H[..., 1, 2] = H[..., 2, 1] = wk * base
        H[..., 2, 2] = -(wk**2) * gain * base
        return self._flat(H, trailing=2)


def _orthobasis(a, b):
    """Orthonormal basis (N x 2) whose span contains ``a`` and ``b``."""
    q1 = a / np.linalg.norm(a)
    r = b - q1 * (q1.conj() @ b)
    nr = np.linalg.norm(r)
    if nr <= 1e-12 * np.linalg.norm(b):
        # Collinear: any unit vector orthogonal to q1 completes the basis.
        e = np.zeros_like(q1)
        e[np.argmin(np.abs(q1))] = 1.0
        r = e - q1 * (q1.conj() @ e)
        nr = np.linalg.norm(r)
    return np.stack([q1, r / nr], axis=1)


def uplink_model_pair(link, a_assumed, ofdm: OfdmConfig, pilots: int, ut_power_w: float, full: bool = False):
    """Gaussian model pair for [Re gain, Im gain, toa] with the assumed steering vector."""
    a_true = link.steering(ofdm)
    um = UplinkModel(a_true, a_assumed, ofdm, pilots, ut_power_w, full)
    eta = np.array([link.gain.real, link.gain.imag, link.toa])
    scale_g = max(abs(link.gain), np.finfo(float).tiny)
    return mcrb.GaussianModelPair(
        true_params=eta,
        true_mean=um.true_mean,
        mismatched_mean=um.mismatched_mean,
        mismatched_jacobian=um.jacobian,
        mismatched_hessian=um.hessian,
        noise_var=ofdm.noise_power,
        scales=np.array([scale_g, scale_g, 1e-9]),
    )


@dataclass
class CeBoundReport:
    true_params: np.ndarray
    pseudo_true: np.ndarray
    mcrb: np.ndarray
    bias_outer: np.ndarray
    lbm: np.ndarray
    crb: np.ndarray
    converged: bool
    extras: dict = field(default_factory=dict)

    @property
    def gain_abs(self) -> float:
        return float(np.hypot(self.true_params[0], self.true_params[1]))

    @property
    def lb_gain(self) -> float:
        return float(np.sqrt(np.trace(self.lbm[:2, :2])))

    @property
    def lb_toa(self) -> float:
        return float(np.sqrt(self.lbm[2, 2]))

    @property
    def crb_gain(self) -> float:
        return float(np.sqrt(np.trace(self.crb[:2, :2])))

    @property
    def crb_toa(self) -> float:
        return float(np.sqrt(self.crb[2, 2]))

    @property
    def mcrb_gain(self) -> float:
        return float(np.sqrt(np.trace(self.mcrb[:2, :2])))

    @property
    def bias_gain(self) -> float:
        return float(np.sqrt(np.trace(self.bias_outer[:2, :2])))

    @property
    def lb_gain_normalized(self) -> float:
        return self.lb_gain / self.gain_abs

    @property
    def crb_gain_normalized(self) -> float:
        return self.crb_gain / self.gain_abs

    @property
    def lb_toa_normalized(self) -> float:
        return self.lb_toa / self.true_params[2]

    @property
    def pseudo_gain(self) -> complex:
        return complex(self.pseudo_true[0], self.pseudo_true[1])


def pace_bound(link, p_est, p_s, ofdm: OfdmConfig, pilots: int, ut_power_w: float, array_rotation=None, full: bool = False, opts=None) -> CeBoundReport:
    """Misspecified gain/ToA bound when the steering vector comes from ``p_est``."""
    az, el = aoa_from_position(p_est, p_s, array_rotation)
    a_assumed = steering_vector(az, el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)
    model = uplink_model_pair(link, a_assumed, ofdm, pilots, ut_power_w, full)
    mb = mcrb.mismatch_bound(model, opts)
    matched = uplink_model_pair(link, link.steering(ofdm), ofdm, pilots, ut_power_w, full)
    return CeBoundReport(
        true_params=mb.true_params,
        pseudo_true=mb.pseudo_true,
        mcrb=mb.mcrb,
        bias_outer=mb.bias_outer,
        lbm=mb.lbm,
        crb=mcrb.crb(matched),
        converged=mb.converged,
        extras={"a_assumed": a_assumed, "aoa": (az, el), "kl": mb.kl_value},
    )


def channel_vector_lb(report: CeBoundReport, link, ofdm: OfdmConfig) -> float:
    """Normalized RMSE bound on the reconstructed channel vector ``gain_hat * a_assumed``.

    Mean-square error = N tr(MCRB_gain) + |pseudo_gain a_assumed - gain a_true|^2,
    divided by |true channel|^2 = N |gain|^2.
    """
    a_true = link.steering(ofdm)
    a_hat = report.extras["a_assumed"]
    n = a_true.size
    spread = n * np.trace(report.mcrb[:2, :2])
    offset = np.linalg.norm(report.pseudo_gain * a_hat - link.gain * a_true) ** 2
    return float(np.sqrt(spread + offset) / (np.sqrt(n) * abs(link.gain)))


# ---------------------------------------------------------------- UCE baseline


def uce_fim(h, ofdm: OfdmConfig, pilots: int, ut_power_w: float, toa: float = 0.0) -> np.ndarray:
    """FIM over [Re h (N), Im h (N), toa] for direct channel-vector estimation."""
    h = np.asarray(h, complex)
    n = h.size
    K = ofdm.num_subcarriers
    k = np.arange(1, K + 1, dtype=float)
    w = 2 * np.pi * ofdm.subcarrier_spacing
    s2 = ut_power_w / K
    c = 2.0 * pilots * s2 / ofdm.noise_power
    J = np.zeros((2 * n + 1, 2 * n + 1))
    J[:n, :n] = c * K * np.eye(n)
    J[n : 2 * n, n : 2 * n] = c * K * np.eye(n)
    sk, sk2 = k.sum(), (k**2).sum()
    # Re h_n vs toa: Re{conj(e_n) (-j w k h_n)} = w k Im h_n ; Im h_n vs toa: -w k Re h_n
    J[:n, 2 * n] = J[2 * n, :n] = c * w * sk * h.imag
    J[n : 2 * n, 2 * n] = J[2 * n, n : 2 * n] = -c * w * sk * h.real
    J[2 * n, 2 * n] = c * w**2 * sk2 * np.sum(np.abs(h) ** 2)
    return J


def uce_fim_direct(h, ofdm: OfdmConfig, pilots: int, ut_power_w: float, toa: float = 0.0) -> np.ndarray:
    """Same FIM by explicit summation over every pilot/subcarrier/antenna sample."""
    h = np.asarray(h, complex)
    n = h.size
    K = ofdm.num_subcarriers
    k = np.arange(1, K + 1, dtype=float)
    w = 2 * np.pi * ofdm.subcarrier_spacing
    amp = np.sqrt(ut_power_w / K)
    ph = np.exp(-1j * w * k * toa)
    D = np.zeros((K, n, 2 * n + 1), dtype=complex)
    for i in range(n):
        D[:, i, i] = amp * ph
        D[:, i, n + i] = 1j * amp * ph
    D[:, :, 2 * n] = (-1j * w * k * amp * ph)[:, None] * h[None, :]
    D = D.reshape(-1, 2 * n + 1)
    return pilots * 2.0 * np.real(D.conj().T @ D) / ofdm.noise_power


def uce_crb(link, ofdm: OfdmConfig, pilots: int, ut_power_w: float):
    """Return (normalized channel-vector CRB, ToA CRB, full CRB matrix)."""
    h = link.gain * link.steering(ofdm)
    n = h.size
    J = uce_fim(h, ofdm, pilots, ut_power_w, link.toa)
    scale = np.concatenate([np.full(2 * n, max(abs(link.gain), np.finfo(float).tiny)), [1e-9]])
    Js = J * np.outer(scale, scale)
    if np.linalg.cond(Js) > 1e14:
        raise mcrb.SingularFimError("UCE FIM singular")
    C = np.linalg.inv(Js) * np.outer(scale, scale)
    C = 0.5 * (C + C.T)
    vec = np.sqrt(np.trace(C[: 2 * n, : 2 * n])) / np.linalg.norm(h)
    return float(vec), float(np.sqrt(C[2 * n, 2 * n])), C
