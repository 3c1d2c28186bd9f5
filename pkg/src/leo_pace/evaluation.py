"""Realized downlink rates on the true channels, and the non-cooperative baselines.

Beamformers are designed on nominal flat channels assuming ideal delay
alignment. Here they are scored on the true flat responses with the residual
per-subcarrier phase left by delay precompensation: the beam of UT ``m`` from
satellite ``s`` is advanced by ``toa_comp[s, m]``, and reaches UT ``u`` after
the true delay ``toa[s, u]``.
"""

from __future__ import annotations

import logging

import numpy as np

from . import beamforming as bf
from .channel import OfdmConfig, steering_vector

log = logging.getLogger(__name__)


def residual_phase_gains(H_true, W, toa, toa_comp, ofdm: OfdmConfig, k=None):
    """Per-subcarrier effective gains ``A[k, u, m]``.

    ``A[k, u, m] = sum_s exp(-j 2 pi k df (toa[s,u] - toa_comp[s,m])) H_true[s,u] @ W[s][:, m]``.
    """
    G = np.einsum("sun,snm->sum", H_true, W)
    delta = np.asarray(toa)[:, :, None] - np.asarray(toa_comp)[:, None, :]  # (S, U, M)
    if k is None:
        k = np.arange(1, ofdm.num_subcarriers + 1, dtype=float)
    k = np.asarray(k, dtype=float)
    ph = np.exp(-2j * np.pi * ofdm.subcarrier_spacing * k[:, None, None, None] * delta[None])
    return np.einsum("ksum,sum->kum", ph, G)


def realized_rates(H_true, W, toa, toa_comp, noise: float, ofdm: OfdmConfig, cp_bound: float | None = None):
    """Per-UT rates (bit/s) and their sum under residual delay phases.

    Subcarriers are indexed 1..K and each contributes ``df * log2(1 + SINR_k)``.
    """
    toa, toa_comp = np.asarray(toa, float), np.asarray(toa_comp, float)
    if cp_bound is not None:
        worst = float(np.max(np.abs(toa - toa_comp)))
        if worst >= cp_bound:
            log.warning("delay compensation error %.3e s exceeds the CP bound %.3e s", worst, cp_bound)
    A = residual_phase_gains(H_true, W, toa, toa_comp, ofdm)
    p = np.abs(A) ** 2
    sig = np.einsum("kuu->ku", p)
    interf = p.sum(axis=2) - sig
    sinr = sig / (interf + noise)
    rates = ofdm.subcarrier_spacing * np.log2(1.0 + sinr).sum(axis=0)
    return float(rates.sum()), rates


def nc_association(H_est):
    """Serving satellite per UT: the one with the largest estimated channel energy."""
    energy = np.sum(np.abs(H_est) ** 2, axis=2)  # (S, U)
    return np.argmax(energy, axis=0)


def nc_baseline(H_est, power, noise, bandwidth: float = 1.0, **wmmse_opts):
    """Each satellite runs WMMSE alone over the UTs it serves.

    Returns the stacked (S, N, U) beams; columns for UTs a satellite does not
    serve are zero, so those satellites only show up as interference.
    """
    H_est = np.asarray(H_est, complex)
    S, U, N = H_est.shape
    serve = nc_association(H_est)
    W = np.zeros((S, N, U), complex)
    for s in range(S):
        users = np.flatnonzero(serve == s)
        if users.size == 0:
            continue
        res = bf.wmmse_optimize(H_est[s : s + 1][:, users], power, noise, bandwidth, **wmmse_opts)
        W[s][:, users] = res.W[0]
    return W, serve


def pab_comm_baseline(angles, power: float, ofdm: OfdmConfig):
    """Conjugate steering beams toward the estimated angles, ``angles`` of shape (S, U, 2).

    Each satellite splits its budget evenly: ``|W_s|_F^2 = power``.
    """
    angles = np.asarray(angles, dtype=float)
    S, U, _ = angles.shape
    N = ofdm.num_antennas
    W = np.zeros((S, N, U), complex)
    zeta = np.sqrt(power / (U * N))
    for s in range(S):
        for u in range(U):
            az, el = angles[s, u]
            W[s][:, u] = zeta * steering_vector(az, el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda).conj()
    return W
