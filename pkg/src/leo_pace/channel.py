"""LoS OFDM channel between a satellite UPA and a single-antenna UT.

Conventions
-----------
* Array-frame elevation is measured from the array plane, so elevation pi/2 is
  boresight (all steering phases vanish there).
* Steering vectors are ``kron(horizontal, vertical)``; the horizontal index is
  the slow one.
* Dimensionless ``d_over_lambda`` is used everywhere angles meet the array.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
GAIN_PEAK = np.sqrt(3.0 / (4.0 * np.pi))


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


class PilotMode(str, enum.Enum):
    ALL_ONES = "AllOnes"
    RANDOM_QPSK = "RandomQPSK"


@dataclass(frozen=True)
class OfdmConfig:
    """Numerology, array size and receiver noise.

    ``noise_psd_dbm_hz`` and ``noise_figure_db`` are kept in their I/O units;
    :attr:`noise_power` is the linear per-subcarrier noise variance.
    """

    carrier_freq: float = 12.7e9
    subcarrier_spacing: float = 120e3
    num_subcarriers: int = 1024
    n_h: int = 16
    n_v: int = 16
    antenna_spacing: float | None = None
    noise_psd_dbm_hz: float = -173.855
    noise_figure_db: float = 10.0
    bandwidth: float = field(init=False)
    symbol_duration: float = field(init=False)
    wavelength: float = field(init=False)

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError("n_h and n_v must be >= 1")
        if not (self.carrier_freq > 0 and self.subcarrier_spacing > 0):
            raise ValueError("carrier_freq and subcarrier_spacing must be positive")
        lam = SPEED_OF_LIGHT / self.carrier_freq
        object.__setattr__(self, "wavelength", lam)
        if self.antenna_spacing is None:
            object.__setattr__(self, "antenna_spacing", lam / 2.0)
        if not self.antenna_spacing > 0:
            raise ValueError("antenna_spacing must be positive")
        object.__setattr__(self, "bandwidth", self.num_subcarriers * self.subcarrier_spacing)
        object.__setattr__(self, "symbol_duration", 1.0 / self.subcarrier_spacing)

    @property
    def num_antennas(self) -> int:
        return self.n_h * self.n_v

    @property
    def d_over_lambda(self) -> float:
        return self.antenna_spacing / self.wavelength

    @property
    def noise_psd(self) -> float:
        """Effective noise PSD in W/Hz (noise figure applied)."""
        return float(dbm_to_watt(self.noise_psd_dbm_hz)) * 10.0 ** (self.noise_figure_db / 10.0)

    @property
    def noise_power(self) -> float:
        """Noise variance per subcarrier sample, W."""
        return self.noise_psd * self.subcarrier_spacing

    def with_array(self, n_h: int, n_v: int) -> "OfdmConfig":
        return OfdmConfig(
            self.carrier_freq,
            self.subcarrier_spacing,
            self.num_subcarriers,
            n_h,
            n_v,
            None,
            self.noise_psd_dbm_hz,
            self.noise_figure_db,
        )


# ---------------------------------------------------------------- path loss


class ConstantAbsorption:
    def __init__(self, db: float = 1.0):
        self.db = float(db)

    def __call__(self, ground_elevation: float) -> float:
        return self.db

    def __repr__(self):
        return f"ConstantAbsorption({self.db})"


class ElevationTableAbsorption:
    """Absorption interpolated linearly between grazing, 45 degrees and zenith."""

    def __init__(self, grazing_db: float, mid_db: float, zenith_db: float):
        self.table = np.array([grazing_db, mid_db, zenith_db], dtype=float)
        self.nodes = np.array([0.0, np.pi / 4, np.pi / 2])

    def __call__(self, ground_elevation: float) -> float:
        el = float(np.clip(ground_elevation, 0.0, np.pi / 2))
        return float(np.interp(el, self.nodes, self.table))

    def __repr__(self):
        g, m, z = self.table
        return f"ElevationTableAbsorption({g}, {m}, {z})"


@dataclass(frozen=True)
class LossConfig:
    absorption: object = field(default_factory=ConstantAbsorption)
    scintillation_db: float = 0.5
    shadow_fading_db: float = 0.0
    clutter_db: float = 0.0


@dataclass(frozen=True)
class PathLoss:
    free_space: float
    shadow_fading: float
    clutter: float
    absorption: float
    scintillation: float

    @property
    def total_db(self) -> float:
        return self.free_space + self.shadow_fading + self.clutter + self.absorption + self.scintillation

    @property
    def beta(self) -> float:
        return 10.0 ** (-self.total_db / 20.0)


def free_space_loss_db(range_m: float, carrier_freq: float) -> float:
    return 20.0 * np.log10(range_m) + 20.0 * np.log10(carrier_freq) - 147.55


def path_loss(range_m: float, ground_elevation: float, ofdm: OfdmConfig, loss: LossConfig) -> PathLoss:
    if not range_m > 0:
        raise ValueError("range must be positive")
    return PathLoss(
        free_space=float(free_space_loss_db(range_m, ofdm.carrier_freq)),
        shadow_fading=float(loss.shadow_fading_db),
        clutter=float(loss.clutter_db),
        absorption=float(loss.absorption(ground_elevation)),
        scintillation=float(loss.scintillation_db),
    )


def draw_channel_gain(beta: float, rng: np.random.Generator, size=None):
    """``beta * exp(j psi)`` with psi uniform on [0, 2 pi)."""
    if np.any(np.asarray(beta) < 0):
        raise ValueError("beta must be non-negative")
    psi = rng.uniform(0.0, 2 * np.pi, size=size)
    return beta * np.exp(1j * psi)


# ---------------------------------------------------------------- array


def _phases(az, el, d_over_lambda):
    ce = np.cos(el)
    return d_over_lambda * np.cos(az) * ce, d_over_lambda * np.sin(az) * ce


def _index_grids(n_h: int, n_v: int):
    nh = np.repeat(np.arange(n_h, dtype=float), n_v)
    nv = np.tile(np.arange(n_v, dtype=float), n_h)
    return nh, nv


def steering_vector(az: float, el: float, n_h: int, n_v: int, d_over_lambda: float = 0.5) -> np.ndarray:
    phi_h, phi_v = _phases(az, el, d_over_lambda)
    a_h = np.exp(-2j * np.pi * phi_h * np.arange(n_h))
    a_v = np.exp(-2j * np.pi * phi_v * np.arange(n_v))
    return np.kron(a_h, a_v)


def steering_gradient(az: float, el: float, n_h: int, n_v: int, d_over_lambda: float = 0.5):
    """Analytic derivatives of :func:`steering_vector` w.r.t. azimuth and elevation."""
    a = steering_vector(az, el, n_h, n_v, d_over_lambda)
    nh, nv = _index_grids(n_h, n_v)
    sa, ca, se, ce = np.sin(az), np.cos(az), np.sin(el), np.cos(el)
    dh_daz, dv_daz = -d_over_lambda * sa * ce, d_over_lambda * ca * ce
    dh_del, dv_del = -d_over_lambda * ca * se, -d_over_lambda * sa * se
    da_daz = a * (-2j * np.pi) * (nh * dh_daz + nv * dv_daz)
    da_del = a * (-2j * np.pi) * (nh * dh_del + nv * dv_del)
    return da_daz, da_del


def radiation_gain(el: float) -> float:
    """Element gain for array-frame elevation ``el`` in [0, pi/2]; peak at boresight."""
    if not (0.0 <= el <= np.pi / 2 + 1e-12):
        raise ValueError(f"elevation {el!r} outside [0, pi/2]")
    return float(GAIN_PEAK * np.cos(np.pi / 2 - min(el, np.pi / 2)))


# ---------------------------------------------------------------- links


@dataclass(frozen=True)
class LinkParams:
    alpha: complex
    gain: complex
    toa: float
    doppler: float
    az: float
    el: float
    loss: PathLoss
    range_m: float = float("nan")

    def steering(self, ofdm: OfdmConfig) -> np.ndarray:
        return steering_vector(self.az, self.el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda)


def make_link(alpha: complex, az: float, el: float, toa: float, doppler: float, loss: PathLoss, range_m=float("nan")) -> LinkParams:
    """Bundle link parameters; the effective gain folds in the element pattern.

    Elevation enters the pattern through its magnitude, so an array whose
    boresight points along -Z (the Global frame) sees the same pattern as one
    pointing along +Z.
    """
    g = radiation_gain(min(abs(el), np.pi / 2))
    return LinkParams(complex(alpha), complex(alpha) * g, float(toa), float(doppler), float(az), float(el), loss, float(range_m))


def assemble_channel(link: LinkParams, ell, k, ofdm: OfdmConfig) -> np.ndarray:
    """Channel vector on symbol ``ell`` and subcarrier ``k`` (scalars or broadcastable arrays).

    The trailing axis indexes antennas.
    """
    ell = np.asarray(ell, dtype=float)
    k = np.asarray(k, dtype=float)
    ramp = np.exp(2j * np.pi * (ell * ofdm.symbol_duration * link.doppler - k * ofdm.subcarrier_spacing * link.toa))
    return link.gain * ramp[..., None] * link.steering(ofdm)


def flat_response(link: LinkParams, ofdm: OfdmConfig) -> np.ndarray:
    """Frequency-flat part of the channel (no delay or Doppler ramp)."""
    return link.gain * link.steering(ofdm)


# ---------------------------------------------------------------- pilots


class PrecoderMode(str, enum.Enum):
    PAB = "PAB"
    VDB = "VDB"


def build_positioning_precoder(mode, angles, power_per_subcarrier: float, ofdm: OfdmConfig) -> np.ndarray:
    """Downlink pilot precoder ``F`` (N x columns).

    PAB stacks conjugate steering vectors toward the estimated UT angles and
    scales them so that ``F @ ones`` carries exactly ``power_per_subcarrier``.
    VDB returns a single all-ones column scaled the same way.
    """
    mode = PrecoderMode(mode)
    n = ofdm.num_antennas
    if mode is PrecoderMode.VDB:
        beam = steering_vector(0.0, np.pi / 2, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda).conj()
        return (np.sqrt(power_per_subcarrier) / np.sqrt(n) * beam)[:, None]
    if angles is None or len(angles) == 0:
        raise ValueError("PAB precoder needs at least one estimated angle pair")
    cols = np.stack(
        [steering_vector(az, el, ofdm.n_h, ofdm.n_v, ofdm.d_over_lambda).conj() for az, el in angles], axis=1
    )
    total = np.linalg.norm(cols.sum(axis=1))
    if total == 0:
        raise ValueError("PAB beams cancel; normalization undefined")
    return np.sqrt(power_per_subcarrier) / total * cols


def pilot_symbols(mode, num_columns: int, num_symbols: int, num_subcarriers: int, rng=None) -> np.ndarray:
    """Unit-modulus pilots of shape (L, K, columns)."""
    mode = PilotMode(mode)
    shape = (num_symbols, num_subcarriers, num_columns)
    if mode is PilotMode.ALL_ONES:
        return np.ones(shape, dtype=complex)
    if rng is None:
        raise ValueError("RandomQPSK pilots need an rng")
    q = rng.integers(0, 4, size=shape)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * q))
