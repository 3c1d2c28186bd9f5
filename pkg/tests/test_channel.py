import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st
from scipy import stats

from leo_pace.channel import (
    GAIN_PEAK,
    ConstantAbsorption,
    ElevationTableAbsorption,
    LossConfig,
    OfdmConfig,
    PrecoderMode,
    assemble_channel,
    build_positioning_precoder,
    dbm_to_watt,
    draw_channel_gain,
    free_space_loss_db,
    make_link,
    path_loss,
    pilot_symbols,
    radiation_gain,
    steering_gradient,
    steering_vector,
    watt_to_dbm,
)

angles = st.tuples(st.floats(-np.pi, np.pi), st.floats(0.05, np.pi / 2 - 0.05))


def test_ofdm_derived_values(ofdm):
    assert ofdm.bandwidth == ofdm.num_subcarriers * ofdm.subcarrier_spacing
    assert ofdm.symbol_duration * ofdm.subcarrier_spacing == 1.0
    assert ofdm.d_over_lambda == pytest.approx(0.5)
    assert ofdm.noise_power == pytest.approx(4.939e-15, rel=1e-3)


def test_ofdm_rejects_bad_sizes():
    with pytest.raises(ValueError):
        OfdmConfig(num_subcarriers=0)
    with pytest.raises(ValueError):
        OfdmConfig(n_h=0)


def test_dbm_round_trip():
    assert dbm_to_watt(50.0) == pytest.approx(100.0)
    assert watt_to_dbm(dbm_to_watt(37.3)) == pytest.approx(37.3)


def test_steering_trivial_cases():
    np.testing.assert_array_equal(steering_vector(0.3, 0.2, 1, 1), [1.0 + 0j])
    np.testing.assert_allclose(steering_vector(1.1, np.pi / 2, 4, 3), np.ones(12), atol=1e-15)
    np.testing.assert_allclose(steering_vector(0.0, 0.0, 2, 1, 0.5), [1.0, -1.0], atol=1e-15)


@hsettings(max_examples=60, deadline=None)
@given(angles)
def test_steering_unit_modulus(ae):
    a = steering_vector(*ae, 5, 3)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)


@hsettings(max_examples=60, deadline=None)
@given(angles)
def test_steering_gradient_finite_difference(ae):
    az, el = ae
    h = 1e-6
    g_az, g_el = steering_gradient(az, el, 4, 5)
    fd_az = (steering_vector(az + h, el, 4, 5) - steering_vector(az - h, el, 4, 5)) / (2 * h)
    fd_el = (steering_vector(az, el + h, 4, 5) - steering_vector(az, el - h, 4, 5)) / (2 * h)
    for g, fd in ((g_az, fd_az), (g_el, fd_el)):
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1e-3)


def test_steering_gradient_trivial():
    g_az, g_el = steering_gradient(0.4, 0.1, 1, 1)
    assert np.all(g_az == 0) and np.all(g_el == 0)
    g_az, _ = steering_gradient(0.4, np.pi / 2, 4, 4)
    np.testing.assert_allclose(g_az, 0.0, atol=1e-15)


def test_radiation_gain_values():
    assert radiation_gain(np.pi / 2) == pytest.approx(0.48860, abs=1e-5)
    assert radiation_gain(0.0) == pytest.approx(0.0, abs=1e-16)
    assert radiation_gain(np.pi / 3) == pytest.approx(0.42314, abs=1e-5)
    with pytest.raises(ValueError):
        radiation_gain(-0.1)
    with pytest.raises(ValueError):
        radiation_gain(2.0)


def test_free_space_loss_value():
    assert free_space_loss_db(5e5, 12.7e9) == pytest.approx(168.5054, abs=1e-4)


def test_path_loss_composition(ofdm):
    base = path_loss(5e5, 1.0, ofdm, LossConfig(ConstantAbsorption(0.0), 0.0))
    far = path_loss(5e6, 1.0, ofdm, LossConfig(ConstantAbsorption(0.0), 0.0))
    assert far.total_db - base.total_db == pytest.approx(20.0, abs=1e-12)
    pl = path_loss(5e5, 1.0, ofdm, LossConfig(ConstantAbsorption(1.2), 0.5))
    assert pl.total_db == pytest.approx(base.total_db + 1.7, abs=1e-12)
    assert pl.beta == pytest.approx(10 ** (-pl.total_db / 20), rel=1e-12)


def test_absorption_table():
    ab = ElevationTableAbsorption(3.0, 1.0, 0.5)
    assert ab(0.0) == pytest.approx(3.0)
    assert ab(np.pi / 4) == pytest.approx(1.0)
    assert ab(np.pi / 2) == pytest.approx(0.5)
    assert ab(np.pi / 8) == pytest.approx(2.0)


def test_channel_gain_draws():
    rng = np.random.default_rng(0)
    assert draw_channel_gain(0.0, rng) == 0
    alpha = draw_channel_gain(2.5e-9, rng, size=100_000)
    np.testing.assert_allclose(np.abs(alpha), 2.5e-9, rtol=1e-12)
    z = alpha / 2.5e-9
    # Circular mean of a uniform phase: each component has variance 1/2.
    assert abs(z.mean()) < 3 * np.sqrt(0.5 / z.size) * np.sqrt(2)
    counts, _ = np.histogram(np.angle(z) % (2 * np.pi), bins=16, range=(0, 2 * np.pi))
    assert stats.chisquare(counts).pvalue > 1e-3


def _link(az=0.7, el=1.2, toa=1.7e-3, doppler=2.1e4, g=1e-8 * np.exp(0.4j)):
    return make_link(g, az, el, toa, doppler, None)


def test_link_gain_includes_pattern():
    link = _link()
    assert link.gain == pytest.approx(link.alpha * radiation_gain(1.2), rel=1e-12)
    # Negative elevation (Global frame, array facing -Z) uses the magnitude.
    assert _link(el=-1.2).gain == pytest.approx(link.gain, rel=1e-15)


def test_assemble_channel(small_ofdm):
    still = _link(toa=0.0, doppler=0.0)
    np.testing.assert_allclose(assemble_channel(still, 3, 7, small_ofdm), still.gain * still.steering(small_ofdm))
    link = _link()
    h0 = assemble_channel(link, 4, 9, small_ofdm)
    h1 = assemble_channel(link, 5, 9, small_ofdm)
    np.testing.assert_allclose(h1, h0 * np.exp(2j * np.pi * small_ofdm.symbol_duration * link.doppler), rtol=1e-9)
    assert np.linalg.norm(h0) == pytest.approx(abs(link.gain) * np.sqrt(small_ofdm.num_antennas), rel=1e-12)


def test_vdb_precoder(small_ofdm):
    F = build_positioning_precoder(PrecoderMode.VDB, None, 0.1, small_ofdm)
    assert F.shape == (16, 1)
    np.testing.assert_allclose(F[:, 0], F[0, 0])
    assert np.linalg.norm(F.sum(axis=1)) ** 2 == pytest.approx(0.1)


def test_pab_precoder(small_ofdm):
    az, el = 0.3, 1.0
    F = build_positioning_precoder("PAB", [(az, el)], 0.1, small_ofdm)
    a = steering_vector(az, el, 4, 4)
    zeta = np.sqrt(0.1) / np.sqrt(16)
    assert abs(a @ F[:, 0]) ** 2 == pytest.approx(zeta**2 * 16**2, rel=1e-12)
    F2 = build_positioning_precoder("PAB", [(0.3, 1.0), (-1.0, 0.8), (2.0, 1.3)], 0.1, small_ofdm)
    assert np.linalg.norm(F2 @ np.ones(3)) ** 2 == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(ValueError):
        build_positioning_precoder("PAB", [], 0.1, small_ofdm)


def test_pilots():
    p = pilot_symbols("AllOnes", 2, 3, 4)
    assert p.shape == (3, 4, 2) and np.all(p == 1)
    q = pilot_symbols("RandomQPSK", 2, 3, 4, np.random.default_rng(0))
    np.testing.assert_allclose(np.abs(q), 1.0)
    with pytest.raises(ValueError):
        pilot_symbols("RandomQPSK", 2, 3, 4)
