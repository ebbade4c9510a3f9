import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from vapormem.errors import ConfigurationError, DomainError
from vapormem.model import (AMU_RB87, EnsembleConfig, LevelScheme, PulseSpec, Shape,
                            default_experiment_config, derive_doppler_sigma,
                            doppler_absorption_factor, fwhm_from_bandwidth, mhz,
                            pulse_envelope, to_mhz, twophoton_doppler_fraction)


def test_mhz_roundtrip():
    assert mhz(1000.0) == pytest.approx(2 * math.pi)
    assert to_mhz(mhz(123.4)) == pytest.approx(123.4)


def test_doppler_sigma_against_arbitrary_precision():
    mpmath.mp.dps = 40
    kb = mpmath.mpf("1.380649e-23")
    amu = mpmath.mpf("1.66053906660e-27")
    t = mpmath.mpf(50) + mpmath.mpf("273.15")
    m = mpmath.mpf("86.909") * amu
    k = 2 * mpmath.pi / mpmath.mpf("795e-9")
    expected = float(k * mpmath.sqrt(kb * t / m) * mpmath.mpf("1e-9"))
    got = derive_doppler_sigma(50, 86.909, 795)
    assert got == pytest.approx(expected, rel=1e-9)
    assert to_mhz(got) == pytest.approx(221, abs=1)


def test_doppler_sigma_limits_and_scaling():
    assert derive_doppler_sigma(-273.15 + 1e-9, 86.909, 795) < 1e-5
    base = derive_doppler_sigma(50, 86.909, 795)
    assert derive_doppler_sigma(50, 4 * 86.909, 795) == pytest.approx(base / 2, rel=1e-12)
    with pytest.raises(DomainError):
        derive_doppler_sigma(50, 0, 795)
    with pytest.raises(DomainError):
        derive_doppler_sigma(50, 86.909, -1)


@given(st.floats(1, 1000), st.floats(0.25, 4))
def test_doppler_sigma_scaling_property(kelvin, factor):
    t_c = kelvin - 273.15
    a = derive_doppler_sigma(t_c, AMU_RB87, 795)
    b = derive_doppler_sigma(kelvin * factor - 273.15, AMU_RB87, 795)
    assert b == pytest.approx(a * math.sqrt(factor), rel=1e-10)
    c = derive_doppler_sigma(t_c, AMU_RB87, 795 * factor)
    assert c == pytest.approx(a / factor, rel=1e-10)


def test_twophoton_doppler_fraction_small():
    f = twophoton_doppler_fraction()
    assert 0 < f < 5e-3
    assert twophoton_doppler_fraction(0.0) == pytest.approx(6834.682611e6 / (299792458 / 794.979e-9),
                                                            rel=1e-6)


def test_gaussian_envelope():
    p = PulseSpec(Shape.GAUSSIAN, 1.0, 3.77, 0.0)
    assert pulse_envelope(p, 0.0) == 1.0
    assert pulse_envelope(p, 100.0) < 1e-300
    # intensity at +-fwhm/2 is half the peak
    assert pulse_envelope(p, 3.77 / 2) ** 2 == pytest.approx(0.5)


@pytest.mark.parametrize("shape", list(Shape))
def test_intensity_fwhm(shape):
    p = PulseSpec(shape, 2.0, 1.3, 0.4)
    assert (p.envelope(0.4 + 0.65) / 2.0) ** 2 == pytest.approx(0.5)
    assert (p.envelope(0.4 - 0.65) / 2.0) ** 2 == pytest.approx(0.5)


@pytest.mark.parametrize("shape", list(Shape))
def test_photon_normalisation(shape):
    p = PulseSpec(shape, 1.0, 0.8, 1.0)
    val, _ = quad(lambda t: p.photon_amplitude(t) ** 2, -60, 60, points=[1.0], limit=400,
                  epsabs=1e-13, epsrel=1e-12)
    assert val == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("shape", list(Shape))
def test_half_extent_holds_energy(shape):
    p = PulseSpec(shape, 1.0, 0.6, 0.0)
    h = p.half_extent()
    assert h >= 4 * p.fwhm
    inside, _ = quad(lambda t: p.photon_amplitude(t) ** 2, -h, h, points=[0.0], limit=400)
    assert 1 - inside < 1.1e-6


def test_fwhm_from_bandwidth():
    # intensity exp(-2 pi dnu |t|) falls to one half at |t| = ln2 / (2 pi dnu)
    assert fwhm_from_bandwidth(370.0) == pytest.approx(math.log(2) / (math.pi * 0.370))
    p = PulseSpec(Shape.DOUBLE_EXPONENTIAL, 1.0, fwhm_from_bandwidth(370.0))
    t = 1.7
    assert p.profile(t) ** 2 == pytest.approx(math.exp(-2 * math.pi * 0.370 * t))


def test_defaults():
    scheme, ens, signal, control = default_experiment_config()
    assert to_mhz(scheme.delta_signal) == pytest.approx(-700)
    assert to_mhz(scheme.gamma_rad) == pytest.approx(5.75)
    assert to_mhz(scheme.gamma_coll) == pytest.approx(50)
    assert to_mhz(scheme.hyperfine_splitting) == pytest.approx(814.5)
    assert ens.memory_lifetime == 680
    assert ens.optical_depth == 25
    assert (ens.signal_waist, ens.control_waist) == (240, 260)
    assert to_mhz(control.peak_amplitude) == pytest.approx(400)
    assert control.fwhm == 3.77
    assert signal.shape is Shape.DOUBLE_EXPONENTIAL
    c1, c2 = scheme.coupling_signal
    b1, b2 = scheme.coupling_control
    assert c1 * c1 + c2 * c2 == pytest.approx(1)
    assert c1 * b1 == pytest.approx(-c2 * b2)


def test_scheme_validation():
    with pytest.raises(ConfigurationError):
        LevelScheme(delta_signal=0, gamma_rad=0)
    with pytest.raises(ConfigurationError):
        LevelScheme(delta_signal=0, coupling_signal=(1, 1))
    with pytest.raises(ConfigurationError):
        LevelScheme(delta_signal=0, coupling_signal=(0.6, 0.8), coupling_control=(1, 1))
    LevelScheme(delta_signal=0, coupling_signal=(1, 0))  # single pathway allowed
    with pytest.raises(ConfigurationError):
        EnsembleConfig(n_z=4)
    with pytest.raises(ConfigurationError):
        EnsembleConfig(twophoton_doppler_fraction=2)
    with pytest.raises(ConfigurationError):
        PulseSpec(fwhm=0)


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(0, 3), st.floats(0.01, 1), st.floats(0, 2))
def test_rates_finite(delta, tp, gcoll, gspin):
    s = LevelScheme(delta_signal=delta, delta_twophoton=tp, gamma_coll=gcoll, gamma_spin=gspin)
    assert s.gamma > 0 and math.isfinite(s.gamma)
    assert all(math.isfinite(d) for d in s.excited_detunings)


def test_doppler_absorption_factor():
    assert doppler_absorption_factor(0.3, 0.0) == 1.0
    g, s = 0.35, 1.39
    ref, _ = quad(lambda x: math.exp(-x * x / (2 * s * s)) / math.sqrt(2 * math.pi) / s
                  * g * g / (g * g + x * x), -12 * s, 12 * s, points=[0.0], limit=200)
    assert doppler_absorption_factor(g, s) == pytest.approx(ref, rel=1e-9)
    assert EnsembleConfig(doppler_sigma=s).effective_optical_depth(g) == pytest.approx(25 / ref)
    assert EnsembleConfig(doppler_sigma=s, od_includes_doppler=False).effective_optical_depth(g) == 25
