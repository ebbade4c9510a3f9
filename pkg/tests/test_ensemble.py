from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.integrate import quad

from vapormem.ensemble import (AlignmentKernel, build_rings, build_velocity_grid,
                               combine_rings, ensemble_run, rethermalize)
from vapormem.errors import DomainError, NumericalInstabilityError
from vapormem.model import EnsembleConfig, LevelScheme, PulseSpec, Shape, mhz
from vapormem.solver import run_batch, run_protocol


def test_single_class_grid():
    g = build_velocity_grid(1.3, 1)
    assert g.shifts.tolist() == [0.0] and g.weights.tolist() == [1.0]
    with pytest.raises(DomainError):
        build_velocity_grid(1.0, 0)


def test_gauss_hermite_grid():
    s = 1.39
    g = build_velocity_grid(s, 16)
    assert g.weights.sum() == pytest.approx(1, abs=1e-12)
    assert (g.weights > 0).all()
    assert np.array_equal(g.shifts, -g.shifts[::-1])
    assert g.weights @ g.shifts ** 2 == pytest.approx(s * s, rel=1e-10)


def voigt_reference(delta, gamma, sigma):
    dens = lambda x: np.exp(-x * x / (2 * sigma * sigma)) / np.sqrt(2 * np.pi) / sigma
    kw = dict(points=[-delta], limit=400, epsabs=0, epsrel=1e-12)
    re = quad(lambda x: dens(x) * gamma / (gamma ** 2 + (delta + x) ** 2),
              -12 * sigma, 12 * sigma, **kw)[0]
    im = quad(lambda x: dens(x) * -(delta + x) / (gamma ** 2 + (delta + x) ** 2),
              -12 * sigma, 12 * sigma, **kw)[0]
    return re + 1j * im


def test_voigt_far_from_line_centre():
    sigma, gamma = mhz(221), mhz(57.5)
    g = build_velocity_grid(sigma, 16)
    delta = mhz(-700 - 814.5)  # detuning of the second excited state
    chi = np.sum(g.weights / (gamma + 1j * (delta + g.shifts)))
    ref = voigt_reference(delta, gamma, sigma)
    assert abs(chi.real / ref.real - 1) < 1e-3
    assert abs(chi / ref - 1) < 1e-3


def test_voigt_at_operating_detuning_is_percent_level():
    # 16 nodes resolve the dispersive response at -700 MHz to ~0.5 %; the
    # absorptive part (a ~3 % error) is the weak spot of the quadrature
    sigma, gamma = mhz(221), mhz(57.5)
    g = build_velocity_grid(sigma, 16)
    delta = mhz(-700)
    chi = np.sum(g.weights / (gamma + 1j * (delta + g.shifts)))
    ref = voigt_reference(delta, gamma, sigma)
    assert abs(chi / ref - 1) < 1e-2
    assert abs(chi.imag / ref.imag - 1) < 1e-2


def test_rings_examples():
    r = build_rings(240, 260, 1)
    assert r.signal_energy_weights.tolist() == [1.0]
    assert r.control_amplitude_factors.tolist() == [1.0]
    r = build_rings(240, 260, 8)
    assert r.signal_energy_weights.sum() == pytest.approx(1, abs=1e-12)
    assert np.all(np.diff(r.control_amplitude_factors) < 0)
    assert r.control_amplitude_factors.min() < r.control_amplitude_factors.max() <= 1
    wide = build_rings(240, 1e9, 8)
    assert np.allclose(wide.control_amplitude_factors, 1, atol=1e-9)
    with pytest.raises(DomainError):
        build_rings(0, 260, 4)


def test_ring_radii_enclose_energy_quantiles():
    r = build_rings(240, 260, 4)
    frac = 1 - np.exp(-2 * r.edges[:-1] ** 2 / 240 ** 2)
    assert np.allclose(frac, [0, 0.25, 0.5, 0.75])
    mid = 1 - np.exp(-2 * r.mid_radii ** 2 / 240 ** 2)
    assert np.allclose(mid, [0.125, 0.375, 0.625, 0.875])


def test_rethermalize_examples():
    s = np.array([1 + 1j, 2.0, -1j])
    same = np.tile(s, (4, 1))
    assert np.allclose(rethermalize(same, np.full(4, 0.25)), same, atol=1e-15)
    one = np.zeros((4, 3), complex)
    one[2] = s
    out = rethermalize(one, np.full(4, 0.25))
    assert np.allclose(out, s / 4)
    as_map = rethermalize({"a": s, "b": 0 * s}, np.array([0.5, 0.5]))
    assert set(as_map) == {"a", "b"} and np.allclose(as_map["b"], s / 2)
    with pytest.raises(DomainError):
        rethermalize({"a": s, "b": s[:2]}, np.array([0.5, 0.5]))
    with pytest.raises(DomainError):
        rethermalize(same, np.ones(3) / 3)


def test_rethermalize_conservation_randomised():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        n_v, n_z = rng.integers(1, 20), rng.integers(1, 64)
        w = rng.dirichlet(np.ones(n_v))
        s = rng.normal(size=(n_v, n_z)) + 1j * rng.normal(size=(n_v, n_z))
        before = w @ s
        after = w @ rethermalize(s, w)
        worst = max(worst, np.abs(after - before).max() / max(np.abs(before).max(), 1e-300))
    assert worst < 1e-14


@settings(max_examples=100)
@given(hnp.arrays(np.complex128, st.tuples(st.integers(1, 12), st.integers(1, 20)),
                  elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False,
                                              allow_infinity=False)),
       st.integers(0, 2 ** 31))
def test_rethermalize_is_contractive(spin, seed):
    w = np.random.default_rng(seed).dirichlet(np.ones(spin.shape[0]))
    out = rethermalize(spin, w)
    before = w @ (np.abs(spin) ** 2)
    after = w @ (np.abs(out) ** 2)
    assert np.all(after <= before * (1 + 1e-12) + 1e-12)


def case(n_classes=4, n_rings=2, **kw):
    scheme = LevelScheme(delta_signal=mhz(-700), delta_twophoton=mhz(-130), gamma_coll=mhz(50))
    cfg = EnsembleConfig(doppler_sigma=mhz(221), n_velocity_classes=n_classes, n_rings=n_rings,
                         n_z=16, dt=0.02, twophoton_doppler_fraction=3e-3, **kw)
    signal = PulseSpec(Shape.DOUBLE_EXPONENTIAL, 1.0, 0.6, 0.0)
    control = PulseSpec(Shape.GAUSSIAN, mhz(400), 3.77, -0.3)
    return scheme, cfg, signal, control


def test_degenerate_ensemble_is_bare_run():
    scheme, cfg, signal, control = case(1, 1)
    a = ensemble_run(scheme, cfg, signal, control, control, 160.0)
    b = run_protocol(scheme, cfg, signal, control, control, 160.0)
    assert a.eta_internal == b.eta_internal and a.eta_storage == b.eta_storage
    assert np.array_equal(a.retrieval_trace, b.retrieval_trace)
    assert np.array_equal(a.leakage_trace, b.leakage_trace)
    assert np.array_equal(a.spin_profile, b.spin_profile)


def test_ring_average_weights():
    scheme, cfg, signal, control = case(3, 4)
    r = ensemble_run(scheme, cfg, signal, control, control, 0.0)
    assert r.eta_internal == pytest.approx(np.mean(r.meta["rings"]), rel=1e-12)


def test_permutation_invariance():
    scheme, cfg, signal, control = case(5, 3)
    g = build_velocity_grid(cfg.doppler_sigma, 5)
    rings = build_rings(cfg.signal_waist, cfg.control_waist, 3)
    order = np.array([3, 0, 4, 1, 2])
    a = run_batch(scheme, cfg, signal, control, control, 10.0, g.shifts, g.weights,
                  rings.control_amplitude_factors, rethermalize)
    b = run_batch(scheme, cfg, signal, control, control, 10.0, g.shifts[order],
                  g.weights[order], rings.control_amplitude_factors[::-1], rethermalize)[::-1]
    for x, y in zip(a, b):
        assert x.eta_internal == pytest.approx(y.eta_internal, rel=1e-12)
    w = rings.signal_energy_weights
    assert combine_rings(a, w).eta_internal == pytest.approx(combine_rings(b[::-1][::-1], w).eta_internal,
                                                             rel=1e-12)


def test_alignment_kernel_matches_forward_runs():
    scheme, cfg, signal, control = case(4, 2)
    k = AlignmentKernel(scheme, cfg, signal, control, control.shifted(0.0), 160.0, max_offset=4.0)
    for off in (-1.0, 0.3):
        fwd = ensemble_run(scheme, cfg, signal.shifted(control.center - off), control,
                           control.shifted(0.0), 160.0, readin=k.readin)
        assert k.eta(off) == pytest.approx(fwd.eta_internal, rel=1e-8)
    with pytest.raises(DomainError):
        k.eta(5.0)


def test_doppler_reduces_efficiency():
    scheme, cfg, signal, control = case(8, 1)
    frozen = ensemble_run(scheme, replace(cfg, n_velocity_classes=1), signal, control, control,
                          0.0)
    moving = ensemble_run(scheme, cfg, signal, control, control, 0.0)
    assert moving.eta_internal < frozen.eta_internal


def test_instability_is_annotated():
    scheme, cfg, signal, control = case(2, 2, )
    wild = control.scaled(1e4)
    with pytest.raises(NumericalInstabilityError) as info:
        ensemble_run(scheme, replace(cfg, dt=0.05), signal, wild, wild, 0.0)
    assert "rings" in str(info.value) and "classes" in str(info.value)
    assert info.value.stage == "read-in"
