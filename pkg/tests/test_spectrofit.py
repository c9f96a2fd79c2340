import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vapormem import atoms, spectrofit
from vapormem.errors import ArgumentError, NumericalError


def synth(T=343.15, d=3.0, P=0.9, noise=0.0, seed=0, slope=0.0, offset=1.0):
    cell = spectrofit.cell_for_optical_depth(T, d)
    return spectrofit.synthesize_scan(cell, atoms.GroundPopulations.from_polarization(P), slope, offset,
                                      noise, seed)


def test_model_matches_forward_spectrum():
    tr = synth(d=2.5, P=0.8, slope=0.01, offset=0.95)
    model = spectrofit.LineModel.from_metadata(tr.metadata)
    theta = [tr.metadata["d"], 0.8, 343.15, 0.01, 0.95]
    np.testing.assert_allclose(spectrofit.model_transmission(theta, tr.frequency, model), tr.transmission,
                               rtol=1e-9, atol=1e-12)


def test_jacobian_matches_finite_differences():
    tr = synth()
    model = spectrofit.LineModel.from_metadata(tr.metadata)
    theta = np.array([2.0, 0.85, 350.0, 0.02, 0.97])
    _, J = spectrofit.model_transmission(theta, tr.frequency, model, jac=True)
    for k in range(5):
        h = 1e-6 * max(1.0, abs(theta[k]))
        up, dn = theta.copy(), theta.copy()
        up[k] += h
        dn[k] -= h
        fd = (spectrofit.model_transmission(up, tr.frequency, model)
              - spectrofit.model_transmission(dn, tr.frequency, model)) / (2 * h)
        np.testing.assert_allclose(J[:, k], fd, rtol=1e-5, atol=1e-9)


@pytest.mark.parametrize("T,d,P", [(330.0, 1.0, 0.6), (343.15, 3.0, 0.95), (360.0, 6.0, 0.99)])
def test_noiseless_round_trip(T, d, P):
    tr = synth(T, d, P, slope=-0.005, offset=1.02)
    fit = spectrofit.fit_scan(tr, spectrofit.default_guess(tr))
    assert fit.d == pytest.approx(tr.metadata["d"], rel=1e-2)
    assert fit.polarization == pytest.approx(P, abs=2e-3)
    assert fit.temperature == pytest.approx(T, abs=0.5)


def test_noisy_fit_reports_uncertainty():
    tr = synth(noise=0.01, seed=3)
    fit = spectrofit.fit_scan(tr, spectrofit.default_guess(tr))
    assert fit.residual_rms == pytest.approx(0.01, rel=0.15)
    assert np.all(fit.stderr > 0)
    assert abs(fit.polarization - 0.9) < 5 * fit.stderr[1] + 1e-3


def test_trace_io_round_trip(tmp_path):
    tr = synth(noise=0.01, seed=1)
    p = tmp_path / "scan.csv"
    spectrofit.write_trace(p, tr)
    back = spectrofit.read_trace(p)
    np.testing.assert_allclose(back.transmission, tr.transmission, rtol=1e-11)
    assert back.metadata == tr.metadata and back.noise_sigma == tr.noise_sigma
    empty = tmp_path / "empty.csv"
    empty.write_text("# nothing\n")
    with pytest.raises(ArgumentError):
        spectrofit.read_trace(empty)


def test_trace_validation():
    with pytest.raises(ArgumentError):
        spectrofit.SpectrumTrace(np.arange(10.0), np.ones(10), 0.0, {})
    with pytest.raises(ArgumentError):
        synth(noise=-1.0)


def test_polarization_from_ratio():
    assert spectrofit.polarization_from_ratio(9.0, 1.0) == pytest.approx(0.9)
    with pytest.raises(ArgumentError):
        spectrofit.polarization_from_ratio(0.0, 0.0)


def test_frequency_axis_calibration():
    amap = spectrofit.calibrate_frequency_axis(None, [(100, -4.0), (600, 5.0), (350, 0.5)])
    assert amap.slope == pytest.approx(9.0 / 500)
    assert amap(100) == pytest.approx(-4.0)
    with pytest.raises(NumericalError):
        spectrofit.calibrate_frequency_axis(None, [(5, 0.0), (5, 1.0)])
    with pytest.raises(ArgumentError):
        spectrofit.calibrate_frequency_axis(None, [(5, 0.0)])


@settings(max_examples=10, deadline=None)
@given(d=st.floats(0.5, 6.0), P=st.floats(0.55, 0.99), T=st.floats(325.0, 365.0))
def test_round_trip_property(d, P, T):
    tr = synth(T, d, P)
    fit = spectrofit.fit_scan(tr, spectrofit.default_guess(tr), n_restarts=2)
    assert fit.polarization == pytest.approx(P, abs=2e-3)
    assert fit.d == pytest.approx(tr.metadata["d"], rel=1e-2)


def test_fit_invariant_under_transmission_rescaling():
    tr = synth(d=3.0, P=0.9, noise=0.01, seed=9)
    scaled = spectrofit.SpectrumTrace(tr.frequency, 1.7 * tr.transmission, 1.7 * tr.noise_sigma, tr.metadata)
    a = spectrofit.fit_scan(tr, spectrofit.default_guess(tr))
    b = spectrofit.fit_scan(scaled, spectrofit.default_guess(scaled))
    for k in ("d", "polarization", "temperature"):
        assert getattr(b, k) == pytest.approx(getattr(a, k), rel=1e-6)
    assert b.baseline_offset == pytest.approx(1.7 * a.baseline_offset, rel=1e-6)
