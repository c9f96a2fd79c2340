import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from vapormem import atoms
from vapormem.errors import ArgumentError, DomainError


def convolution_voigt(nu, wg, wl):
    """Direct numerical Gaussian x Lorentzian convolution."""
    s = wg * atoms.FWHM_TO_SIGMA
    g = 0.5 * wl

    def f(x):
        return np.exp(-0.5 * (x / s) ** 2) / (s * np.sqrt(2 * np.pi)) * (g / np.pi) / ((nu - x) ** 2 + g**2)

    # split at both peaks so quad resolves narrow kernels
    edges = [-np.inf] + sorted({0.0, nu}) + [np.inf]
    return sum(integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-12, limit=500)[0]
               for lo, hi in zip(edges[:-1], edges[1:]))


@pytest.mark.parametrize("ratio", [1e-2, 1e-1, 1.0, 10.0, 1e2])
@pytest.mark.parametrize("nu", [0.0, 0.3, 2.0])
def test_voigt_matches_convolution(ratio, nu):
    wg = 0.4
    wl = wg * ratio
    ref = convolution_voigt(nu, wg, wl)
    assert atoms.voigt(nu, wg, wl) == pytest.approx(ref, rel=1e-6)


def test_voigt_unit_area():
    nu = np.linspace(-2000, 2000, 400001)
    assert np.trapezoid(atoms.voigt(nu, 0.4, 0.01), nu) == pytest.approx(1.0, abs=1e-5)


def test_vapor_density_golden():
    # value of the shipped correlation at 70 C, evaluated by hand once
    assert atoms.vapor_number_density(343.15) == pytest.approx(1.9596438923841605e18, rel=1e-12)


def test_vapor_density_fourfold_between_70_and_90C():
    r = atoms.vapor_number_density(363.15) / atoms.vapor_number_density(343.15)
    assert 3.8 < r < 4.2


def test_vapor_density_domain():
    with pytest.raises(DomainError):
        atoms.vapor_number_density(200.0)
    with pytest.raises(DomainError):
        atoms.vapor_number_density(600.0)


def test_doppler_width():
    line = atoms.optical_line("D2")
    assert atoms.doppler_fwhm(line, 343.15) == pytest.approx(0.4047, abs=2e-4)
    # sqrt(T) scaling
    r = atoms.doppler_fwhm(line, 4 * 343.15 - 1000) / atoms.doppler_fwhm(line, 343.15)
    assert r == pytest.approx(np.sqrt((4 * 343.15 - 1000) / 343.15))


def test_natural_linewidth_from_lifetime():
    line = atoms.optical_line("D2")
    assert line.natural_linewidth == pytest.approx(1.0 / (2 * np.pi * line.excited_lifetime), rel=1e-12)


def test_buffer_gas_table():
    n2 = atoms.buffer_gas("N2", 10.0)
    ne = atoms.buffer_gas("Ne", 20.0)
    assert atoms.pressure_broadened_fwhm(n2) == pytest.approx(191.8)
    assert atoms.pressure_broadened_fwhm(ne) == pytest.approx(196.2)
    with pytest.raises(ArgumentError):
        atoms.buffer_gas("Ar", 10.0)
    with pytest.raises(ArgumentError):
        atoms.buffer_gas("N2", -1.0)


def test_populations_validation():
    with pytest.raises(ArgumentError):
        atoms.GroundPopulations(0.7, 0.7)
    p = atoms.GroundPopulations.thermal()
    assert p.n1_fraction == pytest.approx(9 / 16)


def test_optical_depth_linear_in_density_and_length():
    cell = atoms.standard_cell(343.15)
    pops = atoms.GroundPopulations.from_polarization(0.9)
    nu = np.linspace(-10, 10, 101)
    od = atoms.optical_depth_spectrum(cell, pops, nu)
    od2 = atoms.optical_depth_spectrum(cell, pops, nu, density=2 * atoms.vapor_number_density(343.15))
    np.testing.assert_allclose(od2, 2 * od, rtol=1e-12)
    long_cell = atoms.VaporCell(cell.line, cell.buffer, cell.temperature, 2 * cell.length)
    np.testing.assert_allclose(atoms.optical_depth_spectrum(long_cell, pops, nu), 2 * od, rtol=1e-12)


def test_resonant_depth_exceeds_probe_depth():
    cell = atoms.standard_cell(343.15)
    pops = atoms.GroundPopulations(1.0, 0.0)
    d = atoms.resonant_optical_depth(cell, pops)
    assert d == pytest.approx(33988, rel=1e-3)
    assert atoms.probe_optical_depth(cell, pops) < d


def test_pumped_cell_has_single_dip():
    cell = atoms.standard_cell(343.15)
    nu = np.linspace(-9, 10, 2001)
    od = atoms.optical_depth_spectrum(cell, atoms.GroundPopulations(1.0, 0.0), nu)
    assert abs(nu[np.argmax(od)] - cell.line.manifold_position(4)) < 0.02


def test_constants_file_schema(tmp_path):
    bad = tmp_path / "c.yaml"
    bad.write_text("schema_version: 99\n")
    with pytest.raises(ArgumentError):
        atoms.load_constants(str(bad))


@settings(max_examples=40, deadline=None)
@given(T=st.floats(280.0, 450.0), P=st.floats(0.0, 1.0), nu=st.floats(-20.0, 20.0))
def test_transmission_bounded(T, P, nu):
    cell = atoms.standard_cell(T)
    t = atoms.transmission_spectrum(cell, atoms.GroundPopulations.from_polarization(P), [nu])
    assert np.all((t >= 0) & (t <= 1))
