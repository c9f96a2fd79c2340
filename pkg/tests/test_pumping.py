import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vapormem import atoms, pumping
from vapormem.errors import ArgumentError

R_CAL = 9.7177e-4  # ns^-1, reference calibration


@pytest.fixture(scope="module")
def ne_hot():
    return pumping.pumping_cell(363.15, atoms.buffer_gas("Ne", 20.0), "D2")


def test_quench_rate_n2_d1():
    line = atoms.optical_line("D1")
    g = pumping.quenching_rate(atoms.buffer_gas("N2", 10.0), 363.15, line)
    assert g == pytest.approx(0.1181, rel=2e-3)
    assert pumping.quench_branching(line, g) == pytest.approx(0.805, abs=2e-3)


def test_neon_does_not_quench():
    line = atoms.optical_line("D1")
    assert pumping.quenching_rate(atoms.buffer_gas("Ne", 20.0), 363.15, line) == 0.0
    assert pumping.quench_branching(line, 0.0) == 0.0
    assert pumping.quench_branching(line, np.inf) == 1.0


def test_escape_identity():
    r = pumping.TrappingModelResult.from_multiplicity(12.0, 0.0, "Analytic")
    assert r.multiplicity == pytest.approx((1 - r.escape_probability) / r.escape_probability)


def test_no_vapor_no_trapping(ne_hot):
    r = pumping.multiplicity_analytic(ne_hot, atoms.GroundPopulations(1.0, 0.0), 0.0, density=0.0)
    assert r.multiplicity == 0.0 and r.escape_probability == 1.0


def test_multiplicity_grows_with_density(ne_hot):
    pops = atoms.GroundPopulations(1.0, 0.0)
    n = atoms.vapor_number_density(363.15)
    m = [pumping.multiplicity_analytic(ne_hot, pops, 0.0, density=f * n).multiplicity for f in (0.1, 0.3, 1.0)]
    assert m[0] < m[1] < m[2]


def test_quenching_suppresses_multiplicity(ne_hot):
    pops = atoms.GroundPopulations(1.0, 0.0)
    m0 = pumping.multiplicity_analytic(ne_hot, pops, 0.0).multiplicity
    m1 = pumping.multiplicity_analytic(ne_hot, pops, 0.8).multiplicity
    assert m1 < 5 < m0


def test_mc_worker_count_independent(ne_hot):
    pops = atoms.GroundPopulations(1.0, 0.0)
    a = pumping.multiplicity_monte_carlo(ne_hot, pops, 0.0, 3000, seed=5, density=3e17, chunk=1000, workers=1)
    b = pumping.multiplicity_monte_carlo(ne_hot, pops, 0.0, 3000, seed=5, density=3e17, chunk=1000, workers=3)
    assert a.multiplicity == b.multiplicity and a.mc_stderr == b.mc_stderr


def test_mc_rejects_small_runs(ne_hot):
    with pytest.raises(ArgumentError):
        pumping.multiplicity_monte_carlo(ne_hot, atoms.GroundPopulations(1.0, 0.0), 0.0, 100, seed=0)


def test_mc_agrees_with_kernel_at_low_depth(ne_hot):
    pops = atoms.GroundPopulations(1.0, 0.0)
    an = pumping.multiplicity_analytic(ne_hot, pops, 0.0, density=2e17).multiplicity
    mc = pumping.multiplicity_monte_carlo(ne_hot, pops, 0.0, 4000, seed=2, density=2e17)
    assert abs(mc.multiplicity - an) < max(4 * mc.mc_stderr, 0.1 * an)


def test_no_pump_gives_thermal_populations():
    cell = pumping.pumping_cell(343.15, atoms.buffer_gas("N2", 10.0), "D1")
    trap = pumping.TrappingModelResult.from_multiplicity(0.0, 0.0, "Analytic")
    P = pumping.steady_state_polarization(cell, pumping.PumpConfig("D1", 0.0, 1e-6), trap, 0.5)
    assert P == pytest.approx(9 / 16)
    P = pumping.steady_state_polarization(cell, pumping.PumpConfig("D1", 0.0, 1e-6, thermal_weights="equal"),
                                          trap, 0.5)
    assert P == pytest.approx(0.5)


def test_pump_config_validation():
    with pytest.raises(ArgumentError):
        pumping.PumpConfig("D1", -1.0)
    with pytest.raises(ArgumentError):
        pumping.PumpConfig("D1", 1e-3, branching_to_target=1.5)


def test_curve_rejects_bad_grid():
    with pytest.raises(ArgumentError):
        pumping.polarization_curve([350.0, 340.0], atoms.buffer_gas("N2", 10.0), "D1",
                                   pumping.PumpConfig("D1", R_CAL))


def test_trapping_degrades_polarization():
    T = [333.15, 363.15]
    pump = pumping.PumpConfig("D1", R_CAL)
    ne = pumping.polarization_curve(T, atoms.buffer_gas("Ne", 20.0), "D1", pump)
    assert ne.polarization[1] < ne.polarization[0]
    assert np.all(ne.multiplicity[1] > ne.multiplicity[0])


@settings(max_examples=25, deadline=None)
@given(R=st.floats(1e-6, 1e-1), w=st.floats(1e-8, 1e-3), M=st.floats(0.0, 500.0), q=st.floats(0.0, 1.0),
       b=st.floats(0.05, 0.95))
def test_steady_state_is_physical(R, w, M, q, b):
    cell = pumping.pumping_cell(343.15, atoms.buffer_gas("N2", 10.0), "D1")
    trap = pumping.TrappingModelResult.from_multiplicity(M, q, "Analytic")
    n = pumping.steady_state_populations(cell, pumping.PumpConfig("D1", R, w, b), trap, q)
    assert sum(n) == pytest.approx(1.0)
    assert all(-1e-12 <= x <= 1 + 1e-12 for x in n)


def test_monte_carlo_fixed_point_converges():
    # a seeded MC map is piecewise constant; the solver must not cycle
    cell = pumping.pumping_cell(360.0, atoms.buffer_gas("Ne", 20.0), "D2")
    pump = pumping.PumpConfig("D2", R_CAL)
    P_mc, trap = pumping.self_consistent_polarization(cell, pump, 0.0, method="montecarlo", n_photons=2000, seed=11)
    P_an, _ = pumping.self_consistent_polarization(cell, pump, 0.0)
    assert trap.method == "MonteCarlo"
    assert P_mc == pytest.approx(P_an, abs=5e-3)
