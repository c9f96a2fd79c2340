import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vapormem import atoms, memory
from vapormem.errors import ArgumentError, DomainError

CTRL = memory.ControlPulseTrain(2.0)
SMALL = memory.MemoryOptions(nz=32, ntau=128)


def test_anti_stokes_coupling_relation():
    cell = atoms.standard_cell(343.15)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), CTRL)
    assert cc.c_a == pytest.approx(cc.c_s * CTRL.detuning / (CTRL.detuning + CTRL.hyperfine_splitting))


def test_coupling_scales():
    cell = atoms.standard_cell(343.15)
    pops = atoms.GroundPopulations(1.0, 0.0)
    a = memory.coupling_constants(cell, pops, CTRL, d=1000.0)
    b = memory.coupling_constants(cell, pops, CTRL.with_rabi(4.0), d=4000.0)
    assert b.c_s == pytest.approx(4 * a.c_s)


def test_stark_shift_quadratic():
    assert memory.ac_stark_shift(4.0, 15.2) == pytest.approx(4 * memory.ac_stark_shift(2.0, 15.2))
    assert memory.ac_stark_shift(4.0, 30.4) == pytest.approx(0.5 * memory.ac_stark_shift(4.0, 15.2))


def test_control_validation():
    with pytest.raises(DomainError):
        memory.ControlPulseTrain(1.0, detuning=-memory.HYPERFINE_GHZ)
    with pytest.raises(ArgumentError):
        memory.ControlPulseTrain(-1.0)
    with pytest.raises(ArgumentError):
        memory.ControlPulseTrain(1.0, bandwidth=0.0)
    with pytest.raises(ArgumentError):
        memory.ControlPulseTrain(1.0, pulse_duration=10.0, readout_delay=5.0)
    with pytest.raises(ArgumentError):
        memory.MemoryOptions(nz=8)


def test_zero_coupling_transmits_everything():
    r = memory.solve_memory(memory.CouplingConstants(0.0, 0.0), CTRL, None, SMALL)
    assert r.efficiency == pytest.approx(0.0, abs=1e-14)
    assert r.readin_efficiency == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("c", [0.3, 0.7, 1.0])
def test_time_reversal_beam_splitter(c):
    # pure beam-splitter memory: retrieval mirrors storage, eta = readin^2
    cc = memory.CouplingConstants(c * CTRL.bandwidth, 0.0)
    opts = memory.MemoryOptions(fwm_on=False, stark_on=False, dispersion_on=False, nz=64, ntau=256)
    r = memory.solve_memory(cc, CTRL, None, opts)
    assert r.efficiency == pytest.approx(r.readin_efficiency**2, rel=5e-3)


def test_energy_bookkeeping_without_fwm():
    cell = atoms.standard_cell(343.15)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), CTRL.with_rabi(4.0))
    r = memory.solve_memory(cc, CTRL.with_rabi(4.0), None, memory.MemoryOptions(fwm_on=False))
    dt = r.tau[1] - r.tau[0]
    e_in = np.sum(np.abs(r.signal_in) ** 2) * dt
    e_tr = np.sum(np.abs(r.transmitted_waveform) ** 2) * dt
    assert e_tr / e_in + r.readin_efficiency == pytest.approx(1.0, abs=1e-10)


def test_spinwave_decay_reduces_efficiency():
    cell = atoms.standard_cell(343.15)
    ctrl = CTRL.with_rabi(3.0)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), ctrl)
    a = memory.solve_memory(cc, ctrl, None, memory.MemoryOptions(fwm_on=False)).efficiency
    gamma = 0.05
    b = memory.solve_memory(cc, ctrl, None, memory.MemoryOptions(fwm_on=False, spinwave_decay=gamma)).efficiency
    assert b == pytest.approx(a * np.exp(-2 * gamma * ctrl.readout_delay), rel=1e-6)


def test_io_map_symplectic_small_grid():
    cell = atoms.standard_cell(343.15)
    ctrl = CTRL.with_rabi(5.0)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), ctrl)
    opts = memory.MemoryOptions(nz=16, ntau=64, compute_io_map=True)
    r = memory.solve_memory(cc, ctrl, None, opts)
    assert memory.symplectic_defect(r.io_map, 64, 16) < 1e-8


def test_fwm_adds_gain():
    cell = atoms.standard_cell(365.15)
    ctrl = CTRL.with_rabi(10.0)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), ctrl)
    on = memory.solve_memory(cc, ctrl, None, SMALL).efficiency
    off = memory.solve_memory(cc, ctrl, None, memory.MemoryOptions(fwm_on=False, nz=32, ntau=128)).efficiency
    assert off <= 1.0 < on


def test_convergence_report():
    cell = atoms.standard_cell(343.15)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), CTRL)
    r = memory.solve_memory(cc, CTRL, None, memory.MemoryOptions(check_convergence=True))
    assert r.converged and r.grid_report["rel_change"] < 5e-3


def test_efficiency_helpers():
    tau = np.linspace(0, 10, 1001)
    pulse = np.exp(-((tau - 2) ** 2))
    trace = pulse + 0.5 * np.exp(-((tau - 7) ** 2))
    assert memory.windowed_efficiency(trace, tau, (0, 4.5), (4.5, 10)) == pytest.approx(0.25, rel=1e-4)
    assert memory.memory_efficiency(0.5 * pulse, pulse) == pytest.approx(0.25)
    with pytest.raises(ArgumentError):
        memory.windowed_efficiency(trace, tau, (0, 6), (5, 10))
    with pytest.raises(ArgumentError):
        memory.memory_efficiency(pulse, np.zeros(3))


def test_stark_peak_location():
    om = np.linspace(0, 8, 33)
    eta = np.exp(-((om - 4.1) ** 2))
    assert memory.stark_peak_location(om, eta) == pytest.approx(4.1, abs=0.02)
    assert np.isnan(memory.stark_peak_location(om, om))


def test_lifetime_model():
    D = 18.24
    assert memory.diffusion_lifetime(165, D) / memory.diffusion_lifetime(110, D) == pytest.approx(2.25)
    c = memory.lifetime_curve(0.3, 140.0, D, np.linspace(0, 4000, 9))
    assert c.tau_fit == pytest.approx(c.tau_model, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(om=st.floats(0.2, 6.0), T=st.floats(320.0, 360.0), D=st.floats(8.0, 60.0))
def test_no_fwm_never_exceeds_unity(om, T, D):
    cell = atoms.standard_cell(T)
    ctrl = memory.ControlPulseTrain(om, detuning=D)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), ctrl)
    r = memory.solve_memory(cc, ctrl, None, memory.MemoryOptions(fwm_on=False, nz=32, ntau=128))
    assert 0.0 <= r.efficiency <= 1 + 1e-9
    assert r.readin_efficiency <= 1 + 1e-9


@pytest.mark.parametrize("omega", [4.0, 10.0])
def test_two_mode_squeezing_bookkeeping(omega):
    # S+S + B+B - A+A is conserved by beam-splitter plus two-mode-squeezing couplings
    cell = atoms.standard_cell(365.15)
    ctrl = CTRL.with_rabi(omega)
    cc = memory.coupling_constants(cell, atoms.GroundPopulations(1.0, 0.0), ctrl)
    r = memory.solve_memory(cc, ctrl, None, memory.MemoryOptions())
    dt = r.tau[1] - r.tau[0]
    e_tr = np.sum(np.abs(r.transmitted_waveform) ** 2) * dt
    total = e_tr + r.efficiency + r.residual_spinwave - r.anti_stokes_energy
    assert total == pytest.approx(1.0, rel=1e-6)
    assert r.efficiency > 0.3


def test_higher_depth_dominates_at_small_omega():
    ctrl = memory.ControlPulseTrain(0.5)
    opts = memory.MemoryOptions(fwm_on=False)
    pops = atoms.GroundPopulations(1.0, 0.0)
    cell = atoms.standard_cell(343.15)
    d = atoms.resonant_optical_depth(cell, pops)
    lo = memory.solve_memory(memory.coupling_constants(cell, pops, ctrl, d=d), ctrl, None, opts).efficiency
    hi = memory.solve_memory(memory.coupling_constants(cell, pops, ctrl, d=2 * d), ctrl, None, opts).efficiency
    assert hi > lo
