"""One-dimensional Raman memory in the adiabatic, linearised limit.

Fields on the grid z in [0, 1] (cell coordinate) and retarded time tau (ns):

    dS/dz    = -i beta S - k_s(tau) B
    dA^+/dz  = +k_a(tau) B
    dB/dtau  = k_s(tau)* S + k_a(tau)* A^+ - 2 pi i dE(tau) B - gamma_B B

k_s and k_a follow the control envelope; the S-B part is a beam splitter and
the A^+-B part two-mode squeezing. The scheme is a collision model: every
(z, tau) grid cell applies the exact exponential of the local 3x3 generator
to (s, a^+, b), with s = S sqrt(h_tau) and b = B sqrt(h_z). Each cell matrix
is pseudo-unitary with respect to J = diag(1, -1, 1), so the discrete
input-output map keeps the symplectic structure to rounding error, and with
k_a = 0 it conserves excitation number exactly.

beta = d gamma / (4 Delta) is the linear dispersion the signal picks up from
the off-resonant |1> -> |2> transition; it enters the four-wave-mixing phase
matching and so shapes the gain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from . import atoms
from .errors import ArgumentError, DomainError, NumericalError

HYPERFINE_GHZ = 9.2

# Dimensionless coupling per pulse is G = COUPLING_SCALE * c / delta. With
# this choice a single strong pulse of pure two-mode squeezing amplifies as
# exp(c_a / delta), i.e. intensity ~ sinh^2(c_a / delta).
COUPLING_SCALE = 0.5

# Frozen by calibrate_memory() at 70 C, Delta = 15.2 GHz, delta = 1.2 GHz:
# peak no-FWM efficiency 0.25 located at Omega = 4 GHz.
DEFAULT_KAPPA_CAL = 0.64978
DEFAULT_STARK_CAL = 0.38110


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class ControlPulseTrain:
    peak_rabi: float  # GHz
    bandwidth: float = 1.2  # GHz, sets the intensity FWHM 1/delta
    detuning: float = 15.2  # GHz
    envelope: str = "gaussian"
    readout_delay: float = None  # ns; default equals pulse_duration
    pulse_duration: float = None  # ns; default is 8 FWHM
    hyperfine_splitting: float = HYPERFINE_GHZ

    def __post_init__(self):
        if self.peak_rabi < 0:
            raise ArgumentError("peak_rabi must be >= 0")
        if not self.bandwidth > 0:
            raise ArgumentError("bandwidth must be > 0")
        if math.isclose(self.detuning, -self.hyperfine_splitting, abs_tol=1e-12):
            raise DomainError("detuning sits on the anti-Stokes pole")
        if self.envelope not in ENVELOPES:
            raise ArgumentError(f"unknown envelope {self.envelope!r}")
        if self.pulse_duration is None:
            object.__setattr__(self, "pulse_duration", 8.0 / self.bandwidth)
        if self.readout_delay is None:
            object.__setattr__(self, "readout_delay", self.pulse_duration)
        if self.readout_delay < self.pulse_duration:
            raise ArgumentError("readout_delay must be >= pulse_duration")

    @property
    def fwhm(self):
        """Intensity FWHM of the control in ns."""
        return 1.0 / self.bandwidth

    @property
    def anti_stokes_detuning(self):
        return self.detuning + self.hyperfine_splitting

    def with_rabi(self, omega):
        return replace(self, peak_rabi=float(omega))


def _gaussian(tau, fwhm):
    return np.exp(-2.0 * np.log(2.0) * tau**2 / fwhm**2)


def _sech(tau, fwhm):
    # amplitude sech(t/T) has intensity FWHM 2 T acosh(sqrt 2)
    T = fwhm / (2.0 * np.arccosh(np.sqrt(2.0)))
    return 1.0 / np.cosh(tau / T)


ENVELOPES = {"gaussian": _gaussian, "sech": _sech}


@dataclass(frozen=True)
class CouplingConstants:
    c_s: float
    c_a: float
    stark_peak: float = 0.0  # GHz
    dispersion: float = 0.0  # rad across the cell

    def __post_init__(self):
        if self.c_s < 0:
            raise ArgumentError("c_s must be >= 0")


@dataclass(frozen=True)
class MemoryOptions:
    fwm_on: bool = True
    stark_on: bool = True
    dispersion_on: bool = True
    spinwave_decay: float = 0.0  # ns^-1, amplitude rate
    nz: int = 64
    ntau: int = 256
    window: float = 4.0  # half-width of the time grid in control FWHMs
    check_convergence: bool = False
    convergence_tol: float = 5e-3
    compute_io_map: bool = False
    record_fields: bool = False

    def __post_init__(self):
        if self.nz < 16 or self.ntau < 16:
            raise ArgumentError("grid sizes must be >= 16")
        if self.spinwave_decay < 0:
            raise ArgumentError("spinwave_decay must be >= 0")


@dataclass
class MemoryFieldGrid:
    z: np.ndarray
    tau: np.ndarray
    S: np.ndarray  # [nz x ntau], value leaving each z slice
    A_dag: np.ndarray
    B: np.ndarray  # [nz x ntau], value after each time step

    @property
    def nz(self):
        return self.S.shape[0]

    @property
    def ntau(self):
        return self.S.shape[1]


@dataclass
class MemoryResult:
    efficiency: float
    readin_efficiency: float
    retrieved_waveform: np.ndarray
    anti_stokes_energy: float
    io_map: np.ndarray = None
    grid_report: dict = field(default_factory=dict)
    tau: np.ndarray = None
    signal_in: np.ndarray = None
    transmitted_waveform: np.ndarray = None
    residual_spinwave: float = 0.0
    fields: MemoryFieldGrid = None

    @property
    def converged(self):
        return bool(self.grid_report.get("converged", True))


# ------------------------------------------------------ coupling constants


def natural_linewidth_d2():
    return atoms.optical_line("D2").natural_linewidth


def ac_stark_shift(omega, delta, stark_cal=DEFAULT_STARK_CAL):
    """Peak light shift of the two-photon resonance, stark_cal * Omega^2 / Delta (GHz)."""
    if delta <= 0:
        raise DomainError("detuning must be positive")
    return stark_cal * omega**2 / delta


def coupling_constants(cell, pops, ctrl, kappa_cal=DEFAULT_KAPPA_CAL, stark_cal=DEFAULT_STARK_CAL, d=None):
    """Signal and anti-Stokes coupling constants for a cell and control pulse.

    c_s = kappa_cal sqrt(d gamma delta) Omega / Delta and c_a = c_s Delta / Delta_a.
    ``d`` overrides the resonant optical depth computed from the cell.
    """
    delta = ctrl.detuning
    delta_a = ctrl.anti_stokes_detuning
    if delta_a == 0:
        raise DomainError("Delta + Delta_hf = 0: anti-Stokes pole")
    if delta <= 0:
        raise DomainError("detuning must be positive (blue of resonance)")
    if d is None:
        d = atoms.resonant_optical_depth(cell, pops)
    gamma = cell.line.natural_linewidth
    c_s = kappa_cal * math.sqrt(d * gamma * ctrl.bandwidth) * ctrl.peak_rabi / delta
    return CouplingConstants(
        c_s=c_s,
        c_a=c_s * delta / delta_a,
        stark_peak=ac_stark_shift(ctrl.peak_rabi, delta, stark_cal),
        dispersion=d * gamma / (4.0 * delta),
    )


# --------------------------------------------------------------- solver


def time_grid(ctrl, ntau, window=4.0):
    half = window * ctrl.fwhm
    edges = np.linspace(-half, half, ntau + 1)
    return 0.5 * (edges[1:] + edges[:-1]), edges[1] - edges[0]


def default_signal(ctrl, tau):
    """Unit-energy signal mode matched to the control envelope."""
    e = ENVELOPES[ctrl.envelope](tau, ctrl.fwhm)
    h = tau[1] - tau[0]
    return (e / np.sqrt(np.sum(e**2) * h)).astype(complex)


def _cell_matrices(ks, ka, beta_dz, stark_h):
    n = ks.size
    G = np.zeros((n, 3, 3), dtype=complex)
    G[:, 0, 0] = -1j * beta_dz
    G[:, 0, 2] = -ks
    G[:, 1, 2] = ka
    G[:, 2, 0] = np.conj(ks)
    G[:, 2, 1] = np.conj(ka)
    G[:, 2, 2] = -1j * stark_h
    return expm(G)


def _sweep(U, s, a, b, record=False):
    """Pass time slices (s, a) through space slices b, cell by cell.

    s, a: [ntau, m]; b: [nz, m]. With ``record`` the field values after
    every cell are also returned as [nz, ntau] arrays (first column only).
    """
    nt, nz = s.shape[0], b.shape[0]
    s, a, b = s.copy(), a.copy(), b.copy()
    rec = [np.zeros((nz, nt), complex) for _ in range(3)] if record else None
    for w in range(nt + nz - 1):
        j = np.arange(max(0, w - nz + 1), min(nt, w + 1))
        k = w - j
        u = U[j]
        vs, va, vb = s[j], a[j], b[k]
        s[j] = u[:, 0, 0, None] * vs + u[:, 0, 1, None] * va + u[:, 0, 2, None] * vb
        a[j] = u[:, 1, 0, None] * vs + u[:, 1, 1, None] * va + u[:, 1, 2, None] * vb
        b[k] = u[:, 2, 0, None] * vs + u[:, 2, 1, None] * va + u[:, 2, 2, None] * vb
        if record:
            rec[0][k, j] = s[j, 0]
            rec[1][k, j] = a[j, 0]
            rec[2][k, j] = b[k, 0]
    return s, a, b, rec


def _check_finite(name, arr):
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = int(np.argwhere(bad)[0][0])
        raise NumericalError(f"non-finite field in {name} at grid step {idx}", {"step": idx, "stage": name})


def _pulse_map(coupling, ctrl, opts, nz, ntau):
    tau, h = time_grid(ctrl, ntau, opts.window)
    dz = 1.0 / nz
    e = ENVELOPES[ctrl.envelope](tau, ctrl.fwhm)
    norm = np.sqrt(np.sum(e**2) * h)
    scale = COUPLING_SCALE / ctrl.bandwidth
    ks = scale * coupling.c_s * e / norm * np.sqrt(h * dz)
    ka = scale * coupling.c_a * e / norm * np.sqrt(h * dz) if opts.fwm_on else np.zeros_like(e)
    beta = coupling.dispersion if opts.dispersion_on else 0.0
    stark = 2 * np.pi * coupling.stark_peak * e**2 * h if opts.stark_on else np.zeros_like(e)
    return tau, h, _cell_matrices(ks.astype(complex), ka.astype(complex), beta * dz, stark)


def _solve_grid(coupling, ctrl, signal_in, opts, nz, ntau):
    tau, h, U = _pulse_map(coupling, ctrl, opts, nz, ntau)
    if signal_in is None:
        sig = default_signal(ctrl, tau)
    elif callable(signal_in):
        sig = np.asarray(signal_in(tau), dtype=complex)
    else:
        sig = np.asarray(signal_in, dtype=complex)
        if sig.shape != tau.shape:
            # resample a waveform given on a different grid over the same window
            src = np.linspace(tau[0], tau[-1], sig.size)
            sig = np.interp(tau, src, sig.real) + 1j * np.interp(tau, src, sig.imag)
    e_in = np.sum(np.abs(sig) ** 2) * h
    if not e_in > 0:
        raise ArgumentError("signal has zero energy")
    sig = sig / np.sqrt(e_in)

    zero_t = np.zeros((ntau, 1), complex)
    s1, a1, b1, rec = _sweep(U, (sig * np.sqrt(h))[:, None], zero_t, np.zeros((nz, 1), complex),
                             record=opts.record_fields)
    _check_finite("read-in", np.concatenate([s1, a1, b1]))
    readin = float(np.sum(np.abs(b1) ** 2))
    b_store = b1 * np.exp(-opts.spinwave_decay * ctrl.readout_delay)
    s2, a2, b2, _ = _sweep(U, zero_t, zero_t, b_store)
    _check_finite("read-out", np.concatenate([s2, a2, b2]))

    out = dict(
        tau=tau,
        signal_in=sig,
        efficiency=float(np.sum(np.abs(s2) ** 2)),
        readin_efficiency=readin,
        retrieved_waveform=s2[:, 0] / np.sqrt(h),
        transmitted_waveform=s1[:, 0] / np.sqrt(h),
        anti_stokes_energy=float(np.sum(np.abs(a1) ** 2) + np.sum(np.abs(a2) ** 2)),
        residual_spinwave=float(np.sum(np.abs(b2) ** 2)),
    )
    if opts.record_fields:
        z = (np.arange(nz) + 1.0) / nz
        out["fields"] = MemoryFieldGrid(z, tau, rec[0] / np.sqrt(h), rec[1] / np.sqrt(h), rec[2] / np.sqrt(1.0 / nz))
    if opts.compute_io_map:
        out["io_map"] = single_pulse_map(U, nz)
    return out


def single_pulse_map(U, nz):
    """Bogoliubov map of one control pulse on channels (S_in, A+_in, B_in)."""
    nt = U.shape[0]
    n = 2 * nt + nz
    eye = np.eye(n, dtype=complex)
    s, a, b, _ = _sweep(U, eye[:nt], eye[nt:2 * nt], eye[2 * nt:])
    return np.concatenate([s, a, b], axis=0)


def symplectic_form(ntau, nz):
    return np.diag(np.concatenate([np.ones(ntau), -np.ones(ntau), np.ones(nz)]))


def symplectic_defect(io_map, ntau, nz):
    """Spectral norm of M J M^+ - J."""
    J = symplectic_form(ntau, nz)
    return float(np.linalg.norm(io_map @ J @ io_map.conj().T - J, 2))


def solve_memory(coupling, ctrl, signal_in=None, opts=None):
    """Write a signal pulse into the spin wave and read it back out.

    The read-out uses an identical control pulse after ``ctrl.readout_delay``;
    the spin wave amplitude decays by exp(-spinwave_decay * delay) in
    between. Efficiencies are time-integrated intensity ratios.
    """
    opts = opts or MemoryOptions()
    r = _solve_grid(coupling, ctrl, signal_in, opts, opts.nz, opts.ntau)
    report = {"nz": opts.nz, "ntau": opts.ntau, "scheme": "cellwise-exponential"}
    if opts.check_convergence:
        coarse = _solve_grid(coupling, ctrl, signal_in, replace(opts, compute_io_map=False, record_fields=False),
                             opts.nz // 2, opts.ntau // 2)
        eta, eta_c = r["efficiency"], coarse["efficiency"]
        rel = abs(eta - eta_c) / max(abs(eta), 1e-300)
        report.update(
            eta_coarse=eta_c,
            rel_change=rel,
            richardson=eta + (eta - eta_c) / 3.0,
            converged=bool(rel < opts.convergence_tol),
        )
        if not report["converged"]:
            warnings.warn(f"memory grid not converged (rel change {rel:.2e})", RuntimeWarning, stacklevel=2)
    return MemoryResult(
        efficiency=r["efficiency"],
        readin_efficiency=r["readin_efficiency"],
        retrieved_waveform=r["retrieved_waveform"],
        anti_stokes_energy=r["anti_stokes_energy"],
        io_map=r.get("io_map"),
        grid_report=report,
        tau=r["tau"],
        signal_in=r["signal_in"],
        transmitted_waveform=r["transmitted_waveform"],
        residual_spinwave=r["residual_spinwave"],
        fields=r.get("fields"),
    )


def memory_efficiency(retrieved, input_waveform, dtau=1.0, input_dtau=None):
    """Ratio of time-integrated intensities of retrieved and input pulses.

    ``retrieved`` may be a MemoryResult, in which case its retrieved
    waveform and time step are used.
    """
    if isinstance(retrieved, MemoryResult):
        dtau = retrieved.tau[1] - retrieved.tau[0]
        retrieved = retrieved.retrieved_waveform
    input_dtau = dtau if input_dtau is None else input_dtau
    e_in = np.sum(np.abs(np.asarray(input_waveform)) ** 2) * input_dtau
    if not e_in > 0:
        raise ArgumentError("input pulse has zero energy")
    return float(np.sum(np.abs(np.asarray(retrieved)) ** 2) * dtau / e_in)


def windowed_efficiency(trace, tau, input_window, retrieval_window):
    """Efficiency from one detector trace with separate integration windows."""
    (a0, a1), (b0, b1) = sorted([tuple(input_window), tuple(retrieval_window)])
    if a1 > b0:
        raise ArgumentError("integration windows overlap")
    tau = np.asarray(tau)
    I = np.abs(np.asarray(trace)) ** 2
    win_in = (tau >= input_window[0]) & (tau < input_window[1])
    win_out = (tau >= retrieval_window[0]) & (tau < retrieval_window[1])
    e_in = np.trapezoid(I[win_in], tau[win_in])
    if not e_in > 0:
        raise ArgumentError("input pulse has zero energy")
    return float(np.trapezoid(I[win_out], tau[win_out]) / e_in)


# ----------------------------------------------------------------- sweeps


@dataclass
class RabiSweep:
    omega: np.ndarray
    eta: np.ndarray
    eta_readin: np.ndarray
    anti_stokes_energy: np.ndarray
    converged: np.ndarray
    detuning: float
    temperature: float
    d: float
    c_s: np.ndarray = None
    c_a: np.ndarray = None
    eta_nofwm: np.ndarray = None

    def rows(self):
        for i in range(self.omega.size):
            yield dict(
                omega_GHz=self.omega[i], delta_GHz=self.detuning, T_K=self.temperature, d=self.d,
                eta=self.eta[i], eta_readin=self.eta_readin[i],
                anti_stokes_energy=self.anti_stokes_energy[i], converged_flag=int(self.converged[i]),
                eta_nofwm=None if self.eta_nofwm is None else self.eta_nofwm[i],
            )


def sweep_rabi(cell, pops, ctrl_template, omegas, opts=None, *, kappa_cal=DEFAULT_KAPPA_CAL,
               stark_cal=DEFAULT_STARK_CAL, d=None, nofwm_companion=False):
    """Memory efficiency over a grid of peak control Rabi frequencies."""
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim != 1 or omegas.size == 0 or np.any(np.diff(omegas) <= 0):
        raise ArgumentError("Rabi grid must be non-empty and ascending")
    opts = opts or MemoryOptions()
    d = atoms.resonant_optical_depth(cell, pops) if d is None else d
    n = omegas.size
    eta, rin, asE, conv, cs, ca = (np.zeros(n) for _ in range(6))
    eta_nf = np.zeros(n) if nofwm_companion else None
    for i, om in enumerate(omegas):
        ctrl = ctrl_template.with_rabi(om)
        cc = coupling_constants(cell, pops, ctrl, kappa_cal, stark_cal, d=d)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = solve_memory(cc, ctrl, None, opts)
        eta[i], rin[i], asE[i] = res.efficiency, res.readin_efficiency, res.anti_stokes_energy
        conv[i] = res.converged
        cs[i], ca[i] = cc.c_s, cc.c_a
        if nofwm_companion:
            eta_nf[i] = solve_memory(cc, ctrl, None, replace(opts, fwm_on=False, check_convergence=False)).efficiency
    return RabiSweep(omegas, eta, rin, asE, conv.astype(bool), ctrl_template.detuning,
                     cell.temperature, d, cs, ca, eta_nf)


def stark_peak_location(omegas, eta):
    """Rabi frequency of the first interior local maximum (parabolic refinement).

    Returns nan when the curve has no local maximum followed by a dip.
    """
    omegas, eta = np.asarray(omegas), np.asarray(eta)
    for i in range(1, eta.size - 1):
        if eta[i] >= eta[i - 1] and eta[i] > eta[i + 1]:
            x, y = omegas[i - 1:i + 2], eta[i - 1:i + 2]
            c = np.polyfit(x, y, 2)
            return float(-c[1] / (2 * c[0])) if c[0] < 0 else float(omegas[i])
    return float("nan")


def detuning_comparison(cell, pops, ctrl_template, deltas, omegas, opts=None, *,
                        kappa_cal=DEFAULT_KAPPA_CAL, stark_cal=DEFAULT_STARK_CAL, d=None):
    """Rabi sweeps at several detunings with their Stark-peak metrics."""
    out = {}
    for D in deltas:
        if D <= 0:
            raise DomainError("detunings must be positive")
        sw = sweep_rabi(cell, pops, replace(ctrl_template, detuning=float(D)), omegas, opts,
                        kappa_cal=kappa_cal, stark_cal=stark_cal, d=d)
        om_star = stark_peak_location(sw.omega, sw.eta)
        pre = sw.eta[sw.omega <= om_star] if np.isfinite(om_star) else sw.eta
        out[float(D)] = dict(sweep=sw, omega_star=om_star, peak_eta=float(pre.max()),
                             small_omega_eta=float(sw.eta[0]))
    return out


# ------------------------------------------------------------ calibration


def calibrate_memory(cell, pops, ctrl_template=None, *, target_eta=0.25, omega_star=4.0,
                     opts=None, kappa_guess=DEFAULT_KAPPA_CAL, stark_guess=DEFAULT_STARK_CAL,
                     tol=1e-4, max_iter=30):
    """Fix (kappa_cal, stark_cal) from the no-FWM efficiency curve.

    stark_cal places the local maximum of eta(Omega) at ``omega_star`` and
    kappa_cal sets its height to ``target_eta``. The two conditions are
    solved alternately.
    """
    ctrl_template = ctrl_template or ControlPulseTrain(omega_star)
    opts = opts or MemoryOptions(nz=48, ntau=192)
    nofwm = replace(opts, fwm_on=False, check_convergence=False)
    d = atoms.resonant_optical_depth(cell, pops)

    def eta(om, kap, sc):
        ctrl = ctrl_template.with_rabi(om)
        return solve_memory(coupling_constants(cell, pops, ctrl, kap, sc, d=d), ctrl, None, nofwm).efficiency

    def peak(kap, sc):
        h = 1e-3 * omega_star
        x = np.array([omega_star - h, omega_star, omega_star + h])
        y = np.array([eta(v, kap, sc) for v in x])
        return (y[2] - y[0]) / (2 * h), y[1]

    kap, sc = kappa_guess, stark_guess
    for it in range(max_iter):
        sc_new = brentq(lambda s: peak(kap, s)[0], 0.7 * sc, 1.4 * sc, xtol=1e-8)
        kap_new = brentq(lambda k: eta(omega_star, k, sc_new) - target_eta, 0.7 * kap, 1.4 * kap, xtol=1e-8)
        done = abs(sc_new - sc) < tol * sc and abs(kap_new - kap) < tol * kap
        kap, sc = kap_new, sc_new
        if done:
            return float(kap), float(sc)
    raise NumericalError("memory calibration did not converge", {"kappa_cal": kap, "stark_cal": sc})


# --------------------------------------------------------------- lifetime


@dataclass
class LifetimeCurve:
    storage_times: np.ndarray  # ns
    eta: np.ndarray
    tau_model: float  # ns
    tau_fit: float  # ns


def diffusion_lifetime(waist_um, D_cm2s):
    """1/e storage time (ns) of a spin wave of 1/e^2 radius w: w^2 / (4 D)."""
    if waist_um <= 0 or D_cm2s <= 0:
        raise ArgumentError("waist and D must be positive")
    w_cm = waist_um * 1e-4
    return w_cm**2 / (4.0 * D_cm2s) * 1e9


def lifetime_curve(result_template, waist, D, storage_times):
    """Efficiency vs storage time for diffusion-limited decay.

    ``result_template`` is a MemoryResult (its efficiency is eta_0) or a
    number. The fitted lifetime is the 1/e time of a log-linear fit.
    """
    eta0 = result_template.efficiency if isinstance(result_template, MemoryResult) else float(result_template)
    t = np.asarray(storage_times, dtype=float)
    tau = diffusion_lifetime(waist, D)
    eta = eta0 * np.exp(-t / tau)
    slope = np.polyfit(t, np.log(eta), 1)[0] if t.size > 1 else -1.0 / tau
    return LifetimeCurve(t, eta, tau, float(-1.0 / slope))
