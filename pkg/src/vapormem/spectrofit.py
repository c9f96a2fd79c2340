"""Probe-transmission spectra: synthesis and least-squares fitting.

Transmission model over detuning nu (GHz, from the line centroid):

    t(nu) = (offset + slope nu) exp(-d [P v(nu - nu4) + (1 - P) v(nu - nu3)])

with v a Voigt profile normalised to unit peak. d is therefore the peak
optical depth the vapour would show with every atom in F=4. The Lorentzian
width is fixed by the (known) buffer gas; the Gaussian width carries T.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import wofz

from . import atoms
from .errors import ArgumentError, NumericalError

PARAMS = ("d", "polarization", "temperature", "baseline_slope", "baseline_offset")
LOWER = np.array([1e-8, 0.0, 150.0, -np.inf, 0.0])
UPPER = np.array([1e5, 1.0, 800.0, np.inf, np.inf])
SQRT2 = np.sqrt(2.0)
SQRTPI = np.sqrt(np.pi)


@dataclass
class SpectrumTrace:
    frequency: np.ndarray  # GHz
    transmission: np.ndarray
    noise_sigma: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequency = np.asarray(self.frequency, dtype=float)
        self.transmission = np.asarray(self.transmission, dtype=float)
        if self.frequency.shape != self.transmission.shape or self.frequency.ndim != 1:
            raise ArgumentError("frequency and transmission must be 1-D and equal length")
        if self.frequency.size < 64:
            raise ArgumentError("a trace needs at least 64 samples")
        if self.noise_sigma < 0:
            raise ArgumentError("noise_sigma must be >= 0")


@dataclass
class SpectrumFit:
    d: float
    polarization: float
    temperature: float
    baseline_slope: float = 0.0
    baseline_offset: float = 1.0
    residual_rms: float = 0.0
    covariance: np.ndarray = None
    at_bound: tuple = ()
    nfev: int = 0

    @property
    def params(self):
        return np.array([self.d, self.polarization, self.temperature, self.baseline_slope, self.baseline_offset])

    @property
    def stderr(self):
        return np.sqrt(np.diag(self.covariance)) if self.covariance is not None else None

    def to_dict(self):
        out = asdict(self)
        out["covariance"] = None if self.covariance is None else np.asarray(self.covariance).tolist()
        out["at_bound"] = list(self.at_bound)
        return out


# ------------------------------------------------------------------ model


@dataclass(frozen=True)
class LineModel:
    """Fixed spectroscopic constants the fit does not vary."""

    nu4: float
    nu3: float
    lorentz_fwhm: float  # GHz
    doppler_coeff: float  # Doppler FWHM / sqrt(T), GHz K^-1/2

    @classmethod
    def for_cell(cls, line, buffer):
        return cls(
            nu4=line.manifold_position(4),
            nu3=line.manifold_position(3),
            lorentz_fwhm=line.natural_linewidth + atoms.pressure_broadened_fwhm(buffer) * 1e-3,
            doppler_coeff=float(atoms.doppler_fwhm(line, 1.0)),
        )

    @classmethod
    def from_metadata(cls, meta):
        line = atoms.optical_line(meta.get("line", "D2"))
        buf = atoms.buffer_gas(meta.get("buffer", "N2"), meta.get("pressure_torr", 10.0))
        return cls.for_cell(line, buf)


def _voigt_parts(x, sigma, gamma):
    """Voigt value and its derivative with respect to sigma."""
    z = (x + 1j * gamma) / (sigma * SQRT2)
    w = wofz(z)
    V = w.real / (sigma * np.sqrt(2 * np.pi))
    dw = -2 * z * w + 2j / SQRTPI
    dV_dsigma = -V / sigma + (dw * (-z / sigma)).real / (sigma * np.sqrt(2 * np.pi))
    return V, dV_dsigma


def _unit_peak(x, sigma, gamma):
    V, Vs = _voigt_parts(x, sigma, gamma)
    V0, V0s = _voigt_parts(np.zeros(1), sigma, gamma)
    return V / V0, (Vs * V0 - V * V0s) / V0**2


def model_transmission(theta, nu, model, jac=False):
    d, P, T, slope, offset = theta
    sigma = model.doppler_coeff * np.sqrt(T) * atoms.FWHM_TO_SIGMA
    gamma = 0.5 * model.lorentz_fwhm
    v4, v4s = _unit_peak(nu - model.nu4, sigma, gamma)
    v3, v3s = _unit_peak(nu - model.nu3, sigma, gamma)
    shape = P * v4 + (1 - P) * v3
    base = offset + slope * nu
    E = np.exp(-d * shape)
    t = base * E
    if not jac:
        return t
    dsig_dT = sigma / (2 * T)
    J = np.empty((nu.size, 5))
    J[:, 0] = -shape * t
    J[:, 1] = -d * (v4 - v3) * t
    J[:, 2] = -d * (P * v4s + (1 - P) * v3s) * dsig_dT * t
    J[:, 3] = nu * E
    J[:, 4] = E
    return t, J


# -------------------------------------------------------------- synthesis


def cell_for_optical_depth(T, d, buffer="N2", pressure=10.0, line="D2", radius=1.0):
    """Cell whose length gives peak (all-F=4) probe OD ``d`` at temperature T."""
    probe = atoms.standard_cell(T, buffer, pressure, line, length=1.0, radius=radius)
    per_cm = atoms.probe_optical_depth(probe, atoms.GroundPopulations(1.0, 0.0))
    return atoms.standard_cell(T, buffer, pressure, line, length=d / per_cm, radius=radius)


def default_grid(n=1024, lo=-9.0, hi=10.0):
    return np.linspace(lo, hi, n)


def synthesize_scan(cell, pops, baseline_slope=0.0, baseline_offset=1.0, noise_sigma=0.0, seed=0, grid=None):
    """Probe scan with a linear baseline and white Gaussian noise."""
    if noise_sigma < 0:
        raise ArgumentError("noise_sigma must be >= 0")
    nu = default_grid() if grid is None else np.asarray(grid, dtype=float)
    t = (baseline_offset + baseline_slope * nu) * atoms.transmission_spectrum(cell, pops, nu)
    if noise_sigma > 0:
        t = t + np.random.default_rng(seed).normal(0.0, noise_sigma, nu.size)
    meta = dict(
        line=cell.line.label, buffer=cell.buffer.kind, pressure_torr=cell.buffer.pressure,
        temperature_K=cell.temperature, length_cm=cell.length, seed=seed,
        d=atoms.probe_optical_depth(cell, atoms.GroundPopulations(1.0, 0.0)),
        polarization=pops.n1_fraction, baseline_slope=baseline_slope, baseline_offset=baseline_offset,
    )
    return SpectrumTrace(nu, np.maximum(t, 0.0), noise_sigma, meta)


# ---------------------------------------------------------------- fitting


def _clip_into_bounds(x):
    span = np.where(np.isfinite(UPPER - LOWER), UPPER - LOWER, 1.0)
    return np.clip(x, LOWER + 1e-9 * span, UPPER - 1e-9 * span)


def fit_scan(trace, guess, model=None, n_restarts=4, seed=0, max_nfev=400):
    """Bounded least-squares fit of (d, P, T, slope, offset) to a trace.

    The best of the initial guess and ``n_restarts`` jittered copies is
    kept. The covariance is (J^T J)^-1 scaled by the residual variance.
    """
    model = model or LineModel.from_metadata(trace.metadata)
    nu, y = trace.frequency, trace.transmission
    x0 = guess.params if isinstance(guess, SpectrumFit) else np.asarray(guess, dtype=float)
    rng = np.random.default_rng(seed)
    starts = [x0]
    for _ in range(n_restarts):
        jit = x0 * np.array([np.exp(rng.normal(0, 0.3)), 1.0, np.exp(rng.normal(0, 0.05)), 1.0, 1.0])
        jit[1] = rng.uniform(0.5, 1.0)
        jit[3] = x0[3] + rng.normal(0, 0.01)
        starts.append(jit)

    def resid(p):
        return model_transmission(p, nu, model) - y

    def jac(p):
        return model_transmission(p, nu, model, jac=True)[1]

    best, history = None, []
    for s in starts:
        sol = least_squares(resid, _clip_into_bounds(s), jac=jac, bounds=(LOWER, UPPER),
                            method="trf", x_scale="jac", max_nfev=max_nfev, xtol=1e-12, ftol=1e-12, gtol=1e-12)
        history.append(dict(start=s.tolist(), cost=float(sol.cost), status=int(sol.status), x=sol.x.tolist()))
        if sol.status > 0 and (best is None or sol.cost < best.cost):
            best = sol
    if best is None:
        raise NumericalError("spectrum fit did not converge", {"restarts": history})

    n, p = y.size, best.x.size
    r = best.fun
    s2 = float(r @ r) / max(n - p, 1)
    JtJ = best.jac.T @ best.jac
    cov = np.linalg.pinv(JtJ) * s2
    cov = 0.5 * (cov + cov.T)
    tol = 1e-6 * np.maximum(1.0, np.abs(best.x))
    at_bound = tuple(name for name, x, lo, hi in zip(PARAMS, best.x, LOWER, UPPER)
                     if abs(x - lo) < tol[PARAMS.index(name)] or abs(x - hi) < tol[PARAMS.index(name)])
    d, P, T, slope, offset = best.x
    return SpectrumFit(float(d), float(P), float(T), float(slope), float(offset),
                       residual_rms=float(np.sqrt(np.mean(r**2))), covariance=cov,
                       at_bound=at_bound, nfev=int(best.nfev))


def default_guess(trace):
    """Rough starting point read off the trace itself."""
    y, nu = trace.transmission, trace.frequency
    edge = np.r_[y[:8], y[-8:]]
    offset = max(float(np.median(edge)), 1e-3)
    depth = -np.log(np.clip(y.min() / offset, 1e-6, 1.0))
    return SpectrumFit(d=max(depth, 0.1), polarization=0.75, temperature=340.0,
                       baseline_slope=0.0, baseline_offset=offset)


def polarization_from_ratio(n1, n3):
    if n1 < 0 or n3 < 0:
        raise ArgumentError("populations must be non-negative")
    if n1 + n3 == 0:
        raise ArgumentError("both populations are zero")
    return n1 / (n1 + n3)


# ------------------------------------------------------ axis calibration


@dataclass
class AffineMap:
    slope: float  # GHz per sample
    intercept: float  # GHz
    residuals: np.ndarray

    def __call__(self, index):
        return self.intercept + self.slope * np.asarray(index, dtype=float)


def calibrate_frequency_axis(raw_axis, reference_peaks):
    """Least-squares affine map from sample index to GHz.

    ``reference_peaks`` is a sequence of (index, known_GHz) pairs. Returns
    the map; apply it to ``raw_axis`` for the calibrated axis.
    """
    ref = np.asarray(reference_peaks, dtype=float)
    if ref.ndim != 2 or ref.shape[0] < 2:
        raise ArgumentError("need at least two reference peaks")
    idx, f = ref[:, 0], ref[:, 1]
    if np.ptp(idx) == 0:
        raise NumericalError("reference peaks share one sample index", {"indices": idx.tolist()})
    A = np.column_stack([idx, np.ones_like(idx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, f, rcond=None)
    return AffineMap(float(slope), float(icpt), f - (icpt + slope * idx))


# -------------------------------------------------------------------- I/O


def write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write(f"# noise_sigma: {trace.noise_sigma!r}\n")
        fh.write(f"# metadata: {json.dumps(trace.metadata, sort_keys=True)}\n")
        fh.write("# columns: frequency_GHz, transmission\n")
        for a, b in zip(trace.frequency, trace.transmission):
            fh.write(f"{a:.12g},{b:.12g}\n")


def read_trace(path):
    meta, sigma = {}, 0.0
    with open(path) as fh:
        lines = fh.readlines()
    for ln in lines:
        if ln.startswith("# noise_sigma:"):
            sigma = float(ln.split(":", 1)[1])
        elif ln.startswith("# metadata:"):
            meta = json.loads(ln.split(":", 1)[1])
    rows = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise ArgumentError(f"{path}: no data rows")
    data = np.loadtxt(rows, delimiter=",", ndmin=2)
    return SpectrumTrace(data[:, 0], data[:, 1], sigma, meta)
