"""Caesium line data, vapour density and Voigt absorption spectra.

Frequencies and linewidths are ordinary frequencies in GHz unless a name
says otherwise. Detunings are measured from the fine-structure centroid of
the chosen optical line.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
import yaml
from scipy import constants as const
from scipy.special import voigt_profile

from .errors import ArgumentError, DomainError

TORR = 133.32236842105263  # Pa
SCHEMA_VERSION = 1
FWHM_TO_SIGMA = 1.0 / np.sqrt(8.0 * np.log(2.0))


@functools.lru_cache(maxsize=None)
def _load_default():
    text = resources.files("vapormem").joinpath("data/cesium.yaml").read_text()
    return yaml.safe_load(text)


def load_constants(path=None):
    """Read the species/buffer-gas data file and check its schema version."""
    if path is None:
        data = _load_default()
    else:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ArgumentError(f"unsupported constants schema_version {version!r}")
    return data


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class OpticalLine:
    """One fine-structure line (D1 or D2) of caesium.

    ``hyperfine_components`` maps each ground level F to a tuple of
    ``(offset_GHz, relative_strength)`` pairs, offsets measured from the
    line centroid.
    """

    label: str
    wavelength: float  # nm
    excited_lifetime: float  # ns
    ground_hyperfine_splitting: float  # GHz
    hyperfine_components: dict = field(hash=False, compare=False)
    degeneracy_ratio: float = 1.0
    mass_amu: float = 132.905451931

    def __post_init__(self):
        if self.label not in ("D1", "D2"):
            raise ArgumentError(f"unknown line label {self.label!r}")
        if not self.excited_lifetime > 0:
            raise ArgumentError("excited_lifetime must be positive")
        for F, comps in self.hyperfine_components.items():
            total = sum(s for _, s in comps)
            if abs(total - 1.0) > 1e-9:
                raise ArgumentError(f"strengths for F={F} sum to {total}, not 1")

    @property
    def natural_linewidth(self):
        """Natural FWHM 1/(2 pi tau) in GHz."""
        return 1.0 / (2.0 * np.pi * self.excited_lifetime)

    @property
    def decay_rate(self):
        """Radiative decay rate in ns^-1."""
        return 1.0 / self.excited_lifetime

    def manifold_position(self, F):
        """Strength-weighted centre of the absorption from ground level F (GHz)."""
        comps = self.hyperfine_components[F]
        return sum(off * s for off, s in comps)

    @property
    def integrated_cross_section(self):
        """Frequency-integrated absorption cross-section per atom, m^2 GHz."""
        lam = self.wavelength * 1e-9
        A = 1e9 / self.excited_lifetime  # s^-1
        return lam**2 * self.degeneracy_ratio * A / (8.0 * np.pi) * 1e-9


@dataclass(frozen=True)
class BufferGas:
    kind: str
    pressure: float  # Torr
    broadening_coeff: float  # MHz/Torr
    d0: float  # cm^2/s
    quench_cross_section: dict = field(hash=False, compare=False)  # line -> A^2
    mass_amu: float = 28.0

    def __post_init__(self):
        if self.kind not in ("Ne", "N2"):
            raise ArgumentError(f"unknown buffer gas {self.kind!r}")
        if self.pressure < 0:
            raise ArgumentError("buffer pressure must be >= 0")
        if not (self.broadening_coeff > 0 and self.d0 > 0):
            raise ArgumentError("broadening_coeff and d0 must be positive")

    def with_pressure(self, pressure):
        return replace(self, pressure=pressure)


@dataclass(frozen=True)
class VaporCell:
    line: OpticalLine
    buffer: BufferGas
    temperature: float  # K
    length: float = 7.5  # cm
    radius: float = 1.0  # cm

    def __post_init__(self):
        _check_temperature(self.temperature)
        if not (self.length > 0 and self.radius > 0):
            raise ArgumentError("cell length and radius must be positive")

    def with_temperature(self, T):
        return replace(self, temperature=T)


@dataclass(frozen=True)
class GroundPopulations:
    n1_fraction: float  # F=4
    n3_fraction: float  # F=3

    def __post_init__(self):
        for v in (self.n1_fraction, self.n3_fraction):
            if not 0.0 <= v <= 1.0:
                raise ArgumentError("population fractions must lie in [0, 1]")
        if abs(self.n1_fraction + self.n3_fraction - 1.0) > 1e-9:
            raise ArgumentError("population fractions must sum to 1")

    @classmethod
    def from_polarization(cls, P):
        return cls(float(P), 1.0 - float(P))

    @classmethod
    def thermal(cls):
        return cls(9.0 / 16.0, 7.0 / 16.0)


# ------------------------------------------------------------- factories


def optical_line(label, constants=None):
    c = constants or load_constants()
    if label not in c["lines"]:
        raise ArgumentError(f"unknown optical line {label!r}")
    sp = c["species"]
    d = c["lines"][label]
    dhf = float(sp["ground_hyperfine_GHz"])
    # ground levels sit at +7/16 (F=4) and -9/16 (F=3) of the splitting
    ground = {4: 7.0 / 16.0 * dhf, 3: -9.0 / 16.0 * dhf}
    exc = {int(k): v * 1e-3 for k, v in d["excited_offsets_MHz"].items()}
    comps = {}
    for F, table in d["strengths"].items():
        F = int(F)
        comps[F] = tuple(
            (exc[int(Fp)] - ground[F], float(s)) for Fp, s in sorted(table.items())
        )
    return OpticalLine(
        label=label,
        wavelength=float(d["wavelength_nm"]),
        excited_lifetime=float(d["lifetime_ns"]),
        ground_hyperfine_splitting=dhf,
        hyperfine_components=comps,
        degeneracy_ratio=float(d["degeneracy_ratio"]),
        mass_amu=float(sp["mass_amu"]),
    )


def buffer_gas(kind, pressure, constants=None):
    c = constants or load_constants()
    if kind not in c["buffer_gases"]:
        raise ArgumentError(f"unknown buffer gas {kind!r}")
    d = c["buffer_gases"][kind]
    return BufferGas(
        kind=kind,
        pressure=float(pressure),
        broadening_coeff=float(d["broadening_MHz_per_Torr"]),
        d0=float(d["d0_cm2_per_s"]),
        quench_cross_section={k: float(v) for k, v in d["quench_cross_section_A2"].items()},
        mass_amu=float(d["mass_amu"]),
    )


def standard_cell(T, buffer="N2", pressure=10.0, line="D2", length=7.5, radius=1.0):
    """Cylindrical cell with the default 7.5 cm x 1 cm geometry."""
    return VaporCell(optical_line(line), buffer_gas(buffer, pressure), T, length, radius)


# --------------------------------------------------------------- density


def _check_temperature(T):
    lo, hi = load_constants()["vapor_pressure"]["valid_range_K"]
    T = np.asarray(T, dtype=float)
    if np.any(~np.isfinite(T)) or np.any(T < lo) or np.any(T > hi):
        raise DomainError(f"temperature outside vapour-pressure window [{lo}, {hi}] K")


def vapor_pressure(T):
    """Saturated Cs vapour pressure in Torr.

    Solid and liquid branches of the standard four-term correlation
    (Steck, Caesium D Line Data), joined at the melting point.
    """
    _check_temperature(T)
    vp = load_constants()["vapor_pressure"]
    T = np.asarray(T, dtype=float)

    def branch(p):
        return p["a"] + p["b"] / T + p["c"] * T + p["d"] * np.log10(T)

    log_p = np.where(T < vp["melting_point_K"], branch(vp["solid"]), branch(vp["liquid"]))
    return 10.0**log_p


def vapor_number_density(T):
    """Cs number density (m^-3) of saturated vapour at temperature T (K)."""
    T = np.asarray(T, dtype=float)
    n = vapor_pressure(T) * TORR / (const.k * T)
    return n if n.ndim else float(n)


# ------------------------------------------------------------ broadening


def doppler_fwhm(line, T):
    """Doppler FWHM in GHz."""
    if np.any(np.asarray(T) <= 0):
        raise DomainError("temperature must be positive")
    m = line.mass_amu * const.atomic_mass
    v = np.sqrt(8.0 * np.log(2.0) * const.k * np.asarray(T, dtype=float) / m)
    return v / (line.wavelength * 1e-9) * 1e-9


def pressure_broadened_fwhm(buffer):
    """Collisional Lorentzian FWHM in MHz."""
    return buffer.broadening_coeff * buffer.pressure


def lorentzian_fwhm(cell, pressure=True):
    """Total Lorentzian FWHM in GHz (natural plus optional collisional)."""
    g = cell.line.natural_linewidth
    if pressure:
        g += pressure_broadened_fwhm(cell.buffer) * 1e-3
    return g


def voigt(nu, fwhm_gauss, fwhm_lorentz):
    """Area-normalised Voigt profile, widths given as FWHM."""
    return voigt_profile(nu, fwhm_gauss * FWHM_TO_SIGMA, 0.5 * fwhm_lorentz)


def voigt_peak(fwhm_gauss, fwhm_lorentz):
    return float(voigt(0.0, fwhm_gauss, fwhm_lorentz))


# ---------------------------------------------------------------- spectra


def _column(cell, density):
    n = vapor_number_density(cell.temperature) if density is None else float(density)
    if n < 0:
        raise ArgumentError("density must be non-negative")
    return n * cell.length * 1e-2 * cell.line.integrated_cross_section


def optical_depth_spectrum(cell, pops, detunings, density=None):
    """Intensity optical depth OD(nu) over a detuning grid (GHz)."""
    nu = np.asarray(detunings, dtype=float)
    if nu.size == 0:
        raise ArgumentError("empty detuning grid")
    col = _column(cell, density)
    wg = doppler_fwhm(cell.line, cell.temperature)
    wl = lorentzian_fwhm(cell)
    frac = {4: pops.n1_fraction, 3: pops.n3_fraction}
    od = np.zeros_like(nu)
    for F, f in frac.items():
        if f == 0.0:
            continue
        od += f * voigt(nu - cell.line.manifold_position(F), wg, wl)
    return col * od


def transmission_spectrum(cell, pops, detunings, density=None):
    """Single-pass probe transmission exp(-OD(nu))."""
    return np.exp(-optical_depth_spectrum(cell, pops, detunings, density))


def resonant_optical_depth(cell, pops, density=None):
    """Resonant optical depth d of the |1> (F=4) transition.

    Defined as the line-centre OD the pumped ensemble would present with
    only its natural linewidth, n1 L lambda^2 (g'/g) / (2 pi). This is the
    quantity that sets the Raman coupling; it exceeds the Doppler-broadened
    probe OD (see ``probe_optical_depth``) by roughly the ratio of Voigt to
    natural line-centre heights.
    """
    col = _column(cell, density) * pops.n1_fraction
    return col * 2.0 / (np.pi * cell.line.natural_linewidth)


def probe_optical_depth(cell, pops, density=None):
    """Peak of the Voigt-broadened OD of the F=4 manifold."""
    col = _column(cell, density) * pops.n1_fraction
    return col * voigt_peak(doppler_fwhm(cell.line, cell.temperature), lorentzian_fwhm(cell))


def celsius(t_c):
    return t_c + 273.15
