"""Optical pumping with collisional quenching and radiation trapping.

The multiplicity M is the mean number of times a fluorescence photon on the
|2> -> |1> line is reabsorbed before it leaves the cylinder or is lost to a
quenching collision. Two estimators are provided:

* ``multiplicity_analytic`` solves the discretised Holstein-Biberman
  transport problem: the cylinder is split into axisymmetric cells, the
  cell-to-cell single-flight absorption matrix A is built by ray tracing,
  and M = f0^T A (I - (1-q) A)^-1 1.
* ``multiplicity_monte_carlo`` follows individual photons.

Both assume complete frequency redistribution at every scattering.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as const
from scipy.optimize import brentq

from . import atoms
from .errors import ArgumentError, NumericalError

A2 = 1e-20  # m^2 per square angstrom


@dataclass(frozen=True)
class PumpConfig:
    pump_line: str = "D1"
    pump_rate: float = 1e-3  # ns^-1
    ground_relaxation: float = 1e-6  # ns^-1
    branching_to_target: float = 0.5
    thermal_weights: str = "degeneracy"  # or "equal"

    def __post_init__(self):
        if self.pump_line not in ("D1", "D2"):
            raise ArgumentError(f"unknown pump line {self.pump_line!r}")
        if self.pump_rate < 0 or self.ground_relaxation < 0:
            raise ArgumentError("rates must be non-negative")
        if not 0.0 <= self.branching_to_target <= 1.0:
            raise ArgumentError("branching_to_target must lie in [0, 1]")
        if self.thermal_weights not in ("degeneracy", "equal"):
            raise ArgumentError("thermal_weights must be 'degeneracy' or 'equal'")


@dataclass(frozen=True)
class TrappingModelResult:
    multiplicity: float
    escape_probability: float
    method: str  # "Analytic" or "MonteCarlo"
    mc_stderr: float = 0.0

    @classmethod
    def from_multiplicity(cls, M, q, method, stderr=0.0):
        # per-flight reabsorption probability r from M = r / (1 - r (1 - q))
        r = M / (1.0 + M * (1.0 - q))
        return cls(float(M), float(1.0 - r), method, float(stderr))


@dataclass
class PolarizationCurve:
    temperatures: np.ndarray
    polarization: np.ndarray
    buffer: atoms.BufferGas
    pump_line: str
    multiplicity: np.ndarray = field(default=None)
    quench: np.ndarray = field(default=None)


# -------------------------------------------------------------- quenching


def quenching_rate(buffer, T, line):
    """Collisional quench rate n_buf sigma_Q v_rel in ns^-1."""
    sigma = buffer.quench_cross_section.get(line.label, 0.0) * A2
    if sigma == 0.0 or buffer.pressure == 0.0:
        return 0.0
    n_buf = buffer.pressure * atoms.TORR / (const.k * T)
    mu = line.mass_amu * buffer.mass_amu / (line.mass_amu + buffer.mass_amu) * const.atomic_mass
    v_rel = np.sqrt(8.0 * const.k * T / (np.pi * mu))
    return n_buf * sigma * v_rel * 1e-9


def quench_branching(line, gamma_q):
    """Fraction of excited atoms that are quenched rather than radiating."""
    if gamma_q < 0:
        raise ArgumentError("gamma_q must be non-negative")
    if np.isinf(gamma_q):
        return 1.0
    return gamma_q / (gamma_q + line.decay_rate)


# ------------------------------------------------------- trapping profile


def _profile_widths(cell, pressure_broadened):
    wg = atoms.doppler_fwhm(cell.line, cell.temperature)
    wl = atoms.lorentzian_fwhm(cell, pressure=pressure_broadened)
    return wg, wl


def _absorber_coefficient(cell, pops, density):
    """n1 * S in cm^-1 GHz (multiply by the profile in 1/GHz)."""
    n = atoms.vapor_number_density(cell.temperature) if density is None else float(density)
    return n * pops.n1_fraction * cell.line.integrated_cross_section * 1e-2


# ----------------------------------------------------- kernel (analytic)


def _geometric_edges(length, n, ratio):
    # cells shrink geometrically toward the far end
    w = ratio ** np.arange(n)[::-1]
    return np.concatenate([[0.0], np.cumsum(w / w.sum() * length)])


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    mu = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + 5.0**0.5) * i
    st = np.sqrt(1.0 - mu**2)
    return np.stack([st * np.cos(phi), st * np.sin(phi), mu], axis=1)


@functools.lru_cache(maxsize=8)
def trapping_geometry(radius, length, nr=12, nz=16, ndir=256, nsub=2, ratio=1.3):
    """Ray segments for the axisymmetric cell-to-cell transport kernel.

    Returns a dict of flat arrays: source cell, target cell, segment start
    and end distance (cm) and quadrature weight, plus volume fractions.
    """
    re = _geometric_edges(radius, nr, ratio)
    half = _geometric_edges(length / 2, nz // 2, ratio)
    ze = np.concatenate([(length / 2 - half[::-1])[:-1], length / 2 + half])
    ze[0], ze[-1] = 0.0, length
    nrc, nzc = len(re) - 1, len(ze) - 1
    vol = np.pi * np.diff(re**2)[:, None] * np.diff(ze)[None, :]

    gx, gw = np.polynomial.legendre.leggauss(nsub)
    gx, gw = (gx + 1) / 2, gw / 2
    U = _fibonacci_sphere(ndir)
    ux, uy, uz = U.T
    A = ux**2 + uy**2
    out = {k: [] for k in ("src", "tgt", "s0", "s1", "w")}

    for i in range(nrc):
        for j in range(nzc):
            cid = i * nzc + j
            for a, wa in zip(gx, gw):
                r = np.sqrt(re[i] ** 2 + a * (re[i + 1] ** 2 - re[i] ** 2))
                B = 2 * r * ux
                for b, wb in zip(gx, gw):
                    z = ze[j] + b * (ze[j + 1] - ze[j])
                    cross = []
                    with np.errstate(invalid="ignore", divide="ignore"):
                        for rk in re[1:]:
                            disc = B * B - 4 * A * (r * r - rk * rk)
                            sq = np.sqrt(np.where(disc > 0, disc, np.nan))
                            cross += [(-B - sq) / (2 * A), (-B + sq) / (2 * A)]
                        t_wall = cross[-1].copy()
                        cross += [(zk - z) / uz for zk in ze]
                        t_cap = np.where(uz > 0, (length - z) / uz, -z / uz)
                    t_exit = np.minimum(t_wall, t_cap)
                    c = np.array(cross).T
                    c = np.where((c > 1e-15) & (c < t_exit[:, None]), c, np.nan)
                    c = np.sort(np.concatenate([np.zeros((ndir, 1)), c, t_exit[:, None]], 1), 1)
                    s0, s1 = c[:, :-1], c[:, 1:]
                    ok = np.isfinite(s1) & (s1 > s0)
                    mid = 0.5 * (s0 + s1)
                    px, py, pz = r + mid * ux[:, None], mid * uy[:, None], z + mid * uz[:, None]
                    ci = np.clip(np.searchsorted(re, np.hypot(px, py), side="right") - 1, 0, nrc - 1)
                    cj = np.clip(np.searchsorted(ze, pz, side="right") - 1, 0, nzc - 1)
                    k = int(ok.sum())
                    out["src"].append(np.full(k, cid))
                    out["tgt"].append((ci * nzc + cj)[ok])
                    out["s0"].append(s0[ok])
                    out["s1"].append(s1[ok])
                    out["w"].append(np.full(k, wa * wb / ndir))

    geo = {k: np.concatenate(v) for k, v in out.items()}
    geo["ncell"] = nrc * nzc
    geo["f0"] = (vol / vol.sum()).ravel()
    return geo


def _escape_table(k0, wg, wl, n_nu=2001, n_s=400):
    """Frequency-averaged transmission T(s) = int phi exp(-k0 phi s) dnu on a log grid."""
    sig = wg * atoms.FWHM_TO_SIGMA + 0.5 * wl
    u = np.linspace(-14.0, 14.0, n_nu)
    nu = np.sinh(u) * sig
    phi = atoms.voigt(nu, wg, wl)
    wq = phi * np.gradient(nu)
    wq /= wq.sum()
    s = np.logspace(-9, 2, n_s)
    T = np.exp(-np.outer(s, k0 * phi)) @ wq
    return np.log(s), T


def multiplicity_analytic(cell, pops, q, *, pressure_broadened=False, density=None, geometry=None):
    """Multiplicity from the discretised transport kernel."""
    if not 0.0 <= q <= 1.0:
        raise ArgumentError("q must lie in [0, 1]")
    k0 = _absorber_coefficient(cell, pops, density)
    if k0 == 0.0 or q == 1.0:
        return TrappingModelResult.from_multiplicity(0.0, q, "Analytic")
    geo = geometry or trapping_geometry(float(cell.radius), float(cell.length))
    wg, wl = _profile_widths(cell, pressure_broadened)
    log_s, T = _escape_table(k0, wg, wl)

    def absorbed(s):
        return 1.0 - np.interp(np.log(np.maximum(s, 1e-9)), log_s, T)

    p = (absorbed(geo["s1"]) - absorbed(geo["s0"])) * geo["w"]
    n = geo["ncell"]
    A = np.bincount(geo["src"] * n + geo["tgt"], weights=p, minlength=n * n).reshape(n, n)
    M = geo["f0"] @ A @ np.linalg.solve(np.eye(n) - (1.0 - q) * A, np.ones(n))
    return TrappingModelResult.from_multiplicity(max(M, 0.0), q, "Analytic")


# ----------------------------------------------------------- Monte Carlo


def _mc_chunk(seed_seq, n, k0, wg, wl, R, L, q, max_steps):
    rng = np.random.default_rng(seed_seq)
    sig, g = wg * atoms.FWHM_TO_SIGMA, 0.5 * wl
    r = R * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    x, y, z = r * np.cos(th), r * np.sin(th), L * rng.random(n)
    count = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for _ in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            return count
        m = idx.size
        nu = rng.normal(0.0, sig, m) + (g * rng.standard_cauchy(m) if g > 0 else 0.0)
        kap = k0 * atoms.voigt(nu, wg, wl)
        step = -np.log1p(-rng.random(m)) / kap
        mu = 2 * rng.random(m) - 1
        ph = 2 * np.pi * rng.random(m)
        st = np.sqrt(1 - mu**2)
        ux, uy, uz = st * np.cos(ph), st * np.sin(ph), mu
        xi, yi, zi = x[idx], y[idx], z[idx]
        a = ux**2 + uy**2
        b = 2 * (xi * ux + yi * uy)
        c = xi**2 + yi**2 - R**2
        with np.errstate(divide="ignore", invalid="ignore"):
            t_wall = np.where(a > 0, (-b + np.sqrt(np.maximum(b * b - 4 * a * c, 0))) / (2 * a), np.inf)
            t_cap = np.where(uz > 0, (L - zi) / uz, np.where(uz < 0, -zi / uz, np.inf))
        hit = step < np.minimum(t_wall, t_cap)
        alive[idx[~hit]] = False
        ab = idx[hit]
        sa = step[hit]
        count[ab] += 1
        x[ab] += sa * ux[hit]
        y[ab] += sa * uy[hit]
        z[ab] += sa * uz[hit]
        if q > 0:
            alive[ab[rng.random(ab.size) < q]] = False
    raise NumericalError("photon walk did not terminate", {"max_steps": max_steps})


def multiplicity_monte_carlo(
    cell, pops, q, n_photons, seed, *, pressure_broadened=False, density=None,
    chunk=4096, workers=1, max_steps=1_000_000,
):
    """Photon random-walk estimate of M with its standard error.

    Photons are processed in fixed-size chunks, each with its own stream
    spawned from ``seed``, so the result does not depend on ``workers``.
    """
    if n_photons < 1000:
        raise ArgumentError("n_photons must be at least 1000")
    if not 0.0 <= q <= 1.0:
        raise ArgumentError("q must lie in [0, 1]")
    k0 = _absorber_coefficient(cell, pops, density)
    if k0 == 0.0:
        return TrappingModelResult(0.0, 1.0, "MonteCarlo", 0.0)
    wg, wl = _profile_widths(cell, pressure_broadened)
    sizes = [chunk] * (n_photons // chunk)
    if n_photons % chunk:
        sizes.append(n_photons % chunk)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    args = [(s, n, k0, wg, wl, cell.radius, cell.length, q, max_steps) for s, n in zip(streams, sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda a: _mc_chunk(*a), args))
    else:
        parts = [_mc_chunk(*a) for a in args]
    counts = np.concatenate(parts).astype(float)
    M = counts.mean()
    stderr = counts.std(ddof=1) / np.sqrt(counts.size)
    return TrappingModelResult.from_multiplicity(M, q, "MonteCarlo", stderr)


# ------------------------------------------------------ rate equations


def _thermal_weights(kind):
    return (9 / 16, 7 / 16) if kind == "degeneracy" else (0.5, 0.5)


def steady_state_populations(cell, pump, trapping, q):
    """Steady-state (n1, n2, n3) of the three-level pumping model.

    Pumping moves |3> -> |2> at rate R. |2> decays (radiatively or by
    quenching) with branching b to |1>. A fraction (1-q) of the |2> -> |1>
    decays emit a photon that is reabsorbed by a |1> atom with probability
    r = 1 - p_esc, re-exciting it. Ground relaxation drives the populations
    toward the thermal weights.
    """
    R = pump.pump_rate
    w = pump.ground_relaxation
    b = pump.branching_to_target
    G = cell.line.decay_rate / max(1.0 - q, 1e-300)  # total |2> loss rate
    r = 1.0 - trapping.escape_probability
    th1, th3 = _thermal_weights(pump.thermal_weights)
    ft = r * (1.0 - q) * b * G  # re-excitation flux per unit n2
    # rows: d n1/dt, d n3/dt, conservation
    A = np.array([
        [-w * th3, b * G - ft, w * th1],
        [w * th3, (1 - b) * G, -R - w * th1],
        [1.0, 1.0, 1.0],
    ])
    if R == 0 and w == 0:
        raise ArgumentError("pump_rate and ground_relaxation cannot both be zero")
    n1, n2, n3 = np.linalg.solve(A, [0.0, 0.0, 1.0])
    return float(n1), float(n2), float(n3)


def steady_state_polarization(cell, pump, trapping, q):
    """P = n1 / (n1 + n3) at steady state."""
    n1, _, n3 = steady_state_populations(cell, pump, trapping, q)
    return n1 / (n1 + n3)


def self_consistent_polarization(
    cell, pump, q, *, method="analytic", n_photons=10_000, seed=0,
    pressure_broadened=False, tol=1e-10, max_iter=60, mc_xtol=1e-6,
):
    """Iterate P -> M(P) -> P until the absorber population is consistent.

    Returns (P, trapping result). The number of absorbers seen by
    fluorescence photons is n * P. With a fixed seed the Monte Carlo map
    P -> M(P) -> P is piecewise constant, so plain iteration can cycle;
    that case is solved by bracketing instead (see ``_mc_fixed_point``).
    """
    if method != "analytic":
        return _mc_fixed_point(cell, pump, q, n_photons, seed, pressure_broadened, mc_xtol)
    P = 1.0
    history = []
    for _ in range(max_iter):
        pops = atoms.GroundPopulations.from_polarization(P)
        trap = multiplicity_analytic(cell, pops, q, pressure_broadened=pressure_broadened)
        P_new = steady_state_polarization(cell, pump, trap, q)
        history.append(P_new)
        if abs(P_new - P) < tol:
            return P_new, trap
        # P(M(P)) is decreasing in P, so plain iteration can oscillate
        P = 0.5 * (P + P_new) if len(history) > 8 else P_new
    raise NumericalError("pumping fixed point did not converge", {"history": history})


def _mc_fixed_point(cell, pump, q, n_photons, seed, pressure_broadened, xtol):
    """Root of P_ss(M_mc(P)) - P on [0, 1].

    The map is decreasing in P (more absorbers, more trapping), positive at
    P = 0 and non-positive at P = 1, so bracketing always converges.
    """
    cache = {}

    def trap_at(P):
        if P not in cache:
            cache[P] = multiplicity_monte_carlo(cell, atoms.GroundPopulations.from_polarization(P), q,
                                                n_photons, seed, pressure_broadened=pressure_broadened)
        return cache[P]

    def g(P):
        return steady_state_polarization(cell, pump, trap_at(P), q) - P

    if g(1.0) >= 0.0:
        return 1.0, trap_at(1.0)
    P = brentq(g, 0.0, 1.0, xtol=xtol)
    return float(P), trap_at(P)


def pumping_cell(T, buffer, pump_line, length=7.5, radius=1.0):
    return atoms.VaporCell(atoms.optical_line(pump_line), buffer, T, length, radius)


def polarization_curve(
    T_range, buffer, pump_line, pump, *, length=7.5, radius=1.0, method="analytic",
    n_photons=10_000, seed=0, pressure_broadened=False,
):
    """Spin polarisation vs temperature for one buffer gas and pump line."""
    T = np.asarray(T_range, dtype=float)
    if T.ndim != 1 or T.size == 0 or np.any(np.diff(T) <= 0):
        raise ArgumentError("temperature grid must be non-empty and ascending")
    pump = PumpConfig(pump_line, pump.pump_rate, pump.ground_relaxation,
                      pump.branching_to_target, pump.thermal_weights)
    P, M, Q = [], [], []
    for Ti in T:
        cell = pumping_cell(Ti, buffer, pump_line, length, radius)
        q = quench_branching(cell.line, quenching_rate(buffer, Ti, cell.line))
        p, trap = self_consistent_polarization(
            cell, pump, q, method=method, n_photons=n_photons, seed=seed,
            pressure_broadened=pressure_broadened,
        )
        P.append(p)
        M.append(trap.multiplicity)
        Q.append(q)
    return PolarizationCurve(T, np.array(P), buffer, pump_line, np.array(M), np.array(Q))


def calibrate_pump_rate(
    target=0.999, T=343.15, buffer=None, pump_line="D1", pump=None, *,
    length=7.5, radius=1.0, bracket=(1e-7, 1e2),
):
    """Pump rate (ns^-1) giving polarisation ``target`` at the reference point."""
    buffer = buffer or atoms.buffer_gas("N2", 10.0)
    pump = pump or PumpConfig(pump_line)
    cell = pumping_cell(T, buffer, pump_line, length, radius)
    q = quench_branching(cell.line, quenching_rate(buffer, T, cell.line))

    def f(log_r):
        cfg = PumpConfig(pump_line, float(np.exp(log_r)), pump.ground_relaxation,
                         pump.branching_to_target, pump.thermal_weights)
        return self_consistent_polarization(cell, cfg, q)[0] - target

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    if f(lo) * f(hi) > 0:
        raise NumericalError("target polarisation not bracketed", {"bracket": bracket})
    return float(np.exp(brentq(f, lo, hi, xtol=1e-10)))
