"""Diffusion constants from the decay of a pumped hole in the optical depth.

Units: lengths mm, times ms, wavenumbers rad/mm, decay rates 1/ms. Fitted
diffusion constants are reported in cm^2/s (1 mm^2/ms = 10 cm^2/s).
Each transverse Fourier mode of the perturbation decays as
exp(-(gamma0 + D k^2) t).
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import stats
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import ArgumentError, NumericalError

MM2_PER_MS_IN_CM2_PER_S = 10.0
K_MIN_DEFAULT = 1.0 / 10.0
K_MAX_DEFAULT = 1.0 / 0.0259
FLOOR_FACTOR = 3.0
# a mode must start this far above its noise floor to be fitted at all; the
# margin also covers mirror-extended images whose symmetric FFT elements are
# fully correlated, so a group has fewer independent noise samples
START_FACTOR = 5.0
T0_KELVIN = 295.15


@dataclass
class ImageSeries:
    frames: np.ndarray  # [nx, ny, nt]
    pixel_pitch: float  # mm
    timestamps: np.ndarray  # ms
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if self.frames.ndim != 3:
            raise ArgumentError("frames must be [nx, ny, nt]")
        if self.frames.shape[2] != self.timestamps.size:
            raise ArgumentError("one timestamp per frame required")
        if self.timestamps.size < 4:
            raise ArgumentError("need at least 4 frames")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ArgumentError("timestamps must be strictly increasing")
        if not self.pixel_pitch > 0:
            raise ArgumentError("pixel_pitch must be positive")


@dataclass
class ModeDecay:
    k_perp: float  # rad/mm
    amplitude_series: np.ndarray
    times: np.ndarray = None  # ms
    fitted_gamma: float = float("nan")  # 1/ms
    fit_r2: float = float("nan")
    gamma_stderr: float = float("nan")
    n_elements: int = 1
    noise_floor: float = 0.0
    method: str = ""


@dataclass
class DiffusionFit:
    gamma0: float  # 1/ms
    D: float  # cm^2/s
    d0: float  # cm^2/s
    pressure: float  # Torr
    confidence_95: tuple  # (D_lo, D_hi)
    gamma0_confidence_95: tuple = (float("nan"), float("nan"))
    n_modes: int = 0
    quadrant_D: tuple = ()

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


# ---------------------------------------------------------- conversions


def normalized_d0(D, pressure):
    """D0 = (p / 760 Torr) D(p)."""
    return pressure / 760.0 * D


def diffusion_constant(d0, pressure, T=None, T0=T0_KELVIN):
    """D(p, T) = D0 (760 / p) (T / T0)^(3/2); T=None leaves out the temperature factor."""
    if pressure <= 0:
        raise ArgumentError("pressure must be positive")
    D = d0 * 760.0 / pressure
    return D if T is None else D * (T / T0) ** 1.5


def fit_d0_through_origin(pressures, Ds):
    """Least-squares D0 from D = D0 760/p constrained through zero at p -> inf.

    Returns (D0, (lo, hi)) with a t-based 95% interval.
    """
    x = 760.0 / np.asarray(pressures, dtype=float)
    y = np.asarray(Ds, dtype=float)
    if x.size < 1:
        raise ArgumentError("need at least one pressure")
    d0 = float(x @ y / (x @ x))
    if x.size < 2:
        return d0, (float("nan"), float("nan"))
    s2 = np.sum((y - d0 * x) ** 2) / (x.size - 1)
    se = np.sqrt(s2 / (x @ x))
    tq = stats.t.ppf(0.975, x.size - 1)
    return d0, (d0 - tq * se, d0 + tq * se)


# ------------------------------------------------------------ synthesis


def wavenumbers(nx, ny, pitch):
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=pitch)
    ky = 2 * np.pi * np.fft.fftfreq(ny, d=pitch)
    return kx[:, None], ky[None, :]


def hole_profile(name, nx, ny, pitch, **params):
    """Initial optical-depth perturbation on the pixel grid.

    gaussian: depth * exp(-2 r^2 / w^2) centred at ``center`` (mm, default
        grid centre, which falls between pixels for even sizes).
    cosine:   depth * cos(k0 x); k0 is snapped to the nearest FFT bin.
    """
    x = (np.arange(nx) - (nx - 1) / 2) * pitch
    y = (np.arange(ny) - (ny - 1) / 2) * pitch
    X, Y = np.meshgrid(x, y, indexing="ij")
    depth = params.get("depth", 1.0)
    if name == "gaussian":
        w = params.get("waist", 1.0)
        cx, cy = params.get("center", (0.0, 0.0))
        return -depth * np.exp(-2 * ((X - cx) ** 2 + (Y - cy) ** 2) / w**2)
    if name == "cosine":
        dk = 2 * np.pi / (nx * pitch)
        k0 = round(params.get("k0", 1.0) / dk) * dk
        return depth * np.cos(k0 * (X - x[0]))
    raise ArgumentError(f"unknown hole profile {name!r}")


def default_timestamps(D, gamma0, shape=(128, 128), pitch=0.05, k_min=K_MIN_DEFAULT, n=40):
    """n frames spanning three decay times of the slowest in-window mode."""
    dk = 2 * np.pi / (max(shape) * pitch)
    k_slow = max(k_min, dk)
    rate = gamma0 + D / MM2_PER_MS_IN_CM2_PER_S * k_slow**2
    if rate <= 0:
        return np.linspace(0.0, 1.0, n)
    return np.linspace(0.0, 3.0 / rate, n)


def synthesize_hole_series(D, gamma0, hole_profile_name="gaussian", grid=(128, 128), timestamps=None,
                           noise_sigma=0.0, seed=0, pixel_pitch=0.05, nyquist_tol=1e-8, **profile):
    """Exact Fourier-domain evolution of a hole under diffusion and uniform decay.

    ``D`` is in cm^2/s, ``gamma0`` in 1/ms and ``timestamps`` in ms.
    """
    nx, ny = grid
    if timestamps is None:
        timestamps = default_timestamps(D, gamma0, grid, pixel_pitch)
    t = np.asarray(timestamps, dtype=float)
    f0 = hole_profile(hole_profile_name, nx, ny, pixel_pitch, **profile)
    F0 = np.fft.fft2(f0)
    # spectral content in the outer 10% of either axis counts as aliased
    fx = np.abs(np.fft.fftfreq(nx))[:, None]
    fy = np.abs(np.fft.fftfreq(ny))[None, :]
    edge = (fx > 0.45) | (fy > 0.45)
    if np.max(np.abs(F0[edge]), initial=0.0) > nyquist_tol * np.max(np.abs(F0)):
        raise ArgumentError("hole profile is not band-limited below the grid Nyquist frequency")
    kx, ky = wavenumbers(nx, ny, pixel_pitch)
    rate = gamma0 + D / MM2_PER_MS_IN_CM2_PER_S * (kx**2 + ky**2)
    frames = np.fft.ifft2(F0[:, :, None] * np.exp(-rate[:, :, None] * t[None, None, :]), axes=(0, 1)).real
    if noise_sigma > 0:
        frames = frames + np.random.default_rng(seed).normal(0.0, noise_sigma, frames.shape)
    meta = dict(D_cm2_per_s=D, gamma0_per_ms=gamma0, profile=hole_profile_name, seed=seed,
                noise_sigma=noise_sigma, **{k: v for k, v in profile.items() if np.isscalar(v)})
    return ImageSeries(frames, pixel_pitch, t, meta)


# -------------------------------------------------------------- analysis


def transverse_fft(series, binning="shell", transform="fft"):
    """Mode amplitudes vs time from the 2-D transform of every frame.

    binning:
      "shell"   groups elements sharing exactly the same |k| (default);
                every group then decays as a single exponential.
      "radial"  annular bins one k step of the shorter axis wide; cheaper
                but mixes decay rates inside a bin.
      "element" one mode per element (half plane for the FFT).
    transform:
      "fft"     periodic boundaries.
      "dct"     orthonormal DCT-II, i.e. an even extension about the image
                edges; k = pi m / (n pitch). Coefficients stay independent,
                unlike the FFT of an explicitly mirrored image.
    A group amplitude is sqrt(sum |F|^2 / N) over its elements (FFT) or
    sqrt(sum F^2) (orthonormal DCT), so both carry the pixel noise variance
    per element.
    """
    nx, ny, nt = series.frames.shape
    N = nx * ny
    if transform == "fft":
        F = np.fft.fft2(series.frames, axes=(0, 1))
        P = np.abs(F) ** 2 / N
        kx, ky = wavenumbers(nx, ny, series.pixel_pitch)
    elif transform == "dct":
        F = sfft.dctn(series.frames, type=2, axes=(0, 1), norm="ortho")
        P = F**2
        kx = (np.pi * np.arange(nx) / (nx * series.pixel_pitch))[:, None]
        ky = (np.pi * np.arange(ny) / (ny * series.pixel_pitch))[None, :]
    else:
        raise ArgumentError(f"unknown transform {transform!r}")
    K2 = np.broadcast_to(kx**2 + ky**2, (nx, ny))
    K = np.sqrt(K2)
    noise = _noise_power(P, K, kx, ky)
    if binning == "element":
        half = (ky > 0) | ((ky == 0) & (kx >= 0)) if transform == "fft" else np.ones((nx, ny), bool)
        sel = np.broadcast_to(half, K.shape)
        return [ModeDecay(float(K[i, j]), np.sqrt(P[i, j]), series.timestamps, n_elements=1,
                          noise_floor=float(np.sqrt(noise))) for i, j in np.argwhere(sel)]
    if binning == "shell":
        dk2 = min(kx[1, 0], ky[0, 1]) ** 2
        labels = np.round(K2 / dk2, 6)
    elif binning == "radial":
        dk = min(kx[1, 0], ky[0, 1])
        labels = np.floor(K / dk + 0.5)
    else:
        raise ArgumentError(f"unknown binning {binning!r}")
    uniq, inv = np.unique(labels, return_inverse=True)
    inv = inv.reshape(labels.shape)
    Pf = P.reshape(N, nt)
    power = np.zeros((uniq.size, nt))
    np.add.at(power, inv.ravel(), Pf)
    count = np.bincount(inv.ravel(), minlength=uniq.size)
    k2mean = np.bincount(inv.ravel(), weights=K2.ravel(), minlength=uniq.size) / count
    return [ModeDecay(float(np.sqrt(k2mean[i])), np.sqrt(power[i]), series.timestamps,
                      n_elements=int(count[i]), noise_floor=float(np.sqrt(noise * count[i])))
            for i in range(uniq.size)]


def _noise_power(P, K, kx, ky):
    """White-noise power per FFT element: mean power in the outer part of the spectrum.

    The mean (not the median) stays unbiased for mirror-extended images, whose
    coefficients are real rather than complex Gaussian.
    """
    kmax = min(np.abs(kx).max(), np.abs(ky).max())
    hi = K > 0.8 * kmax
    if not hi.any():
        return 0.0
    return float(np.mean(P[hi]))


def _log_linear(t, a, floor=0.0):
    """Weighted regression of ln a on t.

    With additive noise of rms ``floor`` the variance of ln a is about
    (floor / a)^2 / 2, so points are weighted by (a / floor)^2.
    """
    y = np.log(a)
    w = (a / floor) ** 2 if floor > 0 else np.ones_like(a)
    w = w / w.max()
    A = np.column_stack([np.ones_like(t), -t])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    r = y - A @ coef
    dof = max(t.size - 2, 1)
    cov = np.linalg.inv((A * w[:, None]).T @ A) * np.sum(w * r**2) / dof
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 - np.sum(w * r**2) / ss_tot if ss_tot > 0 else 1.0
    return coef[1], np.sqrt(cov[1, 1]), r2


def _direct_fit(t, a, floor, gamma_guess):
    def f(t, A, g):
        return np.sqrt(A**2 * np.exp(-2 * g * t) + floor**2)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        p, cov = curve_fit(f, t, a, p0=[max(a[0], floor), max(gamma_guess, 1e-6)], maxfev=5000)
    pred = f(t, *p)
    ss_tot = np.sum((a - a.mean()) ** 2)
    r2 = 1.0 - np.sum((a - pred) ** 2) / ss_tot if ss_tot > 0 else 1.0
    se = np.sqrt(cov[1, 1]) if np.all(np.isfinite(cov)) else float("inf")
    return p[1], se, r2


def fit_mode_decays(modes, k_min=K_MIN_DEFAULT, k_max=K_MAX_DEFAULT):
    """Exponential decay rate of every mode with k_min <= k <= k_max.

    Log-linear regression is used when every amplitude exceeds three times
    the mode's noise floor; otherwise a direct fit of
    sqrt(A^2 exp(-2 gamma t) + floor^2), flagged with method="direct".
    Modes that start below the noise threshold or whose fit fails are dropped.
    """
    if not k_max > k_min:
        raise ArgumentError("empty k window")
    out = []
    for m in modes:
        if not (k_min <= m.k_perp <= k_max):
            continue
        t, a = np.asarray(m.times, dtype=float), np.asarray(m.amplitude_series, dtype=float)
        if t.size < 4:
            raise ArgumentError("need at least 4 time points per mode")
        if np.all(a > FLOOR_FACTOR * m.noise_floor) and np.all(a > 0):
            g, se, r2 = _log_linear(t, a, m.noise_floor)
            method = "log-linear"
        else:
            good = a > FLOOR_FACTOR * m.noise_floor
            if good.sum() < 2 or not a[0] > START_FACTOR * m.noise_floor:
                continue
            g0 = _log_linear(t[good], a[good], m.noise_floor)[0] if good.sum() >= 3 else 1.0 / (t[-1] - t[0])
            try:
                g, se, r2 = _direct_fit(t, a, m.noise_floor, g0)
            except RuntimeError:
                continue
            method = "direct"
        out.append(ModeDecay(m.k_perp, a, t, float(g), float(r2), float(se), m.n_elements, m.noise_floor, method))
    return out


def fit_diffusion(decays, pressure, weighted=True):
    """Fit gamma = gamma0 + D k^2 to fitted mode decays."""
    k = np.array([m.k_perp for m in decays])
    g = np.array([m.fitted_gamma for m in decays])
    se = np.array([m.gamma_stderr for m in decays])
    ok = np.isfinite(g) & np.isfinite(se) if weighted else np.isfinite(g)
    k, g, se = k[ok], g[ok], se[ok]
    if np.unique(np.round(k, 12)).size < 5:
        raise ArgumentError("need at least 5 distinct k values")
    A = np.column_stack([np.ones_like(k), k**2])
    if weighted:
        w = 1.0 / np.maximum(se, 1e-12 * np.max(np.abs(g)) + 1e-300) ** 2
    else:
        w = np.ones_like(k)
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    if np.linalg.cond(Aw) > 1e12:
        raise NumericalError("ill-conditioned design matrix in quadratic fit", {"cond": float(np.linalg.cond(Aw))})
    coef, *_ = np.linalg.lstsq(Aw, g * sw, rcond=None)
    resid = (g - A @ coef) * sw
    dof = max(k.size - 2, 1)
    cov = np.linalg.inv(Aw.T @ Aw) * (resid @ resid) / dof
    tq = stats.t.ppf(0.975, dof)
    gamma0, Dmm = coef
    D = float(Dmm * MM2_PER_MS_IN_CM2_PER_S)
    hw = float(tq * np.sqrt(cov[1, 1]) * MM2_PER_MS_IN_CM2_PER_S)
    hw0 = float(tq * np.sqrt(cov[0, 0]))
    return DiffusionFit(float(gamma0), D, normalized_d0(D, pressure), float(pressure),
                        (D - hw, D + hw), (gamma0 - hw0, gamma0 + hw0), int(k.size))


def analyse_series(series, pressure, k_min=K_MIN_DEFAULT, k_max=K_MAX_DEFAULT, binning="shell", transform="fft"):
    """transverse_fft -> fit_mode_decays -> fit_diffusion."""
    return fit_diffusion(fit_mode_decays(transverse_fft(series, binning, transform), k_min, k_max), pressure)


def quadrants(series, mirror=True):
    """Four quadrant series, each flipped so the shared centre corner sits at the origin.

    With ``mirror`` every quadrant is even-extended to twice its size, which
    keeps the hole whole and avoids a cut edge in the FFT. Without it the
    flipped quadrant is returned as is, for use with the DCT.
    """
    nx, ny, _ = series.frames.shape
    hx, hy = nx // 2, ny // 2
    if hx < 16 or hy < 16:
        raise ArgumentError("quadrants must be at least 16 x 16 pixels")
    f = series.frames
    parts = [f[:hx, :hy][::-1, ::-1], f[:hx, ny - hy:][::-1, :], f[nx - hx:, :hy][:, ::-1], f[nx - hx:, ny - hy:]]
    out = []
    for q in parts:
        if mirror:
            q = np.concatenate([q[::-1], q], axis=0)
            q = np.concatenate([q[:, ::-1], q], axis=1)
        out.append(ImageSeries(np.ascontiguousarray(q), series.pixel_pitch, series.timestamps, dict(series.metadata)))
    return out


def quadrant_error_estimate(series, k_min=K_MIN_DEFAULT, k_max=K_MAX_DEFAULT, pressure=10.0):
    """Pipeline per quadrant (DCT of the flipped quadrant); mean D with spread-based 95% bounds."""
    fits = [analyse_series(q, pressure, k_min, k_max, transform="dct") for q in quadrants(series, mirror=False)]
    Ds = np.array([f.D for f in fits])
    g0 = np.array([f.gamma0 for f in fits])
    tq = stats.t.ppf(0.975, len(fits) - 1)
    hw = tq * Ds.std(ddof=1) / np.sqrt(len(fits))
    hw0 = tq * g0.std(ddof=1) / np.sqrt(len(fits))
    D = float(Ds.mean())
    return DiffusionFit(float(g0.mean()), D, normalized_d0(D, pressure), float(pressure),
                        (D - hw, D + hw), (g0.mean() - hw0, g0.mean() + hw0),
                        int(np.mean([f.n_modes for f in fits])), tuple(float(x) for x in Ds))


# ------------------------------------------------------------------- I/O


def write_series(directory, series, fmt="bin"):
    """One file per frame plus manifest.json."""
    os.makedirs(directory, exist_ok=True)
    nx, ny, nt = series.frames.shape
    files = []
    for i in range(nt):
        frame = np.ascontiguousarray(series.frames[:, :, i])
        if fmt == "bin":
            name = f"frame_{i:04d}.bin"
            frame.astype("<f8").tofile(os.path.join(directory, name))
        elif fmt == "txt":
            name = f"frame_{i:04d}.txt"
            np.savetxt(os.path.join(directory, name), frame, fmt="%.17g", delimiter=",")
        else:
            raise ArgumentError(f"unknown frame format {fmt!r}")
        files.append(name)
    manifest = dict(pixel_pitch_mm=series.pixel_pitch, timestamps_ms=[float(t) for t in series.timestamps],
                    shape=[nx, ny], format=fmt, dtype="<f8", files=files, metadata=series.metadata)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def read_series(directory):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise ArgumentError(f"{directory}: missing manifest.json")
    with open(path) as fh:
        man = json.load(fh)
    nx, ny = man["shape"]
    frames = []
    for name in man["files"]:
        p = os.path.join(directory, name)
        if man["format"] == "bin":
            a = np.fromfile(p, dtype=man.get("dtype", "<f8"))
        else:
            a = np.loadtxt(p, delimiter=",", ndmin=2)
        if a.size != nx * ny:
            raise ArgumentError(f"{p}: expected {nx * ny} values, found {a.size}")
        frames.append(a.reshape(nx, ny))
    return ImageSeries(np.stack(frames, axis=2), man["pixel_pitch_mm"], man["timestamps_ms"], man.get("metadata", {}))
