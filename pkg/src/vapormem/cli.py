"""Command-line driver.

    vapormem pumping-curve  [--config cfg.yaml] [--set key=value ...]
    vapormem memory-sweep   ...
    vapormem synthesize     ...   (kind: spectrum | diffusion)
    vapormem fit            ...   (kind: spectrum | diffusion)
    vapormem replay manifest.json

Each run writes its outputs and a manifest.json (resolved config, config
hash, seed, version, output checksums) into output_dir. Exit codes: 0 ok,
2 usage/config/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys

import numpy as np
import yaml

from . import __version__, atoms, diffusion, memory, pumping, spectrofit
from .errors import ArgumentError, DomainError, NumericalError

log = logging.getLogger("vapormem")

CONFIG_SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


COMMON = {"schema_version": CONFIG_SCHEMA_VERSION, "seed": 0, "output_dir": "out"}

DEFAULTS = {
    "pumping-curve": {
        "temperatures_K": None,  # explicit list overrides the range below
        "T_min_K": 318.15,
        "T_max_K": 368.15,
        "T_step_K": 2.5,
        "curves": ["N2:10:D1", "N2:10:D2", "Ne:20:D1"],
        "pump_rate": None,  # ns^-1; None calibrates
        "calibration_T_K": 343.15,
        "calibration_target": 0.999,
        "ground_relaxation": 1e-6,
        "branching_to_target": 0.5,
        "thermal_weights": "degeneracy",
        "method": "analytic",
        "n_photons": 10000,
        "pressure_broadened_trapping": False,
        "length_cm": 7.5,
        "radius_cm": 1.0,
    },
    "memory-sweep": {
        "omega_GHz": None,  # explicit list overrides the range below
        "omega_min": 0.5,
        "omega_max": 12.0,
        "omega_step": 0.5,
        "delta_GHz": [15.2],
        "temperatures_K": [343.15],
        "polarization": 1.0,
        "bandwidth_GHz": 1.2,
        "buffer": "N2",
        "pressure_torr": 10.0,
        "length_cm": 7.5,
        "kappa_cal": memory.DEFAULT_KAPPA_CAL,
        "stark_cal": memory.DEFAULT_STARK_CAL,
        "fwm_on": True,
        "stark_on": True,
        "nofwm_companion": True,
        "spinwave_decay": 0.0,
        "nz": 64,
        "ntau": 256,
        "check_convergence": True,
    },
    "synthesize": {
        "kind": "spectrum",
        # spectrum
        "T_K": 343.15,
        "d": 3.0,
        "polarization": 0.9,
        "buffer": "N2",
        "pressure_torr": 10.0,
        "line": "D2",
        "baseline_slope": 0.0,
        "baseline_offset": 1.0,
        "noise_sigma": 0.01,
        "n_points": 1024,
        "nu_min": -9.0,
        "nu_max": 10.0,
        # diffusion
        "D_cm2_per_s": 15.0,
        "gamma0_per_ms": 0.1,
        "waist_mm": 1.0,
        "nx": 128,
        "ny": 128,
        "pixel_pitch_mm": 0.05,
        "n_frames": 40,
        "frame_format": "bin",
    },
    "fit": {
        "kind": "spectrum",
        "input": None,
        "n_restarts": 4,
        "pressure_torr": 10.0,
        "k_min": diffusion.K_MIN_DEFAULT,
        "k_max": diffusion.K_MAX_DEFAULT,
        "binning": "shell",
        "quadrants": False,
    },
}

SYNTH_KEYS = {
    "spectrum": {"T_K", "d", "polarization", "buffer", "pressure_torr", "line", "baseline_slope",
                 "baseline_offset", "noise_sigma", "n_points", "nu_min", "nu_max"},
    "diffusion": {"D_cm2_per_s", "gamma0_per_ms", "pressure_torr", "waist_mm", "nx", "ny",
                  "pixel_pitch_mm", "n_frames", "noise_sigma", "frame_format"},
}


# ----------------------------------------------------------------- config


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, val = text.split("=", 1)
    return key.strip(), yaml.safe_load(val)


def resolve_config(command, path=None, overrides=()):
    cfg = dict(COMMON)
    cfg.update(copy.deepcopy(DEFAULTS[command]))
    user = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
    for k, v in overrides:
        user[k] = v
    for k, v in user.items():
        if k not in cfg:
            raise ConfigError(f"unknown config key: {k}")
        cfg[k] = v
    if cfg["schema_version"] != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version: {cfg['schema_version']}")
    if command == "synthesize":
        kind = cfg["kind"]
        if kind not in SYNTH_KEYS:
            raise ConfigError(f"kind must be spectrum or diffusion, got {kind!r}")
        other = set().union(*SYNTH_KEYS.values()) - SYNTH_KEYS[kind]
        # off-kind keys left at their defaults (as in a replayed manifest) are harmless
        bad = sorted(k for k in user if k in other and user[k] != DEFAULTS["synthesize"][k])
        if bad:
            raise ConfigError(f"config key not valid for kind={kind}: {bad[0]}")
    if command == "fit" and cfg["kind"] not in ("spectrum", "diffusion"):
        raise ConfigError(f"kind must be spectrum or diffusion, got {cfg['kind']!r}")
    return cfg


def _portable(cfg):
    # output location does not affect results, so it is left out of hashes and manifests
    return {k: v for k, v in cfg.items() if k != "output_dir"}


def config_hash(cfg):
    blob = json.dumps(_portable(cfg), sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


# ----------------------------------------------------------------- output


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def write_csv(path, columns, rows, header):
    with open(path, "w", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(fmt(r[c]) for c in columns) + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_manifest(command, cfg, outputs, extra=None):
    outdir = cfg["output_dir"]
    man = {
        "tool": "vapormem",
        "version": __version__,
        "command": command,
        "config": _portable(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "outputs": {os.path.relpath(p, outdir): sha256_file(p) for p in sorted(outputs) if os.path.isfile(p)},
    }
    if extra:
        man.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return path


def _header(command, cfg, units):
    return [f"vapormem {__version__} {command}", f"config_hash: {config_hash(cfg)}",
            f"seed: {cfg['seed']}", f"units: {units}"]


# ---------------------------------------------------------------- commands


def _temperatures(cfg):
    if cfg["temperatures_K"] is not None:
        return np.asarray(cfg["temperatures_K"], dtype=float)
    return np.arange(cfg["T_min_K"], cfg["T_max_K"] + 1e-9, cfg["T_step_K"])


def _parse_curve(entry):
    try:
        gas, p, line = entry.split(":")
        return gas, float(p), line
    except (AttributeError, ValueError):
        raise ConfigError(f"curves entries look like 'N2:10:D1', got {entry!r}") from None


def cmd_pumping_curve(cfg):
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    T = _temperatures(cfg)
    base = pumping.PumpConfig("D1", 1e-3, cfg["ground_relaxation"], cfg["branching_to_target"],
                              cfg["thermal_weights"])
    R = cfg["pump_rate"]
    if R is None:
        R = pumping.calibrate_pump_rate(cfg["calibration_target"], cfg["calibration_T_K"],
                                        atoms.buffer_gas("N2", 10.0), "D1", base,
                                        length=cfg["length_cm"], radius=cfg["radius_cm"])
    outputs, combined = [], {"T_K": T}
    for entry in cfg["curves"]:
        gas, p, line = _parse_curve(entry)
        pump = pumping.PumpConfig(line, R, cfg["ground_relaxation"], cfg["branching_to_target"],
                                  cfg["thermal_weights"])
        curve = pumping.polarization_curve(
            T, atoms.buffer_gas(gas, p), line, pump, length=cfg["length_cm"], radius=cfg["radius_cm"],
            method=cfg["method"], n_photons=cfg["n_photons"], seed=cfg["seed"],
            pressure_broadened=cfg["pressure_broadened_trapping"],
        )
        label = f"{gas}_{p:g}Torr_{line}"
        path = os.path.join(outdir, f"pumping_{label}.csv")
        rows = [dict(T_K=t, P=pp, M=m, q=q) for t, pp, m, q in
                zip(curve.temperatures, curve.polarization, curve.multiplicity, curve.quench)]
        write_csv(path, ["T_K", "P", "M", "q"], rows,
                  _header("pumping-curve", cfg, "T_K kelvin; P, M, q dimensionless") + [f"curve: {entry}",
                                                                                        f"pump_rate_per_ns: {R!r}"])
        outputs.append(path)
        combined[f"P_{label}"] = curve.polarization
    cols = list(combined)
    path = os.path.join(outdir, "pumping_combined.csv")
    write_csv(path, cols, [{c: combined[c][i] for c in cols} for i in range(T.size)],
              _header("pumping-curve", cfg, "T_K kelvin; P dimensionless"))
    outputs.append(path)
    write_manifest("pumping-curve", cfg, outputs, {"pump_rate_per_ns": R})
    return outputs


def cmd_memory_sweep(cfg):
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    if cfg["omega_GHz"] is not None:
        om = np.asarray(cfg["omega_GHz"], dtype=float)
    else:
        om = np.arange(cfg["omega_min"], cfg["omega_max"] + 1e-9, cfg["omega_step"])
    opts = memory.MemoryOptions(fwm_on=cfg["fwm_on"], stark_on=cfg["stark_on"],
                                spinwave_decay=cfg["spinwave_decay"], nz=cfg["nz"], ntau=cfg["ntau"],
                                check_convergence=cfg["check_convergence"])
    pops = atoms.GroundPopulations.from_polarization(cfg["polarization"])
    cols = ["omega_GHz", "delta_GHz", "T_K", "d", "eta", "eta_readin", "anti_stokes_energy", "converged_flag"]
    if cfg["nofwm_companion"]:
        cols.append("eta_nofwm")
    outputs = []
    for T in cfg["temperatures_K"]:
        cell = atoms.standard_cell(float(T), cfg["buffer"], cfg["pressure_torr"], "D2", cfg["length_cm"])
        for D in cfg["delta_GHz"]:
            ctrl = memory.ControlPulseTrain(1.0, cfg["bandwidth_GHz"], float(D))
            sw = memory.sweep_rabi(cell, pops, ctrl, om, opts, kappa_cal=cfg["kappa_cal"],
                                   stark_cal=cfg["stark_cal"], nofwm_companion=cfg["nofwm_companion"])
            path = os.path.join(outdir, f"memory_T{float(T):.2f}K_D{float(D):g}GHz.csv")
            write_csv(path, cols, list(sw.rows()),
                      _header("memory-sweep", cfg, "omega_GHz, delta_GHz GHz; T_K kelvin; others dimensionless")
                      + [f"kappa_cal: {cfg['kappa_cal']!r}", f"stark_cal: {cfg['stark_cal']!r}",
                         f"grid: nz={cfg['nz']} ntau={cfg['ntau']}"])
            outputs.append(path)
    write_manifest("memory-sweep", cfg, outputs,
                   {"calibration": {"kappa_cal": cfg["kappa_cal"], "stark_cal": cfg["stark_cal"],
                                    "coupling_scale": memory.COUPLING_SCALE}})
    return outputs


def cmd_synthesize(cfg):
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    if cfg["kind"] == "spectrum":
        cell = spectrofit.cell_for_optical_depth(cfg["T_K"], cfg["d"], cfg["buffer"], cfg["pressure_torr"], cfg["line"])
        grid = np.linspace(cfg["nu_min"], cfg["nu_max"], int(cfg["n_points"]))
        tr = spectrofit.synthesize_scan(cell, atoms.GroundPopulations.from_polarization(cfg["polarization"]),
                                        cfg["baseline_slope"], cfg["baseline_offset"], cfg["noise_sigma"],
                                        cfg["seed"], grid)
        path = os.path.join(outdir, "spectrum.csv")
        spectrofit.write_trace(path, tr)
        truth = {k: tr.metadata[k] for k in ("d", "polarization", "temperature_K", "baseline_slope", "baseline_offset")}
        outputs = [path]
    else:
        t = diffusion.default_timestamps(cfg["D_cm2_per_s"], cfg["gamma0_per_ms"], (cfg["nx"], cfg["ny"]),
                                         cfg["pixel_pitch_mm"], n=int(cfg["n_frames"]))
        s = diffusion.synthesize_hole_series(cfg["D_cm2_per_s"], cfg["gamma0_per_ms"], "gaussian",
                                             (int(cfg["nx"]), int(cfg["ny"])), t, cfg["noise_sigma"], cfg["seed"],
                                             cfg["pixel_pitch_mm"], waist=cfg["waist_mm"])
        sub = os.path.join(outdir, "series")
        diffusion.write_series(sub, s, cfg["frame_format"])
        truth = {"D_cm2_per_s": cfg["D_cm2_per_s"], "gamma0_per_ms": cfg["gamma0_per_ms"],
                 "pressure_torr": cfg["pressure_torr"]}
        outputs = [os.path.join(sub, f) for f in sorted(os.listdir(sub))]
    write_manifest("synthesize", cfg, outputs, {"truth": truth})
    return outputs


def cmd_fit(cfg):
    src = cfg["input"]
    if src is None:
        raise ConfigError("fit requires an input path (config key: input)")
    if not os.path.exists(src):
        raise ConfigError(f"input not found: {src}")
    outdir = cfg["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    if cfg["kind"] == "spectrum":
        if os.path.isdir(src):
            src = os.path.join(src, "spectrum.csv")
        if not os.path.isfile(src) or os.path.getsize(src) == 0:
            raise ConfigError(f"empty or missing spectrum file: {src}")
        tr = spectrofit.read_trace(src)
        fit = spectrofit.fit_scan(tr, spectrofit.default_guess(tr), n_restarts=cfg["n_restarts"], seed=cfg["seed"])
        result = fit.to_dict()
        path = os.path.join(outdir, "spectrum_fit.json")
    else:
        if not os.path.isdir(src):
            raise ConfigError(f"diffusion input must be a series directory: {src}")
        series = diffusion.read_series(src)
        if cfg["quadrants"]:
            fit = diffusion.quadrant_error_estimate(series, cfg["k_min"], cfg["k_max"], cfg["pressure_torr"])
        else:
            fit = diffusion.analyse_series(series, cfg["pressure_torr"], cfg["k_min"], cfg["k_max"], cfg["binning"])
        result = fit.to_dict()
        path = os.path.join(outdir, "diffusion_fit.json")
    with open(path, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    write_manifest("fit", cfg, [path])
    return [path]


COMMANDS = {
    "pumping-curve": cmd_pumping_curve,
    "memory-sweep": cmd_memory_sweep,
    "synthesize": cmd_synthesize,
    "fit": cmd_fit,
}


# -------------------------------------------------------------------- main


def build_parser():
    ap = argparse.ArgumentParser(prog="vapormem", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"vapormem {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("-o", "--output-dir", help="shortcut for --set output_dir=...")
    p = sub.add_parser("replay", help="re-run a previous run from its manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output-dir", help="write here instead of next to the manifest")
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "replay":
        if not os.path.exists(args.manifest):
            raise ConfigError(f"manifest not found: {args.manifest}")
        with open(args.manifest) as fh:
            man = json.load(fh)
        command, cfg = man["command"], man["config"]
        cfg["output_dir"] = args.output_dir or os.path.dirname(os.path.abspath(args.manifest))
        cfg = resolve_config(command, None, list(cfg.items()))
    else:
        command = args.command
        overrides = [parse_override(s) for s in args.set]
        if args.output_dir:
            overrides.append(("output_dir", args.output_dir))
        cfg = resolve_config(command, args.config, overrides)
    log.info("running %s (config %s)", command, config_hash(cfg)[:12])
    outputs = COMMANDS[command](cfg)
    for p in outputs:
        log.info("wrote %s", p)
    return outputs


def main(argv=None):
    try:
        run(argv)
    except (ConfigError, ArgumentError, DomainError, FileNotFoundError, KeyError, TypeError) as exc:
        print(f"vapormem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"vapormem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
