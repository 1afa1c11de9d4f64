"""Command-line pipeline: ``solve``, ``couple``, ``spectrum``, ``fit``, ``sweep``.

Every command reads a YAML run config (``--config``), writes plot-ready CSV
and JSON into the output directory and finishes with ``manifest.json``
(config hash, seed, package versions, input and output hashes). Outputs carry
no timestamps, so identical inputs give byte-identical files.

``NANOCOUPLING_OUTPUT_ROOT`` (if set) is the base for relative output
directories.

Config sections (all optional)::

    seed: 1
    resonator: {constriction_width_m: 42e-9, constriction_length_m: 5e-7, ...}
    mesh: {target_cells: 4000}
    field_map: {box_m: [[x0, x1], [y0, y1], [z0, z1]], spacing_m: 1e-8,
                mode_threshold: 0.05, mode_box_m: [[...], [...], [...]], mode_spacing_m: 1e-7}
    species: {g: 2.0, S: 0.5, gamma_hz: 1.25e7, T2_s: 8e-8, molecular_density_m3: 2.1e27, efficiency: 1.0}
    deposit:
      heightmap: map.txt            # or
      synthetic: {count: 30, region_m: [x0, x1, y0, y1], radius_range_m: [5e-8, 1.5e-7]}
      cell_size_m: 3e-9
      active_region_m: [x0, x1, y0, y1]
      total_molecules: 1.6e8        # rescale counts to this total
      write_csv: false
    temperature_k: 0.044
    field_direction: y              # x, y, z or [hx, hy, hz]
    field_t: 0.05                   # default: resonance field
    spectrum: {G_N_hz: 2.0e6, gamma_hz: 6.5e7, field_span_t: 0.01, n_field: 81,
               omega_span_hz: 5.0e6, n_omega: 201}
    sweep: {widths_m: [...], heights_m: [...], temperatures_k: [...]}
    output: {dir: out}
"""

import argparse
import hashlib
import json
import os
from pathlib import Path
import sys
import warnings

import numpy as np
import yaml

from . import __version__
from .core import TWO_PI, DomainError, from_hz, resonance_field
from .geometry import GeometryError, spec_from_mapping
from .current_solver import SolverError, solve_resonator
from .deposit import (Heightmap, Rectangle, SpinSpecies, default_active_region, synthetic_aggregates,
                      voxelize)
from .field_map import field_grid, mode_volume
from .coupling import couple_deposit, sweep_width, temperature_curve, deposit_fields
from .spectroscopy import (KAPPA_HEADER, TRACE_HEADER, SchemaError, TransmissionParams, field_linewidth_H,
                           fit_kappa_curve, fit_lorentzian, fit_sqrtN, kappa_of_field, read_kappa_csv,
                           read_table, read_trace_csv, transmission_map, write_kappa_csv)

OUTPUT_ROOT_ENV = "NANOCOUPLING_OUTPUT_ROOT"
SQRTN_HEADER = ("N_eff", "G_N_over_2pi_Hz")

SCHEMA = {
    "seed": None, "resonator": None, "temperature_k": None, "field_direction": None, "field_t": None,
    "mesh": {"target_cells"},
    "field_map": {"box_m", "spacing_m", "mode_threshold", "mode_box_m", "mode_spacing_m"},
    "species": {"g", "S", "gamma_hz", "T2_s", "molecular_density_m3", "efficiency"},
    "deposit": {"heightmap", "synthetic", "cell_size_m", "active_region_m", "total_molecules", "write_csv"},
    "spectrum": {"G_N_hz", "gamma_hz", "field_span_t", "n_field", "omega_span_hz", "n_omega"},
    "sweep": {"widths_m", "heights_m", "temperatures_k"},
    "output": {"dir"},
}
SYNTHETIC_KEYS = {"count", "region_m", "radius_range_m"}
DIRECTIONS = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


class ConfigError(ValueError):
    """Invalid run configuration (message names the offending key)."""


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunConfig:
    """Validated run configuration with all paths resolved."""

    def __init__(self, data, base_dir, source=None):
        if not isinstance(data, dict):
            raise ConfigError("config must be a key/value mapping")
        for key, value in data.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {key}")
            allowed = SCHEMA[key]
            if allowed is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {key}: expected a mapping")
                for sub in value:
                    if sub not in allowed:
                        raise ConfigError(f"unknown config key: {key}.{sub}")
        self.data = data
        self.base_dir = Path(base_dir)
        self.source = source
        self.inputs = {}
        if source is not None:
            self.inputs[str(source)] = _sha256(source)
        hm = self.section("deposit").get("heightmap")
        if hm is not None:
            p = self.resolve(hm)
            if not p.is_file():
                raise FileNotFoundError(f"heightmap file not found: {p}")
            self.inputs[str(p)] = _sha256(p)
        syn = self.section("deposit").get("synthetic")
        if syn is not None:
            if not isinstance(syn, dict):
                raise ConfigError("config key deposit.synthetic: expected a mapping")
            for sub in syn:
                if sub not in SYNTHETIC_KEYS:
                    raise ConfigError(f"unknown config key: deposit.synthetic.{sub}")

    @classmethod
    def load(cls, path):
        if path is None:
            return cls({}, Path.cwd())
        path = Path(path).resolve()
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        return cls(data, path.parent, source=path)

    def section(self, name):
        return self.data.get(name) or {}

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    def number(self, section, key, default):
        sec = self.section(section) if section else self.data
        value = sec.get(key, default)
        try:
            return float(value)
        except (TypeError, ValueError):
            name = f"{section}.{key}" if section else key
            raise ConfigError(f"config key {name}: not a number ({value!r})") from None

    def numbers(self, section, key, default=()):
        value = self.section(section).get(key, default)
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"config key {section}.{key}: expected a list of numbers") from None

    @property
    def seed(self):
        return int(self.data.get("seed", 0))

    def spec(self):
        return spec_from_mapping(self.section("resonator"))

    def species(self):
        s = self.section("species")
        kw = {}
        for key, attr, scale in (("g", "g", 1.0), ("S", "S", 1.0), ("gamma_hz", "gamma", TWO_PI),
                                 ("T2_s", "T2", 1.0), ("molecular_density_m3", "molecular_density", 1.0),
                                 ("efficiency", "efficiency", 1.0)):
            if key in s:
                kw[attr] = self.number("species", key, None) * scale
        return SpinSpecies(**kw)

    def direction(self):
        d = self.data.get("field_direction", "y")
        if isinstance(d, str):
            if d.lower() not in DIRECTIONS:
                raise ConfigError(f"config key field_direction: expected x, y, z or a 3-vector, got {d!r}")
            return DIRECTIONS[d.lower()]
        try:
            v = tuple(float(c) for c in d)
        except (TypeError, ValueError):
            raise ConfigError("config key field_direction: expected x, y, z or a 3-vector") from None
        if len(v) != 3 or not any(v):
            raise ConfigError("config key field_direction: expected a non-zero 3-vector")
        return v

    def field_T(self, spec, species):
        if "field_t" in self.data:
            return self.number(None, "field_t", None)
        return resonance_field(spec.omega_r, species.g)

    def hash(self):
        blob = json.dumps(self.data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, command, cfg, out):
        self.command = command
        self.cfg = cfg
        out = Path(out if out is not None else cfg.section("output").get("dir", "out"))
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if not out.is_absolute():
            out = Path(root) / out if root else Path.cwd() / out
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.written = []

    def path(self, name):
        p = self.out / name
        self.written.append(name)
        return p

    def json(self, name, doc):
        with open(self.path(name), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def manifest(self, extra=None):
        import numba
        import scipy

        doc = {
            "command": self.command,
            "config_sha256": self.cfg.hash(),
            "seed": self.cfg.seed,
            "versions": {"nanocoupling": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "numba": numba.__version__, "python": ".".join(map(str, sys.version_info[:3]))},
            "inputs": dict(sorted(self.cfg.inputs.items())),
            "outputs": {n: _sha256(self.out / n) for n in sorted(set(self.written))},
        }
        if extra:
            doc.update(extra)
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _rect(values, key):
    if values is None:
        return None
    try:
        x0, x1, y0, y1 = (float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key}: expected [x0, x1, y0, y1]") from None
    return Rectangle(x0, x1, y0, y1)


def _solve(cfg, spec):
    target = int(cfg.number("mesh", "target_cells", 4000))
    return solve_resonator(spec, target)


def build_deposit(cfg, spec, species):
    """Deposit from the config (heightmap or synthetic), or ``None`` if absent."""
    dsec = cfg.section("deposit")
    if not dsec or ("heightmap" not in dsec and "synthetic" not in dsec):
        return None
    d = cfg.number("deposit", "cell_size_m", 3e-9)
    active = _rect(dsec.get("active_region_m"), "deposit.active_region_m")
    if active is None:
        active = default_active_region(spec.constriction_width)
    if "heightmap" in dsec:
        hm = Heightmap.read(cfg.resolve(dsec["heightmap"]))
        dep = voxelize(hm, species, d, active)
    else:
        syn = dsec["synthetic"]
        region = _rect(syn.get("region_m", [active.x0, active.x1, active.y0, active.y1]),
                       "deposit.synthetic.region_m")
        rr = syn.get("radius_range_m", [50e-9, 150e-9])
        dep = synthetic_aggregates(cfg.seed, region, int(syn.get("count", 30)), rr, species, d, active)
    total = dsec.get("total_molecules")
    if total is not None and dep.total > 0:
        dep = dep.calibrated(float(total))
    return dep


def cmd_solve(cfg, args):
    run = Run("solve", cfg, args.out)
    spec = cfg.spec()
    sol = _solve(cfg, spec)
    sol.write_csv(run.path("current.csv"))
    fm = cfg.section("field_map")
    box = fm.get("box_m", [[-0.5e-6, 0.5e-6], [-0.5e-6, 0.5e-6], [0.0, 200e-9]])
    spacing = cfg.number("field_map", "spacing_m", 10e-9)
    fmap = field_grid(sol, box, spacing)
    fmap.write_csv(run.path("field.csv"))
    thr = cfg.number("field_map", "mode_threshold", 0.05)
    mode_box = fm.get("mode_box_m", [[-9e-6, 9e-6], [-4e-6, 4e-6], [-3e-6, 3e-6]])
    mode_map = field_grid(sol, mode_box, cfg.number("field_map", "mode_spacing_m", 100e-9))
    mag = np.where(fmap.inside, np.nan, fmap.magnitude)
    i_max = np.unravel_index(np.nanargmax(mag), mag.shape)
    run.json("solve.json", {
        "i_total_A": sol.total_current,
        "n_cells": sol.mesh.n_cells,
        "Lambda_m": sol.Lambda,
        "Lambda_eff_m": sol.Lambda_eff,
        "b_max_T": float(np.nanmax(mag)),
        "b_max_at_m": [float(a[i]) for a, i in zip(fmap.axes(), i_max)],
        "mode_threshold": thr,
        "mode_volume_m3": mode_volume(mode_map, thr),
        "source_id": fmap.source_id,
    })
    run.manifest()
    return 0


def _couple(cfg, args, spec, species, T):
    dep = build_deposit(cfg, spec, species)
    if dep is None:
        raise ConfigError("config has no deposit section (deposit.heightmap or deposit.synthetic)")
    sol = _solve(cfg, spec)
    H = cfg.field_T(spec, species)
    h = cfg.direction()
    b = deposit_fields(dep, sol) if dep.n_voxels else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = couple_deposit(dep, sol, h, species, H, T, b=b)
        res0 = couple_deposit(dep, sol, h, species, H, 0.0, b=b)
    return dep, sol, res, res0


def cmd_couple(cfg, args):
    run = Run("couple", cfg, args.out)
    spec, species = cfg.spec(), cfg.species()
    T = args.temperature_k if args.temperature_k is not None else cfg.number(None, "temperature_k", 0.0)
    dep, sol, res, res0 = _couple(cfg, args, spec, species, T)
    if dep.n_voxels == 0:
        print("warning: empty active region; coupling is zero", file=sys.stderr)
    res.write_json(run.path("coupling.json"), extra={
        "G_N_T0_over_2pi_Hz": res0.G_N / TWO_PI,
        "G1_avg_T0_over_2pi_Hz": res0.G1_avg / TWO_PI,
        "n_voxels": dep.n_voxels,
    })
    res.write_map_csv(run.path("coupling_map.csv"))
    if cfg.section("deposit").get("write_csv", False):
        dep.write_csv(run.path("deposit.csv"))
    run.manifest()
    return 0


def cmd_spectrum(cfg, args):
    run = Run("spectrum", cfg, args.out)
    spec, species = cfg.spec(), cfg.species()
    s = cfg.section("spectrum")
    gamma = from_hz(cfg.number("spectrum", "gamma_hz", species.gamma / TWO_PI))
    if "G_N_hz" in s:
        G_N = from_hz(cfg.number("spectrum", "G_N_hz", None))
    else:
        T = args.temperature_k if args.temperature_k is not None else cfg.number(None, "temperature_k", 0.0)
        G_N = _couple(cfg, args, spec, species, T)[2].G_N
    p = TransmissionParams(omega_r=spec.omega_r, kappa_r=spec.kappa_r, G_N=G_N, gamma=gamma, g=species.g)
    span = cfg.number("spectrum", "field_span_t", 16.0 * field_linewidth_H(gamma, species.g))
    n_field = int(cfg.number("spectrum", "n_field", 81))
    H = p.H_res + np.linspace(-0.5 * span, 0.5 * span, n_field)
    k_max = float(np.max(kappa_of_field(H, p)))
    w_span = from_hz(cfg.number("spectrum", "omega_span_hz", 16.0 * k_max / TWO_PI))
    n_omega = int(cfg.number("spectrum", "n_omega", 201))
    omega = p.omega_r + np.linspace(-0.5 * w_span, 0.5 * w_span, n_omega)
    tmap = transmission_map(p, omega, H)
    tmap.write_csv(run.path("transmission_map.csv"))
    tmap.write_ridge_csv(run.path("ridge.csv"))
    write_kappa_csv(run.path("kappa_curve.csv"), H, kappa_of_field(H, p))
    run.json("spectrum.json", {
        "G_N_over_2pi_Hz": G_N / TWO_PI, "gamma_over_2pi_Hz": gamma / TWO_PI,
        "kappa_r_over_2pi_Hz": p.kappa_r / TWO_PI, "kappa_c_over_2pi_Hz": p.kappa_c / TWO_PI,
        "H_res_T": p.H_res, "strong_coupling": p.strong_coupling(),
    })
    run.manifest()
    return 0


def _header(path):
    try:
        with open(path) as fh:
            return tuple(h.strip() for h in fh.readline().strip().split(","))
    except FileNotFoundError:
        raise FileNotFoundError(f"data file not found: {path}") from None


def cmd_fit(cfg, args):
    run = Run("fit", cfg, args.out)
    spec, species = cfg.spec(), cfg.species()
    docs = {}
    for i, data in enumerate(args.data):
        path = Path(data).resolve()
        head = _header(path)
        cfg.inputs[str(path)] = _sha256(path)
        if head == KAPPA_HEADER:
            H, kappa = read_kappa_csv(path)
            fit = fit_kappa_curve(H, kappa, spec.omega_r, species.g)
            doc = fit.to_json()
        elif head == TRACE_HEADER:
            blocks = read_trace_csv(path)
            Hs, ks, flags = [], [], []
            for H, (omega, amp) in blocks.items():
                lf = fit_lorentzian(omega, amp ** 2)
                flags.append(lf.converged)
                if lf.converged:
                    Hs.append(H)
                    ks.append(lf.kappa)
            doc = {"traces": len(blocks), "traces_converged": int(sum(flags))}
            if len(Hs) >= 5:
                doc.update(fit_kappa_curve(np.array(Hs), np.array(ks), spec.omega_r, species.g).to_json())
            else:
                doc.update({"converged": False, "warnings": ["fewer than 5 converged traces"]})
        elif head == SQRTN_HEADER:
            a = read_table(path, SQRTN_HEADER)
            G1, sig = fit_sqrtN(a[:, 0], from_hz(a[:, 1]))
            doc = {"G1_over_2pi_Hz": G1 / TWO_PI, "sigma_over_2pi_Hz": sig / TWO_PI, "converged": True}
        else:
            raise SchemaError(f"{path}:1: unrecognized header {','.join(head)}; expected one of "
                              f"{','.join(KAPPA_HEADER)} | {','.join(TRACE_HEADER)} | {','.join(SQRTN_HEADER)}")
        doc["source"] = path.name
        docs[f"fit_{i}_{path.stem}.json"] = doc
    for name, doc in docs.items():
        run.json(name, doc)
    run.manifest()
    return 0


def cmd_sweep(cfg, args):
    run = Run("sweep", cfg, args.out)
    spec, species = cfg.spec(), cfg.species()
    widths = cfg.numbers("sweep", "widths_m")
    heights = cfg.numbers("sweep", "heights_m")
    temps = cfg.numbers("sweep", "temperatures_k")
    if not (widths and heights) and not temps:
        raise ConfigError("config key sweep: needs widths_m and heights_m, or temperatures_k")
    failures = 0
    if widths and heights:
        rows = sweep_width(widths, heights, species, spec, cfg.direction(),
                           target_cells=int(cfg.number("mesh", "target_cells", 4000)), jobs=args.jobs)
        with open(run.path("g1_sweep.csv"), "w") as fh:
            fh.write("width_m,z_m,G1_over_2pi_Hz,status,n_cells\n")
            for r in rows:
                fh.write(f"{r['width_m']!r},{r['z_m']!r},{r['G1'] / TWO_PI!r},{r['status']},{r['n_cells']}\n")
        failures += sum(r["status"] != "ok" for r in rows)
    if temps:
        dep = build_deposit(cfg, spec, species)
        if dep is None:
            raise ConfigError("config key sweep.temperatures_k: needs a deposit section")
        sol = _solve(cfg, spec)
        rows = temperature_curve(dep, sol, cfg.direction(), species, cfg.field_T(spec, species), temps)
        with open(run.path("gn_temperature.csv"), "w") as fh:
            fh.write("T_K,polarization,N_eff,G_N_over_2pi_Hz\n")
            for r in rows:
                fh.write(f"{r['T_K']!r},{float(r['polarization'])!r},{r['N_eff']!r},{r['G_N'] / TWO_PI!r}\n")
    run.manifest({"failed_points": failures})
    return 0


COMMANDS = {"solve": cmd_solve, "couple": cmd_couple, "spectrum": cmd_spectrum, "fit": cmd_fit,
            "sweep": cmd_sweep}


def build_parser():
    parser = argparse.ArgumentParser(prog="nanocoupling", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--temperature-k", type=float, dest="temperature_k", help="override temperature_k")
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
        if name == "fit":
            p.add_argument("data", nargs="+", help="CSV data files")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.data["seed"] = args.seed
        if args.temperature_k is not None:
            cfg.data["temperature_k"] = args.temperature_k
        return COMMANDS[args.command](cfg, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, GeometryError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
