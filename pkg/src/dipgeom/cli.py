"""Command-line front end.

Every command accepts its parameters as flags or from a JSON document given
with ``--config``; flags win.  Outputs carry a metadata block (tool version,
resolved parameters, seed) and contain no timestamps, so identical inputs give
identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from . import dipolar, dtwa, echo, motional, schedules
from .errors import DipgeomError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUTPUT_DIR_ENV = "DIPGEOM_OUTPUT_DIR"

# Keys that change how a run executes but not what it computes; they are left
# out of the recorded configuration so that outputs compare byte for byte.
EXECUTION_KEYS = ("workers", "output", "format", "config")


class ConfigError(Exception):
    pass


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------- parsing


def parse_range(text) -> list[float]:
    """``"a..b..step"`` (inclusive), ``"a,b,c"`` or a single number."""
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, list):
        return [float(v) for v in text]
    text = str(text).strip()
    if ".." in text:
        parts = text.split("..")
        if len(parts) != 3:
            raise ConfigError(f"range {text!r} must look like start..stop..step")
        start, stop, step = map(float, parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"range {text!r} needs start <= stop and a positive step")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + k * step for k in range(n)]
    return [float(v) for v in text.split(",") if v.strip()]


def parse_int_list(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


COMMON = {"seed": 0, "workers": None, "output": None, "format": "csv"}
SPECIES_DEFAULTS = {"species": "CaF", "dipole_debye": None, "spacing_um": 2.0}
TRAP_DEFAULTS = {"radial_khz": 100.0, "axial_khz": 20.0, "mass_u": None}
THERMAL_DEFAULTS = {"nbar_z": "1", "nbar": None, "temperature_uk": None}

COMMANDS = {
    "sensitivity": {
        "help": "sensitivity coefficient A_{axis,order} over an angle sweep",
        "params": {"term": "z2", "theta_deg": "0..90..1", "numeric": False, **SPECIES_DEFAULTS},
        "covers": ["sensitivity_coefficient", "numeric_sensitivity", "angular_factor", "pair_geometry"],
    },
    "magic-angle": {
        "help": "zero of a sensitivity coefficient inside an angle bracket",
        "params": {"term": "z2", "bracket_deg": "50,80", "format": "json"},
        "covers": ["find_sensitivity_zero", "angular_factor"],
    },
    "couplings-table": {
        "help": "point-dipole couplings of the tabulated species",
        "params": {"spacing_um": 2.0, "theta_deg": 90.0},
        "covers": ["coupling_strength_hz", "exact_coupling", "get_species"],
    },
    "matrix-elements": {
        "help": "motional-state-resolved couplings J(0,0,n_z; 0,0,n_z)",
        "params": {"theta_deg": "0,63.4349488,90", "nz_max": 10, "quad_order": None,
                   **SPECIES_DEFAULTS, **TRAP_DEFAULTS},
        "covers": ["quantum_matrix_element", "oscillator_width"],
    },
    "jdist": {
        "help": "thermal coupling distribution statistics",
        "params": {"theta_deg": "0,45,63.4349488,90", "samples": 10000, "write_samples": False,
                   **SPECIES_DEFAULTS, **TRAP_DEFAULTS, **THERMAL_DEFAULTS},
        "covers": ["coupling_distribution", "sample_occupation"],
    },
    "quality": {
        "help": "spin-exchange quality factor Q = tau |J|",
        "params": {"theta_deg": "0,45,63.4349488,90", "samples": 10000, "max_periods": 1e5,
                   **SPECIES_DEFAULTS, **TRAP_DEFAULTS, **THERMAL_DEFAULTS},
        "covers": ["quality_factor", "exchange_contrast", "damping_time"],
    },
    "echo-map": {
        "help": "geometric-echo J_eff and sensitivity map with its zero contour",
        "params": {"resolution": 128, "base_axis_deg": 45.0, **SPECIES_DEFAULTS},
        "covers": ["decoupling_map", "square_echo_sequence", "averaged_axial_sensitivity",
                   "effective_coupling"],
    },
    "squeeze": {
        "help": "DTWA squeezing curve for one protocol",
        "params": {"protocol": "conveyor", "N": 20, "cycles": 20, "d": 2, "step_duration": 0.01,
                   "n_traj": dtwa.DEFAULT_N_TRAJ, "horizon": None, "n_samples": 121,
                   "theta_deg": 90.0, "export_schedule": None, **SPECIES_DEFAULTS},
        "covers": ["dtwa_evolve", "squeezing_parameter", "realize_couplings", "conveyor_protocol",
                   "dim_emulation_protocol", "tree_protocol"],
    },
    "scaling": {
        "help": "minimum squeezing versus N and the fitted power law",
        "params": {"protocol": "all_to_all", "N_list": "10,20,40,80,160", "cycles": None, "d": 2,
                   "step_duration": 0.01, "n_traj": 2000, "n_samples": 121, "theta_deg": 90.0,
                   **SPECIES_DEFAULTS},
        "covers": ["scaling_fit", "dtwa_evolve", "squeezing_parameter"],
    },
    "move-budget": {
        "help": "rearrangement moves per interaction period 1/J",
        "params": {"coupling_hz": 100.0, "move_distance_um": 110.0, "move_speed_um_per_us": 0.55},
        "covers": ["move_budget"],
    },
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipgeom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, spec in COMMANDS.items():
        p = sub.add_parser(name, help=spec["help"], description=spec["help"])
        p.add_argument("--config", help="JSON file with parameters (flags override)")
        params = {**COMMON, **spec["params"]}
        for key, default in params.items():
            kwargs = {"dest": key, "default": argparse.SUPPRESS, "help": f"default: {default}"}
            if isinstance(default, bool):
                p.add_argument(_flag(key), action="store_true", **kwargs)
                continue
            if key == "format":
                kwargs["choices"] = ["csv", "json"]
            elif isinstance(default, int) and key != "seed" or key in ("workers", "nz_max", "cycles"):
                kwargs["type"] = int
            elif key == "seed":
                kwargs["type"] = int
            elif isinstance(default, float) or key in ("dipole_debye", "mass_u", "temperature_uk",
                                                       "horizon", "quad_order"):
                kwargs["type"] = float
            p.add_argument(_flag(key), **kwargs)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    spec = COMMANDS[args.command]
    params = {**COMMON, **spec["params"]}
    cfg = dict(params)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = {k.replace("-", "_"): v for k, v in doc.items() if k != "command"}
        unknown = sorted(set(doc) - set(params))
        if unknown:
            raise ConfigError(f"unknown parameters for {args.command}: {unknown}")
        cfg.update(doc)
    for key in params:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    if cfg["seed"] is None:
        cfg["seed"] = 0
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be positive")
    return cfg


# --------------------------------------------------------------- builders


def _dipole(cfg) -> dipolar.DipoleSpec:
    if cfg.get("dipole_debye") is not None:
        return dipolar.DipoleSpec(float(cfg["dipole_debye"]), cfg.get("species") or "")
    return dipolar.get_species(cfg["species"]).dipole


def _spacing(cfg) -> float:
    return float(cfg["spacing_um"]) * 1e-6


def _trap(cfg) -> motional.TrapParams:
    mass = cfg.get("mass_u")
    if mass is None:
        mass = dipolar.get_species(cfg["species"]).mass_u
    return motional.TrapParams.from_khz(float(cfg["radial_khz"]), float(cfg["axial_khz"]), float(mass))


def _thermal_specs(cfg, trap) -> list[tuple[str, motional.ThermalSpec]]:
    """Labelled thermal specs; ``nbar_z`` may list several values."""
    if cfg.get("temperature_uk") is not None:
        t = float(cfg["temperature_uk"]) * 1e-6
        return [(f"T={cfg['temperature_uk']}uK", motional.ThermalSpec.from_temperature(trap, t))]
    if cfg.get("nbar") is not None:
        vals = parse_range(cfg["nbar"])
        if len(vals) != 3:
            raise ConfigError("nbar needs three comma-separated values x,y,z")
        return [("nbar", motional.ThermalSpec(*vals))]
    return [(repr(nz), motional.ThermalSpec.equal_temperature(trap, nz)) for nz in parse_range(cfg["nbar_z"])]


def _schedule_for(cfg, n: int) -> dtwa.CouplingSchedule:
    kind = cfg["protocol"]
    if kind == "all_to_all":
        return dtwa.CouplingSchedule.static(dtwa.all_to_all(n), 1.0, 1.0)
    cycles = cfg.get("cycles")
    if cycles is None:
        cycles = n
    spec = schedules.ProtocolSpec(kind, n, int(cycles), int(cfg.get("d", 2)), float(cfg["step_duration"]))
    return schedules.realize_couplings(spec.steps(), _spacing(cfg), _dipole(cfg),
                                       math.radians(float(cfg["theta_deg"])))


# --------------------------------------------------------------- commands
# Each returns (header, rows, summary) where rows may be empty.


def cmd_sensitivity(cfg):
    term = dipolar.SensitivityTerm.parse(cfg["term"])
    header = ["theta_deg", "A", "angular_factor"]
    if cfg["numeric"]:
        header.append("A_numeric")
    rows = []
    for deg in parse_range(cfg["theta_deg"]):
        th = math.radians(deg)
        row = [deg, float(dipolar.sensitivity_coefficient(term, th)), float(dipolar.angular_factor(th))]
        if cfg["numeric"]:
            geom = dipolar.pair_geometry(th, _spacing(cfg))
            row.append(float(dipolar.numeric_sensitivity(term.axis, term.order, geom)))
        rows.append(row)
    return header, rows, {}


def cmd_magic_angle(cfg):
    lo, hi = parse_range(cfg["bracket_deg"])
    th = dipolar.find_sensitivity_zero(cfg["term"], (math.radians(lo), math.radians(hi)))
    summary = {"theta_rad": th, "theta_deg": math.degrees(th),
               "angular_factor": float(dipolar.angular_factor(th))}
    return ["theta_deg", "angular_factor"], [[summary["theta_deg"], summary["angular_factor"]]], summary


def cmd_couplings_table(cfg):
    r = _spacing(cfg)
    th = math.radians(float(cfg["theta_deg"]))
    rows = []
    for label, sp in dipolar.SPECIES.items():
        geom = dipolar.pair_geometry(th, r)
        rows.append([label, sp.lab_frame_dipole, dipolar.exact_coupling(geom, sp.dipole),
                     dipolar.coupling_strength_hz(sp.dipole, r), sp.reference_coupling_hz])
    return ["species", "lab_dipole_debye", "J_Hz", "J90_Hz", "tabulated_Hz"], rows, {}


def cmd_matrix_elements(cfg):
    trap, dip, r = _trap(cfg), _dipole(cfg), _spacing(cfg)
    rows = []
    for deg in parse_range(cfg["theta_deg"]):
        geom = dipolar.pair_geometry(math.radians(deg), r)
        qo = None if cfg["quad_order"] is None else int(cfg["quad_order"])
        j0 = motional.quantum_matrix_element((0, 0, 0), (0, 0, 0), geom, trap, dip, qo)
        for nz in range(int(cfg["nz_max"]) + 1):
            occ = (0, 0, nz)
            j = motional.quantum_matrix_element(occ, occ, geom, trap, dip, qo)
            rows.append([deg, nz, j, j / j0 - 1.0])
    widths = {f"width_{a}_m": motional.oscillator_width(trap, a) for a in "xyz"}
    return ["theta_deg", "n_z", "J_Hz", "relative_change"], rows, widths


def cmd_jdist(cfg):
    trap, dip, r = _trap(cfg), _dipole(cfg), _spacing(cfg)
    rows, extra = [], []
    for label, thermal in _thermal_specs(cfg, trap):
        for deg in parse_range(cfg["theta_deg"]):
            dist = motional.coupling_distribution(dipolar.pair_geometry(math.radians(deg), r), trap, thermal,
                                                  dip, int(cfg["samples"]), int(cfg["seed"]), int(cfg["workers"]))
            rows.append([label, deg, dist.mean, dist.std_dev, dist.relative_width, dist.standard_error])
            if cfg["write_samples"]:
                extra.append({"thermal": label, "theta_deg": deg, "samples": dist.samples.tolist()})
    summary = {"samples": extra} if extra else {}
    return ["thermal", "theta_deg", "mean_Hz", "std_Hz", "relative_width", "stderr_Hz"], rows, summary


def cmd_quality(cfg):
    trap, dip, r = _trap(cfg), _dipole(cfg), _spacing(cfg)
    rows = []
    for label, thermal in _thermal_specs(cfg, trap):
        for deg in parse_range(cfg["theta_deg"]):
            q = motional.quality_factor(dipolar.pair_geometry(math.radians(deg), r), trap, thermal, dip,
                                        int(cfg["samples"]), int(cfg["seed"]), int(cfg["workers"]),
                                        float(cfg["max_periods"]))
            rows.append([label, deg, q.q, q.tau, q.mean_coupling, q.distribution.relative_width,
                         int(q.lower_bound)])
    return ["thermal", "theta_deg", "Q", "tau_s", "mean_J_Hz", "relative_width", "lower_bound"], rows, {}


def cmd_echo_map(cfg):
    dip, a = _dipole(cfg), _spacing(cfg)
    phi = math.radians(float(cfg["base_axis_deg"]))
    base = (math.cos(phi), math.sin(phi), 0.0)
    dmap = echo.decoupling_map(a, dip, int(cfg["resolution"]), base)
    rows = [[float(x), float(y), float(dmap.j_eff[iy, ix]), float(dmap.sensitivity[iy, ix])]
            for iy, y in enumerate(dmap.y0) for ix, x in enumerate(dmap.x0)]
    contour = []
    best = None
    for k, line in enumerate(dmap.contours):
        for p in line:
            q = echo.refine_contour_point(p, dmap)
            seq = echo.square_echo_sequence(q, 1.0, a, base)
            bond = seq.nearest_neighbour_bonds()[0]
            jeff = echo.effective_coupling(seq, bond, dip)
            sens = echo.total_axial_sensitivity(seq)
            contour.append({"contour": k, "x0": float(q[0]), "y0": float(q[1]), "J_eff_Hz": jeff,
                            "sensitivity_per_m2": sens})
            if best is None or abs(jeff) > abs(best["J_eff_Hz"]):
                best = contour[-1]
    summary = {"contour": contour, "representative_point": best,
               "max_abs_sensitivity_per_m2": float(np.nanmax(np.abs(dmap.sensitivity)))}
    return ["x0", "y0", "J_eff_Hz", "sensitivity_per_m2"], rows, summary


def _squeeze_rows(res: dtwa.SqueezingResult):
    return [list(r) for r in res.rows()]


def cmd_squeeze(cfg):
    sched = _schedule_for(cfg, int(cfg["N"]))
    if cfg.get("export_schedule"):
        with open(cfg["export_schedule"], "w") as fh:
            fh.write(sched.to_json())
    res = dtwa.squeeze_schedule(sched, int(cfg["n_traj"]), int(cfg["seed"]), cfg["horizon"],
                                int(cfg["n_samples"]), int(cfg["workers"]))
    return list(dtwa.SqueezingResult.CSV_HEADER), _squeeze_rows(res), res.summary()


def cmd_scaling(cfg):
    rows, pts = [], []
    for n in parse_int_list(cfg["N_list"]):
        res = dtwa.squeeze_schedule(_schedule_for(cfg, n), int(cfg["n_traj"]), int(cfg["seed"]), None,
                                    int(cfg["n_samples"]), int(cfg["workers"]))
        rows.append([n, res.min_xi2, res.min_xi2_stderr, res.min_time])
        pts.append((n, res.min_xi2))
    fit = dtwa.scaling_fit(pts)
    summary = {"exponent": fit.exponent, "stderr": fit.stderr, "ci95": list(fit.ci95),
               "intercept": fit.intercept}
    return ["N", "min_xi2", "min_xi2_stderr", "time_of_min"], rows, summary


def cmd_move_budget(cfg):
    d = float(cfg["move_distance_um"]) * 1e-6
    v = float(cfg["move_speed_um_per_us"])  # um/us equals m/s
    n = schedules.move_budget(float(cfg["coupling_hz"]), d, v)
    summary = {"moves_per_cycle": n, "move_time_s": d / v}
    return ["moves_per_cycle", "move_time_s"], [[n, d / v]], summary


DISPATCH = {
    "sensitivity": cmd_sensitivity,
    "magic-angle": cmd_magic_angle,
    "couplings-table": cmd_couplings_table,
    "matrix-elements": cmd_matrix_elements,
    "jdist": cmd_jdist,
    "quality": cmd_quality,
    "echo-map": cmd_echo_map,
    "squeeze": cmd_squeeze,
    "scaling": cmd_scaling,
    "move-budget": cmd_move_budget,
}


# ----------------------------------------------------------------- output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def render(command: str, cfg: dict, header, rows, summary) -> str:
    recorded = {k: v for k, v in sorted(cfg.items()) if k not in EXECUTION_KEYS}
    meta = {"tool": "dipgeom", "version": tool_version(), "command": command,
            "seed": cfg["seed"], "config": recorded}
    if cfg["format"] == "json":
        doc = {"metadata": meta, "columns": list(header), "rows": rows, "summary": summary}
        return json.dumps(_jsonable(doc), indent=1, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write("# " + json.dumps(_jsonable(meta), sort_keys=True) + "\n")
    if summary:
        buf.write("# summary: " + json.dumps(_jsonable(summary), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _output_path(command: str, cfg: dict) -> str | None:
    if cfg.get("output"):
        return cfg["output"]
    outdir = os.environ.get(OUTPUT_DIR_ENV)
    if outdir:
        return os.path.join(outdir, f"{command}.{cfg['format']}")
    return None


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"dipgeom: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        header, rows, summary = DISPATCH[args.command](cfg)
        text = render(args.command, cfg, header, rows, summary)
    except (ConfigError, ValueError) as exc:
        # input-domain failures, including DomainError and its relatives
        print(f"dipgeom: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DipgeomError as exc:
        print(f"dipgeom: numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"dipgeom: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    path = _output_path(args.command, cfg)
    try:
        if path is None:
            sys.stdout.write(text)
        else:
            with open(path, "w") as fh:
                fh.write(text)
    except OSError as exc:
        print(f"dipgeom: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())
