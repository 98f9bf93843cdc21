"""
Configuration, output formats and the ``curvflow`` command line.

Run directory layout::

    config.json       the validated configuration, defaults filled in
    timeseries.csv    one AuditRecord per step (fixed header, %.17g)
    snap_<step>.txt   u on the grid at step 0, every stride and the last step
    snap_final.txt    a copy of the last snapshot
    *.pgm             optional P2 images, each with a .range.txt min/max sidecar
    audit.json        trajectory audit (Calabi integral, recentred bounds)
    result.json       termination, steps, final_calabi, final_alpha, concentration

Exit codes: 0 converged, 2 concentrated, 3 horizon, 4 blow-up or
positivity violation, 1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import AuditRecord, audit_trajectory
from .errors import CurvFlowError, InvalidArgument, InvalidData
from .flow_engine import FlowConfig, InitialData, RunResult, run
from .prescribed_curvature import (
    PRESET_DESCRIPTIONS,
    PRESETS,
    CurvatureSpec,
    find_critical_points,
    preset,
    verify_hypotheses,
)
from .sphere_core import GridField

EXIT_CODES = {
    "converged": 0,
    "concentrated": 2,
    "horizon": 3,
    "blow-up": 4,
    "positivity-violation": 4,
}
EXIT_USAGE = 1

# named run configurations on top of the curvature presets
RUN_PRESETS = {
    "bubble-start": {
        "preset": "round",
        "u0": {"kind": "mobius", "a": [0.0, 0.0, 0.99]},
        "tol_concentrate": 0.15,
        "t_max": 1.0,
    },
}


def _fmt(x) -> str:
    return format(float(x), ".17g")


# configuration -------------------------------------------------------------------

@dataclass
class RunConfig:
    preset: str | None = "round"
    spec: dict | None = None
    L: int = 32
    q: float = 2.0
    dt: float = 1e-3
    t_max: float = 50.0
    tol_converge: float = 1e-8
    tol_concentrate: float = 0.05
    scheme: str = "imex"
    u0: dict = field(default_factory=lambda: {"kind": "zero"})
    seed: int = 1
    out_dir: str = "curvflow-run"
    snapshot_stride: int = 1000
    concentration_stride: int = 10
    emit_images: bool = False

    def curvature_spec(self) -> CurvatureSpec:
        if self.spec is not None:
            return CurvatureSpec.from_dict(self.spec)
        return preset(self.preset)

    def initial_data(self) -> InitialData:
        d = dict(self.u0)
        kind = d.pop("kind")
        if kind == "random":
            d.setdefault("seed", self.seed)
        if "a" in d:
            d["a"] = tuple(d["a"])
        return InitialData(kind, **d)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            spec=self.curvature_spec(),
            L=self.L,
            q=self.q,
            dt=self.dt,
            t_max=self.t_max,
            tol_converge=self.tol_converge,
            tol_concentrate=self.tol_concentrate,
            scheme=self.scheme,
            u0=self.initial_data(),
            snapshot_stride=self.snapshot_stride,
            concentration_stride=self.concentration_stride,
        )

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f: f for f in RunConfig.__dataclass_fields__}
_U0_KEYS = {
    "zero": set(),
    "random": {"seed", "amplitude", "bandlimit"},
    "mobius": {"a"},
    "file": {"path"},
}


def _range(name, value, lo, hi, kind=float, lo_open=False):
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise InvalidArgument(f"{name} must be {kind.__name__}, got {value!r}") from None
    if kind is int and isinstance(value, float) and value != int(value):
        raise InvalidArgument(f"{name} must be an integer, got {value!r}")
    bad = (v <= lo if lo_open else v < lo) or v > hi or (isinstance(v, float) and math.isnan(v))
    if bad:
        left = "(" if lo_open else "["
        raise InvalidArgument(f"{name} = {value!r} out of range {left}{lo}, {hi}]")
    return v


def _parse_u0(value, seed):
    if isinstance(value, str):
        value = {"kind": value}
    if not isinstance(value, dict) or "kind" not in value:
        raise InvalidArgument("u0 must be a kind name or an object with a 'kind' key")
    kind = value["kind"]
    if kind not in _U0_KEYS:
        raise InvalidArgument(f"u0 kind must be one of {sorted(_U0_KEYS)}, got {kind!r}")
    unknown = set(value) - _U0_KEYS[kind] - {"kind"}
    if unknown:
        raise InvalidArgument(f"unknown u0 key(s) for kind {kind!r}: {sorted(unknown)}")
    out = {"kind": kind}
    if kind == "random":
        out["seed"] = _range("u0.seed", value.get("seed", seed), 0, 2**64 - 1, int)
        out["amplitude"] = _range("u0.amplitude", value.get("amplitude", 0.1), 0.0, 10.0)
        out["bandlimit"] = _range("u0.bandlimit", value.get("bandlimit", 8), 1, 512, int)
    elif kind == "mobius":
        a = value.get("a")
        if not isinstance(a, (list, tuple)) or len(a) != 3:
            raise InvalidArgument("u0.a must be a list of 3 numbers")
        a = [float(x) for x in a]
        if not math.sqrt(sum(x * x for x in a)) < 1.0:
            raise InvalidArgument("u0.a must satisfy |a| < 1")
        out["a"] = a
    elif kind == "file":
        if not isinstance(value.get("path"), str):
            raise InvalidArgument("u0.path must be a string")
        out["path"] = value["path"]
    return out


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise InvalidArgument("configuration must be a JSON object")
    unknown = set(doc) - set(_FIELDS)
    if unknown:
        raise InvalidArgument(f"unknown configuration key(s): {sorted(unknown)}")
    doc = dict(doc)
    name = doc.get("preset")
    if name in RUN_PRESETS:
        doc = {**RUN_PRESETS[name], **{k: v for k, v in doc.items() if k != "preset"}}
    cfg = RunConfig()
    if "spec" in doc and doc["spec"] is not None:
        CurvatureSpec.from_dict(doc["spec"])
        cfg.spec = doc["spec"]
        cfg.preset = doc.get("preset")
    elif "preset" in doc:
        if doc["preset"] not in PRESETS:
            raise InvalidArgument(f"unknown preset {doc['preset']!r}; known: {sorted(PRESETS) + sorted(RUN_PRESETS)}")
        cfg.preset = doc["preset"]
    if "L" in doc:
        cfg.L = _range("L", doc["L"], 8, 512, int)
    if "q" in doc:
        cfg.q = _range("q", doc["q"], 1.0, 8.0)
    if "dt" in doc:
        cfg.dt = _range("dt", doc["dt"], 0.0, 1.0, lo_open=True)
    if "t_max" in doc:
        cfg.t_max = _range("t_max", doc["t_max"], 0.0, 1e6)
    if "tol_converge" in doc:
        cfg.tol_converge = _range("tol_converge", doc["tol_converge"], 0.0, 1e3, lo_open=True)
    if "tol_concentrate" in doc:
        cfg.tol_concentrate = _range("tol_concentrate", doc["tol_concentrate"], 0.0, math.pi, lo_open=True)
    if "scheme" in doc:
        if doc["scheme"] not in ("imex", "rk4-explicit"):
            raise InvalidArgument(f"scheme must be 'imex' or 'rk4-explicit', got {doc['scheme']!r}")
        cfg.scheme = doc["scheme"]
    if "seed" in doc:
        cfg.seed = _range("seed", doc["seed"], 0, 2**64 - 1, int)
    if "u0" in doc:
        cfg.u0 = _parse_u0(doc["u0"], cfg.seed)
    if "out_dir" in doc:
        if not isinstance(doc["out_dir"], str) or not doc["out_dir"]:
            raise InvalidArgument("out_dir must be a nonempty string")
        cfg.out_dir = doc["out_dir"]
    if "snapshot_stride" in doc:
        cfg.snapshot_stride = _range("snapshot_stride", doc["snapshot_stride"], 1, 2**31, int)
    if "concentration_stride" in doc:
        cfg.concentration_stride = _range("concentration_stride", doc["concentration_stride"], 1, 2**31, int)
    if "emit_images" in doc:
        if not isinstance(doc["emit_images"], bool):
            raise InvalidArgument("emit_images must be true or false")
        cfg.emit_images = doc["emit_images"]
    return cfg


def parse_config(text: str) -> RunConfig:
    """Validate a JSON configuration document and fill in defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"configuration is not valid JSON: {exc}") from None
    return config_from_dict(doc)


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


# output formats ------------------------------------------------------------------

def write_timeseries(records, path) -> None:
    records = list(records)
    if not records:
        raise InvalidArgument("no records to write")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AuditRecord.CSV_COLUMNS)
            for r in records:
                w.writerow([_fmt(x) for x in r.csv_row()])
    except OSError as exc:
        raise OSError(f"cannot write time series to {path}: {exc}") from exc


def read_timeseries(path) -> list:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    if rows[0] != list(AuditRecord.CSV_COLUMNS):
        raise InvalidData(f"{path}: unexpected header")
    return [dict(zip(rows[0], map(float, r))) for r in rows[1:]]


def write_snapshot(f: GridField, path, image: bool = False) -> None:
    """Text snapshot: ``nlat nlon L`` then one row per colatitude node."""
    path = Path(path)
    grid = f.grid
    try:
        with path.open("w") as fh:
            fh.write(f"{grid.n_lat} {grid.n_lon} {grid.L}\n")
            for row in f.values:
                fh.write(" ".join(_fmt(x) for x in row) + "\n")
        if image:
            write_pgm(f.values, path.with_suffix(".pgm"))
    except OSError as exc:
        raise OSError(f"cannot write snapshot to {path}: {exc}") from exc


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(values, L)``."""
    path = Path(path)
    with path.open() as fh:
        head = fh.readline().split()
        if len(head) != 3:
            raise InvalidData(f"{path}: header must be 'nlat nlon L'")
        n_lat, n_lon, L = (int(x) for x in head)
        values = np.loadtxt(fh, dtype=float, ndmin=2)
    if values.shape != (n_lat, n_lon):
        raise InvalidData(f"{path}: body is {values.shape}, header says {(n_lat, n_lon)}")
    return values, L


def write_pgm(values, path) -> None:
    """P2 greyscale image, linear min-max scaling, with a min/max sidecar."""
    path = Path(path)
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    pix = np.zeros(v.shape, dtype=int) if span == 0 else np.rint(255.0 * (v - lo) / span).astype(int)
    n_lat, n_lon = v.shape
    with path.open("w") as fh:
        fh.write(f"P2\n{n_lon} {n_lat}\n255\n")
        for row in pix:
            fh.write(" ".join(str(p) for p in row) + "\n")
    with path.with_suffix(".range.txt").open("w") as fh:
        fh.write(f"min {_fmt(lo)}\nmax {_fmt(hi)}\n")


def result_dict(res: RunResult) -> dict:
    conc = None
    if res.concentration is not None and res.termination == "concentrated":
        conc = {"q": [float(x) for x in res.concentration.q], "r_star": res.concentration.r_star}
    fs = res.final_state
    return {
        "termination": res.termination,
        "steps": res.steps,
        "final_calabi": fs.calabi if fs is not None else None,
        "final_alpha": fs.alpha if fs is not None else None,
        "concentration": conc,
    }


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def execute(cfg: RunConfig, out_dir=None, log=None) -> RunResult:
    """Run a configuration and write the full run directory."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(serialize_config(cfg))
    fc = cfg.flow_config()
    res = run(fc)
    if res.records:
        write_timeseries(res.records, out / "timeseries.csv")
    for s in res.snapshots:
        write_snapshot(s.u.u, out / f"snap_{s.step:07d}.txt", image=cfg.emit_images)
    if res.snapshots:
        write_snapshot(res.snapshots[-1].u.u, out / "snap_final.txt", image=cfg.emit_images)
        # a run that stops at step 0 is audited as the trajectory (u0, u0)
        traj = res.snapshots if len(res.snapshots) >= 2 else res.snapshots * 2
        f = GridField(res.final_state.u.grid, fc.spec.value(res.final_state.u.grid.points))
        summary = audit_trajectory(traj, f, traj[0].u, res.records)
        (out / "audit.json").write_text(json.dumps(_jsonable(asdict(summary)), indent=2) + "\n")
    (out / "result.json").write_text(json.dumps(_jsonable(result_dict(res)), indent=2) + "\n")
    return res


# command line --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="curvflow", description="Prescribed curvature flow on the round sphere.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="integrate the flow and write a run directory")
    r.add_argument("--config", help="JSON configuration file")
    r.add_argument("--preset", help="curvature preset or run preset (see 'presets')")
    r.add_argument("--u0", choices=["zero", "random", "mobius"])
    r.add_argument("--seed", type=int)
    r.add_argument("--amplitude", type=float)
    r.add_argument("--bandlimit", type=int)
    r.add_argument("--mobius", type=float, nargs=3, metavar=("A1", "A2", "A3"))
    r.add_argument("--L", type=int, dest="L")
    r.add_argument("--dt", type=float)
    r.add_argument("--t-max", type=float, dest="t_max")
    r.add_argument("--tol-converge", type=float, dest="tol_converge")
    r.add_argument("--tol-concentrate", type=float, dest="tol_concentrate")
    r.add_argument("--scheme", choices=["imex", "rk4-explicit"])
    r.add_argument("--snapshot-stride", type=int, dest="snapshot_stride")
    r.add_argument("--images", action="store_true", help="also write PGM images")
    r.add_argument("--out", dest="out_dir", help="output directory")

    v = sub.add_parser("verify-f", help="classify critical points and check the hypotheses on f")
    v.add_argument("--preset", default=None)
    v.add_argument("--spec", help="JSON file with an inline curvature spec")

    s = sub.add_parser("selftest", help="run the invariant suite")
    s.add_argument("--quick", action="store_true", help="skip the longer flow checks")

    sub.add_parser("presets", help="list presets")
    return p


def _run_document(args) -> dict:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.preset:
        doc["preset"] = args.preset
    for key in ("L", "dt", "t_max", "tol_converge", "tol_concentrate", "scheme", "snapshot_stride", "out_dir", "seed"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.images:
        doc["emit_images"] = True
    if args.u0 or args.mobius or args.amplitude is not None or args.bandlimit is not None:
        kind = args.u0 or ("mobius" if args.mobius else "random")
        u0 = {"kind": kind}
        if kind == "random":
            if args.amplitude is not None:
                u0["amplitude"] = args.amplitude
            if args.bandlimit is not None:
                u0["bandlimit"] = args.bandlimit
            if args.seed is not None:
                u0["seed"] = args.seed
        if kind == "mobius":
            if not args.mobius:
                raise InvalidArgument("--u0 mobius needs --mobius A1 A2 A3")
            u0["a"] = list(args.mobius)
        doc["u0"] = u0
    return doc


def _cmd_run(args) -> int:
    cfg = config_from_dict(_run_document(args))
    res = execute(cfg)
    info = result_dict(res)
    print(json.dumps(_jsonable(info)))
    if res.message:
        print(res.message, file=sys.stderr)
    return EXIT_CODES[res.termination]


def _cmd_verify(args) -> int:
    if args.spec:
        spec = CurvatureSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = preset(args.preset or "round")
    report = find_critical_points(spec)
    check = verify_hypotheses(spec, report)
    print(f"f: {spec.name}")
    print(report.summary())
    for note in report.notes:
        print(f"  note: {note}")
    print("hypotheses:")
    print(check.summary())
    return 0


def _cmd_presets(args) -> int:
    for name in PRESETS:
        print(f"{name:16s} {PRESET_DESCRIPTIONS[name]}")
    for name, doc in RUN_PRESETS.items():
        print(f"{name:16s} run preset: {json.dumps(doc, sort_keys=True)}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify-f":
            return _cmd_verify(args)
        if args.command == "presets":
            return _cmd_presets(args)
        from .selftest import run_selftest

        return run_selftest(quick=args.quick)
    except _UsageError as exc:
        print(f"curvflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CurvFlowError, json.JSONDecodeError) as exc:
        print(f"curvflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"curvflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def console() -> None:
    sys.exit(main())
