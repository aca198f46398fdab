"""Command-line drivers: single runs, convergence studies and mass studies.

Configuration files are flat ``key = value`` text with ``#`` comments::

    problem = shrinking_sphere
    h = 0.25
    dt = 0.25
    t_end = 1
    outputs = out/

Set ``EVOSURF_NUM_THREADS`` to cap the BLAS/OpenMP worker threads.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .assembly import NodalField
from .diagnostics import observed_order
from .estimator import SpaceTimeTraceFEM
from .exceptions import ConfigurationError, EvosurfError, GeometryError
from .geometry import CrossSection
from .mesh import TimeGrid

log = logging.getLogger("evosurf")

THREADS_ENV = "EVOSURF_NUM_THREADS"
SUMMARY_COLUMNS = ["problem", "h", "dt", "t_end", "nu", "err_l2_final", "err_l2h1", "mass_abs_err", "wall_seconds"]
CONVERGENCE_COLUMNS = ["level", "h", "dt", "err_l2_final", "err_l2h1", "mass_abs_err", "wall_seconds",
                       "order_l2_final", "order_l2h1", "status"]
MASS_STUDY_COLUMNS = ["level", "h", "dt", "mass_initial", "mass_avg", "mass_abs_err", "reduction", "status"]
FAILED = "FAILED"


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _box(text: str) -> tuple:
    parts = text.replace(",", " ").split()
    if len(parts) != 6:
        raise ValueError("box needs 6 numbers: x0 y0 z0 x1 y1 z1")
    return tuple(float(v) for v in parts)


@dataclass(frozen=True)
class RunConfig:
    problem: str = "shrinking_sphere"
    h: float = 0.25
    dt: float = 0.25
    t_end: float = 1.0
    nu_override: float | None = None
    box: tuple = (-2.0, -2.0, -2.0, 2.0, 2.0, 2.0)
    outputs: Path = field(default_factory=lambda: Path("outputs"))
    dump_surfaces: bool = False
    solver_tol: float = 1e-10
    # False writes 0 for wall_seconds so that repeated runs give identical CSVs
    wall_clock: bool = True

    def __post_init__(self):
        for name in ("h", "dt", "t_end", "solver_tol"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be a positive number, got {v!r}")
        if self.nu_override is not None and not self.nu_override > 0:
            raise ConfigurationError(f"nu must be positive, got {self.nu_override!r}")
        TimeGrid.from_step(self.t_end, self.dt)

    def estimator(self) -> SpaceTimeTraceFEM:
        return SpaceTimeTraceFEM(h=self.h, dt=self.dt, t_end=self.t_end, nu=self.nu_override,
                                 box=self.box, solver_tol=self.solver_tol)


_PARSERS = {
    "problem": str, "h": float, "dt": float, "t_end": float, "nu_override": float,
    "box": _box, "outputs": Path, "dump_surfaces": _bool, "solver_tol": float, "wall_clock": _bool,
}
_ALIASES = {"nu": "nu_override", "nu_d": "nu_override", "T": "t_end"}


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; unknown or repeated keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _PARSERS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: key {key!r} given twice")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as err:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {err}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from None
    return parse_config(text)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


# --- VTK ---------------------------------------------------------------------

def surface_mesh(cross: CrossSection, decimals: int = 12):
    """Merge coincident triangle corners; returns ``(points, triangles, first)``.

    ``first[k]`` is the flat corner index (``3 * tri + corner``) that produced
    point ``k``.  Triangles that collapse after merging are dropped.
    """
    if len(cross) == 0:
        raise GeometryError(f"empty reconstruction at t = {cross.time}: nothing to dump")
    corners = cross.tris.reshape(-1, 3)
    key = np.round(corners, decimals) + 0.0     # folds -0.0 into 0.0
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    # number points in order of first appearance so the output follows the input order
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    tris = rank[inverse.ravel()].reshape(-1, 3)
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    return corners[first[order]], tris[ok], first[order]


def surface_values(u: NodalField, cross: CrossSection, first) -> np.ndarray:
    corners = cross.tris.reshape(-1, 3)[first]
    tets = np.repeat(cross.parent, 3)[first]
    lam = u.mesh.barycentric(tets, corners)
    return u.evaluate(tets, lam)


def write_vtk(path, points, triangles, values, title="evosurf surface"):
    """Legacy ASCII VTK PolyData with point scalar ``u``."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA",
             f"POINTS {len(points)} double"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in points]
    lines.append(f"POLYGONS {len(triangles)} {4 * len(triangles)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in triangles]
    lines += [f"POINT_DATA {len(points)}", "SCALARS u double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.17g}" for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def dump_surface(cross: CrossSection, u: NodalField, path) -> Path:
    """Write ``Gamma_h(t)`` with the discrete solution ``u`` to ``path``."""
    points, tris, first = surface_mesh(cross)
    write_vtk(path, points, tris, surface_values(u, cross, first), title=f"evosurf t={cross.time!r}")
    return Path(path)


def read_vtk(path):
    """Minimal reader for files produced by ``write_vtk``."""
    tokens = Path(path).read_text().split("\n")
    i = tokens.index(next(t for t in tokens if t.startswith("POINTS")))
    n = int(tokens[i].split()[1])
    points = np.array([[float(v) for v in tokens[i + 1 + k].split()] for k in range(n)])
    j = i + 1 + n
    m = int(tokens[j].split()[1])
    tris = np.array([[int(v) for v in tokens[j + 1 + k].split()[1:]] for k in range(m)], dtype=int)
    k0 = j + 1 + m + 3
    values = np.array([float(tokens[k0 + k]) for k in range(n)])
    return points, tris.reshape(-1, 3), values


# --- drivers -----------------------------------------------------------------

def _summary_row(cfg: RunConfig, est: SpaceTimeTraceFEM | None, wall: float) -> dict:
    row = {"problem": cfg.problem, "h": cfg.h, "dt": cfg.dt, "t_end": cfg.t_end}
    if est is None:
        row["nu"] = cfg.nu_override
        row.update(err_l2_final=FAILED, err_l2h1=FAILED, mass_abs_err=FAILED)
    else:
        row["nu"] = float(est.problem_.nu_d)
        row.update(est.report_.as_row())
    row["wall_seconds"] = wall if cfg.wall_clock else 0.0
    return row


def _fit(cfg: RunConfig, outdir: Path):
    est = cfg.estimator()
    if not cfg.dump_surfaces:
        return est.fit(cfg.problem)
    surf = outdir / "surfaces"
    surf.mkdir(parents=True, exist_ok=True)

    def on_slab(res):
        dump_surface(res.cross_hi, res.solution.upper, surf / f"surface_{res.slab:05d}.vtk")

    est.fit(cfg.problem, on_slab=on_slab)
    dump_surface(est.cross0_, est.initial_, surf / "surface_00000.vtk")
    return est


def run(cfg: RunConfig, outdir: Path | None = None) -> SpaceTimeTraceFEM:
    """Single run; writes ``run_summary.csv`` and ``mass.csv``.

    On failure a summary row with ``FAILED`` error columns is written and the
    exception is re-raised.
    """
    outdir = Path(cfg.outputs if outdir is None else outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        est = _fit(cfg, outdir)
    except EvosurfError:
        _write_csv(outdir / "run_summary.csv", SUMMARY_COLUMNS,
                   [_summary_row(cfg, None, time.perf_counter() - start)])
        raise
    _write_csv(outdir / "run_summary.csv", SUMMARY_COLUMNS, [_summary_row(cfg, est, est.wall_seconds_)])
    _write_csv(outdir / "mass.csv", ["t", "M_h"], [{"t": t, "M_h": m} for t, m in est.report_.mass])
    return est


def _series(cfg: RunConfig, axis: str, levels: int):
    if levels < 2:
        raise ConfigurationError(f"levels must be at least 2, got {levels}")
    if axis in ("space", "h"):
        return [replace(cfg, h=cfg.h / 2 ** k) for k in range(levels)]
    if axis in ("time", "dt"):
        return [replace(cfg, dt=cfg.dt / 2 ** k) for k in range(levels)]
    raise ConfigurationError(f"unknown axis {axis!r}")


def _orders(rows, step_key, err_key):
    pairs = [(r[step_key], r[err_key]) for r in rows]
    if len(pairs) < 2 or any(not math.isfinite(e) for _, e in pairs):
        return [None] * len(pairs)
    return [None] + observed_order(pairs)


def convergence_study(cfg: RunConfig, axis: str, levels: int, outdir: Path | None = None) -> list[dict]:
    """Halve ``h`` (space) or ``dt`` (time) ``levels - 1`` times; write ``convergence.csv``."""
    outdir = Path(cfg.outputs if outdir is None else outdir)
    series = _series(cfg, axis, levels)
    step_key = "h" if axis in ("space", "h") else "dt"
    rows = []
    path = outdir / "convergence.csv"
    for k, c in enumerate(series):
        try:
            est = run(c, outdir / f"level_{k}")
        except EvosurfError as err:
            rows.append({"level": k, "h": c.h, "dt": c.dt, "status": f"{FAILED} {type(err).__name__}"})
            _write_csv(path, CONVERGENCE_COLUMNS, rows)
            raise
        r = est.report_
        rows.append({"level": k, "h": c.h, "dt": c.dt, "err_l2_final": r.err_l2_final,
                     "err_l2h1": r.err_l2h1, "mass_abs_err": r.mass_abs_err,
                     "wall_seconds": est.wall_seconds_ if c.wall_clock else 0.0, "status": "ok"})
        _write_csv(path, CONVERGENCE_COLUMNS, rows)
    for col, err_key in (("order_l2_final", "err_l2_final"), ("order_l2h1", "err_l2h1")):
        for row, o in zip(rows, _orders(rows, step_key, err_key)):
            row[col] = o
    _write_csv(path, CONVERGENCE_COLUMNS, rows)
    return rows


def mass_study(cfg: RunConfig, series: str, levels: int, outdir: Path | None = None) -> list[dict]:
    """Mass error over an ``h`` or ``dt`` series; writes ``mass_study.csv``."""
    outdir = Path(cfg.outputs if outdir is None else outdir)
    rows = []
    path = outdir / "mass_study.csv"
    for k, c in enumerate(_series(cfg, series, levels)):
        try:
            est = run(c, outdir / f"level_{k}")
        except EvosurfError as err:
            rows.append({"level": k, "h": c.h, "dt": c.dt, "status": f"{FAILED} {type(err).__name__}"})
            _write_csv(path, MASS_STUDY_COLUMNS, rows)
            raise
        r = est.report_
        row = {"level": k, "h": c.h, "dt": c.dt, "mass_initial": r.mass_initial, "mass_avg": r.mass_avg,
               "mass_abs_err": r.mass_abs_err, "status": "ok"}
        if rows and r.mass_abs_err > 0:
            row["reduction"] = rows[-1]["mass_abs_err"] / r.mass_abs_err
        rows.append(row)
        _write_csv(path, MASS_STUDY_COLUMNS, rows)
    return rows


def thread_cap() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evosurf", description="Space-time trace FEM for evolving-surface PDEs.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-o", "--outputs", type=Path, help="override the config's output directory")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="single run")
    p.add_argument("config")
    p = sub.add_parser("convergence", help="spatial or temporal convergence study")
    p.add_argument("config")
    p.add_argument("--axis", choices=["space", "time"], required=True)
    p.add_argument("--levels", type=int, required=True)
    p = sub.add_parser("mass", help="mass conservation study")
    p.add_argument("config")
    p.add_argument("--series", choices=["h", "dt"], required=True)
    p.add_argument("--levels", type=int, required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.outputs is not None:
            cfg = replace(cfg, outputs=args.outputs)
        with threadpool_limits(limits=thread_cap()):
            if args.command == "run":
                est = run(cfg)
                r = est.report_
                print(f"{cfg.problem}: err_l2_final={r.err_l2_final:.6g} err_l2h1={r.err_l2h1:.6g} "
                      f"mass_abs_err={r.mass_abs_err:.6g} ({est.wall_seconds_:.1f} s)")
            elif args.command == "convergence":
                for row in convergence_study(cfg, args.axis, args.levels):
                    print(", ".join(f"{c}={_fmt(row.get(c))}" for c in CONVERGENCE_COLUMNS))
            else:
                for row in mass_study(cfg, args.series, args.levels):
                    print(", ".join(f"{c}={_fmt(row.get(c))}" for c in MASS_STUDY_COLUMNS))
    except EvosurfError as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
