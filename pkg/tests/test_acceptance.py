"""End-to-end acceptance checks.

Each criterion is one test and leaves a one-line PASS/FAIL verdict in
``VERDICTS``; the terminal summary hook in ``conftest.py`` prints them.  The
file also runs as a script: ``python tests/test_acceptance.py``.

The numerical experiments take roughly half an hour in total.
"""
from __future__ import annotations

import functools
import math
import time
from collections import Counter

import numpy as np
import pytest

from evosurf import SpaceTimeTraceFEM
from evosurf.assembly import NodalField, _trace_on_patch, assemble_slab, basis_eval, energy_check
from evosurf.diagnostics import initial_mass, observed_order
from evosurf.geometry import (
    Prism4D,
    quadrature,
    reconstruct_cross_section,
    reconstruct_slab,
    refine,
    simplex_measure,
    subdivide_prism,
)
from evosurf.linsolve import solve_slab
from evosurf.mesh import BoxDomain, TimeGrid, build_box_mesh
from evosurf.problems import get_problem, sphere_problem, surface_coefficients
from evosurf.stepping import initial_state

pytestmark = pytest.mark.slow

VERDICTS: dict[int, str] = {}
BOX = BoxDomain((-2, -2, -2), (2, 2, 2))

# reference mass errors, matched level by level
REFERENCE_MASS_H = {0.5: 0.2302, 0.25: 0.0562, 0.125: 0.0129}
REFERENCE_MASS_DT = {0.8: 0.4973, 0.4: 0.1126, 0.2: 0.0208, 0.1: 0.0052}
SURFACE_AREA_0 = 13.6083


def _verdict(k: int, ok: bool, detail: str) -> None:
    VERDICTS[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(VERDICTS[k])


@functools.lru_cache(maxsize=None)
def _run(problem: str, h: float, dt: float, t_end: float):
    start = time.perf_counter()
    est = SpaceTimeTraceFEM(h=h, dt=dt, t_end=t_end).fit(problem)
    r = est.report_
    return {"l2": r.err_l2_final, "h1": r.err_l2h1, "mass": r.mass_abs_err, "m0": r.mass_initial,
            "methods": [s.method for s in est.solutions_], "seconds": time.perf_counter() - start}


def _fmt(xs):
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


def _orders(steps, errs):
    return observed_order(list(zip(steps, errs)))


# --- 1-3: Example 1 in space --------------------------------------------------

H_SERIES = (0.5, 0.25, 0.125)


def test_criterion_1_spatial_l2_order():
    runs = [_run("shrinking_sphere", h, 1 / 16, 1.0) for h in H_SERIES]
    errs = [r["l2"] for r in runs]
    orders = _orders(H_SERIES, errs)
    seconds = sum(r["seconds"] for r in runs)
    ok = all(1.7 <= o <= 2.5 for o in orders)
    _verdict(1, ok, f"L2(t_N) errors {_fmt(errs)}, orders {_fmt(orders)} (need [1.7, 2.5]); {seconds:.0f} s")
    assert ok


def test_criterion_2_temporal_l2_order():
    dts = (1.0, 0.5, 0.25)
    errs = [_run("shrinking_sphere", 0.125, dt, 1.0)["l2"] for dt in dts]
    floor = _run("shrinking_sphere", 0.125, 1 / 16, 1.0)["l2"]
    orders = _orders(dts, errs)
    # pairs before the spatial floor: the coarser error still lies above it
    counted = [o for o, e in zip(orders, errs) if e > floor]
    ok = bool(counted) and all(1.6 <= o <= 2.5 for o in counted)
    _verdict(2, ok, f"L2(t_N) errors {_fmt(errs)}, spatial floor {floor:.4g}, orders {_fmt(orders)}, "
                    f"counted {_fmt(counted)} (need [1.6, 2.5])")
    assert ok


def test_criterion_3_spatial_h1_order():
    errs = [_run("shrinking_sphere", h, 1 / 16, 1.0)["h1"] for h in H_SERIES]
    orders = _orders(H_SERIES, errs)
    ok = all(0.8 <= o <= 1.4 for o in orders)
    _verdict(3, ok, f"L2(H1) errors {_fmt(errs)}, orders {_fmt(orders)} (need [0.8, 1.4])")
    assert ok


def test_criterion_4_temporal_h1_order_exp_variant():
    dts = (1.0, 0.5, 0.25)
    errs = [_run("shrinking_sphere_exp", 0.125, dt, 1.0)["h1"] for dt in dts]
    orders = _orders(dts, errs)
    ok = all(0.8 <= o <= 1.4 for o in orders)
    _verdict(4, ok, f"L2(H1) errors {_fmt(errs)}, orders {_fmt(orders)} (need [0.8, 1.4])")
    assert ok


def test_criterion_5_single_large_step():
    r = _run("shrinking_sphere", 0.125, 1.0, 1.0)
    ok = r["l2"] < 1.0 and math.isfinite(r["l2"])
    _verdict(5, ok, f"dt = 1, h = 1/8: L2(t_N) error {r['l2']:.4g} (< 1), solver {r['methods']}")
    assert ok


# --- 6: Example 2 mass ------------------------------------------------------------

def _within_decade(value, ref):
    return ref / 10 <= value <= ref * 10


def test_criterion_6_mass_conservation():
    h_runs = [_run("dziuk_moving", h, 0.1, 8.0) for h in H_SERIES]
    h_err = [r["mass"] for r in h_runs]
    h_ratio = [a / b for a, b in zip(h_err, h_err[1:])]
    h_ok = all(2.5 <= q <= 6 for q in h_ratio) and all(
        _within_decade(e, REFERENCE_MASS_H[h]) for h, e in zip(H_SERIES, h_err))

    dts = (0.8, 0.4, 0.2, 0.1)
    dt_err = [_run("dziuk_moving", 0.125, dt, 8.0)["mass"] for dt in dts]
    dt_ratio = [a / b for a, b in zip(dt_err, dt_err[1:])]
    dt_ok = all(2.5 <= q <= 6 for q in dt_ratio) and all(
        _within_decade(e, REFERENCE_MASS_DT[dt]) for dt, e in zip(dts, dt_err))

    # M(0) on Gamma_h(0), three levels
    m0_err = []
    for h in H_SERIES:
        mesh = build_box_mesh(BOX, h)
        p = get_problem("dziuk_moving")
        m0_err.append(abs(initial_mass(p, reconstruct_cross_section(mesh, p, 0.0, "lower")) - SURFACE_AREA_0))
    m0_rate = [math.log2(a / b) for a, b in zip(m0_err, m0_err[1:])]
    m0_ok = all(1.6 <= r <= 2.5 for r in m0_rate)

    ok = h_ok and dt_ok and m0_ok
    _verdict(6, ok, f"h-series {_fmt(h_err)} ratios {_fmt(h_ratio)} [{'ok' if h_ok else 'FAIL'}]; "
                    f"dt-series {_fmt(dt_err)} ratios {_fmt(dt_ratio)} vs {_fmt(REFERENCE_MASS_DT.values())} "
                    f"[{'ok' if dt_ok else 'FAIL'}]; |M(0)-13.6083| {_fmt(m0_err)} rates {_fmt(m0_rate)} "
                    f"[{'ok' if m0_ok else 'FAIL'}]")
    assert ok


# --- 7: properties -----------------------------------------------------------------

def _partition_exact(rng):
    mesh = build_box_mesh(BOX, 0.5)
    worst = 0.0
    for tid in rng.choice(mesh.n_tets, 200, replace=False):
        nodes = mesh.tets[tid]
        prism = Prism4D(int(tid), 1, nodes, mesh.node_coords(nodes), 0.25, 0.5)
        total = sum(P.volume for P in subdivide_prism(prism))
        exact = mesh.tet_volumes([tid])[0] * 0.25
        worst = max(worst, abs(total - exact) / exact)
    return worst <= 1e-12, f"partition rel. err {worst:.1e}"


def _facet_defects(patch):
    facets = patch.verts[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3, 4)
    facets = facets[simplex_measure(facets) > 1e-13]
    _, vid = np.unique(np.round(facets.reshape(-1, 4), 10) + 0.0, axis=0, return_inverse=True)
    keys = np.sort(vid.reshape(-1, 3), axis=1)
    _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    t = facets[first][..., 3]
    on_end = (np.all(np.abs(t - patch.t_lo) < 1e-12, axis=1) | np.all(np.abs(t - patch.t_hi) < 1e-12, axis=1))
    return int(np.sum(counts != np.where(on_end, 1, 2)))


def _watertight():
    mesh = build_box_mesh(BOX, 0.25)
    fine = refine(mesh)
    defects = Counter()
    for name, dt, t_end in (("shrinking_sphere", 0.25, 1.0), ("dziuk_moving", 1.0, 8.0)):
        grid = TimeGrid.from_step(t_end, dt)
        p = get_problem(name)
        for n in range(1, grid.n_slabs + 1):
            defects[name] += _facet_defects(reconstruct_slab(mesh, grid, n, p, fine))
    return sum(defects.values()) == 0, f"watertight defects {dict(defects)}"


def _static_area_rate():
    p = get_problem("static_sphere")
    errs = []
    for h in H_SERIES:
        patch = reconstruct_slab(build_box_mesh(BOX, h), TimeGrid.from_step(1.0, 0.5), 1, p)
        errs.append(abs(np.sum(patch.m3 * patch.beta) - 2 * np.pi))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    return all(3.4 <= q <= 4.6 for q in ratios), f"static area ratios {_fmt(ratios)}"


def _constants():
    mesh = build_box_mesh(BOX, 0.5)
    worst = 0.0
    for name in ("shrinking_sphere", "dziuk_moving"):
        p = get_problem(name)
        fine = refine(mesh)
        patch = reconstruct_slab(mesh, TimeGrid.from_step(1.0, 0.5), 1, p, fine)
        cross = reconstruct_cross_section(mesh, p, 0.0, "lower", fine)
        s = assemble_slab(mesh, patch, cross, NodalField.constant(mesh), p, 0.0, 0.5,
                          source=lambda x, t, n, p=p: surface_coefficients(p, x, t, n).alpha)
        sol = solve_slab(s)
        u = _trace_on_patch(s, sol.coef)[0]
        worst = max(worst, np.linalg.norm(s.A @ np.ones(s.dofs.n_dofs) - s.b) / np.linalg.norm(s.b),
                    float(np.max(np.abs(u - 1.0))))
    return worst <= 1e-9, f"constants residual/trace dev {worst:.1e}"


def _dense_oracle():
    mesh = build_box_mesh(BoxDomain((-1, -1, -1), (1, 1, 1)), 1.0)
    p = sphere_problem("small", 0.3, 1.0, source=lambda x, t: np.cos(x[..., 0] - t))
    fine = refine(mesh)
    patch = reconstruct_slab(mesh, TimeGrid.from_step(0.5, 0.25), 1, p, fine)
    cross = reconstruct_cross_section(mesh, p, 0.0, "lower", fine)
    x = mesh.vertices
    prev = NodalField(mesh, 1.0 + x[:, 0] - x[:, 1] * x[:, 2])
    s = assemble_slab(mesh, patch, cross, prev, p, 0.0, 0.25)
    A = np.zeros((s.dofs.n_dofs,) * 2)
    b = np.zeros(s.dofs.n_dofs)
    for e in patch:
        nodes = mesh.tets[e.parent]
        P = np.eye(3) - np.outer(e.n, e.n)
        for q, wq in zip(*quadrature(e)):
            xq, tq = q[:3], q[3]
            alpha = surface_coefficients(p, xq, tq, e.n).alpha
            w, f = p.velocity(xq, tq), p.source(xq, tq)
            bas = [(s.dofs.dofs([nodes[k]], l)[0], *basis_eval(mesh, e.parent, k, l, xq, tq, 0.0, 0.25))
                   for k in range(4) for l in range(2)]
            for i, vi, gi, _ in bas:
                b[i] += wq * e.beta_geom * f * vi
                for j, vj, gj, dj in bas:
                    A[i, j] += wq * e.beta_geom * ((dj + w @ gj) * vi + p.nu_d * (P @ gj) @ (P @ gi) + alpha * vj * vi)
    for el in cross:
        ids = s.dofs.dofs(mesh.tets[el.parent], 0)
        for q, wq in zip(*quadrature(el)):
            lam = mesh.barycentric(el.parent, q)
            A[np.ix_(ids, ids)] += wq * np.outer(lam, lam)
            b[ids] += wq * prev.evaluate(np.array([el.parent]), lam[None])[0] * lam
    diff = max(np.max(np.abs(s.A.toarray() - A)), np.max(np.abs(s.b - b)))
    return mesh.n_tets <= 100 and diff <= 1e-12, f"dense oracle max diff {diff:.1e} ({mesh.n_tets} tets)"


def _trace_uniqueness():
    mesh = build_box_mesh(BOX, 0.5)
    p = get_problem("shrinking_sphere")
    fine = refine(mesh)
    cross, u0 = initial_state(p, mesh, fine)
    patch = reconstruct_slab(mesh, TimeGrid.from_step(1.0, 0.5), 1, p, fine)
    s = assemble_slab(mesh, patch, cross, u0, p, 0.0, 0.5)
    traces = [_trace_on_patch(s, solve_slab(s, permc_spec=o).coef)[0] for o in ("COLAMD", "MMD_AT_PLUS_A", "NATURAL")]
    dev = max(np.max(np.abs(traces[0] - t)) for t in traces[1:]) / np.max(np.abs(traces[0]))
    return dev <= 1e-8, f"trace dev across pivot orders {dev:.1e}"


def _ellipticity(rng):
    mesh = build_box_mesh(BoxDomain((-3, -3, -3), (3, 3, 3)), 0.5)
    p = get_problem("expanding_sphere")
    grid = TimeGrid.from_step(1.0, 0.5)
    fine = refine(mesh)
    cross, _ = initial_state(p, mesh, fine)
    zero = NodalField.constant(mesh, 0.0)
    systems = []
    for n in (1, 2):
        t0, t1 = grid.slab(n)
        hi = reconstruct_cross_section(mesh, p, t1, "upper", fine)
        systems.append(assemble_slab(mesh, reconstruct_slab(mesh, grid, n, p, fine), cross, zero, p, t0, t1, n,
                                     cross_hi=hi))
        cross = hi
    worst = math.inf
    for _ in range(10):
        rep = energy_check(p, systems, [rng.normal(size=s.dofs.n_dofs) for s in systems])
        worst = min(worst, rep.margin / rep.scale)
    return worst >= -1e-8, f"min (energy - bound)/scale {worst:.3g}"


def test_criterion_7_property_suite():
    rng = np.random.default_rng(7)
    checks = [_partition_exact(rng), _watertight(), _static_area_rate(), _constants(), _dense_oracle(),
              _trace_uniqueness(), _ellipticity(rng)]
    ok = all(c[0] for c in checks)
    _verdict(7, ok, "; ".join(f"{d} [{'ok' if c else 'FAIL'}]" for c, d in checks))
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
