"""Acceptance criteria, one test each, every test printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the "acceptance criteria" section of the terminal summary.
"""

from __future__ import annotations

import itertools
import time

import numpy as np

from carnotgeo import checks as ck
from carnotgeo import exprparse as ep
from carnotgeo.algebra import free_step2, heisenberg, left_translate_exprs, product_with_euclidean, random_points
from carnotgeo.operators import assemble, eigensolve, grad_HS, integration_by_parts_residual
from carnotgeo.surface import Surface, SurfaceSpec, integrate_H

from conftest import (
    PLANE_BALL_REGION,
    curved_graph,
    ellipsoid_h2,
    koranyi_sphere,
    paraboloid,
    plane_ball,
    record,
    unit_patch,
)

ORIGIN = (0.0, 0.0, 0.0)
REL_TOL = ck.DEFAULT_REL_TOL
# a point of the curved t-graph away from its characteristic set
CURVED_PARAMS = (0.6, 0.5)


def curved_point():
    x, y = CURVED_PARAMS
    return (x, y, 0.3 * x**2 + 0.5 * y**2 + 0.1 * x * y + 0.2 * x**3)


def tilted_plane(grid=64) -> Surface:
    """The vertical plane ``x1 = x2 / 2``, which has no characteristic points."""
    return Surface(heisenberg(1), SurfaceSpec("graph", "0.5*x2", (grid, grid), axis=0, region=PLANE_BALL_REGION))


def random_cubic(rng, n=3) -> str:
    """A polynomial of degree at most three in ``n`` variables with uniform coefficients."""
    terms = []
    for degs in itertools.product(range(4), repeat=n):
        if sum(degs) <= 3:
            mono = "*".join(f"x{i + 1}^{d}" for i, d in enumerate(degs) if d) or "1"
            terms.append(f"({rng.uniform(-1.0, 1.0):.6f})*{mono}")
    return "+".join(terms)


def worst(margins: dict) -> float:
    return min(margins.values())


# -- 1 ---------------------------------------------------------------------
def test_c01_algebra_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    groups = [heisenberg(1), heisenberg(2), free_step2(3), product_with_euclidean(heisenberg(1), 2)]
    errs = {}
    for g in groups:
        x, y, z = (random_points(rng, g, 1000) for _ in range(3))
        xy_z = g.product(g.product(x, y), z)
        x_yz = g.product(x, g.product(y, z))
        assoc = np.max(np.abs(xy_z - x_yz) / (1.0 + np.abs(xy_z)))
        auto = 0.0
        for t in (0.5, 2.0, 3.7):
            lhs = g.dilate(t, g.product(x, y))
            rhs = g.product(g.dilate(t, x), g.dilate(t, y))
            auto = max(auto, np.max(np.abs(lhs - rhs) / (1.0 + np.abs(lhs))))
        A = g.frame_matrix(x)
        det = np.max(np.abs(np.linalg.det(A) - 1.0))
        div = np.max(np.abs(np.einsum("nii->n", A[:, : g.h, : g.h]) - g.h))
        errs[g.name] = max(assoc, auto, det, div)
    elapsed = time.perf_counter() - start
    ok = max(errs.values()) <= 1e-12 and elapsed < 5.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f"; {elapsed:.2f} s"
    assert record("C1 algebra exactness", ok, detail)


# -- 2 ---------------------------------------------------------------------
def test_c02_trace_identity_on_every_surface():
    surfaces = {
        "unit_patch": unit_patch(64),
        "plane_ball": plane_ball(64),
        "tilted_plane": tilted_plane(64),
        "koranyi_sphere": koranyi_sphere(64),
        "curved_graph": curved_graph(64),
        "paraboloid": paraboloid(grid=64),
        "ellipsoid_h2": ellipsoid_h2(8),
    }
    res = {}
    for name, surf in surfaces.items():
        smp = surf.sample()
        h = surf.group.h
        total = sum(np.sum(grad_HS(smp, ep.var(i)) ** 2, axis=1) for i in range(h))
        ok = ~smp.char
        res[name] = float(np.max(np.abs(total - (h - 1))[ok]))
    ok = max(res.values()) <= 1e-8
    assert record("C2 trace identity", ok, ", ".join(f"{k} {v:.1e}" for k, v in res.items()))


# -- 3 ---------------------------------------------------------------------
def test_c03_unit_patch_hand_oracles():
    start = time.perf_counter()
    patch = unit_patch(128)
    smp, bd = patch.sample(), patch.boundary()
    sigma = integrate_H(smp, 1.0)
    mink = ck.check_minkowski(patch)
    coarea = ck.check_coarea(patch, "x2", slices=200)
    ibp = integration_by_parts_residual(patch, smp, bd, "x_HS")
    elapsed = time.perf_counter() - start
    q = mink.quantities
    checks = [
        abs(sigma - 1.0) < 1e-12,
        abs(q["lhs"] - 1.0) < 1e-6 and abs(q["rhs"] - 1.0) < 1e-6 and mink.value < 1e-6,
        abs(coarea.quantities["lhs"] - 1.0) < 0.02 and abs(coarea.quantities["rhs"] - 1.0) < 0.02,
        ibp["residual"] < 1e-6,
        elapsed < 10.0,
    ]
    detail = (
        f"sigma_H {sigma:.12f}, Minkowski {q['lhs']:.8f} = {q['rhs']:.8f}, "
        f"coarea {coarea.quantities['lhs']:.5f} / {coarea.quantities['rhs']:.5f}, "
        f"IBP residual {ibp['residual']:.1e}; {elapsed:.2f} s"
    )
    assert record("C3 unit patch oracles", all(checks), detail)


# -- 4 ---------------------------------------------------------------------
def test_c04_minkowski_on_koranyi_sphere():
    start = time.perf_counter()
    coarse = ck.check_minkowski(koranyi_sphere(64))
    fine = ck.check_minkowski(koranyi_sphere(128))
    elapsed = time.perf_counter() - start
    ok = fine.value <= 1e-2 and fine.value < coarse.value and elapsed < 60.0
    detail = f"residual 64^2 {coarse.value:.2e}, 128^2 {fine.value:.2e}; {elapsed:.1f} s"
    assert record("C4 Minkowski on Koranyi sphere", ok, detail)


# -- 5 ---------------------------------------------------------------------
def first_dirichlet(surface):
    return float(eigensolve(assemble(surface), 1).eigenvalues[0])


def test_c05_eigenvalue_convergence_and_dilation():
    lam64 = first_dirichlet(plane_ball(64))
    lam128 = first_dirichlet(plane_ball(128))
    change = abs(lam128 - lam64) / lam128
    dil = {t: abs(first_dirichlet(plane_ball(64).dilated(t)) * t**2 - lam64) / lam64 for t in (0.5, 2.0)}
    ok = change < 0.02 and max(dil.values()) < 0.02
    detail = f"lambda_1 {lam64:.5f} -> {lam128:.5f} ({change:.2%}), dilation errors " + ", ".join(
        f"t={t}: {v:.1e}" for t, v in dil.items()
    )
    assert record("C5 eigenvalue self-convergence", ok, detail)


# -- 6 ---------------------------------------------------------------------
def test_c06_cheeger_chain_on_every_surface():
    surfaces = {
        "unit_patch": unit_patch(64),
        "plane_ball": plane_ball(64),
        "tilted_plane": tilted_plane(64),
        "koranyi_sphere": koranyi_sphere(64),
        "curved_graph": curved_graph(64),
        "paraboloid": paraboloid(grid=64),
        "ellipsoid_h2": ellipsoid_h2(12),
    }
    margins = {}
    for name, surf in surfaces.items():
        kw = {"degree": 6} if name == "ellipsoid_h2" else {}
        margins[name] = ck.check_cheeger_chain(surf, **kw).margins["proof_chain"]
    ok = min(margins.values()) >= -REL_TOL
    assert record("C6 Cheeger chain", ok, ", ".join(f"{k} {v:.3f}" for k, v in margins.items()))


# -- 7 ---------------------------------------------------------------------
def test_c07_chavel_and_reilly():
    sphere = koranyi_sphere(64)
    ell = ellipsoid_h2(12)
    res = {
        "chavel koranyi": worst(ck.check_chavel(sphere).margins),
        "reilly koranyi": worst(ck.check_reilly(sphere).margins),
        "chavel ellipsoid": worst(ck.check_chavel(ell, degree=6).margins),
        "reilly ellipsoid": worst(ck.check_reilly(ell, degree=6).margins),
    }
    drift = {t: abs(worst(ck.check_chavel(sphere.dilated(t)).margins) - res["chavel koranyi"]) for t in (0.5, 2.0)}
    drift_rel = max(drift.values()) / abs(res["chavel koranyi"])
    ok = min(res.values()) >= 0.0 and drift_rel < 0.02
    detail = ", ".join(f"{k} {v:.3f}" for k, v in res.items()) + f", Chavel dilation drift {drift_rel:.1e}"
    assert record("C7 Chavel and Reilly", ok, detail)


# -- 8 ---------------------------------------------------------------------
def test_c08_heinz_sweep():
    radii = np.geomspace(0.1, 4.0, 20)
    rep = ck.check_heinz(paraboloid(grid=64), radii)
    within = [t for t in rep.trace if t["radius"] <= 2.0 / t["C"]]
    area_ok = all(t["margin_area"] >= 0.0 for t in within)
    cylinder_ok = all(t["radius"] <= 2.0 / t["C"] for t in rep.trace)
    ok = len(rep.trace) == 20 and area_ok and cylinder_ok
    detail = (
        f"{len(within)} of 20 radii inside 2/C, min area margin {min(t['margin_area'] for t in rep.trace):.4f}, "
        f"min radius margin {min(t['margin_radius'] for t in rep.trace):.4f}"
    )
    assert record("C8 Heinz estimate", ok, detail)


# -- 9 ---------------------------------------------------------------------
def test_c09_poincare_on_unc_balls():
    cases = {
        "x1=0 origin": (plane_ball(64), ORIGIN),
        "x1=0 off-centre": (plane_ball(128), (0.0, 0.2, 0.03)),
        "x1=x2/2 origin": (tilted_plane(64), ORIGIN),
    }
    res = {}
    for name, (surf, c) in cases.items():
        rep = ck.check_poincare(surf, c, p_list=(1, 2), bumps=10, seed=7)
        keys = [k for k in rep.margins if "diameter" not in k]
        assert len(keys) == 20
        res[name] = min(rep.margins[k] for k in keys)
    ok = min(res.values()) >= 0.0
    assert record("C9 Poincare on UNC balls", ok, ", ".join(f"{k} {v:.3f}" for k, v in res.items()))


# -- 10 --------------------------------------------------------------------
def test_c10_caccioppoli_random_polynomials():
    rng = np.random.default_rng(10)
    surf = curved_graph(64)
    margins = []
    for _ in range(10):
        rep = ck.check_caccioppoli(surf, random_cubic(rng), curved_point(), 0.3)
        margins.append(worst(rep.margins))
    ok = min(margins) >= 0.0
    assert record("C10 Caccioppoli", ok, f"10 cubics, margins {min(margins):.3f} to {max(margins):.3f}")


# -- 11 --------------------------------------------------------------------
def transported_expr(g, text: str, inverse_map) -> str:
    """``phi o inverse_map`` where ``inverse_map`` returns component expressions."""
    e = ep.parse(text, g.n)
    xs = [ep.var(i) for i in range(g.n)]
    return ep.pretty(ep.substitute(e, dict(enumerate(inverse_map(xs)))))


def dilation_case(g, t):
    weights = g.signature.weights

    def pull(xs):
        return [x * ep.Const(float(t) ** (-float(w))) for x, w in zip(xs, weights)]

    return (lambda s: s.dilated(t)), (lambda c: g.dilate(t, np.asarray(c, float))), pull, t


def translation_case(g, a):
    a = np.asarray(a, float)
    a_inv = g.inverse(a)

    def pull(xs):
        return left_translate_exprs(g, a_inv, xs)

    return (lambda s: s.translated(a)), (lambda c: g.product(a, np.asarray(c, float))), pull, 1.0


def margin_suite(plane, sphere, para, centre, phi, push, pull, R_scale):
    g = plane.group
    reps = [
        ck.check_linear_isoperimetric(plane),
        ck.check_cheeger_chain(plane),
        ck.check_poincare(plane, push(centre), p_list=(1, 2), bumps=10, seed=3),
        ck.check_caccioppoli(plane, transported_expr(g, phi, pull), push(centre), 0.9 * R_scale),
        ck.check_chavel(sphere),
        ck.check_reilly(sphere),
        ck.check_heinz(para, [0.3, 0.6, 1.0]),
    ]
    return {f"{r.name}/{k}": v for r in reps for k, v in r.margins.items()}


def test_c11_metamorphic_sign_invariance():
    g = heisenberg(1)
    rng = np.random.default_rng(11)
    phi = random_cubic(rng)
    plane, sphere, para = plane_ball(64), koranyi_sphere(64), paraboloid(grid=32)
    base = margin_suite(plane, sphere, para, ORIGIN, phi, lambda c: np.asarray(c, float), lambda xs: xs, 1.0)
    cases = {f"dilation {t}": dilation_case(g, t) for t in (0.5, 2.0)}
    for j in range(5):
        a = rng.uniform(-1.0, 1.0, g.n)
        cases[f"translation {j}"] = translation_case(g, a)
    flips = []
    for label, (move, push, pull, scale) in cases.items():
        moved = margin_suite(move(plane), move(sphere), move(para), ORIGIN, phi, push, pull, scale)
        assert moved.keys() == base.keys()
        flips += [f"{label}: {k}" for k in base if (base[k] >= 0.0) != (moved[k] >= 0.0)]
    detail = f"{len(base)} margins x {len(cases)} transforms, {len(flips)} sign changes"
    if flips:
        detail += " (" + "; ".join(flips[:5]) + ")"
    assert record("C11 metamorphic invariance", not flips, detail)


# -- 12 --------------------------------------------------------------------
FULL_SELECTION = [
    ("div_identities", {}),
    ("minkowski", {}),
    ("coarea", {"phi": "x2"}),
    ("linear_isoperimetric", {}),
    ("cheeger_chain", {}),
    ("poincare", {"center": list(ORIGIN), "seed": 5}),
    ("caccioppoli", {"phi": "x2^2-x3", "center": list(ORIGIN), "R": 0.9}),
    ("monotonicity", {"center": list(ORIGIN), "radii": [0.2, 0.4, 0.6, 0.8, 1.0, 1.2]}),
]
CLOSED_SELECTION = [("cheeger_chain", {}), ("chavel", {}), ("reilly", {}), ("linear_isoperimetric", {})]


def full_suite() -> str:
    reports = ck.run_checks(plane_ball(64), FULL_SELECTION)
    reports += ck.run_checks(koranyi_sphere(64), CLOSED_SELECTION)
    reports += ck.run_checks(paraboloid(grid=32), [("heinz", {"radii": [0.3, 0.6, 1.0]})])
    return ck.reports_to_json(reports)


def test_c12_determinism_and_budget():
    start = time.perf_counter()
    first = full_suite()
    second = full_suite()
    elapsed = time.perf_counter() - start
    ok = first == second and elapsed < 600.0
    detail = f"{len(first)} bytes, identical={first == second}; two runs {elapsed:.1f} s"
    assert record("C12 determinism", ok, detail)
