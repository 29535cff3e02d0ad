import numpy as np
import pytest

from carnotgeo import exprparse as ep
from carnotgeo.algebra import abelian, heisenberg
from carnotgeo.errors import CharacteristicPoint, DegenerateSlicing
from carnotgeo.surface import (
    QuadGrid,
    Surface,
    SurfaceSpec,
    integrate_H,
    mean_curvature_H,
    normals_at,
    slice_measure,
    spec_from_json,
    vertical_projection_measure,
    voxel_volume,
)

from conftest import curved_graph, koranyi_sphere, paraboloid, plane_ball, unit_patch


def horizontal_mean_curvature_oracle(g, phi, p, step=1e-5):
    """-div_H of the normalised horizontal gradient, by differences along the frame."""
    jet = ep.CompiledJet(phi, g.n, order=1)

    def nu_h(q):
        grad = jet(q[None], order=1)[1][0]
        XH = g.frame_matrix(q)[:, : g.h].T @ grad
        return XH / np.linalg.norm(XH)

    div = 0.0
    for i in range(g.h):
        e = np.zeros(g.n)
        e[i] = step
        div += (nu_h(g.product(p, e))[i] - nu_h(g.product(p, -e))[i]) / (2 * step)
    return -div


def test_vertical_plane_normal(h1):
    nu, PH, norm, nuH = normals_at(h1, ep.parse("x1", 3), [0.0, 0.3, 0.7])
    assert norm == pytest.approx(1.0)
    assert np.allclose(nuH, [1.0, 0.0])


def test_characteristic_origin_of_paraboloid(h1):
    phi = ep.parse("x3-(x1^2+x2^2)/4", 3)
    _, _, norm, nuH = normals_at(h1, phi, [0.0, 0.0, 0.0])
    assert norm == 0.0 and nuH is None
    with pytest.raises(CharacteristicPoint):
        mean_curvature_H(h1, phi, [0.0, 0.0, 0.0])


def test_horizontal_plane_normal_at_unit_x(h1):
    _, _, norm, _ = normals_at(h1, ep.parse("x3", 3), [1.0, 0.0, 0.0])
    assert norm == pytest.approx(0.5 / np.sqrt(1.25))


def test_mean_curvature_against_frame_differences(h1, rng):
    phi = ep.parse("(x1^2+x2^2)^2+16*x3^2-1", 3)
    for p in ([1.0, 0.0, 0.0], [0.3, -0.8, 0.1], [-0.5, 0.2, 0.2]):
        p = np.array(p)
        assert mean_curvature_H(h1, phi, p) == pytest.approx(horizontal_mean_curvature_oracle(h1, phi, p), rel=1e-6)
    assert mean_curvature_H(h1, ep.parse("x1", 3), [0.0, 0.4, 0.2]) == 0.0


def test_vertical_hyperplanes_are_minimal(rng):
    from carnotgeo.algebra import free_step2

    g = free_step2(3)
    phi = ep.parse("0.3*x1-0.5*x2+0.2*x3", 6)
    for p in rng.uniform(-1, 1, (5, 6)):
        assert abs(mean_curvature_H(g, phi, p)) < 1e-12


def test_unit_patch_weights():
    s = unit_patch(32).sample()
    assert np.allclose(s.JH, 1.0)
    assert integrate_H(s, 1.0) == pytest.approx(1.0, abs=1e-14)
    assert integrate_H(s, 0.0) == 0.0


def test_dilation_scales_perimeter_by_q_minus_one():
    patch = unit_patch(16)
    base = integrate_H(patch.sample(), 1.0)
    assert integrate_H(patch.dilated(2.0).sample(), 1.0) == pytest.approx(8.0 * base, rel=1e-12)


def test_characteristic_node_flagged(h1):
    spec = SurfaceSpec("graph", "0.25*(x1^2+x2^2)", (3, 3), axis=2, domain=((-1.0, 1.0), (-1.0, 1.0)))
    s = Surface(h1, spec).sample()
    centre = np.argmin(np.linalg.norm(s.points[:, :2], axis=1))
    assert s.char[centre] and s.JH[centre] == 0.0


def test_koranyi_perimeter_self_convergence():
    a = integrate_H(koranyi_sphere(64).sample(), 1.0)
    b = integrate_H(koranyi_sphere(128).sample(), 1.0)
    assert abs(a - b) / b < 0.01


def test_unit_patch_boundary_edges():
    patch = unit_patch(32)
    bd = patch.boundary()
    xH = bd.points[:, :2]
    top = np.isclose(bd.points[:, 1], 1.0)
    assert bd.subset(top).integrate_pairing(xH[top]) == pytest.approx(1.0)
    lid = np.isclose(bd.points[:, 2], 1.0)
    assert bd.subset(lid).integrate_pairing(xH[lid]) == pytest.approx(0.0, abs=1e-14)
    assert len(koranyi_sphere(16).boundary()) == 0


def test_projection_measure_two_routes():
    g = heisenberg(1)
    spec = SurfaceSpec("graph", "0.3*x1^2-0.2*x1*x2+0.1*x2^3", (128, 128), axis=2, domain=((0.0, 1.0), (0.0, 1.0)))
    res = vertical_projection_measure(Surface(g, spec))
    assert res["lebesgue"] == 1.0
    assert res["discrepancy"] < 1e-6


def test_levelset_weights_form_partition(h1):
    s = koranyi_sphere(32).sample()
    assert np.all(s.weights >= 0)
    # every node lies on the surface
    vals = ep.evaluate(ep.parse("(x1^2+x2^2)^2+16*x3^2-1", 3), s.points)
    assert np.max(np.abs(vals)) < 1e-9


def test_slice_of_patch_has_unit_length():
    patch = unit_patch(32)
    qg = patch.param_grid()
    X, T, _ = patch.base_chart.evaluate(qg.vertices())
    assert slice_measure(patch, X[:, 1], qg, 0.37) == pytest.approx(1.0)


def test_slicing_needs_two_dimensional_chart():
    g = heisenberg(2)
    spec = SurfaceSpec("graph", "0", (4, 4, 4, 4), axis=0, domain=((0, 1),) * 4)
    surf = Surface(g, spec)
    qg = surf.param_grid()
    with pytest.raises(DegenerateSlicing):
        slice_measure(surf, np.zeros(5**4), qg, 0.5)


def test_voxel_volume_of_koranyi_ball():
    # Haar volume of the Koranyi unit ball in H^1: integral over |x_H|<1 of (1-|x_H|^4)^(1/2)/2 = pi^2/8
    vol = voxel_volume(koranyi_sphere(64), 128)
    assert vol == pytest.approx(np.pi**2 / 8, rel=0.01)


def test_spec_json_round_trip():
    spec = plane_ball().spec
    assert spec_from_json(spec.to_json(), 3) == spec
    with pytest.raises(ValueError):
        spec_from_json({"kind": "graph", "expr": "0", "vertical": "x1", "bogus": 1}, 3)


def test_digest_tracks_transforms():
    s = paraboloid()
    assert s.digest() != s.dilated(2.0).digest()
    assert s.digest() == paraboloid().digest()


def test_euclidean_plane_geometry():
    g = abelian(3)
    s = Surface(g, SurfaceSpec("graph", "0", (8, 8), axis=2, domain=((0, 1), (0, 1)))).sample()
    assert np.allclose(s.HH, 0.0) and np.allclose(s.JH, 1.0)


def test_curved_graph_has_curvature():
    s = curved_graph(16).sample()
    assert np.min(np.abs(s.HH)) > 0
