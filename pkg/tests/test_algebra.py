import numpy as np
import pytest
from scipy.linalg import expm, logm

from carnotgeo.algebra import (
    HomogeneousNormSpec,
    StrataSignature,
    StructureTensor,
    abelian,
    builtin_group,
    connection_coefficients,
    engel,
    free_step2,
    group_from_json,
    heisenberg,
    hom_dist,
    hom_norm,
    hom_norm4_expr,
    iter_builtins,
    product_with_euclidean,
    validate_algebra,
)
from carnotgeo import exprparse as ep
from carnotgeo.errors import InvalidAlgebra, NegativeDilation, UnsupportedNormForGroup


def heis_matrix(v):
    """Faithful matrix picture of the Heisenberg algebra: [E12, E23] = E13."""
    x, y, t = v
    return np.array([[0.0, x, t], [0.0, 0.0, y], [0.0, 0.0, 0.0]])


def heis_product_oracle(p, q):
    m = logm(expm(heis_matrix(p)) @ expm(heis_matrix(q))).real
    return np.array([m[0, 1], m[1, 2], m[0, 2]])


def frame_oracle(g, p, step=1e-6):
    """Columns d/ds (p • s e_i) at s = 0 by central differences."""
    cols = []
    for i in range(g.n):
        e = np.zeros(g.n)
        e[i] = step
        cols.append((g.product(p, e) - g.product(p, -e)) / (2 * step))
    return np.stack(cols, axis=1)


def test_heisenberg_product_matches_matrix_exponential(rng):
    g = heisenberg(1)
    for _ in range(20):
        p, q = rng.uniform(-2, 2, (2, 3))
        assert np.allclose(g.product(p, q), heis_product_oracle(p, q), atol=1e-10)


def test_heisenberg_product_example():
    g = heisenberg(1)
    # frozen from heis_product_oracle((1,0,0),(0,1,0))
    assert np.allclose(heis_product_oracle([1, 0, 0], [0, 1, 0]), [1, 1, 0.5])
    assert np.allclose(g.product([1, 0, 0], [0, 1, 0]), [1, 1, 0.5], atol=1e-15)


@pytest.mark.parametrize("g", list(iter_builtins()) + [engel()], ids=lambda g: g.name)
def test_identity_and_inverse(g, rng):
    x = rng.normal(size=g.n)
    assert np.allclose(g.product(x, np.zeros(g.n)), x)
    assert np.allclose(g.product(x, g.inverse(x)), 0, atol=1e-14)


def test_heisenberg_inverse_example():
    assert np.allclose(heisenberg(1).product([1, 0, 0], [-1, 0, 0]), 0)


def test_dilation_examples():
    g = heisenberg(1)
    assert np.allclose(g.dilate(2, [1, 1, 1]), [2, 2, 4])
    assert np.allclose(g.dilate(0, [1, 2, 3]), 0)
    assert np.allclose(g.dilate(1, [1, 2, 3]), [1, 2, 3])
    with pytest.raises(NegativeDilation):
        g.dilate(-1, [1, 2, 3])


@pytest.mark.parametrize("g", list(iter_builtins()) + [engel()], ids=lambda g: g.name)
def test_frame_matches_translation_derivative(g, rng):
    for p in rng.uniform(-1.5, 1.5, (5, g.n)):
        assert np.allclose(g.frame_matrix(p), frame_oracle(g, p), atol=1e-8)


def test_heisenberg_frame_column():
    g = heisenberg(1)
    x, y, t = 0.3, -0.7, 2.0
    A = g.frame_matrix(np.array([x, y, t]))
    assert np.allclose(A[:, 0], [1, 0, -y / 2])
    assert np.allclose(A[:, 1], [0, 1, x / 2])
    assert np.isclose(np.linalg.det(A), 1.0)
    assert np.allclose(g.frame_matrix(np.array([0.0, 0.0, 5.0])), np.eye(3))


@pytest.mark.parametrize("g", list(iter_builtins()), ids=lambda g: g.name)
def test_frame_is_orthonormal_for_metric(g, rng):
    P = rng.uniform(-1, 1, (50, g.n))
    A = g.frame_matrix(P)
    G = g.metric_in_coords(P)
    res = np.swapaxes(A, 1, 2) @ G @ A - np.eye(g.n)
    assert np.max(np.abs(res)) < 1e-12
    assert np.allclose(g.frame_matrix(np.zeros(g.n)), np.eye(g.n))


def test_connection_coefficients():
    g = heisenberg(1)
    coeffs = connection_coefficients(g)
    assert coeffs[(1, 2, 3)] == pytest.approx(0.5)
    G = g.connection
    assert np.all(G[: g.h, : g.h, : g.h] == 0)
    assert not connection_coefficients(abelian(3))


def test_validation_examples():
    ok = StructureTensor(StrataSignature((2, 1)), ((1, 2, 3, 1.0), (2, 1, 3, -1.0)))
    assert validate_algebra(ok).valid
    skew = StructureTensor(StrataSignature((2, 1)), ((1, 2, 3, 1.0), (2, 1, 3, 1.0)))
    rep = validate_algebra(skew)
    assert not rep.valid and any("skew" in f for f in rep.failures)
    graded = StructureTensor(StrataSignature((2, 1)), ((1, 2, 3, 1.0), (1, 2, 2, 1.0)))
    rep = validate_algebra(graded)
    assert not rep.valid and any("grading" in f for f in rep.failures)
    with pytest.raises(InvalidAlgebra):
        from carnotgeo.algebra import CarnotGroup

        CarnotGroup(skew)


def test_jacobi_failure_reports_quadruple():
    # [e1,e2]=e3, [e2,e3]=e1 with everything in one stratum breaks Jacobi
    bad = StructureTensor(StrataSignature((4,)), ((1, 2, 3, 1.0), (2, 3, 4, 1.0), (3, 1, 4, 1.0), (1, 4, 2, 1.0)))
    rep = validate_algebra(bad)
    assert "Jacobi identity fails for (i,j,r,s)=(1,2,3,2)" in rep.failures


def test_signature_arithmetic():
    g = heisenberg(1)
    assert (g.n, g.Q, g.h, g.step) == (3, 4, 2, 2)
    p = product_with_euclidean(heisenberg(1), 2)
    assert (p.n, p.signature.h, p.Q) == (5, (4, 1), 6)
    f = free_step2(3)
    assert (f.n, f.Q) == (6, 9)
    e = engel()
    assert e.step == 3 and e.Q == 2 + 2 + 6


def test_heisenberg2_vertical_block():
    g = heisenberg(2)
    expected = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], float)
    assert np.array_equal(g.hmats[4], expected)
    assert g.cnorm == pytest.approx(1.0)


def test_builtin_lookup_and_json():
    assert builtin_group("heisenberg", n=2).n == 5
    g = group_from_json({"signature": {"h": [2, 1]}, "constants": [[1, 2, 3, 1.0]]})
    assert np.allclose(g.product([1, 0, 0], [0, 1, 0]), [1, 1, 0.5])
    with pytest.raises(KeyError):
        builtin_group("nonsense")


def test_koranyi_examples(rng):
    g = heisenberg(1)
    spec = HomogeneousNormSpec()
    assert hom_norm(spec, g, np.array([[0, 0, 0.25]]))[0] == pytest.approx(2 * np.sqrt(0.25))
    assert hom_norm(spec, g, np.array([[1.0, 0, 0]]))[0] == pytest.approx(1.0)
    x = rng.normal(size=(20, 3))
    assert np.allclose(hom_norm(spec, g, g.dilate(3, x)), 3 * hom_norm(spec, g, x))


def test_norm_fourth_power_expression_matches(rng):
    g = heisenberg(2)
    spec = HomogeneousNormSpec()
    c = rng.normal(size=5)
    X = rng.normal(size=(10, 5))
    e = hom_norm4_expr(spec, g, c)
    assert np.allclose(ep.evaluate(e, X) ** 0.25, hom_dist(spec, g, X, c))


def test_generic_norm_is_homogeneous_in_step3(rng):
    g = engel()
    spec = HomogeneousNormSpec(kind="generic_power")
    x = rng.normal(size=(10, 5))
    assert np.allclose(hom_norm(spec, g, g.dilate(2.5, x)), 2.5 * hom_norm(spec, g, x))
    with pytest.raises(UnsupportedNormForGroup):
        hom_norm(HomogeneousNormSpec(), g, x)
