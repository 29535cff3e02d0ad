"""Horizontal tangential calculus on sampled surfaces and the discrete spectra.

Pointwise operators act on :class:`HorizontalField` objects, which carry the
frame components ``X^j`` of a horizontal field together with the matrix
``J[i, j] = X_i(X^j)``.  That matrix is all that tangential divergences need,
because the horizontal connection is flat.

Spectral problems are discretised in weak form:

* graph surfaces use bilinear (tensor-product hat) elements on the parameter
  grid with 2^m Gauss points per cell;
* closed levelset surfaces use a global Ritz basis of ambient polynomials,
  because their partition-of-unity charts carry no shared mesh.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import exprparse as ep
from .errors import CharacteristicPoint, EmptyActiveSet, SolverFailure
from .surface import EPS_CHAR, BoundarySamples, QuadGrid, Surface, SurfaceSamples, integrate_H


# ---------------------------------------------------------------------------
# Horizontal fields
# ---------------------------------------------------------------------------
@dataclass
class HorizontalField:
    values: np.ndarray  # (N, h)
    jac: np.ndarray  # (N, h, h), jac[:, i, j] = X_i(X^j)


def _second_frame_derivatives(samples: SurfaceSamples, grad, hess) -> np.ndarray:
    """``X_i X_j f`` for horizontal ``i, j`` from the coordinate jet of ``f``."""
    g = samples.group
    h = g.h
    A = samples.frame
    AH = A[:, :, :h]
    dA = g.frame_derivative(samples.points)
    return np.einsum("nri,nrs,nsj->nij", AH, hess, AH) + np.einsum("nmi,nrjm,nr->nij", AH, dA[:, :, :h, :], grad)


def expr_jet(samples: SurfaceSamples, e: ep.Expr | str):
    if isinstance(e, str):
        e = ep.parse(e, samples.group.n)
    return ep.CompiledJet(e, samples.group.n)(samples.points)


def field_from_exprs(samples: SurfaceSamples, exprs: Sequence[ep.Expr | str]) -> HorizontalField:
    """Field ``sum_j f_j X_j`` with the ``f_j`` given as expressions."""
    h = samples.h
    if len(exprs) != h:
        raise ValueError(f"need {h} component expressions")
    AH = samples.frame[:, :, :h]
    vals = np.empty((len(samples), h))
    jac = np.empty((len(samples), h, h))
    for j, e in enumerate(exprs):
        v, grad, _ = expr_jet(samples, e)
        vals[:, j] = v
        jac[:, :, j] = np.einsum("nri,nr->ni", AH, grad)
    return HorizontalField(vals, jac)


def grad_H_field(samples: SurfaceSamples, e: ep.Expr | str) -> HorizontalField:
    """``grad_H f`` as a horizontal field, including its frame Jacobian."""
    _, grad, hess = expr_jet(samples, e)
    AH = samples.frame[:, :, : samples.h]
    return HorizontalField(np.einsum("nri,nr->ni", AH, grad), _second_frame_derivatives(samples, grad, hess))


def position_field(samples: SurfaceSamples) -> HorizontalField:
    """Horizontal position ``x_H = sum_{i<=h} x_i X_i``."""
    h = samples.h
    jac = np.swapaxes(samples.frame[:, :h, :h], 1, 2).copy()
    return HorizontalField(samples.xH.copy(), jac)


def normal_jacobian(samples: SurfaceSamples) -> np.ndarray:
    """``X_i(nu_H^j)`` using the extension of ``nu_H`` by the level sets of phi."""
    pHn = np.linalg.norm(samples.Xphi[:, : samples.h], axis=1)
    safe = np.where(samples.char, 1.0, pHn)
    Mnu = np.einsum("nik,nk->ni", samples.M, samples.nuH)
    J = (samples.M - np.einsum("ni,nj->nij", Mnu, samples.nuH)) / safe[:, None, None]
    return np.where(samples.char[:, None, None], 0.0, J)


def tangential_position_field(samples: SurfaceSamples) -> HorizontalField:
    """``x_HS = x_H - g_H nu_H`` with its Jacobian computed from second derivatives of phi."""
    pos = position_field(samples)
    Jnu = normal_jacobian(samples)
    nu = samples.nuH
    dg = np.einsum("nij,nj->ni", pos.jac, nu) + np.einsum("nj,nij->ni", samples.xH, Jnu)
    jac = pos.jac - np.einsum("ni,nj->nij", dg, nu) - samples.gH[:, None, None] * Jnu
    return HorizontalField(samples.xHS.copy(), np.where(samples.char[:, None, None], 0.0, jac))


# ---------------------------------------------------------------------------
# Pointwise operators
# ---------------------------------------------------------------------------
def _require_noncharacteristic(samples: SurfaceSamples, strict: bool) -> None:
    if strict and np.any(samples.char):
        raise CharacteristicPoint(f"{int(samples.char.sum())} characteristic nodes in the sample set")


def grad_HS(samples: SurfaceSamples, psi: ep.Expr | str, strict: bool = False) -> np.ndarray:
    """``grad_H psi - <grad_H psi, nu_H> nu_H`` at every node (zero on characteristic nodes)."""
    _require_noncharacteristic(samples, strict)
    _, grad, _ = expr_jet(samples, psi)
    gH = np.einsum("nri,nr->ni", samples.frame[:, :, : samples.h], grad)
    out = np.einsum("nij,nj->ni", samples.PHS, gH)
    return np.where(samples.char[:, None], 0.0, out)


def div_HS(samples: SurfaceSamples, X: HorizontalField) -> np.ndarray:
    """Trace of ``X_i(X^j)`` over ``HS``."""
    out = np.einsum("nij,nij->n", samples.PHS, X.jac)
    return np.where(samples.char, 0.0, out)


def dhs_apply(samples: SurfaceSamples, X: HorizontalField, strict: bool = False) -> np.ndarray:
    """``D_HS X = div_HS X + <C_H nu_H, X>``.

    For a field that is not tangent, ``div_HS`` is still the trace over
    ``HS``; this is the form in which the divergence theorem carries the
    ``-H_H <X, nu_H>`` term.
    """
    _require_noncharacteristic(samples, strict)
    out = div_HS(samples, X) + np.einsum("ni,ni->n", samples.CHnu, X.values)
    return np.where(samples.char, 0.0, out)


def tangential_part(samples: SurfaceSamples, X: HorizontalField) -> HorizontalField:
    """``P_HS X`` with its Jacobian (needs second derivatives of phi)."""
    nu = samples.nuH
    c = np.einsum("ni,ni->n", X.values, nu)
    Jnu = normal_jacobian(samples)
    dc = np.einsum("nij,nj->ni", X.jac, nu) + np.einsum("nj,nij->ni", X.values, Jnu)
    vals = X.values - c[:, None] * nu
    jac = X.jac - np.einsum("ni,nj->nij", dc, nu) - c[:, None, None] * Jnu
    return HorizontalField(vals, jac)


def lhs_apply_strong(samples: SurfaceSamples, phi: ep.Expr | str, strict: bool = False) -> np.ndarray:
    """Strong form of ``L_HS phi = Delta_HS phi + <C_H nu_H, grad_HS phi>``.

    Computed as ``div_HS(grad_H phi) + H_H <grad_H phi, nu_H> + <C_H nu_H, grad_H phi>``,
    which equals ``D_HS`` of the tangential gradient.
    """
    _require_noncharacteristic(samples, strict)
    Y = grad_H_field(samples, phi)
    out = (
        div_HS(samples, Y)
        + samples.HH * np.einsum("ni,ni->n", Y.values, samples.nuH)
        + np.einsum("ni,ni->n", samples.CHnu, Y.values)
    )
    return np.where(samples.char, 0.0, out)


def boundary_field_values(surface: Surface, boundary: BoundarySamples, spec) -> np.ndarray:
    """Frame components of a field at boundary points (``spec`` as in :func:`resolve_field`)."""
    h = surface.group.h
    if isinstance(spec, str) and spec in ("x_H", "x_HS"):
        # <x_HS, P_HS eta> = <x_H, P_HS eta>, so x_H carries the same boundary pairing.
        return boundary.points[:, :h].copy()
    exprs = [ep.parse(e, surface.group.n) if isinstance(e, str) else e for e in spec]
    return np.stack([ep.evaluate(e, boundary.points) for e in exprs], 1) if len(boundary) else np.zeros((0, h))


def resolve_field(samples: SurfaceSamples, spec) -> HorizontalField:
    if isinstance(spec, str):
        if spec == "x_H":
            return position_field(samples)
        if spec == "x_HS":
            return tangential_position_field(samples)
        raise ValueError(f"unknown named field {spec!r}")
    return field_from_exprs(samples, spec)


def integration_by_parts_residual(surface: Surface, samples: SurfaceSamples, boundary: BoundarySamples, X) -> dict:
    """Both sides of the divergence theorem for the horizontal field ``X``.

    ``X`` is ``"x_H"``, ``"x_HS"`` or a list of ``h`` component expressions.
    """
    F = resolve_field(samples, X)
    lhs = integrate_H(samples, dhs_apply(samples, F))
    interior = -integrate_H(samples, samples.HH * np.einsum("ni,ni->n", F.values, samples.nuH))
    bd = boundary.integrate_pairing(boundary_field_values(surface, boundary, X)) if len(boundary) else 0.0
    rhs = interior + bd
    return {"lhs": lhs, "rhs": rhs, "boundary": bd, "residual": abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1.0)}


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------
@dataclass
class DiscreteOperator:
    """Stiffness/mass pair on the active degrees of freedom.

    ``values`` maps coefficient vectors to values at the quadrature samples
    and ``grads[k]`` to the ``k``-th frame component of ``grad_HS``.
    """

    K: object
    M: object
    bc: str
    kind: str  # "fe" or "ritz"
    samples: SurfaceSamples
    values: object
    grads: list
    active: np.ndarray
    n_total: int
    grid: QuadGrid | None = None
    notes: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def full_vector(self, v: np.ndarray) -> np.ndarray:
        """Scatter active coefficients into the full vertex vector (FE only)."""
        out = np.zeros(self.n_total)
        out[self.active] = v
        return out

    def evaluate(self, v: np.ndarray):
        """Values and ``grad_HS`` (N, h) at quadrature samples."""
        vals = self.values @ v
        grads = np.stack([G @ v for G in self.grads], 1)
        return np.asarray(vals).ravel(), np.asarray(grads)

    def constant_vector(self) -> np.ndarray:
        """Coefficients representing the constant function 1."""
        if self.kind == "fe":
            return np.ones(self.size)
        out = np.zeros(self.size)
        out[0] = 1.0
        return out


def _q1_shapes(local: np.ndarray, h: np.ndarray):
    """Values (Q, 2^m) and parameter gradients (Q, 2^m, m) of the Q1 shape functions."""
    m = local.shape[1]
    corners = np.array(list(itertools.product((0, 1), repeat=m)))
    f = np.where(corners[None, :, :] == 1, local[:, None, :], 1.0 - local[:, None, :])
    df = np.where(corners[None, :, :] == 1, 1.0, -1.0) / h[None, None, :]
    vals = np.prod(f, axis=2)
    grads = np.empty(f.shape)
    for a in range(m):
        others = np.prod(np.delete(f, a, axis=2), axis=2)
        grads[:, :, a] = others * df[:, :, a]
    return corners, vals, grads


def assemble(
    surface: Surface,
    grid: Sequence[int] | None = None,
    bc: str = "dirichlet",
    degree: int = 8,
    eps_char: float = EPS_CHAR,
) -> DiscreteOperator:
    """Weak-form stiffness and mass matrices.

    Parameters
    ----------
    surface:
        Graph surfaces are discretised with Q1 elements, closed levelsets with
        the polynomial Ritz basis of total degree ``degree``.
    bc:
        ``"dirichlet"``, ``"neumann"`` or ``"closed"``.
    """
    if bc not in ("dirichlet", "neumann", "closed"):
        raise ValueError(f"unknown boundary condition {bc!r}")
    if surface.closed:
        if bc != "closed":
            raise ValueError("closed surfaces only support the closed problem")
        return _assemble_ritz(surface, grid, degree, eps_char)
    if bc == "closed":
        raise ValueError("the closed problem needs a closed (levelset) surface")
    return _assemble_fe(surface, grid, bc, eps_char)


def _assemble_fe(surface: Surface, grid, bc: str, eps_char: float) -> DiscreteOperator:
    qg = surface.param_grid(grid, rule="gauss2")
    pts, cells, local = qg.gauss_points()
    nloc = len(local)
    w = np.full(len(pts), float(np.prod(qg.spacing)) / nloc)
    smp = surface.sample_params(pts, w, eps_char)
    if np.all(smp.char):
        raise EmptyActiveSet("every quadrature node is characteristic")
    corners, shp, dshp = _q1_shapes(local, qg.spacing)
    vshape = tuple(s + 1 for s in qg.shape)
    n_total = int(np.prod(vshape))
    Q = len(pts)
    cell_of_q = np.repeat(np.arange(len(cells)), nloc)
    loc_of_q = np.tile(np.arange(nloc), len(cells))
    # global vertex index for (q, corner)
    vidx = np.ravel_multi_index(tuple((cells[cell_of_q][:, None, :] + corners[None, :, :]).transpose(2, 0, 1)), vshape)
    phi_q = shp[loc_of_q]  # (Q, C)
    dphi_q = dshp[loc_of_q]  # (Q, C, m)
    B = smp.hs_from_params  # (Q, m, h)
    gHS = np.einsum("qmh,qcm->qch", B, dphi_q)
    gHS = np.where(smp.char[:, None, None], 0.0, gHS)
    wH = np.where(smp.char, 0.0, smp.wH)

    C = phi_q.shape[1]
    rows = np.repeat(vidx, C, axis=1).ravel()
    cols = np.tile(vidx, (1, C)).ravel()
    kvals = (wH[:, None, None] * np.einsum("qah,qbh->qab", gHS, gHS)).ravel()
    mvals = (wH[:, None, None] * phi_q[:, :, None] * phi_q[:, None, :]).ravel()
    K = sp.coo_matrix((kvals, (rows, cols)), shape=(n_total, n_total)).tocsr()
    M = sp.coo_matrix((mvals, (rows, cols)), shape=(n_total, n_total)).tocsr()
    K = ((K + K.T) * 0.5).tocsr()
    M = ((M + M.T) * 0.5).tocsr()

    rowsum = np.asarray(M.sum(axis=1)).ravel()
    active_mask = rowsum > 0
    if bc == "dirichlet":
        multi = np.array(np.unravel_index(np.arange(n_total), vshape)).T
        on_bd = np.any((multi == 0) | (multi == np.array(vshape) - 1), axis=1)
        active_mask &= ~on_bd
    active = np.nonzero(active_mask)[0]
    if len(active) == 0:
        raise EmptyActiveSet("no active degrees of freedom")
    K = K[active][:, active]
    M = M[active][:, active]

    vrows = np.repeat(np.arange(Q), C)
    values = sp.coo_matrix((phi_q.ravel(), (vrows, vidx.ravel())), shape=(Q, n_total)).tocsr()[:, active]
    grads = [
        sp.coo_matrix((gHS[:, :, k].ravel(), (vrows, vidx.ravel())), shape=(Q, n_total)).tocsr()[:, active]
        for k in range(smp.h)
    ]
    return DiscreteOperator(K, M, bc, "fe", smp, values, grads, active, n_total, qg.__class__(qg.bounds, qg.shape, "midpoint"))


def monomial_exponents(n: int, degree: int) -> np.ndarray:
    """All exponent vectors of total degree <= ``degree``, constant first."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = np.zeros(n, int)
            for k in combo:
                e[k] += 1
            out.append(e)
    return np.array(out)


def _assemble_ritz(surface: Surface, grid, degree: int, eps_char: float) -> DiscreteOperator:
    smp = surface.sample(grid, eps_char)
    g = surface.group
    n, h = g.n, g.h
    pts = smp.points
    lo, hi = pts.min(0), pts.max(0)
    center = 0.5 * (lo + hi)
    scale = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
    z = (pts - center) / scale
    E = monomial_exponents(n, degree)
    Nq, B = len(pts), len(E)
    # Legendre products keep the Gram matrix far better conditioned than monomials.
    leg = [np.polynomial.legendre.Legendre.basis(k) for k in range(degree + 1)]
    P = np.stack([[lp(z[:, a]) for a in range(n)] for lp in leg], 0)  # (d+1, n, N)
    dP = np.stack([[lp.deriv()(z[:, a]) for a in range(n)] for lp in leg], 0)
    vals = np.ones((Nq, B))
    for k in range(n):
        vals *= P[E[:, k], k, :].T
    dcoord = np.zeros((Nq, B, n))
    for k in range(n):
        d = np.ones((Nq, B))
        for l in range(n):
            d *= (dP if l == k else P)[E[:, l], l, :].T
        dcoord[:, :, k] = d / scale[k]
    AH = smp.frame[:, :, :h]
    gH = np.matmul(dcoord, AH)  # (N, B, h)
    gHS = np.matmul(gH, smp.PHS)  # PHS is symmetric
    gHS = np.where(smp.char[:, None, None], 0.0, gHS)
    wH = np.where(smp.char, 0.0, smp.wH)
    sw = np.sqrt(wH)
    K = sum((sw[:, None] * gHS[:, :, k]).T @ (sw[:, None] * gHS[:, :, k]) for k in range(h))
    M = (sw[:, None] * vals).T @ (sw[:, None] * vals)
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    grads = [gHS[:, :, k] for k in range(h)]
    op = DiscreteOperator(K, M, "closed", "ritz", smp, vals, grads, np.arange(B), B)
    op.notes.append(f"polynomial Ritz basis of total degree {degree} ({B} functions)")
    return op


# ---------------------------------------------------------------------------
# Eigenproblems
# ---------------------------------------------------------------------------
@dataclass
class EigenResult:
    problem: str
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (size, count) coefficient vectors, M-normalised
    residuals: np.ndarray
    operator: DiscreteOperator

    def to_json(self) -> dict:
        return {
            "problem": self.problem,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(v) for v in self.residuals],
        }

    def first_nonzero(self) -> int:
        """Index of lambda_1: skips the constant mode of closed and Neumann problems."""
        return 1 if self.problem in ("closed", "neumann") else 0


def _residuals(K, M, lam, V):
    out = []
    for k in range(V.shape[1]):
        v = V[:, k]
        Mv = M @ v
        out.append(float(np.linalg.norm(K @ v - lam[k] * Mv) / np.linalg.norm(Mv)))
    return np.array(out)


def eigensolve(op: DiscreteOperator, count: int = 4) -> EigenResult:
    """Smallest ``count`` generalised eigenpairs of ``K v = lambda M v``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if op.kind == "ritz":
        Mm = np.asarray(op.M)
        s, U = np.linalg.eigh(Mm)
        keep = s > 1e-11 * s.max()
        W = U[:, keep] / np.sqrt(s[keep])
        Kr = W.T @ np.asarray(op.K) @ W
        Kr = 0.5 * (Kr + Kr.T)
        lam, Y = np.linalg.eigh(Kr)
        V = W @ Y
        k = min(count, len(lam))
        lam, V = lam[:k], V[:, :k]
        lam = np.where(np.abs(lam) < 1e-12 * max(1.0, abs(lam[-1])), 0.0, lam)
        # the constant function is in the basis; fix the sign convention of each vector
        V = V * np.where(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])] < 0, -1.0, 1.0)
        res = _residuals(op.K, op.M, lam, V)
        op.notes.append(f"Ritz reduction kept {int(keep.sum())} of {len(keep)} basis directions")
        return EigenResult("closed", lam, V, res, op)

    n = op.size
    # Spectra of degenerate surfaces cluster tightly (on a vertical plane in
    # H^1 every vertical line decouples), so a few extra pairs and a wide
    # Krylov space keep the requested ones correctly ordered.
    k = min(count + 4, n - 1)
    ncv = min(n, max(2 * k + 1, 120))
    diagK = op.K.diagonal()
    diagM = op.M.diagonal()
    scale = float(np.median(diagK[diagM > 0] / diagM[diagM > 0])) if np.any(diagM > 0) else 1.0
    sigma = -1e-3 * scale
    v0 = np.ones(n) / np.sqrt(n)
    try:
        lam, V = spla.eigsh(op.K.tocsc(), k=k, M=op.M.tocsc(), sigma=sigma, which="LM", v0=v0, ncv=ncv, tol=1e-10, maxiter=10000)
    except (spla.ArpackNoConvergence, RuntimeError) as exc:  # pragma: no cover - defensive
        raise SolverFailure(f"shift-invert iteration failed: {exc}") from exc
    order = np.argsort(lam)[: min(count, k)]
    lam, V = lam[order], V[:, order]
    # deterministic sign: largest-magnitude entry positive
    V = V * np.where(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])] < 0, -1.0, 1.0)
    if op.bc == "neumann":
        lam[0] = 0.0 if abs(lam[0]) < 1e-9 * max(1.0, abs(lam[-1])) else lam[0]
    res = _residuals(op.K, op.M, lam, V)
    return EigenResult(op.bc, lam, V, res, op)


def rayleigh_quotient(op: DiscreteOperator, v: np.ndarray) -> float:
    return float(v @ (op.K @ v) / (v @ (op.M @ v)))
