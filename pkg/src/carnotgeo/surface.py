"""Hypersurfaces of a Carnot group: charts, quadrature and horizontal geometry.

A surface is described by a :class:`SurfaceSpec`.  Two kinds exist:

``graph``
    ``x_axis = psi(other coordinates)`` over a box (or a superellipse mapped
    from a box).  The defining function is ``x_axis - psi`` so the normal points
    towards increasing ``x_axis``.  One chart; boundary = image of the box faces.
``levelset``
    ``{phi = 0}`` inside a bounding box, assumed closed.  Sampled through one
    graph chart per coordinate axis, glued by a partition of unity built from
    the coordinate gradient of ``phi``.

Every sampled node carries the full list of pointwise quantities needed by the
operators and checks (see :class:`SurfaceSamples`).  Geometry always comes
from jets of the defining function; positions and area factors come from the
chart.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import exprparse as ep
from .algebra import CarnotGroup, left_translate_exprs
from .errors import (
    ChartExtractionFailed,
    DegenerateDefiningFunction,
    DegenerateSlicing,
)

EPS_CHAR = 1e-8

# Sign convention for the vector C_H nu_H: component i is
#   CHNU_SIGN * sum_alpha varpi_alpha sum_j C^alpha_{ij} (nu_H)_j.
# Fixed by matching the tangential divergence theorem on charts (see tests).
CHNU_SIGN = 1.0

POU_POWER = 6


# ---------------------------------------------------------------------------
# Specification
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Region:
    """Superellipse ``sum |(s_a - c_a)/r_a|^{q_a} <= 1`` in graph-domain coordinates."""

    center: tuple[float, ...]
    radii: tuple[float, ...]
    powers: tuple[float, ...]


@dataclass(frozen=True)
class SurfaceSpec:
    kind: str
    expr: str
    grid: tuple[int, ...]
    axis: int | None = None  # graph only (zero-based)
    domain: tuple[tuple[float, float], ...] | None = None  # graph only
    region: Region | None = None  # graph only
    box: tuple[tuple[float, float], ...] | None = None  # levelset only

    def __post_init__(self):
        if self.kind not in ("graph", "levelset"):
            raise ValueError(f"surface kind must be graph or levelset, got {self.kind!r}")
        if self.kind == "graph" and (self.axis is None or (self.domain is None and self.region is None)):
            raise ValueError("graph surfaces need an axis and a domain or region")
        if self.kind == "levelset" and self.box is None:
            raise ValueError("levelset surfaces need a bounding box")

    def with_grid(self, grid: Sequence[int]) -> "SurfaceSpec":
        return replace(self, grid=tuple(int(v) for v in grid))

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind, "expr": self.expr, "grid": list(self.grid)}
        if self.kind == "graph":
            out["vertical"] = f"x{self.axis + 1}"
            if self.domain is not None:
                out["domain"] = [list(b) for b in self.domain]
            if self.region is not None:
                out["region"] = {
                    "center": list(self.region.center),
                    "radii": list(self.region.radii),
                    "powers": list(self.region.powers),
                }
        else:
            out["box"] = [list(b) for b in self.box]
        return out


def spec_from_json(obj: dict, n: int) -> SurfaceSpec:
    """Build a spec from its JSON form; unknown keys are rejected."""
    kind = obj.get("kind")
    allowed = {
        "graph": {"kind", "vertical", "domain", "region", "expr", "grid"},
        "levelset": {"kind", "expr", "box", "grid"},
    }.get(kind)
    if allowed is None:
        raise ValueError(f"unknown surface kind {kind!r}")
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"unknown surface keys: {sorted(unknown)}")
    ep.parse(obj["expr"], n)  # fail early on bad expressions
    grid = tuple(int(v) for v in obj.get("grid", [64] * (n - 1)))
    if kind == "graph":
        axis_name = obj["vertical"]
        if not (axis_name.startswith("x") and axis_name[1:].isdigit()):
            raise ValueError(f"vertical must look like 'x3', got {axis_name!r}")
        axis = int(axis_name[1:]) - 1
        if not 0 <= axis < n:
            raise ValueError(f"vertical axis {axis_name} outside x1..x{n}")
        region = None
        if "region" in obj:
            r = obj["region"]
            extra = set(r) - {"center", "radii", "powers"}
            if extra:
                raise ValueError(f"unknown region keys: {sorted(extra)}")
            region = Region(tuple(map(float, r["center"])), tuple(map(float, r["radii"])), tuple(map(float, r["powers"])))
        domain = tuple(tuple(map(float, b)) for b in obj["domain"]) if "domain" in obj else None
        return SurfaceSpec("graph", obj["expr"], grid, axis=axis, domain=domain, region=region)
    box = tuple(tuple(map(float, b)) for b in obj["box"])
    if len(box) != n:
        raise ValueError(f"levelset box needs {n} intervals")
    return SurfaceSpec("levelset", obj["expr"], grid, box=box)


# ---------------------------------------------------------------------------
# Quadrature grids
# ---------------------------------------------------------------------------
_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class QuadGrid:
    """Tensor-product grid of cells over a parameter box.

    ``rule="midpoint"`` puts one node at each cell centre; ``rule="gauss2"``
    puts the 2^m Gauss points in each cell (used for element assembly).
    """

    bounds: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    rule: str = "midpoint"

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        b = np.asarray(self.bounds, float)
        return (b[:, 1] - b[:, 0]) / np.asarray(self.shape)

    @property
    def volume(self) -> float:
        b = np.asarray(self.bounds, float)
        return float(np.prod(b[:, 1] - b[:, 0]))

    def axis_nodes(self, a: int) -> np.ndarray:
        lo, hi = self.bounds[a]
        N = self.shape[a]
        return lo + (np.arange(N) + 0.5) * (hi - lo) / N

    def vertex_axis(self, a: int) -> np.ndarray:
        lo, hi = self.bounds[a]
        return np.linspace(lo, hi, self.shape[a] + 1)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``(N, m)`` and weights ``(N,)``."""
        h = self.spacing
        if self.rule == "midpoint":
            axes = [self.axis_nodes(a) for a in range(self.dim)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)
            return pts, np.full(len(pts), float(np.prod(h)))
        if self.rule == "gauss2":
            pts, _, _ = self.gauss_points()
            return pts, np.full(len(pts), float(np.prod(h)) / 2**self.dim)
        raise ValueError(f"unknown rule {self.rule!r}")

    def gauss_points(self):
        """Gauss points ordered cell-major, with cell multi-indices and local coordinates in [0,1]."""
        m = self.dim
        h = self.spacing
        cells = np.stack(np.meshgrid(*[np.arange(N) for N in self.shape], indexing="ij"), -1).reshape(-1, m)
        local = np.stack(np.meshgrid(*([0.5 + 0.5 * _GAUSS2] * m), indexing="ij"), -1).reshape(-1, m)
        lo = np.asarray(self.bounds, float)[:, 0]
        pts = lo + (cells[:, None, :] + local[None, :, :]) * h
        return pts.reshape(-1, m), cells, local

    def vertices(self) -> np.ndarray:
        axes = [self.vertex_axis(a) for a in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)

    def faces(self, refine: int = 1):
        """Boundary faces: yields ``(axis, side, nodes, weights)``; side is -1 or +1."""
        m = self.dim
        for a in range(m):
            others = [b for b in range(m) if b != a]
            for side in (-1, 1):
                val = self.bounds[a][0] if side < 0 else self.bounds[a][1]
                if others:
                    sub = QuadGrid(
                        tuple(self.bounds[b] for b in others),
                        tuple(self.shape[b] * refine for b in others),
                    )
                    fp, fw = sub.nodes()
                else:
                    fp, fw = np.zeros((1, 0)), np.ones(1)
                pts = np.empty((len(fp), m))
                pts[:, others] = fp
                pts[:, a] = val
                yield a, side, pts, fw


# ---------------------------------------------------------------------------
# Transforms (dilations and left translations act on charts and on phi)
# ---------------------------------------------------------------------------
class Dilation:
    def __init__(self, g: CarnotGroup, t: float):
        self.g, self.t = g, float(t)
        self.scale = self.t ** g.signature.weights.astype(float)

    def apply(self, X):
        return X * self.scale

    def jacobian(self, X):
        return np.broadcast_to(np.diag(self.scale), X.shape[:-1] + (self.g.n, self.g.n))

    def inverse_exprs(self):
        return [ep.var(i) / float(s) for i, s in enumerate(self.scale)]

    def key(self):
        return ["dilate", self.t]


class Translation:
    def __init__(self, g: CarnotGroup, a):
        self.g = g
        self.a = np.asarray(a, float)

    def apply(self, X):
        return self.g.product(self.a, X)

    def jacobian(self, X):
        J = self.g.translation_jacobian(self.a, X)
        return np.broadcast_to(J, X.shape[:-1] + (self.g.n, self.g.n))

    def inverse_exprs(self):
        return left_translate_exprs(self.g, -self.a, [ep.var(i) for i in range(self.g.n)])

    def key(self):
        return ["translate", [float(v) for v in self.a]]


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------
@dataclass
class SurfaceSamples:
    """Per-node quantities stored as arrays (struct of arrays).

    Frame components are used for every vector: index ``i < h`` is horizontal.
    Arrays tied to the horizontal normal (``nuH``, ``varpi``, ``CHnu``, ``HH``,
    ``gH``, ``xHS``, ``M``) are zero on characteristic nodes.
    """

    group: CarnotGroup
    points: np.ndarray  # (N, n)
    params: np.ndarray  # (N, m) chart parameters
    domain: np.ndarray  # (N, m) graph-domain coordinates (same as params for boxes)
    chart: np.ndarray  # (N,) chart id
    weights: np.ndarray  # (N,) parameter weight times partition weight
    tangents: np.ndarray  # (N, n, m) coordinate tangent vectors d point / d param
    frame: np.ndarray  # (N, n, n)
    metric: np.ndarray  # (N, n, n)
    phi_grad: np.ndarray  # (N, n) coordinate gradient of phi
    phi_hess: np.ndarray  # (N, n, n)
    Xphi: np.ndarray  # (N, n) frame derivatives X_i phi
    nu: np.ndarray  # (N, n)
    PHnu_norm: np.ndarray  # (N,)
    char: np.ndarray  # (N,) bool
    nuH: np.ndarray  # (N, h)
    varpi: np.ndarray  # (N, n-h)
    CHnu: np.ndarray  # (N, h)
    M: np.ndarray  # (N, h, h)  M_ij = X_i X_j phi
    HH: np.ndarray  # (N,)
    xH: np.ndarray  # (N, h)
    gH: np.ndarray  # (N,)
    xHS: np.ndarray  # (N, h)
    JR: np.ndarray  # (N,)
    JH: np.ndarray  # (N,)
    eps_char: float = EPS_CHAR

    def __len__(self) -> int:
        return len(self.points)

    @property
    def h(self) -> int:
        return self.group.h

    @property
    def wH(self) -> np.ndarray:
        """Quadrature weights for the H-perimeter measure."""
        return self.weights * self.JH

    @property
    def wR(self) -> np.ndarray:
        return self.weights * self.JR

    def subset(self, mask) -> "SurfaceSamples":
        kw = {}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            if isinstance(val, np.ndarray) and val.ndim >= 1 and len(val) == len(self.points):
                kw[name] = val[mask]
            else:
                kw[name] = val
        return SurfaceSamples(**kw)

    @cached_property
    def PHS(self) -> np.ndarray:
        """Orthogonal projector of the horizontal layer onto ``HS`` (N, h, h)."""
        eye = np.eye(self.h)
        return eye[None] - np.einsum("ni,nj->nij", self.nuH, self.nuH)

    @cached_property
    def hs_from_params(self) -> np.ndarray:
        """Matrix ``B`` (N, m, h) with ``grad_HS f = B^T grad_u f`` for chart functions ``f``."""
        T = self.tangents
        TtT = np.einsum("nri,nrj->nij", T, T)
        pinv = np.linalg.solve(TtT, np.swapaxes(T, 1, 2))  # (N, m, n)
        AH = self.frame[:, :, : self.h]
        return np.einsum("nmr,nrk,nkj->nmj", pinv, AH, self.PHS)

    def nearchar_mass(self) -> float:
        return float(np.sum(self.wR[self.char]))


def integrate_H(samples: SurfaceSamples, f) -> float:
    """``sum w J_H f`` with ``f`` skipped on characteristic nodes."""
    f = _nodal(samples, f)
    return float(np.sum(np.where(samples.char, 0.0, f * samples.wH)))


def integrate_R(samples: SurfaceSamples, f) -> float:
    f = _nodal(samples, f)
    return float(np.sum(f * samples.wR))


def _nodal(samples: SurfaceSamples, f) -> np.ndarray:
    if callable(f):
        f = f(samples)
    f = np.asarray(f, float)
    if f.ndim == 0:
        f = np.full(len(samples), float(f))
    return np.where(samples.char, 0.0, f) if f.shape == samples.char.shape else f


@dataclass
class BoundarySamples:
    points: np.ndarray  # (N, n)
    params: np.ndarray  # (N, m)
    eta: np.ndarray  # (N, n) frame components
    PHSeta: np.ndarray  # (N, h)
    PHSeta_norm: np.ndarray  # (N,)
    PHnu_norm: np.ndarray  # (N,)
    JR: np.ndarray  # (N,) Riemannian (n-2)-measure factor
    weights: np.ndarray  # (N,) parameter weights
    nu: np.ndarray  # (N, n)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def pairing_weight(self) -> np.ndarray:
        """``w |P_H nu| J_R^bd``: multiply by ``<X, P_HS eta>`` to integrate ``<X, eta_HS>``."""
        return self.weights * self.PHnu_norm * self.JR

    @property
    def measure_weight(self) -> np.ndarray:
        return self.pairing_weight * self.PHSeta_norm

    def integrate_pairing(self, X) -> float:
        """``int <X, eta_HS> dsigma_H^{n-2}`` for horizontal frame vectors ``X`` (N, h)."""
        return float(np.sum(np.einsum("ni,ni->n", X, self.PHSeta) * self.pairing_weight))

    def measure(self, mask=None) -> float:
        w = self.measure_weight
        return float(np.sum(w if mask is None else w[mask]))

    def subset(self, mask) -> "BoundarySamples":
        return BoundarySamples(**{k: getattr(self, k)[mask] for k in self.__dataclass_fields__})


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------
class GraphChart:
    """``x_axis = psi(s)`` with ``s`` either the box parameter or a superellipse image of it."""

    def __init__(self, g: CarnotGroup, spec: SurfaceSpec):
        self.g = g
        self.spec = spec
        n = g.n
        self.axis = spec.axis
        self.others = [k for k in range(n) if k != spec.axis]
        self.psi = ep.parse(spec.expr, n)
        if spec.axis in ep.variables(self.psi):
            raise ValueError(f"graph profile may not depend on its own axis x{spec.axis + 1}")
        self.psi_jet = ep.CompiledJet(self.psi, n, order=1)
        self.region = spec.region
        m = n - 1
        if spec.region is not None:
            self.bounds = tuple((-1.0, 1.0) for _ in range(m))
        else:
            if len(spec.domain) != m:
                raise ValueError(f"graph domain needs {m} intervals")
            self.bounds = tuple(spec.domain)

    @property
    def dim(self) -> int:
        return len(self.others)

    def domain_map(self, u):
        """Graph-domain coordinates ``s`` and ``ds/du`` (N, m, m)."""
        u = np.asarray(u, float)
        N, m = u.shape
        if self.region is None:
            return u.copy(), np.broadcast_to(np.eye(m), (N, m, m)).copy()
        c = np.asarray(self.region.center, float)
        r = np.asarray(self.region.radii, float)
        q = np.asarray(self.region.powers, float)
        v = np.zeros((N, m))
        dv = np.zeros((N, m, m))
        acc = np.zeros(N)  # sum_{l>k} |v_l|^{q_l}
        dacc = np.zeros((N, m))
        with np.errstate(divide="ignore", invalid="ignore"):
            for k in range(m - 1, -1, -1):
                R = np.clip(1.0 - acc, 0.0, None)
                root = R ** (1.0 / q[k])
                v[:, k] = u[:, k] * root
                dv[:, k, k] = root
                droot = np.where(R > 0, (1.0 / q[k]) * R ** (1.0 / q[k] - 1.0), 0.0)
                dv[:, k, :] += (u[:, k] * droot)[:, None] * (-dacc)
                av = np.abs(v[:, k])
                term = av ** q[k]
                dterm = np.where(av > 0, q[k] * av ** (q[k] - 1.0) * np.sign(v[:, k]), 0.0)
                acc = acc + term
                dacc = dacc + dterm[:, None] * dv[:, k, :]
        dv = np.nan_to_num(dv, nan=0.0, posinf=0.0, neginf=0.0)
        return c + r * v, r[None, :, None] * dv

    def region_area(self) -> float:
        """Lebesgue measure of the graph domain."""
        if self.region is None:
            return float(np.prod([hi - lo for lo, hi in self.bounds]))
        from math import gamma

        r = np.asarray(self.region.radii, float)
        q = np.asarray(self.region.powers, float)
        return float(2 ** len(r) * np.prod(r) * np.prod([gamma(1 + 1 / qi) for qi in q]) / gamma(1 + np.sum(1 / q)))

    def evaluate(self, u):
        """Points, tangents ``dX/du`` and graph-domain coordinates at parameters ``u``."""
        s, ds = self.domain_map(u)
        N = len(s)
        n = self.g.n
        X = np.zeros((N, n))
        X[:, self.others] = s
        _, grad, _ = self.psi_jet(X, order=1)
        X[:, self.axis] = ep.evaluate(self.psi, X)
        E = np.zeros((N, n, self.dim))
        for a, k in enumerate(self.others):
            E[:, k, a] = 1.0
            E[:, self.axis, a] = grad[:, k]
        T = np.einsum("nka,nab->nkb", E, ds)
        return X, T, s

    def defining_expr(self) -> ep.Expr:
        return ep.var(self.axis) - self.psi


class AxisChart:
    """Roots of ``phi`` along coordinate lines parallel to ``axis`` inside the box."""

    def __init__(self, g: CarnotGroup, phi: ep.Expr, box, axis: int, scan: int = 64):
        self.g = g
        self.phi = phi
        self.box = np.asarray(box, float)
        self.axis = axis
        self.others = [k for k in range(g.n) if k != axis]
        self.bounds = tuple(tuple(self.box[k]) for k in self.others)
        self.scan = scan
        self.jet = ep.CompiledJet(phi, g.n, order=1)

    @property
    def dim(self) -> int:
        return len(self.others)

    def roots(self, u):
        """All sign changes of phi along each column; returns (column index, points)."""
        n = self.g.n
        N = len(u)
        lo, hi = self.box[self.axis]
        ts = np.linspace(lo, hi, self.scan + 1)
        P = np.zeros((N, self.scan + 1, n))
        P[:, :, self.others] = u[:, None, :]
        P[:, :, self.axis] = ts[None, :]
        vals = ep.evaluate(self.phi, P.reshape(-1, n), strict=False).reshape(N, -1)
        s0, s1 = vals[:, :-1], vals[:, 1:]
        cross = np.isfinite(s0) & np.isfinite(s1) & (((s0 < 0) & (s1 >= 0)) | ((s0 >= 0) & (s1 < 0)))
        col, seg = np.nonzero(cross)
        a = ts[seg].copy()
        b = ts[seg + 1].copy()
        fa = s0[col, seg]
        base = np.zeros((len(col), n))
        base[:, self.others] = u[col]
        for _ in range(64):
            mid = 0.5 * (a + b)
            base[:, self.axis] = mid
            fm = ep.evaluate(self.phi, base, strict=False)
            same = np.sign(fm) == np.sign(fa)
            a = np.where(same, mid, a)
            fa = np.where(same, fm, fa)
            b = np.where(same, b, mid)
        base[:, self.axis] = 0.5 * (a + b)
        return col, base

    def evaluate_roots(self, u):
        col, X = self.roots(u)
        _, grad, _ = self.jet(X, order=1)
        n = self.g.n
        dj = grad[:, self.axis]
        T = np.zeros((len(X), n, self.dim))
        with np.errstate(divide="ignore", invalid="ignore"):
            for a, k in enumerate(self.others):
                T[:, k, a] = 1.0
                T[:, self.axis, a] = -grad[:, k] / dj
        gq = np.abs(grad) ** POU_POWER
        pou = gq[:, self.axis] / np.sum(gq, axis=1)
        return col, X, T, pou


# ---------------------------------------------------------------------------
# Surface
# ---------------------------------------------------------------------------
class Surface:
    """A surface spec bound to a group, optionally pushed forward by dilations/translations."""

    def __init__(self, group: CarnotGroup, spec: SurfaceSpec, transforms: tuple = ()):
        self.group = group
        self.spec = spec
        self.transforms = tuple(transforms)
        if spec.kind == "graph":
            self.base_chart = GraphChart(group, spec)
            self.base_phi = self.base_chart.defining_expr()
        else:
            self.base_chart = None
            self.base_phi = ep.parse(spec.expr, group.n)

    # -- construction helpers ------------------------------------------------
    def dilated(self, t: float) -> "Surface":
        return Surface(self.group, self.spec, self.transforms + (Dilation(self.group, t),))

    def translated(self, a) -> "Surface":
        return Surface(self.group, self.spec, self.transforms + (Translation(self.group, a),))

    def with_grid(self, grid: Sequence[int]) -> "Surface":
        return Surface(self.group, self.spec.with_grid(grid), self.transforms)

    @property
    def closed(self) -> bool:
        return self.spec.kind == "levelset"

    @property
    def is_z_graph(self) -> bool:
        return self.spec.kind == "graph" and self.group.signature.ord(self.spec.axis) >= 2

    @property
    def param_dim(self) -> int:
        return self.group.n - 1

    def digest(self) -> str:
        payload = {
            "group": self.group.describe()["constants"],
            "signature": list(self.group.signature.h),
            "surface": self.spec.to_json(),
            "transforms": [t.key() for t in self.transforms],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    @cached_property
    def phi(self) -> ep.Expr:
        """Defining function of the transformed surface."""
        e = self.base_phi
        for t in self.transforms:
            e = ep.substitute(e, dict(enumerate(t.inverse_exprs())))
        return e

    @cached_property
    def jet(self) -> ep.CompiledJet:
        return ep.CompiledJet(self.phi, self.group.n)

    def push(self, X, T):
        for t in self.transforms:
            J = t.jacobian(X)
            T = np.einsum("nij,njb->nib", J, T)
            X = t.apply(X)
        return X, T

    def param_grid(self, grid: Sequence[int] | None = None, rule: str = "midpoint") -> QuadGrid:
        if self.spec.kind != "graph":
            raise ValueError("parameter grids are defined for graph surfaces only")
        shape = tuple(grid or self.spec.grid)
        return QuadGrid(self.base_chart.bounds, shape, rule)

    # -- sampling --------------------------------------------------------------
    def sample(self, grid: Sequence[int] | None = None, eps_char: float = EPS_CHAR) -> SurfaceSamples:
        """Composite-midpoint samples of the whole surface."""
        shape = tuple(grid or self.spec.grid)
        if self.spec.kind == "graph":
            u, w = self.param_grid(shape).nodes()
            return self.sample_params(u, w, eps_char)
        return self._sample_levelset(shape, eps_char)

    def sample_params(self, u, w, eps_char: float = EPS_CHAR) -> SurfaceSamples:
        """Samples of a graph surface at explicit chart parameters."""
        X, T, s = self.base_chart.evaluate(u)
        X, T = self.push(X, T)
        return compute_geometry(self.group, self.jet, X, T, np.asarray(w, float), u, s, np.zeros(len(u), int), eps_char)

    def _sample_levelset(self, shape, eps_char) -> SurfaceSamples:
        g = self.group
        box = self.spec.box
        parts = []
        for axis in range(g.n):
            chart = AxisChart(g, self.base_phi, box, axis)
            m = chart.dim
            if len(shape) != m:
                raise ValueError(f"levelset grid needs {m} entries")
            u, w = QuadGrid(chart.bounds, tuple(shape)).nodes()
            col, X, T, pou = chart.evaluate_roots(u)
            keep = pou > 1e-16
            if not np.any(keep):
                continue
            parts.append((axis, u[col][keep], w[col][keep] * pou[keep], X[keep], T[keep]))
        if not parts:
            raise ChartExtractionFailed("no coordinate line inside the box crosses the levelset")
        u = np.concatenate([p[1] for p in parts])
        w = np.concatenate([p[2] for p in parts])
        X = np.concatenate([p[3] for p in parts])
        T = np.concatenate([p[4] for p in parts])
        chart_id = np.concatenate([np.full(len(p[1]), p[0]) for p in parts])
        X, T = self.push(X, T)
        return compute_geometry(g, self.jet, X, T, w, u, u, chart_id, eps_char)

    def boundary(self, grid: Sequence[int] | None = None, refine: int = 1) -> BoundarySamples:
        """Boundary nodes on the faces of the graph parameter box (empty for levelsets)."""
        g = self.group
        n = g.n
        if self.spec.kind == "levelset":
            z = np.zeros((0,))
            return BoundarySamples(
                np.zeros((0, n)), np.zeros((0, n - 1)), np.zeros((0, n)), np.zeros((0, g.h)), z, z, z, z, np.zeros((0, n))
            )
        qg = self.param_grid(grid)
        parts = []
        for a, side, u, w in qg.faces(refine):
            X, T, _ = self.base_chart.evaluate(u)
            X, T = self.push(X, T)
            others = [b for b in range(qg.dim) if b != a]
            E = T[:, :, others]
            d = side * T[:, :, a]
            bs = curve_frame(g, self.jet, X, E, d, w)
            bs.params = u
            parts.append(bs)
        return BoundarySamples(
            **{k: np.concatenate([getattr(p, k) for p in parts]) for k in BoundarySamples.__dataclass_fields__}
        )


def make_surface(group: CarnotGroup, spec_or_json, n_check: bool = True) -> Surface:
    spec = spec_or_json if isinstance(spec_or_json, SurfaceSpec) else spec_from_json(spec_or_json, group.n)
    return Surface(group, spec)


# ---------------------------------------------------------------------------
# Pointwise geometry
# ---------------------------------------------------------------------------
def normal_data(g: CarnotGroup, grad: np.ndarray, X: np.ndarray):
    """Frame derivatives of phi and the unit normal; raises on vanishing gradient."""
    A = g.frame_matrix(X)
    Xphi = np.einsum("nri,nr->ni", A, grad)
    pn = np.linalg.norm(Xphi, axis=1)
    if np.any(pn < 1e-14):
        raise DegenerateDefiningFunction("the Riemannian gradient of the defining function vanishes on the surface")
    return A, Xphi, pn


def compute_geometry(g, jet, X, T, w, u, s, chart_id, eps_char=EPS_CHAR) -> SurfaceSamples:
    """Evaluate every per-node field from the jet of the defining function."""
    n, h = g.n, g.h
    _, grad, hess = jet(X)
    A, Xphi, pn = normal_data(g, grad, X)
    nu = Xphi / pn[:, None]
    pH = Xphi[:, :h]
    pHn = np.linalg.norm(pH, axis=1)
    PHnu_norm = pHn / pn
    char = PHnu_norm < eps_char
    safe = np.where(char, 1.0, pHn)
    nuH = np.where(char[:, None], 0.0, pH / safe[:, None])
    varpi = np.where(char[:, None], 0.0, Xphi[:, h:] / safe[:, None])

    CH = np.einsum("na,ija->nij", varpi, g.C[:h, :h, h:])
    CHnu = CHNU_SIGN * np.einsum("nij,nj->ni", CH, nuH)

    dA = g.frame_derivative(X)  # (N, r, i, m)
    AH = A[:, :, :h]
    M = np.einsum("nri,nrs,nsj->nij", AH, hess, AH) + np.einsum("nmi,nrjm,nr->nij", AH, dA[:, :, :h, :], grad)
    trM = np.einsum("nii->n", M)
    quad = np.einsum("ni,nij,nj->n", nuH, M, nuH)
    HH = np.where(char, 0.0, -(trM - quad) / safe)

    G = np.swapaxes(np.linalg.inv(A), 1, 2) @ np.linalg.inv(A)
    gram = np.einsum("nia,nij,njb->nab", T, G, T)
    JR = np.sqrt(np.clip(np.linalg.det(gram), 0.0, None))
    JH = np.where(char, 0.0, PHnu_norm * JR)

    xH = X[:, :h].copy()
    gH = np.einsum("ni,ni->n", xH, nuH)
    xHS = np.where(char[:, None], 0.0, xH - gH[:, None] * nuH)
    return SurfaceSamples(
        group=g,
        points=X,
        params=np.asarray(u, float),
        domain=np.asarray(s, float),
        chart=np.asarray(chart_id),
        weights=np.asarray(w, float),
        tangents=T,
        frame=A,
        metric=G,
        phi_grad=grad,
        phi_hess=hess,
        Xphi=Xphi,
        nu=nu,
        PHnu_norm=PHnu_norm,
        char=char,
        nuH=nuH,
        varpi=varpi,
        CHnu=CHnu,
        M=np.where(char[:, None, None], 0.0, M),
        HH=HH,
        xH=xH,
        gH=gH,
        xHS=xHS,
        JR=JR,
        JH=JH,
        eps_char=eps_char,
    )


def curve_frame(g: CarnotGroup, jet, X, E, d, w) -> BoundarySamples:
    """Boundary-type measure on an (n-2)-dimensional piece of the surface.

    ``E`` (N, n, n-2) spans the piece, ``d`` (N, n) is a tangent vector of the
    surface pointing out of it.  ``eta`` is ``d`` made G-orthogonal to ``E``
    and normalised.
    """
    _, grad, _ = jet(X, order=1)
    A, Xphi, pn = normal_data(g, grad, X)
    nu = Xphi / pn[:, None]
    h = g.h
    Ainv = np.linalg.inv(A)
    G = np.swapaxes(Ainv, 1, 2) @ Ainv
    if E.shape[2]:
        EGE = np.einsum("nia,nij,njb->nab", E, G, E)
        EGd = np.einsum("nia,nij,nj->na", E, G, d)
        det = np.linalg.det(EGE)
        ok = det > 1e-300
        coef = np.zeros_like(EGd)
        coef[ok] = np.linalg.solve(EGE[ok], EGd[ok][..., None])[..., 0]
        JR = np.sqrt(np.clip(det, 0.0, None))
    else:
        coef = np.zeros((len(X), 0))
        JR = np.ones(len(X))
    dperp = d - np.einsum("nia,na->ni", E, coef)
    dn = np.sqrt(np.clip(np.einsum("ni,nij,nj->n", dperp, G, dperp), 0.0, None))
    good = dn > 0
    eta_c = np.where(good[:, None], dperp / np.where(good, dn, 1.0)[:, None], 0.0)
    eta = np.einsum("nij,nj->ni", Ainv, eta_c)
    pH = Xphi[:, :h]
    pHn = np.linalg.norm(pH, axis=1)
    nuH = np.where(pHn[:, None] > 0, pH / np.where(pHn > 0, pHn, 1.0)[:, None], 0.0)
    PHeta = eta[:, :h]
    PHSeta = PHeta - np.einsum("ni,ni->n", PHeta, nuH)[:, None] * nuH
    JR = np.where(good, JR, 0.0)
    return BoundarySamples(
        points=X,
        params=np.zeros((len(X), g.n - 1)),
        eta=eta,
        PHSeta=PHSeta,
        PHSeta_norm=np.linalg.norm(PHSeta, axis=1),
        PHnu_norm=pHn / pn,
        JR=JR,
        weights=np.asarray(w, float),
        nu=nu,
    )


# ---------------------------------------------------------------------------
# Convenience wrappers matching the operation list
# ---------------------------------------------------------------------------
def normals_at(g: CarnotGroup, phi: ep.Expr, x, eps_char: float = EPS_CHAR):
    """``(nu, P_H nu, |P_H nu|, nu_H or None)`` at a single point."""
    x = np.atleast_2d(np.asarray(x, float))
    _, grad, _ = ep.CompiledJet(phi, g.n, order=1)(x, order=1)
    _, Xphi, pn = normal_data(g, grad, x)
    nu = Xphi[0] / pn[0]
    PH = nu[: g.h]
    norm = float(np.linalg.norm(PH))
    return nu, PH, norm, (PH / norm if norm >= eps_char else None)


def mean_curvature_H(g: CarnotGroup, phi: ep.Expr, x, eps_char: float = EPS_CHAR) -> float:
    from .errors import CharacteristicPoint

    x = np.atleast_2d(np.asarray(x, float))
    jet = ep.CompiledJet(phi, g.n)
    T = np.zeros((1, g.n, g.n - 1))
    smp = compute_geometry(g, jet, x, T, np.ones(1), np.zeros((1, g.n - 1)), np.zeros((1, g.n - 1)), np.zeros(1, int), eps_char)
    if smp.char[0]:
        raise CharacteristicPoint(f"point {x[0].tolist()} is characteristic")
    return float(smp.HH[0])


def sample_surface(g: CarnotGroup, spec: SurfaceSpec, grid=None, eps_char: float = EPS_CHAR) -> SurfaceSamples:
    return Surface(g, spec).sample(grid, eps_char)


def boundary_samples(g: CarnotGroup, spec: SurfaceSpec, grid=None) -> BoundarySamples:
    return Surface(g, spec).boundary(grid)


def vertical_projection_measure(surface: Surface, region=None, grid=None) -> dict:
    """``int_region varpi_alpha dsigma_H`` by quadrature and by Lebesgue measure.

    ``region`` is a sub-box of the graph domain (defaults to the full domain).
    """
    if not surface.is_z_graph:
        raise ValueError("vertical projection needs a graph over a vertical axis")
    if surface.transforms:
        raise ValueError("vertical projection is measured on untransformed graphs")
    g = surface.group
    smp = surface.sample(grid)
    alpha = surface.spec.axis - g.h
    chart = surface.base_chart
    if region is None:
        mask = np.ones(len(smp), bool)
        lebesgue = chart.region_area()
    else:
        region = np.asarray(region, float)
        mask = np.all((smp.domain >= region[:, 0]) & (smp.domain <= region[:, 1]), axis=1)
        lebesgue = float(np.prod(region[:, 1] - region[:, 0]))
    quad = float(np.sum(np.where(mask & ~smp.char, smp.wH * smp.varpi[:, alpha], 0.0)))
    # characteristic nodes carry zero H-weight; their projected area is still real
    quad += float(np.sum(np.where(mask & smp.char, smp.weights * smp.nu[:, surface.spec.axis] * smp.JR, 0.0)))
    return {"quadrature": quad, "lebesgue": lebesgue, "discrepancy": abs(quad - lebesgue)}


# ---------------------------------------------------------------------------
# Level-curve slicing of two-dimensional charts
# ---------------------------------------------------------------------------
def slice_measure(surface: Surface, values: np.ndarray, grid: QuadGrid, level: float) -> float:
    """``sigma_H^{n-2}`` of ``{f = level}`` where ``f`` is given at the grid vertices.

    Contours are traced with marching squares on the vertex grid; each
    segment contributes ``|P_H nu| |P_HS eta| |E|_G`` at its midpoint.
    """
    from skimage import measure

    if grid.dim != 2:
        raise DegenerateSlicing("level-curve slicing is implemented for two-dimensional charts")
    shape = tuple(s + 1 for s in grid.shape)
    F = np.asarray(values, float).reshape(shape)
    contours = measure.find_contours(F, level)
    if not contours:
        return 0.0
    h = grid.spacing
    lo = np.asarray(grid.bounds, float)[:, 0]
    mids, segs = [], []
    for c in contours:
        uc = lo + c * h
        mids.append(0.5 * (uc[1:] + uc[:-1]))
        segs.append(uc[1:] - uc[:-1])
    mid = np.concatenate(mids)
    seg = np.concatenate(segs)
    keep = np.linalg.norm(seg, axis=1) > 0
    mid, seg = mid[keep], seg[keep]
    if len(mid) == 0:
        return 0.0
    X, T, _ = surface.base_chart.evaluate(mid)
    X, T = surface.push(X, T)
    E = np.einsum("nia,na->ni", T, seg)[:, :, None]
    perp = np.stack([seg[:, 1], -seg[:, 0]], axis=1)
    d = np.einsum("nia,na->ni", T, perp)
    bs = curve_frame(surface.group, surface.jet, X, E, d, np.ones(len(X)))
    return float(np.sum(bs.measure_weight))


def voxel_volume(surface: Surface, resolution: int, bounds=None, chunk: int = 2_000_000) -> float:
    """Haar volume of ``{phi < 0}`` by midpoint voxel counting over a bounding box."""
    n = surface.group.n
    if bounds is None:
        if surface.spec.kind != "levelset":
            raise ValueError("voxel volume needs a levelset surface or explicit bounds")
        corners = np.array(np.meshgrid(*surface.spec.box, indexing="ij")).reshape(n, -1).T
        X, _ = surface.push(corners, np.zeros((len(corners), n, 0)))
        if any(isinstance(t, Translation) for t in surface.transforms):
            smp_box = _sampled_bounds(surface)
            bounds = smp_box
        else:
            bounds = np.stack([X.min(0), X.max(0)], 1)
    bounds = np.asarray(bounds, float)
    axes = [lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution for lo, hi in bounds]
    cell = float(np.prod((bounds[:, 1] - bounds[:, 0]) / resolution))
    total = 0
    first = np.stack(np.meshgrid(*axes[1:], indexing="ij"), -1).reshape(-1, n - 1)
    per = max(1, chunk // len(first))
    for start in range(0, resolution, per):
        xs = axes[0][start : start + per]
        P = np.empty((len(xs), len(first), n))
        P[:, :, 0] = xs[:, None]
        P[:, :, 1:] = first[None]
        vals = ep.evaluate(surface.phi, P.reshape(-1, n), strict=False)
        total += int(np.count_nonzero(vals < 0))
    return total * cell


def _sampled_bounds(surface: Surface) -> np.ndarray:
    smp = surface.sample(tuple(max(8, s // 4) for s in surface.spec.grid))
    lo, hi = smp.points.min(0), smp.points.max(0)
    pad = 0.05 * (hi - lo) + 1e-9
    return np.stack([lo - pad, hi + pad], 1)
