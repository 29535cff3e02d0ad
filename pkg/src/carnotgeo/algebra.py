"""Stratified Lie algebras given by structure constants and their Carnot groups.

Coordinates are exponential coordinates of the first kind, indexed from 0 in
code.  User-facing entry points (JSON files, error messages) use 1-based
indices like the usual ``C^r_{ij}`` notation.

The structure tensor is stored densely as ``C[i, j, r]`` (coefficient of
``X_r`` in ``[X_i, X_j]``) because every group handled here has a handful of
dimensions; the sparse entry list is kept for reporting.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IndexOutOfRange,
    InvalidAlgebra,
    InvalidStratification,
    NegativeDilation,
    UnsupportedNormForGroup,
    UnsupportedStep,
)

MATRIX_NORM = "spectral"  # norm used for the constant C = sum_alpha ||C^alpha_H||


# ---------------------------------------------------------------------------
# Signature
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class StrataSignature:
    """Stratum dimensions ``h = (h_1, ..., h_k)``."""

    h: tuple[int, ...]

    def __post_init__(self):
        h = tuple(int(v) for v in self.h)
        if not h or any(v < 1 for v in h):
            raise InvalidStratification(f"every stratum needs dimension >= 1, got {h}")
        object.__setattr__(self, "h", h)

    @property
    def k(self) -> int:
        return len(self.h)

    @property
    def n(self) -> int:
        return sum(self.h)

    @property
    def Q(self) -> int:
        return sum((i + 1) * hi for i, hi in enumerate(self.h))

    @property
    def horizontal_dim(self) -> int:
        return self.h[0]

    @cached_property
    def weights(self) -> np.ndarray:
        """Stratum number of every coordinate (1 for horizontal)."""
        return np.repeat(np.arange(1, self.k + 1), self.h)

    def ord(self, index: int) -> int:
        """Stratum of the zero-based coordinate ``index``."""
        if not 0 <= index < self.n:
            raise IndexOutOfRange(f"index {index + 1} outside 1..{self.n}")
        return int(self.weights[index])

    def stratum_indices(self, i: int) -> range:
        """Zero-based indices of stratum ``i`` (1-based stratum number)."""
        start = sum(self.h[: i - 1])
        return range(start, start + self.h[i - 1])


# ---------------------------------------------------------------------------
# Structure constants and validation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class StructureTensor:
    """Structure constants with skew completion.

    ``entries`` holds ``(i, j, r, value)`` with 1-based indices meaning
    ``C^r_{ij} = value``.  Entries with ``i > j`` are accepted; if only one of
    the two orders is given the other is completed by skew-symmetry.
    """

    signature: StrataSignature
    entries: tuple[tuple[int, int, int, float], ...] = ()

    def dense(self, complete: bool = True) -> np.ndarray:
        n = self.signature.n
        C = np.zeros((n, n, n))
        given = np.zeros((n, n, n), dtype=bool)
        for i, j, r, v in self.entries:
            for idx in (i, j, r):
                if not 1 <= idx <= n:
                    raise IndexOutOfRange(f"entry ({i},{j},{r}) references index {idx} outside 1..{n}")
            C[i - 1, j - 1, r - 1] += float(v)
            given[i - 1, j - 1, r - 1] = True
        if complete:
            fill = given & ~given.transpose(1, 0, 2)
            C = np.where(fill.transpose(1, 0, 2), -C.transpose(1, 0, 2), C)
        return C


@dataclass
class ValidationReport:
    valid: bool
    failures: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.valid


def validate_algebra(tensor: StructureTensor, tol: float = 1e-12) -> ValidationReport:
    """Check skew-symmetry, grading, Jacobi and bracket generation.

    Every failed invariant is listed with 1-based offending indices.
    """
    sig = tensor.signature
    n = sig.n
    C = tensor.dense()
    failures: list[str] = []

    skew = C + C.transpose(1, 0, 2)
    for i, j, r in zip(*np.nonzero(np.abs(skew) > tol)):
        if i <= j:
            failures.append(f"skew-symmetry: C^{r + 1}_{{{i + 1}{j + 1}}} != -C^{r + 1}_{{{j + 1}{i + 1}}}")

    w = sig.weights
    for i, j, r in zip(*np.nonzero(np.abs(C) > tol)):
        if i < j and w[i] + w[j] != w[r]:
            failures.append(
                f"grading: C^{r + 1}_{{{i + 1}{j + 1}}} != 0 but ord({i + 1})+ord({j + 1}) != ord({r + 1})"
            )

    # Jacobi: sum_m C^m_ij C^s_mr + C^m_jr C^s_mi + C^m_ri C^s_mj
    jac = (
        np.einsum("ijm,mrs->ijrs", C, C)
        + np.einsum("jrm,mis->ijrs", C, C)
        + np.einsum("rim,mjs->ijrs", C, C)
    )
    for i, j, r, s in zip(*np.nonzero(np.abs(jac) > tol)):
        if i < j < r:
            failures.append(f"Jacobi identity fails for (i,j,r,s)=({i + 1},{j + 1},{r + 1},{s + 1})")

    if not failures:
        for stratum in range(2, sig.k + 1):
            target = list(sig.stratum_indices(stratum))
            images = []
            for a in sig.stratum_indices(1):
                for b in sig.stratum_indices(stratum - 1):
                    images.append(C[a, b, target])
            rank = np.linalg.matrix_rank(np.array(images)) if images else 0
            if rank < len(target):
                failures.append(f"bracket generation: [H_1, H_{stratum - 1}] spans dim {rank} < h_{stratum}")
    return ValidationReport(not failures, failures)


# ---------------------------------------------------------------------------
# Group
# ---------------------------------------------------------------------------
class CarnotGroup:
    """A Carnot group in exponential coordinates.

    Construction validates the tensor and raises :class:`InvalidAlgebra` on
    failure.  The group law and frames are available for step at most three.
    """

    def __init__(self, tensor: StructureTensor, name: str = "custom"):
        report = validate_algebra(tensor)
        if not report.valid:
            raise InvalidAlgebra(report)
        self.tensor = tensor
        self.name = name
        self.signature = tensor.signature
        self.C = tensor.dense()
        self.C.setflags(write=False)
        # L[m] is the matrix of ad_{e_m}: (L[m])_{r,i} = C^r_{m i}
        self._ad = np.ascontiguousarray(self.C.transpose(0, 2, 1))

    # -- shape helpers -------------------------------------------------------
    @property
    def n(self) -> int:
        return self.signature.n

    @property
    def h(self) -> int:
        return self.signature.horizontal_dim

    @property
    def step(self) -> int:
        return self.signature.k

    @property
    def Q(self) -> int:
        return self.signature.Q

    @property
    def vertical_indices(self) -> range:
        return range(self.h, self.n)

    @cached_property
    def hmats(self) -> dict[int, np.ndarray]:
        """``C^alpha_H`` (h x h) for every vertical ``alpha`` (zero-based keys)."""
        h = self.h
        return {a: self.C[:h, :h, a].copy() for a in self.vertical_indices}

    @cached_property
    def cnorm(self) -> float:
        """``C = sum_alpha ||C^alpha_H||`` with the spectral norm."""
        return float(sum(np.linalg.norm(m, 2) for m in self.hmats.values()))

    def describe(self) -> dict:
        sig = self.signature
        return {
            "name": self.name,
            "signature": list(sig.h),
            "n": sig.n,
            "Q": sig.Q,
            "step": sig.k,
            "cnorm": self.cnorm,
            "matrix_norm": MATRIX_NORM,
            "constants": [
                [int(i) + 1, int(j) + 1, int(r) + 1, float(self.C[i, j, r])]
                for i, j, r in zip(*np.nonzero(self.C))
                if i < j
            ],
        }

    # -- Lie algebra ---------------------------------------------------------
    def bracket(self, x, y) -> np.ndarray:
        """``[x, y]`` for arrays of shape ``(..., n)``."""
        return np.einsum("...i,...j,ijr->...r", x, y, self.C)

    def ad_matrix(self, x) -> np.ndarray:
        """Matrix of ``ad_x`` acting on column vectors: ``ad_x v = [x, v]``."""
        return np.einsum("...m,mri->...ri", np.asarray(x, float), self._ad)

    def _require_law(self) -> None:
        if self.step > 3:
            raise UnsupportedStep(f"group law and frames need step <= 3, this group has step {self.step}")

    # -- group law -----------------------------------------------------------
    def product(self, x, y) -> np.ndarray:
        """BCH product ``x • y`` (exact for step <= 3)."""
        self._require_law()
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        xy = self.bracket(x, y)
        out = x + y + 0.5 * xy
        if self.step == 3:
            out = out + (self.bracket(x, xy) - self.bracket(y, xy)) / 12.0
        return out

    @staticmethod
    def inverse(x) -> np.ndarray:
        return -np.asarray(x, float)

    def dilate(self, t: float, x) -> np.ndarray:
        if t < 0:
            raise NegativeDilation(f"dilation factor must be >= 0, got {t}")
        return np.asarray(x, float) * (float(t) ** self.signature.weights)

    # -- frames and metric ---------------------------------------------------
    def frame_matrix(self, x) -> np.ndarray:
        """Columns are the coordinate components of ``X_i(x)``.

        ``A(x) = I + ad_x/2 + ad_x^2/12``; the quadratic term vanishes in
        step two.  Accepts ``(n,)`` or ``(N, n)`` input.
        """
        self._require_law()
        ad = self.ad_matrix(x)
        A = np.eye(self.n) + 0.5 * ad
        if self.step == 3:
            A = A + (ad @ ad) / 12.0
        return A

    def frame_derivative(self, x) -> np.ndarray:
        """``dA[..., r, i, m] = d A_{r i} / d x_m``."""
        self._require_law()
        L = self._ad  # (m, r, i)
        x = np.asarray(x, float)
        base = 0.5 * np.broadcast_to(L, x.shape[:-1] + L.shape)
        if self.step == 3:
            ad = self.ad_matrix(x)
            extra = np.einsum("mri,...ij->...mrj", L, ad) + np.einsum("...ri,mij->...mrj", ad, L)
            base = base + extra / 12.0
        return np.moveaxis(base, -3, -1)

    def metric_in_coords(self, x) -> np.ndarray:
        """``G = (A A^T)^{-1}`` so that the frame is orthonormal."""
        Ainv = np.linalg.inv(self.frame_matrix(x))
        return np.swapaxes(Ainv, -1, -2) @ Ainv

    def translation_jacobian(self, a, x) -> np.ndarray:
        """Coordinate Jacobian of ``x -> a • x``."""
        self._require_law()
        a = np.asarray(a, float)
        x = np.asarray(x, float)
        ada = self.ad_matrix(a)
        J = np.eye(self.n) + 0.5 * ada
        if self.step == 3:
            ax = self.bracket(a, x)
            # d/dx of ([a,[a,x]] - [x,[a,x]])/12
            adx = self.ad_matrix(x)
            ad_ax = self.ad_matrix(ax)
            J = J + (ada @ ada - (-ad_ax) - adx @ ada) / 12.0
        return J

    @cached_property
    def connection(self) -> np.ndarray:
        """``Gamma[i, j, r] = (C^r_ij - C^i_jr + C^j_ri) / 2``."""
        C = self.C
        return 0.5 * (C - np.einsum("jri->ijr", C) + np.einsum("rij->ijr", C))


def connection_coefficients(g: CarnotGroup) -> dict[tuple[int, int, int], float]:
    """Nonzero Levi-Civita coefficients, keyed by 1-based ``(i, j, r)``."""
    G = g.connection
    return {
        (int(i) + 1, int(j) + 1, int(r) + 1): float(G[i, j, r])
        for i, j, r in zip(*np.nonzero(np.abs(G) > 0))
    }


def bch_product(g: CarnotGroup, x, y) -> np.ndarray:
    return g.product(x, y)


def inverse(x) -> np.ndarray:
    return CarnotGroup.inverse(x)


def dilate(g: CarnotGroup, t: float, x) -> np.ndarray:
    return g.dilate(t, x)


def frame_matrix(g: CarnotGroup, x) -> np.ndarray:
    return g.frame_matrix(x)


def metric_in_coords(g: CarnotGroup, x) -> np.ndarray:
    return g.metric_in_coords(x)


# ---------------------------------------------------------------------------
# Homogeneous norms
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HomogeneousNormSpec:
    """``koranyi_step2`` uses ``(|x_H|^4 + c|x_V|^2)^(1/4)`` with ``c = 16``.

    ``generic_power`` uses ``(sum_i |x^(i)|^(2M/i))^(1/(2M))`` with
    ``M = k!``, which is homogeneous on any group.
    """

    kind: str = "koranyi_step2"
    constant: float = 16.0

    def __post_init__(self):
        if self.kind not in ("koranyi_step2", "generic_power"):
            raise ValueError(f"unknown norm kind {self.kind!r}")


def _check_norm(spec: HomogeneousNormSpec, g: CarnotGroup) -> None:
    if spec.kind == "koranyi_step2" and g.step != 2:
        raise UnsupportedNormForGroup(f"the Koranyi norm needs a step-2 group, got step {g.step}")


def hom_norm(spec: HomogeneousNormSpec, g: CarnotGroup, x) -> np.ndarray:
    """Homogeneous norm of points ``x`` (shape ``(..., n)``)."""
    _check_norm(spec, g)
    x = np.asarray(x, float)
    sig = g.signature
    if spec.kind == "koranyi_step2":
        h = sig.horizontal_dim
        xh2 = np.sum(x[..., :h] ** 2, axis=-1)
        xv2 = np.sum(x[..., h:] ** 2, axis=-1)
        return (xh2 * xh2 + spec.constant * xv2) ** 0.25
    M = math.factorial(sig.k)
    total = 0.0
    for i in range(1, sig.k + 1):
        idx = list(sig.stratum_indices(i))
        total = total + np.sum(x[..., idx] ** 2, axis=-1) ** (M / i)
    return total ** (1.0 / (2 * M))


def hom_norm4_expr(spec: HomogeneousNormSpec, g: CarnotGroup, center=None):
    """Expression for ``rho(center^{-1} • x)^4`` (Koranyi only), used for smooth bumps."""
    from . import exprparse as ep

    _check_norm(spec, g)
    if spec.kind != "koranyi_step2":
        raise UnsupportedNormForGroup("a polynomial fourth power exists only for the Koranyi norm")
    n = g.n
    xs = [ep.var(i) for i in range(n)]
    if center is not None:
        xs = left_translate_exprs(g, -np.asarray(center, float), xs)
    h = g.h
    xh2 = sum((xs[i] * xs[i] for i in range(1, h)), xs[0] * xs[0])
    xv2 = ep.ZERO
    for i in range(h, n):
        xv2 = xv2 + xs[i] * xs[i]
    return xh2 * xh2 + spec.constant * xv2


def hom_dist(spec: HomogeneousNormSpec, g: CarnotGroup, x, y) -> np.ndarray:
    """``rho(y^{-1} • x)``."""
    return hom_norm(spec, g, g.product(g.inverse(y), x))


def left_translate_exprs(g: CarnotGroup, a, xs):
    """Components of ``a • x`` as expressions in the expressions ``xs``."""
    from . import exprparse as ep

    g._require_law()
    n = g.n
    a = [float(v) for v in a]
    C = g.C

    def bracket(u, v):
        out = []
        for r in range(n):
            acc = ep.ZERO
            for i, j in zip(*np.nonzero(C[:, :, r])):
                acc = acc + C[i, j, r] * (u[i] * v[j])
            out.append(acc)
        return out

    av = [ep.Const(v) for v in a]
    ax = bracket(av, xs)
    out = [av[r] + xs[r] + 0.5 * ax[r] for r in range(n)]
    if g.step == 3:
        aax = bracket(av, ax)
        xax = bracket(xs, ax)
        out = [out[r] + (aax[r] - xax[r]) / 12.0 for r in range(n)]
    return out


# ---------------------------------------------------------------------------
# Builtin groups
# ---------------------------------------------------------------------------
def heisenberg(n: int = 1) -> CarnotGroup:
    """``H^n``: ``[X_{2i-1}, X_{2i}] = T`` for ``i = 1..n``."""
    if n < 1:
        raise ValueError("heisenberg needs n >= 1")
    entries = tuple((2 * i - 1, 2 * i, 2 * n + 1, 1.0) for i in range(1, n + 1))
    return CarnotGroup(StructureTensor(StrataSignature((2 * n, 1)), entries), name=f"heisenberg({n})")


def step2_from_tensor(h: int, matrices: Sequence[np.ndarray], name: str = "step2") -> CarnotGroup:
    """Step-2 group whose vertical brackets are given by skew ``h x h`` matrices."""
    mats = [np.asarray(m, float) for m in matrices]
    entries = []
    for a, m in enumerate(mats):
        if m.shape != (h, h):
            raise ValueError("every matrix must be h x h")
        for i in range(h):
            for j in range(h):
                if m[i, j] != 0.0:
                    entries.append((i + 1, j + 1, h + a + 1, float(m[i, j])))
    sig = StrataSignature((h, len(mats)))
    return CarnotGroup(StructureTensor(sig, tuple(entries)), name=name)


def h_type_from_matrices(matrices: Sequence[np.ndarray], tol: float = 1e-10) -> CarnotGroup:
    """Step-2 group of H-type: each ``C^alpha_H`` is orthogonal and they anticommute."""
    mats = [np.asarray(m, float) for m in matrices]
    h = mats[0].shape[0]
    eye = np.eye(h)
    for a, ma in enumerate(mats):
        for b, mb in enumerate(mats):
            target = -2.0 * eye if a == b else np.zeros((h, h))
            if np.max(np.abs(ma @ mb + mb @ ma - target)) > tol:
                raise ValueError("matrices do not satisfy the H-type relations")
    return step2_from_tensor(h, mats, name="h_type")


def free_step2(m: int = 3) -> CarnotGroup:
    """Free step-2 nilpotent group on ``m`` generators."""
    pairs = list(itertools.combinations(range(1, m + 1), 2))
    entries = tuple((i, j, m + a + 1, 1.0) for a, (i, j) in enumerate(pairs))
    return CarnotGroup(StructureTensor(StrataSignature((m, len(pairs))), entries), name=f"free_step2({m})")


def engel() -> CarnotGroup:
    """Step-3 group on two generators: ``[X1,X2]=X3, [X1,X3]=X4, [X2,X3]=X5``."""
    entries = ((1, 2, 3, 1.0), (1, 3, 4, 1.0), (2, 3, 5, 1.0))
    return CarnotGroup(StructureTensor(StrataSignature((2, 1, 2)), entries), name="free_step3(2)")


def abelian(n: int) -> CarnotGroup:
    return CarnotGroup(StructureTensor(StrataSignature((n,))), name=f"R^{n}")


def product_with_euclidean(g: CarnotGroup, m: int) -> CarnotGroup:
    """Direct product ``G x R^m``; the Euclidean factor joins the first stratum."""
    sig = g.signature
    h = sig.horizontal_dim

    def shift(idx: int) -> int:  # 1-based
        return idx if idx <= h else idx + m

    entries = tuple(
        (shift(int(i) + 1), shift(int(j) + 1), shift(int(r) + 1), float(g.C[i, j, r]))
        for i, j, r in zip(*np.nonzero(g.C))
        if i < j
    )
    new_sig = StrataSignature((h + m,) + sig.h[1:])
    return CarnotGroup(StructureTensor(new_sig, entries), name=f"{g.name}xR^{m}")


def builtin_group(name: str, **params) -> CarnotGroup:
    """Look up a builtin by name; ``params`` are passed through."""
    if name == "heisenberg":
        return heisenberg(int(params.get("n", 1)))
    if name in ("free_step2", "free"):
        return free_step2(int(params.get("m", 3)))
    if name in ("engel", "free_step3"):
        return engel()
    if name == "abelian":
        return abelian(int(params.get("n", 3)))
    if name == "product_with_euclidean":
        base = builtin_group(**params["base"]) if isinstance(params.get("base"), dict) else heisenberg(1)
        return product_with_euclidean(base, int(params.get("m", 1)))
    if name == "step2_from_tensor":
        return step2_from_tensor(int(params["h"]), params["matrices"])
    if name == "h_type_from_matrices":
        return h_type_from_matrices(params["matrices"])
    raise KeyError(f"unknown builtin group {name!r}")


def group_from_json(obj: dict) -> CarnotGroup:
    """Build a group from the JSON form used by configs and ``validate-group``."""
    if "builtin" in obj:
        params = {k: v for k, v in obj.items() if k != "builtin"}
        return builtin_group(obj["builtin"], **params)
    return CarnotGroup(tensor_from_json(obj))


def tensor_from_json(obj: dict) -> StructureTensor:
    unknown = set(obj) - {"signature", "constants", "name"}
    if unknown:
        raise ValueError(f"unknown keys in group definition: {sorted(unknown)}")
    sig = StrataSignature(tuple(obj["signature"]["h"]))
    n_declared = obj["signature"].get("n")
    if n_declared is not None and int(n_declared) != sig.n:
        raise InvalidStratification(f"declared n={n_declared} but sum(h)={sig.n}")
    entries = tuple((int(i), int(j), int(r), float(v)) for i, j, r, v in obj.get("constants", []))
    return StructureTensor(sig, entries)


def random_points(rng: np.random.Generator, g: CarnotGroup, count: int, scale: float = 1.0) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(count, g.n))


def iter_builtins() -> Iterable[CarnotGroup]:
    """Groups used by the algebra acceptance run."""
    yield heisenberg(1)
    yield heisenberg(2)
    yield free_step2(3)
    yield product_with_euclidean(heisenberg(1), 2)
