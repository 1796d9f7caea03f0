"""Distributed input and output operators for the cavity.

Inputs and velocity outputs depend on a single spatial coordinate and are
expanded in piecewise linear hat functions on [0, 1].  Integrals over the
rectangles are computed on the sub-polygons cut out of each element by the
rectangle and by the hat knots, so every integrand is a polynomial and the
quadrature is exact regardless of how the rectangles sit on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import _element_geometry
from .mesh import CavityMesh, DofMap
from .quadrature import p2_basis, triangle_rule
from .sparse import CooBuilder, SparseMatrix

__all__ = [
    "Rect",
    "SignalBasis",
    "ControlConfig",
    "ControlOperators",
    "ControlError",
    "hierarchical_basis",
    "equidistant_basis",
    "assemble_B",
    "assemble_Cv",
    "assemble_Cp",
    "assemble_control",
    "evaluate_input",
    "block_gram",
]

_TOL = 1e-12


class ControlError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x0min: float
    x0max: float
    x1min: float
    x1max: float

    def __post_init__(self):
        if not (self.x0max > self.x0min and self.x1max > self.x1min):
            raise ControlError(f"degenerate rectangle {self}")
        if min(self.x0min, self.x1min) < -_TOL or max(self.x0max, self.x1max) > 1 + _TOL:
            raise ControlError(f"rectangle {self} is not inside the unit square")

    @property
    def area(self):
        return (self.x0max - self.x0min) * (self.x1max - self.x1min)

    def span(self, axis):
        return (self.x0min, self.x0max) if axis == 0 else (self.x1min, self.x1max)

    def to_list(self):
        return [self.x0min, self.x0max, self.x1min, self.x1max]


@dataclass(frozen=True, eq=False)
class SignalBasis:
    """Hat functions ``max(0, 1 - |xi - c| / h)`` restricted to [0, 1]."""

    kind: str
    centers: np.ndarray
    halfwidths: np.ndarray

    @property
    def count(self):
        return len(self.centers)

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, float)
        return np.maximum(
            0.0, 1.0 - np.abs(xi[..., None] - self.centers) / self.halfwidths
        )

    def knots(self) -> np.ndarray:
        k = np.concatenate([self.centers - self.halfwidths, self.centers,
                            self.centers + self.halfwidths, [0.0, 1.0]])
        return np.unique(np.clip(k, 0.0, 1.0))

    def gram(self) -> np.ndarray:
        """``[int_0^1 nu_k nu_l]`` integrated exactly piecewise."""
        xg, wg = np.polynomial.legendre.leggauss(2)
        kn = self.knots()
        a, b = kn[:-1], kn[1:]
        pts = (0.5 * (b - a)[:, None] * (xg + 1) + a[:, None]).ravel()
        wts = (0.5 * (b - a)[:, None] * wg).ravel()
        vals = self(pts)
        return np.einsum("p,pk,pl->kl", wts, vals, vals)


def hierarchical_basis(Nu_half: int) -> SignalBasis:
    """First ``Nu_half`` hats of the nested hierarchical basis, level by
    level and left to right within a level."""
    if Nu_half < 1:
        raise ControlError("need at least one basis function")
    centers, halves = [], []
    level = 1
    while len(centers) < Nu_half:
        h = 2.0 ** -level
        for odd in range(1, 2 ** level, 2):
            if len(centers) == Nu_half:
                break
            centers.append(odd * h)
            halves.append(h)
        level += 1
    return SignalBasis("hierarchical", np.array(centers), np.array(halves))


def equidistant_basis(count: int) -> SignalBasis:
    """Nodal hats on ``count - 1`` equal segments of [0, 1]."""
    if count < 2:
        raise ControlError("equidistant basis needs at least 2 functions")
    h = 1.0 / (count - 1)
    return SignalBasis("equidistant", np.arange(count) * h, np.full(count, h))


def block_gram(basis: SignalBasis) -> SparseMatrix:
    """Gram matrix of the two-component signal space (block diagonal)."""
    G = basis.gram()
    Z = np.zeros_like(G)
    return SparseMatrix.from_dense(np.block([[G, Z], [Z, G]]))


@dataclass(frozen=True)
class ControlConfig:
    """Control, observation and pressure rectangles plus signal sizes.

    ``input_axis`` and ``output_axis`` name the coordinate the signals vary
    along; the input is constant and the output averaged in the other one.
    """

    omega_c: Rect = Rect(0.4, 0.6, 0.2, 0.3)
    omega_o: Rect = Rect(0.45, 0.55, 0.5, 0.7)
    omega_p: Rect = Rect(0.45, 0.55, 0.7, 0.8)
    input_axis: int = 1
    output_axis: int = 1
    Nu: int = 8
    q: int = 10

    def __post_init__(self):
        if self.Nu < 2 or self.Nu % 2:
            raise ControlError(f"Nu must be even and positive, got {self.Nu}")
        if self.q < 4 or self.q % 2:
            raise ControlError(f"q must be even and >= 4, got {self.q}")
        if self.input_axis not in (0, 1) or self.output_axis not in (0, 1):
            raise ControlError("axes must be 0 or 1")

    def to_dict(self):
        return {
            "omega_c": self.omega_c.to_list(),
            "omega_o": self.omega_o.to_list(),
            "omega_p": self.omega_p.to_list(),
            "input_axis": self.input_axis,
            "output_axis": self.output_axis,
            "Nu": self.Nu,
            "q": self.q,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Rect(*d["omega_c"]), Rect(*d["omega_o"]), Rect(*d["omega_p"]),
                   int(d["input_axis"]), int(d["output_axis"]), int(d["Nu"]), int(d["q"]))


@dataclass(frozen=True, eq=False)
class ControlOperators:
    """Input/output operators restricted to the inner velocity DOFs.

    Any of them may be ``None``: a bundle without distributed input has no
    ``B``/``Mu``, one without Robin control has no ``Abc``/``Bbc``.
    """

    B: SparseMatrix | None = None
    Cv: SparseMatrix | None = None
    Cp: SparseMatrix | None = None
    My: SparseMatrix | None = None
    Mu: SparseMatrix | None = None
    Abc: SparseMatrix | None = None
    Bbc: SparseMatrix | None = None
    config: ControlConfig | None = None
    full: dict = field(default_factory=dict, repr=False)

    @property
    def Nu(self):
        return self.B.ncols if self.B is not None else 0

    @property
    def q(self):
        return self.Cv.nrows if self.Cv is not None else 0


def _clip(poly, axis, val, keep_greater):
    """Sutherland-Hodgman clip of a convex polygon by an axis half-plane."""
    out = []
    n = len(poly)
    for idx in range(n):
        a, b = poly[idx], poly[(idx + 1) % n]
        ina = (a[axis] >= val) if keep_greater else (a[axis] <= val)
        inb = (b[axis] >= val) if keep_greater else (b[axis] <= val)
        if ina:
            out.append(a)
        if ina != inb:
            t = (val - a[axis]) / (b[axis] - a[axis])
            out.append(a + t * (b - a))
    return out


def _rect_quadrature(mesh: CavityMesh, rect: Rect, axis=0, cuts=()):
    """Quadrature over ``rect`` split along ``axis`` at ``cuts``.

    Returns element index, physical points, weights and barycentric
    coordinates of every quadrature point.
    """
    rule = triangle_rule()
    G, _ = _element_geometry(mesh)
    verts = mesh.cell_vertices()
    lo, hi = rect.span(axis)
    olo, ohi = rect.span(1 - axis)
    cuts = np.unique(np.concatenate([[lo, hi], np.asarray(cuts, float)]))
    cuts = cuts[(cuts >= lo) & (cuts <= hi)]
    bbmin, bbmax = verts.min(axis=1), verts.max(axis=1)
    cand = np.flatnonzero(
        (bbmax[:, 0] > rect.x0min + _TOL) & (bbmin[:, 0] < rect.x0max - _TOL)
        & (bbmax[:, 1] > rect.x1min + _TOL) & (bbmin[:, 1] < rect.x1max - _TOL)
    )
    E, P, W = [], [], []
    for e in cand:
        base = [verts[e, r].copy() for r in range(3)]
        base = _clip(base, 1 - axis, olo, True)
        base = _clip(base, 1 - axis, ohi, False) if base else base
        for a, b in zip(cuts[:-1], cuts[1:]):
            poly = _clip(base, axis, a, True) if base else []
            poly = _clip(poly, axis, b, False) if poly else []
            for t in range(1, len(poly) - 1):
                p0, p1, p2 = poly[0], poly[t], poly[t + 1]
                d1, d2 = p1 - p0, p2 - p0
                area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
                if area <= 1e-15:
                    continue
                pts = rule.points @ np.array([p0, p1, p2])
                E.append(np.full(len(pts), e))
                P.append(pts)
                W.append(2.0 * area * rule.weights)
    if not E:
        raise ControlError(f"rectangle {rect} does not overlap the mesh")
    E, P, W = np.concatenate(E), np.concatenate(P), np.concatenate(W)
    rel = P - verts[E, 0]
    lam12 = np.einsum("pkd,pd->pk", G[E, 1:], rel)
    lam = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
    return E, P, W, lam


def _affine_to_unit(x, span):
    lo, hi = span
    return (x - lo) / (hi - lo)


def _signal_integrals(mesh, rect, axis, basis):
    """``S[l, e, a] = int_rect N_a^e nu_l(theta(x_axis)) dx`` as triplets."""
    span = rect.span(axis)
    cuts = span[0] + basis.knots() * (span[1] - span[0])
    E, P, W, lam = _rect_quadrature(mesh, rect, axis, cuts)
    xi = np.clip(_affine_to_unit(P[:, axis], span), 0.0, 1.0)
    nu = basis(xi)                     # (p, count)
    Nb = p2_basis(lam)                 # (p, 6)
    nodes = mesh.p2_cells[E]           # (p, 6)
    vals = np.einsum("p,pa,pl->pla", W, Nb, nu)
    rows = np.broadcast_to(nodes[:, None, :], vals.shape)
    cols = np.broadcast_to(np.arange(basis.count)[None, :, None], vals.shape)
    return rows.ravel(), cols.ravel(), vals.ravel()


def assemble_B(mesh: CavityMesh, dm: DofMap, cfg: ControlConfig,
               basis: SignalBasis | None = None) -> SparseMatrix:
    """Full ``n x Nu`` input operator; columns ``< Nu/2`` act on ``x0``."""
    half = cfg.Nu // 2
    basis = basis or hierarchical_basis(half)
    if basis.count != half:
        raise ControlError("basis size does not match Nu/2")
    nodes, l, vals = _signal_integrals(mesh, cfg.omega_c, cfg.input_axis, basis)
    b = CooBuilder(dm.n_full, cfg.Nu)
    for c in (0, 1):
        b.add(2 * nodes + c, l + c * half, vals)
    return b.finalize()


def assemble_Cv(mesh: CavityMesh, dm: DofMap, cfg: ControlConfig,
                basis: SignalBasis | None = None):
    """Velocity output ``Cv = My^{-1} R`` over all DOFs and the Gram ``My``."""
    half = cfg.q // 2
    basis = basis or equidistant_basis(half)
    if basis.count != half:
        raise ControlError("basis size does not match q/2")
    rect = cfg.omega_o
    nodes, l, vals = _signal_integrals(mesh, rect, cfg.output_axis, basis)
    # change of variables eta -> x along the varying axis plus the
    # average over the other axis give the factor 1/|rect|
    vals = vals / rect.area
    R = CooBuilder(cfg.q, dm.n_full)
    for c in (0, 1):
        R.add(l + c * half, 2 * nodes + c, vals)
    R = R.finalize()
    My = block_gram(basis)
    cols = np.unique(R.col_idx)
    Rd = R.csr[:, cols].toarray()
    Cd = np.linalg.solve(My.toarray(), Rd)
    b = CooBuilder(cfg.q, dm.n_full)
    rr, cc = np.nonzero(Cd)
    b.add(rr, cols[cc], Cd[rr, cc])
    return b.finalize(), My


def assemble_Cp(mesh: CavityMesh, cfg: ControlConfig) -> SparseMatrix:
    """Mean pressure over ``omega_p`` as a ``1 x m`` row."""
    rect = cfg.omega_p
    E, _, W, lam = _rect_quadrature(mesh, rect)
    b = CooBuilder(1, mesh.n_p1)
    b.add(np.zeros(lam.size, dtype=np.int64), mesh.triangles[E].ravel(),
          (W[:, None] * lam).ravel() / rect.area)
    return b.finalize()


def assemble_control(mesh: CavityMesh, dm: DofMap, cfg: ControlConfig | None = None,
                     pinned=True, with_input=True, robin=None) -> ControlOperators:
    """All operators for the cavity control setup, restricted to inner DOFs.

    ``robin`` is an optional pair of full ``(Abc, Bbc)`` matrices.
    """
    cfg = cfg or ControlConfig()
    I = dm.inner_idx
    full = {}
    Cv_full, My = assemble_Cv(mesh, dm, cfg)
    Cp = assemble_Cp(mesh, cfg)
    full["Cv"] = Cv_full
    full["Cp"] = Cp
    if pinned:
        Cp = Cp.take(None, np.arange(Cp.ncols - 1))
    B = Mu = None
    if with_input:
        B_full = assemble_B(mesh, dm, cfg)
        full["B"] = B_full
        B = B_full.take(I, None)
        Mu = block_gram(hierarchical_basis(cfg.Nu // 2))
    Abc = Bbc = None
    if robin is not None:
        full["Abc"], full["Bbc"] = robin
        Abc = robin[0].take(I, I)
        Bbc = robin[1].take(I, None)
    return ControlOperators(B=B, Cv=Cv_full.take(None, I), Cp=Cp, My=My, Mu=Mu,
                            Abc=Abc, Bbc=Bbc, config=cfg, full=full)


def evaluate_input(basis: SignalBasis, s, xi):
    """Spatial input ``(u0, u1)`` at ``xi`` for coefficient vector ``s``."""
    s = np.asarray(s, float)
    if len(s) != 2 * basis.count:
        raise ControlError(f"expected {2 * basis.count} coefficients, got {len(s)}")
    xi_arr = np.asarray(xi, float)
    if np.any(xi_arr < 0.0) or np.any(xi_arr > 1.0):
        raise ControlError("xi must lie in [0, 1]")
    nu = basis(xi_arr)
    half = basis.count
    return nu @ s[:half], nu @ s[half:]
