"""Element assembly of the Taylor-Hood operators and the Dirichlet reduction.

Full operators are assembled over every velocity DOF; :func:`reduce_system`
then splits off the prescribed boundary values and produces the operator
bundle a simulation needs (``M, A, H, L1, L2, J, fv, fv_diff, fv_conv, gv,
fp_div``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import BoundarySegment, CavityMesh, DofMap
from .quadrature import gauss_interval, p2_basis, p2_basis_grad, triangle_rule
from .sparse import (ConvTensor, CooBuilder, SparseMatrix, apply_kron,
                     linearize_left, linearize_right, spmv)

__all__ = [
    "FullOperators",
    "FlowSystem",
    "AssemblyError",
    "assemble_linear",
    "assemble_convection_tensor",
    "reduce_system",
    "assemble_robin_boundary",
    "robin_shape",
    "inflow_profile",
    "assemble_cavity",
]


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FullOperators:
    M_full: SparseMatrix
    A_full: SparseMatrix
    J_full: SparseMatrix
    f_full: np.ndarray
    H_full: ConvTensor | None = None


@dataclass(frozen=True, eq=False)
class FlowSystem:
    """Reduced operator bundle of the semi-discrete Navier-Stokes equations.

    ``A`` and ``fv_diff`` are stored unscaled; solvers multiply them by
    ``1/Re``.  ``J`` has one row fewer than the pressure space when the
    pressure is pinned.
    """

    M: SparseMatrix
    A: SparseMatrix
    H: ConvTensor
    L1: SparseMatrix
    L2: SparseMatrix
    J: SparseMatrix
    fv: np.ndarray
    fv_diff: np.ndarray
    fv_conv: np.ndarray
    gv: np.ndarray
    fp_div: np.ndarray
    pinned: bool = False
    re_convention: str = "unscaled"
    meta: dict = field(default_factory=dict)

    @property
    def NV(self):
        return self.M.nrows

    @property
    def m(self):
        return self.J.nrows

    def prescaled(self, Re) -> "FlowSystem":
        """Copy with ``A`` and ``fv_diff`` already divided by ``Re``."""
        return replace(self, A=self.A.scaled(1.0 / Re),
                       fv_diff=self.fv_diff / Re)

    def check(self):
        n = self.NV
        for name in ("M", "A", "L1", "L2"):
            if getattr(self, name).shape != (n, n):
                raise AssemblyError(f"{name} has shape {getattr(self, name).shape}, expected {(n, n)}")
        if self.H.n != n:
            raise AssemblyError(f"H is over {self.H.n} DOFs, expected {n}")
        if self.J.ncols != n:
            raise AssemblyError(f"J has {self.J.ncols} columns, expected {n}")
        for name in ("fv", "fv_diff", "fv_conv", "gv"):
            if len(getattr(self, name)) != n:
                raise AssemblyError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if len(self.fp_div) != self.J.nrows:
            raise AssemblyError("fp_div does not match J")
        return self


def _element_geometry(mesh: CavityMesh):
    """Barycentric gradients (ne, 3, 2) and areas (ne,)."""
    x = mesh.cell_vertices()
    B = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)  # columns
    Binv = np.linalg.inv(B)
    G = np.empty((len(x), 3, 2))
    G[:, 1:] = Binv
    G[:, 0] = -Binv[:, 0] - Binv[:, 1]
    return G, mesh.cell_areas()


def _element_data(mesh):
    rule = triangle_rule()
    G, area = _element_geometry(mesh)
    N = p2_basis(rule.points)                      # (q, 6)
    dN = np.einsum("qab,ebd->eqad", p2_basis_grad(rule.points), G)
    w = 2.0 * area[:, None] * rule.weights[None, :]  # (e, q)
    return rule, N, dN, w


def _vector_dofs(cells):
    return np.stack([2 * cells, 2 * cells + 1], axis=-1)  # (e, 6, 2)


def assemble_linear(mesh: CavityMesh, dm: DofMap, f=None) -> FullOperators:
    """Mass, stiffness, divergence and load vector over all velocity DOFs.

    ``f`` maps an ``(npts, 2)`` coordinate array to ``(npts, 2)`` values.
    """
    rule, N, dN, w = _element_data(mesh)
    cells = mesh.p2_cells
    ne = len(cells)
    n = dm.n_full
    vd = _vector_dofs(cells)

    Ms = np.einsum("eq,qa,qb->eab", w, N, N)
    Ks = np.einsum("eq,eqad,eqbd->eab", w, dN, dN)
    M = CooBuilder(n, n)
    A = CooBuilder(n, n)
    for c in (0, 1):
        r = np.repeat(vd[:, :, c], 6, axis=1)
        s = np.tile(vd[:, :, c], (1, 6))
        M.add(r, s, Ms.reshape(ne, 36))
        A.add(r, s, Ks.reshape(ne, 36))

    lam = rule.points                                # P1 basis = barycentrics
    Jl = np.einsum("eq,qk,eqbc->ekbc", w, lam, dN)   # (e, 3, 6, 2)
    Jb = CooBuilder(dm.m, n)
    rows = np.repeat(mesh.triangles, 12, axis=1)
    cols = np.tile(vd.reshape(ne, 12), (1, 3))
    Jb.add(rows, cols, Jl.reshape(ne, 36))

    f_full = np.zeros(n)
    if f is not None:
        xq = np.einsum("qk,ekd->eqd", lam, mesh.cell_vertices())
        fq = np.asarray(f(xq.reshape(-1, 2)), float).reshape(ne, -1, 2)
        fl = np.einsum("eq,qa,eqc->eac", w, N, fq)
        np.add.at(f_full, vd.ravel(), fl.ravel())
    return FullOperators(M.finalize(), A.finalize(), Jb.finalize(), f_full)


def assemble_convection_tensor(mesh: CavityMesh, dm: DofMap) -> ConvTensor:
    """Unfolded trilinear form ``H[i, j*n + k] = int ((phi_j . grad) phi_k) . phi_i``."""
    rule, N, dN, w = _element_data(mesh)
    cells = mesh.p2_cells
    ne = len(cells)
    # T[e, a, b, d, c] = sum_q w N_a N_b d_d N_c
    T = np.einsum("eq,qa,qb,eqcd->eabdc", w, N, N, dN)
    vd = _vector_dofs(cells)
    ii, jj, kk, vals = [], [], [], []
    shape = (ne, 6, 6, 2, 6)
    ia = np.broadcast_to(np.arange(6)[None, :, None, None, None], shape)
    ib = np.broadcast_to(np.arange(6)[None, None, :, None, None], shape)
    idd = np.broadcast_to(np.arange(2)[None, None, None, :, None], shape)
    ic = np.broadcast_to(np.arange(6)[None, None, None, None, :], shape)
    ie = np.broadcast_to(np.arange(ne)[:, None, None, None, None], shape)
    for comp in (0, 1):
        ii.append(vd[ie, ia, comp].ravel())
        jj.append(vd[ie, ib, idd].ravel())
        kk.append(vd[ie, ic, comp].ravel())
        vals.append(T.ravel())
    return ConvTensor.from_entries(dm.n_full, np.concatenate(ii),
                                   np.concatenate(jj), np.concatenate(kk),
                                   np.concatenate(vals))


def _restrict_tensor(H: ConvTensor, inner_idx) -> ConvTensor:
    pos = np.full(H.n, -1, dtype=np.int64)
    pos[inner_idx] = np.arange(len(inner_idx))
    keep = (pos[H.i] >= 0) & (pos[H.j] >= 0) & (pos[H.k] >= 0)
    # order by (i, j, k) is preserved under the monotone reindexing
    return ConvTensor(len(inner_idx), pos[H.i[keep]], pos[H.j[keep]],
                      pos[H.k[keep]], H.values[keep])


def reduce_system(full: FullOperators, dm: DofMap, v_gamma,
                  pin_pressure=True, H_full: ConvTensor | None = None) -> FlowSystem:
    """Resolve Dirichlet values and restrict everything to the inner DOFs.

    ``L1 @ v == [H(v_gamma kron v)]_I`` and ``L2 @ v == [H(v kron v_gamma)]_I``.
    """
    H_full = H_full if H_full is not None else full.H_full
    if H_full is None:
        raise AssemblyError("no convection tensor supplied")
    v_gamma = np.asarray(v_gamma, float)
    if len(v_gamma) != dm.n_full:
        raise AssemblyError("v_gamma has the wrong length")
    if np.any(v_gamma[dm.inner_idx] != 0.0):
        raise AssemblyError("v_gamma is nonzero on inner DOFs")
    I = dm.inner_idx
    M = full.M_full.take(I, I)
    A = full.A_full.take(I, I)
    J = full.J_full.take(None, I)
    L1 = linearize_left(H_full, v_gamma).take(I, I)
    L2 = linearize_right(H_full, v_gamma).take(I, I)
    fv_conv = apply_kron(H_full, v_gamma, v_gamma)[I]
    fv_diff = spmv(full.A_full, v_gamma)[I]
    fp_div = spmv(full.J_full, v_gamma)
    if pin_pressure:
        J = J.take(np.arange(J.nrows - 1), None)
        fp_div = fp_div[:-1]
    return FlowSystem(
        M=M, A=A, H=_restrict_tensor(H_full, I), L1=L1, L2=L2, J=J,
        fv=full.f_full[I].copy(), fv_diff=fv_diff, fv_conv=fv_conv,
        gv=np.zeros(len(I)), fp_div=fp_div, pinned=bool(pin_pressure),
    ).check()


def robin_shape(s):
    """Bump ``1 - 0.5(1 + sin((2s + 0.5) pi))``: 1 at s=1/2, 0 at the ends."""
    s = np.asarray(s, float)
    return 1.0 - 0.5 * (1.0 + np.sin((2.0 * s + 0.5) * np.pi))


def inflow_profile(s, height=0.41):
    """Parabolic channel inflow ``4 (1 - s/h) s/h``."""
    s = np.asarray(s, float)
    return 4.0 * (1.0 - s / height) * s / height


def _boundary_edges(N):
    """P2 node triples (start, mid, end) of all 4N boundary edges."""
    n2 = 2 * N + 1
    edges = []
    for a in range(N):
        lo, hi = 2 * a, 2 * a + 2
        edges.append((lo, lo + 1, hi))                                   # bottom
        edges.append(((n2 - 1) * n2 + lo, (n2 - 1) * n2 + lo + 1, (n2 - 1) * n2 + hi))  # top
        edges.append((lo * n2, (lo + 1) * n2, hi * n2))                  # left
        edges.append((lo * n2 + n2 - 1, (lo + 1) * n2 + n2 - 1, hi * n2 + n2 - 1))  # right
    return np.array(edges, dtype=np.int64)


def _edge_basis(t):
    # quadratic Lagrange on nodes t = 0, 1/2, 1
    return np.stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)], axis=-1)


def assemble_robin_boundary(mesh: CavityMesh, dm: DofMap, segment: BoundarySegment,
                            shapes, normal_dirs):
    """Robin-penalization matrices for a boundary segment, with ``alpha = 1``.

    Returns full-size ``Abc`` (``n x n``, boundary Gram matrix of the traces)
    and ``Bbc`` (``n x len(shapes)``), where column ``l`` tests
    ``normal_dirs[l] * shapes[l](s)``.
    """
    if len(shapes) != len(normal_dirs):
        raise AssemblyError("need one direction per shape function")
    edges = _boundary_edges(mesh.N)
    tq, wq = gauss_interval(3)
    n = dm.n_full
    Ab = CooBuilder(n, n)
    Bb = CooBuilder(n, len(shapes))
    X = mesh.p2_coords
    hits = 0
    for e in edges:
        x0, x2 = X[e[0]], X[e[2]]
        if not segment.collinear(np.array([x0, x2])).all():
            continue
        s0, s2 = segment.param(np.array([x0, x2]))
        # edge parameter interval where the segment parameter lies in [0, 1]
        ta, tb = sorted(((0.0 - s0) / (s2 - s0), (1.0 - s0) / (s2 - s0)))
        ta, tb = max(ta, 0.0), min(tb, 1.0)
        if tb - ta <= 1e-14:
            continue
        hits += 1
        length = np.hypot(*(x2 - x0))
        t = ta + (tb - ta) * tq
        w = (tb - ta) * wq * length
        phi = _edge_basis(t)                                 # (q, 3)
        loc = np.einsum("q,qa,qb->ab", w, phi, phi)
        s = s0 + t * (s2 - s0)
        for c in (0, 1):
            dofs = 2 * e + c
            Ab.add(np.repeat(dofs, 3), np.tile(dofs, 3), loc.ravel())
            for l, (g, nd) in enumerate(zip(shapes, normal_dirs)):
                if nd[c] == 0.0:
                    continue
                col = np.einsum("q,qa,q->a", w, phi, np.asarray(g(s), float)) * nd[c]
                Bb.add(dofs, np.full(3, l), col)
    if hits == 0:
        raise AssemblyError("segment does not overlap any boundary edge")
    return Ab.finalize(), Bb.finalize()


def assemble_cavity(N, pin_pressure=True, robin: BoundarySegment | None = None, f=None):
    """Mesh, DOF map, lifting vector, full operators and reduced bundle."""
    from .mesh import build_cavity_mesh, build_dofmap, lid_boundary_values

    mesh = build_cavity_mesh(N)
    dm = build_dofmap(mesh, robin=robin)
    vg = lid_boundary_values(dm)
    full = assemble_linear(mesh, dm, f)
    H = assemble_convection_tensor(mesh, dm)
    full = replace(full, H_full=H)
    sys = reduce_system(full, dm, vg, pin_pressure=pin_pressure)
    sys.meta.update(problem="drivencavity", N=mesh.N, dof_ordering=dm.ordering)
    return mesh, dm, vg, full, sys
