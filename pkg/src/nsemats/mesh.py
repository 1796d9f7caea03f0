"""Structured Taylor-Hood (P2/P1) triangulation of the unit square."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NodeTag",
    "CavityMesh",
    "DofMap",
    "BoundarySegment",
    "MeshError",
    "build_cavity_mesh",
    "build_dofmap",
    "lid_boundary_values",
]

_EPS = 1e-12


class MeshError(ValueError):
    pass


class NodeTag(enum.IntEnum):
    INTERIOR = 0
    WALL = 1
    LID = 2


@dataclass(frozen=True, eq=False)
class CavityMesh:
    """Uniform triangulation with ``N`` segments per side.

    P2 nodes live on the ``(2N+1) x (2N+1)`` half-step grid and are numbered
    row by row (``x1`` outer, ``x0`` inner); P1 vertices are the even grid
    points, numbered the same way on the ``(N+1) x (N+1)`` grid.

    Attributes
    ----------
    triangles : (2N^2, 3) int array
        P1 vertex indices, counterclockwise.
    p2_cells : (2N^2, 6) int array
        P2 node indices: the three vertices, then the midpoints of the edges
        opposite vertex 0, 1 and 2.
    """

    N: int
    p1_coords: np.ndarray
    p2_coords: np.ndarray
    triangles: np.ndarray
    p2_cells: np.ndarray
    boundary_tag: np.ndarray
    p1_to_p2: np.ndarray

    @property
    def n_p2(self):
        return len(self.p2_coords)

    @property
    def n_p1(self):
        return len(self.p1_coords)

    @property
    def n_cells(self):
        return len(self.triangles)

    def cell_vertices(self) -> np.ndarray:
        """(n_cells, 3, 2) vertex coordinates."""
        return self.p1_coords[self.triangles]

    def cell_areas(self) -> np.ndarray:
        x = self.cell_vertices()
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_cavity_mesh(N: int) -> CavityMesh:
    if int(N) != N or N < 2:
        raise MeshError(f"N must be an integer >= 2, got {N!r}")
    N = int(N)
    n2 = 2 * N + 1
    g = np.arange(n2) / (2 * N)
    X0, X1 = np.meshgrid(g, g)  # rows follow x1
    p2_coords = np.column_stack([X0.ravel(), X1.ravel()])
    v = np.arange(N + 1) / N
    V0, V1 = np.meshgrid(v, v)
    p1_coords = np.column_stack([V0.ravel(), V1.ravel()])

    a, b = np.meshgrid(np.arange(N), np.arange(N))
    a, b = a.ravel(), b.ravel()

    def p1(ia, ib):
        return ib * (N + 1) + ia

    def p2(ia2, ib2):  # half-step grid coordinates
        return ib2 * n2 + ia2

    ll, lr = (a, b), (a + 1, b)
    ur, ul = (a + 1, b + 1), (a, b + 1)
    tris, cells = [], []
    for tri in ((ll, lr, ur), (ll, ur, ul)):
        tris.append(np.column_stack([p1(*vtx) for vtx in tri]))
        verts = [p2(2 * vtx[0], 2 * vtx[1]) for vtx in tri]
        mids = []
        for e0, e1 in ((1, 2), (2, 0), (0, 1)):
            mids.append(p2(tri[e0][0] + tri[e1][0], tri[e0][1] + tri[e1][1]))
        cells.append(np.column_stack(verts + mids))
    # interleave so cells of one square are adjacent
    triangles = np.stack(tris, axis=1).reshape(-1, 3)
    p2_cells = np.stack(cells, axis=1).reshape(-1, 6)

    x0, x1 = p2_coords[:, 0], p2_coords[:, 1]
    on_bnd = (x0 < _EPS) | (x0 > 1 - _EPS) | (x1 < _EPS) | (x1 > 1 - _EPS)
    tag = np.full(len(p2_coords), NodeTag.INTERIOR, dtype=np.int8)
    tag[on_bnd] = NodeTag.WALL
    tag[x1 > 1 - _EPS] = NodeTag.LID

    ia, ib = np.meshgrid(np.arange(N + 1), np.arange(N + 1))
    p1_to_p2 = p2(2 * ia.ravel(), 2 * ib.ravel())
    return CavityMesh(N, p1_coords, p2_coords, triangles.astype(np.int64),
                      p2_cells.astype(np.int64), tag, p1_to_p2.astype(np.int64))


@dataclass(frozen=True)
class BoundarySegment:
    """Straight boundary piece from ``start`` to ``end``.

    The arc parameter ``s`` runs from 0 at ``start`` to 1 at ``end``.
    """

    start: tuple
    end: tuple

    def __post_init__(self):
        p, q = np.asarray(self.start, float), np.asarray(self.end, float)
        if np.allclose(p, q):
            raise MeshError("degenerate boundary segment")
        for axis in (0, 1):
            for val in (0.0, 1.0):
                if abs(p[axis] - val) < _EPS and abs(q[axis] - val) < _EPS:
                    return
        raise MeshError(f"segment {self.start}->{self.end} is not on the boundary")

    @property
    def length(self):
        return float(np.hypot(*(np.subtract(self.end, self.start))))

    def param(self, x) -> np.ndarray:
        """Arc parameter of points assumed to lie on the segment's line."""
        p, q = np.asarray(self.start, float), np.asarray(self.end, float)
        d = q - p
        return (np.asarray(x, float) - p) @ d / (d @ d)

    def collinear(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        p, q = np.asarray(self.start, float), np.asarray(self.end, float)
        d = q - p
        cross = (x[:, 0] - p[0]) * d[1] - (x[:, 1] - p[1]) * d[0]
        return np.abs(cross) < _EPS

    def contains(self, x, open_=False) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        s = self.param(x)
        if open_:
            inside = (s > _EPS) & (s < 1 - _EPS)
        else:
            inside = (s > -_EPS) & (s < 1 + _EPS)
        return inside & self.collinear(x)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Velocity/pressure numbering and the inner/Dirichlet split.

    Velocity DOF ``2*node + comp`` (interleaved components).  Nodes strictly
    inside a Robin segment count as inner.
    """

    N: int
    n_full: int
    m: int
    inner_idx: np.ndarray
    gamma_idx: np.ndarray
    node_tag: np.ndarray
    robin_nodes: np.ndarray
    ordering: str = "interleaved"

    @property
    def NV(self):
        return len(self.inner_idx)

    @staticmethod
    def dof(node, comp):
        return 2 * np.asarray(node) + comp

    def full_to_inner(self) -> np.ndarray:
        """Map full DOF -> inner position, -1 for Dirichlet DOFs."""
        pos = np.full(self.n_full, -1, dtype=np.int64)
        pos[self.inner_idx] = np.arange(len(self.inner_idx))
        return pos

    def expand(self, v_inner, v_gamma) -> np.ndarray:
        """Full velocity vector from inner values and the lifting vector."""
        v = np.array(v_gamma, dtype=float, copy=True)
        v[self.inner_idx] = v_inner
        return v


def build_dofmap(mesh: CavityMesh, robin: BoundarySegment | None = None) -> DofMap:
    tag = mesh.boundary_tag
    dirichlet = tag != NodeTag.INTERIOR
    robin_nodes = np.zeros(0, dtype=np.int64)
    if robin is not None:
        rmask = robin.contains(mesh.p2_coords, open_=True) & dirichlet
        if not rmask.any():
            raise MeshError("Robin segment contains no boundary nodes")
        dirichlet = dirichlet & ~rmask
        robin_nodes = np.flatnonzero(rmask)
    n_full = 2 * mesh.n_p2
    node_of_dof = np.arange(n_full) // 2
    is_gamma = dirichlet[node_of_dof]
    return DofMap(
        N=mesh.N,
        n_full=n_full,
        m=mesh.n_p1,
        inner_idx=np.flatnonzero(~is_gamma),
        gamma_idx=np.flatnonzero(is_gamma),
        node_tag=tag.copy(),
        robin_nodes=robin_nodes,
    )


def lid_boundary_values(dm: DofMap) -> np.ndarray:
    """Lifting vector: ``x0``-velocity 1 on the lid, corners held at 0."""
    vg = np.zeros(dm.n_full)
    n_side = 2 * dm.N + 1
    # lid nodes are the last grid row; first and last entries are corners
    lid_nodes = np.flatnonzero(dm.node_tag == NodeTag.LID)
    lid_nodes = lid_nodes[(lid_nodes % n_side != 0) & (lid_nodes % n_side != n_side - 1)]
    vg[DofMap.dof(lid_nodes, 0)] = 1.0
    return vg
