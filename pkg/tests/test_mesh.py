import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsemats.mesh import (BoundarySegment, MeshError, NodeTag, build_cavity_mesh,
                          build_dofmap, lid_boundary_values)


@settings(max_examples=12, deadline=None)
@given(st.integers(2, 14))
def test_counts_and_orientation(N):
    mesh = build_cavity_mesh(N)
    assert mesh.n_cells == 2 * N * N
    assert mesh.n_p2 == (2 * N + 1) ** 2
    assert mesh.n_p1 == (N + 1) ** 2
    areas = mesh.cell_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - 1.0) < 1e-13


@settings(max_examples=12, deadline=None)
@given(st.integers(2, 14))
def test_inner_velocity_count(N):
    dm = build_dofmap(build_cavity_mesh(N))
    assert dm.NV == 2 * (2 * N + 1) ** 2 - 16 * N
    assert dm.m == (N + 1) ** 2
    assert len(dm.inner_idx) + len(dm.gamma_idx) == dm.n_full


def test_midpoints_are_edge_centres():
    mesh = build_cavity_mesh(3)
    X = mesh.p2_coords[mesh.p2_cells]
    for mid, (a, b) in zip((3, 4, 5), ((1, 2), (2, 0), (0, 1))):
        np.testing.assert_allclose(X[:, mid], 0.5 * (X[:, a] + X[:, b]), atol=1e-15)
    np.testing.assert_array_equal(mesh.p2_cells[:, :3], mesh.p1_to_p2[mesh.triangles])


def test_boundary_tags():
    mesh = build_cavity_mesh(4)
    x = mesh.p2_coords
    lid = mesh.boundary_tag == NodeTag.LID
    assert np.all(x[lid, 1] == 1.0)
    wall = mesh.boundary_tag == NodeTag.WALL
    assert wall.sum() == 4 * 8 - 9  # boundary nodes minus the lid row


@pytest.mark.parametrize("N", [2, 5, 10])
def test_lid_values(N):
    dm = build_dofmap(build_cavity_mesh(N))
    vg = lid_boundary_values(dm)
    assert np.count_nonzero(vg) == 2 * N - 1
    assert np.all(vg[dm.inner_idx] == 0.0)
    assert np.all(vg[1::2] == 0.0)


@pytest.mark.parametrize("N", [1, 0, -3, 2.5])
def test_rejects_bad_N(N):
    with pytest.raises(MeshError):
        build_cavity_mesh(N)


def test_segment_validation():
    with pytest.raises(MeshError):
        BoundarySegment((0.2, 0.5), (0.4, 0.5))
    with pytest.raises(MeshError):
        BoundarySegment((0.0, 0.3), (0.0, 0.3))
    seg = BoundarySegment((0.4, 0.0), (0.6, 0.0))
    assert abs(seg.length - 0.2) < 1e-15
    np.testing.assert_allclose(seg.param([[0.5, 0.0]]), [0.5])
    assert seg.contains([[0.5, 0.0]])[0]
    assert not seg.contains([[0.4, 0.0]], open_=True)[0]


def test_robin_nodes_become_inner():
    mesh = build_cavity_mesh(10)
    seg = BoundarySegment((0.4, 0.0), (0.6, 0.0))
    dm0 = build_dofmap(mesh)
    dm = build_dofmap(mesh, robin=seg)
    # open segment of length 0.2 on the half-step grid of spacing 0.05
    assert len(dm.robin_nodes) == 3
    assert dm.NV == dm0.NV + 6
    np.testing.assert_allclose(mesh.p2_coords[dm.robin_nodes, 1], 0.0)


def test_robin_segment_without_nodes():
    mesh = build_cavity_mesh(2)
    with pytest.raises(MeshError):
        build_dofmap(mesh, robin=BoundarySegment((0.1, 0.0), (0.2, 0.0)))


def test_expand_roundtrip(rng):
    dm = build_dofmap(build_cavity_mesh(3))
    vg = lid_boundary_values(dm)
    vi = rng.standard_normal(dm.NV)
    v = dm.expand(vi, vg)
    np.testing.assert_array_equal(v[dm.inner_idx], vi)
    np.testing.assert_array_equal(v[dm.gamma_idx], vg[dm.gamma_idx])
    pos = dm.full_to_inner()
    np.testing.assert_array_equal(pos[dm.inner_idx], np.arange(dm.NV))
    assert np.all(pos[dm.gamma_idx] == -1)
