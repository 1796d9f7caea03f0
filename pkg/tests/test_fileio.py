import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sps

from nsemats.fileio import (BundleError, FieldSnapshot, bundle_name, read_bundle, read_mtx, read_mtx_vector,
                            read_signals, read_tensor, snapshot_from_state, write_bundle,
                            write_mtx, write_mtx_vector, write_signals, write_tensor, write_vtu)
from nsemats.problems import setup_cavity
from nsemats.solvers import SignalSeries, TransientOptions, simulate, solve_stokes
from nsemats.sparse import ConvTensor, SparseMatrix


def assert_same_system(a, b):
    for name in ("M", "A", "L1", "L2", "J"):
        assert getattr(a, name).equals(getattr(b, name)), name
    for name in ("fv", "gv", "fv_diff", "fv_conv", "fp_div"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    for name in ("i", "j", "k", "values"):
        assert np.array_equal(getattr(a.H, name), getattr(b.H, name))
    assert a.pinned == b.pinned


def test_bundle_name():
    assert bundle_name("drivencavity", 722) == "drivencavity__mats__NV722_Re1"
    assert bundle_name("cyl", 5, True) == "cyl__mats__NV5_Re1_bccontrol_palpha1"


def test_mtx_roundtrip_and_scipy(tmp_path, rng):
    D = rng.standard_normal((9, 4)) * (rng.random((9, 4)) < 0.5)
    D[0, 0] = 1.0 / 3.0
    A = SparseMatrix.from_dense(D)
    write_mtx(tmp_path / "a.mtx", A, comment="test")
    B = read_mtx(tmp_path / "a.mtx")
    assert A.equals(B)
    S = scipy.io.mmread(tmp_path / "a.mtx")
    assert abs(sps.csr_matrix(S) - A.csr).max() == 0.0


def test_mtx_empty(tmp_path):
    write_mtx(tmp_path / "z.mtx", SparseMatrix.zeros(3, 2))
    assert read_mtx(tmp_path / "z.mtx").shape == (3, 2)


def test_vector_roundtrip(tmp_path, rng):
    x = rng.standard_normal(17) * 10.0 ** rng.integers(-300, 300, 17)
    write_mtx_vector(tmp_path / "x.mtx", x)
    assert np.array_equal(read_mtx_vector(tmp_path / "x.mtx"), x)
    assert np.array_equal(scipy.io.mmread(tmp_path / "x.mtx").ravel(), x)


def test_tensor_roundtrip(tmp_path, rng):
    H = ConvTensor.from_entries(6, *(rng.integers(0, 6, 40) for _ in range(3)),
                                rng.standard_normal(40))
    write_tensor(tmp_path / "h.mtx", H)
    H2 = read_tensor(tmp_path / "h.mtx")
    assert H2.n == 6
    for name in ("i", "j", "k", "values"):
        assert np.array_equal(getattr(H, name), getattr(H2, name))
    S = sps.csr_matrix(scipy.io.mmread(tmp_path / "h.mtx"))
    assert abs(S - H.to_scipy()).max() == 0.0


def test_malformed_mtx(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text("1 1 1\n1 1 2.0\n")
    with pytest.raises(BundleError):
        read_mtx(p)
    p.write_text("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n")
    with pytest.raises(BundleError):
        read_mtx(p)


@pytest.mark.parametrize("control", ["none", "distributed", "robin"])
def test_bundle_roundtrip(tmp_path, control):
    st = setup_cavity(4, control)
    man = write_bundle(st.sys, st.ctrl, tmp_path)
    sys2, ctrl2, man2 = read_bundle(man["path"])
    assert_same_system(st.sys, sys2)
    assert man2["NV"] == st.sys.NV and man2["N"] == 4
    if control == "none":
        assert ctrl2 is None
        return
    for name in ("B", "Cv", "Cp", "My", "Mu", "Abc", "Bbc"):
        a, b = getattr(st.ctrl, name), getattr(ctrl2, name)
        assert (a is None and b is None) or a.equals(b), name
    assert ctrl2.config == st.ctrl.config
    if control == "robin":
        assert man["path"].endswith("_bccontrol_palpha1.json")


def test_bundle_drives_identical_simulation(tmp_path):
    st = setup_cavity(3, "distributed")
    man = write_bundle(st.sys, st.ctrl, tmp_path)
    sys2, ctrl2, _ = read_bundle(man["path"])
    opts = TransientOptions(Re=100.0, tE=0.2, Nts=4, input_signal=lambda t: np.full(8, t))
    assert simulate(st.sys, st.ctrl, opts).equals(simulate(sys2, ctrl2, opts))


def test_bundle_re_data_scaling(tmp_path):
    st = setup_cavity(3, "none")
    man = write_bundle(st.sys.prescaled(5.0), None, tmp_path, extra={"re_data": 5.0})
    sys2, _, _ = read_bundle(man["path"])
    np.testing.assert_allclose(sys2.A.toarray(), st.sys.A.toarray(), rtol=1e-15)


def test_bundle_missing_file(tmp_path):
    st = setup_cavity(3, "none")
    man = write_bundle(st.sys, None, tmp_path)
    (tmp_path / man["files"]["J"]["file"]).unlink()
    with pytest.raises(BundleError):
        read_bundle(man["path"])


def test_bundle_dimension_mismatch(tmp_path):
    st = setup_cavity(3, "none")
    man = write_bundle(st.sys, None, tmp_path)
    data = json.loads(open(man["path"]).read())
    data["NV"] += 1
    open(man["path"], "w").write(json.dumps(data))
    with pytest.raises(BundleError):
        read_bundle(man["path"])


def test_bundle_bad_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(BundleError):
        read_bundle(p)
    p.write_text(json.dumps({"format_version": 99}))
    with pytest.raises(BundleError):
        read_bundle(p)


def test_signals_roundtrip(tmp_path, rng):
    s = SignalSeries(np.linspace(0, 1, 5), rng.standard_normal((5, 2)),
                     rng.standard_normal((5, 3)), rng.standard_normal(5) / 3.0)
    write_signals(s, tmp_path / "s.csv")
    s2 = read_signals(tmp_path / "s.csv")
    assert s.equals(s2)
    header = open(tmp_path / "s.csv").readline().strip()
    assert header == "t,u_1,u_2,yv_1,yv_2,yv_3,yp"


def test_signals_nan_pressure(tmp_path):
    s = SignalSeries(np.arange(3.0), np.zeros((3, 0)), np.zeros((3, 1)), np.full(3, np.nan))
    write_signals(s, tmp_path / "s.csv")
    assert np.all(np.isnan(read_signals(tmp_path / "s.csv").y_p))


def _check_vtu(path, npts, ncells):
    root = ET.parse(path).getroot()
    assert root.tag == "VTKFile" and root.get("type") == "UnstructuredGrid"
    piece = root.find("UnstructuredGrid/Piece")
    assert int(piece.get("NumberOfPoints")) == npts
    assert int(piece.get("NumberOfCells")) == ncells
    sizes = {}
    for arr in root.iter("DataArray"):
        ncomp = int(arr.get("NumberOfComponents", "1"))
        vals = arr.text.split()
        sizes[arr.get("Name")] = (len(vals), ncomp)
        assert all(math.isfinite(float(v)) for v in vals)
    pts = piece.find("Points/DataArray")
    assert len(pts.text.split()) == 3 * npts and pts.get("NumberOfComponents") == "3"
    assert sizes["connectivity"][0] == 3 * ncells
    assert sizes["offsets"][0] == ncells and sizes["types"][0] == ncells
    assert sizes["velocity"] == (3 * npts, 3)
    assert sizes["pressure"] == (npts, 1)
    return root


def test_vtu_well_formed(tmp_path):
    st = setup_cavity(4, "none")
    v, p = solve_stokes(st.sys, 1.0)
    snap = snapshot_from_state(st.mesh, st.dm, st.v_gamma, v, p, 0.5, st.sys.pinned)
    write_vtu(st.mesh, snap, tmp_path / "f.vtu")
    root = _check_vtu(tmp_path / "f.vtu", st.mesh.n_p1, st.mesh.n_cells)
    types = [a for a in root.iter("DataArray") if a.get("Name") == "types"][0]
    assert set(types.text.split()) == {"5"}
    # lid vertices carry the lid velocity
    vel = snap.velocity[st.mesh.p1_coords[:, 1] == 1.0]
    np.testing.assert_array_equal(vel[1:-1, 0], 1.0)


def test_vtu_shape_check(tmp_path):
    st = setup_cavity(2, "none")
    snap = snapshot_from_state(st.mesh, st.dm, st.v_gamma, np.zeros(st.sys.NV),
                               np.zeros(st.sys.m), 0.0)
    snap.pressure = snap.pressure[:-1]
    with pytest.raises(ValueError):
        write_vtu(st.mesh, snap, tmp_path / "x.vtu")


def test_vtu_zero_fields(tmp_path):
    st = setup_cavity(3, "none")
    n = st.mesh.n_p1
    write_vtu(st.mesh, FieldSnapshot(0.0, np.zeros((n, 2)), np.zeros(n)), tmp_path / "z.vtu")
    root = _check_vtu(tmp_path / "z.vtu", n, 2 * 3 * 3)
    for arr in root.iter("DataArray"):
        if arr.get("Name") in ("velocity", "pressure"):
            assert all(float(x) == 0.0 for x in arr.text.split())


def test_vtu_speed_peaks_at_lid():
    st = setup_cavity(6, "none")
    v, p = solve_stokes(st.sys, 1.0)
    snap = snapshot_from_state(st.mesh, st.dm, st.v_gamma, v, p, 0.0)
    speed = np.hypot(*snap.velocity.T)
    assert st.mesh.p1_coords[np.argmax(speed), 1] == 1.0


def test_tensor_file_rows_and_manifest(tmp_path):
    st = setup_cavity(10, "none")
    man = write_bundle(st.sys, None, tmp_path)
    assert man["NV"] == 722
    lines = (tmp_path / man["files"]["H"]["file"]).read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("%")][1:]
    assert len(body) == st.sys.H.nnz == man["files"]["H"]["nnz"]
