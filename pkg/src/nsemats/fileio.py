"""Operator bundles, signal series and VTU snapshots on disk.

A bundle is a directory of Matrix Market files plus a JSON manifest named
``PROBLEM__mats__NV<NV>_Re1[_bccontrol_palpha1].json``.  Values are written
with the shortest round-trip decimal representation, so reading a bundle
back reproduces every double exactly.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from xml.etree import ElementTree as ET

import numpy as np

from .assembly import FlowSystem
from .control import ControlConfig, ControlOperators
from .sparse import ConvTensor, CooBuilder, SparseMatrix
from .solvers import SignalSeries

__all__ = [
    "FORMAT_VERSION",
    "BundleError",
    "FieldSnapshot",
    "snapshot_from_state",
    "bundle_name",
    "write_mtx",
    "read_mtx",
    "write_mtx_vector",
    "read_mtx_vector",
    "write_tensor",
    "read_tensor",
    "write_bundle",
    "read_bundle",
    "write_vtu",
    "write_signals",
    "read_signals",
]

FORMAT_VERSION = 1
RE_CONVENTION = "unscaled: multiply A and fv_diff by 1/Re"

_SYSTEM_MATS = ("M", "A", "L1", "L2", "J")
_SYSTEM_VECS = ("fv", "gv", "fv_diff", "fv_conv", "fp_div")
_CONTROL_MATS = ("B", "Cv", "Cp", "My", "Mu", "Abc", "Bbc")


class BundleError(ValueError):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def bundle_name(problem, NV, bccontrol=False) -> str:
    tail = "_bccontrol_palpha1" if bccontrol else ""
    return f"{problem}__mats__NV{NV}_Re1{tail}"


def _read_header(lines, path):
    if not lines or not lines[0].lower().startswith("%%matrixmarket"):
        raise BundleError(f"{path}: missing MatrixMarket banner")
    banner = lines[0].split()
    comments = []
    idx = 1
    while idx < len(lines) and (lines[idx].startswith("%") or not lines[idx].strip()):
        comments.append(lines[idx])
        idx += 1
    if idx >= len(lines):
        raise BundleError(f"{path}: missing size line")
    return [b.lower() for b in banner], comments, idx


def _body(path, idx, nnz):
    """Coordinate triplets after the size line at ``idx``, as floats."""
    if nnz == 0:
        return np.zeros((0, 3))
    data = np.loadtxt(path, comments="%", skiprows=idx + 1, ndmin=2)
    if data.shape != (nnz, 3):
        raise BundleError(f"{path}: expected {nnz} entries of 3 columns, found {data.shape}")
    return data


def write_mtx(path, A: SparseMatrix, comment=None):
    """Coordinate format, 1-based, general real."""
    coo = A.csr.tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            fh.write(f"% {comment}\n")
        fh.write(f"{A.nrows} {A.ncols} {A.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r + 1} {c + 1} {_fmt(v)}\n")


def read_mtx(path) -> SparseMatrix:
    lines = Path(path).read_text().splitlines()
    banner, _, idx = _read_header(lines, path)
    if banner[1:4] != ["matrix", "coordinate", "real"]:
        raise BundleError(f"{path}: unsupported MatrixMarket type {' '.join(banner[1:])}")
    try:
        nr, nc, nnz = (int(t) for t in lines[idx].split())
        data = _body(path, idx, nnz)
    except ValueError as exc:
        raise BundleError(f"{path}: malformed entry ({exc})") from exc
    rows = data[:, 0].astype(np.int64) - 1
    cols = data[:, 1].astype(np.int64) - 1
    vals = data[:, 2]
    b = CooBuilder(nr, nc)
    try:
        b.add(rows, cols, vals)
    except IndexError as exc:
        raise BundleError(f"{path}: {exc}") from exc
    return b.finalize()


def write_mtx_vector(path, x):
    x = np.asarray(x, float)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{len(x)} 1\n")
        for v in x:
            fh.write(_fmt(v) + "\n")


def read_mtx_vector(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    banner, _, idx = _read_header(lines, path)
    if banner[1:4] != ["matrix", "array", "real"]:
        raise BundleError(f"{path}: expected a real array")
    try:
        nr, nc = (int(t) for t in lines[idx].split())
        vals = np.array([float(ln) for ln in lines[idx + 1:] if ln.strip()])
    except ValueError as exc:
        raise BundleError(f"{path}: malformed entry ({exc})") from exc
    if nc != 1 or len(vals) != nr:
        raise BundleError(f"{path}: expected {nr} values, found {len(vals)}")
    return vals


def write_tensor(path, H: ConvTensor):
    """``n x n^2`` coordinate file; column ``j*n + k + 1`` (1-based)."""
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"% convection tensor, NV={H.n}, column = j*NV + k + 1\n")
        fh.write(f"{H.n} {H.n * H.n} {H.nnz}\n")
        for i, col, v in zip(H.i, H.kron_cols, H.values):
            fh.write(f"{i + 1} {col + 1} {_fmt(v)}\n")


def read_tensor(path) -> ConvTensor:
    lines = Path(path).read_text().splitlines()
    banner, _, idx = _read_header(lines, path)
    if banner[1:4] != ["matrix", "coordinate", "real"]:
        raise BundleError(f"{path}: unsupported MatrixMarket type")
    try:
        n, n2, nnz = (int(t) for t in lines[idx].split())
        data = _body(path, idx, nnz)
    except ValueError as exc:
        raise BundleError(f"{path}: malformed entry ({exc})") from exc
    i = data[:, 0].astype(np.int64) - 1
    col = data[:, 1].astype(np.int64) - 1
    vals = data[:, 2]
    if n2 != n * n:
        raise BundleError(f"{path}: column count {n2} is not NV^2 for NV={n}")
    try:
        return ConvTensor.from_entries(n, i, col // n, col % n, vals)
    except IndexError as exc:
        raise BundleError(f"{path}: {exc}") from exc


def write_bundle(sys: FlowSystem, ctrl: ControlOperators | None, directory,
                 problem=None, extra=None) -> dict:
    """Write every operator and then the manifest; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    problem = problem or sys.meta.get("problem", "flow")
    bcc = ctrl is not None and ctrl.Abc is not None
    stem = bundle_name(problem, sys.NV, bcc)
    files = {}

    def entry(name, fname, shape):
        files[name] = {"file": fname, "shape": list(shape)}

    for name in _SYSTEM_MATS:
        A = getattr(sys, name)
        fname = f"{stem}__{name}.mtx"
        write_mtx(directory / fname, A)
        entry(name, fname, A.shape)
    for name in _SYSTEM_VECS:
        x = getattr(sys, name)
        fname = f"{stem}__{name}.mtx"
        write_mtx_vector(directory / fname, x)
        entry(name, fname, (len(x),))
    fname = f"{stem}__H.mtx"
    write_tensor(directory / fname, sys.H)
    entry("H", fname, (sys.NV, sys.NV * sys.NV))
    files["H"]["nnz"] = sys.H.nnz

    control = None
    if ctrl is not None:
        for name in _CONTROL_MATS:
            A = getattr(ctrl, name)
            if A is None:
                continue
            fname = f"{stem}__{name}.mtx"
            write_mtx(directory / fname, A)
            entry(name, fname, A.shape)
        control = {"Nu": ctrl.Nu, "q": ctrl.q,
                   "config": ctrl.config.to_dict() if ctrl.config else None}

    manifest = {
        "format_version": FORMAT_VERSION,
        "problem": problem,
        "N": sys.meta.get("N"),
        "NV": sys.NV,
        "m": sys.m,
        "pinned": sys.pinned,
        "re_convention": RE_CONVENTION,
        "re_data": 1.0,
        "dof_ordering": sys.meta.get("dof_ordering", "unspecified"),
        "control": control,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    path = directory / f"{stem}.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, path)
    manifest["path"] = str(path)
    return manifest


def _expect_shape(name, got, declared):
    if list(got) != list(declared):
        raise BundleError(f"{name}: declared shape {declared}, file has {list(got)}")


def read_bundle(path):
    """Load ``(FlowSystem, ControlOperators | None, manifest)``."""
    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"cannot read manifest {path}: {exc}") from exc
    if man.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported format_version {man.get('format_version')}")
    base = path.parent
    files = man.get("files", {})
    try:
        NV, m = int(man["NV"]), int(man["m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"manifest {path} lacks valid NV/m") from exc

    def fpath(name):
        if name not in files:
            raise BundleError(f"manifest lists no file for {name}")
        p = base / files[name]["file"]
        if not p.exists():
            raise BundleError(f"missing file {p}")
        return p

    mats = {}
    for name in _SYSTEM_MATS:
        mats[name] = read_mtx(fpath(name))
        _expect_shape(name, mats[name].shape, files[name]["shape"])
    vecs = {}
    for name in _SYSTEM_VECS:
        vecs[name] = read_mtx_vector(fpath(name))
        _expect_shape(name, vecs[name].shape, files[name]["shape"])
    H = read_tensor(fpath("H"))
    _expect_shape("H", (H.n, H.n * H.n), files["H"]["shape"])
    for name in ("M", "A", "L1", "L2"):
        _expect_shape(f"{name} vs NV", mats[name].shape, (NV, NV))
    _expect_shape("J vs (m, NV)", mats["J"].shape, (m, NV))
    if H.n != NV:
        raise BundleError(f"H is over {H.n} DOFs, manifest declares NV={NV}")

    # data assembled at Re_data carries A/Re_data; undo that scaling
    re_data = float(man.get("re_data", 1.0))
    A, fv_diff = mats["A"], vecs["fv_diff"]
    if re_data != 1.0:
        A, fv_diff = A.scaled(re_data), fv_diff * re_data
    meta = {k: man.get(k) for k in ("problem", "N", "dof_ordering")}
    try:
        sys = FlowSystem(M=mats["M"], A=A, H=H, L1=mats["L1"], L2=mats["L2"],
                         J=mats["J"], fv=vecs["fv"], fv_diff=fv_diff,
                         fv_conv=vecs["fv_conv"], gv=vecs["gv"], fp_div=vecs["fp_div"],
                         pinned=bool(man.get("pinned", False)), meta=meta).check()
    except ValueError as exc:
        raise BundleError(str(exc)) from exc

    ctrl = None
    if any(n in files for n in _CONTROL_MATS):
        cm = {}
        for name in _CONTROL_MATS:
            if name in files:
                cm[name] = read_mtx(fpath(name))
                _expect_shape(name, cm[name].shape, files[name]["shape"])
        for name in ("B", "Abc", "Bbc"):
            if name in cm and cm[name].nrows != NV:
                raise BundleError(f"{name} has {cm[name].nrows} rows, expected NV={NV}")
        if "Cv" in cm and cm["Cv"].ncols != NV:
            raise BundleError(f"Cv has {cm['Cv'].ncols} columns, expected NV={NV}")
        if "Cp" in cm and cm["Cp"].ncols != m:
            raise BundleError(f"Cp has {cm['Cp'].ncols} columns, expected m={m}")
        cfg = None
        control = man.get("control") or {}
        if control.get("config"):
            cfg = ControlConfig.from_dict(control["config"])
        ctrl = ControlOperators(config=cfg, **cm)
    return sys, ctrl, man


@dataclass
class FieldSnapshot:
    time: float
    velocity: np.ndarray  # (npts, 2)
    pressure: np.ndarray  # (npts,)


def snapshot_from_state(mesh, dm, v_gamma, v_inner, p, time, pinned=True) -> FieldSnapshot:
    """Sample a P2/P1 state at the mesh vertices."""
    vfull = dm.expand(v_inner, v_gamma)
    nodes = mesh.p1_to_p2
    vel = np.column_stack([vfull[2 * nodes], vfull[2 * nodes + 1]])
    pres = np.append(p, 0.0) if pinned else np.asarray(p, float)
    return FieldSnapshot(float(time), vel, pres)


def write_vtu(mesh, snap: FieldSnapshot, path):
    """ASCII VTK XML unstructured grid with linear triangles."""
    npts, ncell = mesh.n_p1, mesh.n_cells
    if snap.velocity.shape != (npts, 2) or snap.pressure.shape != (npts,):
        raise ValueError("snapshot does not match the mesh")
    root = ET.Element("VTKFile", type="UnstructuredGrid", version="0.1",
                      byte_order="LittleEndian")
    grid = ET.SubElement(root, "UnstructuredGrid")
    piece = ET.SubElement(grid, "Piece", NumberOfPoints=str(npts),
                          NumberOfCells=str(ncell))

    def data_array(parent, values, name=None, ncomp=1, dtype="Float64"):
        attrs = {"type": dtype, "format": "ascii"}
        if name:
            attrs["Name"] = name
        if ncomp > 1:
            attrs["NumberOfComponents"] = str(ncomp)
        el = ET.SubElement(parent, "DataArray", **attrs)
        el.text = " ".join(_fmt(v) if dtype == "Float64" else str(int(v))
                           for v in np.ravel(values))

    pts = ET.SubElement(piece, "Points")
    data_array(pts, np.column_stack([mesh.p1_coords, np.zeros(npts)]), ncomp=3)
    cells = ET.SubElement(piece, "Cells")
    data_array(cells, mesh.triangles, "connectivity", dtype="Int64")
    data_array(cells, 3 * np.arange(1, ncell + 1), "offsets", dtype="Int64")
    data_array(cells, np.full(ncell, 5), "types", dtype="UInt8")
    pdata = ET.SubElement(piece, "PointData", Scalars="pressure", Vectors="velocity")
    data_array(pdata, np.column_stack([snap.velocity, np.zeros(npts)]), "velocity", ncomp=3)
    data_array(pdata, snap.pressure, "pressure")
    fd = ET.SubElement(grid, "FieldData")
    data_array(fd, [snap.time], "TimeValue")
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def write_signals(series: SignalSeries, path):
    """CSV with header ``t,u_1..u_Nu,yv_1..yv_q,yp``."""
    nu, nq = series.u.shape[1], series.y_v.shape[1]
    header = (["t"] + [f"u_{i + 1}" for i in range(nu)]
              + [f"yv_{i + 1}" for i in range(nq)] + ["yp"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(series.times)):
            row = [series.times[k], *series.u[k], *series.y_v[k], series.y_p[k]]
            w.writerow([_fmt(x) for x in row])


def read_signals(path) -> SignalSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    nu = sum(h.startswith("u_") for h in header)
    nq = sum(h.startswith("yv_") for h in header)
    data = np.array([[float(x) for x in r] for r in body]).reshape(len(body), len(header))
    return SignalSeries(data[:, 0], data[:, 1:1 + nu], data[:, 1 + nu:1 + nu + nq],
                        data[:, -1])
