"""Batch front end: assemble bundles, solve steady states, run transients.

Exit codes are 0 (ok), 1 (invalid input) and 2 (failure during the run).
Errors are reported as one line ``error: <kind>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import ControlConfig, ControlError
from .fileio import (BundleError, read_bundle, snapshot_from_state, write_bundle,
                     write_signals, write_vtu)
from .mesh import MeshError
from .problems import setup_cavity
from .solvers import (RobinTerm, SteadyOptions, TransientOptions, continuation_schedule,
                      simulate, solve_steady_continuation, solve_stokes, steady_residual)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
OUTDIR_ENV = "NSEMATS_OUTDIR"

log = logging.getLogger("nsemats")


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


@dataclass
class RunSpec:
    command: str
    problem: str = "drivencavity"
    bundle: Path | None = None
    N: int = 10
    Re: float = 1.0
    t0: float = 0.0
    tE: float = 1.0
    Nts: int = 100
    control: str = "none"
    Nu: int = 8
    q: int = 10
    palpha: float = 1e-3
    input: str = "auto"
    omega: float | None = None
    omega_mult: float = 4.0
    uvec: tuple = ()
    stokes: bool = False
    record_every: int = 1
    snapshots: int = 16
    outdir: Path = Path(".")

    @property
    def source(self):
        return "external-bundle" if self.bundle is not None else self.problem

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ValidationError(msg)

        need(self.bundle is not None or self.problem == "drivencavity",
             f"unknown problem {self.problem!r}")
        need(self.bundle is None or self.command != "assemble",
             "assemble builds bundles and does not read one")
        need(self.bundle is None or self.bundle.is_file(), f"bundle {self.bundle} not found")
        need(self.N >= 2, f"N must be >= 2, got {self.N}")
        need(math.isfinite(self.Re) and self.Re > 0, f"Re must be positive, got {self.Re}")
        need(self.Nu >= 2 and self.Nu % 2 == 0, f"Nu must be even and >= 2, got {self.Nu}")
        need(self.q >= 4 and self.q % 2 == 0, f"q must be even and >= 4, got {self.q}")
        need(self.palpha > 0, f"palpha must be positive, got {self.palpha}")
        if self.command == "simulate":
            need(self.tE > self.t0, "tE must exceed t0")
            need(self.Nts >= 1, f"Nts must be >= 1, got {self.Nts}")
            need(self.record_every >= 1, "record-every must be >= 1")
            need(self.snapshots >= 0, "snapshots must be >= 0")
            need(self.omega is None or math.isfinite(self.omega), "omega must be finite")
            if self.bundle is None:
                need(self.input in ("auto", "none") or self.control != "none",
                     f"input {self.input!r} needs a control mode")
                need(not (self.input == "sincos" and self.control == "robin"),
                     "sincos input needs distributed control")
        if self.uvec:
            need(self.control == "robin" or self.bundle is not None,
                 "uvec is a boundary input and needs robin control")
        return self

    @property
    def frequency(self):
        if self.omega is not None:
            return self.omega
        return self.omega_mult * math.pi / (self.tE - self.t0)

    def stem(self, kind):
        src = self.bundle.stem if self.bundle is not None else f"{self.problem}_N{self.N}"
        parts = [kind, src, f"Re{self.Re:g}"]
        if kind == "simulate":
            parts += [f"tE{self.tE:g}", f"Nts{self.Nts}"]
        if self.bundle is None and self.control != "none":
            parts.append(self.control)
        return "_".join(parts)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nsemats",
                description="Taylor-Hood discretization of Navier-Stokes flows as plain matrices.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, Re_default, control_default="none"):
        sp.add_argument("--problem", default="drivencavity", choices=["drivencavity"],
                        help="built-in setup (default: %(default)s)")
        sp.add_argument("--N", type=int, default=10, help="segments per side (default: %(default)s)")
        sp.add_argument("--Re", type=float, default=Re_default,
                        help="Reynolds number (default: %(default)s)")
        sp.add_argument("--control", default=control_default,
                        choices=["none", "distributed", "robin"],
                        help="actuation (default: %(default)s)")
        sp.add_argument("--Nu", type=int, default=8, help="input dimension (default: %(default)s)")
        sp.add_argument("--q", type=int, default=10, help="velocity output dimension (default: %(default)s)")
        sp.add_argument("--outdir", type=Path, default=None,
                        help=f"output directory (default: ${OUTDIR_ENV} or the current directory)")

    a = sub.add_parser("assemble", help="assemble operators and write a bundle")
    common(a, 1.0)

    s = sub.add_parser("steady", help="Stokes or steady Navier-Stokes solution")
    common(s, 1.0)
    s.add_argument("--bundle", type=Path, default=None,
                   help="solve on an external bundle manifest (--problem/--N/--control unused)")
    s.add_argument("--stokes", action="store_true", help="stop after the Stokes solve")
    s.add_argument("--palpha", type=float, default=1e-3,
                   help="Robin penalization parameter (default: %(default)s)")
    s.add_argument("--uvec", type=str, default="",
                   help="constant boundary input, comma separated")

    t = sub.add_parser("simulate", help="transient IMEX Euler run")
    common(t, 800.0, "distributed")
    t.add_argument("--bundle", type=Path, default=None,
                   help="run on an external bundle manifest (--problem/--N/--control unused)")
    t.add_argument("--t0", type=float, default=0.0, help="start time (default: %(default)s)")
    t.add_argument("--tE", type=float, default=20.0, help="end time (default: %(default)s)")
    t.add_argument("--Nts", type=int, default=1024, help="number of time steps (default: %(default)s)")
    t.add_argument("--palpha", type=float, default=1e-3,
                   help="Robin penalization parameter (default: %(default)s)")
    t.add_argument("--input", default="auto", choices=["auto", "none", "sin", "sincos"],
                   help="input signal (default: sincos for distributed, sin for robin)")
    om = t.add_mutually_exclusive_group()
    om.add_argument("--omega", type=float, default=None, help="input frequency")
    om.add_argument("--omega-mult", type=float, default=4.0,
                    help="frequency as mult*pi/(tE-t0) (default: %(default)s)")
    t.add_argument("--record-every", type=int, default=1,
                   help="record outputs every k steps (default: %(default)s)")
    t.add_argument("--snapshots", type=int, default=16,
                   help="evenly spaced VTU files per run, 0 for none (default: %(default)s)")
    return p


def parse_spec(argv) -> RunSpec:
    ns = build_parser().parse_args(argv)
    if ns.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    outdir = ns.outdir or Path(os.environ.get(OUTDIR_ENV, "."))
    kw = {k: v for k, v in vars(ns).items() if k not in ("verbose", "outdir", "uvec")}
    uvec = ()
    if getattr(ns, "uvec", ""):
        try:
            uvec = tuple(float(x) for x in ns.uvec.split(","))
        except ValueError:
            raise ValidationError(f"cannot parse uvec {ns.uvec!r}") from None
    return RunSpec(outdir=outdir, uvec=uvec, **kw).validate()


def _setup(spec: RunSpec):
    cfg = ControlConfig(Nu=spec.Nu, q=spec.q)
    return setup_cavity(spec.N, spec.control, cfg)


def cmd_assemble(spec: RunSpec) -> int:
    st = _setup(spec)
    man = write_bundle(st.sys, st.ctrl, spec.outdir)
    print(f"N={spec.N} NV={st.sys.NV} m={st.sys.m}")
    if st.ctrl is not None:
        for name in ("B", "Cv", "Cp", "Bbc"):
            M = getattr(st.ctrl, name)
            if M is not None:
                print(f"{name}: {M.nrows}x{M.ncols}")
    print(f"bundle: {man['path']}")
    return EXIT_OK


def _load(spec: RunSpec):
    """System, control operators, Robin term and optional mesh setup."""
    if spec.bundle is not None:
        sys_, ctrl, _ = read_bundle(spec.bundle)
        st = None
    else:
        st = _setup(spec)
        sys_, ctrl = st.sys, st.ctrl
    robin = None
    if ctrl is not None and ctrl.Abc is not None:
        robin = RobinTerm(ctrl.Abc, ctrl.Bbc, spec.palpha)
    return sys_, ctrl, robin, st


def cmd_steady(spec: RunSpec) -> int:
    sys_, ctrl, robin, st = _load(spec)
    u_bc = None
    if spec.uvec:
        if robin is None:
            raise ValidationError("uvec given but the system has no boundary input")
        if len(spec.uvec) != robin.Bbc.ncols:
            raise ValidationError(f"uvec needs {robin.Bbc.ncols} entries")
        u_bc = np.array(spec.uvec)
    report = {"Re": spec.Re, "source": spec.source, "NV": sys_.NV, "m": sys_.m}
    if spec.stokes:
        v, p = solve_stokes(sys_, spec.Re, robin, u_bc)
        res, scale = steady_residual(sys_, spec.Re, v, p, robin, u_bc, convection=False)
        report.update(kind="stokes", residual=res, relative=res / (1.0 + scale))
        print(f"stokes: residual {res:.3e}")
    else:
        schedule = continuation_schedule(spec.Re)
        print("continuation: " + " -> ".join(f"{r:g}" for r in schedule))
        final, stages = solve_steady_continuation(sys_, SteadyOptions(Re=spec.Re),
                                                  schedule, robin, u_bc)
        v, p = final.v, final.p
        report.update(kind="navier-stokes", schedule=schedule,
                      stages=[{"Re": r.Re, "trace": r.trace} for r in stages],
                      residual=final.residual)
        for r in stages:
            print(f"Re={r.Re:g}: {len(r.trace)} iterations, residual {r.residual:.3e}")
    spec.outdir.mkdir(parents=True, exist_ok=True)
    stem = spec.stem("steady")
    if st is not None:
        snap = snapshot_from_state(st.mesh, st.dm, st.v_gamma, v, p, 0.0, st.sys.pinned)
        write_vtu(st.mesh, snap, spec.outdir / f"{stem}.vtu")
    with open(spec.outdir / f"{stem}_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"output: {spec.outdir / stem}")
    return EXIT_OK


def input_signal(spec: RunSpec, ctrl, robin):
    """Time signal ``t -> u(t)`` for the chosen input mode, or None."""
    mode = spec.input
    if mode == "auto":
        mode = "sin" if robin is not None else ("sincos" if ctrl is not None and ctrl.B is not None
                                                else "none")
    if mode == "none":
        return None
    omega = spec.frequency
    if robin is not None:
        if mode != "sin":
            raise ValidationError("boundary input supports only the sin signal")
        n = robin.Bbc.ncols
        return lambda t: np.full(n, math.sin(omega * t))
    if ctrl is None or ctrl.B is None:
        raise ValidationError("input signal requested but there is no input operator")
    half = ctrl.B.ncols // 2
    if mode == "sincos":
        return lambda t: np.repeat([math.sin(omega * t), math.cos(omega * t)], half)
    return lambda t: np.concatenate([np.full(half, math.sin(omega * t)), np.zeros(half)])


def cmd_simulate(spec: RunSpec) -> int:
    sys_, ctrl, robin, st = _load(spec)
    sig = input_signal(spec, ctrl, robin)
    topts = TransientOptions(Re=spec.Re, t0=spec.t0, tE=spec.tE, Nts=spec.Nts,
                             input_signal=sig,
                             robin_alpha=spec.palpha if robin is not None else None,
                             record_every=spec.record_every)
    spec.outdir.mkdir(parents=True, exist_ok=True)
    stem = spec.stem("simulate")
    every = max(1, spec.Nts // spec.snapshots) if spec.snapshots else None

    def snapshot(k, t, v, p):
        if k // every > spec.snapshots:
            return
        snap = snapshot_from_state(st.mesh, st.dm, st.v_gamma, v, p, t, st.sys.pinned)
        write_vtu(st.mesh, snap, spec.outdir / f"{stem}_{k:06d}.vtu")

    # bundles carry no mesh, so they produce signals only
    with_vtu = st is not None and every is not None
    series = simulate(sys_, ctrl, topts, snapshot=snapshot if with_vtu else None,
                      snapshot_every=every)
    out = spec.outdir / f"{stem}.csv"
    write_signals(series, out)
    print(f"steps={spec.Nts} records={len(series.times)}")
    print(f"signals: {out}")
    return EXIT_OK


COMMANDS = {"assemble": cmd_assemble, "steady": cmd_steady, "simulate": cmd_simulate}

_VALIDATION = (ValidationError, MeshError, ControlError, BundleError)


def _fail(kind, exc) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return EXIT_VALIDATION if kind == "validation" else EXIT_RUNTIME


def main(argv=None) -> int:
    try:
        spec = parse_spec(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except _VALIDATION as exc:
        return _fail("validation", exc)
    try:
        # blow-ups are caught by finiteness checks and reported as one line
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[spec.command](spec)
    except _VALIDATION as exc:
        return _fail("validation", exc)
    except Exception as exc:  # noqa: BLE001 - every failure maps to one exit code
        return _fail("runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
