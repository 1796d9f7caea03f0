"""Steady and transient solvers that only touch the assembled matrices."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .assembly import FlowSystem
from .control import ControlOperators
from .sparse import (SparseMatrix, apply_kron, factor_saddle, linearize_left,
                     linearize_right, spmv)

__all__ = [
    "RobinTerm",
    "SteadyOptions",
    "SteadyResult",
    "TransientOptions",
    "SignalSeries",
    "NonConvergenceError",
    "solve_stokes",
    "steady_residual",
    "picard_step",
    "newton_step",
    "solve_steady_ns",
    "solve_steady_continuation",
    "ImexStepper",
    "imex_step",
    "simulate",
    "continuation_schedule",
]

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True, eq=False)
class RobinTerm:
    """Robin penalization stored with ``alpha = 1``; scaled by ``1/alpha`` here."""

    Abc: SparseMatrix
    Bbc: SparseMatrix
    alpha: float

    def matrix(self):
        return self.Abc.scaled(1.0 / self.alpha)

    def source(self, u):
        return spmv(self.Bbc, np.atleast_1d(np.asarray(u, float))) / self.alpha


@dataclass(frozen=True)
class SteadyOptions:
    Re: float
    picard_steps: int = 5
    newton_tol: float = 1e-11
    max_newton: int = 25

    def __post_init__(self):
        if self.Re <= 0 or self.newton_tol <= 0:
            raise ValueError("Re and newton_tol must be positive")
        if self.picard_steps < 0 or self.max_newton < 1:
            raise ValueError("invalid iteration counts")


@dataclass
class SteadyResult:
    v: np.ndarray
    p: np.ndarray
    trace: list
    Re: float

    @property
    def residual(self):
        return self.trace[-1]["residual"] if self.trace else float("nan")


@dataclass(frozen=True)
class TransientOptions:
    Re: float
    t0: float = 0.0
    tE: float = 1.0
    Nts: int = 100
    input_signal: Optional[Callable[[float], np.ndarray]] = None
    robin_alpha: Optional[float] = None
    record_every: int = 1

    def __post_init__(self):
        if not self.tE > self.t0:
            raise ValueError("need tE > t0")
        if self.Nts < 1 or self.record_every < 1:
            raise ValueError("Nts and record_every must be >= 1")
        if self.Re <= 0:
            raise ValueError("Re must be positive")
        if self.robin_alpha is not None and self.robin_alpha <= 0:
            raise ValueError("robin_alpha must be positive")

    @property
    def dt(self):
        return (self.tE - self.t0) / self.Nts


@dataclass
class SignalSeries:
    """Recorded inputs and outputs; one row per record time."""

    times: np.ndarray
    u: np.ndarray
    y_v: np.ndarray
    y_p: np.ndarray

    def __post_init__(self):
        k = len(self.times)
        if not (len(self.u) == len(self.y_v) == len(self.y_p) == k):
            raise ValueError("signal arrays differ in length")
        if k > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def equals(self, other) -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f), equal_nan=True)
                   for f in ("times", "u", "y_v", "y_p"))


def _rhs_base(sys: FlowSystem, Re):
    return sys.fv - sys.gv - sys.fv_diff / Re - sys.fv_conv


def _diffusive(sys, Re, robin):
    S = sys.A.scaled(1.0 / Re) + sys.L1 + sys.L2
    if robin is not None:
        S = S + robin.matrix()
    return S


def solve_stokes(sys: FlowSystem, Re, robin: RobinTerm | None = None, u_bc=None):
    """Steady Stokes solution ``(v, p)`` on the inner DOFs."""
    S = sys.A.scaled(1.0 / Re)
    rv = sys.fv - sys.gv - sys.fv_diff / Re
    if robin is not None:
        S = S + robin.matrix()
        if u_bc is not None:
            rv = rv + robin.source(u_bc)
    F = factor_saddle(S, sys.J)
    return F.solve(rv, -sys.fp_div)


def steady_residual(sys: FlowSystem, Re, v, p, robin=None, u_bc=None, convection=True):
    """Steady residual norm and the norm of the data it is measured against.

    With ``convection=False`` this is the Stokes residual.
    """
    if convection:
        rhs = _rhs_base(sys, Re)
        Av = spmv(sys.A, v) / Re + spmv(sys.L1, v) + spmv(sys.L2, v) + apply_kron(sys.H, v, v)
    else:
        rhs = sys.fv - sys.gv - sys.fv_diff / Re
        Av = spmv(sys.A, v) / Re
    if robin is not None:
        Av = Av + spmv(robin.matrix(), v)
        if u_bc is not None:
            rhs = rhs + robin.source(u_bc)
    r_mom = Av - spmv(sys.J.T, p) - rhs
    r_div = spmv(sys.J, v) + sys.fp_div
    res = float(np.linalg.norm(np.concatenate([r_mom, r_div])))
    scale = float(np.linalg.norm(np.concatenate([rhs, sys.fp_div])))
    return res, scale


def picard_step(sys, Re, a, robin=None, u_bc=None):
    """One Oseen step: convecting field ``a`` frozen."""
    S = sys.A.scaled(1.0 / Re) + sys.L1 + linearize_left(sys.H, a)
    rv = _rhs_base(sys, Re) - spmv(sys.L2, a)
    if robin is not None:
        S = S + robin.matrix()
        if u_bc is not None:
            rv = rv + robin.source(u_bc)
    return factor_saddle(S, sys.J).solve(rv, -sys.fp_div)


def newton_step(sys, Re, a, robin=None, u_bc=None):
    S = (_diffusive(sys, Re, robin) + linearize_left(sys.H, a)
         + linearize_right(sys.H, a))
    rv = _rhs_base(sys, Re) + apply_kron(sys.H, a, a)
    if robin is not None and u_bc is not None:
        rv = rv + robin.source(u_bc)
    return factor_saddle(S, sys.J).solve(rv, -sys.fp_div)


def solve_steady_ns(sys: FlowSystem, opts: SteadyOptions, v0=None, p0=None,
                    robin=None, u_bc=None) -> SteadyResult:
    """Picard steps followed by Newton until the relative residual drops
    below ``opts.newton_tol``.

    Raises :class:`NonConvergenceError` (with the iteration trace attached)
    if Newton does not converge within ``opts.max_newton`` steps.
    """
    Re = opts.Re
    if v0 is None:
        v, p = solve_stokes(sys, Re, robin, u_bc)
    else:
        v = np.asarray(v0, float)
        p = np.zeros(sys.m) if p0 is None else np.asarray(p0, float)
    trace = []

    def record(kind, v, p):
        res, scale = steady_residual(sys, Re, v, p, robin, u_bc)
        trace.append({"kind": kind, "residual": res,
                      "relative": res / (1.0 + scale)})
        log.debug("Re=%g %s residual %.3e", Re, kind, res)
        return res <= opts.newton_tol * (1.0 + scale)

    if record("initial", v, p):
        return SteadyResult(v, p, trace, Re)
    for _ in range(opts.picard_steps):
        v, p = picard_step(sys, Re, v, robin, u_bc)
        if record("picard", v, p):
            return SteadyResult(v, p, trace, Re)
    for _ in range(opts.max_newton):
        v, p = newton_step(sys, Re, v, robin, u_bc)
        if not np.all(np.isfinite(v)):
            break
        if record("newton", v, p):
            return SteadyResult(v, p, trace, Re)
    raise NonConvergenceError(
        f"steady Navier-Stokes did not converge at Re={Re:g} "
        f"(last residual {trace[-1]['residual']:.3e})", trace)


def continuation_schedule(Re):
    """Reynolds numbers stepped through on the way to ``Re``."""
    steps = [r for r in (100.0, 400.0, 800.0) if r < Re]
    return steps + [float(Re)]


def solve_steady_continuation(sys: FlowSystem, opts: SteadyOptions,
                              schedule=None, robin=None, u_bc=None, max_splits=6):
    """Chain steady solves over increasing Reynolds numbers.

    A stage that fails to converge from the previous solution is retried
    after inserting the midpoint Reynolds number, at most ``max_splits``
    times per scheduled stage.  Returns the final result and the list of all
    converged stages.
    """
    schedule = list(schedule) if schedule is not None else continuation_schedule(opts.Re)
    v = p = None
    prev_Re = None
    results = []
    for target in schedule:
        pending = [float(target)]
        splits = 0
        while pending:
            Re = pending[-1]
            try:
                res = solve_steady_ns(sys, replace(opts, Re=Re), v, p, robin, u_bc)
            except NonConvergenceError:
                if prev_Re is None or splits >= max_splits:
                    raise
                splits += 1
                mid = 0.5 * (prev_Re + Re)
                log.info("continuation: Re=%g failed, inserting Re=%g", Re, mid)
                pending.append(mid)
                continue
            pending.pop()
            v, p, prev_Re = res.v, res.p, Re
            results.append(res)
    return results[-1], results


class ImexStepper:
    """IMEX Euler with a factorization reused across steps.

    Diffusion, the boundary-induced linear convection ``L1 + L2``, Robin
    terms and pressure are implicit; ``H (v kron v)`` and inputs are taken at
    the old time level.
    """

    def __init__(self, sys: FlowSystem, Re, dt, B: SparseMatrix | None = None,
                 robin: RobinTerm | None = None):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.sys, self.Re, self.dt = sys, Re, dt
        self.B, self.robin = B, robin
        K = sys.M + _diffusive(sys, Re, robin).scaled(dt)
        self._F = factor_saddle(K, sys.J)
        # -dt J^T p block is realized by solving for dt*p
        self._const = dt * _rhs_base(sys, Re)

    def step(self, v_old, u=None, u_bc=None):
        sys, dt = self.sys, self.dt
        rv = spmv(sys.M, v_old) + self._const - dt * apply_kron(sys.H, v_old, v_old)
        if u is not None:
            if self.B is None:
                raise ValueError("input given but no input operator")
            rv = rv + dt * spmv(self.B, u)
        if u_bc is not None:
            if self.robin is None:
                raise ValueError("boundary input given but no Robin operator")
            rv = rv + dt * self.robin.source(u_bc)
        v, dtp = self._F.solve(rv, -sys.fp_div)
        return v, dtp / dt


def imex_step(sys: FlowSystem, Re, dt, v_old, u=None, ctrl: ControlOperators | None = None,
              robin: RobinTerm | None = None, u_bc=None):
    B = ctrl.B if ctrl is not None else None
    return ImexStepper(sys, Re, dt, B, robin).step(v_old, u, u_bc)


def simulate(sys: FlowSystem, ctrl: ControlOperators | None, topts: TransientOptions,
             initial=None, snapshot=None, snapshot_every=None) -> SignalSeries:
    """Transient IMEX Euler run from the Stokes solution (or ``initial``).

    The input signal feeds ``B`` or, when ``topts.robin_alpha`` is set, the
    Robin operator ``Bbc``.  ``snapshot(k, t, v, p)`` is called after
    every ``snapshot_every``-th step.
    """
    Re, dt = topts.Re, topts.dt
    robin = None
    B = ctrl.B if ctrl is not None else None
    if topts.robin_alpha is not None:
        if ctrl is None or ctrl.Abc is None or ctrl.Bbc is None:
            raise ValueError("robin_alpha given but bundle has no Abc/Bbc")
        robin = RobinTerm(ctrl.Abc, ctrl.Bbc, topts.robin_alpha)
    sig = topts.input_signal
    n_in = 0
    if sig is not None:
        n_in = len(np.atleast_1d(sig(topts.t0)))
        target = robin.Bbc if robin is not None else B
        if target is None:
            raise ValueError("input signal given but no input operator")
        if target.ncols != n_in:
            raise ValueError(f"input signal has {n_in} entries, operator expects {target.ncols}")
    Cv = ctrl.Cv if ctrl is not None else None
    Cp = ctrl.Cp if ctrl is not None else None

    if initial is None:
        v, p = solve_stokes(sys, Re, robin)
    else:
        v, p = (np.asarray(x, float) for x in initial)
    stepper = ImexStepper(sys, Re, dt, B, robin)

    times, us, yvs, yps = [], [], [], []

    def t_at(k):
        return topts.t0 + k * dt

    def u_at(k):
        return np.atleast_1d(np.asarray(sig(t_at(k)), float)) if sig is not None else np.zeros(0)

    def record(k, v, p):
        times.append(t_at(k))
        us.append(u_at(k))
        yvs.append(spmv(Cv, v) if Cv is not None else np.zeros(0))
        yps.append(float(spmv(Cp, p)[0]) if Cp is not None else np.nan)

    record(0, v, p)
    for k in range(topts.Nts):
        u = u_at(k) if sig is not None else None
        if robin is not None:
            v, p = stepper.step(v, None, u)
        else:
            v, p = stepper.step(v, u)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite velocity at step {k + 1}")
        if (k + 1) % topts.record_every == 0:
            record(k + 1, v, p)
        if snapshot is not None and snapshot_every and (k + 1) % snapshot_every == 0:
            snapshot(k + 1, t_at(k + 1), v, p)
    return SignalSeries(np.array(times), np.array(us).reshape(len(times), n_in),
                        np.array(yvs).reshape(len(times), -1), np.array(yps))
