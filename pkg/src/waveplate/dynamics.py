"""Time integration of the coupled chamber/wall system and energy audits.

Semi-discrete system on the free dofs (u chamber, w wall, y = u_t, z = w_t):

    M_o y' = -S u + Tr' M_g z          (wave; Neumann face carries z)
    M_g z' = -S_B w - M_g Tr y + M_g g(w)

The quadratic energy E = (y.M_o.y + u.S.u + z.M_g.z + w.S_B.w)/2 satisfies
dE/dt = (g, z)_gamma exactly at the semi-discrete level because the
coupling blocks are exact transposes of each other.

Schemes
-------
implicit_midpoint   symmetric one-step midpoint; conserves E exactly when
                    the source vanishes, second order otherwise.
discrete_gradient   midpoint for the quadratic part plus the averaged
                    gradient (H(w+) - H(w-))/(w+ - w-) for the source,
                    which conserves the total energy E - int H(w) to the
                    nonlinear solve tolerance per step.
leapfrog            explicit kick-drift-kick; conditionally stable, used
                    as a fast baseline and negative control.

Work accounting: the midpoint and leapfrog integrators accumulate the
source work with the endpoint trapezoid rule, an independent second-order
quadrature of int int h(w) w_t, so the identity residual
E(t) - E(0) - work is a genuine order-two convergence diagnostic.  The
discrete-gradient integrator accumulates the increments of int H(w), for
which the residual collapses to the total-energy drift and stays at the
solver floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import GridFunction
from .operators import DiscreteOperators, GridConstants
from .sources import BlowUpSuspect, SourceSpec, TruncatedSource, lipschitz_bound

__all__ = [
    "State",
    "EnergyReport",
    "IntegratorConfig",
    "StepFailure",
    "StabilityError",
    "TimeIntegrator",
    "Trace",
    "TraceRecord",
    "step",
    "energy",
    "simulate",
    "LocalExistence",
    "local_existence_time",
    "gronwall_envelope_constant",
    "gronwall_check",
    "GronwallResult",
    "continuous_dependence_check",
    "ContinuousDependenceResult",
    "truncation_consistency_check",
    "TruncationResult",
]

SCHEMES = ("implicit_midpoint", "discrete_gradient", "leapfrog")


class StepFailure(RuntimeError):
    """Nonlinear solve diverged; carries the iteration trace."""

    def __init__(self, message: str, iterations: list[float]):
        super().__init__(message)
        self.iterations = iterations


class StabilityError(ValueError):
    """Explicit time step exceeds the recorded stability bound."""


@dataclass(frozen=True)
class State:
    """Discrete system state (u, w, u_t, w_t) at time t."""

    u: GridFunction
    w: GridFunction
    ut: GridFunction
    wt: GridFunction
    t: float = 0.0

    def __post_init__(self):
        for f in (self.u, self.w, self.ut, self.wt):
            if not np.all(np.isfinite(f.values)):
                raise ValueError("state fields must be finite")

    @staticmethod
    def zero(ops: DiscreteOperators, t: float = 0.0) -> "State":
        return state_from_free(
            ops,
            np.zeros(ops.free_chamber.size),
            np.zeros(ops.free_plate.size),
            np.zeros(ops.free_chamber.size),
            np.zeros(ops.free_plate.size),
            t,
        )


def state_from_free(ops: DiscreteOperators, u, w, y, z, t: float = 0.0) -> State:
    return State(
        u=ops.chamber_field(np.asarray(u, dtype=float)),
        w=ops.plate_field(np.asarray(w, dtype=float)),
        ut=ops.chamber_field(np.asarray(y, dtype=float)),
        wt=ops.plate_field(np.asarray(z, dtype=float)),
        t=t,
    )


@dataclass(frozen=True)
class EnergyReport:
    """Energies and audit residuals at one instant.

    identity_residual = E(t) - E(0) - accumulated source work
    calE_drift        = total energy now minus at the start of the run
    """

    E: float
    J: float
    calE: float
    source_work: float
    identity_residual: float
    calE_drift: float
    norm_V: float


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "implicit_midpoint"
    dt: float = 1e-2
    nonlinear_tol: float = 1e-12
    max_nonlinear_iters: int = 100
    leapfrog_safety: float = 0.9

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (0 < self.nonlinear_tol < 1):
            raise ValueError("nonlinear_tol must lie in (0, 1)")
        if self.max_nonlinear_iters < 1:
            raise ValueError("max_nonlinear_iters must be >= 1")


# ----------------------------------------------------------------------
# source plumbing on free vectors
# ----------------------------------------------------------------------

def _h_free(ops: DiscreteOperators, source, w: np.ndarray) -> np.ndarray:
    """Pointwise source on a free wall vector, with truncation if configured."""
    if isinstance(source, TruncatedSource):
        r = ops.plate_h2_seminorm_free(w)
        arg = w if r <= source.K else w * (source.K / r)
        vals = np.asarray(source.base.h(arg), dtype=float)
    else:
        vals = np.asarray(source.h(w), dtype=float)
    if not np.all(np.isfinite(vals)):
        node = int(ops.free_plate[int(np.flatnonzero(~np.isfinite(vals))[0])])
        raise BlowUpSuspect("source overflow", node=node)
    return vals


def _base_spec(source) -> SourceSpec:
    return source.base if isinstance(source, TruncatedSource) else source


def _int_H(ops: DiscreteOperators, source, w: np.ndarray) -> float:
    """Quadrature of int_Gamma H(w); clamped boundary contributes H(0) = 0."""
    spec = _base_spec(source)
    vals = np.asarray(spec.H(w), dtype=float)
    if not np.all(np.isfinite(vals)):
        node = int(ops.free_plate[int(np.flatnonzero(~np.isfinite(vals))[0])])
        raise BlowUpSuspect("source potential overflow", node=node)
    return float(np.dot(ops.M_gamma, vals))


def _dg_average(spec: SourceSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(H(b) - H(a)) / (b - a), switching to h((a+b)/2) for tiny increments."""
    d = b - a
    small = np.abs(d) <= 1e-8 * (1.0 + np.abs(a) + np.abs(b))
    safe = np.where(small, 1.0, d)
    Ha = np.asarray(spec.H(a), dtype=float)
    Hb = np.asarray(spec.H(b), dtype=float)
    hm = np.asarray(spec.h(0.5 * (a + b)), dtype=float)
    return np.where(small, hm, (Hb - Ha) / safe)


def _dg_average_db(spec: SourceSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Derivative of the averaged gradient with respect to its right endpoint."""
    d = b - a
    small = np.abs(d) <= 1e-6 * (1.0 + np.abs(a) + np.abs(b))
    safe = np.where(small, 1.0, d)
    rho = _dg_average(spec, a, b)
    hb = np.asarray(spec.h(b), dtype=float)
    hpm = np.asarray(spec.h_prime(0.5 * (a + b)), dtype=float)
    return np.where(small, 0.5 * hpm, (hb - rho) / safe)


# ----------------------------------------------------------------------
# integrator
# ----------------------------------------------------------------------

class TimeIntegrator:
    """Stateful stepper for one trajectory, with energy-audit accumulators."""

    def __init__(self, ops: DiscreteOperators, source, cfg: IntegratorConfig, x0: State):
        self.ops = ops
        self.source = source
        self.cfg = cfg
        self.u = ops.chamber_free(x0.u).copy()
        self.w = ops.plate_free(x0.w).copy()
        self.y = ops.chamber_free(x0.ut).copy()
        self.z = ops.plate_free(x0.wt).copy()
        self.t = float(x0.t)
        self.n_steps = 0
        self._solvers: dict[float, Callable] = {}
        self._h_end = None  # h(w) at the current state, reused by the work quadrature
        self.E0 = self._energy()
        self.calE0 = self.E0 - _int_H(ops, source, self.w)
        self.source_work = 0.0
        if cfg.scheme == "leapfrog":
            dt_max = cfg.leapfrog_safety * ops.constants().leapfrog_dt_max
            if cfg.dt > dt_max:
                raise StabilityError(
                    f"leapfrog dt={cfg.dt:g} exceeds stability bound {dt_max:g}"
                )

    # -- energies ------------------------------------------------------
    def _energy(self) -> float:
        o = self.ops
        return 0.5 * (
            self.y @ (o.M_omega * self.y)
            + self.u @ (o.S @ self.u)
            + self.z @ (o.M_gamma * self.z)
            + self.w @ (o.S_B @ self.w)
        )

    def _norm_V(self) -> float:
        o = self.ops
        return math.sqrt(max(self.u @ (o.S @ self.u) + self.w @ (o.S_B @ self.w), 0.0))

    def state(self) -> State:
        return state_from_free(self.ops, self.u, self.w, self.y, self.z, self.t)

    def report(self) -> EnergyReport:
        E = self._energy()
        intH = _int_H(self.ops, self.source, self.w)
        o = self.ops
        J = 0.5 * (self.u @ (o.S @ self.u) + self.w @ (o.S_B @ self.w)) - intH
        calE = E - intH
        return EnergyReport(
            E=E,
            J=J,
            calE=calE,
            source_work=self.source_work,
            identity_residual=E - self.E0 - self.source_work,
            calE_drift=calE - self.calE0,
            norm_V=self._norm_V(),
        )

    # -- linear block --------------------------------------------------
    def _solver(self, dt: float) -> Callable:
        if dt not in self._solvers:
            o = self.ops
            K = sp.bmat(
                [
                    [sp.diags(o.M_omega) + dt**2 / 4 * o.S, -dt / 2 * o.coupling],
                    [dt / 2 * (sp.diags(o.M_gamma) @ o.Tr), sp.diags(o.M_gamma) + dt**2 / 4 * o.S_B],
                ],
                format="csc",
            )
            self._solvers[dt] = spla.factorized(K)
        return self._solvers[dt]

    # -- stepping ------------------------------------------------------
    def step(self, dt: float | None = None):
        dt = self.cfg.dt if dt is None else dt
        if self.cfg.scheme == "leapfrog":
            self._step_leapfrog(dt)
        else:
            self._step_implicit(dt)
        self.n_steps += 1
        for arr in (self.u, self.w, self.y, self.z):
            if not np.all(np.isfinite(arr)):
                raise BlowUpSuspect("state overflow", t=self.t, energy=self.E0)

    def _source_midbar(self, w_bar: np.ndarray) -> np.ndarray:
        """Source term entering the velocity update, per scheme."""
        if self.cfg.scheme == "discrete_gradient":
            spec = _base_spec(self.source)
            a, b = self.w, 2.0 * w_bar - self.w
            if isinstance(self.source, TruncatedSource):
                r = self.ops.plate_h2_seminorm_free(w_bar)
                if r > self.source.K:
                    s = self.source.K / r
                    a, b = a * s, b * s
            return _dg_average(spec, a, b)
        return _h_free(self.ops, self.source, w_bar)

    def _step_implicit(self, dt: float):
        o = self.ops
        nf = self.u.size
        solver = self._solver(dt)
        ry0 = o.M_omega * self.y - dt / 2 * (o.S @ self.u)
        rz0 = o.M_gamma * self.z - dt / 2 * (o.S_B @ self.w)
        g = self._source_midbar(self.w)
        iter_trace: list[float] = []
        v = None
        for it in range(self.cfg.max_nonlinear_iters):
            rhs = np.concatenate([ry0, rz0 + dt / 2 * (o.M_gamma * g)])
            v = solver(rhs)
            w_bar = self.w + dt / 2 * v[nf:]
            g_new = self._source_midbar(w_bar)
            delta = float(np.max(np.abs(g_new - g))) / max(1.0, float(np.max(np.abs(g_new))))
            iter_trace.append(delta)
            g = g_new
            if delta <= self.cfg.nonlinear_tol:
                break
        else:
            v = self._newton(dt, ry0, rz0, g, iter_trace)
        y_bar, z_bar = v[:nf], v[nf:]
        self._commit(dt, y_bar, z_bar)

    def _newton(self, dt, ry0, rz0, g0, iter_trace) -> np.ndarray:
        """Newton fallback on the midpoint equations for (y_bar, z_bar)."""
        o = self.ops
        nf = self.u.size
        spec = _base_spec(self.source)
        v = self._solver(dt)(np.concatenate([ry0, rz0 + dt / 2 * (o.M_gamma * g0)]))
        newton_trace: list[float] = []
        scale = max(1.0, float(np.max(np.abs(v))))
        for it in range(self.cfg.max_nonlinear_iters):
            z_bar = v[nf:]
            w_bar = self.w + dt / 2 * z_bar
            g = self._source_midbar(w_bar)
            K = sp.bmat(
                [
                    [sp.diags(o.M_omega) + dt**2 / 4 * o.S, -dt / 2 * o.coupling],
                    [dt / 2 * (sp.diags(o.M_gamma) @ o.Tr), sp.diags(o.M_gamma) + dt**2 / 4 * o.S_B],
                ],
                format="csc",
            )
            F = K @ v - np.concatenate([ry0, rz0 + dt / 2 * (o.M_gamma * g)])
            res = float(np.max(np.abs(F))) / scale
            newton_trace.append(res)
            if res <= self.cfg.nonlinear_tol:
                return v
            if self.cfg.scheme == "discrete_gradient":
                b = 2.0 * w_bar - self.w
                dgdw = 2.0 * _dg_average_db(spec, self.w, b)
            else:
                dgdw = np.asarray(spec.h_prime(w_bar), dtype=float)
            Jmat = K - sp.bmat(
                [
                    [sp.csr_matrix((nf, nf)), sp.csr_matrix((nf, self.w.size))],
                    [sp.csr_matrix((self.w.size, nf)), dt**2 / 4 * sp.diags(o.M_gamma * dgdw)],
                ],
                format="csc",
            )
            v = v - spla.splu(Jmat.tocsc()).solve(F)
        raise StepFailure(
            "nonlinear midpoint solve diverged (fixed point then Newton)",
            iter_trace + newton_trace,
        )

    def _commit(self, dt: float, y_bar, z_bar):
        o = self.ops
        w_old = self.w.copy()
        z_old = self.z.copy()
        self.u = self.u + dt * y_bar
        self.w = self.w + dt * z_bar
        self.y = 2.0 * y_bar - self.y
        self.z = 2.0 * z_bar - self.z
        self.t += dt
        if self.cfg.scheme == "discrete_gradient":
            spec = _base_spec(self.source)
            Ha = np.asarray(spec.H(w_old), dtype=float)
            Hb = np.asarray(spec.H(self.w), dtype=float)
            self.source_work += float(np.dot(o.M_gamma, Hb - Ha))
        else:
            if self._h_end is None:
                self._h_end = _h_free(o, self.source, w_old)
            h_new = _h_free(o, self.source, self.w)
            self.source_work += dt / 2 * (
                float(np.dot(o.M_gamma * self._h_end, z_old))
                + float(np.dot(o.M_gamma * h_new, self.z))
            )
            self._h_end = h_new

    def _step_leapfrog(self, dt: float):
        o = self.ops
        w_old = self.w.copy()
        z_old = self.z.copy()
        g_old = _h_free(o, self.source, self.w)
        ay = (-(o.S @ self.u) + o.coupling @ self.z) / o.M_omega
        az = -(o.S_B @ self.w) / o.M_gamma - (o.Tr @ self.y) + g_old
        y_half = self.y + dt / 2 * ay
        z_half = self.z + dt / 2 * az
        self.u = self.u + dt * y_half
        self.w = self.w + dt * z_half
        g_new = _h_free(o, self.source, self.w)
        ay2 = (-(o.S @ self.u) + o.coupling @ z_half) / o.M_omega
        az2 = -(o.S_B @ self.w) / o.M_gamma - (o.Tr @ y_half) + g_new
        self.y = y_half + dt / 2 * ay2
        self.z = z_half + dt / 2 * az2
        self.t += dt
        self.source_work += dt / 2 * (
            float(np.dot(o.M_gamma * g_old, z_old)) + float(np.dot(o.M_gamma * g_new, self.z))
        )
        self._h_end = g_new


# ----------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------

def step(ops: DiscreteOperators, source, x: State, cfg: IntegratorConfig) -> State:
    """Advance one time step; see the module docstring for the schemes."""
    integ = TimeIntegrator(ops, source, cfg, x)
    integ.step()
    return integ.state()


def energy(ops: DiscreteOperators, source, x: State) -> EnergyReport:
    """Instantaneous energies of a state (audit fields zeroed: no history)."""
    return TimeIntegrator(ops, source, IntegratorConfig(), x).report()


@dataclass(frozen=True)
class TraceRecord:
    t: float
    energy: EnergyReport
    well: object | None = None  # potentialwell.WellAnalysis when observed


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    scheme: str = "implicit_midpoint"
    dt: float = 0.0
    n_steps: int = 0
    blow_up_suspect: bool = False
    blow_up_time: float | None = None

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def worst(self, attr: str) -> float:
        return max(abs(getattr(r.energy, attr)) for r in self.records)


def simulate(
    ops: DiscreteOperators,
    source,
    x0: State,
    cfg: IntegratorConfig,
    horizon: float,
    stride: int = 1,
    well_classifier: Callable[[State], object] | None = None,
    callbacks: Sequence[Callable[[State, EnergyReport], None]] = (),
) -> Trace:
    """Run the configured scheme over [t0, t0 + horizon], sampling every
    ``stride`` steps (plus the initial and final instants).

    Terminates early with a flagged partial trace if a field or source
    evaluation stops being finite (blow-up suspect).
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    integ = TimeIntegrator(ops, source, cfg, x0)
    n_steps = int(round(horizon / cfg.dt)) if horizon > 0 else 0
    trace = Trace(scheme=cfg.scheme, dt=cfg.dt, n_steps=n_steps)

    def observe():
        rep = integ.report()
        st = integ.state() if (well_classifier or callbacks) else None
        well = well_classifier(st) if well_classifier else None
        for cb in callbacks:
            cb(st, rep)
        trace.records.append(TraceRecord(t=integ.t, energy=rep, well=well))

    observe()
    for k in range(n_steps):
        try:
            integ.step()
        except BlowUpSuspect:
            trace.blow_up_suspect = True
            trace.blow_up_time = integ.t
            trace.n_steps = k
            break
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            observe()
    return trace


# ----------------------------------------------------------------------
# local existence, growth envelopes, continuous dependence
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LocalExistence:
    """Truncation radius and guaranteed existence horizon for one start.

    K        truncation radius, K^2 = 4 E(0) + 1
    T0       min( 1/(4 C0), log(2)/C1 ), with 1/(4*0) read as +inf
    L_K      max |h'| over |s| <= c_emb * K (global Lipschitz bound of the
             truncated source, via the measured sup embedding)
    C0       |h(0)|^2 * |Gamma|
    C1       max(2 L_K^2, 1)
    """

    K: float
    T0: float
    L_K: float
    C0: float
    C1: float
    sup_bound: float


def local_existence_time(source: SourceSpec, E0: float, constants: GridConstants) -> LocalExistence:
    if E0 < 0:
        raise ValueError("E0 must be nonnegative")
    K = math.sqrt(4.0 * E0 + 1.0)
    sup_bound = constants.embedding_plate * K
    L_K = lipschitz_bound(source, sup_bound)
    C0 = abs(float(source.h(0.0))) ** 2 * constants.gamma_measure
    C1 = max(2.0 * L_K**2, 1.0)
    t_source = math.inf if C0 == 0 else 1.0 / (4.0 * C0)
    T0 = min(t_source, math.log(2.0) / C1)
    return LocalExistence(K=K, T0=T0, L_K=L_K, C0=C0, C1=C1, sup_bound=sup_bound)


def gronwall_envelope_constant(c: float, constants: GridConstants) -> float:
    """Envelope constant for linear-growth sources, retracing the a priori
    estimate: the source work is split by Young's inequality, |h(w)|^2 is
    bounded through |w|_2 <= C_P |Lap w|_2 <= C_P sqrt(2E), giving
    E' <= C E + C with C = max(2 c^2 C_P^2 + 1, c^2 |Gamma|)."""
    if c <= 0:
        raise ValueError("linear growth constant must be positive")
    cp = constants.poincare_plate
    return max(2.0 * c**2 * cp**2 + 1.0, c**2 * constants.gamma_measure)


@dataclass(frozen=True)
class GronwallResult:
    passed: bool
    min_margin: float
    C: float


def gronwall_check(trace: Trace, c: float, C: float) -> GronwallResult:
    """Check E(t) <= (E(0) + C t) e^{C t} pointwise on the trace."""
    E0 = trace.records[0].energy.E
    margin = math.inf
    for rec in trace.records:
        envelope = (E0 + C * rec.t) * math.exp(C * rec.t)
        margin = min(margin, envelope - rec.energy.E)
    return GronwallResult(passed=margin > 0 and not trace.blow_up_suspect,
                          min_margin=margin, C=C)


@dataclass(frozen=True)
class ContinuousDependenceResult:
    ratio: float
    K: float
    C_K: float
    E_tilde0: float
    sup_E_tilde: float


def continuous_dependence_check(
    ops: DiscreteOperators,
    source,
    x0: State,
    epsilon: float,
    cfg: IntegratorConfig,
    T0: float,
    seed: int = 0,
) -> ContinuousDependenceResult:
    """Paired runs from x0 and a seeded perturbation of H-norm epsilon.

    Returns sup_t E~(t) / (E~(0) e^{C(K) T0}) with E~ the difference
    energy; the envelope constant C(K) = max(2 L_K^2, 1) dominates the
    Lipschitz constant entering the difference-energy estimate.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    base = TimeIntegrator(ops, source, cfg, x0)
    rng = np.random.default_rng(seed)
    du = rng.standard_normal(ops.free_chamber.size)
    dw = rng.standard_normal(ops.free_plate.size)
    dy = rng.standard_normal(ops.free_chamber.size)
    dz = rng.standard_normal(ops.free_plate.size)
    nrm = math.sqrt(
        du @ (ops.S @ du) + dw @ (ops.S_B @ dw) + dy @ (ops.M_omega * dy) + dz @ (ops.M_gamma * dz)
    )
    s = epsilon / nrm if nrm > 0 else 0.0
    pert = state_from_free(
        ops,
        ops.chamber_free(x0.u) + s * du,
        ops.plate_free(x0.w) + s * dw,
        ops.chamber_free(x0.ut) + s * dy,
        ops.plate_free(x0.wt) + s * dz,
        x0.t,
    )
    other = TimeIntegrator(ops, source, cfg, pert)

    def diff_energy() -> float:
        eu = base.u - other.u
        ew = base.w - other.w
        ey = base.y - other.y
        ez = base.z - other.z
        return 0.5 * (
            eu @ (ops.S @ eu) + ew @ (ops.S_B @ ew)
            + ey @ (ops.M_omega * ey) + ez @ (ops.M_gamma * ez)
        )

    Et0 = diff_energy()
    if Et0 == 0.0:
        le = local_existence_time(_base_spec(source), base.E0, ops.constants())
        return ContinuousDependenceResult(0.0, le.K, max(2 * le.L_K**2, 1.0), 0.0, 0.0)
    K = math.sqrt(4.0 * max(base.E0, other.E0) + 1.0)
    L_K = lipschitz_bound(_base_spec(source), ops.constants().embedding_plate * K)
    C_K = max(2.0 * L_K**2, 1.0)
    n = max(1, int(round(T0 / cfg.dt)))
    dt = T0 / n
    sup = Et0
    for _ in range(n):
        base.step(dt)
        other.step(dt)
        sup = max(sup, diff_energy())
    return ContinuousDependenceResult(
        ratio=sup / (Et0 * math.exp(C_K * T0)),
        K=K,
        C_K=C_K,
        E_tilde0=Et0,
        sup_E_tilde=sup,
    )


@dataclass(frozen=True)
class TruncationResult:
    passed: bool
    K: float
    T0: float
    sup_state_diff: float
    max_E: float
    energy_bound_ok: bool


def truncation_consistency_check(
    ops: DiscreteOperators, source: SourceSpec, x0: State, cfg: IntegratorConfig
) -> TruncationResult:
    """Run the plain and truncated sources side by side on [0, T0].

    With K^2 = 4 E(0) + 1 the trajectory must stay inside the truncation
    ball (E <= K^2/2), so the truncation never activates and the two
    trajectories agree to solver roundoff.
    """
    from .sources import truncate

    base = TimeIntegrator(ops, source, cfg, x0)
    le = local_existence_time(source, base.E0, ops.constants())
    trunc_source = truncate(source, le.K, ops)
    trunc = TimeIntegrator(ops, trunc_source, cfg, x0)
    n = max(1, math.ceil(le.T0 / cfg.dt))
    dt = le.T0 / n
    sup_diff = 0.0
    max_E = max(base.E0, trunc.E0)
    for _ in range(n):
        base.step(dt)
        trunc.step(dt)
        for a, b in ((base.u, trunc.u), (base.w, trunc.w), (base.y, trunc.y), (base.z, trunc.z)):
            d = float(np.max(np.abs(a - b))) if a.size else 0.0
            sup_diff = max(sup_diff, d)
        max_E = max(max_E, trunc._energy())
    ok_energy = max_E <= le.K**2 / 2
    return TruncationResult(
        passed=sup_diff <= 1e-12 and ok_energy,
        K=le.K,
        T0=le.T0,
        sup_state_diff=sup_diff,
        max_E=max_E,
        energy_bound_ok=ok_energy,
    )
