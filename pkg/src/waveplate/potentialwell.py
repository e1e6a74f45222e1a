"""Potential-well functionals, depth search, and region classification.

For a superlinear source with exponent theta the stationary functional

    J(u, w) = (||grad u||^2 + |Lap w|^2)/2 - int_Gamma H(w)

has a mountain-pass geometry.  Nonzero pairs where the elastic energy
exactly balances int h(w) w form the constraint manifold; the well depth is
the infimum of J over it.  Rays t -> t*(u, w) with w != 0 cross the
manifold exactly once for such sources, so the depth can be estimated by
minimizing J(lambda*(v) v) over direction candidates v, here a truncated
basis of low bending eigenmodes (optionally augmented with chamber modes;
minimizing sequences push the chamber component to zero, so the default
searches w only).

The reported depth is an upper bound of the discrete depth; the
positivity certificate supplies the matching lower-bound structure:
every constrained pair satisfies y = ||(u,w)||_V >= c0 where c0 solves
h(C y)/(C y) = 1/(C^2 |Gamma|) with C the measured sup embedding constant,
whence depth >= (1/2 - 1/theta) c0^2 > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import State, Trace
from .mesh import GridFunction
from .operators import DiscreteOperators
from .sources import SourceParameterError, SourceSpec, TruncatedSource

__all__ = [
    "WellAnalysis",
    "NoNehariCrossingError",
    "functional_J",
    "nehari_value",
    "nehari_scaling",
    "DepthSearchConfig",
    "DepthResult",
    "PositivityCertificate",
    "depth_estimate",
    "classify",
    "make_well_classifier",
    "well_invariance_check",
    "InvarianceResult",
]

ON_MANIFOLD_BAND = 1e-8


class NoNehariCrossingError(RuntimeError):
    """No sign change of the ray functional within the expansion budget."""


def _spec(source) -> SourceSpec:
    return source.base if isinstance(source, TruncatedSource) else source


def _int_hw(ops: DiscreteOperators, spec: SourceSpec, w: np.ndarray) -> float:
    """Quadrature of int_Gamma h(w) w over the wall (inf on overflow)."""
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.asarray(spec.h(w), dtype=float) * w
    if not np.all(np.isfinite(vals)):
        return math.inf
    return float(np.dot(ops.M_gamma, vals))


def _int_H(ops: DiscreteOperators, spec: SourceSpec, w: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.asarray(spec.H(w), dtype=float)
    if not np.all(np.isfinite(vals)):
        return math.inf
    return float(np.dot(ops.M_gamma, vals))


def functional_J(ops: DiscreteOperators, source, u: GridFunction, w: GridFunction) -> float:
    """Stationary (potential) energy of the pair (u, w)."""
    uf, wf = ops.chamber_free(u), ops.plate_free(w)
    elastic = 0.5 * (uf @ (ops.S @ uf) + wf @ (ops.S_B @ wf))
    return elastic - _int_H(ops, _spec(source), wf)


def nehari_value(ops: DiscreteOperators, source, u: GridFunction, w: GridFunction) -> float:
    """||grad u||^2 + |Lap w|^2 - int h(w) w; zero marks the constraint manifold."""
    uf, wf = ops.chamber_free(u), ops.plate_free(w)
    return uf @ (ops.S @ uf) + wf @ (ops.S_B @ wf) - _int_hw(ops, _spec(source), wf)


def _ray_g(ops, spec, N: float, w: np.ndarray, lam: float) -> float:
    return lam * lam * N - _int_hw(ops, spec, lam * w)


def _scaling_free(ops, spec, N: float, w: np.ndarray, max_doublings: int = 200) -> float:
    """Positive root of g(lam) = lam^2 N - int h(lam w) lam w on the ray."""
    if N <= 0 or not np.any(w != 0.0):
        raise ValueError("scaling needs a direction with nonzero wall component")
    hi = 1.0
    g_hi = _ray_g(ops, spec, N, w, hi)
    budget = max_doublings
    while g_hi > 0:
        hi *= 2.0
        g_hi = _ray_g(ops, spec, N, w, hi)
        budget -= 1
        if budget == 0:
            raise NoNehariCrossingError(
                "ray functional stayed positive; source may not be superlinear"
            )
    lo = hi / 2.0
    g_lo = _ray_g(ops, spec, N, w, lo)
    budget = max_doublings
    while g_lo < 0:
        lo /= 2.0
        g_lo = _ray_g(ops, spec, N, w, lo)
        budget -= 1
        if budget == 0:
            raise NoNehariCrossingError("ray functional stayed negative toward 0")
    if g_lo == 0.0:
        return lo
    if g_hi == 0.0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        g_mid = _ray_g(ops, spec, N, w, mid)
        if g_mid > 0:
            lo = mid
        elif g_mid < 0:
            hi = mid
        else:
            return mid
        if (hi - lo) <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def nehari_scaling(ops: DiscreteOperators, source, u: GridFunction, w: GridFunction) -> float:
    """lambda* > 0 placing lambda*(u, w) on the constraint manifold.

    Bracketed bisection on the ray functional, expanded geometrically until
    a sign change; relative tolerance ~1e-15 (bisected to the float grid).
    """
    uf, wf = ops.chamber_free(u), ops.plate_free(w)
    if not np.any(wf != 0.0):
        raise ValueError("nehari scaling needs w != 0")
    N = float(uf @ (ops.S @ uf) + wf @ (ops.S_B @ wf))
    return _scaling_free(ops, _spec(source), N, wf)


@dataclass(frozen=True)
class PositivityCertificate:
    """Lower-bound structure for the well depth.

    Any constrained pair has V-norm at least c0, the smallest y > 0 with
    h(C_emb y)/(C_emb y) >= 1/(C_emb^2 |Gamma|); therefore the depth is at
    least (1/2 - 1/theta) c0^2 > 0.
    """

    c0: float
    theta: float
    lower_bound: float
    embedding_constant: float
    gamma_measure: float


def positivity_certificate(ops: DiscreteOperators, source) -> PositivityCertificate:
    spec = _spec(source)
    if spec.theta is None:
        raise SourceParameterError("positivity certificate needs theta metadata")
    C = ops.constants().embedding_plate
    area = ops.constants().gamma_measure
    thresh = 1.0 / (C * C * area)

    def psi(y: float) -> float:
        s = C * y
        return float(spec.h(s)) / s - thresh

    hi = 1.0
    budget = 200
    while psi(hi) < 0:
        hi *= 2.0
        budget -= 1
        if budget == 0:
            raise NoNehariCrossingError("h(s)/s never reaches the manifold threshold")
    # walk down geometrically to the lowest bracketed crossing
    lo = hi
    while lo > 1e-280 and psi(lo / 2.0) >= 0:
        lo /= 2.0
    lo = lo / 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if psi(mid) >= 0:
            hi = mid
        else:
            lo = mid
    c0 = hi
    return PositivityCertificate(
        c0=c0,
        theta=spec.theta,
        lower_bound=(0.5 - 1.0 / spec.theta) * c0 * c0,
        embedding_constant=C,
        gamma_measure=area,
    )


@dataclass(frozen=True)
class DepthSearchConfig:
    modes: int = 16
    restarts: int = 4
    max_sweeps: int = 40
    include_chamber: bool = False
    coordinate_span: float = 2.0
    ftol: float = 1e-11


@dataclass(frozen=True)
class DepthResult:
    d_hat: float
    direction_w: GridFunction | None
    direction_u: GridFunction | None
    lambda_star: float
    certificate: PositivityCertificate | None
    status: str  # converged | budget_exhausted | no_crossing
    evaluations: int


def depth_estimate(
    ops: DiscreteOperators,
    source,
    search: DepthSearchConfig | None = None,
    seed: int = 0,
) -> DepthResult:
    """Upper-bound estimate of the well depth by ray-scaled minimization.

    Coordinate descent over eigenmode coefficients with seeded random
    restarts (restart 0 is always the lowest bending mode); deterministic
    given the seed.  If no direction crosses the manifold (h = 0 or
    subquadratic growth), the depth is reported as +inf.
    """
    spec = _spec(source)
    if spec.theta is None:
        raise SourceParameterError("depth search needs theta metadata")
    cfg = search or DepthSearchConfig()
    plate_vals, plate_modes = ops.eigenmodes_plate(cfg.modes)
    if cfg.include_chamber:
        cham_vals, cham_modes = ops.eigenmodes_chamber(cfg.modes)
    n_plate = cfg.modes
    n_coeff = n_plate + (cfg.modes if cfg.include_chamber else 0)
    evaluations = 0

    def split(c):
        return c[:n_plate], c[n_plate:]

    def objective(c: np.ndarray) -> tuple[float, float]:
        nonlocal evaluations
        evaluations += 1
        cw, cu = split(c)
        if not np.any(cw != 0.0):
            return math.inf, math.nan
        w = plate_modes @ cw
        N = float(cw @ (plate_vals * cw))
        if cfg.include_chamber and cu.size:
            N += float(cu @ (cham_vals * cu))
        try:
            lam = _scaling_free(ops, spec, N, w)
        except NoNehariCrossingError:
            return math.inf, math.nan
        val = 0.5 * lam * lam * N - _int_H(ops, spec, lam * w)
        return val, lam

    def line_min(c, k, span):
        """Golden-section minimization of the objective along coordinate k."""
        gr = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = c[k] - span, c[k] + span

        def f(t):
            c2 = c.copy()
            c2[k] = t
            return objective(c2)[0]

        x1 = b - gr * (b - a)
        x2 = a + gr * (b - a)
        f1, f2 = f(x1), f(x2)
        for _ in range(40):
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - gr * (b - a)
                f1 = f(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + gr * (b - a)
                f2 = f(x2)
        t = x1 if f1 <= f2 else x2
        return t, min(f1, f2)

    rng = np.random.default_rng(seed)
    best_val = math.inf
    best_c = None
    best_lam = math.nan
    exhausted = False
    any_finite = False
    for restart in range(cfg.restarts):
        c = np.zeros(n_coeff)
        if restart == 0:
            c[0] = 1.0
        else:
            c = rng.standard_normal(n_coeff)
            if not cfg.include_chamber:
                pass
        val, lam = objective(c)
        if not math.isfinite(val):
            continue
        any_finite = True
        converged = False
        for sweep in range(cfg.max_sweeps):
            improved = 0.0
            for k in range(n_coeff):
                scale = max(1.0, float(np.max(np.abs(c))))
                t, fv = line_min(c, k, cfg.coordinate_span * scale)
                if fv < val:
                    improved += val - fv
                    c[k] = t
                    val = fv
            nrm = float(np.linalg.norm(c))
            if nrm > 0:
                c /= nrm
                val, lam = objective(c)
            if improved <= cfg.ftol * max(1.0, abs(val)):
                converged = True
                break
        if not converged:
            exhausted = True
        if val < best_val:
            best_val, best_lam = val, objective(c)[1]
            best_c = c.copy()
    if not any_finite:
        return DepthResult(
            d_hat=math.inf, direction_w=None, direction_u=None, lambda_star=math.nan,
            certificate=None, status="no_crossing", evaluations=evaluations,
        )
    cw, cu = split(best_c)
    w_dir = ops.plate_field(plate_modes @ cw)
    u_dir = ops.chamber_field(cham_modes @ cu) if cfg.include_chamber else None
    return DepthResult(
        d_hat=best_val,
        direction_w=w_dir,
        direction_u=u_dir,
        lambda_star=best_lam,
        certificate=positivity_certificate(ops, source),
        status="budget_exhausted" if exhausted else "converged",
        evaluations=evaluations,
    )


@dataclass(frozen=True)
class WellAnalysis:
    """Region classification of one state against the current depth estimate."""

    J: float
    nehari: float
    region: str  # W1 | W2 | on_N | outside_W
    d_hat: float
    bound: float  # theta d_hat / (theta - 2)


def classify(ops: DiscreteOperators, source, x: State, d_hat: float) -> WellAnalysis:
    """Classify a state: W1/W2 inside the well, on_N within the tolerance
    band |nehari| <= 1e-8 max(||(u,w)||_V^2, 1), outside_W at or above d_hat.
    The zero state is W1 by convention."""
    spec = _spec(source)
    if spec.theta is None:
        raise SourceParameterError("classification needs theta metadata")
    if not d_hat > 0:
        raise ValueError("classification needs a positive depth estimate")
    uf, wf = ops.chamber_free(x.u), ops.plate_free(x.w)
    norm2 = float(uf @ (ops.S @ uf) + wf @ (ops.S_B @ wf))
    J = 0.5 * norm2 - _int_H(ops, spec, wf)
    nehari = norm2 - _int_hw(ops, spec, wf)
    bound = spec.theta * d_hat / (spec.theta - 2.0) if math.isfinite(d_hat) else math.inf
    if norm2 == 0.0:
        region = "W1"
    elif J >= d_hat:
        region = "outside_W"
    elif abs(nehari) <= ON_MANIFOLD_BAND * max(norm2, 1.0):
        region = "on_N"
    elif nehari > 0:
        region = "W1"
    else:
        region = "W2"
    return WellAnalysis(J=J, nehari=nehari, region=region, d_hat=d_hat, bound=bound)


def make_well_classifier(ops: DiscreteOperators, source, d_hat: float) -> Callable[[State], WellAnalysis]:
    return lambda state: classify(ops, source, state, d_hat)


@dataclass(frozen=True)
class InvarianceResult:
    status: str  # pass | fail | exploratory
    first_violation: tuple[float, str] | None
    d_hat: float
    theta: float


def well_invariance_check(trace: Trace, d_hat: float, theta: float,
                          conservation_tol: float = 1e-8) -> InvarianceResult:
    """Check the invariance chain along a sampled trajectory.

    Requires initial region W1 with total energy below d_hat (otherwise the
    run is reported exploratory).  Each sampled record must stay in W1 and
    satisfy, within the scheme's conservation tolerance,
    J <= calE(t) = calE(0) < d_hat, E(t) < theta d_hat/(theta-2), and
    int H(w) < 2 d_hat/(theta-2).
    """
    first = trace.records[0]
    if first.well is None:
        raise ValueError("trace carries no well observations")
    calE0 = first.energy.calE
    if first.well.region != "W1" or not calE0 < d_hat:
        return InvarianceResult("exploratory", None, d_hat, theta)
    e_cap = theta * d_hat / (theta - 2.0)
    h_cap = 2.0 * d_hat / (theta - 2.0)
    tol = conservation_tol * max(1.0, abs(calE0))
    for rec in trace.records:
        if rec.well is None:
            continue
        t = rec.t
        en = rec.energy
        if rec.well.region != "W1":
            return InvarianceResult("fail", (t, f"region {rec.well.region}"), d_hat, theta)
        if abs(en.calE - calE0) > tol:
            return InvarianceResult("fail", (t, "total energy drifted"), d_hat, theta)
        if en.J > en.calE + 1e-12 * max(1.0, abs(en.calE)):
            return InvarianceResult("fail", (t, "J exceeds total energy"), d_hat, theta)
        if not en.E < e_cap:
            return InvarianceResult("fail", (t, "quadratic energy cap exceeded"), d_hat, theta)
        if not (en.E - en.calE) < h_cap:
            return InvarianceResult("fail", (t, "source potential cap exceeded"), d_hat, theta)
    return InvarianceResult("pass", None, d_hat, theta)
