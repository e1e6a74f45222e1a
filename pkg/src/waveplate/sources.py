"""Scalar plate sources: evaluation, truncation, and structural checks.

A source is the scalar function h acting pointwise on the wall displacement
(a Nemytskii operator), bundled with its antiderivative H (H(0) = 0), its
derivative h', and the structural metadata the analysis layers key off:
the superlinearity exponent ``theta`` (0 < theta*H(s) < h(s)*s away from 0)
and/or a linear growth constant c (|h(s)| <= c*(|s|+1)).

The truncated source retracts its argument onto the bending-seminorm ball
of radius K before evaluating, which globalizes the Lipschitz property; on
fields already inside the ball it is bit-identical to the plain source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .mesh import GridFunction
from .operators import DiscreteOperators

__all__ = [
    "SourceSpec",
    "TruncatedSource",
    "BlowUpSuspect",
    "SourceParameterError",
    "builtin",
    "scale_source",
    "eval_source_field",
    "eval_truncated",
    "truncate",
    "ar_conditions_report",
    "ARConditionResult",
    "ARReport",
    "lipschitz_bound",
    "derivative_defect",
]


class SourceParameterError(ValueError):
    """Invalid builtin-source parameters."""


class BlowUpSuspect(RuntimeError):
    """A field evaluation overflowed; the trajectory is a blow-up suspect."""

    def __init__(self, message: str, node: int | None = None, t: float | None = None,
                 energy: float | None = None):
        super().__init__(message)
        self.node = node
        self.t = t
        self.energy = energy


def derivative_defect(f: Callable, fp: Callable, s: float) -> float:
    """Relative defect of fp against a Richardson-extrapolated central
    difference of f at s (the derivative oracle used by the validity checks)."""
    h = 1e-4 * (1.0 + abs(s))
    d1 = (f(s + h) - f(s - h)) / (2 * h)
    d2 = (f(s + h / 2) - f(s - h / 2)) / h
    est = (4 * d2 - d1) / 3.0
    ref = fp(s)
    denom = max(abs(ref), abs(est), 1e-12)
    return abs(est - ref) / denom


@dataclass(frozen=True)
class SourceSpec:
    """Scalar source h with antiderivative H, derivative h', and metadata.

    All three callables must accept and return numpy arrays (elementwise).
    ``theta`` > 2 marks a superlinear (Ambrosetti-Rabinowitz) source;
    ``linear_growth_c`` > 0 marks linear growth |h(s)| <= c*(|s|+1).
    """

    h: Callable
    H: Callable
    h_prime: Callable
    theta: float | None = None
    linear_growth_c: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.theta is not None and self.theta <= 2:
            raise SourceParameterError("theta must exceed 2")
        if self.linear_growth_c is not None and self.linear_growth_c <= 0:
            raise SourceParameterError("linear_growth_c must be positive")
        if abs(float(self.H(0.0))) > 1e-14:
            raise SourceParameterError("H(0) must be 0")
        if self.theta is not None and abs(float(self.h(0.0))) > 1e-14:
            raise SourceParameterError("superlinear sources must have h(0) = 0")
        for s in (-1.7, -0.4, 0.3, 1.1):
            if derivative_defect(self.h, self.h_prime, s) > 1e-6:
                raise SourceParameterError(f"h_prime is not the derivative of h near s={s}")
            if derivative_defect(self.H, self.h, s) > 1e-6:
                raise SourceParameterError(f"h is not the derivative of H near s={s}")


@dataclass(frozen=True)
class TruncatedSource:
    """Radial retraction of a source to the bending ball |Lap_h w|_2 <= K."""

    base: SourceSpec
    K: float
    seminorm: Callable[[GridFunction], float]

    def __post_init__(self):
        if self.K <= 0:
            raise SourceParameterError("truncation radius K must be positive")


def truncate(base: SourceSpec, K: float, ops: DiscreteOperators) -> TruncatedSource:
    return TruncatedSource(base=base, K=K, seminorm=ops.plate_h2_seminorm)


def _apply_pointwise(fn: Callable, w: GridFunction, what: str) -> GridFunction:
    out = np.asarray(fn(w.values), dtype=float)
    if not np.all(np.isfinite(out)):
        node = int(np.flatnonzero(~np.isfinite(out))[0])
        raise BlowUpSuspect(f"non-finite {what} value at node {node}", node=node)
    return GridFunction(grid=w.grid, values=out)


def eval_source_field(s: SourceSpec, w: GridFunction) -> GridFunction:
    """Pointwise application h(w(x)) at the wall nodes."""
    return _apply_pointwise(s.h, w, f"source {s.name}")


def eval_truncated(t: TruncatedSource, w: GridFunction) -> GridFunction:
    """Truncated evaluation: identical inside the ball, retracted outside."""
    r = t.seminorm(w)
    if r <= t.K:
        return eval_source_field(t.base, w)
    shrunk = GridFunction(grid=w.grid, values=w.values * (t.K / r))
    return eval_source_field(t.base, shrunk)


# ----------------------------------------------------------------------
# builtin families
# ----------------------------------------------------------------------

def _exp_power_H_factory(p: float, q: float, coeff: float = 1.0) -> Callable:
    """Antiderivative of coeff * e^{|s|^q} |s|^p s.

    With x = |s|^q and a = (p+2)/q,
        H(s) = (coeff/q) * int_0^x e^t t^(a-1) dt
             = (coeff/q) * sum_k x^(a+k) / (k! (a+k)),
    summed to machine precision (entire function of x).
    """
    a = (p + 2.0) / q

    def H(s):
        s = np.asarray(s, dtype=float)
        x = np.abs(s) ** q
        with np.errstate(over="ignore", invalid="ignore"):
            term = x**a / a
            total = term.copy()
            k = 0
            active = np.isfinite(term) & (x > 0)
            while np.any(active) and k < 10_000:
                k += 1
                term = term * x * (a + k - 1) / (k * (a + k))
                total = np.where(active, total + term, total)
                active = active & np.isfinite(term) & (np.abs(term) > 1e-17 * np.abs(total))
            total = np.where(x == 0, 0.0, total)
        return (coeff / q) * total if s.ndim else float((coeff / q) * total)

    return H


def _double_exp_H_factory(p: float, coeff: float = 1.0) -> Callable:
    """Antiderivative of coeff * e^{e^{|s|}} |s|^p s by adaptive quadrature."""
    from scipy.integrate import quad

    def _scalar(x: float) -> float:
        if x == 0.0:
            return 0.0
        val, _ = quad(lambda t: math.exp(math.exp(t)) * t ** (p + 1), 0.0, abs(x),
                      epsabs=0.0, epsrel=1e-11, limit=200)
        return coeff * val

    def H(s):
        s = np.asarray(s, dtype=float)
        if s.ndim == 0:
            return _scalar(float(s))
        return np.array([_scalar(v) for v in s.ravel()]).reshape(s.shape)

    return H


def builtin(name: str, **params) -> SourceSpec:
    """Construct a builtin source family.

    power{p, coeff=1}      h(s) = coeff |s|^(p-1) s        (p >= 1)
    exp_power{p, q}        h(s) = e^{|s|^q} |s|^p s        (p, q > 0)
    double_exp{p}          h(s) = e^{e^{|s|}} |s|^p s      (p > 0)
    linear{c}              h(s) = c s                      (c > 0)
    zero                   h = 0
    """
    known = {"power", "exp_power", "double_exp", "linear", "zero"}
    if name not in known:
        raise SourceParameterError(f"unknown source {name!r}; expected one of {sorted(known)}")

    def _pop(key, default=None, required=False):
        if required and key not in params:
            raise SourceParameterError(f"source {name!r} requires parameter {key!r}")
        return params.pop(key, default)

    theta_override = _pop("theta")
    if name == "power":
        p = float(_pop("p", required=True))
        coeff = float(_pop("coeff", 1.0))
        if p < 1 or coeff <= 0:
            raise SourceParameterError("power source needs p >= 1 and coeff > 0")
        h = lambda s: coeff * np.abs(s) ** (p - 1) * s
        H = lambda s: coeff * np.abs(s) ** (p + 1) / (p + 1)
        hp = lambda s: coeff * p * np.abs(s) ** (p - 1)
        # theta must lie strictly inside (2, p+1); midpoint by default
        theta = (p + 3.0) / 2.0 if p > 1 else None
        lin = coeff if p == 1 else None
        spec = SourceSpec(h=h, H=H, h_prime=hp, theta=theta, linear_growth_c=lin,
                          name=f"power(p={p:g})", params={"p": p, "coeff": coeff})
    elif name == "exp_power":
        p = float(_pop("p", required=True))
        q = float(_pop("q", required=True))
        if p <= 0 or q <= 0:
            raise SourceParameterError("exp_power source needs p, q > 0")
        h = lambda s: np.exp(np.abs(s) ** q) * np.abs(s) ** p * s
        hp = lambda s: np.exp(np.abs(s) ** q) * np.abs(s) ** p * (q * np.abs(s) ** q + p + 1)
        spec = SourceSpec(h=h, H=_exp_power_H_factory(p, q), h_prime=hp, theta=p + 2.0,
                          name=f"exp_power(p={p:g},q={q:g})", params={"p": p, "q": q})
    elif name == "double_exp":
        p = float(_pop("p", required=True))
        if p <= 0:
            raise SourceParameterError("double_exp source needs p > 0")
        h = lambda s: np.exp(np.exp(np.abs(s))) * np.abs(s) ** p * s
        hp = lambda s: np.exp(np.exp(np.abs(s))) * np.abs(s) ** p * (
            np.exp(np.abs(s)) * np.abs(s) + p + 1
        )
        spec = SourceSpec(h=h, H=_double_exp_H_factory(p), h_prime=hp, theta=p + 2.0,
                          name=f"double_exp(p={p:g})", params={"p": p})
    elif name == "linear":
        c = float(_pop("c", 1.0))
        if c <= 0:
            raise SourceParameterError("linear source needs c > 0")
        spec = SourceSpec(h=lambda s: c * np.asarray(s, dtype=float),
                          H=lambda s: c * np.asarray(s, dtype=float) ** 2 / 2,
                          h_prime=lambda s: c * np.ones_like(np.asarray(s, dtype=float)),
                          linear_growth_c=c, name=f"linear(c={c:g})", params={"c": c})
    else:  # zero
        spec = SourceSpec(h=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                          H=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                          h_prime=lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                          linear_growth_c=1.0, name="zero", params={})
    if params:
        raise SourceParameterError(f"unknown parameters for {name!r}: {sorted(params)}")
    if theta_override is not None:
        spec = replace(spec, theta=float(theta_override))
    return spec


def scale_source(s: SourceSpec, factor: float) -> SourceSpec:
    """The source factor*h, with H and h' scaled consistently."""
    if factor <= 0:
        raise SourceParameterError("scale factor must be positive")
    return SourceSpec(
        h=lambda x: factor * np.asarray(s.h(x)),
        H=lambda x: factor * np.asarray(s.H(x)),
        h_prime=lambda x: factor * np.asarray(s.h_prime(x)),
        theta=s.theta,
        linear_growth_c=None if s.linear_growth_c is None else factor * s.linear_growth_c,
        name=f"{factor:g}*{s.name}",
        params=dict(s.params),
    )


# ----------------------------------------------------------------------
# structural checks
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ARConditionResult:
    passed: bool
    witness: float | None
    detail: str


@dataclass(frozen=True)
class ARReport:
    conditions: tuple[ARConditionResult, ...]
    negative_h_flag: bool  # h(|s|) < 0 somewhere: condition (2) is ill-posed there

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions)


def ar_conditions_report(s: SourceSpec, sample_range: tuple[float, float],
                         samples: int = 200) -> ARReport:
    """Numerically check the four superlinearity conditions on a sample grid.

    (1) 0 < theta*H(s) < h(s)*s for s != 0
    (2) |h(s)| <= h(|s|)
    (3) h nondecreasing on (0, inf)
    (4) h(s)/s -> 0+ as s -> 0+, proxied by monotone decay of the ratio
        along a geometric sequence decreasing to 0.

    The limit check (4) is a necessary-not-sufficient finite proxy.
    """
    if s.theta is None:
        raise SourceParameterError("source has no theta; superlinearity checks need one")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    lo, hi = sample_range
    pts = np.linspace(lo, hi, samples)
    pts = pts[pts != 0.0]
    hv = np.asarray(s.h(pts), dtype=float)
    Hv = np.asarray(s.H(pts), dtype=float)
    theta = s.theta

    def first_witness(mask) -> float | None:
        bad = np.flatnonzero(mask)
        return float(pts[bad[0]]) if bad.size else None

    bad1 = ~((theta * Hv > 0) & (theta * Hv < hv * pts))
    c1 = ARConditionResult(not bad1.any(), first_witness(bad1),
                           "0 < theta*H(s) < h(s)*s")

    pos = np.abs(pts)
    h_abs = np.asarray(s.h(pos), dtype=float)
    neg_flag = bool((h_abs < 0).any())
    bad2 = np.abs(hv) > h_abs * (1 + 1e-12) + 1e-300
    c2 = ARConditionResult(not bad2.any(), first_witness(bad2), "|h(s)| <= h(|s|)")

    ppos = np.sort(np.unique(pos))
    hpos = np.asarray(s.h(ppos), dtype=float)
    drops = np.flatnonzero(np.diff(hpos) < -1e-12 * np.maximum(np.abs(hpos[:-1]), 1.0))
    c3 = ARConditionResult(drops.size == 0,
                           float(ppos[drops[0] + 1]) if drops.size else None,
                           "h nondecreasing on (0, inf)")

    seq = min(1.0, abs(hi)) * 0.5 ** np.arange(0, 30)
    ratio = np.asarray(s.h(seq), dtype=float) / seq
    grow = np.flatnonzero(np.diff(ratio) > 1e-12 * np.maximum(np.abs(ratio[:-1]), 1e-300))
    positive = bool((ratio > -1e-300).all())
    c4 = ARConditionResult(grow.size == 0 and positive,
                           float(seq[grow[0] + 1]) if grow.size else
                           (float(seq[np.argmax(ratio <= -1e-300)]) if not positive else None),
                           "h(s)/s decays monotonically to 0+ along s = s0*2^-k")

    return ARReport(conditions=(c1, c2, c3, c4), negative_h_flag=neg_flag)


def lipschitz_bound(s: SourceSpec, radius: float, samples: int = 4097) -> float:
    """max |h'(t)| over |t| <= radius, by dense sampling with local refinement."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0:
        return float(abs(s.h_prime(0.0)))
    pts = np.linspace(-radius, radius, samples)
    vals = np.abs(np.asarray(s.h_prime(pts), dtype=float))
    k = int(np.argmax(vals))
    lo = pts[max(k - 1, 0)]
    hi = pts[min(k + 1, samples - 1)]
    fine = np.linspace(lo, hi, 257)
    return float(max(vals[k], np.max(np.abs(np.asarray(s.h_prime(fine), dtype=float)))))
