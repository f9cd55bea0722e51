"""Radial supersolution barrier and verification of its inequalities.

The barrier chain: g(t) = t^(-2s); h caps the tangent-line gap of g at
r/2 into [0, 1]; v(x) = h(r - |x|) ramps from 0 on B_{r/2} to 1 outside
B_r; w rescales v by C_o = (C5/tau)^(1/2s) and maps its range onto
[beta - 1, 1] with beta = 32 r^(-2s).  C5 is measured, not assumed: it is
the sampled supremum of the positive part of the operator applied to v,
normalized by v + 16 r^(-2s).

h meets 0 at t = r/2 with zero slope (tangent-line construction), so the
only kink of v sits at the clamp radius where h reaches 1; the principal
value integrals place quadrature breakpoints there.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .lattice import Lattice

__all__ = [
    "R_MIN",
    "BarrierSpec",
    "Al1Report",
    "Al2Report",
    "eval_g",
    "eval_h",
    "eval_v",
    "eval_w",
    "estimate_C5",
    "verify_al1",
    "verify_al2",
    "profile_csv",
]

R_MIN = 50.0  # below this the large-r construction steps are not honest


def eval_g(t, s: float):
    """g(t) = t^(-2s), the convex decreasing profile the barrier is built on."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("g is defined for t > 0")
    out = arr ** (-2.0 * s)
    return float(out) if np.isscalar(t) else out


@lru_cache(maxsize=None)
def _h_params(r: float, s: float):
    # tangent data of g at r/2 and the clamp point t* where the gap hits 1
    a = (r / 2.0) ** (-2.0 * s)
    b = -2.0 * s * (r / 2.0) ** (-1.0 - 2.0 * s)
    gap = lambda t: t ** (-2.0 * s) - a - b * (t - r / 2.0) - 1.0
    t_star = brentq(gap, 1e-12 * r, r / 2.0, xtol=1e-14 * r)
    return a, b, t_star


def eval_h(t, r: float, s: float):
    """Tangent-line gap of g at r/2, clamped to [0, 1]; zero for t >= r/2.

    Continuous across r/2 (the gap and its slope both vanish there) and
    equal to 1 for t <= t*, the clamp point.  Values at t <= 0 continue
    the limit h = 1.
    """
    a, b, _ = _h_params(r, s)
    arr = np.asarray(t, dtype=float)
    pos = np.maximum(arr, 1e-300)
    with np.errstate(over="ignore"):
        gap = pos ** (-2.0 * s) - a - b * (pos - r / 2.0)
    out = np.where(arr >= r / 2.0, 0.0, np.minimum(1.0, gap))
    out = np.where(arr <= 0.0, 1.0, out)
    return float(out) if np.isscalar(t) else out


def eval_v(x, r: float, s: float):
    """Radial barrier core: v = h(r - |x|) inside B_r, 1 outside."""
    rho = np.abs(np.asarray(x, dtype=float))
    out = np.where(rho >= r, 1.0, eval_h(r - rho, r, s))
    return float(out) if np.isscalar(x) else out


def clamp_radius(r: float, s: float) -> float:
    """|x| below which v < 1: the single kink radius of v."""
    _, _, t_star = _h_params(r, s)
    return r - t_star


# -- principal value integrals ------------------------------------------------


def _pv_v_1d(x: float, r: float, s: float) -> float:
    # int over R of (v(y) - v(x)) |x-y|^(-(1+2s)) dy, paired rays:
    # int_0^inf [v(x+u) + v(x-u) - 2 v(x)] u^(-(1+2s)) du
    vx = eval_v(x, r, s)
    rho_star = clamp_radius(r, s)
    upper = abs(x) + r
    kinks = sorted(
        {abs(k - x) for k in (-rho_star, rho_star, -r / 2.0, r / 2.0, -r, r)}
        | {abs(k + x) for k in (rho_star, r / 2.0, r)}
    )
    pts = [p for p in kinks if 0.0 < p < upper]

    def f(u):
        return (eval_v(x + u, r, s) + eval_v(x - u, r, s) - 2.0 * vx) * u ** (-1.0 - 2.0 * s)

    val, _ = quad(f, 0.0, upper, points=pts or None, limit=300)
    # beyond upper both rays sit in {v = 1}
    tail = (2.0 - 2.0 * vx) * upper ** (-2.0 * s) / (2.0 * s)
    return val + tail


def _pv_v_2d(x: float, r: float, s: float, n_theta: int = 48) -> float:
    # polar around the evaluation point: the Jacobian u cancels one power,
    # leaving the 1d exponent; theta pairs rays at angle and angle + pi
    rho0 = abs(x)
    vx = eval_v(rho0, r, s)
    rho_star = clamp_radius(r, s)
    upper = rho0 + r
    nodes, weights = np.polynomial.legendre.leggauss(n_theta)
    thetas = 0.5 * math.pi * (nodes + 1.0)
    wts = 0.5 * math.pi * weights

    def crossings(c, radius):
        # u >= 0 with sqrt(rho0^2 + u^2 + 2 rho0 u c) = radius
        disc = (rho0 * c) ** 2 - (rho0**2 - radius**2)
        if disc < 0:
            return []
        root = math.sqrt(disc)
        return [u for u in (-rho0 * c - root, -rho0 * c + root) if 0.0 < u < upper]

    total = 0.0
    for theta, wt in zip(thetas, wts):
        c = math.cos(theta)

        def ray(u, cc):
            return np.sqrt(rho0 * rho0 + u * u + 2.0 * rho0 * u * cc)

        def f(u):
            return (
                eval_v(ray(u, c), r, s) + eval_v(ray(u, -c), r, s) - 2.0 * vx
            ) * u ** (-1.0 - 2.0 * s)

        pts = sorted(
            set(crossings(c, rho_star) + crossings(-c, rho_star)
                + crossings(c, r) + crossings(-c, r))
        )
        val, _ = quad(f, 0.0, upper, points=pts or None, limit=300)
        total += wt * (val + (2.0 - 2.0 * vx) * upper ** (-2.0 * s) / (2.0 * s))
    return total


def _pv_v(x: float, r: float, s: float, dim: int, n_theta: int = 48) -> float:
    if dim == 1:
        return _pv_v_1d(x, r, s)
    if dim == 2:
        return _pv_v_2d(x, r, s, n_theta)
    raise ValueError(f"dim must be 1 or 2, got {dim}")


def estimate_C5(
    s: float, r: float, sample_count: int = 256, dim: int = 1, theta_nodes: int = 48
) -> float:
    """Sampled supremum of the positive part of (operator v) / (v + 16 r^(-2s)).

    Samples the radii k r / N, k = 1..N, so doubling the count refines the
    same grid and the estimate is monotone nondecreasing in sample_count.
    """
    if r < R_MIN:
        raise ValueError(f"r must be >= {R_MIN}, got {r}")
    if sample_count < 1:
        raise ValueError(f"sample_count must be >= 1, got {sample_count}")
    floor = 16.0 * r ** (-2.0 * s)
    best = 0.0
    for k in range(1, sample_count + 1):
        x = r * k / sample_count
        num = max(_pv_v(x, r, s, dim, theta_nodes), 0.0)
        best = max(best, num / (eval_v(x, r, s) + floor))
    return best


# -- the assembled barrier ----------------------------------------------------


@dataclass(frozen=True)
class BarrierSpec:
    """Parameters of the rescaled barrier w.

    w(x) = (2 - beta) v(x / c_o) + beta - 1 with beta = 32 r^(-2s) and
    c_o = (c5 / tau)^(1/2s), so w runs from beta - 1 on B_{R/2} up to 1
    outside B_R, R = r c_o.
    """

    s: float
    tau: float
    r: float
    c5: float
    dim: int = 1

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.c5 <= 0.0:
            raise ValueError(f"c5 must be positive, got {self.c5}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.r < R_MIN:
            raise ValueError(
                f"inner scale r = {self.r} is below the minimum {R_MIN}"
            )
        if not 0.0 < self.beta < 1.0:
            raise ValueError(
                f"beta = 32 r^(-2s) = {self.beta} must lie in (0, 1); increase r"
            )

    @property
    def beta(self) -> float:
        return 32.0 * self.r ** (-2.0 * self.s)

    @property
    def c_o(self) -> float:
        return (self.c5 / self.tau) ** (1.0 / (2.0 * self.s))

    @property
    def big_r(self) -> float:
        """Outer radius R = r c_o beyond which w = 1."""
        return self.r * self.c_o

    @classmethod
    def from_scale(
        cls,
        s: float,
        tau: float,
        r: float,
        sample_count: int = 256,
        dim: int = 1,
    ) -> "BarrierSpec":
        """Build the barrier at inner scale r, measuring c5 there."""
        c5 = estimate_C5(s, r, sample_count, dim)
        return cls(s=s, tau=tau, r=r, c5=c5, dim=dim)

    @classmethod
    def from_outer_radius(
        cls, s: float, tau: float, big_r: float, c5: float, dim: int = 1
    ) -> "BarrierSpec":
        """Build from a prescribed outer radius and an already known c5."""
        c_o = (c5 / tau) ** (1.0 / (2.0 * s))
        return cls(s=s, tau=tau, r=big_r / c_o, c5=c5, dim=dim)

    def to_json(self) -> dict:
        return {
            "s": self.s,
            "tau": self.tau,
            "r": self.r,
            "c5": self.c5,
            "dim": self.dim,
            "beta": self.beta,
            "c_o": self.c_o,
            "big_r": self.big_r,
        }


def eval_w(spec: BarrierSpec, x):
    """The rescaled barrier at radius |x|."""
    rho = np.abs(np.asarray(x, dtype=float))
    v = eval_v(rho / spec.c_o, spec.r, spec.s)
    # where v saturates the affine map must return exactly 1, not a rounding of it
    out = np.where(v == 1.0, 1.0, (2.0 - spec.beta) * v + spec.beta - 1.0)
    return float(out) if np.isscalar(x) else out


def _pv_w(spec: BarrierSpec, x: float) -> float:
    # rescaling x -> x / c_o picks up c_o^(-2s) on the operator
    return (
        (2.0 - spec.beta)
        * spec.c_o ** (-2.0 * spec.s)
        * _pv_v(x / spec.c_o, spec.r, spec.s, spec.dim)
    )


def _check_lattice(spec: BarrierSpec, lattice: Lattice) -> None:
    if lattice.dim != spec.dim:
        raise ValueError(
            f"lattice dimension {lattice.dim} does not match the barrier dimension {spec.dim}"
        )
    lo, hi = lattice.box_bounds()
    need = spec.big_r
    if any(l > -need for l in lo) or any(h < need for h in hi):
        raise ValueError(
            f"lattice box {lo}..{hi} does not contain the ball of radius {need}"
        )


def _sample_radii(big_r: float, sample_count: int) -> np.ndarray:
    # midpoint radii: the outermost sample sits half a spacing short of R,
    # which sets the resolution of the fitted constants near the boundary
    if sample_count < 2:
        raise ValueError(f"sample_count must be >= 2, got {sample_count}")
    return big_r * (np.arange(1, sample_count + 1) - 0.5) / sample_count


@dataclass(frozen=True)
class Al1Report:
    """Pointwise supersolution check: operator w <= tau (1 + w) up to slack."""

    sample_count: int
    outermost_radius: float
    slack: float
    fraction_passing: float
    worst_ratio: float
    violation_histogram: dict
    passed: bool

    def __bool__(self) -> bool:
        return self.passed

    def to_json(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "outermost_radius": self.outermost_radius,
            "slack": self.slack,
            "fraction_passing": self.fraction_passing,
            "worst_ratio": self.worst_ratio,
            "violation_histogram": self.violation_histogram,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class Al2Report:
    """Two-sided fit of 1 + w against (R + 1 - |x|)^(-2s) inside B_R."""

    sample_count: int
    outermost_radius: float
    upper_constant: float
    lower_constant: float
    ratio: float

    def to_json(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "outermost_radius": self.outermost_radius,
            "upper_constant": self.upper_constant,
            "lower_constant": self.lower_constant,
            "ratio": self.ratio,
        }


def verify_al1(
    spec: BarrierSpec,
    lattice: Lattice,
    sample_count: int = 512,
    slack: float = 0.05,
    min_fraction: float = 0.99,
) -> Al1Report:
    """Sample operator w against tau (1 + w) on radii spanning B_R.

    A sample point passes when the quadrature value stays below the right
    side inflated by the relative slack.  The report histograms the relative
    excess of the violating points.
    """
    _check_lattice(spec, lattice)
    radii = _sample_radii(spec.big_r, sample_count)
    excesses = []
    worst = -math.inf
    for rho in radii:
        lhs = _pv_w(spec, float(rho))
        rhs = spec.tau * (1.0 + eval_w(spec, float(rho)))
        ratio = lhs / rhs
        worst = max(worst, ratio)
        if lhs > rhs * (1.0 + slack):
            excesses.append(ratio - 1.0)
    edges = [0.0, 0.1, 0.2, 0.5, 1.0, math.inf]
    hist = {}
    for lo, hi in zip(edges[:-1], edges[1:]):
        label = f"({lo:g}, {hi:g}]"
        hist[label] = sum(1 for e in excesses if lo < e <= hi)
    fraction = 1.0 - len(excesses) / sample_count
    return Al1Report(
        sample_count=sample_count,
        outermost_radius=float(radii[-1]),
        slack=slack,
        fraction_passing=fraction,
        worst_ratio=worst,
        violation_histogram=hist,
        passed=fraction >= min_fraction,
    )


def verify_al2(
    spec: BarrierSpec, lattice: Lattice, sample_count: int = 512
) -> Al2Report:
    """Fit C in C^-1 (R + 1 - |x|)^(-2s) <= 1 + w(x) <= C (R + 1 - |x|)^(-2s).

    Reports the sampled sup and inf of (1 + w(x)) (R + 1 - |x|)^(2s) and
    their ratio; a tight barrier keeps the ratio bounded.
    """
    _check_lattice(spec, lattice)
    radii = _sample_radii(spec.big_r, sample_count)
    q = (1.0 + eval_w(spec, radii)) * (spec.big_r + 1.0 - radii) ** (2.0 * spec.s)
    return Al2Report(
        sample_count=sample_count,
        outermost_radius=float(radii[-1]),
        upper_constant=float(np.max(q)),
        lower_constant=float(np.min(q)),
        ratio=float(np.max(q) / np.min(q)),
    )


def profile_csv(spec: BarrierSpec, path, sample_count: int = 512) -> None:
    """Write the radial profile of the barrier as radius, v, w rows."""
    radii = _sample_radii(spec.big_r, sample_count)
    v = eval_v(radii / spec.c_o, spec.r, spec.s)
    w = eval_w(spec, radii)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["radius", "v", "w"])
        for row in zip(radii, v, w):
            writer.writerow([repr(float(c)) for c in row])

