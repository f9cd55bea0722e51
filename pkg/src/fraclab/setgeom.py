"""Geometric measure diagnostics on voxel sets.

Kernel mass between disjoint sets, axis projections with the
Loomis-Whitney inequality, interaction lower-bound regime checks (global
and cube-localized), the complement-integral bound for sets, and the
regime scale factor ell.  Pair sums gather exact table weights and reduce
with compensated summation, so values do not depend on iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import KernelTable, stable_sum
from .lattice import CellSet, Lattice

__all__ = [
    "L_interaction",
    "project_measure",
    "check_loomis_whitney",
    "check_gmt",
    "check_gmt_local",
    "sobolev_set_bound",
    "sobolev_integrated",
    "ell_scale",
    "LoomisWhitneyReport",
    "GmtReport",
    "GmtLocalReport",
    "SobolevReport",
    "random_cellset",
    "random_disjoint_pair",
    "random_equal_count_set",
]

_BATCH = 512  # source cells per gather, caps the pair-matrix footprint


def _check_kernel_lattice(kern: KernelTable, cells: CellSet) -> None:
    if cells.lattice != kern.lattice:
        raise ValueError("cell set lattice does not match the kernel lattice")


def _pair_mass(kern: KernelTable, A: CellSet, D: CellSet) -> float:
    """Sum of pair weights between two in-box sets, compensated."""
    table = kern.table_for_extents(A.lattice.shape)
    ia = np.argwhere(A.members)
    jd = np.argwhere(D.members)
    if ia.size == 0 or jd.size == 0:
        return 0.0
    center = np.array(A.lattice.shape) - 1
    parts = []
    for k in range(0, len(ia), _BATCH):
        block = ia[k : k + _BATCH]
        off = block[:, None, :] - jd[None, :, :] + center
        if A.lattice.dim == 1:
            parts.append(table[off[..., 0]])
        else:
            parts.append(table[off[..., 0], off[..., 1]])
    return stable_sum(np.concatenate([p.ravel() for p in parts]))


def L_interaction(kern: KernelTable, A: CellSet, D: CellSet) -> float:
    """Kernel mass between two disjoint in-box sets.

    Symmetric in the two arguments (the summed multiset of weights is the
    same either way) and additive over disjoint splits of either argument
    up to final rounding.
    """
    _check_kernel_lattice(kern, A)
    _check_kernel_lattice(kern, D)
    if not A.disjoint(D):
        raise ValueError("sets overlap; interaction mass needs disjoint sets")
    return _pair_mass(kern, A, D)


# -- projections and Loomis-Whitney -------------------------------------------


def project_measure(cells: CellSet, axis: int) -> float:
    """(dim-1)-measure of the axis shadow: occupied columns times h^(dim-1)."""
    dim = cells.lattice.dim
    if not 0 <= axis < dim:
        raise ValueError(f"axis {axis} out of range for dimension {dim}")
    if dim == 1:
        return 1.0 if cells.count else 0.0
    shadow = np.any(cells.members, axis=axis)
    return float(np.count_nonzero(shadow)) * cells.lattice.h ** (dim - 1)


def _shadow_counts(cells: CellSet) -> list[int]:
    dim = cells.lattice.dim
    if dim == 1:
        return [1 if cells.count else 0]
    return [int(np.count_nonzero(np.any(cells.members, axis=a))) for a in range(dim)]


@dataclass(frozen=True)
class LoomisWhitneyReport:
    cell_count: int
    shadow_counts: tuple
    shadow_product: int
    product_holds: bool
    max_axis: int
    axis_bound_holds: bool

    def __bool__(self) -> bool:
        return self.product_holds and self.axis_bound_holds

    def to_json(self) -> dict:
        return {
            "cell_count": self.cell_count,
            "shadow_counts": list(self.shadow_counts),
            "shadow_product": self.shadow_product,
            "product_holds": self.product_holds,
            "max_axis": self.max_axis,
            "axis_bound_holds": self.axis_bound_holds,
        }


def check_loomis_whitney(cells: CellSet) -> LoomisWhitneyReport:
    """Exact integer check of the projection inequality.

    Verifies count^(n-1) <= product of shadow counts, and that the largest
    shadow alone satisfies shadow^n >= count^(n-1).  Cell counts make both
    sides integers, so the comparisons carry no tolerance; the h powers on
    the two sides match and cancel.
    """
    m = cells.count
    if m == 0:
        raise ValueError("projection inequality needs a nonempty set")
    n = cells.lattice.dim
    shadows = _shadow_counts(cells)
    product = math.prod(shadows)
    max_axis = int(np.argmax(shadows))
    return LoomisWhitneyReport(
        cell_count=m,
        shadow_counts=tuple(shadows),
        shadow_product=product,
        product_holds=m ** (n - 1) <= product,
        max_axis=max_axis,
        axis_bound_holds=shadows[max_axis] ** n >= m ** (n - 1),
    )


# -- interaction lower-bound regimes ------------------------------------------


def ell_scale(measure_a: float, s: float, dim: int) -> float:
    """Regime scale factor: measure^((1-2s)/n), log measure, or 1."""
    if measure_a <= 0.0:
        raise ValueError(f"measure must be positive, got {measure_a}")
    if s < 0.5:
        return measure_a ** ((1.0 - 2.0 * s) / dim)
    if s == 0.5:
        if measure_a <= 1.0:
            raise ValueError(
                f"log scale needs measure > 1, got {measure_a}"
            )
        return math.log(measure_a)
    return 1.0


@dataclass(frozen=True)
class GmtReport:
    regime: str
    s_branch: str
    measure_a: float
    measure_b: float
    measure_d: float
    c_probe: float
    interaction: float
    bound: float
    ratio: float
    b_floored: bool

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "s_branch": self.s_branch,
            "measure_a": self.measure_a,
            "measure_b": self.measure_b,
            "measure_d": self.measure_d,
            "c_probe": self.c_probe,
            "interaction": self.interaction,
            "bound": self.bound,
            "ratio": self.ratio,
            "b_floored": self.b_floored,
        }


def _s_branch(s: float) -> str:
    if s < 0.5:
        return "subhalf"
    if s == 0.5:
        return "half"
    return "superhalf"


def check_gmt(kern: KernelTable, A: CellSet, B: CellSet, c_probe: float = 0.05) -> GmtReport:
    """Interaction of A against the complement of A and B, versus the
    regime lower-bound expression.

    D is everything outside A and B: the in-box remainder plus the
    analytic exterior of the box, so truncation never undershoots the
    mass.  The regime splits on measure(B) <= c_probe * measure(A); the
    returned ratio interaction/bound is the empirical constant.  An empty
    B in the branches that divide by it is floored at one cell measure
    and flagged.
    """
    _check_kernel_lattice(kern, A)
    _check_kernel_lattice(kern, B)
    if not 0.0 < c_probe < 1.0:
        raise ValueError(f"c_probe must lie in (0, 1), got {c_probe}")
    if A.count == 0:
        raise ValueError("A must have positive measure")
    if not A.disjoint(B):
        raise ValueError("sets overlap; A and B must be disjoint")
    D = A.union(B).complement()
    tail = stable_sum(kern.tail_weights[A.members])
    interaction = _pair_mass(kern, A, D) + tail

    n = A.lattice.dim
    s = kern.s
    a, b = A.measure, B.measure
    cell = A.lattice.cell_volume
    floored = False
    if b <= c_probe * a:
        regime = "small_b"
        if s < 0.5:
            bound = a ** ((n - 2.0 * s) / n)
        else:
            b_eff = b
            if b_eff <= 0.0:
                b_eff = cell
                floored = True
            if s == 0.5:
                bound = a ** ((n - 1.0) / n) * math.log(a / b_eff)
            else:
                bound = a ** ((n - 2.0 * s) / n) * (b_eff / a) ** (1.0 - 2.0 * s)
    else:
        regime = "large_b"
        bound = a ** ((n - 2.0 * s) / n) * (b / a) ** (-2.0 * s / n)
    return GmtReport(
        regime=regime,
        s_branch=_s_branch(s),
        measure_a=a,
        measure_b=b,
        measure_d=D.measure,
        c_probe=c_probe,
        interaction=interaction,
        bound=bound,
        ratio=interaction / bound,
        b_floored=floored,
    )


@dataclass(frozen=True)
class GmtLocalReport:
    s_branch: str
    measure_q: float
    measure_a: float
    measure_d: float
    measure_b: float
    sigma: float
    interaction: float
    bound: float
    ratio: float
    b_floored: bool

    def to_json(self) -> dict:
        return {
            "s_branch": self.s_branch,
            "measure_q": self.measure_q,
            "measure_a": self.measure_a,
            "measure_d": self.measure_d,
            "measure_b": self.measure_b,
            "sigma": self.sigma,
            "interaction": self.interaction,
            "bound": self.bound,
            "ratio": self.ratio,
            "b_floored": self.b_floored,
        }


def check_gmt_local(
    kern: KernelTable, A: CellSet, D: CellSet, Q: CellSet, sigma: float
) -> GmtLocalReport:
    """Cube-localized interaction bound for s >= 1/2.

    A and D live inside the cube Q, each carrying at least a sigma
    fraction of its measure; B is the gap Q minus (A union D).  Only
    in-cube pairs contribute.  An empty gap is floored at one cell
    measure so the bound stays finite, and the report flags it.
    """
    _check_kernel_lattice(kern, A)
    _check_kernel_lattice(kern, D)
    _check_kernel_lattice(kern, Q)
    s = kern.s
    if s < 0.5:
        raise ValueError(f"localized bound needs s in [1/2, 1), got s = {s}")
    if not 0.0 < sigma <= 0.5:
        raise ValueError(f"sigma must lie in (0, 1/2], got {sigma}")
    if not A.is_subset(Q):
        raise ValueError("A is not contained in the cube")
    if not D.is_subset(Q):
        raise ValueError("D is not contained in the cube")
    if not A.disjoint(D):
        raise ValueError("sets overlap; A and D must be disjoint")
    q = Q.measure
    if A.measure < sigma * q:
        raise ValueError(
            f"set A carries measure {A.measure} < sigma |Q| = {sigma * q}"
        )
    if D.measure < sigma * q:
        raise ValueError(
            f"set D carries measure {D.measure} < sigma |Q| = {sigma * q}"
        )
    B = Q.difference(A.union(D))
    b = B.measure
    floored = False
    if b <= 0.0:
        b = A.lattice.cell_volume
        floored = True
    interaction = _pair_mass(kern, A, D)
    n = A.lattice.dim
    if s == 0.5:
        bound = q ** ((n - 1.0) / n) * math.log(q / b)
    else:
        bound = q ** ((n - 2.0 * s) / n) * (q / b) ** (2.0 * s - 1.0)
    return GmtLocalReport(
        s_branch=_s_branch(s),
        measure_q=q,
        measure_a=A.measure,
        measure_d=D.measure,
        measure_b=B.measure,
        sigma=sigma,
        interaction=interaction,
        bound=bound,
        ratio=interaction / bound,
        b_floored=floored,
    )


# -- complement integral bound -------------------------------------------------


@dataclass(frozen=True)
class SobolevReport:
    lhs: float
    constant: float
    measure_e: float

    def to_json(self) -> dict:
        return {"lhs": self.lhs, "constant": self.constant, "measure_e": self.measure_e}


def _cell_position(lattice: Lattice, x) -> tuple:
    idx = tuple(int(v) for v in np.atleast_1d(x))
    if len(idx) != lattice.dim:
        raise ValueError(f"cell index {idx} has wrong dimension")
    pos = tuple(idx[a] - lattice.lo[a] for a in range(lattice.dim))
    for a in range(lattice.dim):
        if not 0 <= pos[a] < lattice.shape[a]:
            raise ValueError(f"cell index {idx} outside the box")
    return pos


def sobolev_set_bound(kern: KernelTable, E: CellSet, x) -> SobolevReport:
    """Complement integral of the kernel seen from one cell.

    lhs is the integral of the kernel from x over everything outside E
    (in-box cells plus the analytic exterior tail), per unit source
    measure: the summed pair weights carry both cell volumes, so one is
    divided out.  The reported constant lhs * |E|^(2s/n) is the empirical
    version of the complement integral bound.
    """
    _check_kernel_lattice(kern, E)
    if E.count == 0:
        raise ValueError("E must have positive measure")
    pos = _cell_position(E.lattice, x)
    table = kern.table_for_extents(E.lattice.shape)
    center = np.array(E.lattice.shape) - 1
    jd = np.argwhere(~E.members)
    if jd.size:
        off = np.asarray(pos) - jd + center
        if E.lattice.dim == 1:
            vals = table[off[:, 0]]
        else:
            vals = table[off[:, 0], off[:, 1]]
        mass = stable_sum(vals) + float(kern.tail_weights[pos])
    else:
        mass = float(kern.tail_weights[pos])
    lhs = mass / E.lattice.cell_volume
    n = E.lattice.dim
    constant = lhs * E.measure ** (2.0 * kern.s / n)
    return SobolevReport(lhs=lhs, constant=constant, measure_e=E.measure)


def sobolev_integrated(kern: KernelTable, E: CellSet, F: CellSet) -> SobolevReport:
    """Complement integral accumulated over a source set F.

    lhs integrates the per-cell complement value over F (cell measure
    weights); the constant divides out |F| so it is comparable to the
    single-cell version.
    """
    _check_kernel_lattice(kern, F)
    if F.count == 0:
        raise ValueError("F must have positive measure")
    cell = F.lattice.cell_volume
    parts = [
        sobolev_set_bound(kern, E, tuple(idx + np.array(F.lattice.lo))).lhs
        for idx in np.argwhere(F.members)
    ]
    lhs = stable_sum(parts) * cell
    n = E.lattice.dim
    constant = lhs * E.measure ** (2.0 * kern.s / n) / F.measure
    return SobolevReport(lhs=lhs, constant=constant, measure_e=E.measure)


# -- random corpora -------------------------------------------------------------


def random_cellset(lattice: Lattice, rng, max_rects: int = 8) -> CellSet:
    """Union of 1..max_rects random axis-aligned boxes, never empty."""
    mask = np.zeros(lattice.shape, dtype=bool)
    k = int(rng.integers(1, max_rects + 1))
    for _ in range(k):
        sl = []
        for a in range(lattice.dim):
            extent = lattice.shape[a]
            length = int(rng.integers(1, max(2, extent // 2)))
            start = int(rng.integers(0, extent - length + 1))
            sl.append(slice(start, start + length))
        mask[tuple(sl)] = True
    return CellSet(lattice, mask)


def random_disjoint_pair(
    lattice: Lattice, rng, b_fraction: float = 0.05, max_rects: int = 8
):
    """(A, B) with B disjoint from A and measure(B) <= b_fraction * measure(A).

    B starts from an independent rectangle union and is trimmed in fixed
    index order to meet the measure cap, so a seeded generator reproduces
    the pair exactly.
    """
    A = random_cellset(lattice, rng, max_rects)
    raw = random_cellset(lattice, rng, max_rects).difference(A)
    cap = int(b_fraction * A.count)
    keep = np.argwhere(raw.members)[:cap]
    mask = np.zeros(lattice.shape, dtype=bool)
    for idx in keep:
        mask[tuple(idx)] = True
    return A, CellSet(lattice, mask)


def random_equal_count_set(lattice: Lattice, rng, count: int) -> CellSet:
    """count distinct cells drawn uniformly without replacement."""
    if not 0 < count <= lattice.n_cells:
        raise ValueError(f"count must lie in 1..{lattice.n_cells}, got {count}")
    flat = rng.choice(lattice.n_cells, size=count, replace=False)
    mask = np.zeros(lattice.n_cells, dtype=bool)
    mask[flat] = True
    return CellSet(lattice, mask.reshape(lattice.shape))
