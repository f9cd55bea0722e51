"""Discrete geometry substrate: lattices, cell sets, exterior data, fields.

Conventions
-----------
* A lattice is a regular grid of cells of spacing ``h`` in dimension 1 or 2.
  The cell with integer index ``i`` (per axis) occupies ``[i*h, (i+1)*h)`` and
  its center is ``(i + 1/2) * h``, measured from the global origin.  Centers
  therefore sit at half-integer multiples of ``h`` and never on a coordinate
  hyperplane, which removes membership ties in ball masks.
* The lattice box is the index range ``[lo, hi)`` per axis (inclusive lower,
  exclusive upper).  Everything outside the box is described analytically by
  an exterior-data descriptor, never stored.
* A cell belongs to a ball mask iff its *center* lies strictly inside the
  ball.  Measures are exact integer counts times ``h**dim``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Lattice",
    "CellSet",
    "ScalarField",
    "ConstantExterior",
    "HalfspaceExterior",
    "SampledExterior",
    "ball_mask",
    "measure",
    "psi_field",
]


def _as_tuple(val, dim: int) -> tuple[int, ...]:
    if np.isscalar(val):
        return (int(val),) * dim
    t = tuple(int(v) for v in val)
    if len(t) != dim:
        raise ValueError(f"expected {dim} entries, got {len(t)}")
    return t


@dataclass(frozen=True)
class Lattice:
    """Regular cell grid: dimension, spacing, and integer index box.

    Attributes
    ----------
    dim : 1 or 2
    h : cell spacing, > 0
    lo, hi : per-axis integer index bounds, inclusive/exclusive; hi > lo
    """

    dim: int
    h: float
    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.h > 0:
            raise ValueError(f"cell spacing must be positive, got {self.h}")
        object.__setattr__(self, "lo", _as_tuple(self.lo, self.dim))
        object.__setattr__(self, "hi", _as_tuple(self.hi, self.dim))
        for a in range(self.dim):
            if self.hi[a] <= self.lo[a]:
                raise ValueError(f"hi must exceed lo on axis {a}: {self.lo} {self.hi}")

    @classmethod
    def covering_ball(cls, dim: int, h: float, center, radius: float) -> "Lattice":
        """Smallest lattice box whose union of cells contains the closed ball."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if c.size == 1 and dim > 1:
            c = np.full(dim, c[0])
        lo = tuple(int(np.floor((c[a] - radius) / h + 1e-12)) for a in range(dim))
        hi = tuple(int(np.ceil((c[a] + radius) / h - 1e-12)) for a in range(dim))
        return cls(dim, h, lo, hi)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.hi[a] - self.lo[a] for a in range(self.dim))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def axis_centers(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis, ordered by index."""
        return (np.arange(self.lo[axis], self.hi[axis]) + 0.5) * self.h

    def center_grids(self) -> list[np.ndarray]:
        """Per-axis center coordinates broadcastable to ``shape``."""
        outs = []
        for a in range(self.dim):
            c = self.axis_centers(a)
            sh = [1] * self.dim
            sh[a] = -1
            outs.append(c.reshape(sh))
        return outs

    def centers(self) -> np.ndarray:
        """All cell centers, shape ``(*shape, dim)``."""
        grids = np.meshgrid(*[self.axis_centers(a) for a in range(self.dim)],
                            indexing="ij")
        return np.stack(grids, axis=-1)

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical lower/upper corner of the box."""
        lo = np.array([self.lo[a] * self.h for a in range(self.dim)])
        hi = np.array([self.hi[a] * self.h for a in range(self.dim)])
        return lo, hi

    def point_to_index(self, points: np.ndarray) -> np.ndarray:
        """Integer cell index containing each point; shape ``(..., dim)``."""
        pts = np.asarray(points, dtype=float)
        if self.dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        return np.floor(pts / self.h).astype(np.int64)

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        idx = self.point_to_index(points)
        ok = np.ones(idx.shape[:-1], dtype=bool)
        for a in range(self.dim):
            ok &= (idx[..., a] >= self.lo[a]) & (idx[..., a] < self.hi[a])
        return ok


def _check_same_lattice(a: Lattice, b: Lattice) -> None:
    if a != b:
        raise ValueError(f"lattice mismatch: {a} vs {b}")


@dataclass(frozen=True)
class CellSet:
    """Boolean voxel set on a lattice; measure is count * h**dim exactly."""

    lattice: Lattice
    members: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.members, dtype=bool)
        if m.shape != self.lattice.shape:
            raise ValueError(f"member shape {m.shape} != box shape {self.lattice.shape}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    @classmethod
    def empty(cls, lattice: Lattice) -> "CellSet":
        return cls(lattice, np.zeros(lattice.shape, dtype=bool))

    @classmethod
    def full(cls, lattice: Lattice) -> "CellSet":
        return cls(lattice, np.ones(lattice.shape, dtype=bool))

    @classmethod
    def from_indices(cls, lattice: Lattice, indices: Iterable[Sequence[int]]) -> "CellSet":
        m = np.zeros(lattice.shape, dtype=bool)
        for idx in indices:
            t = _as_tuple(idx, lattice.dim)
            pos = tuple(t[a] - lattice.lo[a] for a in range(lattice.dim))
            for a in range(lattice.dim):
                if not 0 <= pos[a] < lattice.shape[a]:
                    raise ValueError(f"index {t} outside box")
            m[pos] = True
        return cls(lattice, m)

    @property
    def count(self) -> int:
        return int(self.members.sum())

    @property
    def measure(self) -> float:
        return self.count * self.lattice.cell_volume

    def complement(self) -> "CellSet":
        """Complement within the lattice box."""
        return CellSet(self.lattice, ~self.members)

    def union(self, other: "CellSet") -> "CellSet":
        _check_same_lattice(self.lattice, other.lattice)
        return CellSet(self.lattice, self.members | other.members)

    def intersection(self, other: "CellSet") -> "CellSet":
        _check_same_lattice(self.lattice, other.lattice)
        return CellSet(self.lattice, self.members & other.members)

    def difference(self, other: "CellSet") -> "CellSet":
        _check_same_lattice(self.lattice, other.lattice)
        return CellSet(self.lattice, self.members & ~other.members)

    def is_subset(self, other: "CellSet") -> bool:
        _check_same_lattice(self.lattice, other.lattice)
        return bool(np.all(~self.members | other.members))

    def disjoint(self, other: "CellSet") -> bool:
        _check_same_lattice(self.lattice, other.lattice)
        return not bool(np.any(self.members & other.members))

    # -- plain-text and JSON interchange ------------------------------------

    def to_text_grid(self) -> str:
        """Rows of 0/1 characters; 2D rows follow axis 0, columns axis 1."""
        m = self.members if self.lattice.dim == 2 else self.members[None, :]
        return "\n".join("".join("1" if v else "0" for v in row) for row in m)

    @classmethod
    def from_text_grid(cls, lattice: Lattice, text: str) -> "CellSet":
        rows = [line for line in text.strip().splitlines() if line.strip()]
        m = np.array([[c == "1" for c in row.strip()] for row in rows], dtype=bool)
        if lattice.dim == 1:
            m = m[0]
        return cls(lattice, m)

    def to_json(self) -> str:
        idx = np.argwhere(self.members)
        cells = (idx + np.array(self.lattice.lo)).tolist()
        return json.dumps({
            "dim": self.lattice.dim,
            "h": self.lattice.h,
            "lo": list(self.lattice.lo),
            "hi": list(self.lattice.hi),
            "cells": cells,
        })

    @classmethod
    def from_json(cls, text: str) -> "CellSet":
        obj = json.loads(text)
        lat = Lattice(obj["dim"], obj["h"], tuple(obj["lo"]), tuple(obj["hi"]))
        return cls.from_indices(lat, obj["cells"])


# -- exterior data ----------------------------------------------------------


@dataclass(frozen=True)
class ConstantExterior:
    """u = value everywhere outside the lattice box."""

    value: float

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise ValueError(f"exterior value must lie in [-1, 1], got {self.value}")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        shape = pts.shape[:-1] if pts.ndim > 1 else pts.shape
        return np.full(shape, self.value)


@dataclass(frozen=True)
class HalfspaceExterior:
    """u = sign(x[axis] - threshold) outside the box; +1 on the threshold."""

    axis: int
    threshold: float

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        coord = pts[..., self.axis] if pts.ndim > 1 else pts
        return np.where(coord >= self.threshold, 1.0, -1.0)


@dataclass(frozen=True)
class SampledExterior:
    """Explicit samples on an enclosing lattice, constant fill beyond it.

    ``outer`` must strictly contain the inner box it decorates; ``values``
    lives on ``outer`` (only cells outside the inner box are ever consulted)
    and the field is identically ``fill`` (-1 or +1) outside ``outer``.
    """

    outer: Lattice
    values: np.ndarray
    fill: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.outer.shape:
            raise ValueError(f"value shape {v.shape} != outer box {self.outer.shape}")
        if np.any(np.abs(v) > 1.0):
            raise ValueError("sampled exterior values must lie in [-1, 1]")
        if self.fill not in (-1.0, 1.0):
            raise ValueError(f"fill must be -1 or +1, got {self.fill}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.outer.dim == 1 and pts.ndim <= 1:
            pts = np.atleast_1d(pts)[..., None]
        idx = self.outer.point_to_index(pts)
        inside = self.outer.contains_points(pts)
        out = np.full(inside.shape, self.fill)
        if np.any(inside):
            pos = tuple(idx[inside, a] - self.outer.lo[a] for a in range(self.outer.dim))
            out[inside] = self.values[pos]
        return out


Exterior = ConstantExterior | HalfspaceExterior | SampledExterior


@dataclass(frozen=True)
class ScalarField:
    """Cell values in [-1, 1] on a lattice plus an exterior descriptor.

    Evaluation is defined on all of space: cell lookup inside the box,
    descriptor outside.
    """

    lattice: Lattice
    values: np.ndarray
    exterior: Exterior

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.lattice.shape:
            raise ValueError(f"value shape {v.shape} != box shape {self.lattice.shape}")
        if np.any(np.abs(v) > 1.0 + 1e-15):
            raise ValueError("field values must lie in [-1, 1]")
        v = np.clip(v, -1.0, 1.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.lattice, values, self.exterior)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.lattice.dim == 1 and pts.ndim <= 1:
            pts = np.atleast_1d(pts)[..., None]
        idx = self.lattice.point_to_index(pts)
        inside = self.lattice.contains_points(pts)
        out = np.asarray(self.exterior.evaluate(pts), dtype=float).copy()
        if np.any(inside):
            pos = tuple(idx[inside, a] - self.lattice.lo[a] for a in range(self.lattice.dim))
            out[inside] = self.values[pos]
        return out

    # -- CSV interchange: index per axis, coordinates, value ----------------

    def to_csv(self, path) -> None:
        lat = self.lattice
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            hdr = [f"i{a}" for a in range(lat.dim)] + [f"x{a}" for a in range(lat.dim)] + ["value"]
            w.writerow(hdr)
            for flat, val in enumerate(self.values.ravel(order="C")):
                pos = np.unravel_index(flat, lat.shape)
                idx = [pos[a] + lat.lo[a] for a in range(lat.dim)]
                xy = [(idx[a] + 0.5) * lat.h for a in range(lat.dim)]
                w.writerow(idx + xy + [repr(float(val))])

    @classmethod
    def from_csv(cls, path, lattice: Lattice, exterior: Exterior) -> "ScalarField":
        vals = np.zeros(lattice.shape, dtype=float)
        seen = np.zeros(lattice.shape, dtype=bool)
        with open(path, newline="") as f:
            rd = csv.DictReader(f)
            for row in rd:
                idx = tuple(int(row[f"i{a}"]) - lattice.lo[a] for a in range(lattice.dim))
                vals[idx] = float(row["value"])
                seen[idx] = True
        if not seen.all():
            raise ValueError(f"field file covers {int(seen.sum())}/{seen.size} cells")
        return cls(lattice, vals, exterior)


# -- operations ---------------------------------------------------------------


def ball_mask(lattice: Lattice, center, radius: float) -> CellSet:
    """Cells whose centers lie strictly inside the ball.

    Raises if the ball is not contained in the lattice box, naming the index
    padding that would be required.
    """
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size == 1 and lattice.dim > 1:
        c = np.full(lattice.dim, c[0])
    lo_phys, hi_phys = lattice.box_bounds()
    need_lo, need_hi = [], []
    for a in range(lattice.dim):
        need_lo.append(int(np.ceil((lo_phys[a] - (c[a] - radius)) / lattice.h - 1e-12)))
        need_hi.append(int(np.ceil(((c[a] + radius) - hi_phys[a]) / lattice.h - 1e-12)))
    if any(p > 0 for p in need_lo) or any(p > 0 for p in need_hi):
        raise ValueError(
            "ball not contained in lattice box; pad indices by "
            f"{[max(p, 0) for p in need_lo]} below and {[max(p, 0) for p in need_hi]} above"
        )
    if radius == 0:
        return CellSet.empty(lattice)
    grids = lattice.center_grids()
    d2 = sum((grids[a] - c[a]) ** 2 for a in range(lattice.dim))
    return CellSet(lattice, np.broadcast_to(d2 < radius ** 2, lattice.shape))


def measure(cells: CellSet) -> float:
    """Lebesgue measure: member count times cell volume."""
    return cells.measure


def psi_field(lattice: Lattice, R: float) -> ScalarField:
    """Radial comparison profile: -1 inside B_{R+1}, +1 outside B_{R+2}.

    psi(x) = -1 + 2 * min{ (|x| - R - 1)^+ , 1 }, sampled at cell centers,
    with exterior identically +1.
    """
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    lo_phys, hi_phys = lattice.box_bounds()
    if any(lo_phys[a] > -(R + 2) or hi_phys[a] < (R + 2) for a in range(lattice.dim)):
        raise ValueError(f"lattice box does not contain the radius-{R + 2} ball")
    grids = lattice.center_grids()
    rad = np.sqrt(sum(np.broadcast_to(g, lattice.shape) ** 2 for g in grids)) \
        if lattice.dim == 2 else np.abs(np.broadcast_to(grids[0], lattice.shape))
    vals = -1.0 + 2.0 * np.minimum(np.maximum(rad - R - 1.0, 0.0), 1.0)
    return ScalarField(lattice, vals, ConstantExterior(1.0))
