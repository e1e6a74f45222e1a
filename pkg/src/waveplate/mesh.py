"""Structured tensor grids for the acoustic chamber and the elastic wall.

The chamber is the unit box (0,1)^d (d = 2 or 3).  Its boundary splits into
the flat elastic wall ``gamma`` (the open top face, last coordinate = 1) and
the rigid wall ``gamma0`` (everything else, including the rim of the top
face).  The wall carries its own (d-1)-dimensional grid whose interior nodes
coincide with the chamber's gamma nodes; its boundary ring is clamped
(displacement and normal slope both zero), encoded downstream by a two-cell
boundary/ghost layer in the stencils.

Quadrature is the tensor trapezoid rule throughout: it is exact for
constants (weights sum to the region's measure), second-order for smooth
fields, and it is the unique choice that makes the discrete coupling
identities of :mod:`waveplate.operators` hold exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

ROLE_INTERIOR = 0
ROLE_GAMMA0 = 1
ROLE_GAMMA = 2
ROLE_CLAMPED = 3

_ROLE_NAMES = {
    ROLE_INTERIOR: "interior",
    ROLE_GAMMA0: "gamma0",
    ROLE_GAMMA: "gamma",
    ROLE_CLAMPED: "clamped",
}


class GridMismatchError(ValueError):
    """Operands live on different grids (or on the wrong kind of grid)."""


def _as_axis_tuple(n_per_axis, dim: int) -> tuple[int, ...]:
    if isinstance(n_per_axis, int):
        ns = (n_per_axis,) * dim
    else:
        ns = tuple(int(n) for n in n_per_axis)
    if len(ns) != dim or any(n < 2 for n in ns):
        raise ValueError(f"need {dim} axis cell counts >= 2, got {n_per_axis!r}")
    return ns


def _trapezoid_weights(ns: Iterable[int], hs: Iterable[float]) -> np.ndarray:
    """Tensor-product trapezoid weights on the full node set, shape (n1+1, ...)."""
    w = np.ones(())
    for n, h in zip(ns, hs):
        w1 = np.full(n + 1, h)
        w1[0] *= 0.5
        w1[-1] *= 0.5
        w = np.multiply.outer(w, w1)
    return w


@dataclass(frozen=True)
class ChamberGrid:
    """Uniform tensor grid on the unit box with boundary-role tagging.

    Node roles: ``interior``, ``gamma0`` (rigid wall, homogeneous Dirichlet)
    and ``gamma`` (elastic wall: the top face with its rim excluded -- the
    rim nodes belong to gamma0, matching the clamped edge of the wall grid).
    """

    dim: int
    n_per_axis: tuple[int, ...]
    spacing: tuple[float, ...]
    node_roles: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.node_roles.setflags(write=False)
        roles = set(np.unique(self.node_roles))
        if not roles <= {ROLE_INTERIOR, ROLE_GAMMA0, ROLE_GAMMA}:
            raise ValueError("chamber roles must be interior/gamma0/gamma")
        if ROLE_GAMMA0 not in roles or ROLE_GAMMA not in roles:
            raise ValueError("gamma0 and gamma node sets must both be nonempty")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.n_per_axis)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def quad_weights(self) -> np.ndarray:
        w = _trapezoid_weights(self.n_per_axis, self.spacing).ravel()
        w.setflags(write=False)
        return w

    @property
    def measure(self) -> float:
        return 1.0

    def coordinates(self) -> tuple[np.ndarray, ...]:
        axes = [np.linspace(0.0, 1.0, n + 1) for n in self.n_per_axis]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def describe(self) -> dict:
        return {"dim": self.dim, "n_per_axis": list(self.n_per_axis)}


@dataclass(frozen=True)
class PlateGrid:
    """Grid of the elastic wall, aligned with the owning chamber's top face.

    Interior nodes map one-to-one onto the chamber's gamma nodes
    (``chamber_node_index``); the boundary ring is clamped and pinned to
    zero.  Together with the reflected ghost layer used by the stencils this
    is the two-cell layer realising w = dw/dn = 0.
    """

    dim: int
    n_per_axis: tuple[int, ...]
    spacing: tuple[float, ...]
    node_roles: np.ndarray = field(repr=False)
    chamber_node_index: np.ndarray = field(repr=False)  # per plate node, -1 off-wall

    def __post_init__(self):
        self.node_roles.setflags(write=False)
        self.chamber_node_index.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.n_per_axis)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def quad_weights(self) -> np.ndarray:
        w = _trapezoid_weights(self.n_per_axis, self.spacing).ravel()
        w.setflags(write=False)
        return w

    @property
    def measure(self) -> float:
        return 1.0

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = self.node_roles.ravel() == ROLE_INTERIOR
        m.setflags(write=False)
        return m

    def coordinates(self) -> tuple[np.ndarray, ...]:
        axes = [np.linspace(0.0, 1.0, n + 1) for n in self.n_per_axis]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def describe(self) -> dict:
        return {"dim": self.dim, "n_per_axis": list(self.n_per_axis)}


def chamber_grid(dim: int, n_per_axis) -> ChamberGrid:
    """Build the unit-box chamber grid; gamma is the open top face/edge."""
    if dim not in (2, 3):
        raise ValueError("chamber dim must be 2 or 3")
    ns = _as_axis_tuple(n_per_axis, dim)
    hs = tuple(1.0 / n for n in ns)
    shape = tuple(n + 1 for n in ns)
    roles = np.full(shape, ROLE_INTERIOR, dtype=np.int8)
    idx = np.indices(shape)
    on_boundary = np.zeros(shape, dtype=bool)
    for a, n in enumerate(ns):
        on_boundary |= (idx[a] == 0) | (idx[a] == n)
    top = idx[-1] == ns[-1]
    rim = np.zeros(shape, dtype=bool)
    for a, n in enumerate(ns[:-1]):
        rim |= (idx[a] == 0) | (idx[a] == n)
    roles[on_boundary] = ROLE_GAMMA0
    roles[top & ~rim] = ROLE_GAMMA
    return ChamberGrid(dim=dim, n_per_axis=ns, spacing=hs, node_roles=roles)


def plate_grid(chamber: ChamberGrid) -> PlateGrid:
    """Build the wall grid aligned with ``chamber``'s top face."""
    ns = chamber.n_per_axis[:-1]
    hs = chamber.spacing[:-1]
    shape = tuple(n + 1 for n in ns)
    roles = np.full(shape, ROLE_INTERIOR, dtype=np.int8)
    idx = np.indices(shape)
    for a, n in enumerate(ns):
        roles[(idx[a] == 0) | (idx[a] == n)] = ROLE_CLAMPED
    # plate node (i, j, ...) sits at chamber node (i, j, ..., n_last)
    cidx = np.ravel_multi_index(
        tuple(idx) + (np.full(shape, chamber.n_per_axis[-1]),), chamber.shape
    ).astype(np.int64)
    grid = PlateGrid(
        dim=chamber.dim - 1,
        n_per_axis=ns,
        spacing=hs,
        node_roles=roles,
        chamber_node_index=cidx,
    )
    croles = chamber.node_roles.ravel()
    assert np.all(croles[cidx.ravel()[grid.interior_mask]] == ROLE_GAMMA)
    return grid


def build_grids(dim: int, n_per_axis) -> tuple[ChamberGrid, PlateGrid]:
    ch = chamber_grid(dim, n_per_axis)
    return ch, plate_grid(ch)


@dataclass(frozen=True)
class GridFunction:
    """Real nodal field on a chamber or plate grid (immutable)."""

    grid: ChamberGrid | PlateGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.grid.n_nodes:
            raise GridMismatchError(
                f"{v.size} values for a grid with {self.grid.n_nodes} nodes"
            )
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def shaped(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


def grid_function(grid, values) -> GridFunction:
    return GridFunction(grid=grid, values=np.array(values, dtype=float))


def zero_function(grid) -> GridFunction:
    return GridFunction(grid=grid, values=np.zeros(grid.n_nodes))


def _check_same_grid(f: GridFunction, g: GridFunction):
    if f.grid is not g.grid and (
        type(f.grid) is not type(g.grid)
        or f.grid.n_per_axis != g.grid.n_per_axis
    ):
        raise GridMismatchError("operands live on different grids")


def inner_product_l2(f: GridFunction, g: GridFunction, region: str | None = None) -> float:
    """Trapezoid approximation of the L2 pairing of f and g over the grid's region.

    ``region`` ('omega' or 'gamma') is an optional consistency check against
    the kind of grid the operands live on.
    """
    _check_same_grid(f, g)
    kind = "omega" if isinstance(f.grid, ChamberGrid) else "gamma"
    if region is not None and region.lower().replace("Ω", "omega") not in (kind,):
        raise GridMismatchError(f"fields live on {kind}, not {region}")
    return float(np.dot(f.grid.quad_weights, f.values * g.values))


def norm_l2(f: GridFunction) -> float:
    return float(np.sqrt(max(inner_product_l2(f, f), 0.0)))


def integrate(f: GridFunction) -> float:
    """Trapezoid integral of a nodal field over its grid's region."""
    return float(np.dot(f.grid.quad_weights, f.values))
