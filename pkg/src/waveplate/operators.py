"""Discrete chamber/wall operators wired for exact energy exchange.

Everything is assembled from quadratic forms so the coupling identities hold
to solver roundoff rather than to truncation order:

* chamber Dirichlet form  a(u, v) = sum_axes (d_a u, d_a v)  from per-axis
  edge differences with transverse trapezoid weights.  The negative
  Laplacian is L = M^-1 S with S the form's matrix and M the trapezoid
  mass; interior rows of L are the standard 5/7-point stencil and the top
  rows are the ghost-eliminated homogeneous-Neumann stencil.
* wall bending form  b(w, z) = (Lap_h w, Lap_h z)  from the ghost-reflected
  discrete Laplacian evaluated at every wall node (clamped boundary: value
  pinned, ghost mirrored).  In 1d, M^-1 S_B is exactly the classical
  clamped five-point fourth-difference matrix (7 on the near-boundary
  diagonal entries); in 2d it is the 13-point biharmonic stencil with the
  same reflection treatment.
* the Neumann lift solves  S q = Tr' M_g p,  which is the variational form
  of: q discretely harmonic inside, q = 0 on the rigid wall, discrete
  normal slope p on the elastic wall.  By construction
  a(Lift p, phi) = (p, Tr phi)_gamma exactly, the discrete counterpart of
  the chamber/wall duality identity that the whole energy bookkeeping
  rests on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import (
    ROLE_GAMMA,
    ROLE_GAMMA0,
    ROLE_INTERIOR,
    ChamberGrid,
    GridFunction,
    GridMismatchError,
    PlateGrid,
)

__all__ = [
    "AlignmentError",
    "DiscreteOperators",
    "GridConstants",
    "assemble",
    "dtn_lift",
    "adjointness_report",
    "adjointness_defect",
    "norm_V",
    "dump_matrices",
]


class AlignmentError(ValueError):
    """Plate grid does not match the chamber's elastic wall."""


@dataclass(frozen=True)
class GridConstants:
    """Measured constants of one assembled grid pair.

    poincare_chamber : C with ||u||_2 <= C ||grad u||_2 on the free space
    poincare_plate   : C with |w|_2 <= C |Lap w|_2 on the clamped space
    embedding_plate  : C with |w|_inf <= C |Lap w|_2 (sharp, from the
                       diagonal of the inverse bending stiffness)
    gamma_measure    : |Gamma|
    lam_max_wave, lam_max_plate : spectral radii of L and B
    """

    poincare_chamber: float
    poincare_plate: float
    embedding_plate: float
    gamma_measure: float
    lam_max_wave: float
    lam_max_plate: float

    @property
    def leapfrog_dt_max(self) -> float:
        return 2.0 / np.sqrt(self.lam_max_wave + self.lam_max_plate)


def _axis_difference_forms(shape, spacing):
    """Per-axis edge-difference matrices G_a and edge weights for the
    Dirichlet form on the full node set: a(u,v) = sum_a (G_a u) . W_a (G_a v)."""
    ns = tuple(s - 1 for s in shape)
    n_nodes = int(np.prod(shape))
    node_index = np.arange(n_nodes).reshape(shape)
    taus = []
    for n, h in zip(ns, spacing):
        t = np.full(n + 1, h)
        t[0] *= 0.5
        t[-1] *= 0.5
        taus.append(t)
    forms = []
    for a, (n, h) in enumerate(zip(ns, spacing)):
        lo = node_index.take(range(0, n), axis=a).ravel()
        hi = node_index.take(range(1, n + 1), axis=a).ravel()
        n_edges = lo.size
        rows = np.repeat(np.arange(n_edges), 2)
        cols = np.column_stack([lo, hi]).ravel()
        vals = np.tile([-1.0 / h, 1.0 / h], n_edges)
        G = sp.csr_matrix((vals, (rows, cols)), shape=(n_edges, n_nodes))
        transverse = [taus[b] if b != a else np.full(n, h) for b in range(len(ns))]
        w = np.ones(())
        for t in transverse:
            w = np.multiply.outer(w, t)
        forms.append((G, w.ravel()))
    return forms


def _ghost_laplacian(shape, spacing) -> sp.csr_matrix:
    """Discrete Laplacian at every wall node acting on clamped fields.

    At boundary nodes the off-grid neighbour is mirrored (zero normal
    slope) and the pinned boundary values enter as ordinary neighbours;
    columns of non-interior nodes are dropped afterwards.
    """
    ns = tuple(s - 1 for s in shape)
    n_nodes = int(np.prod(shape))
    node_index = np.arange(n_nodes).reshape(shape)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for idx in np.ndindex(*shape):
        r = node_index[idx]
        for a, (n, h) in enumerate(zip(ns, spacing)):
            i = idx[a]
            c = 1.0 / h**2
            add(r, r, -2.0 * c)
            for nb in (i - 1, i + 1):
                j = list(idx)
                # mirror the off-grid ghost back across the clamped node
                j[a] = -nb if nb < 0 else (2 * n - nb if nb > n else nb)
                add(r, node_index[tuple(j)], c)
    D = sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))
    D.sum_duplicates()
    return D


class DiscreteOperators:
    """Assembled operators of one chamber/wall pair (immutable after build)."""

    def __init__(self, chamber: ChamberGrid, plate: PlateGrid):
        croles = chamber.node_roles.ravel()
        proles = plate.node_roles.ravel()
        if plate.n_per_axis != chamber.n_per_axis[:-1] or plate.spacing != chamber.spacing[:-1]:
            raise AlignmentError("plate grid is not the chamber's top wall")
        cidx = plate.chamber_node_index.ravel()
        if not np.all(croles[cidx[proles == ROLE_INTERIOR]] == ROLE_GAMMA):
            raise AlignmentError("plate interior nodes must sit on chamber gamma nodes")

        self.chamber = chamber
        self.plate = plate

        # --- chamber: free dofs = interior + gamma ---
        self.free_chamber = np.flatnonzero(croles != ROLE_GAMMA0)
        self._chamber_free_of_node = -np.ones(chamber.n_nodes, dtype=np.int64)
        self._chamber_free_of_node[self.free_chamber] = np.arange(self.free_chamber.size)

        forms = _axis_difference_forms(chamber.shape, chamber.spacing)
        parts = [G.T @ sp.diags(w) @ G for G, w in forms]
        S_full = parts[0]
        for part in parts[1:]:
            S_full = S_full + part
        S_full = S_full.tocsr()
        self._S_rows_free = S_full[self.free_chamber]                 # acts on full fields
        self.S = self._S_rows_free[:, self.free_chamber].tocsc()      # Dirichlet-restricted
        self.M_omega = chamber.quad_weights[self.free_chamber].copy()

        # --- plate: free dofs = interior nodes ---
        self.free_plate = np.flatnonzero(proles == ROLE_INTERIOR)
        self._plate_free_of_node = -np.ones(plate.n_nodes, dtype=np.int64)
        self._plate_free_of_node[self.free_plate] = np.arange(self.free_plate.size)

        Dg_full = _ghost_laplacian(plate.shape, plate.spacing)
        self.Dg = Dg_full[:, self.free_plate].tocsr()
        tau = plate.quad_weights
        self.S_B = (self.Dg.T @ sp.diags(tau) @ self.Dg).tocsc()
        self.M_gamma = tau[self.free_plate].copy()

        # --- trace / coupling ---
        self.gamma_of_plate = self._chamber_free_of_node[cidx[self.free_plate]]
        assert np.all(self.gamma_of_plate >= 0)
        m = self.free_plate.size
        self.Tr = sp.csr_matrix(
            (np.ones(m), (np.arange(m), self.gamma_of_plate)),
            shape=(m, self.free_chamber.size),
        )
        self.coupling = (self.Tr.T @ sp.diags(self.M_gamma)).tocsc()  # Tr' M_gamma

        self._lift_solve = spla.factorized(self.S)
        self._bend_solve: Callable | None = None
        self._constants: GridConstants | None = None
        for arr in (self.M_omega, self.M_gamma, self.gamma_of_plate):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    # field helpers
    # ------------------------------------------------------------------
    def chamber_free(self, f: GridFunction) -> np.ndarray:
        if f.grid is not self.chamber:
            raise GridMismatchError("field does not live on this chamber grid")
        return f.values[self.free_chamber]

    def plate_free(self, f: GridFunction) -> np.ndarray:
        if f.grid is not self.plate:
            raise GridMismatchError("field does not live on this plate grid")
        return f.values[self.free_plate]

    def chamber_field(self, free: np.ndarray) -> GridFunction:
        v = np.zeros(self.chamber.n_nodes)
        v[self.free_chamber] = free
        return GridFunction(grid=self.chamber, values=v)

    def plate_field(self, free: np.ndarray) -> GridFunction:
        v = np.zeros(self.plate.n_nodes)
        v[self.free_plate] = free
        return GridFunction(grid=self.plate, values=v)

    # ------------------------------------------------------------------
    # operator actions
    # ------------------------------------------------------------------
    def apply_L(self, f: GridFunction) -> GridFunction:
        """Negative Laplacian with the mixed boundary treatment.

        Rows act on the full field, so values prescribed on the rigid wall
        enter as data; the result is zero off the free set.
        """
        out = (self._S_rows_free @ f.values) / self.M_omega
        return self.chamber_field(out)

    def apply_B(self, f: GridFunction) -> GridFunction:
        out = (self.S_B @ self.plate_free(f)) / self.M_gamma
        return self.plate_field(out)

    def trace(self, f: GridFunction) -> GridFunction:
        """Restriction of a chamber field to the wall (node-value copy)."""
        if f.grid is not self.chamber:
            raise GridMismatchError("field does not live on this chamber grid")
        v = np.zeros(self.plate.n_nodes)
        v[self.free_plate] = f.values[self.plate.chamber_node_index.ravel()[self.free_plate]]
        return GridFunction(grid=self.plate, values=v)

    def h1_seminorm(self, f: GridFunction) -> float:
        u = self.chamber_free(f)
        return float(np.sqrt(max(u @ (self.S @ u), 0.0)))

    def plate_h2_seminorm(self, f: GridFunction) -> float:
        w = self.plate_free(f)
        return float(np.sqrt(max(w @ (self.S_B @ w), 0.0)))

    def plate_h2_seminorm_free(self, w: np.ndarray) -> float:
        return float(np.sqrt(max(w @ (self.S_B @ w), 0.0)))

    def second_difference(self, f: GridFunction) -> np.ndarray:
        """Pointwise discrete Laplacian of a clamped wall field (all nodes)."""
        return self.Dg @ self.plate_free(f)

    # ------------------------------------------------------------------
    # Neumann lift
    # ------------------------------------------------------------------
    def lift(self, p: GridFunction) -> GridFunction:
        """Harmonic extension of Neumann wall data p, vanishing on the rigid wall."""
        q = self._lift_solve(self.coupling @ self.plate_free(p))
        return self.chamber_field(q)

    # ------------------------------------------------------------------
    # measured constants / spectra
    # ------------------------------------------------------------------
    def _sym_pencil(self, S, mdiag):
        scale = 1.0 / np.sqrt(mdiag)
        return sp.diags(scale) @ S @ sp.diags(scale), scale

    def _eig_extreme(self, S, mdiag, which) -> float:
        A, _ = self._sym_pencil(S, mdiag)
        v0 = np.ones(A.shape[0])
        if which == "max":
            val = spla.eigsh(A, k=1, which="LA", v0=v0, return_eigenvectors=False)
        else:
            val = spla.eigsh(A, k=1, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False)
        return float(val[0])

    def eigenmodes_chamber(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        return self._eigenmodes(self.S, self.M_omega, m)

    def eigenmodes_plate(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        return self._eigenmodes(self.S_B, self.M_gamma, m)

    def _eigenmodes(self, S, mdiag, m: int):
        """Lowest m generalized eigenpairs, L2-normalized, deterministic sign."""
        A, scale = self._sym_pencil(S, mdiag)
        if m >= A.shape[0]:
            raise ValueError("too many modes requested for this grid")
        v0 = np.ones(A.shape[0])
        vals, vecs = spla.eigsh(A, k=m, sigma=0.0, which="LM", v0=v0)
        order = np.argsort(vals)
        vals = vals[order]
        vecs = vecs[:, order] * scale[:, None]
        for j in range(m):
            col = vecs[:, j]
            col = col / np.sqrt(col @ (mdiag * col))
            if col[int(np.argmax(np.abs(col)))] < 0:
                col = -col
            vecs[:, j] = col
        return vals, vecs

    def embedding_constant_plate(self) -> float:
        """Sharp discrete constant of |w|_inf <= C |Lap_h w|_2."""
        if self._bend_solve is None:
            self._bend_solve = spla.factorized(self.S_B)
        m = self.S_B.shape[0]
        best = 0.0
        e = np.zeros(m)
        for j in range(m):
            e[j] = 1.0
            best = max(best, self._bend_solve(e)[j])
            e[j] = 0.0
        return float(np.sqrt(best))

    def constants(self) -> GridConstants:
        if self._constants is None:
            lam_min_wave = self._eig_extreme(self.S, self.M_omega, "min")
            lam_min_plate = self._eig_extreme(self.S_B, self.M_gamma, "min")
            self._constants = GridConstants(
                poincare_chamber=1.0 / np.sqrt(lam_min_wave),
                poincare_plate=1.0 / np.sqrt(lam_min_plate),
                embedding_plate=self.embedding_constant_plate(),
                gamma_measure=self.plate.measure,
                lam_max_wave=self._eig_extreme(self.S, self.M_omega, "max"),
                lam_max_plate=self._eig_extreme(self.S_B, self.M_gamma, "max"),
            )
        return self._constants


def assemble(chamber: ChamberGrid, plate: PlateGrid) -> DiscreteOperators:
    """Assemble the coupled operator set for an aligned grid pair."""
    return DiscreteOperators(chamber, plate)


def dtn_lift(ops: DiscreteOperators, p: GridFunction) -> GridFunction:
    return ops.lift(p)


def norm_V(ops: DiscreteOperators, u: GridFunction, w: GridFunction) -> float:
    """Energy norm sqrt(||grad u||^2 + |Lap w|^2) of a chamber/wall pair."""
    return float(np.sqrt(ops.h1_seminorm(u) ** 2 + ops.plate_h2_seminorm(w) ** 2))


def adjointness_defect(ops: DiscreteOperators, p: GridFunction, phi: GridFunction) -> float:
    """Relative defect of a(Lift p, phi) = (p, Tr phi)_gamma for one pair."""
    q = ops.chamber_free(ops.lift(p))
    lhs = float(ops.chamber_free(phi) @ (ops.S @ q))
    rhs = float(ops.plate_free(ops.trace(phi)) @ (ops.M_gamma * ops.plate_free(p)))
    denom = max(abs(lhs), abs(rhs))
    return abs(lhs - rhs) / denom if denom > 0 else 0.0


def adjointness_report(ops: DiscreteOperators, trials: int, seed: int) -> float:
    """Worst relative defect of the lift/trace duality over random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = ops.plate_field(rng.standard_normal(ops.free_plate.size))
        phi = ops.chamber_field(rng.standard_normal(ops.free_chamber.size))
        worst = max(worst, adjointness_defect(ops, p, phi))
    return worst


def dump_matrices(ops: DiscreteOperators, directory) -> list[str]:
    """Write the assembled matrices in 'row col value' coordinate text form."""
    import os

    os.makedirs(directory, exist_ok=True)
    out = []
    items = {
        "chamber_stiffness": ops.S,
        "chamber_mass": sp.diags(ops.M_omega),
        "plate_bending_stiffness": ops.S_B,
        "plate_mass": sp.diags(ops.M_gamma),
        "wall_trace": ops.Tr,
    }
    for name, mat in items.items():
        path = os.path.join(directory, f"{name}.txt")
        coo = mat.tocoo()
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v!r}\n")
        out.append(path)
    return out
