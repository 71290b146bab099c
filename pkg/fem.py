#!/usr/bin/env python3

# fem.py
"""
Linear elasticity on structured grids of unit square (2D, plane stress) or
unit cube (3D) elements.

Mesh conventions:
- Nodes are numbered x-fastest like elements:
  node = i + (nx+1)*(j + (ny+1)*k)
- dof = node*dim + component
- Local element nodes, counter-clockwise from the element origin
  3---2        (the 3D element repeats the square at k and k+1)
  |   |
  0---1
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from grid import DensityField, GridDims

logger = logging.getLogger(__name__)

E_MIN_RATIO = 1e-9
CG_RTOL = 1e-8
SOLVERS = ("auto", "direct", "cg", "mgcg")


class FEError(Exception):
    """Base class for finite element errors."""
    pass


class SingularSystemError(FEError):
    """Raised when the stiffness system cannot be solved uniquely."""
    pass


class SolverConvergenceError(FEError):
    """Raised when an iterative solve stops before reaching its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


_NODE_SIGNS_2D = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
_NODE_SIGNS_3D = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                           [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=float)


class StructuredMesh:
    """Node numbering and element-to-dof connectivity of a structured grid."""

    def __init__(self, dims: GridDims):
        self.dims = dims
        self.dim = dims.dim
        self.node_shape = (dims.nx + 1, dims.ny + 1, dims.nz + 1 if self.dim == 3 else 1)
        self.nnodes = int(np.prod(self.node_shape))
        self.ndof = self.nnodes * self.dim
        self.edof = self._edof_matrix()

    def node_index(self, i, j, k=0):
        nx1, ny1, _ = self.node_shape
        return np.asarray(i) + nx1 * (np.asarray(j) + ny1 * np.asarray(k))

    def node_coordinates(self) -> np.ndarray:
        """(nnodes x 3) integer node coordinates in x-fastest order."""
        nx1, ny1, nz1 = self.node_shape
        k, j, i = np.meshgrid(np.arange(nz1), np.arange(ny1), np.arange(nx1), indexing="ij")
        return np.column_stack((i.ravel(), j.ravel(), k.ravel()))

    def _edof_matrix(self) -> np.ndarray:
        d = self.dims
        k, j, i = np.meshgrid(np.arange(d.nz), np.arange(d.ny), np.arange(d.nx), indexing="ij")
        i, j, k = i.ravel(), j.ravel(), k.ravel()
        corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
        layers = [0] if self.dim == 2 else [0, 1]
        nodes = [self.node_index(i + di, j + dj, k + dk) for dk in layers for di, dj in corners]
        nodes = np.column_stack(nodes)
        edof = nodes[:, :, None] * self.dim + np.arange(self.dim)[None, None, :]
        return edof.reshape(d.count, -1)


@lru_cache(maxsize=16)
def mesh_for(dims: GridDims) -> StructuredMesh:
    return StructuredMesh(dims)


@dataclass(frozen=True)
class ElementStiffness:
    matrix: np.ndarray
    dim: int
    E: float
    nu: float


def _constitutive(dim: int, E: float, nu: float) -> np.ndarray:
    if dim == 2:
        return E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    c = E / ((1 + nu) * (1 - 2 * nu))
    D = np.zeros((6, 6))
    D[:3, :3] = nu
    np.fill_diagonal(D[:3, :3], 1 - nu)
    D[3:, 3:] = np.eye(3) * (1 - 2 * nu) / 2
    return c * D


def _strain_displacement(dim: int, point: np.ndarray) -> np.ndarray:
    """B matrix at a natural-coordinate point of a unit element."""
    signs = _NODE_SIGNS_2D if dim == 2 else _NODE_SIGNS_3D
    nn = len(signs)
    grads = np.empty((nn, dim))
    for a in range(dim):
        g = signs[:, a] / 2 ** dim
        for b in range(dim):
            if b != a:
                g = g * (1 + signs[:, b] * point[b])
        # d(xi)/dx = 2 for a unit element
        grads[:, a] = 2 * g
    if dim == 2:
        B = np.zeros((3, 2 * nn))
        B[0, 0::2] = grads[:, 0]
        B[1, 1::2] = grads[:, 1]
        B[2, 0::2] = grads[:, 1]
        B[2, 1::2] = grads[:, 0]
        return B
    B = np.zeros((6, 3 * nn))
    B[0, 0::3] = grads[:, 0]
    B[1, 1::3] = grads[:, 1]
    B[2, 2::3] = grads[:, 2]
    B[3, 0::3] = grads[:, 1]
    B[3, 1::3] = grads[:, 0]
    B[4, 1::3] = grads[:, 2]
    B[4, 2::3] = grads[:, 1]
    B[5, 0::3] = grads[:, 2]
    B[5, 2::3] = grads[:, 0]
    return B


def element_stiffness(dim: int, E: float = 1.0, nu: float = 0.3) -> ElementStiffness:
    """
    Stiffness of one unit element, integrated with 2-point Gauss quadrature
    per axis (exact for bilinear/trilinear shape functions).

    Raises:
        FEError: for dim not in (2, 3), E <= 0 or nu outside [0, 0.5)
    """
    if dim not in (2, 3):
        raise FEError(f"Element dimension must be 2 or 3, got {dim}")
    if not E > 0:
        raise FEError(f"Young's modulus must be positive, got {E}")
    if not 0 <= nu < 0.5:
        raise FEError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    D = _constitutive(dim, E, nu)
    gp = 1 / np.sqrt(3)
    det_j = 0.5 ** dim
    size = (4 if dim == 2 else 8) * dim
    ke = np.zeros((size, size))
    for point in np.array(np.meshgrid(*[[-gp, gp]] * dim, indexing="ij")).reshape(dim, -1).T:
        B = _strain_displacement(dim, point)
        ke += B.T @ D @ B * det_j
    ke = 0.5 * (ke + ke.T)
    return ElementStiffness(ke, dim, float(E), float(nu))


@dataclass(frozen=True)
class LoadCase:
    fixed_dofs: np.ndarray
    load_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    load_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "fixed_dofs", np.unique(np.asarray(self.fixed_dofs, dtype=int)))
        object.__setattr__(self, "load_dofs", np.asarray(self.load_dofs, dtype=int).ravel())
        object.__setattr__(self, "load_values", np.asarray(self.load_values, dtype=float).ravel())
        if self.load_dofs.size != self.load_values.size:
            raise FEError("Load dofs and load values differ in length")

    @classmethod
    def from_loads(cls, fixed_dofs: Iterable[int], loads: Dict[int, float]) -> "LoadCase":
        dofs = sorted(loads)
        return cls(np.array(list(fixed_dofs), dtype=int), np.array(dofs, dtype=int),
                   np.array([loads[d] for d in dofs], dtype=float))

    def force_vector(self, ndof: int) -> np.ndarray:
        f = np.zeros(ndof)
        np.add.at(f, self.load_dofs, self.load_values)
        return f

    def validate(self, mesh: StructuredMesh) -> None:
        """Check dof ranges and that the constraints can remove rigid-body motion."""
        for name, dofs in (("fixed", self.fixed_dofs), ("loaded", self.load_dofs)):
            if dofs.size and (dofs.min() < 0 or dofs.max() >= mesh.ndof):
                raise FEError(f"Some {name} dofs lie outside [0, {mesh.ndof})")
        dim = mesh.dim
        components = set((self.fixed_dofs % dim).tolist())
        if len(components) < dim or self.fixed_dofs.size < dim * (dim + 1) // 2:
            raise SingularSystemError(
                f"{self.fixed_dofs.size} fixed dofs over components {sorted(components)} "
                f"cannot remove rigid-body motion in {dim}D")


@dataclass(frozen=True)
class FEState:
    displacements: np.ndarray
    compliance: float
    iterations: int = 0


def stiffness_scale(rho: np.ndarray, p: float, e_min: float = E_MIN_RATIO) -> np.ndarray:
    """Modified SIMP modulus factor e_min + rho^p (1 - e_min)."""
    return e_min + np.asarray(rho) ** p * (1 - e_min)


def assemble(mesh: StructuredMesh, scale: np.ndarray, ke: ElementStiffness) -> sp.csr_matrix:
    nde = mesh.edof.shape[1]
    iK = np.repeat(mesh.edof, nde, axis=1).ravel()
    jK = np.tile(mesh.edof, (1, nde)).ravel()
    sK = (ke.matrix.ravel()[None, :] * scale[:, None]).ravel()
    return sp.coo_matrix((sK, (iK, jK)), shape=(mesh.ndof, mesh.ndof)).tocsr()


def _free_mask(mesh: StructuredMesh, lc: LoadCase) -> np.ndarray:
    free = np.ones(mesh.ndof, dtype=bool)
    free[lc.fixed_dofs] = False
    return free


def _solve_direct(K: sp.csr_matrix, f: np.ndarray, free: np.ndarray) -> Tuple[np.ndarray, int]:
    K_ff = K[free, :][:, free].tocsc()
    try:
        lu = spla.splu(K_ff, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as e:
        raise SingularSystemError(f"Stiffness matrix is singular: {e}")
    u = np.zeros(K.shape[0])
    u[free] = lu.solve(f[free])
    if not np.all(np.isfinite(u)):
        raise SingularSystemError("Direct solve produced non-finite displacements")
    return u, 0


def _run_cg(A, b: np.ndarray, M, x0: Optional[np.ndarray], label: str) -> Tuple[np.ndarray, int]:
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    maxiter = 10 * b.size
    x, info = spla.cg(A, b, x0=x0, rtol=CG_RTOL, atol=0.0, maxiter=maxiter, M=M, callback=count)
    bnorm = np.linalg.norm(b)
    residual = np.linalg.norm(b - A @ x) / bnorm if bnorm > 0 else 0.0
    if info != 0 or not np.all(np.isfinite(x)):
        raise SolverConvergenceError(f"{label} did not converge", residual, iterations)
    logger.debug(f"{label} converged in {iterations} iterations, residual {residual:.2e}")
    return x, iterations


def _solve_jacobi_cg(mesh: StructuredMesh, scale: np.ndarray, ke: ElementStiffness, f: np.ndarray,
                     free: np.ndarray, x0: Optional[np.ndarray]) -> Tuple[np.ndarray, int]:
    """Matrix-free element-by-element CG on the free dofs."""
    edof = mesh.edof
    flat = edof.ravel()
    kmat = ke.matrix
    ndof = mesh.ndof

    def matvec(v):
        u = np.zeros(ndof)
        u[free] = np.ravel(v)
        fe = (u[edof] @ kmat) * scale[:, None]
        # bincount sums each node in a fixed order, independent of partitioning
        return np.bincount(flat, weights=fe.ravel(), minlength=ndof)[free]

    diag = np.bincount(flat, weights=(scale[:, None] * np.diag(kmat)[None, :]).ravel(), minlength=ndof)[free]
    if np.any(diag <= 0):
        raise SingularSystemError("Stiffness diagonal has non-positive entries")
    n = int(free.sum())
    A = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    M = spla.LinearOperator((n, n), matvec=lambda r: np.ravel(r) / diag, dtype=float)
    start = None if x0 is None else x0[free]
    x, its = _run_cg(A, f[free], M, start, "Jacobi-preconditioned CG")
    u = np.zeros(ndof)
    u[free] = x
    return u, its


def _prolongation_1d(n: int) -> sp.csr_matrix:
    """Linear interpolation from ceil(n/2) coarse elements to n fine elements (node based)."""
    nc = (n + 1) // 2
    positions = np.minimum(2 * np.arange(nc + 1), n)
    fine = np.arange(n + 1)
    k = np.clip(np.searchsorted(positions, fine, side="right") - 1, 0, nc - 1)
    span = positions[k + 1] - positions[k]
    t = (fine - positions[k]) / span
    rows = np.concatenate((fine, fine))
    cols = np.concatenate((k, k + 1))
    vals = np.concatenate((1 - t, t))
    keep = vals > 0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n + 1, nc + 1))


class MultigridPreconditioner:
    """
    Geometric multigrid V-cycle with Galerkin coarse operators and damped
    Jacobi smoothing, applied to the full (constrained) stiffness system.
    """

    def __init__(self, A: sp.csr_matrix, dims: GridDims, min_coarse_dofs: int = 3000,
                 max_levels: int = 8, omega: float = 0.6, sweeps: int = 2):
        self.omega = omega
        self.sweeps = sweeps
        self.levels: List[Tuple[sp.csr_matrix, Optional[sp.csr_matrix], np.ndarray]] = []
        dim = dims.dim
        counts = dims.as_list()
        while True:
            diag = A.diagonal()
            if len(self.levels) + 1 >= max_levels or A.shape[0] <= min_coarse_dofs \
                    or all(n == 1 for n in counts):
                self.levels.append((A, None, 1.0 / diag))
                break
            factors = [_prolongation_1d(n) for n in counts]
            P = factors[0]
            for factor in factors[1:]:
                P = sp.kron(factor, P, format="csr")
            P = sp.kron(P, sp.identity(dim, format="csr"), format="csr")
            self.levels.append((A, P, 1.0 / diag))
            A = (P.T @ A @ P).tocsr()
            counts = [(n + 1) // 2 for n in counts]
        self.coarse = spla.splu(self.levels[-1][0].tocsc())
        logger.debug(f"Multigrid with {len(self.levels)} levels, coarsest {self.levels[-1][0].shape[0]} dofs")

    def _cycle(self, level: int, r: np.ndarray) -> np.ndarray:
        A, P, dinv = self.levels[level]
        if P is None:
            return self.coarse.solve(r)
        x = self.omega * dinv * r
        for _ in range(self.sweeps - 1):
            x += self.omega * dinv * (r - A @ x)
        x += P @ self._cycle(level + 1, P.T @ (r - A @ x))
        for _ in range(self.sweeps):
            x += self.omega * dinv * (r - A @ x)
        return x

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._cycle(0, np.ravel(r))


def _solve_mgcg(mesh: StructuredMesh, K: sp.csr_matrix, f: np.ndarray, free: np.ndarray,
                x0: Optional[np.ndarray]) -> Tuple[np.ndarray, int]:
    keep = sp.diags(free.astype(float))
    A = (keep @ K @ keep + sp.diags((~free).astype(float))).tocsr()
    b = np.where(free, f, 0.0)
    try:
        mg = MultigridPreconditioner(A, mesh.dims)
    except RuntimeError as e:
        raise SingularSystemError(f"Coarse multigrid operator is singular: {e}")
    n = A.shape[0]
    M = spla.LinearOperator((n, n), matvec=mg, dtype=float)
    start = None if x0 is None else np.where(free, x0, 0.0)
    u, its = _run_cg(A, b, M, start, "Multigrid-preconditioned CG")
    u[~free] = 0.0
    return u, its


def resolve_solver(name: str, dims: GridDims) -> str:
    if name not in SOLVERS:
        raise FEError(f"Unknown solver '{name}', expected one of {', '.join(SOLVERS)}")
    if name == "auto":
        return "direct" if dims.dim == 2 else "mgcg"
    return name


def solve(field: DensityField, p: float, lc: LoadCase, ke: ElementStiffness,
          solver: str = "auto", x0: Optional[np.ndarray] = None) -> FEState:
    """
    Solve K(rho) u = f with K_e = (E_min + rho_e^p (E_0 - E_min)) K_e^0.

    Raises:
        SingularSystemError: constraints cannot remove rigid-body motion
        SolverConvergenceError: an iterative solver hit its iteration cap
    """
    if p < 1:
        raise FEError(f"Penalization exponent must be >= 1, got {p}")
    mesh = mesh_for(field.dims)
    if ke.dim != mesh.dim:
        raise FEError(f"{ke.dim}D element stiffness used on a {mesh.dim}D grid")
    lc.validate(mesh)
    f = lc.force_vector(mesh.ndof)
    if not np.any(f):
        return FEState(np.zeros(mesh.ndof), 0.0)
    free = _free_mask(mesh, lc)
    scale = stiffness_scale(field.values, p)
    kind = resolve_solver(solver, field.dims)
    if kind == "direct":
        u, its = _solve_direct(assemble(mesh, scale, ke), f, free)
    elif kind == "cg":
        u, its = _solve_jacobi_cg(mesh, scale, ke, f, free, x0)
    else:
        u, its = _solve_mgcg(mesh, assemble(mesh, scale, ke), f, free, x0)
    return FEState(u, float(f @ u), its)


def element_strain_energy(field: DensityField, state: FEState, ke: ElementStiffness) -> np.ndarray:
    """u_e^T K_e^0 u_e per element (non-negative)."""
    ue = state.displacements[mesh_for(field.dims).edof]
    return np.maximum(np.einsum("ij,jk,ik->i", ue, ke.matrix, ue), 0.0)


def compliance_sensitivity(field: DensityField, p: float, state: FEState, ke: ElementStiffness) -> np.ndarray:
    """dc/drho_e = -p rho_e^(p-1) (E_0 - E_min) u_e^T K_e^0 u_e."""
    ce = element_strain_energy(field, state, ke)
    return -p * field.values ** (p - 1) * (1 - E_MIN_RATIO) * ce
