"""Direct sparse solution of the assembled systems.

One robust path for every system: reverse Cuthill-McKee reordering followed
by SuperLU with partial pivoting.  The relative residual contract
||Az - b|| / max(||b||, 1e-30) <= 1e-10 is checked after every solve (with a
single iterative-refinement step as backup).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from .assembly import NitscheSystem, SaddleSystem
from .spaces import MultiplierSpace, PrimalSpace


class SolverError(Exception):
    pass


class SingularSystem(SolverError):
    """Factorization hit a (near-)zero pivot; dof_index = -1 when unknown."""

    def __init__(self, message, dof_index=-1):
        super().__init__(message)
        self.dof_index = dof_index


PIVOT_RTOL = 1e-14
RESIDUAL_RTOL = 1e-10


@dataclass
class SolutionField:
    """Coefficients in a primal or multiplier space, with point evaluation."""

    space: object
    coefficients: np.ndarray

    def __post_init__(self):
        if len(self.coefficients) != self.space.dof_count:
            raise SolverError(
                f"coefficient vector length {len(self.coefficients)} does not "
                f"match dof count {self.space.dof_count}"
            )

    def evaluate_in_cell(self, c, ref_pts):
        vals, _ = self.space.cell_basis(c, ref_pts)
        return vals @ self.coefficients[self.space.cell_dofs(c)]

    def gradient_in_cell(self, c, ref_pts):
        _, grads = self.space.cell_basis(c, ref_pts)
        _, _, Jinv, _ = self.space.mesh.affine_maps()
        gp = np.einsum("qnd,de->qne", grads, Jinv[c])
        return np.einsum("qne,n->qe", gp, self.coefficients[self.space.cell_dofs(c)])

    def evaluate_on_facet(self, fidx, s):
        psi = self.space.eval(np.asarray(s))
        return psi @ self.coefficients[self.space.facet_dofs[fidx]]

    def vertex_values(self):
        """Values at mesh vertices (vertex dofs lead the Lagrange numbering)."""
        return self.coefficients[: self.space.mesh.nno]


def solve_linear(A, b) -> np.ndarray:
    """Solve A z = b by RCM + sparse LU, enforcing the residual contract."""
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise SolverError(f"matrix is not square: {A.shape}")
    if A.shape[0] != b.shape[0]:
        raise SolverError(f"rhs length {b.shape[0]} does not match {A.shape}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b)

    perm = reverse_cuthill_mckee(sp.csr_matrix(A), symmetric_mode=True)
    Ap = A[perm, :][:, perm].tocsc()
    anorm = float(np.max(np.abs(A.data))) if A.nnz else 0.0
    try:
        lu = splu(Ap)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SingularSystem(f"factorization failed: {exc}") from exc

    udiag = np.abs(lu.U.diagonal())
    j = int(np.argmin(udiag))
    if udiag[j] < PIVOT_RTOL * anorm:
        dof = int(perm[lu.perm_c[j]])
        raise SingularSystem(
            f"near-zero pivot {udiag[j]:.3e} (|A|max={anorm:.3e}) at dof {dof}",
            dof_index=dof,
        )

    z = np.empty_like(b)
    z[perm] = lu.solve(b[perm])
    resid = b - A @ z
    relres = float(np.linalg.norm(resid)) / bnorm
    if relres > RESIDUAL_RTOL:
        z[perm] += lu.solve(resid[perm])
        relres = float(np.linalg.norm(b - A @ z)) / bnorm
        if relres > RESIDUAL_RTOL:
            raise SolverError(f"residual contract violated: relres={relres:.3e}")
    return z


def solve(system):
    """Solve an assembled system.

    Returns (u_field, lambda_field); lambda_field is None for Nitsche.
    """
    if isinstance(system, NitscheSystem):
        z = solve_linear(system.full_matrix(), system.full_rhs())
        return SolutionField(system.V, z), None
    if not isinstance(system, SaddleSystem):
        raise SolverError(f"cannot solve a {type(system).__name__}")
    z = solve_linear(system.full_matrix(), system.full_rhs())
    nu = system.V.dof_count
    return (
        SolutionField(system.V, z[:nu]),
        SolutionField(system.Lam, z[nu:]),
    )
