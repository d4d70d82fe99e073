"""Assembly of the boundary-value-corrected multiplier systems.

Four variants share the interior stiffness (grad u, grad v) and the facet
coupling (u, mu):

* unmodified      -- enforce u_h = g~ on the facet boundary, no correction;
* bvc             -- symmetric correction (u_h, mu) - (rho_h lambda_h, mu);
* taylor          -- non-symmetric correction (u_h + rho_h dn u_h, mu);
* nitsche         -- single-field boundary-value-corrected symmetric Nitsche
                     with penalty gamma = gamma0 / h.

g~ is the Dirichlet data pulled back from the true boundary through the
precomputed facet pullback points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import ImplicitDomain
from .mesh import Mesh, QUAD_EDGES, TRI_EDGES
from .spaces import (
    MultiplierSpace,
    PrimalSpace,
    QUAD_REF_VERTS,
    TRI_REF_VERTS,
    quadrature,
)


class DimensionMismatch(Exception):
    pass


@dataclass
class SaddleSystem:
    """Block system [[K, B^T], [B or Bt_corr, -D]] with right-hand side.

    K[i,j] = (grad phi_j, grad phi_i), B[i,j] = (phi_j, psi_i) on the facet
    boundary, D[i,j] = (rho_h psi_j, psi_i).  The taylor variant replaces the
    second-row coupling by Bt_corr[i,j] = (phi_j + rho_h n_h.grad phi_j, psi_i)
    and drops D.
    """

    K: sp.csr_matrix
    B: sp.csr_matrix
    D: sp.csr_matrix
    Bt_corr: sp.csr_matrix | None
    rhs_u: np.ndarray
    rhs_lam: np.ndarray
    method: str
    V: PrimalSpace
    Lam: MultiplierSpace
    mesh: Mesh

    def full_matrix(self) -> sp.csc_matrix:
        row2 = self.Bt_corr if self.method == "taylor" else self.B
        return sp.bmat([[self.K, self.B.T], [row2, -self.D]], format="csc")

    def full_rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_u, self.rhs_lam])


@dataclass
class NitscheSystem:
    A: sp.csr_matrix
    rhs: np.ndarray
    gamma0: float
    V: PrimalSpace
    mesh: Mesh

    def full_matrix(self) -> sp.csc_matrix:
        return self.A.tocsc()

    def full_rhs(self) -> np.ndarray:
        return self.rhs


def _check_spaces(mesh, V, Lam=None):
    if V.mesh is not mesh:
        raise DimensionMismatch("primal space was built on a different mesh")
    if Lam is not None and Lam.mesh is not mesh:
        raise DimensionMismatch("multiplier space was built on a different mesh")
    if mesh.boundary_facets and mesh.boundary_facets[0].s is None:
        raise DimensionMismatch(
            "facet geometry missing: call precompute_boundary_geometry first"
        )


def stiffness_matrix(V: PrimalSpace) -> sp.csr_matrix:
    """(grad phi_i, grad phi_j) over all cells, bubbles included."""
    mesh = V.mesh
    kind = "triangle" if mesh.cell_kind == "triangle" else "quad"
    rule = quadrature(kind, 2 * (V.degree + 1))
    _, grads = V.tabulate(rule.points)
    _, _, Jinv, detJ = mesh.affine_maps()

    # Reference contraction S[i,j,a,b] folds the quadrature once; per-cell
    # stiffness is then a 2x2 metric contraction (cells are affine).
    S = np.einsum("q,qia,qjb->ijab", rule.weights, grads, grads)
    C = np.einsum("cad,cbd->cab", Jinv, Jinv)
    Kc = np.einsum("ijab,cab->cij", S, C) * detJ[:, None, None]

    shape3 = Kc.shape
    rows = [np.broadcast_to(V.cell_dofs_std[:, :, None], shape3).ravel()]
    cols = [np.broadcast_to(V.cell_dofs_std[:, None, :], shape3).ravel()]
    data = [Kc.ravel()]

    for c, bubs in V.cell_bubbles.items():
        dofs = V.cell_dofs(c)
        _, gall = V.cell_basis(c, rule.points)
        gp = np.einsum("qnd,de->qne", gall, Jinv[c])
        Kloc = detJ[c] * np.einsum("q,qia,qja->ij", rule.weights, gp, gp)
        ii, jj = np.meshgrid(np.arange(len(dofs)), np.arange(len(dofs)), indexing="ij")
        mask = (ii >= V.nb_std) | (jj >= V.nb_std)  # std x std is in the bulk
        rows.append(dofs[ii[mask]])
        cols.append(dofs[jj[mask]])
        data.append(Kloc[mask])

    n = V.dof_count
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()


def load_vector(V: PrimalSpace, f) -> np.ndarray:
    """(f, phi_i) over all cells."""
    mesh = V.mesh
    kind = "triangle" if mesh.cell_kind == "triangle" else "quad"
    rule = quadrature(kind, 2 * V.degree + 3)
    vals, _ = V.tabulate(rule.points)
    origins, J, _, detJ = mesh.affine_maps()
    X = origins[:, None, :] + np.einsum("cab,qb->cqa", J, rule.points)
    fv = np.asarray(f(X.reshape(-1, 2)), dtype=float).reshape(mesh.num_cells, -1)
    Fc = np.einsum("q,qi,cq->ci", rule.weights, vals, fv) * detJ[:, None]

    rhs = np.zeros(V.dof_count)
    np.add.at(rhs, V.cell_dofs_std, Fc)
    for c, bubs in V.cell_bubbles.items():
        for local_edge, dof in bubs:
            vb, _ = V.bubble_eval(local_edge, rule.points)
            rhs[dof] += detJ[c] * np.sum(rule.weights * vb * fv[c])
    return rhs


def _facet_ref_points(mesh, facet, s):
    if mesh.cell_kind == "triangle":
        ref, edges = TRI_REF_VERTS, TRI_EDGES
    else:
        ref, edges = QUAD_REF_VERTS, QUAD_EDGES
    a, b = edges[facet.local_edge]
    return ref[a][None, :] + s[:, None] * (ref[b] - ref[a])[None, :]


def facet_primal_trace(V: PrimalSpace, facet):
    """(dofs, values, normal derivatives) of cell basis at the facet points."""
    mesh = V.mesh
    pts = _facet_ref_points(mesh, facet, facet.s)
    vals, grads = V.cell_basis(facet.cell, pts)
    _, _, Jinv, _ = mesh.affine_maps()
    gp = np.einsum("qnd,de->qne", grads, Jinv[facet.cell])
    dn = gp @ facet.n_h
    return V.cell_dofs(facet.cell), vals, dn


def boundary_mass_primal(V: PrimalSpace) -> sp.csr_matrix:
    """(phi_i, phi_j) over the facet boundary (used by the inf-sup check)."""
    rows, cols, data = [], [], []
    for facet in V.mesh.boundary_facets:
        dofs, vals, _ = facet_primal_trace(V, facet)
        blk = np.einsum("q,qi,qj->ij", facet.weights, vals, vals)
        ii, jj = np.meshgrid(dofs, dofs, indexing="ij")
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        data.append(blk.ravel())
    n = V.dof_count
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()


def _facet_blocks(V, Lam, domain, with_taylor):
    mesh = V.mesh
    nl, nu = Lam.dof_count, V.dof_count
    b_rows, b_cols, b_vals = [], [], []
    bt_vals = []
    d_rows, d_cols, d_vals = [], [], []
    rhs_lam = np.zeros(nl)
    for fidx, facet in enumerate(mesh.boundary_facets):
        dofs, vals, dn = facet_primal_trace(V, facet)
        psi = Lam.eval(facet.s)
        w = facet.weights
        ldofs = Lam.facet_dofs[fidx]

        Bblk = np.einsum("q,qi,qj->ij", w, psi, vals)
        ii, jj = np.meshgrid(ldofs, dofs, indexing="ij")
        b_rows.append(ii.ravel())
        b_cols.append(jj.ravel())
        b_vals.append(Bblk.ravel())
        if with_taylor:
            Bt = np.einsum("q,qi,qj->ij", w, psi, vals + facet.rho[:, None] * dn)
            bt_vals.append(Bt.ravel())

        Dblk = np.einsum("q,q,qi,qj->ij", w, facet.rho, psi, psi)
        li, lj = np.meshgrid(ldofs, ldofs, indexing="ij")
        d_rows.append(li.ravel())
        d_cols.append(lj.ravel())
        d_vals.append(Dblk.ravel())

        gt = np.asarray(domain.g_dirichlet(facet.pullback), dtype=float)
        rhs_lam[ldofs] += psi.T @ (w * gt)

    B = sp.coo_matrix(
        (np.concatenate(b_vals), (np.concatenate(b_rows), np.concatenate(b_cols))),
        shape=(nl, nu),
    ).tocsr()
    D = sp.coo_matrix(
        (np.concatenate(d_vals), (np.concatenate(d_rows), np.concatenate(d_cols))),
        shape=(nl, nl),
    ).tocsr()
    Bt = None
    if with_taylor:
        Bt = sp.coo_matrix(
            (np.concatenate(bt_vals), (np.concatenate(b_rows), np.concatenate(b_cols))),
            shape=(nl, nu),
        ).tocsr()
    return B, D, Bt, rhs_lam


def assemble_bvc(mesh: Mesh, V: PrimalSpace, Lam: MultiplierSpace, domain: ImplicitDomain) -> SaddleSystem:
    """The corrected method: (u, mu) - (rho_h lambda, mu) = (g~, mu)."""
    _check_spaces(mesh, V, Lam)
    B, D, _, rhs_lam = _facet_blocks(V, Lam, domain, with_taylor=False)
    return SaddleSystem(
        K=stiffness_matrix(V),
        B=B,
        D=D,
        Bt_corr=None,
        rhs_u=load_vector(V, domain.f_rhs),
        rhs_lam=rhs_lam,
        method="bvc",
        V=V,
        Lam=Lam,
        mesh=mesh,
    )


def assemble_unmodified(mesh: Mesh, V: PrimalSpace, Lam: MultiplierSpace, domain: ImplicitDomain) -> SaddleSystem:
    """No correction: (u, mu) = (g~, mu); D is identically zero."""
    _check_spaces(mesh, V, Lam)
    B, _, _, rhs_lam = _facet_blocks(V, Lam, domain, with_taylor=False)
    nl = Lam.dof_count
    return SaddleSystem(
        K=stiffness_matrix(V),
        B=B,
        D=sp.csr_matrix((nl, nl)),
        Bt_corr=None,
        rhs_u=load_vector(V, domain.f_rhs),
        rhs_lam=rhs_lam,
        method="unmodified",
        V=V,
        Lam=Lam,
        mesh=mesh,
    )


def assemble_taylor(mesh: Mesh, V: PrimalSpace, Lam: MultiplierSpace, domain: ImplicitDomain) -> SaddleSystem:
    """Taylor correction in the constraint: (u + rho_h dn u, mu) = (g~, mu)."""
    _check_spaces(mesh, V, Lam)
    B, _, Bt, rhs_lam = _facet_blocks(V, Lam, domain, with_taylor=True)
    nl = Lam.dof_count
    return SaddleSystem(
        K=stiffness_matrix(V),
        B=B,
        D=sp.csr_matrix((nl, nl)),
        Bt_corr=Bt,
        rhs_u=load_vector(V, domain.f_rhs),
        rhs_lam=rhs_lam,
        method="taylor",
        V=V,
        Lam=Lam,
        mesh=mesh,
    )


def assemble_nitsche(mesh: Mesh, V: PrimalSpace, domain: ImplicitDomain, gamma0: float) -> NitscheSystem:
    """Boundary-value-corrected symmetric Nitsche with gamma = gamma0 / h.

    Facet terms, with dn = n_h . grad and corr(v) = v + rho_h dn v:
        -(dn w, corr(v)) - (corr(w), dn v) + (rho_h dn w, dn v)
        + gamma (corr(w), corr(v))
    and data terms (f, v) - (g~, dn v) + gamma (g~, corr(v)).
    """
    _check_spaces(mesh, V)
    if gamma0 <= 0:
        raise DimensionMismatch(f"gamma0 must be positive, got {gamma0}")
    gamma = gamma0 / mesh.h

    K = stiffness_matrix(V)
    rhs = load_vector(V, domain.f_rhs)
    rows, cols, data = [], [], []
    for facet in mesh.boundary_facets:
        dofs, vals, dn = facet_primal_trace(V, facet)
        w = facet.weights
        corr = vals + facet.rho[:, None] * dn
        M = (
            -np.einsum("q,qj,qi->ij", w, dn, corr)
            - np.einsum("q,qj,qi->ij", w, corr, dn)
            + np.einsum("q,q,qj,qi->ij", w, facet.rho, dn, dn)
            + gamma * np.einsum("q,qj,qi->ij", w, corr, corr)
        )
        ii, jj = np.meshgrid(dofs, dofs, indexing="ij")
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        data.append(M.ravel())

        gt = np.asarray(domain.g_dirichlet(facet.pullback), dtype=float)
        rhs[dofs] += -dn.T @ (w * gt) + gamma * (corr.T @ (w * gt))

    n = V.dof_count
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr() + K
    return NitscheSystem(A=A, rhs=rhs, gamma0=gamma0, V=V, mesh=mesh)


def dump_matrix(A, path) -> None:
    """Coordinate text dump 'i j value', one entry per line."""
    coo = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def dump_system(system, prefix) -> None:
    """Debug dump of all blocks of a system under the given path prefix."""
    if isinstance(system, NitscheSystem):
        dump_matrix(system.A, f"{prefix}-A.txt")
        return
    dump_matrix(system.K, f"{prefix}-K.txt")
    dump_matrix(system.B, f"{prefix}-B.txt")
    dump_matrix(system.D, f"{prefix}-D.txt")
    if system.Bt_corr is not None:
        dump_matrix(system.Bt_corr, f"{prefix}-Bt.txt")
    dump_matrix(system.full_matrix(), f"{prefix}-full.txt")
