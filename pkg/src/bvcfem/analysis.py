"""Error norms, convergence-rate fits, inf-sup diagnostic, geometry reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import geometry as geo
from .assembly import boundary_mass_primal, facet_primal_trace, stiffness_matrix
from .mesh import Mesh
from .solver import SolutionField
from .spaces import MultiplierSpace, PrimalSpace, quadrature


class DegenerateFit(Exception):
    pass


class TooLarge(Exception):
    pass


@dataclass
class ErrorReport:
    """Per-level record of mesh size, dof counts, error norms and geometry."""

    h: float
    nno: int
    dofs_u: int
    dofs_lambda: int
    err_l2: float
    err_h1: float
    err_lambda: float | None
    triple: float | None
    delta_h: float
    normal_dev: float


def _volume_rule(mesh, degree):
    kind = "triangle" if mesh.cell_kind == "triangle" else "quad"
    return quadrature(kind, degree)


def _field_on_volume(field: SolutionField, rule):
    """Physical points, values and gradients of a primal field, cell-wise."""
    V = field.space
    mesh = V.mesh
    vals, grads = V.tabulate(rule.points)
    origins, J, Jinv, detJ = mesh.affine_maps()
    X = origins[:, None, :] + np.einsum("cab,qb->cqa", J, rule.points)
    cs = field.coefficients[V.cell_dofs_std]
    uh = np.einsum("qi,ci->cq", vals, cs)
    gref = np.einsum("qid,ci->cqd", grads, cs)
    guh = np.einsum("cqd,cde->cqe", gref, Jinv)
    for c, bubs in V.cell_bubbles.items():
        for local_edge, dof in bubs:
            vb, gb = V.bubble_eval(local_edge, rule.points)
            uh[c] += field.coefficients[dof] * vb
            guh[c] += field.coefficients[dof] * (gb @ Jinv[c])
    return X, uh, guh, detJ


def l2_h1_errors(u_field: SolutionField, domain, mesh: Mesh, extra_degree: int = 0):
    """||u - u_h|| and |u - u_h|_H1 on the mesh, elevated-order quadrature."""
    k = u_field.space.degree
    rule = _volume_rule(mesh, 2 * k + 4 + extra_degree)
    X, uh, guh, detJ = _field_on_volume(u_field, rule)
    flat = X.reshape(-1, 2)
    ue = np.asarray(domain.u_exact(flat), dtype=float).reshape(uh.shape)
    ge = np.asarray(domain.grad_u_exact(flat), dtype=float).reshape(guh.shape)
    wd = rule.weights[None, :] * detJ[:, None]
    err_l2 = np.sqrt(np.sum(wd * (uh - ue) ** 2))
    err_h1 = np.sqrt(np.sum(wd[:, :, None] * (guh - ge) ** 2))
    return float(err_l2), float(err_h1)


def field_l2_norm(field: SolutionField) -> float:
    """||v_h|| over the mesh (used e.g. for differences of two solutions)."""
    k = field.space.degree
    rule = _volume_rule(field.space.mesh, 2 * k + 4)
    _, uh, _, detJ = _field_on_volume(field, rule)
    return float(np.sqrt(np.sum(rule.weights[None, :] * detJ[:, None] * uh**2)))


def multiplier_error(
    lambda_field: SolutionField,
    grad_u_exact,
    mesh: Mesh,
    use_exact_normal: bool = False,
    domain=None,
) -> float:
    """||(-n . grad u)|_{facet boundary} - lambda_h||.

    The normal defaults to the facet normal n_h (consistent with
    lambda_h ~ -n_h . grad u_h); use_exact_normal evaluates the true-boundary
    normal at the pullback points instead.
    """
    total = 0.0
    for fidx, facet in enumerate(mesh.boundary_facets):
        g = np.asarray(grad_u_exact(facet.points), dtype=float)
        if use_exact_normal:
            if domain is None:
                raise ValueError("use_exact_normal requires the domain")
            n = geo.exact_normal_batch(domain, facet.pullback)
            target = -np.einsum("qd,qd->q", g, n)
        else:
            target = -(g @ facet.n_h)
        lam = lambda_field.evaluate_on_facet(fidx, facet.s)
        total += np.sum(facet.weights * (target - lam) ** 2)
    return float(np.sqrt(total))


def _facet_field_values(field: SolutionField, facet):
    _, vals, _ = facet_primal_trace(field.space, facet)
    return vals @ field.coefficients[field.space.cell_dofs(facet.cell)]


def triple_norm(v_field, mu_field, mesh: Mesh, h: float) -> float:
    """||grad v|| + ||h^{-1/2} v||_bnd + ||h^{1/2} mu||_bnd for discrete fields."""
    grad_sq = 0.0
    if v_field is not None:
        k = v_field.space.degree
        rule = _volume_rule(mesh, 2 * k + 2)
        _, _, guh, detJ = _field_on_volume(v_field, rule)
        grad_sq = np.sum((rule.weights[None, :] * detJ[:, None])[:, :, None] * guh**2)
    bnd_sq = 0.0
    mu_sq = 0.0
    for fidx, facet in enumerate(mesh.boundary_facets):
        if v_field is not None:
            tv = _facet_field_values(v_field, facet)
            bnd_sq += np.sum(facet.weights * tv**2)
        if mu_field is not None:
            mv = mu_field.evaluate_on_facet(fidx, facet.s)
            mu_sq += np.sum(facet.weights * mv**2)
    return float(np.sqrt(grad_sq) + np.sqrt(bnd_sq / h) + np.sqrt(h * mu_sq))


def error_triple_norm(u_field, lambda_field, domain, mesh: Mesh) -> float:
    """|||(u - u_h, lambda~ - lambda_h)||| with lambda~ = -n_h . grad u."""
    _, err_h1 = l2_h1_errors(u_field, domain, mesh)
    h = mesh.h
    bnd_sq = 0.0
    mu_sq = 0.0
    for fidx, facet in enumerate(mesh.boundary_facets):
        ue = np.asarray(domain.u_exact(facet.points), dtype=float)
        tv = _facet_field_values(u_field, facet)
        bnd_sq += np.sum(facet.weights * (ue - tv) ** 2)
        if lambda_field is not None:
            g = np.asarray(domain.grad_u_exact(facet.points), dtype=float)
            target = -(g @ facet.n_h)
            lam = lambda_field.evaluate_on_facet(fidx, facet.s)
            mu_sq += np.sum(facet.weights * (target - lam) ** 2)
    return float(err_h1 + np.sqrt(bnd_sq / h) + np.sqrt(h * mu_sq))


@dataclass
class RateFit:
    """Log-log slopes: global least squares, last-3 least squares, pairwise."""

    global_fit: float
    last3: float
    pairwise: list


def _ls_slope(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def fit_rates(reports) -> dict:
    """Slopes of log(err) vs log(h) for each norm present in the reports."""
    if len(reports) < 3:
        raise DegenerateFit(f"need at least 3 levels, got {len(reports)}")
    hs = np.array([r.h for r in reports])
    if not np.all(np.diff(hs) < 0):
        raise DegenerateFit("mesh sizes must be strictly decreasing")
    out = {}
    for norm, attr in (("l2", "err_l2"), ("h1", "err_h1"), ("lambda", "err_lambda"), ("triple", "triple")):
        errs = [getattr(r, attr) for r in reports]
        if any(e is None for e in errs):
            continue
        errs = np.array(errs, dtype=float)
        if np.any(errs <= 1e-14):
            raise DegenerateFit(f"{norm} error at/below 1e-14: rate undefined")
        pairwise = [
            float(np.log(errs[i - 1] / errs[i]) / np.log(hs[i - 1] / hs[i]))
            for i in range(1, len(errs))
        ]
        out[norm] = RateFit(
            global_fit=_ls_slope(hs, errs),
            last3=_ls_slope(hs[-3:], errs[-3:]),
            pairwise=pairwise,
        )
    return out


def infsup_diagnostic(V: PrimalSpace, Lam: MultiplierSpace, mesh: Mesh) -> float:
    """Smallest generalized singular value of the coupling B.

    sigma_min^2 is the smallest eigenvalue of B N^{-1} B^T against the scaled
    multiplier mass h M_Lam, where N = K + M_bnd / h realizes the primal norm
    ||grad v|| + ||h^{-1/2} v||_bnd.  Dense; restricted to coarse levels.
    """
    if V.dof_count > 5000:
        raise TooLarge(f"inf-sup diagnostic is coarse-level only ({V.dof_count} dofs)")
    Bd = np.zeros((Lam.dof_count, V.dof_count))
    for fidx, facet in enumerate(mesh.boundary_facets):
        dofs, vals, _ = facet_primal_trace(V, facet)
        psi = Lam.eval(facet.s)
        blk = np.einsum("q,qi,qj->ij", facet.weights, psi, vals)
        Bd[np.ix_(Lam.facet_dofs[fidx], dofs)] += blk
    h = mesh.h
    N = (stiffness_matrix(V) + boundary_mass_primal(V) / h).toarray()
    X = scipy.linalg.solve(N, Bd.T, assume_a="pos")
    G = Bd @ X
    M = h * np.diag(Lam.mass_matrix_diagonal())
    eig = scipy.linalg.eigh(G, M, eigvals_only=True)
    return float(np.sqrt(max(eig[0], 0.0)))


def geometry_report(mesh: Mesh, domain) -> tuple:
    """(delta_h, normal_dev): worst |rho_h| and worst |n_h - n(p_h)|."""
    delta_h = 0.0
    normal_dev = 0.0
    for facet in mesh.boundary_facets:
        delta_h = max(delta_h, float(np.max(np.abs(facet.rho))))
        n_exact = geo.exact_normal_batch(domain, facet.pullback)
        dev = np.linalg.norm(n_exact - facet.n_h[None, :], axis=1)
        normal_dev = max(normal_dev, float(np.max(dev)))
    return delta_h, normal_dev


def error_report(u_field, lambda_field, domain, mesh: Mesh) -> ErrorReport:
    """Assemble the full per-level record for a solved problem."""
    err_l2, err_h1 = l2_h1_errors(u_field, domain, mesh)
    if lambda_field is not None:
        err_lam = multiplier_error(lambda_field, domain.grad_u_exact, mesh)
        dofs_lam = lambda_field.space.dof_count
    else:
        err_lam = None
        dofs_lam = 0
    triple = error_triple_norm(u_field, lambda_field, domain, mesh)
    delta_h, normal_dev = geometry_report(mesh, domain)
    return ErrorReport(
        h=mesh.h,
        nno=mesh.nno,
        dofs_u=u_field.space.dof_count,
        dofs_lambda=dofs_lam,
        err_l2=err_l2,
        err_h1=err_h1,
        err_lambda=err_lam,
        triple=triple,
        delta_h=delta_h,
        normal_dev=normal_dev,
    )
