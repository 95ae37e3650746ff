"""Warped-product geometry of Killing graphs over a leaf domain.

The ambient metric is sigma + (1/gamma) ds^2 with Killing field Y = d/ds,
|Y|^2 = 1/gamma.  All evaluators are pure functions of their inputs and
vectorize over batches of points; nothing here mutates shared state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expressions import parse_expression

__all__ = [
    "MetricField",
    "GraphPointFrame",
    "DegenerateStencilError",
    "slope_factor",
    "graph_normal",
    "contact_angle",
    "mean_curvature_strong",
    "mean_curvature_from_derivatives",
    "recover_vertex_gradients",
    "vertex_slope_factors",
    "quadratic_patch_fit",
]


class DegenerateStencilError(RuntimeError):
    """Raised when a vertex patch cannot support a quadratic fit."""


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    pts = x.reshape(1, dim) if squeeze else x.reshape(-1, dim)
    return pts, squeeze


class MetricField:
    """Leaf metric sigma and warping gamma = 1/|Y|^2 with derivatives.

    All callables are vectorized: for points of shape (m, dim) they return
    sigma (m, dim, dim), sigma_inv (m, dim, dim), sqrt_det_sigma (m,),
    gamma (m,) and grad_gamma (m, dim).  Presets: "euclidean", "product",
    "radial-warp", "custom-expression".
    """

    def __init__(self, dim, sigma, sigma_inv, sqrt_det_sigma, gamma, grad_gamma,
                 preset="custom-expression"):
        self.dim = dim
        self.sigma = sigma
        self.sigma_inv = sigma_inv
        self.sqrt_det_sigma = sqrt_det_sigma
        self.gamma = gamma
        self.grad_gamma = grad_gamma
        self.preset = preset

    # -- constructors ---------------------------------------------------------

    @classmethod
    def euclidean(cls, dim):
        eye = np.eye(dim)

        def sigma(x):
            pts, _ = _as_points(x, dim)
            return np.broadcast_to(eye, (len(pts), dim, dim)).copy()

        def sqrt_det(x):
            pts, _ = _as_points(x, dim)
            return np.ones(len(pts))

        def gamma(x):
            pts, _ = _as_points(x, dim)
            return np.ones(len(pts))

        def grad_gamma(x):
            pts, _ = _as_points(x, dim)
            return np.zeros((len(pts), dim))

        return cls(dim, sigma, sigma, sqrt_det, gamma, grad_gamma, preset="euclidean")

    @classmethod
    def from_expressions(cls, dim, gamma="1", sigma_conformal="1", preset=None):
        """Conformal leaf metric sigma = c(x)^2 I with warping gamma(x).

        Both data are expression strings in x1[, x2, r]; gradients of gamma
        are produced symbolically so the consistency invariant holds exactly.
        """
        gamma_expr = parse_expression(gamma) if isinstance(gamma, str) else gamma
        conf_expr = (parse_expression(sigma_conformal)
                     if isinstance(sigma_conformal, str) else sigma_conformal)
        dgam = [gamma_expr.derivative(v, dim=dim) for v in ("x1", "x2")[:dim]]
        if preset is None:
            if str(conf_expr) == "1" and str(gamma_expr) == "1":
                preset = "euclidean"
            elif str(gamma_expr) == "1":
                preset = "product"
            else:
                preset = "custom-expression"

        def env(pts):
            e = {"x1": pts[:, 0]}
            if dim > 1:
                e["x2"] = pts[:, 1]
            return e

        def conf(x):
            pts, _ = _as_points(x, dim)
            c = np.broadcast_to(np.asarray(conf_expr.evaluate(**env(pts)), dtype=float),
                                (len(pts),))
            if np.any(c <= 0):
                raise ValueError("sigma conformal factor must be positive")
            return c

        def sigma(x):
            pts, _ = _as_points(x, dim)
            out = np.zeros((len(pts), dim, dim))
            c2 = conf(pts) ** 2
            for i in range(dim):
                out[:, i, i] = c2
            return out

        def sigma_inv(x):
            pts, _ = _as_points(x, dim)
            out = np.zeros((len(pts), dim, dim))
            c2 = conf(pts) ** 2
            for i in range(dim):
                out[:, i, i] = 1.0 / c2
            return out

        def sqrt_det(x):
            pts, _ = _as_points(x, dim)
            return conf(pts) ** dim

        def gamma_fn(x):
            pts, _ = _as_points(x, dim)
            g = np.broadcast_to(np.asarray(gamma_expr.evaluate(**env(pts)), dtype=float),
                                (len(pts),))
            if np.any(g <= 0):
                raise ValueError("gamma must be positive")
            return g.copy()

        def grad_gamma(x):
            pts, _ = _as_points(x, dim)
            out = np.zeros((len(pts), dim))
            for i, d in enumerate(dgam):
                out[:, i] = np.broadcast_to(
                    np.asarray(d.evaluate(**env(pts)), dtype=float), (len(pts),))
            return out

        return cls(dim, sigma, sigma_inv, sqrt_det, gamma_fn, grad_gamma, preset=preset)

    @classmethod
    def radial_warp(cls, dim, gamma, sigma_conformal="1"):
        return cls.from_expressions(dim, gamma=gamma, sigma_conformal=sigma_conformal,
                                    preset="radial-warp")

    # -- validation -----------------------------------------------------------

    def validate(self, points, rel_tol=1e-6):
        """Check SPD sigma, positive gamma and grad_gamma/FD consistency."""
        pts, _ = _as_points(points, self.dim)
        sig = self.sigma(pts)
        eig = np.linalg.eigvalsh(sig)
        if np.any(eig <= 0):
            raise ValueError("sigma must be positive definite at every sample point")
        if np.any(self.gamma(pts) <= 0):
            raise ValueError("gamma must be positive on the closed domain")
        gg = self.grad_gamma(pts)
        fd = np.zeros_like(gg)
        for i in range(self.dim):
            step = 1e-6 * (1.0 + np.abs(pts[:, i]))
            xp, xm = pts.copy(), pts.copy()
            xp[:, i] += step
            xm[:, i] -= step
            fd[:, i] = (self.gamma(xp) - self.gamma(xm)) / (2 * step)
        scale = 1.0 + np.abs(fd)
        if np.max(np.abs(gg - fd) / scale) > rel_tol:
            raise ValueError("grad_gamma is inconsistent with finite differences of gamma")
        return True


# ---------------------------------------------------------------------------
# Pointwise graph geometry


@dataclass
class GraphPointFrame:
    """Normal frame of the graph at one leaf point.

    N_components holds the ambient components ordered (s, x1[, x2]); the
    normal satisfies <N, Y> = 1/W > 0.
    """

    x: np.ndarray
    grad_u: np.ndarray
    W: float
    N_components: np.ndarray
    gamma: float
    sigma: np.ndarray

    def angle_with(self, nu):
        """<N, nu> for a sigma-unit vector nu tangent to the leaf."""
        return float(-(self.grad_u @ np.asarray(nu, dtype=float)) / self.W)

    def ambient_norm(self):
        n_s, n_x = self.N_components[0], self.N_components[1:]
        return float(np.sqrt(n_s**2 / self.gamma + n_x @ self.sigma @ n_x))

    def inner_with_killing(self):
        """<N, Y>; equals 1/W."""
        return float(self.N_components[0] / self.gamma)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=float))):
            raise ValueError("non-finite input")


def slope_factor(metric, x, grad_u):
    """W = sqrt(gamma + |grad u|^2_sigma); equals 1/<N, Y>, bounded below by sqrt(gamma)."""
    _check_finite(x, grad_u)
    pts, squeeze = _as_points(x, metric.dim)
    du = np.asarray(grad_u, dtype=float).reshape(len(pts), metric.dim)
    inv_sigma = metric.sigma_inv(pts)
    w = np.sqrt(metric.gamma(pts) + np.einsum("ki,kij,kj->k", du, inv_sigma, du))
    return float(w[0]) if squeeze else w


def graph_normal(metric, x, grad_u):
    """Unit normal frame N = (1/W)(gamma Y - sigma^{ij} d_j u d_i) at one point."""
    _check_finite(x, grad_u)
    pts, _ = _as_points(x, metric.dim)
    du = np.asarray(grad_u, dtype=float).reshape(metric.dim)
    inv_sigma = metric.sigma_inv(pts)[0]
    gamma = float(metric.gamma(pts)[0])
    w = float(np.sqrt(gamma + du @ inv_sigma @ du))
    comps = np.concatenate([[gamma], -inv_sigma @ du]) / w
    return GraphPointFrame(x=pts[0], grad_u=du, W=w, N_components=comps,
                           gamma=gamma, sigma=metric.sigma(pts)[0])


def contact_angle(metric, x, grad_u, nu):
    """<N, nu> along the boundary: -<grad u, nu>_sigma / W for inward sigma-unit nu."""
    _check_finite(x, grad_u, nu)
    pts, _ = _as_points(x, metric.dim)
    du = np.asarray(grad_u, dtype=float).reshape(metric.dim)
    nu = np.asarray(nu, dtype=float).reshape(metric.dim)
    sig = metric.sigma(pts)[0]
    if abs(nu @ sig @ nu - 1.0) > 1e-8:
        raise ValueError("nu must be a sigma-unit vector")
    w = slope_factor(metric, pts[0], du)
    return float(-(du @ nu) / w)


# ---------------------------------------------------------------------------
# Nodal recovery


def recover_vertex_gradients(mesh, values):
    """Measure-weighted average of adjacent cell P1 gradients, per vertex."""
    values = np.asarray(values, dtype=float)
    cell_grad = np.einsum("ca,cad->cd", values[mesh.cells], mesh.grads_lambda)
    num = np.zeros((mesh.num_vertices, mesh.dim))
    den = np.zeros(mesh.num_vertices)
    w = mesh.cell_measure
    for a in range(mesh.dim + 1):
        np.add.at(num, mesh.cells[:, a], w[:, None] * cell_grad)
        np.add.at(den, mesh.cells[:, a], w)
    return num / den[:, None]


def vertex_slope_factors(metric, u):
    """W at mesh vertices from recovered gradients."""
    grads = recover_vertex_gradients(u.mesh, u.values)
    return slope_factor(metric, u.mesh.vertices, grads)


def quadratic_patch_fit(mesh, values, vertex):
    """Least-squares quadratic over the element patch: (gradient, hessian) at a vertex.

    Extends to the two-ring when the one-ring is too small; raises
    `DegenerateStencilError` if still under-determined.
    """
    values = np.asarray(values, dtype=float)
    dim = mesh.dim
    needed = 3 if dim == 1 else 6
    nbrs = mesh.vertex_neighbors()
    patch = {vertex, *nbrs[vertex]}
    if len(patch) < needed:
        for v in list(patch):
            patch.update(nbrs[v])
    if len(patch) < needed:
        raise DegenerateStencilError(f"patch of vertex {vertex} has {len(patch)} points")
    ids = np.array(sorted(patch))
    dx = mesh.vertices[ids] - mesh.vertices[vertex]
    scale = np.max(np.linalg.norm(dx, axis=1))
    dxs = dx / scale
    if dim == 1:
        cols = [np.ones(len(ids)), dxs[:, 0], 0.5 * dxs[:, 0] ** 2]
    else:
        cols = [np.ones(len(ids)), dxs[:, 0], dxs[:, 1],
                0.5 * dxs[:, 0] ** 2, dxs[:, 0] * dxs[:, 1], 0.5 * dxs[:, 1] ** 2]
    a = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(a, values[ids], rcond=None)
    if dim == 1:
        grad = np.array([coef[1]]) / scale
        hess = np.array([[coef[2]]]) / scale**2
    else:
        grad = coef[1:3] / scale
        hess = np.array([[coef[3], coef[4]], [coef[4], coef[5]]]) / scale**2
    return grad, hess


def _metric_coefficient_derivatives(metric, pts):
    """Central differences of sigma_inv and log sqrt(det sigma), batched."""
    dim = metric.dim
    m = len(pts)
    d_inv = np.zeros((m, dim, dim, dim))
    d_logsd = np.zeros((m, dim))
    for i in range(dim):
        step = 1e-6 * (1.0 + np.abs(pts[:, i]))
        xp, xm = pts.copy(), pts.copy()
        xp[:, i] += step
        xm[:, i] -= step
        d_inv[:, i] = (metric.sigma_inv(xp) - metric.sigma_inv(xm)) / (2 * step)[:, None, None]
        d_logsd[:, i] = (np.log(metric.sqrt_det_sigma(xp))
                         - np.log(metric.sqrt_det_sigma(xm))) / (2 * step)
    return d_inv, d_logsd


def mean_curvature_from_derivatives(metric, x, grad, hess):
    """div(grad u / W) - <grad gamma / 2 gamma, grad u / W> from pointwise derivatives.

    Vectorized over points: grad (m, d) and hess (m, d, d) are a first and
    second derivative estimate of u; the divergence is the sigma-divergence.
    Metric coefficient derivatives come from central differences of the
    metric callables (the data are smooth, so this is far below any
    discretization error).
    """
    pts, squeeze = _as_points(x, metric.dim)
    du = np.asarray(grad, dtype=float).reshape(len(pts), metric.dim)
    hess = np.asarray(hess, dtype=float).reshape(len(pts), metric.dim, metric.dim)
    inv_sigma = metric.sigma_inv(pts)
    gamma = metric.gamma(pts)
    ggam = metric.grad_gamma(pts)
    d_inv, d_logsd = _metric_coefficient_derivatives(metric, pts)

    g = np.einsum("mkl,ml->mk", inv_sigma, du)
    w = np.sqrt(gamma + np.einsum("mk,mk->m", du, g))
    # dW_i = (d_i gamma + du^T d_i(sigma^{-1}) du + 2 (sigma^{-1} hess du)_i) / 2W
    dw = (ggam + np.einsum("mikl,mk,ml->mi", d_inv, du, du)
          + 2.0 * np.einsum("mkl,mik,ml->mi", inv_sigma, hess, du)) / (2.0 * w[:, None])
    div_x = (np.einsum("miil,ml->m", d_inv, du) / w
             + np.einsum("mil,mil->m", inv_sigma, hess) / w
             - np.einsum("mi,mi->m", g, dw) / w**2)
    div_sigma = div_x + np.einsum("mi,mi->m", g, d_logsd) / w
    out = div_sigma - np.einsum("mi,mi->m", ggam, g) / (2.0 * gamma * w)
    return float(out[0]) if squeeze else out


def mean_curvature_strong(metric, u, vertex):
    """Strong-form curvature operator at an interior vertex of a nodal field.

    Second derivatives come from a quadratic least-squares fit over the
    element patch; equals n H of the graph with respect to the upward
    normal, hence the pointwise residual of the prescribed-curvature
    equation is nH - tau psi.
    """
    du, hess = quadratic_patch_fit(u.mesh, u.values, vertex)
    return mean_curvature_from_derivatives(metric, u.mesh.vertices[vertex], du, hess)
