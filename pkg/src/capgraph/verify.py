"""Certificates and oracles for computed capillary graphs.

Height and gradient behaviour of converged solutions is certified against
the a-priori estimates: the height bound is exact (no unknown constants);
the gradient bounds have nonconstructive constants, so their certificates
extract the bounded quotient and assert refinement stability instead.
Manufactured problems and a dense 1D finite-difference oracle provide
ground truth independent of the finite-element path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CloughTocher2DInterpolator, CubicSpline
from scipy.linalg import solve_banded
from scipy.spatial import cKDTree

from .expressions import parse_expression
from .geometry import (
    DegenerateStencilError,
    mean_curvature_from_derivatives,
    mean_curvature_strong,
    recover_vertex_gradients,
    vertex_slope_factors,
)
from .meshing import ScalarField, boundary_distance_field, geodesic_distance_field
from .problem import CapillaryProblem, effective_constants

__all__ = [
    "Certificate",
    "FoldDetected",
    "OracleFailed",
    "ManufactureError",
    "check_height",
    "interior_gradient_certificate",
    "boundary_gradient_certificate",
    "contact_angle_residual",
    "strong_form_residual",
    "separation_rate_check",
    "make_interior_bump",
    "mms_manufacture",
    "oracle_1d_solve",
    "observed_order",
    "mms_convergence_study",
    "run_refinement_suite",
    "nearest_vertex",
]

log = logging.getLogger("capgraph.verify")

STABILITY_TOL = 0.25          # allowed relative spread of extracted quotients


class FoldDetected(RuntimeError):
    """Displaced point cloud is no longer graph-like (tau too large)."""


class OracleFailed(RuntimeError):
    """The dense oracle did not converge; comparisons are inconclusive."""


class ManufactureError(ValueError):
    """Manufactured data violates the admissibility constraints."""


@dataclass
class Certificate:
    """One certified quantity with its refinement trace.

    pass is equivalent to margin >= -tolerance whenever a bound is claimed;
    certificates traced at fewer than three resolutions are provisional.
    """

    name: str
    observed: float
    bound: float | None = None
    tolerance: float = 0.0
    passed: bool = True
    applicable: bool = True
    trace: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def margin(self):
        return None if self.bound is None else self.bound - self.observed

    @property
    def provisional(self):
        return len(self.trace) < 3

    def to_dict(self):
        def clean(v):
            if isinstance(v, (np.floating, np.integer)):
                return float(v)
            if isinstance(v, np.ndarray):
                return [float(x) for x in v]
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v

        return {
            "name": self.name,
            "bound": clean(self.bound),
            "observed": clean(self.observed),
            "margin": clean(self.margin),
            "tolerance": clean(self.tolerance),
            "passed": bool(self.passed),
            "applicable": bool(self.applicable),
            "provisional": bool(self.provisional),
            "trace": clean(self.trace),
            "details": clean(self.details),
        }


def observed_order(hs, errs, floor=1e-300):
    """Least-squares slope of log(err) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errs = np.maximum(np.asarray(errs, dtype=float), floor)
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def _resolution(mesh):
    return mesh.target_h if mesh.target_h is not None else mesh.h_max


def nearest_vertex(mesh, point):
    point = np.asarray(point, dtype=float).reshape(1, mesh.dim)
    return int(np.argmin(np.linalg.norm(mesh.vertices - point, axis=1)))


# ---------------------------------------------------------------------------
# Height certificate (exact bound)


def check_height(u, problem, metric, mesh):
    """max |u| against the a-priori bound, with a 10 h^2 discretization allowance.

    Not applicable when mu < 0 (the literal bound is one-sided there) or when
    positive gravity fails.
    """
    h = _resolution(mesh)
    tol = 10.0 * h**2
    observed = float(np.max(np.abs(u.values)))
    try:
        beta, mu, ratio = effective_constants(problem, metric, mesh)
    except ValueError:
        beta, mu, ratio = -1.0, np.nan, np.nan
    applicable = beta > 0 and mu >= 0
    bound = max(0.0, ratio * mu / beta) if applicable else None
    passed = True if not applicable else (bound - observed) >= -tol
    return Certificate("height-bound", observed, bound=bound, tolerance=tol,
                       passed=passed, applicable=applicable,
                       trace=[(h, observed)],
                       details={"beta": beta, "mu": mu, "warp_ratio": ratio})


# ---------------------------------------------------------------------------
# Gradient certificates (refinement-stability of extracted quotients)


def interior_gradient_certificate(u, metric, mesh, x0, R):
    """Quotient Q = max W(z) (R^2 - d^2(z)) / R^2 over the geodesic ball.

    The interior gradient estimate bounds W by C R^2/(R^2 - d^2) with a
    nonconstructive C; Q is the extracted candidate for C and must be stable
    under refinement.  Requires the ball to stay inside the domain.
    """
    d = geodesic_distance_field(mesh, metric, x0).values
    if np.min(d[mesh.boundary_vertices]) <= R:
        raise ValueError(f"ball of radius {R} around vertex {x0} exits the domain")
    w = vertex_slope_factors(metric, u)
    mask = d < R
    q = float(np.max(w[mask] * (R**2 - d[mask] ** 2) / R**2))
    h = _resolution(mesh)
    return Certificate("interior-gradient", q, tolerance=STABILITY_TOL,
                       trace=[(h, q)], details={"x0": int(x0), "R": float(R)})


def boundary_gradient_certificate(u, metric, mesh):
    """sup W over the closed domain, plus the d_Gamma * W wall profile maximum.

    The boundary gradient estimate asserts a uniform (nonconstructive) bound
    on W up to the boundary; the certificate tracks sup W across refinements
    and reports the interior-sphere profile max d_Gamma * W as a cross-check.
    """
    w = vertex_slope_factors(metric, u)
    sup_w = float(np.max(w))
    d_gamma = boundary_distance_field(mesh, metric).values
    profile = float(np.max(d_gamma * w))
    h = _resolution(mesh)
    return Certificate("boundary-gradient", sup_w, tolerance=STABILITY_TOL,
                       trace=[(h, sup_w)], details={"wall_profile_max": profile})


def _stabilize(cert_list, name):
    """Merge per-level gradient certificates into one stability certificate."""
    trace = [entry for c in cert_list for entry in c.trace]
    values = np.array([v for _, v in trace])
    spread = float(np.max(values) / max(np.min(values), 1e-300) - 1.0)
    merged = Certificate(name, float(values[-1]), tolerance=STABILITY_TOL,
                         passed=spread <= STABILITY_TOL, trace=trace,
                         details={**cert_list[-1].details, "relative_spread": spread})
    return merged


# ---------------------------------------------------------------------------
# Pointwise residual certificates


def contact_angle_residual(u, tau, problem, metric, mesh):
    """max over boundary quadrature points of |<N, nu> - tau phi|.

    The angle condition is natural in the weak form, so this residual decays
    like the trace error of the P1 gradient, first order in h.
    """
    vals = u.values
    bf = mesh.boundary_facets
    cells = mesh.cells[mesh.boundary_cells]
    grads = np.einsum("fa,fad->fd", vals[cells], mesh.grads_lambda[mesh.boundary_cells])
    nu = mesh.sigma_conormals(metric)
    bary, _ = mesh.facet_quad
    xq = np.einsum("qa,fad->fqd", bary, mesh.vertices[bf])        # (nb, nq, d)
    uq = np.einsum("qa,fa->fq", bary, vals[bf])
    nb, nq = uq.shape
    flat = xq.reshape(-1, mesh.dim)
    inv_sigma = metric.sigma_inv(flat).reshape(nb, nq, mesh.dim, mesh.dim)
    gamma = metric.gamma(flat).reshape(nb, nq)
    w = np.sqrt(gamma + np.einsum("fi,fqij,fj->fq", grads, inv_sigma, grads))
    angle = -np.einsum("fi,fi->f", grads, nu)[:, None] / w
    target = tau * problem.phi(flat, uq.ravel()).reshape(nb, nq)
    obs = float(np.max(np.abs(angle - target))) if nb else 0.0
    h = _resolution(mesh)
    return Certificate("contact-angle-residual", obs, trace=[(h, obs)],
                       details={"tau": float(tau)})


def strong_form_residual(u, tau, problem, metric, mesh):
    """max over interior vertices of |nH(u) - tau psi(x, u)| via patch recovery.

    The median over interior vertices is recorded alongside: pointwise
    second-derivative recovery from P1 data does not converge in sup norm at
    irregular patches, so refinement decay is judged on the median while the
    max is reported faithfully.
    """
    interior = np.where(~mesh.is_boundary_vertex)[0]
    vals, skipped = [], 0
    for v in interior:
        try:
            nh = mean_curvature_strong(metric, u, v)
        except DegenerateStencilError:
            skipped += 1
            continue
        psi = float(problem.psi(mesh.vertices[v], np.array([u.values[v]]))[0])
        vals.append(abs(nh - tau * psi))
    obs = float(np.max(vals)) if vals else 0.0
    med = float(np.median(vals)) if vals else 0.0
    h = _resolution(mesh)
    return Certificate("strong-form-residual", obs, trace=[(h, obs)],
                       details={"tau": float(tau), "skipped_stencils": skipped,
                                "interior_vertices": len(interior),
                                "median": med})


# ---------------------------------------------------------------------------
# Normal-displacement identity (vertical separation rate equals zeta W)


def make_interior_bump(mesh, metric, margin=None):
    """Smooth nonnegative bump supported away from the boundary.

    Zero within ``margin`` of the boundary (default twice the longest edge),
    so every supporting vertex has a fully interior patch.
    """
    d = boundary_distance_field(mesh, metric).values
    if margin is None:
        margin = 2.0 * mesh.h_max
    top = float(np.max(d))
    if top <= margin:
        raise ValueError("mesh too coarse to support an interior bump")
    z = np.maximum(0.0, (d - margin) / (top - margin)) ** 2
    return ScalarField(mesh, z)


def _interpolate_cloud(mesh, xs, ss):
    """Graph re-interpolation of a displaced vertex cloud at the original vertices."""
    if mesh.dim == 1:
        x = xs[:, 0]
        order = np.argsort(mesh.vertices[:, 0], kind="stable")
        xo = x[order]
        if np.any(np.diff(xo) <= 0):
            raise FoldDetected("displaced 1d cloud is not monotone; tau too large")
        spline = CubicSpline(xo, ss[order])
        return spline(mesh.vertices[:, 0])
    p = xs[mesh.cells]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(area2 <= 0):
        raise FoldDetected("displaced cells fold over; tau too large")
    interp = CloughTocher2DInterpolator(xs, ss)
    out = interp(mesh.vertices)
    if np.any(~np.isfinite(out)):
        raise FoldDetected("displaced cloud no longer covers the domain")
    return out


def separation_rate_check(u, metric, mesh, zeta, taus):
    """Finite-displacement check of the first-variation identity ds/dtau = zeta W.

    Vertices of the graph are displaced by tau zeta N in the ambient chart
    (s += tau zeta gamma / W, x -= tau zeta sigma^{-1} du / W), the displaced
    cloud is re-interpolated over the original vertices, and the vertical
    separation rate s(x, tau)/tau is compared against zeta(x) W(x).  The
    error is O(tau) + O(h^2); the certificate records the observed order in
    tau (exactly vertical displacements give zero error, reported as exact).
    """
    taus = sorted(float(t) for t in taus)
    if not taus or taus[0] <= 0:
        raise ValueError("taus must be positive")
    z = zeta.values
    support = np.where(z != 0.0)[0]
    nbrs = mesh.vertex_neighbors()
    for v in support:
        if mesh.is_boundary_vertex[v] or any(mesh.is_boundary_vertex[n] for n in nbrs[v]):
            raise ValueError("zeta must vanish on a neighborhood of the boundary")

    grads = recover_vertex_gradients(mesh, u.values)
    pts = mesh.vertices
    inv_sigma = metric.sigma_inv(pts)
    gamma = metric.gamma(pts)
    g = np.einsum("mij,mj->mi", inv_sigma, grads)
    w = np.sqrt(gamma + np.einsum("mi,mi->m", grads, g))
    ds_dir = z * gamma / w
    dx_dir = -z[:, None] * g / w[:, None]
    target = z * w

    scale = 1.0 + float(np.max(np.abs(u.values)))
    errors = []
    for t in taus:
        xs = pts + t * dx_dir
        ss = u.values + t * ds_dir
        sep = _interpolate_cloud(mesh, xs, ss) - u.values
        errors.append(float(np.max(np.abs(sep / t - target))))
    exact = max(errors) <= 1e-12 * scale
    order = None if exact else observed_order(taus, errors)
    passed = exact or (0.8 <= order <= 1.2)
    return Certificate("separation-rate-identity", errors[0],
                       passed=passed, trace=list(zip(taus, errors)),
                       details={"order_in_tau": order, "exact": exact})


# ---------------------------------------------------------------------------
# Manufactured problems


def _shape_conormal(mesh, metric):
    """sigma-unit inward conormal of the nearest boundary facet.

    Manufacturing the angle data against the facet conormals (rather than
    the smooth-shape normal) keeps the exact solution consistent with the
    discrete boundary geometry, so no first-order boundary crime pollutes
    convergence studies; the two differ by O(h) pointwise, O(h^2) at the
    facet quadrature points of a circle.
    """
    tree = cKDTree(mesh.facet_midpoints())
    nus = mesh.sigma_conormals(metric)

    def direction(x):
        x = np.asarray(x, dtype=float).reshape(-1, mesh.dim)
        _, idx = tree.query(x)
        return nus[idx]

    return direction


def mms_manufacture(metric, mesh, u_exact, kappa0=1.0):
    """Data (psi, phi) whose exact solution is ``u_exact`` at full strength.

    psi(x, s) = nH[u_exact](x) + kappa0 (s - u_exact(x)) adds positive
    gravity without moving the solution; phi is the exact contact angle of
    u_exact against the inward conormal.  Raises `ManufactureError` when the
    manufactured angle leaves (-1, 1).
    """
    if kappa0 <= 0:
        raise ManufactureError("kappa0 must be positive to keep positive gravity")
    expr = parse_expression(u_exact) if isinstance(u_exact, str) else u_exact
    dim = mesh.dim
    dus = [expr.derivative(v, dim=dim) for v in ("x1", "x2")[:dim]]
    d2us = [[du.derivative(v, dim=dim) for v in ("x1", "x2")[:dim]] for du in dus]

    def env(x):
        e = {"x1": x[:, 0]}
        if dim > 1:
            e["x2"] = x[:, 1]
        return e

    def u_ex(x):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        return np.broadcast_to(np.asarray(expr.evaluate(**env(x)), dtype=float),
                               (len(x),)).copy()

    def du_ex(x):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        out = np.zeros((len(x), dim))
        for i, d in enumerate(dus):
            out[:, i] = np.broadcast_to(
                np.asarray(d.evaluate(**env(x)), dtype=float), (len(x),))
        return out

    def hess_ex(x):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        out = np.zeros((len(x), dim, dim))
        for i in range(dim):
            for j in range(dim):
                out[:, i, j] = np.broadcast_to(
                    np.asarray(d2us[i][j].evaluate(**env(x)), dtype=float), (len(x),))
        return 0.5 * (out + out.transpose(0, 2, 1))
    conormal = _shape_conormal(mesh, metric)

    def psi(x, s):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        s = np.broadcast_to(np.asarray(s, dtype=float), (len(x),))
        nh = mean_curvature_from_derivatives(metric, x, du_ex(x), hess_ex(x))
        return nh + kappa0 * (s - u_ex(x))

    def dpsi_ds(x, s):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        return np.full(len(x), kappa0)

    def phi(x, s):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        du = du_ex(x)
        nu = conormal(x)
        inv_sigma = metric.sigma_inv(x)
        w = np.sqrt(metric.gamma(x) + np.einsum("ki,kij,kj->k", du, inv_sigma, du))
        return -np.einsum("ki,ki->k", du, nu) / w

    def dphi_ds(x, s):
        x = np.asarray(x, dtype=float).reshape(-1, dim)
        return np.zeros(len(x))

    # admissibility of the manufactured angle, sampled along the boundary
    from .problem import _boundary_sample_points
    xb = _boundary_sample_points(mesh)
    phib = phi(xb, np.zeros(len(xb)))
    if np.any(np.abs(phib) >= 1.0 - 1e-9):
        raise ManufactureError(
            f"manufactured contact angle reaches |phi| = {np.max(np.abs(phib)):.6f}")

    source = expr.source or str(expr)
    return CapillaryProblem(
        dim=dim, psi=psi, dpsi_ds=dpsi_ds, phi=phi, dphi_ds=dphi_ds,
        beta=kappa0, beta_prime=float(np.min(1.0 - phib**2)),
        psi_source=f"manufactured from u_exact = {source}",
        phi_source="manufactured contact angle", u_exact=u_ex)


# ---------------------------------------------------------------------------
# Dense 1D oracle (independent finite-volume discretization, own Newton)


def oracle_1d_solve(problem, metric, a, b, m_dense, tau=1.0, tol=1e-11, max_iter=60):
    """Two-point boundary solve of the capillary equation on a dense grid.

    Conservative second-order central differencing of
    (gamma^{-1/2} sqrt(sigma) sigma^{-1} u' / W)' = tau psi gamma^{-1/2} sqrt(sigma)
    with flux boundary conditions matching <N, nu> = tau phi, solved by a
    self-contained damped Newton iteration.  Raises `OracleFailed` when the
    iteration does not converge; ground truth for n=1 acceptance tests.
    """
    if metric.dim != 1:
        raise ValueError("the dense oracle is one-dimensional")
    x = np.linspace(a, b, m_dense + 1)
    hd = (b - a) / m_dense
    mid = 0.5 * (x[:-1] + x[1:])
    xc = x[:, None]
    midc = mid[:, None]
    sig_m = metric.sigma(midc)[:, 0, 0]
    gam_m = metric.gamma(midc)
    coef = metric.sqrt_det_sigma(midc) / (np.sqrt(gam_m) * sig_m)
    rho_w = metric.sqrt_det_sigma(xc) / np.sqrt(metric.gamma(xc))
    end_w = np.array([
        float(metric.sqrt_det_sigma(xc[:1])[0]
              / np.sqrt(metric.gamma(xc[:1])[0] * metric.sigma(xc[:1])[0, 0, 0])),
        float(metric.sqrt_det_sigma(xc[-1:])[0]
              / np.sqrt(metric.gamma(xc[-1:])[0] * metric.sigma(xc[-1:])[0, 0, 0]))])

    def fluxes(u):
        du = np.diff(u) / hd
        w = np.sqrt(gam_m + du**2 / sig_m)
        return coef * du / w

    def res(u):
        f = fluxes(u)
        f_a = -end_w[0] * tau * float(problem.phi(xc[:1], u[:1])[0])
        f_b = end_w[1] * tau * float(problem.phi(xc[-1:], u[-1:])[0])
        rho = tau * problem.psi(xc, u) * rho_w
        out = np.empty_like(u)
        out[1:-1] = (f[1:] - f[:-1]) / hd - rho[1:-1]
        out[0] = (f[0] - f_a) / (0.5 * hd) - rho[0]
        out[-1] = (f_b - f[-1]) / (0.5 * hd) - rho[-1]
        return out

    def jac_banded(u):
        du = np.diff(u) / hd
        w = np.sqrt(gam_m + du**2 / sig_m)
        dfd = coef * gam_m / w**3 / hd          # d flux / d u_right
        drho = tau * problem.dpsi_ds(xc, u) * rho_w
        dfa = -end_w[0] * tau * float(problem.dphi_ds(xc[:1], u[:1])[0])
        dfb = end_w[1] * tau * float(problem.dphi_ds(xc[-1:], u[-1:])[0])
        n = len(u)
        ab = np.zeros((3, n))
        ab[0, 2:] = dfd[1:] / hd                               # super
        ab[0, 1] = dfd[0] / (0.5 * hd)
        ab[2, :-2] = dfd[:-1] / hd                             # sub
        ab[2, -2] = dfd[-1] / (0.5 * hd)
        ab[1, 1:-1] = -(dfd[1:] + dfd[:-1]) / hd - drho[1:-1]  # main
        ab[1, 0] = (-dfd[0] - dfa) / (0.5 * hd) - drho[0]
        ab[1, -1] = (dfb - dfd[-1]) / (0.5 * hd) - drho[-1]
        return ab

    # the divided differences put a floor of ~eps (1 + |u|)/h^2 on the residual
    eps = np.finfo(float).eps

    def atol(u):
        return max(tol, 4.0 * eps * (1.0 + np.max(np.abs(u))) / hd**2)

    u = np.zeros(m_dense + 1)
    r = res(u)
    rnorm = np.max(np.abs(r))
    for _ in range(max_iter):
        if rnorm <= atol(u):
            return x, u
        try:
            delta = solve_banded((1, 1), jac_banded(u), -r)
        except np.linalg.LinAlgError as exc:
            raise OracleFailed(f"oracle linear solve failed: {exc}") from exc
        alpha = 1.0
        for _ in range(40):
            u_try = u + alpha * delta
            r_try = res(u_try)
            rt = np.max(np.abs(r_try))
            if np.isfinite(rt) and rt < rnorm:
                break
            alpha *= 0.5
        else:
            if rnorm <= 100.0 * atol(u):   # stalled on the roundoff floor
                return x, u
            raise OracleFailed("oracle line search failed")
        u, r, rnorm = u_try, r_try, rt
    if rnorm <= atol(u):
        return x, u
    raise OracleFailed(f"oracle residual {rnorm:.3e} above {atol(u):.3e}")


# ---------------------------------------------------------------------------
# Study drivers (shared by the CLI and the acceptance suite)


def mms_convergence_study(metric, domain, u_exact, levels=(0, 1, 2), kappa0=1.0,
                          cfg=None, unsafe=False):
    """Solve a manufactured problem at several resolutions.

    Returns a list of rows {h, error, angle_residual, strong_residual} plus
    observed orders; error is the vertex max-norm against the exact field.
    """
    from .solver import continuation_solve
    rows = []
    for level in levels:
        mesh = domain.build(level)
        problem = mms_manufacture(metric, mesh, u_exact, kappa0=kappa0)
        state = continuation_solve(problem, metric, mesh, cfg, unsafe=unsafe)
        if state.status != "converged":
            raise OracleFailed(f"manufactured solve stalled at tau={state.tau:.4f}")
        err = float(np.max(np.abs(state.u.values - problem.u_exact(mesh.vertices))))
        angle = contact_angle_residual(state.u, 1.0, problem, metric, mesh).observed
        strong = strong_form_residual(state.u, 1.0, problem, metric, mesh).observed
        rows.append({"h": _resolution(mesh), "error": err,
                     "angle_residual": angle, "strong_residual": strong})
        log.info("mms level=%d h=%.4g error=%.3e angle=%.3e", level,
                 rows[-1]["h"], err, angle)
    hs = [r["h"] for r in rows]
    orders = {
        "error": observed_order(hs, [r["error"] for r in rows]),
        "angle_residual": observed_order(hs, [r["angle_residual"] for r in rows]),
        "strong_residual": observed_order(hs, [r["strong_residual"] for r in rows]),
    }
    return rows, orders


def run_refinement_suite(problem, metric, domain, levels=(0, 1, 2), cfg=None,
                         interior_ball=None, problem_factory=None):
    """Solve across refinement levels and merge all certificates with traces.

    ``interior_ball`` is an optional (point, radius) for the interior
    gradient certificate; ``problem_factory(mesh)`` may rebuild mesh-bound
    problems (manufactured data).  Returns (certificates, finest state).
    """
    from .solver import continuation_solve
    per_level = {"interior": [], "boundary": [], "angle": [], "strong": [],
                 "height": []}
    state = None
    for level in levels:
        mesh = domain.build(level)
        prob = problem_factory(mesh) if problem_factory is not None else problem
        state = continuation_solve(prob, metric, mesh, cfg)
        if state.status != "converged":
            raise OracleFailed(f"suite solve stalled at tau={state.tau:.4f}")
        u = state.u
        per_level["height"].append(check_height(u, prob, metric, mesh))
        per_level["boundary"].append(boundary_gradient_certificate(u, metric, mesh))
        per_level["angle"].append(contact_angle_residual(u, 1.0, prob, metric, mesh))
        per_level["strong"].append(strong_form_residual(u, 1.0, prob, metric, mesh))
        if interior_ball is not None:
            point, radius = interior_ball
            per_level["interior"].append(interior_gradient_certificate(
                u, metric, mesh, nearest_vertex(mesh, point), radius))

    certs = []
    heights = per_level["height"]
    merged_height = Certificate(
        "height-bound", heights[-1].observed, bound=heights[-1].bound,
        tolerance=heights[-1].tolerance,
        passed=all(c.passed for c in heights),
        applicable=heights[-1].applicable,
        trace=[e for c in heights for e in c.trace], details=heights[-1].details)
    certs.append(merged_height)
    certs.append(_stabilize(per_level["boundary"], "boundary-gradient"))
    if per_level["interior"]:
        certs.append(_stabilize(per_level["interior"], "interior-gradient"))
    for key, name in (("angle", "contact-angle-residual"),
                      ("strong", "strong-form-residual")):
        cs = per_level[key]
        trace = [e for c in cs for e in c.trace]
        hs = [h for h, _ in trace]
        # the strong-form max saturates at irregular patches; judge its decay
        # on the median (recorded per level), the angle residual on the max
        vs = ([c.details["median"] for c in cs] if key == "strong"
              else [v for _, v in trace])
        tiny = max(vs) <= 1e-10
        order = None if tiny else observed_order(hs, vs)
        certs.append(Certificate(
            name, cs[-1].observed, passed=tiny or order >= 0.5, trace=trace,
            details={**cs[-1].details, "observed_order": order,
                     "decay_measured_on": "median" if key == "strong" else "max"}))
    return certs, state
