import json

import numpy as np
import pytest

import capgraph as cg
from capgraph.meshing import DomainSpec
from capgraph.solver import continuation_solve
from capgraph.verify import (
    Certificate,
    FoldDetected,
    ManufactureError,
    OracleFailed,
    boundary_gradient_certificate,
    check_height,
    contact_angle_residual,
    interior_gradient_certificate,
    separation_rate_check,
    make_interior_bump,
    mms_convergence_study,
    mms_manufacture,
    observed_order,
    oracle_1d_solve,
    run_refinement_suite,
    strong_form_residual,
)
from conftest import cap_values


def make(dim, psi, phi="0", **kw):
    return cg.CapillaryProblem.from_expressions(dim, psi, phi, **kw)


def test_certificate_semantics():
    cert = Certificate("demo", observed=0.5, bound=1.0, tolerance=0.1,
                       trace=[(0.1, 0.5)])
    assert cert.margin == pytest.approx(0.5)
    assert cert.provisional
    cert.trace += [(0.05, 0.4), (0.025, 0.35)]
    assert not cert.provisional
    json.dumps(cert.to_dict())      # serializable


def test_observed_order():
    hs = [0.2, 0.1, 0.05]
    errs = [4e-2, 1e-2, 2.5e-3]
    assert observed_order(hs, errs) == pytest.approx(2.0, abs=1e-12)


def test_check_height_trivial(disk_01, euclid2):
    prob = make(2, "s")
    state = continuation_solve(prob, euclid2, disk_01)
    cert = check_height(state.u, prob, euclid2, disk_01)
    assert cert.applicable and cert.passed
    assert cert.observed == pytest.approx(0.0, abs=1e-12)
    assert cert.margin == pytest.approx(0.0, abs=1e-12)


def test_check_height_not_applicable_for_negative_mu(disk_01, euclid2):
    prob = mms_manufacture(euclid2, disk_01, "sqrt(4 - r^2)")
    u = cg.ScalarField(disk_01, cap_values(disk_01.vertices))
    cert = check_height(u, prob, euclid2, disk_01)
    assert not cert.applicable
    assert cert.passed          # not-applicable certificates do not fail


def test_check_height_detects_violations(euclid1, interval_64):
    # depressing angle data on flat warp pushes the dip past the bound: the
    # certificate must report the violation rather than hide it
    prob = make(1, "1 + s", "-0.55")
    state = continuation_solve(prob, euclid1, interval_64)
    cert = check_height(state.u, prob, euclid1, interval_64)
    assert cert.applicable
    assert not cert.passed


def test_interior_gradient_certificate_flat(disk_01, euclid2):
    u = cg.ScalarField.zeros(disk_01)
    cert = interior_gradient_certificate(u, euclid2, disk_01, 0, 0.5)
    assert cert.observed == pytest.approx(1.0, abs=1e-12)   # W = 1, peak at center
    with pytest.raises(ValueError, match="exits"):
        interior_gradient_certificate(u, euclid2, disk_01, 0, 1.5)


def test_interior_gradient_certificate_linear_1d(euclid1, interval_64):
    c = 0.8
    u = cg.ScalarField(interval_64, c * interval_64.vertices[:, 0])
    center = interval_64.num_vertices // 2
    cert = interior_gradient_certificate(u, euclid1, interval_64, center, 0.3)
    assert cert.observed == pytest.approx(np.sqrt(1 + c**2), rel=1e-12)


def test_boundary_gradient_certificate_flat_warp(disk_01):
    metric = cg.MetricField.radial_warp(2, gamma="1 + 3*r^2")
    u = cg.ScalarField.zeros(disk_01)
    cert = boundary_gradient_certificate(u, metric, disk_01)
    expected = np.max(np.sqrt(metric.gamma(disk_01.vertices)))
    assert cert.observed == pytest.approx(expected, rel=1e-12)
    assert cert.details["wall_profile_max"] >= 0


def test_boundary_gradient_certificate_cap(euclid2, disk_01):
    # sup W of the cap over the unit disk: R / sqrt(R^2 - 1) at the rim
    u = cg.ScalarField(disk_01, cap_values(disk_01.vertices))
    cert = boundary_gradient_certificate(u, euclid2, disk_01)
    assert cert.observed == pytest.approx(2.0 / np.sqrt(3.0), rel=0.05)


def test_contact_angle_residual_trivial(disk_01, euclid2):
    prob = make(2, "1 + s", "0")
    u = cg.ScalarField.zeros(disk_01)
    assert contact_angle_residual(u, 0.0, prob, euclid2, disk_01).observed == 0.0
    assert contact_angle_residual(u, 1.0, prob, euclid2, disk_01).observed == 0.0


def test_strong_form_residual_trivial(disk_01, euclid2):
    prob = make(2, "1 + s")
    cert = strong_form_residual(cg.ScalarField.zeros(disk_01), 0.0, prob, euclid2,
                                disk_01)
    assert cert.observed == pytest.approx(0.0, abs=1e-12)
    assert cert.details["skipped_stencils"] == 0


def test_strong_form_residual_decays_1d():
    metric = cg.MetricField.from_expressions(1, gamma="exp(2*x1)")
    obs, hs = [], []
    for m in (16, 32, 64):
        mesh = cg.generate_interval_mesh(0.0, 1.0, m)
        prob = mms_manufacture(metric, mesh, "0.3*x1 + 0.1*x1^2")
        state = continuation_solve(prob, metric, mesh)
        obs.append(strong_form_residual(state.u, 1.0, prob, metric, mesh).observed)
        hs.append(1.0 / m)
    assert observed_order(hs, obs) >= 1.5


def test_separation_rate_exact_for_vertical_displacements(disk_01, euclid2):
    zeta = make_interior_bump(disk_01, euclid2)
    u = cg.ScalarField(disk_01, np.full(disk_01.num_vertices, -0.4))
    cert = separation_rate_check(u, euclid2, disk_01, zeta, [1e-2, 5e-3])
    assert cert.details["exact"] and cert.passed
    zero = zeta.with_values(np.zeros(disk_01.num_vertices))
    cert = separation_rate_check(u, euclid2, disk_01, zero, [1e-2])
    assert cert.details["exact"]


def test_separation_rate_linear_graph_first_order(euclid1):
    mesh = cg.generate_interval_mesh(0.0, 1.0, 20)
    zeta = make_interior_bump(mesh, euclid1)
    u = cg.ScalarField(mesh, 0.5 * mesh.vertices[:, 0])
    cert = separation_rate_check(u, euclid1, mesh, zeta, [1e-2, 5e-3, 2.5e-3])
    assert cert.passed
    assert 0.8 <= cert.details["order_in_tau"] <= 1.2


def test_separation_rate_rejects_boundary_supported_zeta(euclid1):
    mesh = cg.generate_interval_mesh(0.0, 1.0, 20)
    zeta = cg.ScalarField(mesh, np.ones(mesh.num_vertices))
    u = cg.ScalarField.zeros(mesh)
    with pytest.raises(ValueError, match="boundary"):
        separation_rate_check(u, euclid1, mesh, zeta, [1e-2])


def test_separation_rate_fold_detection(euclid1):
    mesh = cg.generate_interval_mesh(0.0, 1.0, 20)
    zeta = make_interior_bump(mesh, euclid1)
    u = cg.ScalarField(mesh, 3.0 * mesh.vertices[:, 0])
    with pytest.raises(FoldDetected):
        separation_rate_check(u, euclid1, mesh, zeta, [0.8])


def test_mms_cap_data(euclid2, disk_01):
    prob = mms_manufacture(euclid2, disk_01, "sqrt(4 - r^2)")
    pts = np.array([[0.3, 0.1], [0.0, 0.0], [0.5, -0.5]])
    u_ex = cap_values(pts)
    np.testing.assert_allclose(prob.psi(pts, u_ex), -1.0, atol=1e-9)
    np.testing.assert_allclose(prob.psi(pts, np.zeros(3)), -1.0 - u_ex, atol=1e-9)
    np.testing.assert_allclose(prob.dpsi_ds(pts, u_ex), 1.0)
    # at facet midpoints the facet conormal is radial: phi = -|x|/2 there
    mids = disk_01.facet_midpoints()
    np.testing.assert_allclose(prob.phi(mids, np.zeros(len(mids))),
                               -np.linalg.norm(mids, axis=1) / 2.0, atol=1e-12)


def test_mms_zero_solution(euclid2, disk_01):
    prob = mms_manufacture(euclid2, disk_01, "0", kappa0=2.0)
    pts = disk_01.vertices[:5]
    s = np.array([0.3, -1.0, 0.0, 2.0, 0.7])
    np.testing.assert_allclose(prob.psi(pts, s), 2.0 * s, atol=1e-9)
    np.testing.assert_allclose(prob.phi(pts, s), 0.0, atol=1e-12)


def test_mms_1d_warped_matches_dense_differences(euclid1):
    # brute-force evaluation of (u'/W)' - (gamma'/2 gamma)(u'/W) for the
    # manufactured data of a low-degree polynomial
    metric = cg.MetricField.from_expressions(1, gamma="exp(2*x1)")
    mesh = cg.generate_interval_mesh(0.0, 1.0, 16)
    prob = mms_manufacture(metric, mesh, "0.3*x1 + 0.1*x1^2")
    xd = np.linspace(0.0, 1.0, 40001)
    du = 0.3 + 0.2 * xd
    w = np.sqrt(np.exp(2 * xd) + du**2)
    flux = du / w
    dense = np.gradient(flux, xd) - flux                  # gamma'/2 gamma = 1
    for x in (0.25, 0.5, 0.75):
        u_at = 0.3 * x + 0.1 * x**2
        got = float(prob.psi(np.array([[x]]), np.array([u_at]))[0])
        assert got == pytest.approx(np.interp(x, xd, dense), rel=1e-5, abs=1e-7)


def test_mms_rejects_degenerate_angle(euclid1):
    mesh = cg.generate_interval_mesh(0.0, 1.0, 8)
    with pytest.raises(ManufactureError):
        mms_manufacture(euclid1, mesh, "100000*x1")
    with pytest.raises(ManufactureError):
        mms_manufacture(euclid1, mesh, "x1", kappa0=0.0)


def test_oracle_trivial(euclid1):
    prob = make(1, "s")
    x, u = oracle_1d_solve(prob, euclid1, 0.0, 1.0, 256)
    assert np.max(np.abs(u)) < 1e-10


def test_oracle_recovers_manufactured_solution(euclid1):
    mesh = cg.generate_interval_mesh(0.0, 1.0, 8)
    prob = mms_manufacture(euclid1, mesh, "0.4*x1 + 0.2*x1^2")
    errs = []
    for m in (256, 512):
        x, u = oracle_1d_solve(prob, euclid1, 0.0, 1.0, m)
        errs.append(np.max(np.abs(u - prob.u_exact(x[:, None]))))
    assert errs[0] / errs[1] > 3.0          # second-order convergence
    assert errs[1] < 1e-5


def test_oracle_reports_failure(euclid1):
    # incompatible data (no solution at full strength): inconclusive, not a pass
    with pytest.raises(OracleFailed):
        oracle_1d_solve(make(1, "1"), euclid1, 0.0, 1.0, 128, max_iter=20)


def test_refinement_suite_merges_traces(euclid2):
    domain = DomainSpec("disk", {"radius": 1.0, "h": 0.3})
    certs, state = run_refinement_suite(make(2, "1 + s", "0.3"), euclid2, domain,
                                        levels=(0, 1, 2),
                                        interior_ball=(np.zeros(2), 0.45))
    assert state.status == "converged"
    by_name = {c.name: c for c in certs}
    for name in ("height-bound", "boundary-gradient", "interior-gradient",
                 "contact-angle-residual", "strong-form-residual"):
        assert name in by_name
        assert not by_name[name].provisional
        assert by_name[name].passed


def test_separation_rate_on_disk_capillary_solution(euclid2, disk_01):
    state = continuation_solve(make(2, "1 + s", "0.3"), euclid2, disk_01)
    zeta = make_interior_bump(disk_01, euclid2)
    cert = separation_rate_check(state.u, euclid2, disk_01, zeta,
                                 [2e-2, 1e-2, 5e-3])
    assert cert.passed
    assert 0.8 <= cert.details["order_in_tau"] <= 1.2


def test_mms_convergence_with_nontrivial_warping():
    # nonconstant gamma exercises the drift term and the 1/sqrt(gamma) weights
    domain = DomainSpec("disk", {"radius": 1.0, "h": 0.2})
    metric = cg.MetricField.radial_warp(2, gamma="1 + r^2")
    rows, orders = mms_convergence_study(metric, domain, "0.5 - 0.2*r^2",
                                         levels=(0, 1, 2))
    assert orders["error"] >= 1.8
    assert orders["angle_residual"] >= 0.8


def test_mms_convergence_with_conformal_leaf_metric():
    # nonconstant sigma exercises the sqrt(det sigma) cell weights and the
    # sigma facet length elements
    domain = DomainSpec("disk", {"radius": 1.0, "h": 0.2})
    metric = cg.MetricField.from_expressions(2, sigma_conformal="1 + 0.3*r^2",
                                             gamma="1 + 0.5*r^2")
    rows, orders = mms_convergence_study(metric, domain, "0.3*x1 + 0.5 - 0.2*r^2",
                                         levels=(0, 1, 2))
    assert orders["error"] >= 1.8
    assert orders["angle_residual"] >= 0.8


def test_mms_convergence_on_annulus():
    # two boundary components; the ring family is not nested under
    # refinement, so the order gate is intentionally modest
    domain = DomainSpec("annulus", {"radius": 1.0, "inner_radius": 0.5, "h": 0.1})
    metric = cg.MetricField.euclidean(2)
    rows, orders = mms_convergence_study(metric, domain, "0.5 - 0.2*r^2 + 0.1*x1",
                                         levels=(0, 1, 2))
    assert orders["error"] >= 1.4
    assert orders["angle_residual"] >= 0.8


def test_interior_bump_requires_resolution(euclid1):
    mesh = cg.generate_interval_mesh(0.0, 1.0, 2)
    with pytest.raises(ValueError, match="coarse"):
        make_interior_bump(mesh, euclid1)
