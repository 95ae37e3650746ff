import numpy as np
import pytest

import capgraph as cg
from capgraph.assembly import energy, jacobian, residual
from capgraph.verify import mms_manufacture, observed_order
from conftest import cap_values


def make(dim, psi, phi="0", **kw):
    return cg.CapillaryProblem.from_expressions(dim, psi, phi, **kw)


def test_residual_zero_at_homotopy_start(disk_01, euclid2, interval_64, euclid1):
    prob2 = make(2, "1 + s", "0.3")
    r = residual(np.zeros(disk_01.num_vertices), 0.0, prob2, euclid2, disk_01)
    assert np.max(np.abs(r)) <= 1e-14
    prob1 = make(1, "exp(s)", "0.5")
    r = residual(np.zeros(interval_64.num_vertices), 0.0, prob1, euclid1, interval_64)
    assert np.max(np.abs(r)) <= 1e-14


def test_tau_range_validated(disk_01, euclid2):
    prob = make(2, "s")
    u = np.zeros(disk_01.num_vertices)
    for bad in (-0.1, 1.1, np.nan):
        with pytest.raises(ValueError):
            residual(u, bad, prob, euclid2, disk_01)
        with pytest.raises(ValueError):
            jacobian(u, bad, prob, euclid2, disk_01)


def test_constant_psi_gives_lumped_areas(euclid2):
    # R_a = c int phi_a dsigma; for P1 each cell contributes area/3 per vertex
    mesh = cg.generate_disk_mesh(1.0, 0.25)
    c = 3.0
    r = residual(np.zeros(mesh.num_vertices), 1.0, make(2, f"{c}"), euclid2, mesh)
    lumped = np.zeros(mesh.num_vertices)
    for a in range(3):
        np.add.at(lumped, mesh.cells[:, a], mesh.cell_measure / 3.0)
    np.testing.assert_allclose(r, c * lumped, rtol=1e-12, atol=1e-14)
    assert r.sum() == pytest.approx(c * np.sum(mesh.cell_measure), rel=1e-12)


def test_jacobian_stiffness_block_at_zero(euclid2):
    # at u = 0, tau = 0 only the gradient block remains: constants in kernel
    mesh = cg.generate_disk_mesh(1.0, 0.3)
    j = jacobian(np.zeros(mesh.num_vertices), 0.0, make(2, "s"), euclid2, mesh)
    row_sums = np.asarray(j.sum(axis=1)).ravel()
    assert np.max(np.abs(row_sums)) < 1e-12


@pytest.mark.parametrize("dim", [1, 2])
def test_jacobian_matches_finite_differences(dim):
    if dim == 1:
        mesh = cg.generate_interval_mesh(0.0, 1.0, 12)
        metric = cg.MetricField.from_expressions(1, gamma="exp(x1)")
        prob = make(1, "1 + s + 0.2*s^2", "0.3 - 0.1*tanh(s)")
    else:
        mesh = cg.generate_disk_mesh(1.0, 0.35)
        metric = cg.MetricField.radial_warp(2, gamma="1 + 0.5*r^2")
        prob = make(2, "1 + s", "0.2 - 0.1*tanh(s)")
    rng = np.random.default_rng(dim)
    u = 0.3 * rng.standard_normal(mesh.num_vertices)
    j = jacobian(u, 0.7, prob, metric, mesh).toarray()
    eps = 1e-6
    fd = np.zeros_like(j)
    for k in range(mesh.num_vertices):
        up, um = u.copy(), u.copy()
        up[k] += eps
        um[k] -= eps
        fd[:, k] = (residual(up, 0.7, prob, metric, mesh)
                    - residual(um, 0.7, prob, metric, mesh)) / (2 * eps)
    assert np.max(np.abs(j - fd)) / np.max(np.abs(j)) < 1e-5


def test_jacobian_symmetric(disk_01, euclid2):
    rng = np.random.default_rng(11)
    u = 0.4 * rng.standard_normal(disk_01.num_vertices)
    j = jacobian(u, 1.0, make(2, "1 + s", "0.3 - 0.05*tanh(s)"), euclid2, disk_01)
    asym = (j - j.T)
    assert np.max(np.abs(asym.data)) if asym.nnz else 0.0 <= 1e-12


def test_jacobian_positive_definite_under_positive_gravity(euclid1):
    mesh = cg.generate_interval_mesh(0.0, 1.0, 49)      # 50 vertices
    rng = np.random.default_rng(2)
    u = 0.3 * rng.standard_normal(mesh.num_vertices)
    j = jacobian(u, 0.8, make(1, "1 + s"), euclid1, mesh).toarray()
    assert np.min(np.linalg.eigvalsh(j)) > 0


def test_jacobian_sparsity_in_adjacency(disk_01, euclid2):
    j = jacobian(np.zeros(disk_01.num_vertices), 1.0, make(2, "1 + s"), euclid2,
                 disk_01).tocoo()
    neighbors = disk_01.vertex_neighbors()
    for r, c in zip(j.row, j.col):
        assert r == c or c in neighbors[r]


def test_energy_of_zero_is_leaf_area(euclid2):
    mesh = cg.generate_disk_mesh(1.0, 0.25)
    e = energy(np.zeros(mesh.num_vertices), 1.0, make(2, "1 + s", "0.4"), euclid2, mesh)
    assert e == pytest.approx(np.sum(mesh.cell_measure), rel=1e-12)
    # warped leaf: the area element carries sqrt(det sigma)
    metric = cg.MetricField.from_expressions(2, sigma_conformal="1 + 0.3*r^2",
                                             gamma="1 + r^2")
    e = energy(np.zeros(mesh.num_vertices), 1.0, make(2, "1 + s"), metric, mesh)
    bary, w = mesh.cell_quad
    qp = np.einsum("qa,cad->cqd", bary, mesh.vertices[mesh.cells])
    det = metric.sqrt_det_sigma(qp.reshape(-1, 2)).reshape(len(mesh.cells), len(w))
    sigma_area = float(np.sum(w[None, :] * mesh.cell_measure[:, None] * det))
    assert e == pytest.approx(sigma_area, rel=1e-12)


def test_energy_gradient_matches_residual(disk_01, euclid2):
    rng = np.random.default_rng(4)
    prob = make(2, "1 + s + 0.1*s^2", "0.3 - 0.1*tanh(s)")
    for _ in range(3):
        u = 0.3 * rng.standard_normal(disk_01.num_vertices)
        v = rng.standard_normal(disk_01.num_vertices)
        r = residual(u, 0.9, prob, euclid2, disk_01)
        eps = 1e-5
        de = (energy(u + eps * v, 0.9, prob, euclid2, disk_01)
              - energy(u - eps * v, 0.9, prob, euclid2, disk_01)) / (2 * eps)
        assert de == pytest.approx(v @ r, rel=1e-6)


def test_translation_covariance_for_height_independent_data(disk_01, euclid2):
    # psi, phi independent of s: the operator sees only the gradient
    prob = make(2, "1 + 0.3*x1", "0.2")
    rng = np.random.default_rng(9)
    u = 0.2 * rng.standard_normal(disk_01.num_vertices)
    r1 = residual(u, 1.0, prob, euclid2, disk_01)
    r2 = residual(u + 5.0, 1.0, prob, euclid2, disk_01)
    np.testing.assert_allclose(r1, r2, atol=1e-12)


def test_deterministic_reduction(disk_01, euclid2):
    prob = make(2, "1 + s", "0.3")
    rng = np.random.default_rng(1)
    u = 0.3 * rng.standard_normal(disk_01.num_vertices)
    r1 = residual(u, 1.0, prob, euclid2, disk_01)
    r2 = residual(u, 1.0, prob, euclid2, disk_01)
    np.testing.assert_array_equal(r1, r2)
    j1 = jacobian(u, 1.0, prob, euclid2, disk_01)
    j2 = jacobian(u, 1.0, prob, euclid2, disk_01)
    np.testing.assert_array_equal(j1.data, j2.data)


def test_residual_of_exact_interpolant_decays(euclid2):
    errs, hs = [], []
    for h in (0.2, 0.1, 0.05):
        mesh = cg.generate_disk_mesh(1.0, h)
        prob = mms_manufacture(euclid2, mesh, "sqrt(4 - r^2)")
        r = residual(cap_values(mesh.vertices), 1.0, prob, euclid2, mesh)
        errs.append(np.max(np.abs(r)))
        hs.append(h)
    assert observed_order(hs, errs) >= 0.8


def test_maximum_principle_smoke(euclid2):
    # with height-increasing psi and zero angle data the solution cannot
    # poke above the a-priori bound in the interior
    from capgraph.solver import continuation_solve
    mesh = cg.generate_disk_mesh(1.0, 0.2)
    prob = make(2, "1 + 0.3*x1 + s")
    state = continuation_solve(prob, euclid2, mesh)
    bound = cg.height_bound(prob, euclid2, mesh)
    interior = ~mesh.is_boundary_vertex
    assert np.max(state.u.values[interior]) <= bound + 10 * 0.2**2


def test_gradient_block_matches_cotangent_formula(euclid2):
    # independent oracle: at u = 0 the gradient block is the P1 stiffness
    # matrix, whose entries follow the classical cotangent formula
    mesh = cg.generate_disk_mesh(1.0, 0.3)
    j = jacobian(np.zeros(mesh.num_vertices), 0.0, make(2, "s"), euclid2,
                 mesh).toarray()
    k = np.zeros_like(j)
    for cell in mesh.cells:
        for i in range(3):
            a, b, c = cell[i], cell[(i + 1) % 3], cell[(i + 2) % 3]
            e1 = mesh.vertices[b] - mesh.vertices[a]
            e2 = mesh.vertices[c] - mesh.vertices[a]
            cot = (e1 @ e2) / abs(e1[0] * e2[1] - e1[1] * e2[0])
            k[b, c] -= cot / 2
            k[c, b] -= cot / 2
            k[b, b] += cot / 2
            k[c, c] += cot / 2
    np.testing.assert_allclose(j, k, atol=1e-13)
