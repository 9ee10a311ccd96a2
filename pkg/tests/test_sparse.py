import numpy as np
import pytest
import scipy.sparse as sp

from groundstate import build_mesh, FeSpace
from groundstate.assemble import assemble_mass, assemble_stiffness
from groundstate.sparse import (
    SparseSym,
    cg_solve,
    dense_eig_oracle,
    smallest_eigpairs,
    make_span_projector,
    IndefiniteOperatorError,
)


def laplace_pair(n, order=1, domain=(0, 1, 0, 1)):
    space = FeSpace(build_mesh(domain, n, n), order=order)
    k = SparseSym(assemble_stiffness(space))
    m = SparseSym(assemble_mass(space))
    return space, k, m


def test_sparsesym_rejects_nonsymmetric():
    bad = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        SparseSym(bad)


def test_cg_identity_converges_in_one_iteration():
    a = SparseSym(sp.identity(5, format="csr"))
    b = np.arange(5.0)
    x, rep = cg_solve(a, b, precond="none")
    assert rep.iterations == 1 and rep.converged
    assert np.allclose(x, b)


def test_cg_small_diagonal_system():
    a = SparseSym(sp.diags([2.0, 3.0]).tocsr())
    x, rep = cg_solve(a, np.array([2.0, 3.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-12)
    assert rep.converged


def test_cg_poisson_analytic_solution():
    # -Delta u = f with f = sin(pi x) sin(pi y): u = (1/2pi^2) f.
    # Measured discretization error is ~2.5 h^2; assert that and the rate.
    rels = []
    for n in (16, 32):
        space, k, m = laplace_pair(n)
        xy = space.dof_coords[space.free]
        samples = np.sin(np.pi * xy[:, 0]) * np.sin(np.pi * xy[:, 1])
        b = m.matvec(samples)
        x, rep = cg_solve(k, b, tol=1e-12)
        assert rep.converged
        err = x - samples / (2 * np.pi**2)
        rel = np.sqrt(err @ m.matvec(err)) / np.sqrt(
            samples @ m.matvec(samples) / (2 * np.pi**2) ** 2
        )
        rels.append(rel)
    assert rels[0] < 0.012
    assert rels[1] < rels[0] / 3.5


def test_cg_monotone_energy_error():
    space, k, m = laplace_pair(8)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(k.dim)
    x_exact, _ = cg_solve(k, b, tol=1e-14)
    errs = []
    for iters in range(1, 30, 3):
        x, _ = cg_solve(k, b, tol=0.0, max_iter=iters, precond="none")
        e = x - x_exact
        errs.append(e @ k.matvec(e))
    assert all(e2 <= e1 * (1 + 1e-12) for e1, e2 in zip(errs, errs[1:]))


def test_cg_detects_indefiniteness():
    a = SparseSym(sp.diags([1.0, -1.0]).tocsr())
    with pytest.raises(IndefiniteOperatorError):
        cg_solve(a, np.array([1.0, 1.0]), precond="none")


def test_cg_nonconvergence_reported():
    space, k, m = laplace_pair(16)
    b = np.ones(k.dim)
    x, rep = cg_solve(k, b, tol=1e-14, max_iter=3, precond="none")
    assert not rep.converged
    assert rep.final_relative_residual > 1e-14


def test_dense_oracle_diagonal():
    vals, vecs = dense_eig_oracle(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(vals, [1.0, 2.0, 3.0])


def test_dense_oracle_rejects_indefinite_mass():
    with pytest.raises(ValueError):
        dense_eig_oracle(np.eye(3), np.diag([1.0, -1.0, 1.0]))


def test_dense_oracle_dimension_cap():
    with pytest.raises(ValueError):
        dense_eig_oracle(np.eye(2001))


def test_dense_oracle_coarse_mesh_bias():
    # 4x4 P1 mesh: the first eigenvalue carries a ~16% coarse-mesh bias
    space, k, m = laplace_pair(4)
    vals, _ = dense_eig_oracle(k.toarray(), m.toarray())
    rel = abs(vals[0] - 2 * np.pi**2) / (2 * np.pi**2)
    assert 0.10 < rel < 0.20


def test_smallest_eigpairs_identity_mass():
    a = SparseSym(sp.diags(np.arange(1.0, 40.0)).tocsr())
    m = SparseSym(sp.identity(39, format="csr"))
    vals, vecs, info = smallest_eigpairs(a, m, 3, tol=1e-10)
    assert np.allclose(vals, [1.0, 2.0, 3.0], atol=1e-9)


def test_smallest_eigpairs_equal_operators():
    space, k, m = laplace_pair(6)
    vals, vecs, _ = smallest_eigpairs(m, m, 3, tol=1e-10)
    assert np.allclose(vals, 1.0, atol=1e-9)


def test_smallest_eigpairs_matches_oracle_random_pair():
    rng = np.random.default_rng(5)
    n = 50
    q = rng.standard_normal((n, n))
    a = q @ q.T + n * np.eye(n)
    r = rng.standard_normal((n, n))
    m = r @ r.T + n * np.eye(n)
    vals, vecs, _ = smallest_eigpairs(
        SparseSym(sp.csr_matrix(a)), SparseSym(sp.csr_matrix(m)), 4, tol=1e-11
    )
    ref, _ = dense_eig_oracle(a, m)
    assert np.allclose(vals, ref[:4], rtol=1e-8)


@pytest.mark.parametrize("order", [1, 2])
def test_smallest_eigpairs_laplacian_vs_oracle(order):
    space, k, m = laplace_pair(8, order=order)
    vals, vecs, _ = smallest_eigpairs(k, m, 3, tol=1e-10)
    ref, _ = dense_eig_oracle(k.toarray(), m.toarray())
    assert np.allclose(vals, ref[:3], rtol=1e-8)
    # residuals and M-orthonormality
    for j in range(3):
        r = k.matvec(vecs[:, j]) - vals[j] * m.matvec(vecs[:, j])
        assert np.linalg.norm(r) < 1e-7 * max(vals[j], 1)
    gram = vecs.T @ (m.csr @ vecs)
    assert np.allclose(gram, np.eye(3), atol=1e-9)


def test_smallest_eigpairs_gap_ratio_towards_two_fifths():
    space, k, m = laplace_pair(32)
    vals, _, _ = smallest_eigpairs(k, m, 2, tol=1e-9)
    assert abs(vals[0] / vals[1] - 0.4) < 0.02


def test_constraint_respected_and_matches_constrained_oracle():
    space, k, m = laplace_pair(8)
    ref_vals, ref_vecs = dense_eig_oracle(k.toarray(), m.toarray())
    u = ref_vecs[:, 0]
    vals, vecs, _ = smallest_eigpairs(k, m, 2, tol=1e-10, constraint_basis=u)
    cref, _ = dense_eig_oracle(k.toarray(), m.toarray(), constraint_basis=u)
    assert np.allclose(vals, cref[:2], rtol=1e-8)
    # restricting away the ground mode leaves the second eigenvalue first
    assert abs(vals[0] - ref_vals[1]) < 1e-6 * ref_vals[1]
    for j in range(2):
        assert abs(u @ (m.csr @ vecs[:, j])) < 1e-10


def test_k_exceeding_subspace_dimension():
    a = SparseSym(sp.identity(3, format="csr"))
    with pytest.raises(ValueError):
        smallest_eigpairs(a, a, 3, constraint_basis=np.eye(3)[:, :1])


def test_span_projector_is_m_orthogonal():
    space, k, m = laplace_pair(6)
    rng = np.random.default_rng(2)
    basis = rng.standard_normal((k.dim, 2))
    proj = make_span_projector(basis, m)
    v = rng.standard_normal(k.dim)
    pv = proj(v)
    assert np.abs(basis.T @ (m.csr @ pv)).max() < 1e-12
    assert np.allclose(proj(pv), pv, atol=1e-12)


def test_matrixmarket_roundtrip(tmp_path):
    import scipy.io

    space, k, m = laplace_pair(4)
    path = tmp_path / "k.mtx"
    k.to_matrixmarket(path)
    back = scipy.io.mmread(str(path)).tocsr()
    assert abs(back - k.csr).max() < 1e-15
