"""Sparse symmetric operators, conjugate-gradient solves and eigenpairs.

The CG solver is the workhorse behind every application of the inverse
metric operator; the eigensolver is a blocked inverse iteration with
Rayleigh-Ritz extraction, optionally confined to a constraint subspace by
M-orthogonal projection after every operator application (used for tangent
spaces of the L2 sphere).
"""

import numpy as np
from scipy import sparse
import scipy.linalg
import scipy.io
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IndefiniteOperatorError(SolverError):
    """Negative curvature encountered: the operator is not SPD."""


class SparseSym:
    """Symmetric real sparse matrix in CSR form with a validated pattern."""

    def __init__(self, mat, check=True, tol=1e-13):
        mat = sparse.csr_matrix(mat)
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("matrix must be square")
        if check and mat.nnz:
            scale = np.abs(mat.data).max()
            asym = abs(mat - mat.T)
            if asym.nnz and asym.data.max() > tol * max(scale, 1.0):
                raise ValueError("matrix is not symmetric within tolerance")
        self.csr = mat
        self.dim = mat.shape[0]

    def matvec(self, x):
        return self.csr @ x

    def diagonal(self):
        return self.csr.diagonal()

    @property
    def nnz(self):
        return self.csr.nnz

    def to_matrixmarket(self, path):
        """Dump in MatrixMarket coordinate format for external cross-checks."""
        scipy.io.mmwrite(str(path), self.csr.tocoo(), symmetry="symmetric")

    def toarray(self):
        return self.csr.toarray()


class SolveReport:
    def __init__(self, iterations, final_relative_residual, converged):
        self.iterations = iterations
        self.final_relative_residual = final_relative_residual
        self.converged = converged

    def __repr__(self):
        return (
            f"SolveReport(iterations={self.iterations}, "
            f"final_relative_residual={self.final_relative_residual:.3e}, "
            f"converged={self.converged})"
        )


def _as_matvec(a):
    if isinstance(a, SparseSym):
        return a.csr.__matmul__, a.dim, a.csr.diagonal()
    if sparse.issparse(a):
        return a.__matmul__, a.shape[0], a.diagonal()
    raise TypeError("expected SparseSym or scipy sparse matrix")


def _make_preconditioner(precond, diag):
    if precond is None or precond == "none":
        return lambda r: r
    if precond == "jacobi":
        d = diag.copy()
        d[d <= 0] = 1.0
        dinv = 1.0 / d
        return lambda r: dinv * r
    if callable(precond):
        return precond
    raise ValueError(f"unknown preconditioner {precond!r}")


def cg_solve(
    a,
    b,
    tol=1e-12,
    max_iter=None,
    precond="jacobi",
    x0=None,
    project=None,
):
    """Preconditioned conjugate gradients for SPD systems.

    Returns (x, SolveReport); convergence means ||Ax - b|| <= tol * ||b||.
    A detected negative-curvature direction raises IndefiniteOperatorError
    (a model-assumption violation). If ``project`` is given, the solve is
    confined to its range: the projector is applied to b, to preconditioned
    residuals and to the start vector, realising CG on the projected operator.
    """
    matvec, dim, diag = _as_matvec(a)
    if max_iter is None:
        max_iter = 10 * dim
    apply_m = _make_preconditioner(precond, diag)
    b = np.asarray(b, dtype=float)
    if project is not None:
        b = project(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(dim), SolveReport(0, 0.0, True)
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=float)
    if project is not None and x0 is not None:
        x = project(x)
    r = b - matvec(x)
    if project is not None:
        r = project(r)
    z = apply_m(r)
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol and it < max_iter:
        ap = matvec(p)
        if project is not None:
            ap = project(ap)
        pap = p @ ap
        if pap <= 0:
            raise IndefiniteOperatorError(
                "negative curvature in CG: operator is not SPD on the subspace",
                SolveReport(it, res, False),
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        it += 1
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = apply_m(r)
        if project is not None:
            z = project(z)
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return x, SolveReport(it, res, res <= tol)


def make_span_projector(basis, m=None):
    """Euclidean (or M-orthogonal) projector onto the complement of a span.

    ``basis`` is (dim, k). Returns a callable v -> v - U (U^T M v) with U an
    M-orthonormalisation of the basis, so that (u_i, Pv)_M = 0.
    """
    u = np.atleast_2d(np.asarray(basis, dtype=float))
    if u.shape[0] < u.shape[1]:
        u = u.T
    if m is None:
        mu = u
    else:
        mmv = m.matvec if isinstance(m, SparseSym) else m.__matmul__
        mu = np.column_stack([mmv(u[:, j]) for j in range(u.shape[1])])
    gram = u.T @ mu
    chol = scipy.linalg.cholesky(gram, lower=True)
    u = scipy.linalg.solve_triangular(chol, u.T, lower=True).T
    mu = scipy.linalg.solve_triangular(chol, mu.T, lower=True).T

    def project(v):
        return v - u @ (mu.T @ v)

    return project


def make_kernel_projector(b_mat):
    """Euclidean projector onto ker(B) for a full-row-rank sparse B."""
    b_mat = sparse.csr_matrix(b_mat)
    gram = (b_mat @ b_mat.T).toarray()
    chol = scipy.linalg.cho_factor(gram, lower=True)

    def project(v):
        return v - b_mat.T @ scipy.linalg.cho_solve(chol, b_mat @ v)

    return project


def dense_eig_oracle(a, m=None, constraint_basis=None):
    """Full ascending generalized spectrum by a direct dense method.

    Brute-force reference for :func:`smallest_eigpairs` on coarse meshes;
    refuses problems above 2000 unknowns. With a constraint basis, the
    problem is restricted to the M-orthogonal complement of its span.
    """
    a = a.toarray() if not isinstance(a, np.ndarray) else np.asarray(a)
    n = a.shape[0]
    if n > 2000:
        raise ValueError("dense oracle is limited to dim <= 2000")
    if m is None:
        m_arr = np.eye(n)
    else:
        m_arr = m.toarray() if not isinstance(m, np.ndarray) else np.asarray(m)
    try:
        scipy.linalg.cholesky(m_arr)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("M must be symmetric positive definite") from exc
    if constraint_basis is None:
        vals, vecs = scipy.linalg.eigh(a, m_arr)
        return vals, vecs
    u = np.atleast_2d(np.asarray(constraint_basis, dtype=float))
    if u.shape[0] < u.shape[1]:
        u = u.T
    # M-orthonormal basis of the complement via a dense eigendecomposition
    mu = m_arr @ u
    gram = u.T @ mu
    chol = scipy.linalg.cholesky(gram, lower=True)
    mu = scipy.linalg.solve_triangular(chol, mu.T, lower=True).T
    q, _ = scipy.linalg.qr(mu, mode="full")
    z = q[:, u.shape[1] :]
    vals, small = scipy.linalg.eigh(z.T @ a @ z, z.T @ m_arr @ z)
    return vals, z @ small


def smallest_eigpairs(
    a,
    m,
    k,
    tol=1e-9,
    constraint_basis=None,
    block_extra=4,
    max_iterations=400,
    inner_tol=None,
    shift="auto",
    seed=0,
):
    """k smallest eigenpairs of A x = lambda M x, optionally on a subspace.

    Blocked inverse iteration with Rayleigh-Ritz over [Y, X] and M-orthogonal
    deflation. With ``constraint_basis`` the iteration is confined to the
    M-orthogonal complement of the span by projecting after every operator
    application. An adaptive spectral shift accelerates clustered spectra; it
    backs off automatically if the shifted operator loses positivity.

    Returns (values, vectors, info) with M-orthonormal columns, residuals
    ||A x - lambda M x||_{M^-1} <= tol, and cluster flags in ``info``.
    """
    a_mv, dim, _ = _as_matvec(a)
    m_mv, _, m_diag = _as_matvec(m)
    n_constr = 0
    project = None
    if constraint_basis is not None:
        u = np.atleast_2d(np.asarray(constraint_basis, dtype=float))
        n_constr = min(u.shape)
        project = make_span_projector(constraint_basis, m)
    if k > dim - n_constr:
        raise ValueError("k exceeds the constrained subspace dimension")
    nb = min(k + block_extra, dim - n_constr)
    if inner_tol is None:
        inner_tol = max(1e-3 * tol, 1e-13)

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((dim, nb))
    if project is not None:
        x = np.column_stack([project(x[:, j]) for j in range(nb)])
    x = _m_orthonormalize(x, m_mv)

    m_prec_diag = m_diag.copy()
    m_prec_diag[m_prec_diag <= 0] = 1.0

    def minv_norm(r):
        y, _ = cg_solve(m, r, tol=1e-10, precond="jacobi")
        val = r @ y
        return np.sqrt(max(val, 0.0))

    sigma = 0.0
    sigma_locked = shift not in ("auto",)
    if sigma_locked and shift is not None:
        sigma = float(shift)
    theta = None
    warm = [None] * nb
    a_shift = None
    conv_hist = []
    for it in range(max_iterations):
        if a_shift is None or getattr(a_shift, "_sigma", None) != sigma:
            base = a.csr if isinstance(a, SparseSym) else a
            mm = m.csr if isinstance(m, SparseSym) else m
            a_shift = (base - sigma * mm).tocsr() if sigma != 0.0 else base
            a_shift._sigma = sigma
        y = np.empty_like(x)
        failed = False
        for j in range(nb):
            rhs = m_mv(x[:, j])
            if project is not None:
                rhs = project(rhs)
            try:
                y[:, j], _ = cg_solve(
                    a_shift,
                    rhs,
                    tol=inner_tol,
                    precond="jacobi",
                    x0=warm[j],
                    project=project,
                    max_iter=5 * dim,
                )
            except IndefiniteOperatorError:
                failed = True
                break
            warm[j] = y[:, j]
        if failed:
            # shift overshot the smallest eigenvalue: back off and retry
            sigma = 0.0 if theta is None else max(0.0, 2 * sigma - theta[0])
            if sigma == getattr(a_shift, "_sigma", None):
                sigma = 0.0
            warm = [None] * nb
            continue
        s = np.hstack([y, x])
        if project is not None:
            s = np.column_stack([project(s[:, j]) for j in range(s.shape[1])])
        s = _m_orthonormalize(s, m_mv)
        ah = s.T @ np.column_stack([a_mv(s[:, j]) for j in range(s.shape[1])])
        ah = 0.5 * (ah + ah.T)
        theta, q = scipy.linalg.eigh(ah)
        x = s @ q[:, :nb]
        theta = theta[:nb]
        # residuals for the k wanted pairs
        res = []
        for j in range(k):
            r = a_mv(x[:, j]) - theta[j] * m_mv(x[:, j])
            if project is not None:
                r = project(r)
            res.append(minv_norm(r) / max(abs(theta[j]), 1.0))
        conv_hist.append(max(res))
        if max(res) <= tol:
            break
        if not sigma_locked and it >= 1:
            # shift below the current smallest Ritz value, with a margin of
            # several block widths so the shifted operator stays positive
            spread = max(theta[-1] - theta[0], 1e-8 * max(abs(theta[0]), 1.0))
            cand = theta[0] - 3.0 * spread
            if cand > sigma and cand > 0:
                sigma = cand
                warm = [None] * nb
    else:
        raise SolverError(
            f"eigensolver did not reach tol={tol:g} in {max_iterations} "
            f"iterations (last residual {conv_hist[-1]:.2e})"
        )
    values = theta[:k]
    vectors = x[:, :k]
    gaps = np.diff(values)
    clusters = gaps <= 1e-6 * np.maximum(np.abs(values[:-1]), 1.0)
    info = {
        "iterations": it + 1,
        "residuals": res,
        "clustered": clusters,
        "shift": sigma,
    }
    return values, vectors, info


def _m_orthonormalize(x, m_mv, drop_tol=1e-12):
    """M-orthonormalise columns via Gram Cholesky with rank safeguarding."""
    mx = np.column_stack([m_mv(x[:, j]) for j in range(x.shape[1])])
    gram = x.T @ mx
    gram = 0.5 * (gram + gram.T)
    try:
        chol = scipy.linalg.cholesky(gram + 0.0, lower=True)
        return scipy.linalg.solve_triangular(chol, x.T, lower=True).T
    except scipy.linalg.LinAlgError:
        vals, vecs = scipy.linalg.eigh(gram)
        keep = vals > drop_tol * vals.max()
        basis = vecs[:, keep] / np.sqrt(vals[keep])
        return x @ basis
