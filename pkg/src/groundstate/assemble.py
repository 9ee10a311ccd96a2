"""Sparse FEM assembly on uniform triangulations.

All elements in one diagonal group are congruent, so shape data is computed
once per group and assembly reduces to einsums over element batches. Repeated
assemblies with the same sparsity (density-weighted masses in the nonlinear
iterations) reuse cached COO index arrays.
"""

import numpy as np
from scipy import sparse

from . import quadrature
from .mesh import FLAVOR_MULT, InvalidInputError

_I2 = sparse.identity(2, format="csr")
_J2 = sparse.csr_matrix(np.array([[0.0, -1.0], [1.0, 0.0]]))


class ModelValidationError(ValueError):
    pass


def _cache(space):
    if not hasattr(space, "_asm_cache"):
        geo = space.quad_geometry()
        groups = []
        for g, sl in enumerate(space.group_slices()):
            conn = space.conn[sl]
            nd = space.local_dofs
            rows = np.repeat(conn, nd, axis=1).ravel()
            cols = np.tile(conn, (1, nd)).ravel()
            frows = space.free_index[rows]
            fcols = space.free_index[cols]
            keep = (frows >= 0) & (fcols >= 0)
            groups.append(
                {
                    "conn": conn,
                    "geo": geo[g],
                    "rows": rows,
                    "cols": cols,
                    "frows": frows[keep],
                    "fcols": fcols[keep],
                    "keep": keep,
                    "pts": None,
                }
            )
        space._asm_cache = groups
    return space._asm_cache


def quad_points(space, group):
    cache = _cache(space)[group]
    if cache["pts"] is None:
        cache["pts"] = space.quad_points_phys(group)
    return cache["pts"]


def _eval_coefficient(fn, pts):
    """Evaluate a scalar/matrix coefficient on (ne, nq, 2) points."""
    flat = pts.reshape(-1, 2)
    vals = np.asarray(fn(flat), dtype=float)
    if vals.shape == (len(flat),):
        return vals.reshape(pts.shape[:2])
    if vals.shape == (len(flat), 2, 2):
        return vals.reshape(pts.shape[:2] + (2, 2))
    raise InvalidInputError("coefficient must return (n,) or (n,2,2) values")


def _weight_values(space, weight, group):
    """Per-quadrature-point scalar weight for one element group."""
    cache = _cache(space)[group]
    ne = len(cache["conn"])
    nq = len(quadrature.QUAD_WEIGHTS)
    if weight is None:
        return np.ones((ne, nq))
    if np.isscalar(weight):
        return np.full((ne, nq), float(weight))
    if isinstance(weight, np.ndarray):
        return weight
    return _eval_coefficient(weight, quad_points(space, group))


def _scatter(space, local_per_group, restrict):
    groups = _cache(space)
    n = space.n_free if restrict else space.n_dofs
    rows, cols, vals = [], [], []
    for cache, loc in zip(groups, local_per_group):
        v = loc.reshape(len(loc), -1).ravel()
        if restrict:
            rows.append(cache["frows"])
            cols.append(cache["fcols"])
            vals.append(v[cache["keep"]])
        else:
            rows.append(cache["rows"])
            cols.append(cache["cols"])
            vals.append(v)
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def assemble_mass(space, weight=None, restrict=True):
    """Weighted mass matrix: M_ij = int w phi_i phi_j.

    ``weight`` may be None (1), a scalar, a callable on points, or a list of
    per-group (ne, nq) arrays of values at quadrature points.
    """
    w = quadrature.QUAD_WEIGHTS
    local = []
    for g, cache in enumerate(_cache(space)):
        geo = cache["geo"]
        if isinstance(weight, (list, tuple)):
            rho = weight[g]
        else:
            rho = _weight_values(space, weight, g)
        loc = np.einsum(
            "q,eq,qi,qj->eij", w * geo["area"], rho, geo["phi"], geo["phi"]
        )
        local.append(loc)
    return _scatter(space, local, restrict)


def assemble_stiffness(space, coeff=None, scale=1.0, restrict=True):
    """Stiffness matrix K_ij = scale * int (A grad phi_j) . grad phi_i.

    ``coeff`` may be None (identity), a scalar, or a callable returning
    scalars or symmetric 2x2 matrices at points; ellipticity is checked at
    every quadrature point.
    """
    w = quadrature.QUAD_WEIGHTS
    local = []
    for g, cache in enumerate(_cache(space)):
        geo = cache["geo"]
        grad = geo["grad"]
        if coeff is None or np.isscalar(coeff):
            a = 1.0 if coeff is None else float(coeff)
            if a <= 0:
                raise ModelValidationError("diffusion coefficient must be positive")
            ne = len(cache["conn"])
            loc = np.einsum("q,qid,qjd->ij", w * geo["area"] * a, grad, grad)
            loc = np.broadcast_to(loc, (ne,) + loc.shape).copy()
        else:
            vals = _eval_coefficient(coeff, quad_points(space, g))
            if vals.ndim == 2:
                if np.any(vals <= 0):
                    raise ModelValidationError(
                        "non-elliptic coefficient at a quadrature point"
                    )
                loc = np.einsum(
                    "q,eq,qid,qjd->eij", w * geo["area"], vals, grad, grad
                )
            else:
                _check_elliptic(vals)
                loc = np.einsum(
                    "q,eqcd,qic,qjd->eij", w * geo["area"], vals, grad, grad
                )
        local.append(scale * loc)
    return _scatter(space, local, restrict)


def _check_elliptic(mats):
    a, b, c, d = mats[..., 0, 0], mats[..., 0, 1], mats[..., 1, 0], mats[..., 1, 1]
    if not np.allclose(b, c, rtol=1e-12, atol=1e-14):
        raise ModelValidationError("diffusion matrix must be symmetric")
    lam_min = 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * c)
    if np.any(lam_min <= 0):
        raise ModelValidationError("non-elliptic coefficient at a quadrature point")


def assemble_partial_x1(space, restrict=True):
    """First-derivative coupling C_ij = int phi_i d/dx1 phi_j.

    On the interior DOFs this matrix is antisymmetric, which makes the
    spin-orbit real-block operator symmetric.
    """
    w = quadrature.QUAD_WEIGHTS
    local = []
    for cache in _cache(space):
        geo = cache["geo"]
        loc = np.einsum(
            "q,qi,qj->ij", w * geo["area"], geo["phi"], geo["grad"][:, :, 0]
        )
        ne = len(cache["conn"])
        local.append(np.broadcast_to(loc, (ne,) + loc.shape).copy())
    return _scatter(space, local, restrict)


def complexify(s_re, s_im=None):
    """Real 2x2-block form of a complex-linear operator on interleaved DOFs."""
    out = sparse.kron(s_re, _I2, format="csr")
    if s_im is not None:
        out = out + sparse.kron(s_im, _J2, format="csr")
    return out


def spinor_blocks(b11, b22, b12=None, b21=None):
    """Stack component blocks (already in interleaved layout) component-major."""
    return sparse.bmat([[b11, b12], [b21, b22]], format="csr")


def assemble_so_coupling(space, k0, restrict=True):
    """Spin-orbit momentum coupling Re int i k0 (conj(w1) d1 v1 - conj(w2) d1 v2).

    Returns the spinor-layout real-block operator; it is block-diagonal over
    the two components with opposite sign.
    """
    c = assemble_partial_x1(space, restrict=restrict)
    up = sparse.kron(c, k0 * _J2, format="csr")
    dn = sparse.kron(c, -k0 * _J2, format="csr")
    z = sparse.csr_matrix(up.shape)
    return spinor_blocks(up, dn, z, z)


def expand_scalar(mat, flavor):
    """Lift a scalar-layout operator to act identically on all real parts."""
    if flavor == "real":
        return mat.tocsr()
    two = complexify(mat)
    if flavor == "complex":
        return two
    z = sparse.csr_matrix(two.shape)
    return spinor_blocks(two, two, z, z)


def qp_values(space, flavor, coeffs_full):
    """Complex values of each component at quadrature points.

    Returns a list over components of lists over the two element groups of
    (ne, nq) complex arrays.
    """
    n = space.n_dofs
    ncomp = 2 if flavor == "spinor" else 1
    out = []
    for c in range(ncomp):
        if flavor == "real":
            comp = coeffs_full.astype(complex)
        else:
            block = coeffs_full[c * 2 * n : (c + 1) * 2 * n]
            comp = block[0::2] + 1j * block[1::2]
        per_group = []
        for cache in _cache(space):
            vals = comp[cache["conn"]] @ cache["geo"]["phi"].T
            per_group.append(vals)
        out.append(per_group)
    return out


def qp_values_free(space, flavor, free_vec):
    """Like :func:`qp_values` but from an interior real-block vector."""
    from .mesh import block_indices

    full = np.zeros(FLAVOR_MULT[flavor] * space.n_dofs)
    full[block_indices(space.free, flavor, space.n_dofs)] = free_vec
    return qp_values(space, flavor, full)


def integrate(space, group_vals):
    """Integrate per-quadrature-point values given as [(ne, nq)] per group."""
    w = quadrature.QUAD_WEIGHTS
    total = 0.0
    for cache, vals in zip(_cache(space), group_vals):
        total += cache["geo"]["area"] * float(np.einsum("q,eq->", w, vals))
    return total


def assemble_load(space, group_vals, restrict=True):
    """Dual vector b_i = int f phi_i from values of f at quadrature points."""
    w = quadrature.QUAD_WEIGHTS
    n = space.n_free if restrict else space.n_dofs
    out = np.zeros(n)
    for cache, vals in zip(_cache(space), group_vals):
        geo = cache["geo"]
        loc = np.einsum("q,eq,qi->ei", w * geo["area"], vals, geo["phi"])
        idx = space.free_index[cache["conn"]] if restrict else cache["conn"]
        np.add.at(out, idx[idx >= 0], loc[idx >= 0])
    return out


def _part_index(dofs, k, flavor, n):
    if flavor == "real":
        return dofs
    comp, part = divmod(k, 2)
    return comp * 2 * n + 2 * dofs + part


def assemble_pointwise_block(space, flavor, block_vals, restrict=True):
    """Operator from pointwise symmetric m x m blocks coupling the real parts.

    ``block_vals`` is a list over element groups of (ne, nq, m, m) arrays;
    entry (p, r) multiplies trial part r against test part p at that point.
    Used for the rank-structure term of the energy Hessian.
    """
    m = FLAVOR_MULT[flavor]
    w = quadrature.QUAD_WEIGHTS
    nd = space.local_dofs
    n = space.n_free if restrict else space.n_dofs
    rows, cols, vals = [], [], []
    for cache, blocks in zip(_cache(space), block_vals):
        geo = cache["geo"]
        loc = np.einsum(
            "q,qi,qj,eqpr->eipjr", w * geo["area"], geo["phi"], geo["phi"], blocks
        )
        conn = cache["conn"]
        idx_parts = np.empty((len(conn), nd * m), dtype=np.int64)
        base = space.free_index[conn] if restrict else conn
        nn = space.n_free if restrict else space.n_dofs
        for k in range(m):
            idx_parts[:, k::m] = _part_index(base, k, flavor, nn)
        # mark boundary dofs (base < 0) invalid across their parts
        if restrict:
            bad = base < 0
            badm = np.repeat(bad, m, axis=1)
            idx_parts[badm] = -1
        r = np.repeat(idx_parts, nd * m, axis=1).ravel()
        c = np.tile(idx_parts, (1, nd * m)).ravel()
        v = loc.reshape(len(conn), nd * m, nd * m).ravel()
        keep = (r >= 0) & (c >= 0)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(v[keep])
    nm = n * m if flavor != "real" else n
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nm, nm),
    )
    return mat.tocsr()
