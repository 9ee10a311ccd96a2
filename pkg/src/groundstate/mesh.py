"""Uniform triangulations of axis-aligned rectangles and Lagrange FE spaces.

Every rectangle cell is split along the same diagonal (lower-left to
upper-right), which makes all triangles congruent to one of two reference
shapes and keeps runs bit-reproducible. P2 degrees of freedom live on the
half-step lattice of the vertex grid, so DOF enumeration is purely
arithmetic.
"""

import numpy as np

from . import quadrature

FLAVOR_MULT = {"real": 1, "complex": 2, "spinor": 4}
FLAVOR_COMPONENTS = {"real": 1, "complex": 1, "spinor": 2}


class InvalidInputError(ValueError):
    pass


class Mesh:
    """Triangulation of [a1,b1] x [a2,b2] with n1 x n2 cells.

    Triangles are stored group-major: first all lower triangles
    (v00, v10, v11), then all upper triangles (v00, v11, v01).
    """

    def __init__(self, domain, n1, n2):
        a1, b1, a2, b2 = (float(v) for v in domain)
        if n1 < 1 or n2 < 1:
            raise InvalidInputError("cell counts must be >= 1")
        if not (b1 > a1 and b2 > a2):
            raise InvalidInputError("degenerate rectangle")
        self.domain = (a1, b1, a2, b2)
        self.n1, self.n2 = int(n1), int(n2)
        self.hx = (b1 - a1) / n1
        self.hy = (b2 - a2) / n2

        ii, jj = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1))
        self.vertices = np.stack(
            [a1 + ii.ravel() * self.hx, a2 + jj.ravel() * self.hy], axis=1
        )

        def vid(i, j):
            return j * (n1 + 1) + i

        ci, cj = np.meshgrid(np.arange(n1), np.arange(n2))
        ci, cj = ci.ravel(), cj.ravel()
        v00 = vid(ci, cj)
        v10 = vid(ci + 1, cj)
        v01 = vid(ci, cj + 1)
        v11 = vid(ci + 1, cj + 1)
        lower = np.stack([v00, v10, v11], axis=1)
        upper = np.stack([v00, v11, v01], axis=1)
        self.triangles = np.vstack([lower, upper])
        self.cells_lower = np.stack([ci, cj], axis=1)

    @property
    def n_vertices(self):
        return (self.n1 + 1) * (self.n2 + 1)

    @property
    def n_triangles(self):
        return 2 * self.n1 * self.n2

    @property
    def width(self):
        """Mesh width H: the longest edge (the cell diagonal)."""
        return float(np.hypot(self.hx, self.hy))

    def jacobians(self):
        """The two affine Jacobians (lower, upper), each 2x2."""
        jl = np.array([[self.hx, self.hx], [0.0, self.hy]])
        ju = np.array([[self.hx, 0.0], [self.hy, self.hy]])
        return jl, ju

    def signed_areas(self):
        tri = self.vertices[self.triangles]
        d1 = tri[:, 1] - tri[:, 0]
        d2 = tri[:, 2] - tri[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_mesh(domain, n1, n2):
    """Uniformly triangulate the rectangle ``domain = (a1, b1, a2, b2)``."""
    return Mesh(domain, n1, n2)


class FeSpace:
    """Lagrange FE space of order 1 or 2 with homogeneous Dirichlet BCs.

    ``free`` lists the interior DOFs; assembled operators are restricted to
    them by index elimination. ``lattice`` holds integer coordinates of every
    DOF on the (order * n)-step grid, used for exact boundary detection and
    nesting arithmetic.
    """

    def __init__(self, mesh, order=1):
        if order not in (1, 2):
            raise InvalidInputError("order must be 1 or 2")
        self.mesh = mesh
        self.order = order
        n1, n2 = mesh.n1, mesh.n2
        a1, b1, a2, b2 = mesh.domain
        r = order
        self.grid_shape = (r * n1 + 1, r * n2 + 1)
        gx, gy = self.grid_shape
        ii, jj = np.meshgrid(np.arange(gx), np.arange(gy))
        ii, jj = ii.ravel(), jj.ravel()
        self.lattice = np.stack([ii, jj], axis=1)
        self.dof_coords = np.stack(
            [a1 + ii * (mesh.hx / r), a2 + jj * (mesh.hy / r)], axis=1
        )
        on_boundary = (ii == 0) | (ii == gx - 1) | (jj == 0) | (jj == gy - 1)
        self.boundary_dofs = np.flatnonzero(on_boundary)
        self.free = np.flatnonzero(~on_boundary)
        self.n_dofs = gx * gy
        self.n_free = len(self.free)
        # map full dof index -> free index, -1 on the boundary
        self.free_index = np.full(self.n_dofs, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(self.n_free)
        self.conn = self._connectivity()
        self.local_dofs = 3 if order == 1 else 6

    def _did(self, ii, jj):
        return jj * self.grid_shape[0] + ii

    def _connectivity(self):
        n1 = self.mesh.n1
        ci, cj = self.mesh.cells_lower[:, 0], self.mesh.cells_lower[:, 1]
        if self.order == 1:
            d = self._did
            lower = np.stack([d(ci, cj), d(ci + 1, cj), d(ci + 1, cj + 1)], axis=1)
            upper = np.stack([d(ci, cj), d(ci + 1, cj + 1), d(ci, cj + 1)], axis=1)
        else:
            d = self._did
            i2, j2 = 2 * ci, 2 * cj
            lower = np.stack(
                [
                    d(i2, j2),
                    d(i2 + 2, j2),
                    d(i2 + 2, j2 + 2),
                    d(i2 + 1, j2),
                    d(i2 + 2, j2 + 1),
                    d(i2 + 1, j2 + 1),
                ],
                axis=1,
            )
            upper = np.stack(
                [
                    d(i2, j2),
                    d(i2 + 2, j2 + 2),
                    d(i2, j2 + 2),
                    d(i2 + 1, j2 + 1),
                    d(i2 + 1, j2 + 2),
                    d(i2, j2 + 1),
                ],
                axis=1,
            )
        return np.vstack([lower, upper])

    def group_slices(self):
        nc = self.mesh.n1 * self.mesh.n2
        return [slice(0, nc), slice(nc, 2 * nc)]

    def quad_geometry(self):
        """Per-group shape data at quadrature points.

        Returns a list of two dicts with keys: ``phi`` (nq, nd), ``grad``
        (nq, nd, 2) in physical coordinates, ``det`` (area scale), ``points``
        reference quadrature points mapped per element lazily via
        :meth:`quad_points_phys`.
        """
        out = []
        for jac in self.mesh.jacobians():
            phi, gref = quadrature.shape_functions(self.order)
            jinv_t = np.linalg.inv(jac).T
            gphys = gref @ jinv_t.T
            out.append(
                {"phi": phi, "grad": gphys, "area": abs(np.linalg.det(jac)) / 2.0}
            )
        return out

    def quad_points_phys(self, group):
        """Physical quadrature points for one element group, (ne, nq, 2)."""
        sl = self.group_slices()[group]
        v0 = self.mesh.vertices[self.mesh.triangles[sl, 0]]
        jac = self.mesh.jacobians()[group]
        ref = quadrature.QUAD_POINTS @ jac.T
        return v0[:, None, :] + ref[None, :, :]

    def restrict(self, mat):
        """Eliminate boundary DOFs (scalar-layout matrices)."""
        return mat[self.free][:, self.free].tocsr()

    def restrict_vec(self, vec):
        return vec[self.free]

    def extend_vec(self, vec):
        out = np.zeros(self.n_dofs)
        out[self.free] = vec
        return out


class Field:
    """Coefficient vector over an FeSpace.

    ``coeffs`` is a real array of length ``mult * n_dofs`` where ``mult`` is
    1 (real), 2 (complex, interleaved re/im per DOF) or 4 (two complex
    components stacked component-major). Boundary DOFs are kept exactly zero.
    """

    def __init__(self, space, flavor, coeffs=None):
        if flavor not in FLAVOR_MULT:
            raise InvalidInputError(f"unknown flavor {flavor!r}")
        self.space = space
        self.flavor = flavor
        self.mult = FLAVOR_MULT[flavor]
        n = self.mult * space.n_dofs
        if coeffs is None:
            coeffs = np.zeros(n)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (n,):
            raise InvalidInputError(
                f"coefficient length {coeffs.shape} != flavor multiplicity x dofs ({n},)"
            )
        self.coeffs = coeffs
        self.zero_boundary()

    def zero_boundary(self):
        idx = block_indices(self.space.boundary_dofs, self.flavor, self.space.n_dofs)
        self.coeffs[idx] = 0.0

    def copy(self):
        return Field(self.space, self.flavor, self.coeffs.copy())

    @property
    def n_components(self):
        return FLAVOR_COMPONENTS[self.flavor]

    def component(self, c):
        """Complex view of component c over all DOFs (copy)."""
        n = self.space.n_dofs
        if self.flavor == "real":
            if c != 0:
                raise InvalidInputError("real field has a single component")
            return self.coeffs.astype(complex)
        block = self.coeffs[c * 2 * n : (c + 1) * 2 * n]
        return block[0::2] + 1j * block[1::2]

    def set_component(self, c, values):
        n = self.space.n_dofs
        values = np.asarray(values)
        if self.flavor == "real":
            self.coeffs[:] = values.real
        else:
            block = self.coeffs[c * 2 * n : (c + 1) * 2 * n]
            block[0::2] = values.real
            block[1::2] = values.imag
        self.zero_boundary()

    def free_vector(self):
        """Interior coefficients in real-block layout."""
        idx = block_indices(self.space.free, self.flavor, self.space.n_dofs)
        return self.coeffs[idx]

    def with_free_vector(self, vec):
        f = Field(self.space, self.flavor)
        idx = block_indices(self.space.free, self.flavor, self.space.n_dofs)
        f.coeffs[idx] = vec
        return f


def block_indices(dof_ids, flavor, n_dofs):
    """Full-layout indices of the given scalar DOFs for every real part."""
    dof_ids = np.asarray(dof_ids)
    if flavor == "real":
        return dof_ids
    inter = np.empty(2 * len(dof_ids), dtype=np.int64)
    inter[0::2] = 2 * dof_ids
    inter[1::2] = 2 * dof_ids + 1
    if flavor == "complex":
        return inter
    n = n_dofs
    return np.concatenate([inter, inter + 2 * n])


def interpolate(space, fns, flavor="real"):
    """Nodal interpolant of callables on the DOF lattice, boundary zeroed.

    ``fns`` is one callable for real/complex flavors or a pair for spinors;
    each callable takes an (n, 2) coordinate array.
    """
    if flavor == "spinor":
        if not (isinstance(fns, (list, tuple)) and len(fns) == 2):
            raise InvalidInputError("spinor interpolation needs two callables")
        fn_list = list(fns)
    else:
        fn_list = [fns if not isinstance(fns, (list, tuple)) else fns[0]]
    field = Field(space, flavor)
    for c, fn in enumerate(fn_list):
        vals = np.asarray(fn(space.dof_coords))
        field.set_component(c, vals)
    return field


def nest_ratio(coarse, fine):
    """Refinement ratio between two spaces on the same rectangle.

    Raises InvalidInputError unless the fine mesh is an integer power-of-two
    refinement of the coarse one.
    """
    if coarse.mesh.domain != fine.mesh.domain:
        raise InvalidInputError("spaces live on different rectangles")
    r1, rem1 = divmod(fine.mesh.n1, coarse.mesh.n1)
    r2, rem2 = divmod(fine.mesh.n2, coarse.mesh.n2)
    if rem1 or rem2 or r1 != r2 or r1 < 1 or (r1 & (r1 - 1)):
        raise InvalidInputError("fine mesh is not a power-of-two refinement")
    return r1


def prolongation_matrix(coarse, fine):
    """Sparse nodal embedding of a coarse P1 space into a nested fine space.

    Each fine DOF value is the evaluation of the piecewise-linear coarse
    function there, which is exact because the triangulations are nested.
    """
    from scipy import sparse

    if coarse.order != 1:
        raise InvalidInputError("prolongation is defined from P1 coarse spaces")
    r = nest_ratio(coarse, fine) * fine.order
    # fine lattice in units of the coarse cell: cell index + local offset
    ii, jj = fine.lattice[:, 0], fine.lattice[:, 1]
    ci = np.minimum(ii // r, coarse.mesh.n1 - 1)
    cj = np.minimum(jj // r, coarse.mesh.n2 - 1)
    s = (ii - ci * r) / r
    t = (jj - cj * r) / r

    def cvid(i, j):
        return j * (coarse.mesh.n1 + 1) + i

    nfine = fine.n_dofs
    rows = np.repeat(np.arange(nfine), 3)
    cols = np.empty((nfine, 3), dtype=np.int64)
    vals = np.empty((nfine, 3))
    low = s >= t  # lower triangle of the coarse cell (diagonal included)
    cols[low, 0] = cvid(ci[low], cj[low])
    cols[low, 1] = cvid(ci[low] + 1, cj[low])
    cols[low, 2] = cvid(ci[low] + 1, cj[low] + 1)
    vals[low, 0] = 1.0 - s[low]
    vals[low, 1] = s[low] - t[low]
    vals[low, 2] = t[low]
    up = ~low
    cols[up, 0] = cvid(ci[up], cj[up])
    cols[up, 1] = cvid(ci[up] + 1, cj[up] + 1)
    cols[up, 2] = cvid(ci[up], cj[up] + 1)
    vals[up, 0] = 1.0 - t[up]
    vals[up, 1] = s[up]
    vals[up, 2] = t[up] - s[up]
    mat = sparse.coo_matrix(
        (vals.ravel(), (rows, cols.ravel())), shape=(nfine, coarse.n_dofs)
    )
    return mat.tocsr()
