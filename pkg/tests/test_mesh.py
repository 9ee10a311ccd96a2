import numpy as np
import pytest

from groundstate import (
    build_mesh,
    FeSpace,
    Field,
    interpolate,
    prolongation_matrix,
    InvalidInputError,
)
from groundstate.mesh import nest_ratio


def test_minimal_split():
    mesh = build_mesh((-1, 1, -1, 1), 1, 1)
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2


def test_counting_4x4():
    mesh = build_mesh((0, 1, 0, 1), 4, 4)
    assert mesh.n_vertices == 25
    assert mesh.n_triangles == 32


def test_positive_areas_and_tiling():
    mesh = build_mesh((0, 2, -1, 3), 5, 3)
    areas = mesh.signed_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - 2 * 4) < 1e-12


def test_reference_resolution_interior_dof_count():
    # 128x128 cells with P2 elements: (2*128 - 1)^2 interior DOFs
    mesh = build_mesh((-1, 1, -1, 1), 128, 128)
    space = FeSpace(mesh, order=2)
    assert space.n_free == 255**2


def test_p1_and_p2_dof_counts():
    mesh = build_mesh((0, 1, 0, 1), 6, 4)
    p1 = FeSpace(mesh, order=1)
    assert p1.n_dofs == mesh.n_vertices
    p2 = FeSpace(mesh, order=2)
    n_edges = 3 * 6 * 4 + 6 + 4  # horizontal+vertical+diagonal edges
    assert p2.n_dofs == mesh.n_vertices + n_edges


def test_invalid_mesh_inputs():
    with pytest.raises(InvalidInputError):
        build_mesh((0, 1, 0, 1), 0, 4)
    with pytest.raises(InvalidInputError):
        build_mesh((1, 0, 0, 1), 4, 4)


def test_mesh_width():
    mesh = build_mesh((0, 1, 0, 2), 4, 4)
    assert abs(mesh.width - np.hypot(0.25, 0.5)) < 1e-15


def test_field_boundary_zeroing_and_components():
    mesh = build_mesh((0, 1, 0, 1), 4, 4)
    space = FeSpace(mesh, order=2)
    f = interpolate(space, lambda p: np.exp(1j * p[:, 0]), flavor="complex")
    comp = f.component(0)
    assert np.all(comp[space.boundary_dofs] == 0)
    inner = space.free[0]
    x = space.dof_coords[inner, 0]
    assert abs(comp[inner] - np.exp(1j * x)) < 1e-14


def test_field_length_validation():
    mesh = build_mesh((0, 1, 0, 1), 2, 2)
    space = FeSpace(mesh)
    with pytest.raises(InvalidInputError):
        Field(space, "spinor", np.zeros(space.n_dofs))


def test_prolongation_reproduces_coarse_functions():
    coarse = FeSpace(build_mesh((0, 1, 0, 1), 4, 4), order=1)
    for order in (1, 2):
        fine = FeSpace(build_mesh((0, 1, 0, 1), 16, 16), order=order)
        p = prolongation_matrix(coarse, fine)
        # a piecewise-linear hat prolongs to its exact fine interpolant
        g = np.zeros(coarse.n_dofs)
        g[12] = 1.0
        vals = p @ g
        # evaluating the prolonged function at coarse vertex positions
        # recovers the coarse coefficients
        for cid in range(coarse.n_dofs):
            ci, cj = coarse.lattice[cid]
            r = nest_ratio(coarse, fine) * fine.order
            fid = (cj * r) * fine.grid_shape[0] + ci * r
            assert abs(vals[fid] - g[cid]) < 1e-14


def test_prolongation_exact_for_linear_functions():
    coarse = FeSpace(build_mesh((-1, 1, -1, 1), 4, 4), order=1)
    fine = FeSpace(build_mesh((-1, 1, -1, 1), 8, 8), order=2)
    p = prolongation_matrix(coarse, fine)
    g = 2.0 * coarse.dof_coords[:, 0] - 0.5 * coarse.dof_coords[:, 1]
    expected = 2.0 * fine.dof_coords[:, 0] - 0.5 * fine.dof_coords[:, 1]
    assert np.allclose(p @ g, expected, atol=1e-13)


def test_nest_ratio_rejects_non_nested():
    coarse = FeSpace(build_mesh((0, 1, 0, 1), 4, 4))
    fine = FeSpace(build_mesh((0, 1, 0, 1), 12, 12))
    with pytest.raises(InvalidInputError):
        nest_ratio(coarse, fine)
