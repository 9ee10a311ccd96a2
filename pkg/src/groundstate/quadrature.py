"""Reference-triangle quadrature and Lagrange shape functions.

One fixed symmetric rule (polynomial degree 6, 12 points) is used for every
assembly in the package so that mass, stiffness, first-derivative couplings
and the quartic density terms are all integrated consistently.
"""

import numpy as np

# Dunavant degree-6 rule on the reference triangle {x>=0, y>=0, x+y<=1}.
# Weights are normalised to sum to 1; multiply by the element area.
_A1, _B1, _W1 = 0.501426509658179, 0.249286745170910, 0.116786275726379
_A2, _B2, _W2 = 0.873821971016996, 0.063089014491502, 0.050844906370207
_C1, _C2, _C3 = 0.053145049844817, 0.310352451033784, 0.636502499121399
_W3 = 0.082851075618374


def _orbit3(a, b):
    return [(b, b), (a, b), (b, a)]


def _orbit6(a, b, c):
    return [(a, b), (b, a), (b, c), (c, b), (c, a), (a, c)]


QUAD_POINTS = np.array(
    _orbit3(_A1, _B1) + _orbit3(_A2, _B2) + _orbit6(_C1, _C2, _C3)
)
QUAD_WEIGHTS = np.array([_W1] * 3 + [_W2] * 3 + [_W3] * 6)
QUAD_DEGREE = 6


def p1_shape(points):
    """P1 shape values at reference points, shape (npts, 3)."""
    x, y = points[:, 0], points[:, 1]
    return np.stack([1.0 - x - y, x, y], axis=1)


def p1_grad(points):
    """P1 shape gradients at reference points, shape (npts, 3, 2)."""
    n = len(points)
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.broadcast_to(g, (n, 3, 2)).copy()


def p2_shape(points):
    """P2 shape values at reference points, shape (npts, 6).

    Local ordering: vertices (0,1,2) then edge midpoints (01, 12, 20).
    """
    x, y = points[:, 0], points[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ],
        axis=1,
    )


def p2_grad(points):
    """P2 shape gradients at reference points, shape (npts, 6, 2)."""
    x, y = points[:, 0], points[:, 1]
    l0 = 1.0 - x - y
    zeros = np.zeros_like(x)
    # d/dx, d/dy of each shape function
    gx = np.stack(
        [
            1 - 4 * l0,
            4 * x - 1,
            zeros,
            4 * (l0 - x),
            4 * y,
            -4 * y,
        ],
        axis=1,
    )
    gy = np.stack(
        [
            1 - 4 * l0,
            zeros,
            4 * y - 1,
            -4 * x,
            4 * x,
            4 * (l0 - y),
        ],
        axis=1,
    )
    return np.stack([gx, gy], axis=2)


def shape_functions(order, points=None):
    """Return (values, gradients) of the order-1 or order-2 basis."""
    if points is None:
        points = QUAD_POINTS
    if order == 1:
        return p1_shape(points), p1_grad(points)
    if order == 2:
        return p2_shape(points), p2_grad(points)
    raise ValueError(f"unsupported polynomial order {order}")
