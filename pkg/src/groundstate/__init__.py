"""Ground states of linear, Gross-Pitaevskii and spin-orbit BEC energies.

Finite elements on uniform rectangle triangulations, metric-driven
Riemannian gradient iterations, and LOD coarse spaces built from the
same metric.
"""

from .mesh import (
    Mesh,
    FeSpace,
    Field,
    build_mesh,
    interpolate,
    prolongation_matrix,
    InvalidInputError,
)
from .assemble import (
    assemble_mass,
    assemble_stiffness,
    assemble_partial_x1,
    assemble_so_coupling,
    ModelValidationError,
)
from .sparse import (
    SparseSym,
    SolveReport,
    SolverError,
    IndefiniteOperatorError,
    cg_solve,
    smallest_eigpairs,
    dense_eig_oracle,
)
from .models import (
    ModelParams,
    ModelOps,
    build_model,
    energy,
    gradient,
    assemble_metric,
    hessian_apply,
    eigen_residual,
    normalize_l2,
)

__version__ = "0.1.0"
