"""Ground-state iterations: damped inverse iteration in the energy metric
(with optional golden-section step search), plain inverse iteration, and
gradient flow with discrete normalization (GFDN).

One metric solve is performed per outer iteration; the update direction is
affine in the step size, so the whole line search runs on precomputed ray
polynomials at no extra solve cost.
"""

import math

import numpy as np

from .mesh import InvalidInputError
from .sparse import SolverError, cg_solve

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0

SCHEMES = ("mdrgm", "inverse_iteration", "gfdn")


class EnergyIncreaseError(SolverError):
    """The iteration increased the energy beyond the admissible slack."""


class SolverConfig:
    def __init__(
        self,
        scheme="mdrgm",
        tau=1.0,
        tau_policy=None,
        tau_interval=(0.05, 2.0),
        tau_tol=1e-4,
        stop_energy_tol=1e-11,
        max_outer=50000,
        cg_tol=1e-12,
        precond="auto",
        energy_slack=1e-13,
    ):
        if scheme not in SCHEMES:
            raise InvalidInputError(f"unknown scheme {scheme!r}")
        if tau_policy is None:
            tau_policy = "golden_section" if scheme == "mdrgm" else "fixed"
        if tau_policy not in ("fixed", "golden_section"):
            raise InvalidInputError(f"unknown tau policy {tau_policy!r}")
        if scheme == "inverse_iteration":
            tau, tau_policy = 1.0, "fixed"
        if tau_policy == "fixed":
            if scheme == "gfdn":
                if tau <= 0:
                    raise InvalidInputError("gfdn needs tau > 0")
            elif not 0.0 < tau < 2.0:
                raise InvalidInputError("fixed tau must lie in (0, 2)")
        else:
            lo, hi = tau_interval
            if not (0.0 < lo < hi <= 2.0):
                raise InvalidInputError("tau interval must satisfy 0 < lo < hi <= 2")
        self.scheme = scheme
        self.tau = float(tau)
        self.tau_policy = tau_policy
        self.tau_interval = (float(tau_interval[0]), float(tau_interval[1]))
        self.tau_tol = float(tau_tol)
        self.stop_energy_tol = float(stop_energy_tol)
        self.max_outer = int(max_outer)
        self.cg_tol = float(cg_tol)
        self.precond = precond
        self.energy_slack = float(energy_slack)


class IterationTrace:
    """Per-iteration diagnostics; energies are non-increasing by contract."""

    columns = ("n", "energy", "lambda", "tau", "step_h1", "mass_prel", "cg_iters")

    def __init__(self):
        self.rows = []

    def append(self, n, energy, lam, tau, step_h1, mass_prel, cg_iters):
        self.rows.append((n, energy, lam, tau, step_h1, mass_prel, cg_iters))

    @property
    def energies(self):
        return np.array([r[1] for r in self.rows])

    @property
    def iterations(self):
        return len(self.rows) - 1

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def check_monotone(self, slack=1e-13):
        e = self.energies
        return bool(np.all(np.diff(e) <= slack))


def golden_section_minimize(f, lo, hi, tol):
    """Golden-section search for a local minimizer of a unimodal f on [lo, hi]."""
    a, b = float(lo), float(hi)
    h = b - a
    if h <= tol:
        return 0.5 * (a + b)
    c = a + _INV_PHI2 * h
    d = a + _INV_PHI * h
    yc, yd = f(c), f(d)
    n = int(math.ceil(math.log(tol / h) / math.log(_INV_PHI)))
    for _ in range(max(n - 1, 0)):
        if yc < yd:
            b, d, yd = d, c, yc
            h *= _INV_PHI
            c = a + _INV_PHI2 * h
            yc = f(c)
        else:
            a, c, yc = c, d, yd
            h *= _INV_PHI
            d = a + _INV_PHI * h
            yd = f(d)
    return c if yc < yd else d


class MetricSolver:
    """Warm-started CG solves with the metric operator L_u.

    The preconditioner is either Jacobi, or a frozen AMG hierarchy built on
    the u-independent part L_0 (the density terms perturb L_0 mildly, so a
    fixed hierarchy preconditions every iterate's metric).
    """

    REFRESH_CG_ITERS = 8

    def __init__(self, ops, config, mass_shift=0.0):
        self.ops = ops
        self.config = config
        self.mass_shift = float(mass_shift)
        self.warm = None
        self.last_iters = 0
        mode = config.precond
        if mode == "auto":
            if ops.dim < 20000:
                mode = "jacobi"
            elif ops.dim <= 200000:
                mode = "frozen_lu"
            else:
                mode = "jacobi"
        self.mode = mode
        self._amg = None
        self._factor = None
        self._needs_refresh = True
        if mode == "amg":
            self._amg = self._build_amg()

    def _base_matrix(self):
        base = self.ops.l0
        if self.mass_shift:
            base = base + self.mass_shift * self.ops.mass
        return base.tocsr()

    def _build_amg(self):
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(
            self._base_matrix().tocsr(), symmetry="symmetric", max_coarse=50
        )
        prec = ml.aspreconditioner(cycle="V")

        def apply(r):
            return prec @ r

        return apply

    def solve(self, u_vec, rhs=None):
        """Solve (mass_shift*M + L_u) y = M u (or a caller-provided rhs)."""
        mat = self.ops.metric(u_vec)
        if self.mass_shift:
            mat = (mat + self.mass_shift * self.ops.mass).tocsr()
        if rhs is None:
            rhs = self.ops.mass @ u_vec
        if self.mode == "amg":
            precond = self._amg
        elif self.mode == "frozen_lu":
            if self._needs_refresh:
                import scipy.sparse.linalg as spla

                self._factor = spla.splu(mat.tocsc())
                self._needs_refresh = False
            precond = self._factor.solve
        else:
            precond = self.mode
        y, rep = cg_solve(
            mat,
            rhs,
            tol=self.config.cg_tol,
            precond=precond,
            x0=self.warm,
            max_iter=10 * self.ops.dim,
        )
        if not rep.converged:
            raise SolverError(
                f"inner CG stalled at residual {rep.final_relative_residual:.2e}",
                rep,
            )
        if self.mode == "frozen_lu" and rep.iterations > self.REFRESH_CG_ITERS:
            self._needs_refresh = True
        self.warm = y.copy()
        self.last_iters = rep.iterations
        return y


def _normalize(ops, vec):
    nrm = ops.l2_norm(vec)
    if nrm <= 0:
        raise InvalidInputError("cannot normalize a zero state")
    return vec / nrm


def mdrgm_update(ops, u_vec, y_vec, tau):
    """One damped inverse-iteration update from u with y = L_u^{-1} M u.

    Returns (u_next, info); info carries gamma, the preliminary mass
    ||u_prel||, the achieved energy and the ray object.
    """
    muy = float(y_vec @ (ops.mass @ u_vec))
    if muy <= 0:
        raise SolverError("metric solve produced a nonpositive Rayleigh weight")
    gamma = 1.0 / muy
    ray = ops.ray(u_vec, y_vec)
    a, b = 1.0 - tau, tau * gamma
    mass_prel = math.sqrt(ray.mass_sq(a, b))
    u_next = (a * u_vec + b * y_vec) / mass_prel
    energy = ray.energy_normalized(a, b)
    return u_next, {
        "gamma": gamma,
        "mass_prel": mass_prel,
        "energy": energy,
        "ray": ray,
        "tau": tau,
    }


def golden_section_tau(ops, u_vec, y_vec, interval, tol):
    """Step size minimizing the post-normalization energy along the update ray.

    The direction is tau-independent, so the whole search reuses one metric
    solve; tau=1 is always admitted as a fallback candidate.
    """
    muy = float(y_vec @ (ops.mass @ u_vec))
    gamma = 1.0 / muy
    ray = ops.ray(u_vec, y_vec)

    def phi(tau):
        try:
            return ray.energy_normalized(1.0 - tau, tau * gamma)
        except ZeroDivisionError:
            return np.inf

    lo, hi = interval
    tau_star = golden_section_minimize(phi, lo, hi, tol)
    if phi(1.0) < phi(tau_star):
        tau_star = 1.0
    return tau_star, ray, gamma


def mdrgm_step(model, u, tau, config=None):
    """Field-level single step of the metric-driven Riemannian scheme."""
    config = config or SolverConfig(scheme="mdrgm", tau=tau, tau_policy="fixed")
    u_vec = model.check_field(u)
    solver = MetricSolver(model, config)
    y = solver.solve(u_vec)
    u_next, info = mdrgm_update(model, u_vec, y, tau)
    u_prel = (1.0 - tau) * u_vec + tau * info["gamma"] * y
    return model.field_from_vector(u_next), model.field_from_vector(u_prel)


def gfdn_step(model, u, tau, config=None):
    """One backward-Euler step (id + tau L_u)^{-1} u, then normalization.

    The identity is realised through the mass matrix so that "id" is the
    L2 identity on the discrete space.
    """
    config = config or SolverConfig(scheme="gfdn", tau=tau)
    u_vec = model.check_field(u)
    solver = MetricSolver(model, config, mass_shift=1.0 / tau)
    w = solver.solve(u_vec, rhs=(1.0 / tau) * (model.mass @ u_vec))
    return model.field_from_vector(_normalize(model, w))


def _make_solver(ops, config, mass_shift=0.0):
    maker = getattr(ops, "make_metric_solver", None)
    if maker is not None:
        return maker(config, mass_shift)
    return MetricSolver(ops, config, mass_shift)


def solve_ground_state(ops, u0_vec, config, callback=None):
    """Iterate the configured scheme until energy stagnation.

    Returns (u_vec, lambda, trace). Raises EnergyIncreaseError if any
    iteration increases the energy by more than the admissible slack,
    which signals a bug or an inadmissible step size.
    """
    u = _normalize(ops, np.asarray(u0_vec, dtype=float))
    if config.scheme == "gfdn":
        solver = _make_solver(ops, config, mass_shift=1.0 / config.tau)
    else:
        solver = _make_solver(ops, config)
    trace = IterationTrace()
    energy = ops.energy(u)
    lam_est = np.nan
    trace.append(0, energy, np.nan, np.nan, np.nan, np.nan, 0)
    converged = False
    for n in range(1, config.max_outer + 1):
        if config.scheme == "gfdn":
            tau = config.tau
            mu = ops.mass @ u
            w = solver.solve(u, rhs=(1.0 / tau) * mu)
            mw = ops.mass @ w
            mass_prel = math.sqrt(max(w @ mw, 0.0))
            u_next = w / mass_prel
            new_energy = ops.energy(u_next)
            # tau L_u w = M(u - w), so <L_u w, w> needs no extra matvec
            lam_est = float(w @ (mu - mw)) / (tau * mass_prel**2)
        else:
            y = solver.solve(u)
            if config.tau_policy == "golden_section":
                tau, ray, gamma = golden_section_tau(
                    ops, u, y, config.tau_interval, config.tau_tol
                )
                a, b = 1.0 - tau, tau * gamma
                mass_prel = math.sqrt(ray.mass_sq(a, b))
                u_next = (a * u + b * y) / mass_prel
                new_energy = ray.energy_normalized(a, b)
                lam_est = gamma
            else:
                tau = config.tau
                u_next, info = mdrgm_update(ops, u, y, tau)
                mass_prel = info["mass_prel"]
                new_energy = info["energy"]
                lam_est = info["gamma"]
        de = energy - new_energy
        if de < -config.energy_slack:
            raise EnergyIncreaseError(
                f"energy increased by {-de:.3e} at iteration {n} "
                f"(tau={tau:g}); the step size is inadmissible"
            )
        step_h1 = ops.h1_seminorm(u_next - u)
        trace.append(n, new_energy, lam_est, tau, step_h1, mass_prel, solver.last_iters)
        if callback is not None:
            callback(n, u_next, new_energy)
        u, energy = u_next, new_energy
        if de < config.stop_energy_tol:
            converged = True
            break
    if not converged:
        raise SolverError(
            f"no energy stagnation below {config.stop_energy_tol:g} within "
            f"{config.max_outer} iterations"
        )
    lam = float(u @ ops.gradient(u)) if hasattr(ops, "gradient") else lam_est
    return u, lam, trace
