"""Energy models: linear, Gross-Pitaevskii, and spin-orbit-coupled BEC.

Each assembled model exposes the energy, its first derivative, the
linearized metric operator L_u (with E'(u) = L_u u), and the second
derivative. Complex and two-component fields are realized as real block
operators consistent with the real inner product Re(., .), so one sparse
kernel serves all three models. All operators act on interior DOFs.
"""

import warnings

import numpy as np
from scipy import sparse

from . import assemble
from .assemble import ModelValidationError
from .mesh import Field, FLAVOR_MULT, InvalidInputError, block_indices
from .sparse import SparseSym, cg_solve


class ModelParams:
    """Physical data of one model.

    kind 'linear'/'gpe': diffusion ``a`` (scalar or callable), potential ``v``
    (scalar or callable), interaction ``beta`` (gpe only).
    kind 'so_bec': potentials ``v1``/``v2``, interactions ``beta11``,
    ``beta12``, ``beta22``, detuning ``delta``, Rabi frequency ``omega`` and
    spin-orbit wave number ``k0``; the kinetic coefficient is fixed to I/2.
    """

    def __init__(self, kind, **kw):
        if kind not in ("linear", "gpe", "so_bec"):
            raise InvalidInputError(f"unknown model kind {kind!r}")
        self.kind = kind
        if kind in ("linear", "gpe"):
            self.a = kw.pop("a", None)
            self.v = kw.pop("v", 0.0)
            self.beta = float(kw.pop("beta", 0.0)) if kind == "gpe" else 0.0
            if self.beta < 0:
                raise ModelValidationError("beta must be nonnegative (repulsive)")
        else:
            self.v1 = kw.pop("v1")
            self.v2 = kw.pop("v2", self.v1)
            self.beta11 = float(kw.pop("beta11", 0.0))
            self.beta12 = float(kw.pop("beta12", 0.0))
            self.beta22 = float(kw.pop("beta22", 0.0))
            if min(self.beta11, self.beta12, self.beta22) < 0:
                raise ModelValidationError("interactions must be repulsive")
            self.delta = float(kw.pop("delta", 0.0))
            self.omega = float(kw.pop("omega", 0.0))
            self.k0 = float(kw.pop("k0", 0.0))
        self.enforce_admissibility = bool(kw.pop("enforce_admissibility", True))
        if kw:
            raise InvalidInputError(f"unknown model parameters {sorted(kw)}")

    @property
    def flavor(self):
        return "spinor" if self.kind == "so_bec" else "real"

    def so_shift(self):
        return (abs(self.delta) + abs(self.omega) + 2 * self.k0**2) / 2.0

    def beta_pairs(self):
        """(component_j, component_k, energy weight) of the quartic terms."""
        if self.kind == "linear":
            return []
        if self.kind == "gpe":
            return [(0, 0, self.beta / 4.0)] if self.beta else []
        out = []
        if self.beta11:
            out.append((0, 0, self.beta11 / 4.0))
        if self.beta22:
            out.append((1, 1, self.beta22 / 4.0))
        if self.beta12:
            out.append((0, 1, self.beta12 / 2.0))
        return out


def _as_callable(v):
    if np.isscalar(v):
        val = float(v)
        return lambda pts: np.full(len(pts), val)
    return v


class ModelOps:
    """A model assembled on one FE space (immutable after construction)."""

    def __init__(self, params, space):
        self.params = params
        self.space = space
        self.flavor = params.flavor
        self.mult = FLAVOR_MULT[self.flavor]
        self.dim = self.mult * space.n_free

        m_scal = assemble.assemble_mass(space)
        k_scal = assemble.assemble_stiffness(space)
        self.m_scal = m_scal
        self.mass = assemble.expand_scalar(m_scal, self.flavor)
        self.h1 = assemble.expand_scalar(k_scal, self.flavor)

        if params.kind in ("linear", "gpe"):
            ka = assemble.assemble_stiffness(space, params.a)
            mv = assemble.assemble_mass(space, _as_callable(params.v))
            self.l0 = (ka + mv).tocsr()
        else:
            self._check_admissible(params)
            c = assemble.assemble_partial_x1(space)
            mv1 = assemble.assemble_mass(space, _as_callable(params.v1))
            mv2 = assemble.assemble_mass(space, _as_callable(params.v2))
            half = params.delta / 2.0
            diag1 = assemble.complexify(0.5 * k_scal + mv1 + half * m_scal)
            diag2 = assemble.complexify(0.5 * k_scal + mv2 - half * m_scal)
            if params.k0:
                so = sparse.kron(c, params.k0 * assemble._J2, format="csr")
                diag1 = diag1 + so
                diag2 = diag2 - so
            rabi = assemble.complexify((params.omega / 2.0) * m_scal)
            self.l0 = assemble.spinor_blocks(diag1, diag2, rabi, rabi)
        self.l0 = self.l0.tocsr()
        self._mass_sym = None

    def _check_admissible(self, params):
        shift = params.so_shift()
        for v in (params.v1, params.v2):
            fn = _as_callable(v)
            for g in range(2):
                pts = assemble.quad_points(self.space, g).reshape(-1, 2)
                vals = np.asarray(fn(pts), dtype=float)
                if np.any(vals < 0):
                    raise ModelValidationError("potentials must be nonnegative")
                if np.any(vals - shift < -1e-12):
                    msg = (
                        "trapping potential is weaker than the detuning/Rabi/"
                        f"spin-orbit shift {shift:g}; the metric may lose coercivity"
                    )
                    if params.enforce_admissibility:
                        raise ModelValidationError(msg)
                    warnings.warn(msg)
                    return

    # -- field/vector plumbing -------------------------------------------

    def check_field(self, u):
        if not isinstance(u, Field):
            raise InvalidInputError("expected a Field")
        if u.space is not self.space:
            raise InvalidInputError("field lives on a different space")
        if u.flavor != self.flavor:
            raise InvalidInputError(
                f"flavor mismatch: model needs {self.flavor!r}, got {u.flavor!r}"
            )
        return u.free_vector()

    def field_from_vector(self, vec):
        f = Field(self.space, self.flavor)
        idx = block_indices(self.space.free, self.flavor, self.space.n_dofs)
        f.coeffs[idx] = vec
        return f

    # -- densities and quartic terms -------------------------------------

    def _component_qp_values(self, vec):
        return assemble.qp_values_free(self.space, self.flavor, vec)

    def _density_weights(self, vec):
        """Per-component metric density weights at quadrature points."""
        p = self.params
        comp = self._component_qp_values(vec)
        rho = [[np.abs(v) ** 2 for v in c] for c in comp]
        if p.kind == "gpe":
            return [[p.beta * r for r in rho[0]]]
        w1 = [p.beta11 * r1 + p.beta12 * r2 for r1, r2 in zip(rho[0], rho[1])]
        w2 = [p.beta22 * r2 + p.beta12 * r1 for r1, r2 in zip(rho[0], rho[1])]
        return [w1, w2]

    def quartic_energy(self, vec):
        p = self.params
        pairs = p.beta_pairs()
        if not pairs:
            return 0.0
        comp = self._component_qp_values(vec)
        rho = [[np.abs(v) ** 2 for v in c] for c in comp]
        total = 0.0
        for j, k, w in pairs:
            prod = [rj * rk for rj, rk in zip(rho[j], rho[k])]
            total += w * assemble.integrate(self.space, prod)
        return total

    # -- spec surface ------------------------------------------------------

    def energy(self, vec):
        return 0.5 * float(vec @ (self.l0 @ vec)) + self.quartic_energy(vec)

    def gradient(self, vec):
        """Dual vector of E'(u), with the nonlinear part assembled directly
        by quadrature (independent of the metric-matrix route)."""
        out = self.l0 @ vec
        pairs = self.params.beta_pairs()
        if pairs:
            weights = self._density_weights(vec)
            comp = self._component_qp_values(vec)
            nf = self.space.n_free
            for c, (w_c, vals_c) in enumerate(zip(weights, comp)):
                for part in range(2 if self.flavor != "real" else 1):
                    take = (lambda v: v.real) if part == 0 else (lambda v: v.imag)
                    gv = [w * take(v) for w, v in zip(w_c, vals_c)]
                    b = assemble.assemble_load(self.space, gv)
                    idx = assemble._part_index(
                        np.arange(nf), 2 * c + part if self.flavor != "real" else 0,
                        self.flavor, nf,
                    )
                    out[idx] += b
        return out

    def metric(self, vec=None):
        """The linearization L_u of E' at u; L_0 for vec None or zero."""
        if vec is None or not self.params.beta_pairs() or not np.any(vec):
            return self.l0
        weights = self._density_weights(vec)
        if self.flavor == "real":
            return (self.l0 + assemble.assemble_mass(self.space, weights[0])).tocsr()
        b1 = assemble.complexify(assemble.assemble_mass(self.space, weights[0]))
        b2 = assemble.complexify(assemble.assemble_mass(self.space, weights[1]))
        z = sparse.csr_matrix(b1.shape)
        return (self.l0 + assemble.spinor_blocks(b1, b2, z, z)).tocsr()

    def hessian(self, vec):
        """Assembled second derivative E''(u) (metric plus rank-structure term)."""
        p = self.params
        lu = self.metric(vec)
        if not p.beta_pairs():
            return lu
        if self.flavor == "real":
            comp = self._component_qp_values(vec)
            w = [[2.0 * p.beta * (v.real**2) for v in comp[0]]]
            return (lu + assemble.assemble_mass(self.space, w[0])).tocsr()
        comp = self._component_qp_values(vec)
        bmat = np.array(
            [
                [p.beta11, p.beta12],
                [p.beta12, p.beta22],
            ]
        )
        blocks = []
        for g in range(2):
            u_parts = np.stack(
                [comp[0][g].real, comp[0][g].imag, comp[1][g].real, comp[1][g].imag],
                axis=-1,
            )
            wts = bmat[np.arange(4)[:, None] // 2, np.arange(4)[None, :] // 2]
            h = 2.0 * np.einsum("eqp,eqr,pr->eqpr", u_parts, u_parts, wts)
            blocks.append(h)
        extra = assemble.assemble_pointwise_block(self.space, self.flavor, blocks)
        return (lu + extra).tocsr()

    def hessian_apply(self, u_vec, v_vec):
        return self.hessian(u_vec) @ v_vec

    def l2_norm(self, vec):
        return float(np.sqrt(vec @ (self.mass @ vec)))

    def h1_seminorm(self, vec):
        return float(np.sqrt(max(vec @ (self.h1 @ vec), 0.0)))

    def h1_norm(self, vec):
        return float(np.sqrt(max(vec @ ((self.h1 + self.mass) @ vec), 0.0)))

    def eigen_residual(self, vec):
        """Lagrange multiplier lambda = <E'(u), u> and the residual of
        E'(u) - lambda M u in the coefficient max-norm and M^{-1}-norm."""
        nrm = self.l2_norm(vec)
        if abs(nrm - 1.0) > 1e-8:
            raise InvalidInputError("eigen_residual requires a normalized state")
        g = self.gradient(vec)
        lam = float(vec @ g)
        r = g - lam * (self.mass @ vec)
        maxnorm = float(np.abs(r).max())
        y, _ = cg_solve(SparseSym(self.mass, check=False), r, tol=1e-10)
        return lam, maxnorm, float(np.sqrt(max(r @ y, 0.0)))

    # -- exact energy along a two-vector ray ------------------------------

    def ray(self, u_vec, y_vec):
        quu = float(u_vec @ (self.l0 @ u_vec))
        quy = float(u_vec @ (self.l0 @ y_vec))
        qyy = float(y_vec @ (self.l0 @ y_vec))
        muu = float(u_vec @ (self.mass @ u_vec))
        muy = float(u_vec @ (self.mass @ y_vec))
        myy = float(y_vec @ (self.mass @ y_vec))
        pairs = self.params.beta_pairs()
        quart = np.zeros(5)
        if pairs:
            cu = self._component_qp_values(u_vec)
            cy = self._component_qp_values(y_vec)
            pqr = []
            for c in range(len(cu)):
                p = [np.abs(v) ** 2 for v in cu[c]]
                q = [(vu * np.conj(vy)).real for vu, vy in zip(cu[c], cy[c])]
                r = [np.abs(v) ** 2 for v in cy[c]]
                pqr.append((p, q, r))
            for j, k, w in pairs:
                pj, qj, rj = pqr[j]
                pk, qk, rk = pqr[k]

                def dot(xs, ys):
                    return assemble.integrate(
                        self.space, [x * y for x, y in zip(xs, ys)]
                    )

                quart += w * np.array(
                    [
                        dot(pj, pk),
                        2 * (dot(pj, qk) + dot(qj, pk)),
                        dot(pj, rk) + dot(rj, pk) + 4 * dot(qj, qk),
                        2 * (dot(qj, rk) + dot(rj, qk)),
                        dot(rj, rk),
                    ]
                )
        return RayEnergy((quu, quy, qyy), (muu, muy, myy), quart)


class RayEnergy:
    """Exact evaluation of E and the L2 norm on span{u, y}.

    E(a u + b y) is a quartic polynomial in (a, b) whose coefficients are
    precomputed once; a whole line search then costs microseconds.
    """

    def __init__(self, l0_form, mass_form, quartic_coeffs):
        self.quu, self.quy, self.qyy = l0_form
        self.muu, self.muy, self.myy = mass_form
        self.quart = np.asarray(quartic_coeffs, dtype=float)

    def mass_sq(self, a, b):
        return a * a * self.muu + 2 * a * b * self.muy + b * b * self.myy

    def energy(self, a, b):
        quad = 0.5 * (a * a * self.quu + 2 * a * b * self.quy + b * b * self.qyy)
        c40, c31, c22, c13, c04 = self.quart
        return quad + (
            c40 * a**4 + c31 * a**3 * b + c22 * a * a * b * b
            + c13 * a * b**3 + c04 * b**4
        )

    def energy_normalized(self, a, b):
        s2 = self.mass_sq(a, b)
        if s2 <= 0:
            raise ZeroDivisionError("degenerate ray point")
        quad = 0.5 * (a * a * self.quu + 2 * a * b * self.quy + b * b * self.qyy)
        c40, c31, c22, c13, c04 = self.quart
        quart = (
            c40 * a**4 + c31 * a**3 * b + c22 * a * a * b * b
            + c13 * a * b**3 + c04 * b**4
        )
        return quad / s2 + quart / (s2 * s2)


def build_model(params, space):
    return ModelOps(params, space)


# -- Field-level convenience wrappers (the documented operation surface) --


def energy(model, u):
    return model.energy(model.check_field(u))


def gradient(model, u):
    return model.gradient(model.check_field(u))


def assemble_metric(model, u):
    return SparseSym(model.metric(model.check_field(u)), check=False)


def hessian_apply(model, u, v):
    return model.hessian_apply(model.check_field(u), model.check_field(v))


def eigen_residual(model, u):
    lam, maxnorm, _ = model.eigen_residual(model.check_field(u))
    return lam, maxnorm


def normalize_l2(model, u):
    vec = model.check_field(u)
    nrm = model.l2_norm(vec)
    if nrm <= 0:
        raise InvalidInputError("cannot normalize a zero field")
    return model.field_from_vector(vec / nrm)


def phase_rotate(vec, omega, flavor):
    """Multiply a real-block vector by exp(i omega)."""
    if flavor == "real":
        if omega % (2 * np.pi) == 0:
            return vec.copy()
        raise InvalidInputError("phase rotation needs a complex flavor")
    re = vec[0::2]
    im = vec[1::2]
    out = np.empty_like(vec)
    out[0::2] = np.cos(omega) * re - np.sin(omega) * im
    out[1::2] = np.sin(omega) * re + np.cos(omega) * im
    return out


def complex_inner(mass, u_vec, v_vec):
    """The complex L2 inner product (u, v) = int u conj(v) from real blocks."""
    re = float(u_vec @ (mass @ v_vec))
    iv = phase_rotate(v_vec, np.pi / 2.0, "complex")
    im = float(u_vec @ (mass @ iv))
    return complex(re, im)


def phase_align(mass, ref_vec, v_vec):
    """Rotate v by the global phase maximizing Re(ref, e^{i w} v)_{L2}."""
    z = complex_inner(mass, ref_vec, v_vec)
    if z == 0:
        return v_vec.copy(), 0.0
    omega = float(np.angle(z))
    return phase_rotate(v_vec, omega, "complex"), omega
