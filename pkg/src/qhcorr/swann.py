"""The bundle M_hat = {(x, g, r)} over a chart of M.

Raw coordinates near a point are q = (x, a, u): the frame at q is the
reference frame at x rotated by g0 exp(sum a_k e_k), and u = log r.  The
hat decomposition of a tangent vector is (Y, b, s) with

    v = Y^h + sum b_k Z_k + s Z0^c,

where Y^h is the horizontal lift, Z_k the fundamental fields of e_k and
Z0^c = c r d/dr.  ``Phi`` maps raw components to hat components.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import quaternionic as Q
from .kernel import lie_bracket
from .quat import CYCLIC, EPS, so3_exp, vee


class InvariantError(ValueError):
    pass


class UnsupportedModel(RuntimeError):
    pass


@dataclass(frozen=True)
class StructureParams:
    c: float
    A: float = 1.0

    def __post_init__(self):
        if self.c == 0:
            raise ValueError("c must be nonzero")
        if self.A == 0:
            raise ValueError("A must be nonzero")

    @property
    def eps(self) -> int:
        return EPS


@dataclass(frozen=True)
class BundlePoint:
    base: np.ndarray
    g: np.ndarray
    log_r: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.g, float)
        object.__setattr__(self, "base", np.asarray(self.base, float))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "log_r", float(self.log_r))
        if g.shape != (3, 3) or np.max(np.abs(g.T @ g - np.eye(3))) > 1e-12 \
                or np.linalg.det(g) < 0:
            raise InvariantError("fiber rotation must lie in SO(3)")

    @property
    def r(self) -> float:
        return float(np.exp(self.log_r))

    def raw(self) -> jnp.ndarray:
        return jnp.concatenate([jnp.asarray(self.base), jnp.zeros(3), jnp.array([self.log_r])])


@dataclass(frozen=True)
class TangentHat:
    horizontal: np.ndarray
    vertical_so3: np.ndarray
    vertical_scale: float

    def array(self) -> jnp.ndarray:
        return jnp.concatenate([jnp.asarray(self.horizontal, float),
                                jnp.asarray(self.vertical_so3, float),
                                jnp.atleast_1d(jnp.asarray(self.vertical_scale, float))])

    @classmethod
    def from_array(cls, v) -> "TangentHat":
        v = np.asarray(v)
        return cls(v[:-4], v[-4:-1], float(v[-1]))


class Ctx(NamedTuple):
    g0: jnp.ndarray
    c: jnp.ndarray
    A: jnp.ndarray
    w: jnp.ndarray  # linear gauge added to log nu


def _vertical_ihat(alpha: int) -> np.ndarray:
    """I_hat_alpha on (b1, b2, b3, s): Z0 -> -Z_a, Z_a -> Z0, Z_b -> Z_c, Z_c -> -Z_b."""
    a, b, c = CYCLIC[alpha]
    V = np.zeros((4, 4))
    V[a, 3] = -1.0
    V[3, a] = 1.0
    V[c, b] = 1.0
    V[b, c] = -1.0
    return V


VERTICAL_IHAT = np.stack([_vertical_ihat(k) for k in range(3)])


def _bracket(P, dP, R, dR):
    """[P_a, R_b]^i for frames of fields with derivatives dP[i, a, l]."""
    return jnp.einsum("ibl,la->iab", dR, P) - jnp.einsum("ial,lb->iab", dP, R)


class SwannBundle:
    """Raw-coordinate fields on M_hat for a model, a connection and a field X."""

    def __init__(self, model, nabla=None, X=None, log_volume="model"):
        self.model = model
        self.nabla = model.nabla if nabla is None else nabla
        self.X = model.X if X is None else X
        self.log_volume = model.log_volume if log_volume == "model" else log_volume
        self.m = model.dim
        self.n = model.n
        self.D = self.m + 4
        self._jit = {}
        self.base = jax.jit(self._base)

    def _base(self, x):
        """Base quantities at x; jitted once so nested derivatives reuse one trace."""
        frame = self.model.frame
        lv = self.log_volume
        return {
            "I": frame(x),
            "dI": jax.jacfwd(frame)(x),  # [b, i, j, k]
            "thU": Q.theta_u(self.nabla, frame, x),
            "th0": Q.theta0_u(self.nabla, x, lv),
            "OmU": Q.omega_u_trace(self.nabla, frame, x),
            "X": self.X(x),
            "DX": jax.jacfwd(self.X)(x),
            "dlv": jnp.zeros_like(x) if lv is None else jax.grad(lv)(x),
            "R": Q.riemann(self.nabla, x),
            "LXI": Q.lie_derivative_frame_array(self.X, frame, x),
        }

    def ricci_at(self, x) -> np.ndarray:
        return np.einsum("ikij->jk", np.asarray(self.base(jnp.asarray(x, float))["R"]))

    def ricci_antisymmetric(self, x) -> np.ndarray:
        ric = self.ricci_at(x)
        return (ric - ric.T) / 2

    # ------------------------------------------------------------ context
    def ctx(self, p: BundlePoint, params: StructureParams, gauge=None) -> Ctx:
        w = jnp.zeros(self.m) if gauge is None else jnp.asarray(gauge, float)
        return Ctx(jnp.asarray(p.g), jnp.asarray(float(params.c)), jnp.asarray(float(params.A)), w)

    def gauge_at(self, x) -> jnp.ndarray:
        """Linear log-volume correction making theta0^U vanish at x."""
        return self.base(jnp.asarray(x, float))["th0"]

    # ------------------------------------------------------------ raw pieces
    def split(self, q):
        m = self.m
        return q[:m], q[m:m + 3], q[m + 3]

    def rotation(self, q, ctx):
        return ctx.g0 @ so3_exp(self.split(q)[1])

    @staticmethod
    def lam(a):
        """Columns: left-trivialised so(3) velocity of d/da_i of exp."""
        dR = jax.jacfwd(so3_exp)(a)  # [r, s, i]
        R = so3_exp(a)
        cols = [vee(R.T @ dR[:, :, i]) / 2 for i in range(3)]
        return jnp.stack(cols, axis=1)

    def theta0(self, x, ctx):
        return self.base(x)["th0"] - ctx.w

    def phi(self, q, ctx):
        """Raw -> hat matrix and its inverse."""
        m, D = self.m, self.D
        x, a, _ = self.split(q)
        g = self.rotation(q, ctx)
        L = self.lam(a)
        Linv = jnp.linalg.inv(L)
        thU = self.base(x)["thU"]  # (3, m)
        th0 = self.theta0(x, ctx)
        gth = g.T @ (Q.HALF * thU)  # (3, m)
        c = ctx.c
        P = jnp.zeros((D, D))
        P = P.at[:m, :m].set(jnp.eye(m))
        P = P.at[m:m + 3, :m].set(gth)
        P = P.at[m:m + 3, m:m + 3].set(L)
        P = P.at[m + 3, :m].set(th0 / c)
        P = P.at[m + 3, m + 3].set(1 / c)
        Pi = jnp.zeros((D, D))
        Pi = Pi.at[:m, :m].set(jnp.eye(m))
        Pi = Pi.at[m:m + 3, :m].set(-Linv @ gth)
        Pi = Pi.at[m:m + 3, m:m + 3].set(Linv)
        Pi = Pi.at[m + 3, :m].set(-th0)
        Pi = Pi.at[m + 3, m + 3].set(c)
        return P, Pi

    def frame_g(self, q, ctx):
        x = self.split(q)[0]
        return Q.rotate_frame(self.base(x)["I"], self.rotation(q, ctx))

    def ihat_hat(self, q, ctx):
        m = self.m
        Ig = self.frame_g(q, ctx)
        out = jnp.zeros((3, self.D, self.D))
        out = out.at[:, :m, :m].set(Ig)
        out = out.at[:, m:, m:].set(jnp.asarray(VERTICAL_IHAT))
        return out

    def ihat_raw(self, q, ctx):
        P, Pi = self.phi(q, ctx)
        return jnp.einsum("ij,ajk,kl->ail", Pi, self.ihat_hat(q, ctx), P)

    def canonical(self, q, ctx):
        """Columns: H_0..H_{m-1}, Z_1, Z_2, Z_3, Z0^c in raw components."""
        return self.phi(q, ctx)[1]

    def theta_so3(self, q, ctx):
        return self.phi(q, ctx)[0][self.m:self.m + 3]

    def theta_real(self, q, ctx):
        return ctx.c * self.phi(q, ctx)[0][self.m + 3]

    def f(self, q, ctx):
        return ctx.A * jnp.exp(2 * self.split(q)[2] / ctx.c)

    def xhat(self, q, ctx):
        """Closed-form natural lift in raw components."""
        x, a, _ = self.split(q)
        m = self.m
        bx = self.base(x)
        I, dI, Xv, DX = bx["I"], bx["dI"], bx["X"], bx["DX"]
        g = self.rotation(q, ctx)
        Ig = Q.rotate_frame(I, g)
        dIX = jnp.einsum("bijk,k->bij", dI, Xv)
        comm = jnp.einsum("ij,ajk->aik", DX, Ig) - jnp.einsum("aij,jk->aik", Ig, DX)
        gdot = -(jnp.einsum("bij,aji->ba", dIX, Ig) + jnp.einsum("bij,aji->ba", I, comm)) / m
        b = vee(g.T @ gdot) / 2
        adot = jnp.linalg.solve(self.lam(a), b)
        lv = bx["dlv"] @ Xv
        udot = jnp.trace(DX) + lv + ctx.w @ Xv
        return jnp.concatenate([Xv, adot, jnp.atleast_1d(udot)])

    def mu(self, q, ctx):
        return self.f(q, ctx) * (self.theta_so3(q, ctx) @ self.xhat(q, ctx))

    def theta_hat(self, q, ctx):
        return self.f(q, ctx) * self.theta_so3(q, ctx)

    def omega_u_g(self, x, g):
        return jnp.einsum("ba,bkl->akl", g, self.base(x)["OmU"])

    def omega_bundle(self, q, ctx):
        """Curvature form so(3) components as (3, D, D) raw bilinear forms."""
        m = self.m
        x = self.split(q)[0]
        Om = Q.HALF * EPS * self.omega_u_g(x, self.rotation(q, ctx))
        return jnp.zeros((3, self.D, self.D)).at[:, :m, :m].set(Om)

    def g_form(self, q, ctx):
        """G_a as (3, D, D) raw bilinear forms."""
        f = self.f(q, ctx)
        c = ctx.c
        Om = self.omega_bundle(q, ctx)
        Ih = self.ihat_raw(q, ctx)
        th = self.theta_so3(q, ctx)
        eu = jnp.zeros(self.D).at[self.m + 3].set(1.0)
        common = 2 * EPS * f * th.T @ th + 2 * EPS * f / c ** 2 * jnp.outer(eu, eu)
        return -f * jnp.einsum("aij,ajk->aik", Om, Ih) + common[None]

    def dtheta_hat(self, q, ctx):
        Dt = jax.jacfwd(self.theta_hat)(q, ctx)  # [a, j, i] = ∂i theta_a_j
        return jnp.transpose(Dt, (0, 2, 1)) - Dt

    def nijenhuis_canonical(self, q, ctx):
        """N^a(E_i, E_j) in hat components, shape (3, D, D, D) = [a, comp, i, j]."""
        E = self.canonical(q, ctx)
        dE = jax.jacfwd(self.canonical)(q, ctx)
        Ih = self.ihat_raw(q, ctx)
        dIh = jax.jacfwd(self.ihat_raw)(q, ctx)  # [a, i, j, l]
        P = self.phi(q, ctx)[0]
        out = []
        for a in range(3):
            F = Ih[a] @ E
            dF = jnp.einsum("ijl,jk->ikl", dIh[a], E) + jnp.einsum("ij,jkl->ikl", Ih[a], dE)
            N = (_bracket(E, dE, E, dE) + jnp.einsum("ij,jab->iab", Ih[a], _bracket(F, dF, E, dE))
                 + jnp.einsum("ij,jab->iab", Ih[a], _bracket(E, dE, F, dF))
                 - _bracket(F, dF, F, dF))
            out.append(jnp.einsum("ij,jab->iab", P, N))
        return jnp.stack(out)

    def lie_derivatives_ihat(self, q, ctx):
        """L_{E_k} I_hat_a for the vertical canonical fields, [k, a, i, j] raw, k = Z1..Z3, Z0."""
        m = self.m
        E = self.canonical(q, ctx)
        dE = jax.jacfwd(self.canonical)(q, ctx)
        Ih = self.ihat_raw(q, ctx)
        dIh = jax.jacfwd(self.ihat_raw)(q, ctx)
        out = []
        for k in range(m, m + 4):
            Z = E[:, k]
            DZ = dE[:, k, :]
            out.append(jnp.einsum("aijl,l->aij", dIh, Z) - jnp.einsum("il,alj->aij", DZ, Ih)
                       + jnp.einsum("ail,lj->aij", Ih, DZ))
        return jnp.stack(out), Ih

    # ------------------------------------------------------------ jit cache
    def jit(self, name):
        if name not in self._jit:
            self._jit[name] = jax.jit(getattr(self, name))
        return self._jit[name]

    def call(self, name, p: BundlePoint, params: StructureParams, gauge=None):
        return self.jit(name)(p.raw(), self.ctx(p, params, gauge))


@lru_cache(maxsize=64)
def bundle_for(model, nabla=None) -> SwannBundle:
    return SwannBundle(model, nabla)


# ---------------------------------------------------------------- public operations

def theta_bar(bundle: SwannBundle, p: BundlePoint, v, params: StructureParams):
    """(so(3) 3-vector, real) value of the connection form on a raw tangent."""
    P = np.asarray(bundle.call("phi", p, params)[0])
    m = bundle.m
    v = np.asarray(v, float)
    return P[m:m + 3] @ v, float(params.c * P[m + 3] @ v)


def to_raw(bundle, p, params, v: TangentHat):
    Pi = np.asarray(bundle.call("phi", p, params)[1])
    return Pi @ np.asarray(v.array())


def to_hat(bundle, p, params, v) -> TangentHat:
    P = np.asarray(bundle.call("phi", p, params)[0])
    return TangentHat.from_array(P @ np.asarray(v, float))


def horizontal_lift(bundle, Y, p, params) -> TangentHat:
    return TangentHat(np.asarray(Y, float), np.zeros(3), 0.0)


def fundamental_field(bundle, a, p, params):
    """Raw vector of the fundamental field of a = (a0, a1, a2, a3) in R + so(3).

    The e0 generator is r d/dr = d/du, so Z0^c = c d/du.
    """
    a = np.asarray(a, float)
    Pi = np.asarray(bundle.call("phi", p, params)[1])
    m = bundle.m
    vert = Pi[:, m:m + 3] @ a[1:]
    return vert + a[0] * np.eye(bundle.D)[m + 3]


def i_hat(alpha: int, params, bundle, p, v: TangentHat) -> TangentHat:
    """alpha in 1..3."""
    Ih = np.asarray(bundle.call("ihat_hat", p, params)[alpha - 1])
    return TangentHat.from_array(Ih @ np.asarray(v.array()))


def quaternionic_relations_hat(bundle, p, params) -> float:
    Ih = np.asarray(bundle.call("ihat_raw", p, params))
    return Q.frame_residual(Ih)


def nijenhuis_hat(alpha: int, params, bundle, U, V, p) -> TangentHat:
    """Bracket definition for raw vector fields U, V (callables of raw q)."""
    ctx = bundle.ctx(p, params)
    I = lambda q: bundle.ihat_raw(q, ctx)[alpha - 1]  # noqa: E731
    IU = lambda q: I(q) @ U(q)  # noqa: E731
    IV = lambda q: I(q) @ V(q)  # noqa: E731
    q = p.raw()
    Iq = I(q)
    N = (lie_bracket(U, V, q) + Iq @ lie_bracket(IU, V, q) + Iq @ lie_bracket(U, IV, q)
         - lie_bracket(IU, IV, q))
    return to_hat(bundle, p, params, N)


def canonical_field(bundle, params, p, k):
    """Raw vector field q -> k-th canonical field, in the chart centred at p."""
    ctx = bundle.ctx(p, params)
    return lambda q: bundle.canonical(q, ctx)[:, k]


@dataclass
class IntegrabilityVerdict:
    verdict: str
    max_residual: float
    predicate: bool
    ric_a_hermitian: bool
    ric_a_residual: float
    agrees: bool
    vhh_residual: float
    hhh_residual: float


def vhh_expected(bundle, p, params):
    """Expected theta_bar(N^a(H_j, H_k)), [a, (e0, e1, e2, e3), j, k]."""
    x = jnp.asarray(p.base)
    n = bundle.n
    c = params.c
    ra = bundle.ricci_antisymmetric(x)
    Ig = np.asarray(Q.rotate_frame(bundle.base(x)["I"], jnp.asarray(p.g)))
    m = bundle.m
    out = np.zeros((3, 4, m, m))
    k0 = (4 * EPS * (n + 1) + EPS * c) / (2 * (n + 1))
    ka = -(4 * EPS * (n + 1) + EPS * c) / (2 * c * (n + 1))
    ra = np.asarray(ra)
    for a in range(3):
        I = Ig[a]
        out[a, 0] = k0 * (ra - I.T @ ra @ I)
        out[a, 1 + a] = ka * (ra @ I + I.T @ ra)
    return out


def nijenhuis_table(bundle, p, params):
    return np.asarray(bundle.call("nijenhuis_canonical", p, params))


def classify_integrability(bundle, params, points, tol_int=1e-6, tol_obs=1e-3,
                           asd_tol=1e-6) -> IntegrabilityVerdict:
    """Nijenhuis residual over canonical fields at bundle points vs the analytic predicate."""
    model = bundle.model
    if model.n == 1:
        for p in points:
            bx = bundle.base(jnp.asarray(p.base))
            if float(Q.asd_from_riemann(bx["R"], Q.twistor_samples(bx["I"]))) > asd_tol:
                raise UnsupportedModel("n = 1 requires an anti-self-dual structure")
    worst = 0.0
    herm_res = 0.0
    vhh = 0.0
    hhh = 0.0
    m = bundle.m
    for p in points:
        N = nijenhuis_table(bundle, p, params)
        scale = 1.0
        worst = max(worst, float(np.max(np.abs(N))) / scale)
        hhh = max(hhh, float(np.max(np.abs(N[:, :m, :m, :m]))))
        got = np.concatenate([N[:, m + 3:m + 4] * params.c, N[:, m:m + 3]], axis=1)[:, :, :m, :m]
        # hat components: (b1, b2, b3, s); theta_bar = (c s; b)
        vhh = max(vhh, float(np.max(np.abs(got - vhh_expected(bundle, p, params)))))
        x = jnp.asarray(p.base)
        ra = bundle.ricci_antisymmetric(x)
        herm_res = max(herm_res, Q.is_q_hermitian(ra, np.asarray(bundle.base(x)["I"]))[1])
    herm = herm_res <= 1e-8
    predicate = bool(np.isclose(params.c, -4 * (model.n + 1)) or herm)
    if worst < tol_int:
        verdict = "integrable"
    elif worst > tol_obs:
        verdict = "obstructed"
    else:
        verdict = "indeterminate"
    agrees = (verdict == "integrable") == predicate and verdict != "indeterminate"
    return IntegrabilityVerdict(verdict, worst, predicate, herm, herm_res, agrees, vhh, hhh)


def lie_relations_check(bundle, params, points) -> dict:
    """Residuals of L_{Z0} I_a, L_{Z_a} I_a, L_{Z_a} I_b - 2 eps I_c, L_{Z_a} I_c + 2 eps I_b."""
    out = {"L_Z0_I": 0.0, "L_Za_Ia": 0.0, "L_Za_Ib": 0.0, "L_Za_Ic": 0.0}
    for p in points:
        L, Ih = bundle.call("lie_derivatives_ihat", p, params)
        L, Ih = np.asarray(L), np.asarray(Ih)
        out["L_Z0_I"] = max(out["L_Z0_I"], float(np.max(np.abs(L[3]))))
        for a, b, c in CYCLIC:
            out["L_Za_Ia"] = max(out["L_Za_Ia"], float(np.max(np.abs(L[a, a]))))
            out["L_Za_Ib"] = max(out["L_Za_Ib"], float(np.max(np.abs(L[a, b] - 2 * EPS * Ih[c]))))
            out["L_Za_Ic"] = max(out["L_Za_Ic"], float(np.max(np.abs(L[a, c] + 2 * EPS * Ih[b]))))
    return out


def connection_difference(bundle1, bundle2, params, p, xi):
    """(I_hat^1 - I_hat^2) raw, and the closed form eps(1 + 4(n+1)/c)(xi Z_a + xi(I_a .) Z0^c)."""
    I1 = np.asarray(bundle1.call("ihat_raw", p, params))
    I2 = np.asarray(bundle2.call("ihat_raw", p, params))
    E = np.asarray(bundle1.call("canonical", p, params))
    m, n, c = bundle1.m, bundle1.n, params.c
    xiv = np.asarray(xi(jnp.asarray(p.base)))
    Ig = np.asarray(Q.rotate_frame(bundle1.model.frame(jnp.asarray(p.base)), jnp.asarray(p.g)))
    k = EPS * (1 + 4 * (n + 1) / c)
    expected = []
    for a in range(3):
        pad = np.zeros(bundle1.D)
        pad[:m] = xiv
        padI = np.zeros(bundle1.D)
        padI[:m] = xiv @ Ig[a]
        # pi_hat^* xi reads the base component of a raw vector
        expected.append(k * (np.outer(E[:, m + a], pad) + np.outer(E[:, m + 3], padI)))
    return I1 - I2, np.stack(expected)
