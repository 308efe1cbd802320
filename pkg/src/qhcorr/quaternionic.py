"""Quaternionic structures and connections on a chart of M.

Index conventions (all zero based):

* ``Gamma[i, k, j]`` is the i-th component of ∇_{∂k} ∂j.
* ``R[i, j, k, l]`` is the i-th component of R(∂k, ∂l) ∂j with
  R(X, Y) = ∇_X ∇_Y - ∇_Y ∇_X - ∇_[X,Y].
* ``Ric(X, Y) = Tr(Z -> R(Z, X) Y)``, so ``Tr R(X, Y) = -2 Ric^a(X, Y)``.
* theta0^U = tr Γ - d log ν: the connection form of the bundle of positive
  multiples of the inverse volume element ν^{-1}.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .kernel import FORWARD, DerivativeEngine, jacobian
from .quat import CYCLIC, EPS

HALF = 0.5  # s*theta = HALF * sum theta^U_a e_a and Omega(X^h, Y^h) = HALF * eps * Omega^U


class PreconditionError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    """A constructed object failed its own numerical validation."""


@dataclass(frozen=True, eq=False)
class QuaternionicFrame:
    evaluator: Callable  # x -> (3, m, m)

    def __call__(self, x):
        return self.evaluator(x)


@dataclass(frozen=True, eq=False)
class Connection:
    christoffel: Callable  # x -> (m, m, m)
    torsion_free: bool = True
    name: str = "nabla"

    def __call__(self, x):
        return self.christoffel(x)


class RicciSplit(NamedTuple):
    full: jnp.ndarray
    symmetric: jnp.ndarray
    antisymmetric: jnp.ndarray
    hermitian_projection: jnp.ndarray


# ---------------------------------------------------------------- frames

def frame_residual(I) -> float:
    """Max deviation from I_a^2 = -1 and I1 I2 = -I2 I1 = I3."""
    I = jnp.asarray(I)
    m = I.shape[-1]
    E = jnp.eye(m)
    res = [jnp.max(jnp.abs(I[a] @ I[a] + E)) for a in range(3)]
    for a, b, c in CYCLIC:
        res.append(jnp.max(jnp.abs(I[a] @ I[b] - I[c])))
        res.append(jnp.max(jnp.abs(I[b] @ I[a] + I[c])))
    return float(max(res))


def rotate_frame(I, g):
    """Frame rotated by g: (I g)_a = sum_b g[b, a] I_b."""
    return jnp.einsum("ba,bij->aij", g, I)


def q_projection(T, I):
    """Coefficients t_a with T ≈ sum t_a I_a, and the residual norm."""
    m = I.shape[-1]
    t = -jnp.einsum("aij,ji->a", I, T) / m
    return t, jnp.linalg.norm(T - jnp.einsum("a,aij->ij", t, I))


# ---------------------------------------------------------------- S^xi

def s_xi_tensor(xi, I):
    """S[i, k, j]: i-th component of S^xi_{∂k} ∂j."""
    xi = jnp.asarray(xi)
    m = xi.shape[0]
    E = jnp.eye(m)
    xiI = jnp.einsum("l,alk->ak", xi, I)  # (xi o I_a)_k
    S = jnp.einsum("k,ij->ikj", xi, E) + jnp.einsum("j,ik->ikj", xi, E)
    S = S - jnp.einsum("ak,aij->ikj", xiI, I) - jnp.einsum("aj,aik->ikj", xiI, I)
    return S


def s_xi(xi, X, Y, I):
    """S^xi_X Y = xi(X)Y + xi(Y)X - sum_a [xi(I_a X) I_a Y + xi(I_a Y) I_a X]."""
    return jnp.einsum("ikj,k,j->i", s_xi_tensor(xi, I), X, Y)


def deform_connection(nabla: Connection, xi: Callable, frame: QuaternionicFrame,
                      validate_at=None) -> Connection:
    """nabla + S^xi."""
    def christoffel(x):
        return nabla(x) + s_xi_tensor(xi(x), frame(x))

    out = Connection(christoffel, True, f"{nabla.name}+S")
    for x in ([] if validate_at is None else validate_at):
        if torsion(out, x) > 1e-10 or nabla_q_residual(out, frame, x) > 1e-8:
            raise ConsistencyError("deformed connection failed validation")
    return out


# ---------------------------------------------------------------- connection data

def torsion(nabla: Connection, x) -> float:
    G = nabla(jnp.asarray(x))
    return float(jnp.max(jnp.abs(G - jnp.transpose(G, (0, 2, 1)))))


def nabla_frame(nabla: Connection, frame: QuaternionicFrame, x, engine=FORWARD):
    """(∇_{∂k} I_a) as array [a, k, i, j]."""
    x = jnp.asarray(x)
    I = frame(x)
    dI = jacobian(frame, x, engine)  # [a, i, j, k]
    G = nabla(x)
    Gk = jnp.transpose(G, (1, 0, 2))  # Gk[k] = matrix (Γ_k)^i_l
    return (jnp.transpose(dI, (0, 3, 1, 2))
            + jnp.einsum("kil,alj->akij", Gk, I)
            - jnp.einsum("ail,klj->akij", I, Gk))


def nabla_q_array(nabla, frame, x):
    """Per (a, k): norm of the part of ∇_k I_a outside span{I_b, I_c}."""
    x = jnp.asarray(x)
    I = frame(x)
    m = I.shape[-1]
    NI = nabla_frame(nabla, frame, x)
    rows = []
    for a, b, c in CYCLIC:
        T = NI[a]
        tb = -jnp.einsum("ij,kji->k", I[b], T) / m
        tc = -jnp.einsum("ij,kji->k", I[c], T) / m
        rest = T - jnp.einsum("k,ij->kij", tb, I[b]) - jnp.einsum("k,ij->kij", tc, I[c])
        rows.append(jnp.linalg.norm(rest.reshape(rest.shape[0], -1), axis=1))
    return jnp.stack(rows)


def nabla_q_residual(nabla, frame, x) -> float:
    """Max distance of ∇_k I_a from span{I_b, I_c}."""
    return float(jnp.max(nabla_q_array(nabla, frame, x)))


def log_volume_gradient(log_volume: Callable | None, x):
    if log_volume is None:
        return jnp.zeros_like(jnp.asarray(x))
    return jax.grad(log_volume)(jnp.asarray(x))


def theta_u(nabla, frame, x, engine=FORWARD):
    """theta^U_c(∂k), shape (3, m).

    From ∇I_a = eps (theta_c I_b - theta_b I_c) and Tr(I_b I_b) = -m:
    theta_c = -(eps/m) Tr(I_b ∇I_a) for cyclic (a, b, c).
    """
    x = jnp.asarray(x)
    I = frame(x)
    m = I.shape[-1]
    NI = nabla_frame(nabla, frame, x, engine)
    rows = [None, None, None]
    for a, b, c in CYCLIC:
        rows[c] = -EPS * jnp.einsum("ij,kji->k", I[b], NI[a]) / m
    return jnp.stack(rows)


def theta0_u(nabla, x, log_volume=None):
    """theta0^U(∂k) = Γ^i_{ki} - ∂k log ν."""
    x = jnp.asarray(x)
    return jnp.einsum("iki->k", nabla(x)) - log_volume_gradient(log_volume, x)


def local_connection_forms(nabla, frame, x, log_volume=None, engine=FORWARD):
    """(theta^U_1, theta^U_2, theta^U_3, theta^U_0) as 1-form component vectors."""
    t = theta_u(nabla, frame, x, engine)
    return t[0], t[1], t[2], theta0_u(nabla, x, log_volume)


def reconstruction_residual(nabla, frame, x) -> float:
    x = jnp.asarray(x)
    I = frame(x)
    NI = nabla_frame(nabla, frame, x)
    th = theta_u(nabla, frame, x)
    worst = 0.0
    for a, b, c in CYCLIC:
        rec = EPS * (jnp.einsum("k,ij->kij", th[c], I[b]) - jnp.einsum("k,ij->kij", th[b], I[c]))
        worst = max(worst, float(jnp.max(jnp.abs(rec - NI[a]))))
    return worst


# ---------------------------------------------------------------- curvature

def riemann(nabla, x, engine=FORWARD):
    """R[i, j, k, l] = (R(∂k, ∂l) ∂j)^i."""
    x = jnp.asarray(x)
    G = nabla(x)
    dG = jacobian(nabla.christoffel, x, engine)  # dG[i, k, j, l] = ∂l Γ[i, k, j]
    return (jnp.einsum("iljk->ijkl", dG) - jnp.einsum("ikjl->ijkl", dG)
            + jnp.einsum("ikm,mlj->ijkl", G, G) - jnp.einsum("ilm,mkj->ijkl", G, G))


def curvature(nabla, X, Y, x, engine=FORWARD):
    """Endomorphism R(X, Y)."""
    return jnp.einsum("ijkl,k,l->ij", riemann(nabla, x, engine), X, Y)


def bianchi_residual(nabla, x) -> float:
    R = riemann(nabla, x)
    cyc = R + jnp.einsum("iklj->ijkl", R) + jnp.einsum("iljk->ijkl", R)
    # cyc[i, j, k, l] = R(k,l)j + R(l,j)k + R(j,k)l
    return float(jnp.max(jnp.abs(cyc)))


def ricci(nabla, x, engine=FORWARD):
    """Ric[j, k] = Ric(∂j, ∂k) = Tr(Z -> R(Z, ∂j) ∂k)."""
    return jnp.einsum("ikij->jk", riemann(nabla, x, engine))


def hermitian_projection(b, I):
    """Π_h b = (b + sum_a b(I_a., I_a.)) / 4."""
    return (b + jnp.einsum("aki,kl,alj->ij", I, b, I)) / 4


def ricci_split(nabla, frame, x, engine=FORWARD) -> RicciSplit:
    x = jnp.asarray(x)
    Ric = ricci(nabla, x, engine)
    s = (Ric + Ric.T) / 2
    a = (Ric - Ric.T) / 2
    return RicciSplit(Ric, s, a, hermitian_projection(s, frame(x)))


def is_q_hermitian(form, I, tol=1e-8):
    """(flag, residual) for b(X, Y) = b(I_a X, I_a Y), a = 1, 2, 3."""
    form = jnp.asarray(form)
    res = max(float(jnp.max(jnp.abs(form - I[a].T @ form @ I[a]))) for a in range(3))
    return res <= tol, res


def omega_u_trace(nabla, frame, x, engine=FORWARD):
    """Omega^U[a, k, l] = -(1/2n) Tr(I_a R(∂k, ∂l))."""
    x = jnp.asarray(x)
    I = frame(x)
    m = I.shape[-1]
    n = m // 4
    return -jnp.einsum("aij,jikl->akl", I, riemann(nabla, x, engine)) / (2 * n)


def b_tensor(split: RicciSplit, n: int):
    return (split.antisymmetric / (4 * (n + 1)) + split.symmetric / (4 * n)
            - split.hermitian_projection / (2 * n * (n + 2)))


def omega_u_b(nabla, frame, x, engine=FORWARD):
    """Omega^U[a, k, l] = 2 (B(∂k, I_a ∂l) - B(∂l, I_a ∂k))."""
    x = jnp.asarray(x)
    I = frame(x)
    n = I.shape[-1] // 4
    B = b_tensor(ricci_split(nabla, frame, x, engine), n)
    BI = jnp.einsum("kj,ajl->akl", B, I)
    return 2 * (BI - jnp.transpose(BI, (0, 2, 1)))


def omega_from_trace(nabla, frame, X, Y, x):
    return jnp.einsum("akl,k,l->a", omega_u_trace(nabla, frame, x), X, Y)


def omega_from_b(nabla, frame, X, Y, x):
    return jnp.einsum("akl,k,l->a", omega_u_b(nabla, frame, x), X, Y)


def omega_ricci_rhs(split: RicciSplit, I, n):
    """Right side of Omega^U_a(Y, I_a Z) in terms of the Ricci split, [a, Y, Z]."""
    ra, rs, ph = split.antisymmetric, split.symmetric, split.hermitian_projection
    out = []
    for a in range(3):
        Ia = I[a]
        out.append((Ia.T @ ra @ Ia - ra) / (2 * (n + 1))
                   - (Ia.T @ rs @ Ia + rs) / (2 * n)
                   + 2 * ph / (n * (n + 2)))
    return jnp.stack(out)


def cr_combination_residual(nabla, frame, x) -> float:
    """Omega_a(I_a X, Y) + Omega_a(X, I_a Y) + (Ric^a(X,Y) - Ric^a(I_a X, I_a Y))/(n+1)."""
    x = jnp.asarray(x)
    I = frame(x)
    n = I.shape[-1] // 4
    Om = omega_u_trace(nabla, frame, x)
    ra = ricci_split(nabla, frame, x).antisymmetric
    worst = 0.0
    for a in range(3):
        lhs = I[a].T @ Om[a] + Om[a] @ I[a]
        rhs = -(ra - I[a].T @ ra @ I[a]) / (n + 1)
        worst = max(worst, float(jnp.max(jnp.abs(lhs - rhs))))
    return worst


def a_alpha_residual(nabla, frame, x) -> float:
    """Omega_b(X,Y) - Omega_b(I_a X, I_a Y) - Omega_c(I_a X, Y) - Omega_c(X, I_a Y)."""
    x = jnp.asarray(x)
    I = frame(x)
    Om = omega_u_trace(nabla, frame, x)
    worst = 0.0
    for a, b, c in CYCLIC:
        A = Om[b] - I[a].T @ Om[b] @ I[a] - I[a].T @ Om[c] - Om[c] @ I[a]
        worst = max(worst, float(jnp.max(jnp.abs(A))))
    return worst


def check_asd_02(nabla, frame, J, X, Y, x) -> float:
    """‖[R^{(0,2)J}(X, Y), J]‖ for a pointwise complex structure J in Q."""
    x = jnp.asarray(x)
    J = jnp.asarray(J)
    m = J.shape[0]
    if float(jnp.max(jnp.abs(J @ J + jnp.eye(m)))) > 1e-8:
        raise PreconditionError("J is not an almost complex structure")
    R = riemann(nabla, x)

    def Rxy(u, v):
        return jnp.einsum("ijkl,k,l->ij", R, u, v)

    R02 = (Rxy(X, Y) + J @ Rxy(J @ X, Y) + J @ Rxy(X, J @ Y) - Rxy(J @ X, J @ Y)) / 4
    return float(jnp.linalg.norm(R02 @ J - J @ R02))


def twistor_samples(I, n_twistor: int = 4, seed: int = 0):
    """I_1, I_2, I_3 and n_twistor unit combinations sum u_a I_a."""
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.normal(size=(n_twistor, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return jnp.concatenate([jnp.asarray(I), jnp.einsum("na,aij->nij", u, I)])


def asd_from_riemann(R, Js):
    """max over J and coordinate pairs of |[R^{(0,2)J}(∂k, ∂l), J]|."""
    def one(J):
        RJ1 = jnp.einsum("ijkl,km->ijml", R, J)  # R(J ∂m, ∂l)
        RJ2 = jnp.einsum("ijkl,lm->ijkm", R, J)
        RJJ = jnp.einsum("ijkl,kp,lq->ijpq", R, J, J)
        R02 = (R + jnp.einsum("ab,bjkl->ajkl", J, RJ1) + jnp.einsum("ab,bjkl->ajkl", J, RJ2)
               - RJJ) / 4
        comm = jnp.einsum("ibkl,bj->ijkl", R02, J) - jnp.einsum("ib,bjkl->ijkl", J, R02)
        return jnp.max(jnp.abs(comm))
    return jnp.max(jnp.stack([one(J) for J in Js]))


def asd_residual(nabla, frame, x, n_twistor: int = 4, seed: int = 0) -> float:
    """check_asd_02 maximised over coordinate pairs and a few twistor elements."""
    x = jnp.asarray(x)
    Js = twistor_samples(frame(x), n_twistor, seed)
    return float(asd_from_riemann(riemann(nabla, x), Js))


# ---------------------------------------------------------------- vector fields

def covariant_derivative_matrix(nabla, Xf, x, engine=FORWARD):
    """(∇X)[i, k] = ∂k X^i + Γ[i, k, l] X^l."""
    x = jnp.asarray(x)
    return jacobian(Xf, x, engine) + jnp.einsum("ikl,l->ik", nabla(x), Xf(x))


def hessian(nabla, Xf, Y, Z, x, engine=FORWARD):
    """H_{Y,Z} X = ∇_Y ∇_Z X - ∇_{∇_Y Z} X.  Y and Z may be vectors or fields."""
    x = jnp.asarray(x)
    Yf = Y if callable(Y) else (lambda _y, v=jnp.asarray(Y, dtype=float): v)
    Zf = Z if callable(Z) else (lambda _y, v=jnp.asarray(Z, dtype=float): v)

    def nabla_Z_X(y):
        return covariant_derivative_matrix(nabla, Xf, y, engine) @ Zf(y)

    def cov_along(V, w, y):  # ∇_w V at y for a field V
        return jacobian(V, y, engine) @ w + jnp.einsum("ikl,k,l->i", nabla(y), w, V(y))

    Yv = Yf(x)
    nYZ = cov_along(Zf, Yv, x)
    return cov_along(nabla_Z_X, Yv, x) - covariant_derivative_matrix(nabla, Xf, x, engine) @ nYZ


def hessian_tensor(nabla, Xf, x, engine=FORWARD):
    """H[i, j, k] = (H_{∂j, ∂k} X)^i."""
    x = jnp.asarray(x)

    def NX(y):
        return covariant_derivative_matrix(nabla, Xf, y, engine)

    G = nabla(x)
    dNX = jacobian(NX, x, engine)  # [i, k, j] = ∂j (∇X)[i,k]
    N = NX(x)
    return (jnp.transpose(dNX, (0, 2, 1)) + jnp.einsum("ijm,mk->ijk", G, N)
            - jnp.einsum("mjk,im->ijk", G, N))


def lie_derivative_frame_array(Xf, frame, x):
    """Per a: distance of L_X I_a from Q."""
    from .kernel import lie_derivative_tensor

    x = jnp.asarray(x)
    I = frame(x)
    return jnp.stack([q_projection(lie_derivative_tensor(Xf, lambda y, a=a: frame(y)[a], x, (1, 1)),
                                   I)[1] for a in range(3)])


def lie_derivative_frame_residual(Xf, frame, x) -> float:
    """Distance of L_X I_a from Q, max over a."""
    return float(jnp.max(lie_derivative_frame_array(Xf, frame, x)))


@dataclass
class AffineReport:
    lieDerConnNorm: float
    bianchiResidual: float
    traceCriterionResidual: float
    xi_from_lie: float
    xi_from_bianchi: float
    xi_from_trace: float

    @property
    def consistent(self) -> bool:
        small = [v < 1e-6 for v in (self.lieDerConnNorm, self.bianchiResidual,
                                     self.traceCriterionResidual)]
        return all(small) or not any(small)

    @property
    def max_residual(self) -> float:
        return max(self.lieDerConnNorm, self.bianchiResidual, self.traceCriterionResidual)


def affine_arrays(nabla, Xf, frame, x):
    """(L_X Γ, R(X, .). + H X, 2 Ric^a(X, .) - d Tr ∇X) as arrays."""
    from .kernel import lie_derivative_tensor

    x = jnp.asarray(x)
    LG = lie_derivative_tensor(Xf, nabla.christoffel, x, "connection")
    R = riemann(nabla, x)
    H = hessian_tensor(nabla, Xf, x)
    RH = jnp.einsum("ijkl,k->ilj", R, Xf(x)) + H  # [i, Y=l, Z=j]: R(X,Y)Z + H_{Y,Z}X
    ra = ricci_split(nabla, frame, x).antisymmetric

    def trace_nabla_X(y):
        return jnp.trace(covariant_derivative_matrix(nabla, Xf, y))

    tc = 2 * ra.T @ Xf(x) - jax.grad(trace_nabla_X)(x)
    return LG, RH, tc


def affine_report(LG, RH, tc, n) -> AffineReport:
    k = 4 * (n + 1)
    return AffineReport(
        float(jnp.linalg.norm(LG)), float(jnp.linalg.norm(RH)), float(jnp.linalg.norm(tc)),
        float(jnp.linalg.norm(jnp.einsum("iki->k", LG))) / k,
        float(jnp.linalg.norm(jnp.einsum("iki->k", RH))) / k,
        float(jnp.linalg.norm(tc)) / k,
    )


def check_affine(nabla, Xf, frame, x, tol_quaternionic=1e-6) -> AffineReport:
    """Three equivalent affinity criteria for a quaternionic field X.

    lieDerConnNorm: ‖L_X ∇‖; bianchiResidual: ‖R(X, .) . + H_{.,.} X‖;
    traceCriterionResidual: ‖2 Ric^a(X, .) - d Tr ∇X‖.  The xi_* entries are
    the same three quantities converted to |xi_X| (all equal when L_X ∇ = S^{xi_X}).
    """
    x = jnp.asarray(x)
    if lie_derivative_frame_residual(Xf, frame, x) > tol_quaternionic:
        raise PreconditionError("X is not quaternionic")
    n = frame(x).shape[-1] // 4
    return affine_report(*affine_arrays(nabla, Xf, frame, x), n)


def normalizer_residual(T, I) -> float:
    worst = 0.0
    for a in range(3):
        worst = max(worst, float(q_projection(T @ I[a] - I[a] @ T, I)[1]))
    return worst


def decompose_endomorphism(T, I, tol=1e-7):
    """Split T in N(Q) as (Q + R id part, trace-free commuting part)."""
    T = jnp.asarray(T)
    if normalizer_residual(T, I) > tol:
        raise PreconditionError("endomorphism does not normalize Q")
    m = T.shape[0]
    frame4 = [jnp.eye(m), I[0], I[1], I[2]]
    signs = [1, -1, -1, -1]
    P = sum(s * jnp.trace(T @ Ia) * Ia for s, Ia in zip(signs, frame4)) / m
    return P, T - P


def decompose_nabla_X(nabla, Xf, frame, x):
    x = jnp.asarray(x)
    return decompose_endomorphism(covariant_derivative_matrix(nabla, Xf, x), frame(x))


def commuting_part_explicit(T, I):
    """(T - sum I_a T I_a)/4 - Tr(T)/m id."""
    m = T.shape[0]
    return (T - sum(I[a] @ T @ I[a] for a in range(3))) / 4 - jnp.trace(T) / m * jnp.eye(m)
