"""Level set of the moment map, slice charts of the local quotient, twist data.

The level set is P = {mu = (1, 0, 0)}.  The quotient of P by the flow of
X_hat is represented by a slice: y -> sigma(y), which starts at
q0 + B y (B a basis of the distribution V at the anchor) and is pulled
back to P by Newton steps along I_hat_b X_hat.  Structures on the
quotient are read off in slice coordinates y.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from scipy.spatial.transform import Rotation

from .quat import CYCLIC, EPS, so3_exp
from .swann import BundlePoint, StructureParams, SwannBundle

TARGET = np.array([1.0, 0.0, 0.0])
FD_STEP = 1e-4


class ProjectionError(RuntimeError):
    def __init__(self, msg, best_residual):
        super().__init__(f"{msg} (best residual {best_residual:.3g})")
        self.best_residual = best_residual


class DegenerateSliceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LevelSetPoint:
    bundle_point: BundlePoint
    residual: float
    iterations: int = 0


def _jit(bundle, name, fn):
    key = ("red", name)
    if key not in bundle._jit:
        bundle._jit[key] = jax.jit(lambda *a: fn(bundle, *a))
    return bundle._jit[key]


def _from_raw(bundle, q, g0):
    m = bundle.m
    q = np.asarray(q)
    return BundlePoint(q[:m], np.asarray(g0) @ np.asarray(so3_exp(q[m:m + 3])), q[m + 3])


def _newton_data(bundle, q, ctx):
    mu = bundle.mu(q, ctx)
    dmu = jax.jacfwd(bundle.mu)(q, ctx)
    W = jnp.einsum("kij,j->ik", bundle.ihat_raw(q, ctx), bundle.xhat(q, ctx))  # (D, 3)
    return mu, dmu, W


def _newton_step(bundle, q, ctx):
    mu, dmu, W = _newton_data(bundle, q, ctx)
    return q + W @ jnp.linalg.solve(dmu @ W, jnp.asarray(TARGET) - mu)


def project_to_level_set(params, bundle, p: BundlePoint, tol=1e-12, max_iter=50,
                         gauge=None) -> LevelSetPoint:
    """Newton along span{I_hat_b X_hat} until |mu - e1| < tol."""
    step = _jit(bundle, "newton", lambda b, q, ctx: (_newton_step(b, q, ctx), b.mu(q, ctx)))
    best = np.inf
    for it in range(max_iter + 1):
        ctx = bundle.ctx(p, params, gauge)
        q_next, mu = step(p.raw(), ctx)
        res = float(np.linalg.norm(np.asarray(mu) - TARGET))
        best = min(best, res)
        if res < tol:
            return LevelSetPoint(p, res, it)
        if not np.all(np.isfinite(np.asarray(q_next))):
            break
        p = _from_raw(bundle, q_next, p.g)
    raise ProjectionError("level-set projection did not converge", best)


def project_fiber(params, bundle, x, free=(1, 2, 3), g_seed=None, log_r_seed=None,
                  tol=1e-12, max_iter=50, gauge=None) -> LevelSetPoint:
    """Newton in the fiber over x, moving only the raw fiber coordinates listed in ``free``.

    Indices 0..2 are the so(3) chart coordinates, 3 is log r.
    """
    m = bundle.m
    cols = np.array([m + k for k in free])
    g = np.eye(3) if g_seed is None else np.asarray(g_seed)
    u = -params.c / 2 * np.log(abs(params.A)) if log_r_seed is None else log_r_seed
    p = BundlePoint(x, g, u)
    mu_fn = _mu_dmu(bundle)
    if len(free) == 4:
        # equivariance and the scaling in r give the fiber solution up to Newton polish
        w = np.asarray(mu_fn(p.raw(), bundle.ctx(p, params, gauge))[0])
        if np.linalg.norm(w) > 0:
            v = w / np.linalg.norm(w)
            axis = np.cross(TARGET, v)
            s = np.linalg.norm(axis)
            rv = axis / s * np.arctan2(s, v[0]) if s > 1e-12 else np.zeros(3)
            h = Rotation.from_rotvec(rv).as_matrix()
            p = BundlePoint(x, g @ h, u - params.c / 2 * np.log(np.linalg.norm(w)))
    best = np.inf
    for it in range(max_iter + 1):
        mu, dmu = mu_fn(p.raw(), bundle.ctx(p, params, gauge))
        r = TARGET - np.asarray(mu)
        res = float(np.linalg.norm(r))
        best = min(best, res)
        if res < tol:
            return LevelSetPoint(p, res, it)
        dq = np.zeros(bundle.D)
        dq[cols] = np.linalg.lstsq(np.asarray(dmu)[:, cols], r, rcond=None)[0]
        if not np.all(np.isfinite(dq)):
            break
        # backtrack until the residual decreases
        for _ in range(30):
            trial = _from_raw(bundle, np.asarray(p.raw()) + dq, p.g)
            mu_t, _ = mu_fn(trial.raw(), bundle.ctx(trial, params, gauge))
            if np.linalg.norm(TARGET - np.asarray(mu_t)) < res:
                break
            dq = dq / 2
        p = trial
    raise ProjectionError("fiber projection did not converge", best)


# ------------------------------------------------------------------ slice

def _constraints(bundle, q, ctx):
    """Rows of dmu and dmu_a I_hat_a; V is their common kernel."""
    dmu = jax.jacfwd(bundle.mu)(q, ctx)
    Ih = bundle.ihat_raw(q, ctx)
    return jnp.concatenate([dmu, jnp.einsum("kj,kjl->kl", dmu, Ih)])


def _projector(bundle, q, ctx):
    """pr_V along span{X_hat, I_hat_a X_hat}."""
    C = _constraints(bundle, q, ctx)
    K = jnp.linalg.svd(C)[2][:4]
    xh = bundle.xhat(q, ctx)
    W = jnp.concatenate([xh[:, None], jnp.einsum("kij,j->ik", bundle.ihat_raw(q, ctx), xh)], axis=1)
    return jnp.eye(bundle.D) - W @ jnp.linalg.solve(K @ W, K)


def _slice_fields(bundle, q, B, W0, ctx):
    """Quotient data at a slice point q, with D sigma from the implicit function theorem."""
    m = bundle.m
    dmu = jax.jacfwd(bundle.mu)(q, ctx)
    Ds = B - W0 @ jnp.linalg.solve(dmu @ W0, dmu @ B)
    pr = _projector(bundle, q, ctx)
    Ih = bundle.ihat_raw(q, ctx)
    V = pr @ Ds
    J = jnp.einsum("ij,kjl,lm->kim", jnp.linalg.pinv(V), Ih, V)
    Theta = jnp.einsum("ia,kij,jb->kab", Ds, bundle.dtheta_hat(q, ctx), Ds)
    xh = bundle.xhat(q, ctx)
    M = jnp.concatenate([Ds, xh[:, None]], axis=1)
    Z = (jnp.linalg.pinv(M) @ bundle.canonical(q, ctx)[:, m])[:m]
    return {"J": J, "Theta": Theta, "Z": Z, "Ds": Ds, "mu": bundle.mu(q, ctx)}


def _mu_dmu(bundle):
    return _jit(bundle, "mu_dmu", lambda b, q, ctx: (b.mu(q, ctx), jax.jacfwd(b.mu)(q, ctx)))


@dataclass
class SliceChart:
    center: LevelSetPoint
    basis: np.ndarray  # (D, m) raw vectors spanning V at the center
    directions: np.ndarray  # (D, 3) I_hat_b X_hat at the center
    params: StructureParams
    gauge: object = None
    constraint_residual: float = 0.0
    span_rank: int = 0

    def ctx(self, bundle):
        return bundle.ctx(self.center.bundle_point, self.params, self.gauge)

    def sigma(self, bundle, y, tol=1e-14, max_iter=20) -> np.ndarray:
        """Raw point of P on the slice: q0 + B y + W0 t with mu = e1."""
        q0 = np.asarray(self.center.bundle_point.raw())
        base = q0 + self.basis @ np.asarray(y, float)
        fn, ctx = _mu_dmu(bundle), self.ctx(bundle)
        t = np.zeros(3)
        for _ in range(max_iter):
            q = base + self.directions @ t
            mu, dmu = (np.asarray(v) for v in fn(jnp.asarray(q), ctx))
            r = TARGET - mu
            if np.linalg.norm(r) < tol:
                return q
            t = t + np.linalg.solve(dmu @ self.directions, r)
        if np.linalg.norm(r) > 1e-10:
            raise ProjectionError("slice point did not reach the level set", float(np.linalg.norm(r)))
        return q

    def identification(self, bundle, y) -> LevelSetPoint:
        q = self.sigma(bundle, y)
        p = _from_raw(bundle, q, self.center.bundle_point.g)
        mu = np.asarray(bundle.call("mu", p, self.params, self.gauge))
        return LevelSetPoint(p, float(np.linalg.norm(mu - TARGET)))


def build_slice(params, bundle, anchor: LevelSetPoint, gauge=None, rank_tol=1e-8) -> SliceChart:
    """Basis of V at the anchor by Gram-Schmidt of coordinate vectors projected into V."""
    p = anchor.bundle_point
    cons = _jit(bundle, "constraints", lambda b, q, ctx: (_constraints(b, q, ctx), b.xhat(q, ctx),
                                                          b.ihat_raw(q, ctx)))
    C, xh, Ih = (np.asarray(a) for a in cons(p.raw(), bundle.ctx(p, params, gauge)))
    m, D = bundle.m, bundle.D
    if np.linalg.norm(xh) < 1e-10:
        raise DegenerateSliceError("X_hat vanishes at the anchor")
    _, s, Vt = np.linalg.svd(C)
    rank = int(np.sum(s > rank_tol * max(s[0], 1.0)))
    kernel = Vt[rank:]
    if kernel.shape[0] != m:
        raise DegenerateSliceError(f"dim V = {kernel.shape[0]}, expected {m}")
    Pv = kernel.T @ kernel
    basis = []
    for e in np.eye(D):
        v = Pv @ e
        for b in basis:
            v = v - (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == m:
            break
    B = np.stack(basis, axis=1)
    tp = np.concatenate([B, xh[:, None]], axis=1)
    W0 = np.einsum("kij,j->ik", Ih, xh)
    return SliceChart(anchor, B, W0, params, gauge, float(np.max(np.abs(C @ B))),
                      int(np.linalg.matrix_rank(tp, 1e-8)))


@dataclass
class QuotientStructure:
    I: np.ndarray  # (3, m, m) at the slice center
    Z: np.ndarray
    Theta: np.ndarray
    dI: np.ndarray  # [k, a, i, j] = d/dy_k I_a
    dZ: np.ndarray  # [i, k]
    dTheta: np.ndarray  # [k, a, i, j]
    level_residual: float
    extra: dict = field(default_factory=dict)


def induced_structure(params, bundle, chart: SliceChart) -> QuotientStructure:
    """I', Z, Theta' at the slice center, with central differences of step FD_STEP."""
    m = bundle.m
    fn = _jit(bundle, "slice_fields",
              lambda b, qs, B, W0, ctx: jax.vmap(lambda q: _slice_fields(b, q, B, W0, ctx))(qs))
    h = FD_STEP
    ys = np.concatenate([np.zeros((1, m)), h * np.eye(m), -h * np.eye(m)])
    qs = np.stack([chart.sigma(bundle, y) for y in ys])
    out = fn(jnp.asarray(qs), jnp.asarray(chart.basis), jnp.asarray(chart.directions),
             chart.ctx(bundle))
    out = {k: np.asarray(v) for k, v in out.items()}

    def deriv(a):
        return (a[1:m + 1] - a[m + 1:]) / (2 * h)

    return QuotientStructure(
        out["J"][0], out["Z"][0], out["Theta"][0],
        deriv(out["J"]), deriv(out["Z"]).T, deriv(out["Theta"]),
        float(np.max(np.linalg.norm(out["mu"] - TARGET, axis=1))),
        {"Ds": out["Ds"][0]},
    )


def quaternionic_residual(S: QuotientStructure) -> float:
    I = S.I
    m = I.shape[1]
    res = [np.max(np.abs(I[a] @ I[a] + np.eye(m))) for a in range(3)]
    res.append(np.max(np.abs(I[0] @ I[1] - I[2])))
    return float(max(res))


def nijenhuis_residual(S: QuotientStructure) -> float:
    """N(e_i, e_j) for coordinate fields, from I' and its first derivatives."""
    worst = 0.0
    for a in range(3):
        J = S.I[a]
        dJ = S.dI[:, a]  # [k, i, j]

        def A(v):
            return np.einsum("k,kij->ij", v, dJ)
        m = J.shape[0]
        for i in range(m):
            for j in range(i + 1, m):
                ei, ej = np.eye(m)[i], np.eye(m)[j]
                N = (A(J @ ei) @ ej - A(J @ ej) @ ei + J @ A(ej) @ ei - J @ A(ei) @ ej)
                worst = max(worst, float(np.max(np.abs(N))))
    return worst


def lie_z_endo(S: QuotientStructure):
    return (np.einsum("kaij,k->aij", S.dI, S.Z) - np.einsum("il,alj->aij", S.dZ, S.I)
            + np.einsum("ail,lj->aij", S.I, S.dZ))


def lie_z_form(S: QuotientStructure):
    return (np.einsum("kaij,k->aij", S.dTheta, S.Z) + np.einsum("li,alj->aij", S.dZ, S.Theta)
            + np.einsum("ail,lj->aij", S.Theta, S.dZ))


def lie_z_residuals(S: QuotientStructure) -> dict:
    LI, LT = lie_z_endo(S), lie_z_form(S)
    return {
        "L_Z I1": float(np.max(np.abs(LI[0]))),
        "L_Z I2 - 2eps I3": float(np.max(np.abs(LI[1] - 2 * EPS * S.I[2]))),
        "L_Z I3 + 2eps I2": float(np.max(np.abs(LI[2] + 2 * EPS * S.I[1]))),
        "L_Z Theta1": float(np.max(np.abs(LT[0]))),
        "L_Z Theta2 - 2eps Theta3": float(np.max(np.abs(LT[1] - 2 * EPS * S.Theta[2]))),
        "L_Z Theta3 + 2eps Theta2": float(np.max(np.abs(LT[2] + 2 * EPS * S.Theta[1]))),
    }


def closedness_residual(S: QuotientStructure) -> float:
    d = S.dTheta  # [k, a, i, j]
    dT = (np.transpose(d, (1, 0, 2, 3)) + np.transpose(d, (1, 2, 3, 0))
          + np.transpose(d, (1, 3, 0, 2)))
    return float(np.max(np.abs(dT)))


def invariant_forms(S: QuotientStructure) -> np.ndarray:
    """Theta'_a(., I'_a .) for a = 1..3."""
    return np.einsum("aij,ajk->aik", S.Theta, S.I)


@dataclass
class ThetaPrimeReport:
    closedness: float
    lie: dict
    invariant_spread: float
    invariant_symmetric: float
    min_eigenvalue: float
    positive_definite: bool


def check_theta_prime(S: QuotientStructure, require_invariant: bool = True) -> ThetaPrimeReport:
    G = invariant_forms(S)
    spread = float(max(np.max(np.abs(G[a] - G[b])) for a, b, _ in CYCLIC))
    sym = 0.5 * (G[0] + G[0].T)
    ev = float(np.min(np.linalg.eigvalsh(sym)))
    return ThetaPrimeReport(closedness_residual(S), lie_z_residuals(S), spread,
                            float(np.max(np.abs(G[0] - G[0].T))), ev, ev > 1e-8)


# ------------------------------------------------------------------ covering

def covering_residual(params, bundle, x, gauge=None) -> dict:
    """Compare I' with the transport of the base I through k(x) = (x, id, A^{-c/2})."""
    u = -params.c / 2 * np.log(abs(params.A))
    p = BundlePoint(x, np.eye(3), u)
    anchor = project_to_level_set(params, bundle, p, gauge=gauge)
    chart = build_slice(params, bundle, anchor, gauge)
    S = induced_structure(params, bundle, chart)
    m = bundle.m
    Ds = S.extra["Ds"]
    xh = np.asarray(bundle.call("xhat", anchor.bundle_point, params, gauge))
    M = np.concatenate([Ds, xh[:, None]], axis=1)
    Y = np.zeros((bundle.D, m))
    Y[:m] = np.eye(m)
    T = (np.linalg.pinv(M) @ Y)[:m]
    I = np.asarray(bundle.model.frame(jnp.asarray(x)))
    res = max(float(np.max(np.abs(T @ I[a] - S.I[a] @ T))) for a in range(3))
    return {"residual": res, "iterations": anchor.iterations, "slice_dim": chart.basis.shape[1]}


def single_circle_residual(params, bundle, x, seeds) -> float:
    """Project fiber seeds over x onto P; all results should lie on one Z_1 orbit."""
    pts = [project_fiber(params, bundle, x, free=(0, 1, 2, 3), g_seed=g, log_r_seed=u).bundle_point
           for g, u in seeds]
    worst = 0.0
    e1 = np.array([1.0, 0, 0])
    for p in pts[1:]:
        h = pts[0].g.T @ p.g
        worst = max(worst, float(np.linalg.norm(h @ e1 - e1)), abs(p.log_r - pts[0].log_r))
    return worst


# ------------------------------------------------------------------ twist

def _twist_fields(bundle, q, ctx):
    """F, a and their q-derivatives at a section point; x-derivatives follow implicitly."""
    m = bundle.m

    def F(y):
        return bundle.omega_bundle(y, ctx)[0, :m, :m]

    def a(y):
        return (bundle.theta_so3(y, ctx) @ bundle.xhat(y, ctx))[0]

    x = q[:m]
    dmu = jax.jacfwd(bundle.mu)(q, ctx)
    dv = -jnp.linalg.solve(dmu[:, m + 1:], dmu[:, :m])  # d(a2, a3, u)/dx
    S = jnp.concatenate([jnp.eye(m), jnp.zeros((1, m)), dv])  # ds/dx in raw components
    return {"F": F(q), "dF": jax.jacfwd(F)(q) @ S, "a": a(q), "da": jax.grad(a)(q) @ S,
            "mu": bundle.mu(q, ctx), "X": bundle.base(x)["X"], "DX": bundle.base(x)["DX"]}


def _section_guess(mu0, c):
    """(a2, a3, u) solving mu = e1 exactly, from mu(x, id, 1) = mu0 and equivariance.

    The rotation is about an axis in the e2-e3 plane, so a1 = 0.
    """
    norm = np.linalg.norm(mu0)
    v = mu0 / norm
    phi = np.arccos(np.clip(v[0], -1.0, 1.0))
    s = np.sin(phi)
    k = 0.5 if s < 1e-12 else phi / (2 * s)
    return np.array([-k * v[2], k * v[1], -c / 2 * np.log(norm)])


def _section_seed(params, bundle, x, gauge=None, tol=1e-12, max_iter=50):
    """(a2, a3, u) on P over x in the chart centred at g = id."""
    m = bundle.m
    mu_fn = _mu_dmu(bundle)
    ctx = bundle.ctx(BundlePoint(x, np.eye(3), 0.0), params, gauge)
    v = _section_guess(np.asarray(mu_fn(jnp.asarray(np.concatenate([x, np.zeros(4)])), ctx)[0]),
                       params.c)

    def evaluate(v):
        mu, dmu = (np.asarray(a) for a in mu_fn(jnp.asarray(np.concatenate([x, [0.0], v])), ctx))
        return TARGET - mu, dmu

    r, dmu = evaluate(v)
    best = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if best < tol:
            return v
        dv = np.linalg.lstsq(dmu[:, m + 1:], r, rcond=None)[0]
        for _ in range(30):
            r_t, dmu_t = evaluate(v + dv)
            if np.linalg.norm(r_t) < best:
                break
            dv = dv / 2
        v, r, dmu = v + dv, r_t, dmu_t
        best = float(np.linalg.norm(r))
        if not np.all(np.isfinite(v)):
            break
    raise ProjectionError("section projection did not converge", best)


@dataclass
class TwistReport:
    F: np.ndarray
    a: np.ndarray
    residual: float
    lie_residual: float
    section_residual: float


def twist_data(params, bundle, points, gauge=None) -> TwistReport:
    """F = s^* Omega_1 and a = theta_1(X_hat) o s on a section of P with g-seed id."""
    fn = _jit(bundle, "twist", _twist_fields)
    Fs, As = [], []
    res = lie = sec = 0.0
    for x in points:
        v0 = _section_seed(params, bundle, x, gauge)
        p0 = BundlePoint(x, np.eye(3), 0.0)
        q = np.concatenate([x, [0.0], v0])
        t = {k: np.asarray(v) for k, v in fn(jnp.asarray(q), bundle.ctx(p0, params, gauge)).items()}
        F, X = t["F"], t["X"]
        res = max(res, float(np.max(np.abs(t["da"] + X @ F))))
        # L_X F = D F . X + DX^T F + F DX
        LF = np.einsum("ijk,k->ij", t["dF"], X) + t["DX"].T @ F + F @ t["DX"]
        lie = max(lie, float(np.max(np.abs(LF))))
        sec = max(sec, float(np.linalg.norm(t["mu"] - TARGET)))
        Fs.append(F)
        As.append(float(t["a"]))
    return TwistReport(np.asarray(Fs), np.asarray(As), res, lie, sec)
