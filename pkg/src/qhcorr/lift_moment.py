"""Natural lift, the forms theta_hat and G, and the so(3)-valued moment map."""
from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from . import quaternionic as Q
from .kernel import flow as integrate_flow
from .quat import CYCLIC, EPS, polar_orthonormalize, so3_log
from .swann import BundlePoint, StructureParams, SwannBundle, TangentHat, to_hat


class PreconditionError(ValueError):
    pass


LIFT_STEP = 1e-4


@dataclass
class NaturalLift:
    bundle: SwannBundle
    params: StructureParams
    mode: str = "closed-form"
    gauge: object = None

    def __call__(self, p: BundlePoint) -> TangentHat:
        return natural_lift(self.bundle, self.params, p, self.mode, self.gauge)

    @property
    def source(self):
        return self.bundle.X


def _site_gauge(bundle, p, gauge):
    if isinstance(gauge, str) and gauge == "site":
        return bundle.gauge_at(p.base)
    return gauge


def require_quaternionic(bundle, p, tol=1e-8):
    res = float(np.max(np.asarray(bundle.base(jnp.asarray(p.base))["LXI"])))
    if res > tol:
        raise PreconditionError(f"X is not quaternionic (residual {res:.3g})")


def lifted_flow(bundle: SwannBundle, p: BundlePoint, t: float, gauge=None):
    """Image of (x, g, r) under the lifted flow, as (x_t, g_t, log r_t)."""
    model = bundle.model
    x = np.asarray(p.base)
    if model.flow is not None:
        xt, J = model.flow(x, t)
    else:
        res = integrate_flow(bundle.X, x, t, step=min(1e-3, abs(t) / 4 or 1e-3))
        xt, J = res.point, res.jacobian
    m = bundle.m
    Ig = np.asarray(Q.rotate_frame(model.frame(jnp.asarray(x)), jnp.asarray(p.g)))
    Jinv = np.linalg.inv(J)
    pushed = np.einsum("ij,ajk,kl->ail", J, Ig, Jinv)
    It = np.asarray(model.frame(jnp.asarray(xt)))
    gt = -np.einsum("bij,aji->ba", It, pushed) / m
    gt = polar_orthonormalize(gt)
    lv = bundle.log_volume
    dlv = 0.0 if lv is None else float(lv(jnp.asarray(xt)) - lv(jnp.asarray(x)))
    if gauge is not None:
        dlv += float(np.asarray(gauge) @ (np.asarray(xt) - x))
    ut = p.log_r + np.log(abs(np.linalg.det(J))) + dlv
    return np.asarray(xt), gt, ut


def natural_lift_raw(bundle, params, p, mode="closed-form", gauge=None):
    gauge = _site_gauge(bundle, p, gauge)
    if mode == "closed-form":
        return np.asarray(bundle.call("xhat", p, params, gauge))
    if mode != "flow-jacobian":
        raise ValueError(f"unknown lift mode {mode!r}")
    h = LIFT_STEP
    xp, gp, up = lifted_flow(bundle, p, h, gauge)
    xm, gm, um = lifted_flow(bundle, p, -h, gauge)
    ap = so3_log(p.g.T @ gp)
    am = so3_log(p.g.T @ gm)
    return np.concatenate([(xp - xm) / (2 * h), (ap - am) / (2 * h), [(up - um) / (2 * h)]])


def natural_lift(bundle, params, p, mode="closed-form", gauge=None) -> TangentHat:
    require_quaternionic(bundle, p)
    v = natural_lift_raw(bundle, params, p, mode, gauge)
    return to_hat(bundle, p, params, v)


def averaged_log_volume(model, log_volume=None, samples: int = 64, period: float = 2 * np.pi):
    """log of the U(1)-average of a volume form, for flows with x-independent Jacobian."""
    if model.flow is None:
        raise PreconditionError("averaging needs a closed-form flow")
    lv = (lambda x: 0.0 * jnp.sum(x)) if log_volume is None else log_volume
    probe = np.asarray(model.chart.shrunk()[0])
    ts = np.linspace(0.0, period, samples, endpoint=False)  # periodic trapezoid
    Js = jnp.asarray(np.stack([model.flow(probe, t)[1] for t in ts]))
    logdet = jnp.log(jnp.abs(jnp.linalg.det(Js)))

    def log_nu(x):
        vals = jax.vmap(lambda J, ld: lv(J @ x) + ld)(Js, logdet)
        return jax.scipy.special.logsumexp(vals) - np.log(samples)
    return log_nu


def theta_hat(alpha: int, params, bundle, p, v: TangentHat) -> float:
    f = params.A * np.exp(2 * p.log_r / params.c)
    return float(f * np.asarray(v.vertical_so3)[alpha - 1])


def _hat_matrices(bundle, p, params, gauge=None):
    P, Pi = bundle.call("phi", p, params, gauge)
    return np.asarray(P), np.asarray(Pi)


def g_form(alpha: int, params, bundle, p, u: TangentHat, v: TangentHat, gauge=None) -> float:
    G = np.asarray(bundle.call("g_form", p, params, gauge))[alpha - 1]
    _, Pi = _hat_matrices(bundle, p, params, gauge)
    return float((Pi @ np.asarray(u.array())) @ G @ (Pi @ np.asarray(v.array())))


def moment(params, bundle, p, gauge=None) -> np.ndarray:
    return np.asarray(bundle.call("mu", p, params, _site_gauge(bundle, p, gauge)))


# ------------------------------------------------------------------ jitted kernels

def _dtheta_g_table(bundle, q, ctx):
    """E^T (dtheta_hat - G I_hat) E per alpha, over the canonical basis."""
    E = bundle.canonical(q, ctx)
    dth = bundle.dtheta_hat(q, ctx)
    GI = jnp.einsum("kij,kjl->kil", bundle.g_form(q, ctx), bundle.ihat_raw(q, ctx))
    return (jnp.einsum("ia,kij,jb->kab", E, dth, E), jnp.einsum("ia,kij,jb->kab", E, GI, E))


def _moment_tables(bundle, q, ctx):
    E = bundle.canonical(q, ctx)
    dmu = jax.jacfwd(bundle.mu)(q, ctx)  # (3, D)
    Ih = bundle.ihat_raw(q, ctx)
    cr = jnp.einsum("kj,kjl,la->ka", dmu, Ih, E)
    xh = bundle.xhat(q, ctx)
    contraction = dmu + jnp.einsum("i,kij->kj", xh, bundle.dtheta_hat(q, ctx))
    G = bundle.g_form(q, ctx)
    Om = bundle.omega_bundle(q, ctx)
    return {
        "cr": cr,
        "contraction": contraction @ E,
        "trans": jnp.einsum("kj,kjl,l->k", dmu, Ih, xh),
        "G_xx": jnp.einsum("i,kij,j->k", xh, G, xh),
        "omega_xix": jnp.einsum("i,kij,kjl,l->k", xh, Om, Ih, xh),
        "theta_sq": jnp.sum((bundle.theta_so3(q, ctx) @ xh) ** 2),
        "xhat": xh,
    }


def _lie_tables(bundle, q, ctx):
    """Lie derivatives along X_hat and the fundamental fields, raw components."""
    m = bundle.m

    def xh(y):
        return bundle.xhat(y, ctx)

    def E(y):
        return bundle.canonical(y, ctx)

    def ih(y):
        return bundle.ihat_raw(y, ctx)

    def th(y):  # theta_bar rows: so(3) then R
        return jnp.concatenate([bundle.theta_so3(y, ctx), bundle.theta_real(y, ctx)[None]])

    def tht(y):
        return bundle.theta_hat(y, ctx)

    def dtht(y):
        return bundle.dtheta_hat(y, ctx)

    X, DX = xh(q), jax.jacfwd(xh)(q)
    Ev, dE = E(q), jax.jacfwd(E)(q)
    Z = Ev[:, m:]  # Z1, Z2, Z3, Z0c
    DZ = dE[:, m:, :]

    def lie_form(V, DV, w, Dw):  # w (k, D), Dw (k, D, D)
        return jnp.einsum("kjl,l->kj", Dw, V) + w @ DV

    def lie_endo(V, DV, T, DT):
        return (jnp.einsum("kijl,l->kij", DT, V) - jnp.einsum("il,klj->kij", DV, T)
                + jnp.einsum("kil,lj->kij", T, DV))

    def lie_2form(V, DV, F, DF):
        return (jnp.einsum("kijl,l->kij", DF, V) + jnp.einsum("li,klj->kij", DV, F)
                + jnp.einsum("kil,lj->kij", F, DV))

    Iv, DI = ih(q), jax.jacfwd(ih)(q)
    thv, Dth = th(q), jax.jacfwd(th)(q)
    thh, Dthh = tht(q), jax.jacfwd(tht)(q)
    dv, Ddv = dtht(q), jax.jacfwd(dtht)(q)
    bracket_xz = jnp.einsum("ial,l->ia", DZ, X) - DX @ Z
    lie_z_theta = jnp.stack([lie_form(Z[:, a], DZ[:, a], thv[:3], Dth[:3]) for a in range(3)])
    lie_z_thhat = jnp.stack([lie_form(Z[:, a], DZ[:, a], thh, Dthh) for a in range(3)])
    return {
        "xz": bracket_xz,
        "x_theta": lie_form(X, DX, thv, Dth) @ Ev,
        "x_ihat": lie_endo(X, DX, Iv, DI),
        "x_dtheta": lie_2form(X, DX, dv, Ddv),
        "z_theta": jnp.einsum("akj,jb->akb", lie_z_theta, Ev),
        "z_thhat": jnp.einsum("akj,jb->akb", lie_z_thhat, Ev),
        "theta": thv[:3] @ Ev,
        "thhat": thh @ Ev,
    }


def _call(bundle, name, fn, p, params, gauge):
    key = ("lm", name)
    if key not in bundle._jit:
        bundle._jit[key] = jax.jit(lambda q, ctx: fn(bundle, q, ctx))
    return jax.tree_util.tree_map(np.asarray, bundle._jit[key](p.raw(), bundle.ctx(p, params, gauge)))


# ------------------------------------------------------------------ checks

@dataclass
class DthetaReport:
    max_residual: float
    fiber_values: dict


def check_dtheta_eq_g(params, bundle, points, gauge="site") -> DthetaReport:
    """dtheta_hat_a(Y, Z) - G_a(Y, I_hat_a Z) over the canonical basis."""
    m = bundle.m
    worst = 0.0
    fiber = {"dtheta(Z0c,Za)": [], "G(Z0c,Z0c)": [], "dtheta(Zb,Zg)": [], "2eps f": []}
    for p in points:
        d, gi = _call(bundle, "dtheta_g", _dtheta_g_table, p, params, _site_gauge(bundle, p, gauge))
        worst = max(worst, float(np.max(np.abs(d - gi))))
        f = params.A * np.exp(2 * p.log_r / params.c)
        for a, b, c in CYCLIC:
            fiber["dtheta(Z0c,Za)"].append(d[a, m + 3, m + a])
            fiber["G(Z0c,Z0c)"].append(gi[a, m + 3, m + a])
            fiber["dtheta(Zb,Zg)"].append(d[a, m + b, m + c])
            fiber["2eps f"].append(2 * EPS * f)
    return DthetaReport(worst, {k: np.asarray(v) for k, v in fiber.items()})


@dataclass
class MomentReport:
    cr: float
    contraction: float
    cr_hypothesis: float
    transversality: float
    omega_identity: float
    omega_alpha_spread: float
    expression: np.ndarray
    g_xx: np.ndarray


def moment_report(params, bundle, points, gauge=None) -> MomentReport:
    """CR, contraction, transversality and Omega-contraction residuals."""
    model = bundle.model
    n = model.n
    cr = contraction = hyp = om = spread = 0.0
    expr, gxx = [], []
    for p in points:
        t = _call(bundle, "moment", _moment_tables, p, params, _site_gauge(bundle, p, gauge))
        c = t["cr"]
        cr = max(cr, float(np.max(np.abs(c - c[[1, 2, 0]]))))
        contraction = max(contraction, float(np.max(np.abs(t["contraction"]))))
        x = jnp.asarray(p.base)
        ric = bundle.ricci_at(x)
        hyp = max(hyp, Q.is_q_hermitian(ric, np.asarray(bundle.base(x)["I"]))[1])
        X = np.asarray(bundle.X(x))
        rxx = float(X @ ric @ X)
        om = max(om, float(np.max(np.abs(t["omega_xix"] + EPS / (2 * (n + 2)) * rxx))))
        spread = max(spread, float(np.ptp(t["omega_xix"])))
        expr.append(rxx + 4 * (n + 2) * float(t["theta_sq"]))
        gxx.append(t["G_xx"])
        contraction = max(contraction, float(np.max(np.abs(t["trans"] - t["G_xx"]))))
    return MomentReport(cr, contraction, hyp, float(np.min(np.abs(gxx))), om, spread,
                        np.asarray(expr), np.asarray(gxx))


def check_cr(params, bundle, points, gauge=None) -> dict:
    r = moment_report(params, bundle, points, gauge)
    return {"cr": r.cr, "contraction": r.contraction, "hypothesis": r.cr_hypothesis,
            "consistent_obstruction": r.cr_hypothesis > 1e-8 and r.cr > 1e-6}


def check_transversality(params, bundle, points, gauge=None) -> float:
    return moment_report(params, bundle, points, gauge).transversality


def omega_contraction_identity(params, bundle, points, gauge=None) -> float:
    r = moment_report(params, bundle, points, gauge)
    return max(r.omega_identity, r.omega_alpha_spread)


def lie_report(params, bundle, points, gauge=None) -> dict:
    """Residuals of the invariance and equivariance identities along X_hat and Z_a."""
    out = {"xhat_z": 0.0, "xhat_theta": 0.0, "xhat_ihat": 0.0, "xhat_dtheta": 0.0,
           "z_theta": 0.0, "z_theta_hat": 0.0}
    for p in points:
        t = _call(bundle, "lie", _lie_tables, p, params, _site_gauge(bundle, p, gauge))
        out["xhat_z"] = max(out["xhat_z"], float(np.max(np.abs(t["xz"]))))
        out["xhat_theta"] = max(out["xhat_theta"], float(np.max(np.abs(t["x_theta"]))))
        out["xhat_ihat"] = max(out["xhat_ihat"], float(np.max(np.abs(t["x_ihat"]))))
        out["xhat_dtheta"] = max(out["xhat_dtheta"], float(np.max(np.abs(t["x_dtheta"]))))
        for key, src, lz in (("z_theta", "theta", "z_theta"), ("z_theta_hat", "thhat", "z_thhat")):
            th, L = t[src], t[lz]
            for a, b, c in CYCLIC:
                r = max(np.max(np.abs(L[a, a])), np.max(np.abs(L[a, b] - 2 * EPS * th[c])),
                        np.max(np.abs(L[a, c] + 2 * EPS * th[b])))
                out[key] = max(out[key], float(r))
    return out


def equivariance_residual(params, bundle, pairs, gauge=None) -> float:
    """max |mu(x, g h, r) - h^T mu(x, g, r)| over (p, h) pairs."""
    worst = 0.0
    for p, h in pairs:
        q = BundlePoint(p.base, p.g @ h, p.log_r)
        w = _site_gauge(bundle, p, gauge)
        worst = max(worst, float(np.max(np.abs(moment(params, bundle, q, w)
                                               - h.T @ moment(params, bundle, p, w)))))
    return worst
