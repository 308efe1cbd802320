"""Check registry and the suite runner behind ``qhcorr verify``."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from . import lift_moment as LM
from . import quaternionic as Q
from . import reduction as RD
from . import swann as SW
from .models import ManifoldModel, flat_hn
from .quat import CYCLIC, EPS, rotation_from_quaternion

SUITES = ("structure", "swann", "moment", "reduction", "twist")

PASS, FAIL, EXPECTED_FAIL, NOT_APPLICABLE, INFO, ERROR = (
    "pass", "fail", "expected-fail", "n/a", "info", "error")


@dataclass(frozen=True)
class Check:
    id: str
    suite: str
    anchor: str
    tolerance: float
    description: str
    kind: str = "max"  # max: residual <= tol; min: residual > tol; info: reported only


CHECKS = [
    Check("structure.frame", "structure", "I_a^2 = -1, I_1 I_2 = -I_2 I_1 = I_3", 1e-8,
          "admissible frame relations at every sample point"),
    Check("structure.torsion", "structure", "Gamma^i_kj = Gamma^i_jk", 1e-8, "torsion-freeness"),
    Check("structure.nabla_q", "structure", "nabla_k I_a in span{I_b, I_c}", 1e-8,
          "the connection preserves Q"),
    Check("structure.x_quaternionic", "structure", "L_X I_a in Q", 1e-8, "X is quaternionic"),
    Check("structure.trace_identity", "structure", "Tr S^xi_X = 4(n+1) xi(X)", 1e-8,
          "trace of the deformation tensor"),
    Check("structure.bianchi", "structure", "R(X,Y)Z + R(Y,Z)X + R(Z,X)Y = 0", 1e-8,
          "first Bianchi identity"),
    Check("structure.omega_paths", "structure",
          "-(1/2n) Tr(I_a R(X,Y)) = 2(B(X, I_a Y) - B(Y, I_a X))", 1e-7,
          "curvature form from the trace and from the Ricci decomposition"),
    Check("structure.omega_ricci", "structure",
          "Omega_a(Y, I_a Z) = (Ric^a(I_a Y, I_a Z) - Ric^a(Y,Z))/(2(n+1)) "
          "- (Ric^s(I_a Y, I_a Z) + Ric^s(Y,Z))/(2n) + 2 Pi_h Ric^s(Y,Z)/(n(n+2))", 1e-6,
          "curvature form in terms of the Ricci split"),
    Check("structure.affine", "structure", "L_X nabla = 0 <=> 2 Ric^a(X, .) = d Tr(nabla X)", 1e-7,
          "affinity of X; gates the moment, reduction and twist suites", "info"),
    Check("swann.theta_fundamental", "swann", "theta_bar(Z_a) = e_a, theta_bar(Y^h) = 0", 1e-9,
          "connection form on fundamental fields and horizontal lifts"),
    Check("swann.fundamental_bracket", "swann", "[Z_a, Z_b] = 2 eps Z_c", 1e-9,
          "bracket of fundamental fields by the kernel lie_bracket"),
    Check("swann.right_translation", "swann", "R_h^* theta_bar = Ad(h^-1) theta_bar", 1e-9,
          "equivariance of the connection form; lifts commute with the frame rotation"),
    Check("swann.quaternionic_relations", "swann", "I_hat_a^2 = -1, I_hat_1 I_hat_2 = I_hat_3",
          1e-9, "quaternionic relations on the bundle"),
    Check("swann.lie_relations", "swann",
          "L_{Z_0} I_hat_a = 0, L_{Z_a} I_hat_a = 0, L_{Z_a} I_hat_b = 2 eps I_hat_c", 1e-6,
          "Lie derivatives of the structure along fundamental fields"),
    Check("swann.integrability", "swann",
          "N = 0 <=> c = -4(n+1) or Ric^a Q-hermitian", 1e-6,
          "Nijenhuis verdict vs the analytic predicate; obstruction needs residual > 1e-3"),
    Check("swann.vhh", "swann",
          "theta_bar N^a(X^h, Y^h) = (4 eps (n+1) + eps c)/(2(n+1)) (Ric^a(X,Y) - Ric^a(I_a X, I_a Y)) e_0 "
          "- (4 eps (n+1) + eps c)/(2c(n+1)) (Ric^a(X, I_a Y) + Ric^a(I_a X, Y)) e_a", 1e-6,
          "vertical part of N on horizontal lifts"),
    Check("swann.hhh", "swann", "pi_* N^a(X^h, Y^h) = 0, N^a(Z_i, Z_j) = 0", 1e-6,
          "horizontal and purely vertical parts of N"),
    Check("swann.connection_dependence", "swann",
          "I_hat^1 - I_hat^2 = eps (1 + 4(n+1)/c)(xi Z_a + (xi o I_a) Z_0^c), nabla^2 = nabla^1 + S^xi",
          1e-7, "dependence of I_hat on the quaternionic connection"),
    Check("moment.lift_modes", "moment", "X_hat = d/dt phi_hat_t at t = 0", 1e-6,
          "closed-form lift vs central difference of the lifted flow"),
    Check("moment.lift_commutes", "moment", "[X_hat, Z_a] = 0, a = 0..3", 1e-6,
          "natural lift commutes with the principal action"),
    Check("moment.invariance", "moment", "L_X_hat theta_bar = 0, L_X_hat I_hat_a = 0", 1e-6,
          "invariance of the connection and structure under the lift"),
    Check("moment.form_equivariance", "moment",
          "L_{Z_a} theta_b = 2 eps theta_c, L_{Z_a} theta_hat_b = 2 eps theta_hat_c", 1e-7,
          "equivariance of theta and theta_hat"),
    Check("moment.dtheta_invariance", "moment", "L_X_hat d theta_hat_a = 0", 1e-6,
          "invariance of d theta_hat"),
    Check("moment.dtheta_g", "moment", "d theta_hat_a(Y, Z) = G_a(Y, I_hat_a Z)", 1e-6,
          "exterior derivative of theta_hat over the canonical basis"),
    Check("moment.equivariance", "moment", "mu(x, g h, r) = h^T mu(x, g, r)", 1e-8,
          "fiber equivariance of the moment map"),
    Check("moment.cr", "moment",
          "d mu_1 o I_hat_1 = d mu_2 o I_hat_2 = d mu_3 o I_hat_3, d mu_a = -i_X_hat d theta_hat_a",
          1e-6, "CR equations of the moment map"),
    Check("moment.transversality", "moment",
          "(d mu_a o I_hat_a)(X_hat) = G_a(X_hat, X_hat) != 0", 1e-6,
          "transversality margin: min |G_a(X_hat, X_hat)| must exceed the tolerance", "min"),
    Check("moment.transversality_expression", "moment",
          "G_a(X_hat, X_hat) = f/(2(n+2)) (Ric(X,X) + 4(n+2) <theta,theta>(X_hat, X_hat)) "
          "+ 2 eps f/c^2 (dr/r)(X_hat)^2", 1e-6,
          "closed form of the transversality expression"),
    Check("moment.omega_contraction", "moment",
          "Omega_a(X_hat, I_hat_a X_hat) = -eps/(2(n+2)) Ric(X, X)", 1e-6,
          "curvature contraction, also alpha-independent"),
    Check("reduction.level_set", "reduction", "P = mu^-1((1,0,0))", 1e-9,
          "Newton projection onto the level set"),
    Check("reduction.slice_dimension", "reduction", "TP = V + <X_hat>, dim V = 4n", 0.5,
          "dimension deficit of V"),
    Check("reduction.v_annihilation", "reduction", "V = ker d mu cap ker(d mu_a o I_hat_a)", 1e-8,
          "slice basis lies in V"),
    Check("reduction.quaternionic", "reduction", "I'_a^2 = -1, I'_1 I'_2 = I'_3", 1e-8,
          "quaternionic relations of the induced structure"),
    Check("reduction.nijenhuis", "reduction", "N^{I'_a} = 0", 1e-5,
          "integrability of the induced structure"),
    Check("reduction.lie_z", "reduction",
          "L_Z I'_1 = 0, L_Z I'_2 = 2 eps I'_3, L_Z Theta'_1 = 0, L_Z Theta'_2 = 2 eps Theta'_3",
          1e-5, "Lie derivatives along Z = pi_* Z_1"),
    Check("reduction.closedness", "reduction", "d Theta'_a = 0", 1e-6, "closed induced 2-forms"),
    Check("reduction.invariant_condition", "reduction",
          "Theta'_1(., I'_1 .) = Theta'_2(., I'_2 .) = Theta'_3(., I'_3 .)", 1e-6,
          "alpha-independence when Ric is Q-hermitian"),
    Check("reduction.positive_definite", "reduction", "Theta'_a(., I'_a .) > 0", 0.0,
          "smallest eigenvalue of the symmetric form at the slice center", "info"),
    Check("reduction.covering", "reduction", "k_* I_a = I'_a k_*, k(x) = (x, id, A^{-c/2})", 1e-6,
          "induced structure vs the base structure through the covering"),
    Check("reduction.single_circle", "reduction", "P cap pi_hat^-1(x) is one Z_1-orbit", 1e-6,
          "fiber seeds project onto one orbit"),
    Check("reduction.twist", "twist", "da = -i_X F, L_X F = 0, F = s^* Omega_1, a = theta_1(X_hat) o s",
          1e-6, "twist data on a section of P"),
    Check("reduction.twist_trivial", "twist", "(F, a) = (0, 1)", 1e-9,
          "trivial twist data for the flat and Hopf models"),
]

REGISTRY = {c.id: c for c in CHECKS}


def explain(check_id: str) -> str:
    if check_id not in REGISTRY:
        raise KeyError(f"unknown check id {check_id!r}")
    c = REGISTRY[check_id]
    return (f"{c.id}  [{c.suite}]\n  formula:   {c.anchor}\n  checks:    {c.description}\n"
            f"  tolerance: {c.tolerance:g} ({'pass when residual exceeds' if c.kind == 'min' else 'max residual'})")


@dataclass
class Entry:
    suite: str
    check: str
    model: str
    c: float | None
    anchor: str
    max_residual: float
    tolerance: float
    status: str
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status in (PASS, EXPECTED_FAIL, NOT_APPLICABLE, INFO)


# ------------------------------------------------------------------ sampling

@dataclass
class Samples:
    base: np.ndarray
    rotations: list
    log_r: np.ndarray
    extra_rotations: list

    def bundle_points(self):
        return [SW.BundlePoint(x, g, u) for x, g, u in zip(self.base, self.rotations, self.log_r)]


def draw_samples(model: ManifoldModel, count: int, seed: int) -> Samples:
    gen = np.random.Generator(np.random.Philox(seed))
    base = model.sample(gen, count)
    rots = [rotation_from_quaternion(q) for q in gen.normal(size=(count, 4))]
    log_r = gen.uniform(np.log(0.5), np.log(2.0), size=count)
    extra = [rotation_from_quaternion(q) for q in gen.normal(size=(count, 4))]
    return Samples(base, rots, log_r, extra)


# ------------------------------------------------------------------ structure

@lru_cache(maxsize=32)
def _structure_fn(model: ManifoldModel):
    n, m = model.n, model.dim
    xi_f = model.xi

    def table(x, probe_xi, probe_X):
        I = model.frame(x)
        E = jnp.eye(m)
        fr = jnp.stack([jnp.max(jnp.abs(I[a] @ I[a] + E)) for a in range(3)]
                       + [jnp.max(jnp.abs(I[a] @ I[b] - I[c])) for a, b, c in CYCLIC]
                       + [jnp.max(jnp.abs(I[b] @ I[a] + I[c])) for a, b, c in CYCLIC])
        G = model.nabla(x)
        R = Q.riemann(model.nabla, x)
        split = Q.ricci_split(model.nabla, model.frame, x)
        xi = probe_xi if xi_f is None else xi_f(x)
        S = Q.s_xi_tensor(xi, I)
        om_t = Q.omega_u_trace(model.nabla, model.frame, x)
        om_b = Q.omega_u_b(model.nabla, model.frame, x)
        rhs = Q.omega_ricci_rhs(split, I, n)
        cyc = R + jnp.einsum("iklj->ijkl", R) + jnp.einsum("iljk->ijkl", R)
        out = {
            "frame": jnp.max(fr),
            "torsion": jnp.max(jnp.abs(G - jnp.transpose(G, (0, 2, 1)))),
            "nabla_q": jnp.max(Q.nabla_q_array(model.nabla, model.frame, x)),
            "trace": jnp.abs(jnp.einsum("iki,k->", S, probe_X) - 4 * (n + 1) * xi @ probe_X),
            "bianchi": jnp.max(jnp.abs(cyc)),
            "omega_paths": jnp.max(jnp.abs(om_t - om_b)),
            "omega_ricci": jnp.max(jnp.abs(jnp.einsum("akl,alm->akm", om_t, I) - rhs)),
        }
        if model.X is not None:
            out["x_quat"] = jnp.max(Q.lie_derivative_frame_array(model.X, model.frame, x))
            LG, RH, tc = Q.affine_arrays(model.nabla, model.X, model.frame, x)
            out["affine"] = jnp.max(jnp.stack([jnp.linalg.norm(LG), jnp.linalg.norm(RH),
                                               jnp.linalg.norm(tc)]))
        return out
    return jax.jit(table)


def structure_table(model: ManifoldModel, points, seed: int = 0) -> dict:
    fn = _structure_fn(model)
    gen = np.random.Generator(np.random.Philox(seed + 1))
    out: dict = {}
    for x in points:
        r = fn(jnp.asarray(x), jnp.asarray(gen.normal(size=model.dim)),
               jnp.asarray(gen.normal(size=model.dim)))
        for k, v in r.items():
            out[k] = max(out.get(k, 0.0), float(v))
    return out


# ------------------------------------------------------------------ runner

@dataclass
class RunContext:
    model: ManifoldModel
    samples: Samples
    A: float
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    affine: bool = True
    affine_residual: float = 0.0

    def tol(self, check_id):
        return float(self.tolerances.get(check_id, REGISTRY[check_id].tolerance))

    @property
    def bundle(self):
        return _bundle(self.model)


@lru_cache(maxsize=32)
def _bundle(model):
    return SW.SwannBundle(model)


def _entry(ctx, check_id, residual, c=None, detail="", status=None):
    chk = REGISTRY[check_id]
    tol = ctx.tol(check_id)
    if status is None:
        if chk.kind == "info":
            status = INFO
        elif not np.isfinite(residual):
            status = FAIL
        elif chk.kind == "min":
            status = PASS if residual > tol else FAIL
        else:
            status = PASS if residual <= tol else FAIL
    return Entry(chk.suite, check_id, ctx.model.name, c, chk.anchor, float(residual), tol,
                 status, detail)


def _na(ctx, check_id, c, reason):
    return _entry(ctx, check_id, float("nan"), c, reason, NOT_APPLICABLE)


def run_structure(ctx: RunContext, c_values) -> list:
    t = structure_table(ctx.model, ctx.samples.base, ctx.seed)
    out = [
        _entry(ctx, "structure.frame", t["frame"]),
        _entry(ctx, "structure.torsion", t["torsion"]),
        _entry(ctx, "structure.nabla_q", t["nabla_q"]),
        _entry(ctx, "structure.trace_identity", t["trace"]),
        _entry(ctx, "structure.bianchi", t["bianchi"]),
        _entry(ctx, "structure.omega_paths", t["omega_paths"]),
        _entry(ctx, "structure.omega_ricci", t["omega_ricci"]),
    ]
    if "x_quat" in t:
        out.append(_entry(ctx, "structure.x_quaternionic", t["x_quat"]))
        out.append(_entry(ctx, "structure.affine", t["affine"],
                          detail="affine" if t["affine"] <= ctx.tol("structure.affine")
                          else "not affine: moment, reduction and twist suites are skipped"))
    return out


def _params(ctx, c):
    return SW.StructureParams(float(c), float(ctx.A))


def run_swann(ctx: RunContext, c_values) -> list:
    model, B = ctx.model, ctx.bundle
    pts = ctx.samples.bundle_points()
    m = B.m
    out = []
    for c in c_values:
        P = _params(ctx, c)
        tf = rel = rt = 0.0
        for p, h in zip(pts, ctx.samples.extra_rotations):
            Pm, Pi = (np.asarray(a) for a in B.call("phi", p, P))
            # at the chart centre the right action curves are the raw coordinate lines
            gen_raw = np.eye(B.D)[:, m:]
            th = np.vstack([Pm[m:m + 3], c * Pm[m + 3]]) @ gen_raw
            hor = np.vstack([Pm[m:m + 3], Pm[m + 3]]) @ Pi[:, :m]
            tf = max(tf, float(np.max(np.abs(th - np.eye(4)))), float(np.max(np.abs(hor))),
                     float(np.max(np.abs(Pi[:m, :m] - np.eye(m)))))
            rel = max(rel, SW.quaternionic_relations_hat(B, p, P))
            q = SW.BundlePoint(p.base, p.g @ h, p.log_r)
            Pq = np.asarray(B.call("phi", q, P)[0])
            push = np.eye(B.D)
            push[m:m + 3, m:m + 3] = h.T
            rt = max(rt, float(np.max(np.abs(Pq[m:m + 3] @ push - h.T @ Pm[m:m + 3]))),
                     float(np.max(np.abs(Pq[m + 3] @ push - Pm[m + 3]))))
        out.append(_entry(ctx, "swann.theta_fundamental", tf, c))
        out.append(_entry(ctx, "swann.fundamental_bracket", _fundamental_bracket(B, P, pts[0]), c))
        out.append(_entry(ctx, "swann.right_translation", rt, c))
        out.append(_entry(ctx, "swann.quaternionic_relations", rel, c))
        lie = SW.lie_relations_check(B, P, pts)
        out.append(_entry(ctx, "swann.lie_relations", max(lie.values()), c))
        try:
            v = SW.classify_integrability(B, P, pts)
        except SW.UnsupportedModel as e:
            out.append(_entry(ctx, "swann.integrability", float("nan"), c, str(e), ERROR))
            continue
        detail = f"verdict={v.verdict} predicate={'integrable' if v.predicate else 'obstructed'}"
        if not v.agrees:
            status = FAIL
        elif v.verdict == "obstructed":
            status = EXPECTED_FAIL
        else:
            status = PASS
        out.append(_entry(ctx, "swann.integrability", v.max_residual, c, detail, status))
        out.append(_entry(ctx, "swann.vhh", v.vhh_residual, c))
        nv = max(float(np.max(np.abs(SW.nijenhuis_table(B, p, P)[:, :, m:, m:]))) for p in pts[:3])
        out.append(_entry(ctx, "swann.hhh", max(v.hhh_residual, nv), c))
        if model.xi is not None:
            flat = SW.SwannBundle(model, nabla=flat_hn(model.n).nabla)
            worst = 0.0
            gen = np.random.Generator(np.random.Philox(ctx.seed + 2))
            for p in pts:
                diff, exp = SW.connection_difference(flat, B, P, p, model.xi)
                V = gen.normal(size=(B.D, 2))
                target = 0 * exp if np.isclose(c, -4 * (model.n + 1)) else exp
                worst = max(worst, float(np.max(np.abs(np.einsum("aij,jk->aik", diff - target, V)))))
            out.append(_entry(ctx, "swann.connection_dependence", worst, c))
        else:
            out.append(_na(ctx, "swann.connection_dependence", c, "model has no xi deformation"))
    return out


def _fundamental_bracket(B, P, p):
    m = B.m
    Z = [SW.canonical_field(B, P, p, m + k) for k in range(3)]
    from .kernel import lie_bracket

    q = p.raw()
    worst = 0.0
    for a, b, c in CYCLIC:
        worst = max(worst, float(np.max(np.abs(np.asarray(lie_bracket(Z[a], Z[b], q))
                                               - 2 * EPS * np.asarray(Z[c](q))))))
    return worst


def _gate(ctx, ids, c):
    reason = f"X is not affine for this connection (residual {ctx.affine_residual:.3g})"
    return [_na(ctx, i, c, reason) for i in ids]


MOMENT_GATED = ("moment.lift_modes", "moment.lift_commutes", "moment.invariance",
                "moment.form_equivariance", "moment.dtheta_invariance", "moment.equivariance",
                "moment.cr", "moment.transversality", "moment.transversality_expression",
                "moment.omega_contraction")


def run_moment(ctx: RunContext, c_values) -> list:
    B = ctx.bundle
    n, m = B.n, B.m
    pts = ctx.samples.bundle_points()
    out = []
    for c in c_values:
        P = _params(ctx, c)
        out.append(_entry(ctx, "moment.dtheta_g", LM.check_dtheta_eq_g(P, B, pts).max_residual, c))
        if not ctx.affine:
            out.extend(_gate(ctx, MOMENT_GATED, c))
            continue
        lm = max(float(np.max(np.abs(LM.natural_lift_raw(B, P, p)
                                     - LM.natural_lift_raw(B, P, p, "flow-jacobian"))))
                 for p in pts[:5])
        out.append(_entry(ctx, "moment.lift_modes", lm, c))
        lie = LM.lie_report(P, B, pts)
        out.append(_entry(ctx, "moment.lift_commutes", lie["xhat_z"], c))
        out.append(_entry(ctx, "moment.invariance", max(lie["xhat_theta"], lie["xhat_ihat"]), c))
        out.append(_entry(ctx, "moment.form_equivariance", max(lie["z_theta"], lie["z_theta_hat"]), c))
        out.append(_entry(ctx, "moment.dtheta_invariance", lie["xhat_dtheta"], c))
        pairs = list(zip(pts, ctx.samples.extra_rotations))
        out.append(_entry(ctx, "moment.equivariance", LM.equivariance_residual(P, B, pairs), c))
        r = LM.moment_report(P, B, pts)
        out.append(_entry(ctx, "moment.cr", max(r.cr, r.contraction), c,
                          f"Ric hermitian residual {r.cr_hypothesis:.3g}"))
        out.append(_entry(ctx, "moment.transversality", r.transversality, c))
        texp = 0.0
        for p, e, g in zip(pts, r.expression, r.g_xx):
            f = P.A * np.exp(2 * p.log_r / c)
            udot = LM.natural_lift_raw(B, P, p)[m + 3]
            want = f / (2 * (n + 2)) * e + 2 * EPS * f / c ** 2 * udot ** 2
            texp = max(texp, float(np.max(np.abs(g - want))))
        out.append(_entry(ctx, "moment.transversality_expression", texp, c))
        out.append(_entry(ctx, "moment.omega_contraction", max(r.omega_identity, r.omega_alpha_spread), c))
    return out


REDUCTION_GATED = ("reduction.level_set", "reduction.slice_dimension", "reduction.v_annihilation",
                   "reduction.quaternionic", "reduction.nijenhuis", "reduction.lie_z",
                   "reduction.closedness", "reduction.invariant_condition",
                   "reduction.positive_definite", "reduction.covering", "reduction.single_circle")


def anchors_on_level_set(ctx, P, count):
    """Section points over sample base points, rotated about e_1 and perturbed, then projected."""
    B = ctx.bundle
    gen = np.random.Generator(np.random.Philox(ctx.seed + 3))
    out = []
    for x in ctx.samples.base[:count]:
        v = RD._section_seed(P, B, x)
        from .quat import rotation_about, so3_exp

        g = np.asarray(so3_exp(np.array([0.0, v[0], v[1]]))) @ rotation_about(0, gen.uniform(0, 2 * np.pi))
        p = SW.BundlePoint(x + 1e-2 * gen.normal(size=x.size) / np.sqrt(x.size), g,
                           v[2] + 1e-2 * gen.normal())
        out.append(RD.project_to_level_set(P, B, p))
    return out


def run_reduction(ctx: RunContext, c_values, max_anchors: int = 10) -> list:
    model, B = ctx.model, ctx.bundle
    out = []
    for c in c_values:
        if not ctx.affine:
            out.extend(_gate(ctx, REDUCTION_GATED, c))
            continue
        P = _params(ctx, c)
        try:
            anchors = anchors_on_level_set(ctx, P, min(max_anchors, len(ctx.samples.base)))
        except RD.ProjectionError as e:
            out.append(_entry(ctx, "reduction.level_set", e.best_residual, c, str(e), ERROR))
            continue
        out.append(_entry(ctx, "reduction.level_set", max(a.residual for a in anchors), c,
                          f"max iterations {max(a.iterations for a in anchors)}"))
        dim = ann = quat = nij = lz = clo = inv = 0.0
        eig = np.inf
        herm = True
        for a in anchors:
            try:
                ch = RD.build_slice(P, B, a)
            except RD.DegenerateSliceError as e:
                out.append(_entry(ctx, "reduction.slice_dimension", float("inf"), c, str(e), ERROR))
                break
            dim = max(dim, abs(ch.basis.shape[1] - B.m) + abs(ch.span_rank - B.m - 1))
            ann = max(ann, ch.constraint_residual)
            S = RD.induced_structure(P, B, ch)
            quat = max(quat, RD.quaternionic_residual(S))
            nij = max(nij, RD.nijenhuis_residual(S))
            tp = RD.check_theta_prime(S)
            lz = max(lz, max(tp.lie.values()))
            clo = max(clo, tp.closedness)
            inv = max(inv, tp.invariant_spread)
            eig = min(eig, tp.min_eigenvalue)
            x = a.bundle_point.base
            herm = herm and Q.is_q_hermitian(B.ricci_at(x), np.asarray(B.base(jnp.asarray(x))["I"]))[0]
        else:
            out.append(_entry(ctx, "reduction.slice_dimension", dim, c))
            out.append(_entry(ctx, "reduction.v_annihilation", ann, c))
            out.append(_entry(ctx, "reduction.quaternionic", quat, c))
            out.append(_entry(ctx, "reduction.nijenhuis", nij, c))
            out.append(_entry(ctx, "reduction.lie_z", lz, c))
            out.append(_entry(ctx, "reduction.closedness", clo, c))
            if herm:
                out.append(_entry(ctx, "reduction.invariant_condition", inv, c))
            else:
                out.append(_na(ctx, "reduction.invariant_condition", c, "Ric is not Q-hermitian"))
            out.append(_entry(ctx, "reduction.positive_definite", eig, c,
                              "positive" if eig > 0 else "not positive-definite"))
        if model.name in ("flat", "hopf"):
            cov = max(RD.covering_residual(P, B, x)["residual"] for x in ctx.samples.base[:max_anchors])
            out.append(_entry(ctx, "reduction.covering", cov, c))
        else:
            out.append(_na(ctx, "reduction.covering", c, "no covering map for this model"))
        x = ctx.samples.base[0]
        seeds = list(zip(ctx.samples.rotations[:4], ctx.samples.log_r[:4]))
        try:
            out.append(_entry(ctx, "reduction.single_circle", RD.single_circle_residual(P, B, x, seeds), c))
        except RD.ProjectionError as e:
            out.append(_entry(ctx, "reduction.single_circle", e.best_residual, c, str(e), ERROR))
    return out


def run_twist(ctx: RunContext, c_values) -> list:
    model, B = ctx.model, ctx.bundle
    out = []
    for c in c_values:
        if not ctx.affine:
            out.extend(_gate(ctx, ("reduction.twist", "reduction.twist_trivial"), c))
            continue
        P = _params(ctx, c)
        try:
            tw = RD.twist_data(P, B, ctx.samples.base)
        except RD.ProjectionError as e:
            out.append(_entry(ctx, "reduction.twist", e.best_residual, c, str(e), ERROR))
            continue
        out.append(_entry(ctx, "reduction.twist", max(tw.residual, tw.lie_residual), c,
                          f"max |F| {float(np.max(np.abs(tw.F))):.3g}"))
        if model.name in ("flat", "hopf"):
            triv = max(float(np.max(np.abs(tw.F))), float(np.max(np.abs(tw.a - 1))))
            out.append(_entry(ctx, "reduction.twist_trivial", triv, c))
        else:
            out.append(_na(ctx, "reduction.twist_trivial", c, "nontrivial twist expected"))
    return out


RUNNERS = {"structure": run_structure, "swann": run_swann, "moment": run_moment,
           "reduction": run_reduction, "twist": run_twist}


def run_suites(model: ManifoldModel, c_values, suites, samples: int, seed: int, A: float = 1.0,
               tolerances=None) -> list:
    ctx = RunContext(model, draw_samples(model, samples, seed), A, dict(tolerances or {}), seed)
    if model.X is not None:
        t = structure_table(model, ctx.samples.base[:min(samples, 5)], seed)
        ctx.affine_residual = t["affine"]
        ctx.affine = t["affine"] <= ctx.tol("structure.affine")
    entries = []
    for s in SUITES:
        if s in suites:
            entries.extend(RUNNERS[s](ctx, c_values))
    return entries
