"""Acceptance criteria 1-10, one printed PASS/FAIL line per criterion."""
import re

import jax.numpy as jnp
import numpy as np
import pytest

from qhcorr import checks, cli
from qhcorr import lift_moment as LM
from qhcorr import reduction as RD
from qhcorr import swann as SW
from qhcorr.quat import rotation_from_quaternion, so3_exp

from conftest import bundle_points, philox

ALL_MODELS = ("flat", "hopf", "hp1", "hp2", "deformed_flat")


def report(capsys, n, ok, text):
    with capsys.disabled():
        print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {text}")
    assert ok, text


@pytest.fixture(scope="module")
def structure(model):
    """structure_table on 50 sample points per model."""
    return {name: checks.structure_table(model(name), checks.draw_samples(model(name), 50, 0).base)
            for name in ALL_MODELS}


def test_criterion_01_structure_gate(structure, capsys):
    worst = {name: max(t[k] for k in ("frame", "torsion", "nabla_q", "trace"))
             for name, t in structure.items()}
    report(capsys, 1, max(worst.values()) < 1e-8,
           "frame/torsion/nabla Q/trace identity max " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))


def test_criterion_02_curvature_consistency(structure, capsys):
    paths = max(t["omega_paths"] for t in structure.values())
    ricc = structure["deformed_flat"]["omega_ricci"]
    report(capsys, 2, paths < 1e-7 and ricc < 1e-6,
           f"omega trace vs b {paths:.2e} (50 pts x {len(structure)} models); "
           f"Omega-Ricci identity on deformed_flat {ricc:.2e}")


def test_criterion_03_integrability_grid(bundle, capsys):
    cells = []
    ok = True
    for name in ("flat", "deformed_flat", "hp1", "hp2"):
        B = bundle(name)
        pts = bundle_points(B.model, 2, seed=3)
        for c in (-4.0 * (B.n + 1), 1.0, -1.0):
            v = SW.classify_integrability(B, SW.StructureParams(c), pts)
            ok = ok and v.agrees and v.verdict != "inconclusive"
            cells.append(f"{name}@{c:g}:{v.verdict}({v.max_residual:.1e})")
    report(capsys, 3, ok, "; ".join(cells))


def test_criterion_04_connection_dependence(bundle, model, capsys):
    D = bundle("deformed_flat")
    F = SW.SwannBundle(D.model, nabla=model("flat").nabla)
    gen = philox(4)
    crit = closed = 0.0
    for p in bundle_points(D.model, 5, seed=4):
        diff, _ = SW.connection_difference(F, D, SW.StructureParams(-8.0), p, D.model.xi)
        V = gen.normal(size=(D.D, 20))
        crit = max(crit, float(np.max(np.abs(np.einsum("aij,jk->aik", diff, V)))))
        diff, exp = SW.connection_difference(F, D, SW.StructureParams(1.0), p, D.model.xi)
        closed = max(closed, float(np.max(np.abs(diff - exp))))
    report(capsys, 4, crit < 1e-8 and closed < 1e-7,
           f"c=-8 difference on 100 tangents {crit:.2e}; c=1 closed form {closed:.2e}")


def test_criterion_05_hopf_moment(bundle, capsys):
    B = bundle("hopf")
    pts = bundle_points(B.model, 10, seed=5)
    A = 1.7
    ident = equi = 0.0
    cr = expr = 0.0
    gen = philox(5)
    for c in (-8.0, 1.0, -1.0):
        P = SW.StructureParams(c, A)
        for p in pts:
            q = SW.BundlePoint(p.base, np.eye(3), p.log_r)
            want = A * np.exp(2 * p.log_r / c) * np.array([1.0, 0, 0])
            ident = max(ident, float(np.max(np.abs(LM.moment(P, B, q) - want))))
        pairs = [(p, rotation_from_quaternion(gen.normal(size=4))) for p in pts]
        equi = max(equi, LM.equivariance_residual(P, B, pairs))
        r = LM.moment_report(P, B, pts)
        cr = max(cr, r.cr, r.contraction)
        expr = max(expr, float(np.max(np.abs(r.expression - 4 * (B.n + 2)))))
    report(capsys, 5, ident < 1e-10 and equi < 1e-8 and cr < 1e-6 and expr < 1e-6,
           f"mu(x,id,r) {ident:.2e}; equivariance {equi:.2e}; CR {cr:.2e}; expression - 4(n+2) {expr:.2e}")


def test_criterion_06_dtheta_g(bundle, capsys):
    worst = fiber = 0.0
    for name in ALL_MODELS:
        B = bundle(name)
        pts = bundle_points(B.model, 3, seed=6)
        for c in (B.model.c_default, 1.0):
            r = LM.check_dtheta_eq_g(SW.StructureParams(c, 1.3), B, pts)
            worst = max(worst, r.max_residual)
            fv = r.fiber_values
            fiber = max(fiber, float(np.max(np.abs(fv["dtheta(Z0c,Za)"] - fv["2eps f"]))),
                        float(np.max(np.abs(fv["G(Z0c,Z0c)"] - fv["2eps f"]))),
                        float(np.max(np.abs(fv["dtheta(Zb,Zg)"] + fv["2eps f"]))))
    report(capsys, 6, worst < 1e-6 and fiber < 1e-6,
           f"dtheta - G(., I .) over canonical basis {worst:.2e}; fiber values +-2 eps A r^(2/c) {fiber:.2e}")


def _anchor(B, P, x):
    v = RD._section_seed(P, B, x)
    g = np.asarray(so3_exp(np.array([0.0, v[0], v[1]])))
    return RD.project_to_level_set(P, B, SW.BundlePoint(x, g, v[2]))


@pytest.fixture(scope="module")
def flat_reduction(bundle):
    B = bundle("flat")
    P = SW.StructureParams(1.0)
    out = []
    for x in B.model.sample(philox(7), 2):
        ch = RD.build_slice(P, B, _anchor(B, P, x))
        out.append((ch, RD.induced_structure(P, B, ch)))
    return B, out


def test_criterion_07_reduction(bundle, flat_reduction, capsys):
    rows = []
    ok = True
    B, items = flat_reduction
    hp = bundle("hp1")
    P = SW.StructureParams(1.0)
    ch = RD.build_slice(P, hp, _anchor(hp, P, hp.model.sample(philox(7), 1)[0]))
    items = [("flat", c, S) for c, S in items] + [("hp1", ch, RD.induced_structure(P, hp, ch))]
    for name, ch, S in items:
        tp = RD.check_theta_prime(S)
        r = dict(dim=abs(ch.basis.shape[1] - S.I.shape[1]), quat=RD.quaternionic_residual(S),
                 nij=RD.nijenhuis_residual(S), lz=max(tp.lie.values()), closed=tp.closedness)
        ok = ok and r["dim"] == 0 and r["quat"] < 1e-8 and r["nij"] < 1e-5 and r["lz"] < 1e-5 \
            and r["closed"] < 1e-6
        if name == "flat":
            ok = ok and tp.invariant_spread < 1e-6
            r["invariant"] = tp.invariant_spread
        rows.append(name + " " + " ".join(f"{k} {v:.1e}" for k, v in r.items()))
    report(capsys, 7, ok, "; ".join(rows) + " (positive-definiteness reported separately)")


@pytest.mark.xfail(strict=True, reason="Theta' vanishes identically on flat; positivity cannot hold")
def test_criterion_07_positive_definite_flat(flat_reduction, capsys):
    _, items = flat_reduction
    ev = min(RD.check_theta_prime(S).min_eigenvalue for _, S in items)
    theta = max(float(np.max(np.abs(S.Theta))) for _, S in items)
    report(capsys, 7, ev > 1e-8,
           f"flat c=1 Theta'(., I' .) positive-definite: min eigenvalue {ev:.2e}, max |Theta'| {theta:.2e}")


def test_criterion_08_hopf_covering(bundle, capsys):
    B = bundle("hopf")
    worst = 0.0
    for x in B.model.sample(philox(8), 10):
        worst = max(worst, RD.covering_residual(SW.StructureParams(1.0), B, x)["residual"])
    report(capsys, 8, worst < 1e-6, f"I' vs k-transported I at 10 base points {worst:.2e}")


def test_criterion_09_twist(bundle, capsys):
    rows = []
    ok = True
    for name in ("flat", "hopf", "hp1", "hp2"):
        B = bundle(name)
        xs = B.model.sample(philox(9), 3)
        for c in (B.model.c_default, 1.0):
            tw = RD.twist_data(SW.StructureParams(c), B, xs)
            res = max(tw.residual, tw.lie_residual)
            ok = ok and res < 1e-6
            row = f"{name}@{c:g} {res:.1e}"
            if name in ("flat", "hopf"):
                triv = max(float(np.max(np.abs(tw.F))), float(np.max(np.abs(tw.a - 1))))
                ok = ok and triv < 1e-9
                row += f" (F,a)-(0,1) {triv:.1e}"
            rows.append(row)
    report(capsys, 9, ok, "; ".join(rows) + "; deformed_flat excluded (X not affine)")


@pytest.mark.xfail(strict=True, reason="X is not affine on deformed_flat, so mu is not a moment map there")
def test_criterion_09_twist_deformed_flat(bundle, capsys):
    B = bundle("deformed_flat")
    tw = RD.twist_data(SW.StructureParams(1.0), B, B.model.sample(philox(9), 3))
    res = max(tw.residual, tw.lie_residual)
    report(capsys, 9, res < 1e-6, f"deformed_flat raw twist residual {res:.2e} (precondition not met)")


def test_criterion_10_determinism(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[model]\nname = "hopf"\n[run]\nsamples = 3\nseed = 17\n')
    texts = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        assert cli.main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
        texts.append(re.sub(r'\n\s*"timestamp": [^\n]*', "", out.read_text()))
    capsys.readouterr()
    report(capsys, 10, texts[0] == texts[1] and len(texts[0]) > 1000,
           f"two hopf runs with seed 17 byte-identical after timestamp strip ({len(texts[0])} bytes)")
