import jax.numpy as jnp
import numpy as np
import pytest

from qhcorr import lift_moment as LM
from qhcorr import swann as SW
from qhcorr.quat import EPS, rotation_about

from conftest import bundle_points

P1 = SW.StructureParams(1.0)


def test_translation_lift_is_horizontal(bundle):
    """On flat with a translation field, X_hat has no vertical part."""
    import dataclasses

    B0 = bundle("flat")
    tr = dataclasses.replace(B0.model, X=lambda x: jnp.array([0.0, 1.0, 0.0, 0.0]) + 0 * x, flow=None)
    B = SW.SwannBundle(tr)
    p = SW.BundlePoint(np.full(4, 0.5), rotation_about(0, 0.4), 0.1)
    v = LM.natural_lift_raw(B, P1, p)
    assert np.allclose(v[:4], [0, 1, 0, 0]) and np.allclose(v[4:], 0, atol=1e-12)


def test_flat_lift_at_identity(bundle):
    """X_hat = X^h + Z_1 at g = id for the flat rotation field."""
    B = bundle("flat")
    x = np.array([0.3, 0.5, 0.7, 0.4])
    p = SW.BundlePoint(x, np.eye(3), 0.0)
    v = LM.natural_lift(B, P1, p)
    assert np.allclose(v.horizontal, np.asarray(B.X(jnp.asarray(x))), atol=1e-12)
    assert np.allclose(v.vertical_so3, [1, 0, 0], atol=1e-12) and abs(v.vertical_scale) < 1e-12


def test_flat_lift_rotated_fiber(bundle):
    """At g the vertical part is Ad(g^-1) e_1."""
    B = bundle("flat")
    g = rotation_about(2, 0.9)
    p = SW.BundlePoint(np.array([0.3, 0.5, 0.7, 0.4]), g, 0.0)
    v = LM.natural_lift(B, P1, p)
    assert np.allclose(v.vertical_so3, g.T @ np.array([1.0, 0, 0]), atol=1e-12)


@pytest.mark.parametrize("name", ["flat", "hopf", "hp1"])
def test_lift_closed_form_vs_flow(name, bundle):
    B = bundle(name)
    for p in bundle_points(B.model, 3, seed=5):
        a = LM.natural_lift_raw(B, P1, p)
        b = LM.natural_lift_raw(B, P1, p, "flow-jacobian")
        assert np.max(np.abs(a - b)) < 1e-6


def test_lift_mode_validated(bundle):
    B = bundle("flat")
    with pytest.raises(ValueError):
        LM.natural_lift_raw(B, P1, bundle_points(B.model, 1)[0], "euler")


def test_lift_needs_quaternionic_field(bundle):
    B = bundle("deformed_flat")
    import dataclasses

    bad = dataclasses.replace(B.model, X=lambda x: jnp.array([x[1] ** 2, 0.0, 0.0, 0.0]), flow=None)
    Bb = SW.SwannBundle(bad)
    with pytest.raises(LM.PreconditionError):
        LM.natural_lift(Bb, P1, SW.BundlePoint(np.full(4, 0.5), np.eye(3), 0.0))


def test_theta_hat_values(bundle):
    B = bundle("flat")
    P = SW.StructureParams(2.0, 3.0)
    p = SW.BundlePoint(np.full(4, 0.5), np.eye(3), 0.4)
    f = 3.0 * np.exp(2 * 0.4 / 2.0)
    for a in range(3):
        v = SW.TangentHat.from_array(np.eye(B.D)[B.m + a])
        assert LM.theta_hat(a + 1, P, B, p, v) == pytest.approx(f)
        assert LM.theta_hat((a + 1) % 3 + 1, P, B, p, v) == 0.0
    assert LM.theta_hat(1, P, B, p, SW.TangentHat.from_array(np.eye(B.D)[0])) == 0.0


@pytest.mark.parametrize("c", [1.0, -8.0])
def test_g_form_fiber_values(bundle, c):
    """G_a(Z0^c, Z0^c) = 2 eps f and G_a(Z_a, Z_a) = 2 eps f on the fiber."""
    B = bundle("hp1")
    P = SW.StructureParams(c, 1.5)
    p = bundle_points(B.model, 1)[0]
    f = P.A * np.exp(2 * p.log_r / c)
    e = np.eye(B.D)
    z0 = SW.TangentHat.from_array(e[B.m + 3])
    for a in range(3):
        za = SW.TangentHat.from_array(e[B.m + a])
        assert LM.g_form(a + 1, P, B, p, z0, z0) == pytest.approx(2 * EPS * f, rel=1e-12)
        assert LM.g_form(a + 1, P, B, p, za, za) == pytest.approx(2 * EPS * f, rel=1e-12)
        assert abs(LM.g_form(a + 1, P, B, p, z0, za)) < 1e-12


@pytest.mark.parametrize("name", ["flat", "hp1", "deformed_flat"])
def test_dtheta_equals_g(name, bundle):
    B = bundle(name)
    for c in (1.0, -8.0):
        P = SW.StructureParams(c)
        r = LM.check_dtheta_eq_g(P, B, bundle_points(B.model, 3))
        assert r.max_residual < 1e-10
        fv = r.fiber_values
        assert np.allclose(fv["dtheta(Z0c,Za)"], fv["2eps f"], rtol=1e-12)
        # Maurer-Cartan: dtheta_a(Z_b, Z_c) = -theta_a([Z_b, Z_c])
        assert np.allclose(fv["dtheta(Zb,Zg)"], -fv["2eps f"], rtol=1e-12)


def test_moment_at_identity(bundle):
    B = bundle("flat")
    P = SW.StructureParams(2.0, 1.7)
    x = np.array([0.3, 0.5, 0.7, 0.4])
    r = 1.3
    mu = LM.moment(P, B, SW.BundlePoint(x, np.eye(3), np.log(r)))
    assert np.allclose(mu, [1.7 * r ** (2 / 2.0), 0, 0], rtol=1e-12)


@pytest.mark.parametrize("c", [1.0, -1.0])
def test_moment_rotated_quarter_turn(bundle, c):
    B = bundle("flat")
    P = SW.StructureParams(c)
    g = rotation_about(2, np.pi / 2)
    mu = LM.moment(P, B, SW.BundlePoint(np.array([0.3, 0.5, 0.7, 0.4]), g, 0.0))
    assert np.allclose(mu, [0, -1, 0], atol=1e-12)


def test_moment_unit_norm_radius(bundle):
    B = bundle("hopf")
    A, c = 2.5, -3.0
    P = SW.StructureParams(c, A)
    p = SW.BundlePoint(np.array([0.3, 0.5, 0.7, 0.4]), np.eye(3), -c / 2 * np.log(A))
    assert np.linalg.norm(LM.moment(P, B, p)) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("name", ["flat", "hopf", "hp1"])
def test_moment_equivariance(name, bundle, rng):
    B = bundle(name)
    pts = bundle_points(B.model, 5)
    pairs = [(p, rotation_about(k % 3, rng.uniform(0, 6))) for k, p in enumerate(pts)]
    assert LM.equivariance_residual(P1, B, pairs) < 1e-12


@pytest.mark.parametrize("name,tol", [("flat", 1e-8), ("hopf", 1e-6), ("hp1", 1e-6)])
def test_cr_condition(name, tol, bundle):
    B = bundle(name)
    r = LM.check_cr(SW.StructureParams(-2.0), B, bundle_points(B.model, 5))
    assert r["cr"] < tol and r["contraction"] < tol and not r["consistent_obstruction"]


@pytest.mark.parametrize("name", ["flat", "hopf"])
def test_transversality_expression_flat_models(name, bundle):
    """Ric = 0 and theta(X) = 1 leave the expression at 4(n+2)."""
    B = bundle(name)
    r = LM.moment_report(P1, B, bundle_points(B.model, 5))
    assert np.allclose(r.expression, 12.0, atol=1e-10)
    assert r.transversality > 1e-3


def test_transversality_degenerates_for_horizontal_field(bundle):
    import dataclasses

    B0 = bundle("flat")
    tr = dataclasses.replace(B0.model, X=lambda x: jnp.array([0.0, 1.0, 0.0, 0.0]) + 0 * x, flow=None)
    B = SW.SwannBundle(tr)
    assert LM.check_transversality(P1, B, bundle_points(tr, 3)) < 1e-12


def test_omega_contraction(bundle):
    assert LM.omega_contraction_identity(P1, bundle("flat"), bundle_points(bundle("flat").model, 3)) < 1e-12
    B = bundle("hp1")
    pts = bundle_points(B.model, 3)
    r = LM.moment_report(P1, B, pts)
    assert max(r.omega_identity, r.omega_alpha_spread) < 1e-8
    x = jnp.asarray(pts[0].base)
    X = np.asarray(B.X(x))
    assert X @ B.ricci_at(x) @ X > 1e-3


@pytest.mark.parametrize("name", ["flat", "hopf", "hp1"])
def test_lie_identities(name, bundle):
    B = bundle(name)
    out = LM.lie_report(SW.StructureParams(-3.0), B, bundle_points(B.model, 3))
    assert max(out.values()) < 1e-8
