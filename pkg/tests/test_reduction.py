import jax.numpy as jnp
import numpy as np
import pytest

from qhcorr import lift_moment as LM
from qhcorr import reduction as RD
from qhcorr import swann as SW
from qhcorr.quat import rotation_about, so3_exp

from conftest import philox

P1 = SW.StructureParams(1.0)
X0 = np.array([0.3, 0.5, 0.7, 0.4])


def anchor(B, P, x=X0):
    v = RD._section_seed(P, B, x)
    g = np.asarray(so3_exp(np.array([0.0, v[0], v[1]])))
    return RD.project_to_level_set(P, B, SW.BundlePoint(x, g, v[2]))


def test_projection_already_on_level_set(bundle):
    B = bundle("hopf")
    A, c = 2.0, 1.0
    P = SW.StructureParams(c, A)
    # mu(x, id, r) = A r^(2/c) e_1 on hopf
    lp = RD.project_to_level_set(P, B, SW.BundlePoint(X0, np.eye(3), -c / 2 * np.log(A)))
    assert lp.iterations == 0 and lp.residual < 1e-12


def test_rotation_about_e1_stays_on_level_set(bundle):
    B = bundle("hopf")
    p = SW.BundlePoint(X0, rotation_about(0, 1.1), 0.0)
    assert np.allclose(LM.moment(P1, B, p), [1, 0, 0], atol=1e-12)


@pytest.mark.parametrize("name", ["flat", "hp1"])
def test_projection_from_perturbed_start(name, bundle):
    B = bundle(name)
    gen = philox(9)
    x = B.model.sample(gen, 1)[0]
    a = anchor(B, P1, x).bundle_point
    g = a.g @ np.asarray(so3_exp(1e-2 * gen.normal(size=3)))
    lp = RD.project_to_level_set(P1, B, SW.BundlePoint(a.base, g, a.log_r + 1e-2))
    assert lp.residual < 1e-12 and lp.iterations <= 6


def test_projection_error_carries_best_residual(bundle):
    B = bundle("flat")
    with pytest.raises(RD.ProjectionError) as e:
        RD.project_to_level_set(P1, B, SW.BundlePoint(X0, np.eye(3), 3.0), max_iter=0)
    assert e.value.best_residual > 1


@pytest.mark.parametrize("c", [1.0, -8.0])
def test_single_circle(bundle, c):
    B = bundle("hopf")
    gen = philox(3)
    from qhcorr.quat import rotation_from_quaternion

    seeds = [(rotation_from_quaternion(gen.normal(size=4)), gen.uniform(-0.5, 0.5)) for _ in range(4)]
    assert RD.single_circle_residual(SW.StructureParams(c), B, X0, seeds) < 1e-9


@pytest.fixture(scope="module")
def hp1_structure(bundle):
    B = bundle("hp1")
    ch = RD.build_slice(P1, B, anchor(B, P1))
    return B, ch, RD.induced_structure(P1, B, ch)


def test_slice_dimension_and_annihilation(hp1_structure):
    B, ch, _ = hp1_structure
    assert ch.basis.shape == (B.D, B.m)
    assert ch.span_rank == B.m + 1
    assert ch.constraint_residual < 1e-10
    assert np.allclose(ch.basis.T @ ch.basis, np.eye(B.m), atol=1e-12)


def test_slice_points_on_level_set(hp1_structure):
    B, ch, _ = hp1_structure
    lp = ch.identification(B, 1e-2 * np.ones(B.m))
    assert lp.residual < 1e-12


def test_quotient_structure(hp1_structure):
    _, _, S = hp1_structure
    assert RD.quaternionic_residual(S) < 1e-9
    assert RD.nijenhuis_residual(S) < 1e-5
    assert max(RD.lie_z_residuals(S).values()) < 1e-5
    assert RD.closedness_residual(S) < 1e-5


def test_theta_prime_invariant_forms(hp1_structure):
    _, _, S = hp1_structure
    tp = RD.check_theta_prime(S)
    assert tp.invariant_spread < 1e-6 and tp.invariant_symmetric < 1e-6


def test_theta_prime_vanishes_on_flat(bundle):
    """Theta' is identically zero on flat; positivity cannot hold there."""
    B = bundle("flat")
    S = RD.induced_structure(P1, B, RD.build_slice(P1, B, anchor(B, P1)))
    assert np.max(np.abs(S.Theta)) < 1e-10
    assert not RD.check_theta_prime(S).positive_definite


@pytest.mark.parametrize("name", ["flat", "hopf"])
def test_covering(name, bundle):
    r = RD.covering_residual(P1, bundle(name), X0)
    assert r["residual"] < 1e-8 and r["slice_dim"] == 4 and r["iterations"] == 0


def test_degenerate_slice_when_lift_vanishes(bundle):
    import dataclasses

    flat = bundle("flat").model
    zero = dataclasses.replace(flat, X=lambda x: 0.0 * x, flow=None)
    B = SW.SwannBundle(zero)
    p = SW.BundlePoint(X0, np.eye(3), 0.0)
    with pytest.raises(RD.DegenerateSliceError):
        RD.build_slice(P1, B, RD.LevelSetPoint(p, 0.0))


@pytest.mark.parametrize("name", ["flat", "hopf"])
def test_twist_trivial(name, bundle):
    B = bundle(name)
    tw = RD.twist_data(P1, B, B.model.sample(philox(2), 3))
    assert np.max(np.abs(tw.F)) < 1e-10 and np.allclose(tw.a, 1, atol=1e-10)
    assert tw.section_residual < 1e-12


@pytest.mark.parametrize("c", [1.0, -8.0])
def test_twist_hp1(bundle, c):
    B = bundle("hp1")
    tw = RD.twist_data(SW.StructureParams(c), B, B.model.sample(philox(2), 3))
    assert np.max(np.abs(tw.F)) > 1e-2
    assert tw.residual < 1e-6 and tw.lie_residual < 1e-6
    # F is a 2-form
    assert np.allclose(tw.F, -np.transpose(tw.F, (0, 2, 1)), atol=1e-12)


def test_section_guess_is_exact_for_equivariant_moment():
    mu0 = np.array([0.3, -0.4, 1.2])
    c = -2.0
    a2, a3, u = RD._section_guess(mu0, c)
    g = np.asarray(so3_exp(np.array([0.0, a2, a3])))
    assert np.allclose(np.exp(2 * u / c) * g.T @ mu0, [1, 0, 0], atol=1e-12)


def test_level_set_moment_of_anchor(bundle):
    B = bundle("hp1")
    a = anchor(B, SW.StructureParams(-8.0))
    mu = LM.moment(SW.StructureParams(-8.0), B, a.bundle_point)
    assert np.allclose(mu, [1, 0, 0], atol=1e-12)
    assert jnp.isfinite(a.bundle_point.log_r)
