import json

import jax.numpy as jnp
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qhcorr import cli
from qhcorr import quaternionic as Q
from qhcorr.kernel import lie_bracket
from qhcorr.quat import hypercomplex_frame, qmul, right_matrix, rotation_from_quaternion, so3_exp, so3_log

finite = st.floats(-1.0, 1.0, allow_nan=False)
vec = lambda n: arrays(np.float64, n, elements=finite)  # noqa: E731
settings.register_profile("qhcorr", max_examples=40, deadline=None)
settings.load_profile("qhcorr")


@given(vec(3))
def test_so3_exp_log_roundtrip(a):
    a = 0.7 * a  # |2a| < pi keeps the log on its principal branch
    R = np.asarray(so3_exp(a))
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12) and np.linalg.det(R) > 0
    assert np.allclose(so3_log(R), a, atol=1e-10)


@given(vec(4).filter(lambda q: np.linalg.norm(q) > 1e-3))
def test_rotation_from_quaternion_is_rotation(q):
    R = rotation_from_quaternion(q)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1) < 1e-12


@given(vec(4), vec(4))
def test_right_matrix_is_antihomomorphism(p, q):
    assert np.allclose(right_matrix(p) @ right_matrix(q), right_matrix(np.asarray(qmul(q, p))), atol=1e-12)


@given(vec(8), vec(8))
def test_s_xi_trace_identity(xi, X):
    """Tr S^xi_X = 4(n+1) xi(X) with n = 2."""
    I = jnp.asarray(hypercomplex_frame(2))
    S = Q.s_xi_tensor(jnp.asarray(xi), I)
    tr = float(jnp.einsum("iki,k->", S, jnp.asarray(X)))
    assert abs(tr - 12 * float(xi @ X)) < 1e-10


@given(vec(4), vec(4), vec(4))
def test_s_xi_symmetric(xi, X, Y):
    I = jnp.asarray(hypercomplex_frame(1))
    a = Q.s_xi(jnp.asarray(xi), jnp.asarray(X), jnp.asarray(Y), I)
    b = Q.s_xi(jnp.asarray(xi), jnp.asarray(Y), jnp.asarray(X), I)
    assert np.allclose(a, b, atol=1e-12)


@given(arrays(np.float64, (2, 3, 3), elements=finite), vec(3))
def test_bracket_antisymmetric(M, p):
    A, B = jnp.asarray(M[0]), jnp.asarray(M[1])
    X = lambda x: A @ jnp.sin(x)  # noqa: E731
    Y = lambda x: B @ (x * x)  # noqa: E731
    assert np.allclose(lie_bracket(X, Y, p), -np.asarray(lie_bracket(Y, X, p)), atol=1e-12)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_dump_float_roundtrip(x):
    assert json.loads(cli._dump({"v": x}))["v"] == x
