import jax.numpy as jnp
import numpy as np
import pytest

from qhcorr import kernel as K
from qhcorr.kernel import FD, Chart, ChartPoint


def test_differentiate_polynomial():
    f = lambda x: x[1] ** 2  # noqa: E731
    assert float(K.differentiate(f, jnp.array([0.0, 3.0, 1.0]), 1)) == pytest.approx(6.0)


def test_differentiate_constant_is_zero():
    f = lambda x: 0.0 * x[0] + 4.2  # noqa: E731
    for k in range(3):
        assert float(K.differentiate(f, jnp.array([0.3, -1.0, 2.0]), k)) == 0.0


def test_forward_and_fd_agree():
    f = lambda x: jnp.sin(x[0] * x[1])  # noqa: E731
    p = jnp.array([0.5, 0.7])
    for k in range(2):
        ad = float(K.differentiate(f, p, k))
        fd = float(K.differentiate(f, p, k, FD))
        assert abs(ad - fd) < 1e-9
    # hand value: d/dx0 sin(x0 x1) = x1 cos(x0 x1)
    assert float(K.differentiate(f, p, 0)) == pytest.approx(0.7 * np.cos(0.35), abs=1e-14)


def test_coordinate_fields_commute():
    e0 = lambda x: jnp.array([1.0, 0.0]) + 0 * x  # noqa: E731
    e1 = lambda x: jnp.array([0.0, 1.0]) + 0 * x  # noqa: E731
    assert np.allclose(K.lie_bracket(e0, e1, jnp.array([0.2, 0.4])), 0)


def test_bracket_hand_oracle():
    X = lambda x: jnp.array([x[1], 0.0])  # noqa: E731
    Y = lambda x: jnp.array([0.0, x[0]])  # noqa: E731
    p = jnp.array([1.0, 1.0])
    # [x2 d1, x1 d2] = x2 d2 - x1 d1
    assert np.allclose(K.lie_bracket(X, Y, p), [-1.0, 1.0], atol=1e-14)
    assert np.allclose(K.lie_bracket(X, Y, p, FD), [-1.0, 1.0], atol=1e-8)


def test_d_squared_zero_on_exact_form():
    df = lambda x: jnp.array([2 * x[0] * x[1], x[0] ** 2 + jnp.cos(x[1])])  # d(x0^2 x1 + sin x1)
    u, v = np.array([0.3, -1.2]), np.array([0.8, 0.5])
    assert abs(float(K.exterior_derivative(df, jnp.array([0.4, 0.9]), [u, v]))) < 1e-8


def test_exterior_derivative_textbook():
    w = lambda x: jnp.array([0.0, x[0]])  # x1 dx2  # noqa: E731
    val = K.exterior_derivative(w, jnp.array([0.5, 0.5]), [np.array([1.0, 0]), np.array([0, 1.0])])
    assert float(val) == pytest.approx(1.0)


def test_exterior_derivative_needs_k_plus_one_vectors():
    w = lambda x: x  # noqa: E731
    with pytest.raises(ValueError):
        K.exterior_derivative(w, jnp.zeros(2), [np.ones(2)])


def test_flow_of_zero_field():
    X = lambda x: 0.0 * x  # noqa: E731
    r = K.flow(X, np.array([0.3, 0.2]), 0.7)
    assert np.allclose(r.point, [0.3, 0.2]) and np.allclose(r.jacobian, np.eye(2))


def test_flow_rotation():
    X = lambda x: jnp.array([-x[1], x[0]])  # noqa: E731
    r = K.flow(X, np.array([1.0, 0.0]), np.pi / 2)
    assert np.allclose(r.point, [0.0, 1.0], atol=1e-8)
    assert np.allclose(r.jacobian, [[0, -1], [1, 0]], atol=1e-8)


def test_flow_escape_reports_time():
    X = lambda x: jnp.ones_like(x)  # noqa: E731
    chart = Chart((0.0,), (1.0,))
    with pytest.raises(K.FlowEscapeError) as e:
        K.flow(X, np.array([0.5]), 2.0, chart=chart, step=1e-2)
    assert 0.4 < e.value.exit_time < 0.6


def test_lie_derivative_constant_tensor_translation():
    T = lambda x: jnp.array([[1.0, 2.0], [3.0, 4.0]]) + 0 * x[0]  # noqa: E731
    X = lambda x: jnp.array([1.0, -2.0]) + 0 * x  # noqa: E731
    for val in [(1, 1), (0, 2), (2, 0)]:
        assert np.allclose(K.lie_derivative_tensor(X, T, jnp.array([0.1, 0.2]), val), 0)


def test_lie_derivative_connection_flat_rotation():
    m = 4
    G = lambda x: jnp.zeros((m, m, m)) + 0 * x[0]  # noqa: E731
    A = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], float)
    X = lambda x: jnp.asarray(A) @ x  # noqa: E731
    L = K.lie_derivative_tensor(X, G, jnp.array([0.3, 0.4, 0.5, 0.6]), "connection")
    assert float(jnp.max(jnp.abs(L))) < 1e-7
    # nested central differences: roundoff floor near 1e-7
    L_fd = K.lie_derivative_tensor(X, G, jnp.array([0.3, 0.4, 0.5, 0.6]), "connection", FD)
    assert float(jnp.max(jnp.abs(L_fd))) < 1e-6


def test_lie_derivative_valence_mismatch():
    T = lambda x: x  # noqa: E731
    with pytest.raises(K.CapabilityError):
        K.lie_derivative_tensor(T, T, jnp.ones(2), (1, 1))


def test_chart_point_domain():
    ch = Chart((0.0, 0.0), (1.0, 1.0), "box")
    ChartPoint([0.5, 0.5], ch)
    with pytest.raises(K.DomainError):
        ChartPoint([1.5, 0.5], ch)


def test_engine_mode_validated():
    with pytest.raises(ValueError):
        K.DerivativeEngine(mode="reverse")
