"""Built-in example manifolds with closed-form structures and flows."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .kernel import Chart, ChartPoint
from .quat import (QI, block_diag, hypercomplex_frame, left_matrix, qconj, qmul,
                   right_matrix)
from .quaternionic import (Connection, QuaternionicFrame, deform_connection, frame_residual,
                           is_q_hermitian, lie_derivative_frame_residual, nabla_q_residual,
                           ricci_split, torsion)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class DeckData:
    lam: float
    q: np.ndarray  # unit quaternion inside the e^{i theta} circle
    conjugator: np.ndarray  # p with q = p q_in p^{-1}
    q_input: np.ndarray

    @property
    def A(self) -> np.ndarray:
        return right_matrix(self.q)


@dataclass(frozen=True, eq=False)
class ManifoldModel:
    name: str
    n: int
    chart: Chart
    frame: QuaternionicFrame
    nabla: Connection
    X: Callable | None = None
    flow: Callable | None = None  # (x, t) -> (x_t, J_t)
    log_volume: Callable | None = None
    metric: Callable | None = None
    deck: DeckData | None = None
    xi: Callable | None = None
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 4 * self.n

    def point(self, x) -> ChartPoint:
        return ChartPoint(np.asarray(x, float), self.chart)

    def sample(self, rng: np.random.Generator, count: int, margin: float = 0.1) -> np.ndarray:
        lo, hi = self.chart.shrunk(margin)
        return lo + (hi - lo) * rng.random((count, self.dim))

    @cached_property
    def c_default(self) -> float:
        return -4.0 * (self.n + 1)

    def validate(self, points) -> dict:
        """Frame admissibility, torsion, ∇Q ⊂ Q and X quaternionic at the points."""
        out = {"frame": 0.0, "torsion": 0.0, "nabla_q": 0.0, "x_quaternionic": 0.0}
        for x in points:
            out["frame"] = max(out["frame"], frame_residual(self.frame(jnp.asarray(x))))
            out["torsion"] = max(out["torsion"], torsion(self.nabla, x))
            out["nabla_q"] = max(out["nabla_q"], nabla_q_residual(self.nabla, self.frame, x))
            if self.X is not None:
                out["x_quaternionic"] = max(out["x_quaternionic"],
                                            lie_derivative_frame_residual(self.X, self.frame, x))
        return out


def _flat_christoffel(m):
    def christoffel(x):
        return jnp.zeros((m, m, m), dtype=x.dtype)
    return christoffel


def _constant_frame(I):
    I = jnp.asarray(I)

    def frame(x):
        return I + 0.0 * jnp.sum(x)
    return QuaternionicFrame(frame)


def _right_i_flow(n):
    Ri = block_diag(right_matrix(QI), n)

    def flow(x, t):
        J = np.cos(t) * np.eye(4 * n) + np.sin(t) * Ri
        return J @ np.asarray(x), J
    return flow


def flat_hn(n: int = 1) -> ManifoldModel:
    """Flat H^n minus the origin with (R_i, R_j, -R_k) and X_z = z i."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    m = 4 * n
    I = hypercomplex_frame(n)
    Ri = jnp.asarray(block_diag(right_matrix(QI), n))
    return ManifoldModel(
        name="flat", n=n,
        chart=Chart(tuple([0.1] * m), tuple([1.1] * m), f"flat_h{n}"),
        frame=_constant_frame(I),
        nabla=Connection(_flat_christoffel(m), True, "flat"),
        X=lambda x: Ri @ x,
        flow=_right_i_flow(n),
        log_volume=lambda x: 0.0 * jnp.sum(x),
        params={"n": n},
    )


def _circle_conjugator(q):
    """Unit p with p q p^{-1} in span{1, i}."""
    q = np.asarray(q, float)
    u = q[1:]
    s = np.linalg.norm(u)
    if s < 1e-14:
        raise ParameterError("q must not be real")
    u = u / s
    target = np.array([1.0, 0.0, 0.0])
    axis = np.cross(u, target)
    sa = np.linalg.norm(axis)
    cos_t = float(np.dot(u, target))
    if sa < 1e-14:
        p = np.array([1.0, 0, 0, 0]) if cos_t > 0 else np.array([0.0, 0, 1.0, 0])
    else:
        ang = np.arctan2(sa, cos_t)
        axis = axis / sa
        p = np.concatenate([[np.cos(ang / 2)], np.sin(ang / 2) * axis])
    return p


def hopf(n: int = 1, lam: float = 2.0, q=(np.cos(0.3), np.sin(0.3), 0.0, 0.0)) -> ManifoldModel:
    """Quaternionic Hopf manifold (H^n - 0)/<lam R_q>, computed on the cover."""
    q_in = np.asarray(q, float)
    if lam <= 1:
        raise ParameterError("lambda must exceed 1")
    if abs(np.linalg.norm(q_in) - 1) > 1e-12:
        raise ParameterError("q must be a unit quaternion")
    if np.allclose(np.abs(q_in[0]), 1.0):
        raise ParameterError("q must differ from +-1")
    p = _circle_conjugator(q_in)
    q_c = np.asarray(qmul(qmul(p, q_in), qconj(p)))
    base = flat_hn(n)
    return ManifoldModel(
        name="hopf", n=n, chart=Chart(base.chart.lower, base.chart.upper, f"hopf_h{n}"),
        frame=base.frame, nabla=base.nabla, X=base.X, flow=base.flow,
        log_volume=base.log_volume,
        deck=DeckData(float(lam), q_c, p, q_in),
        params={"n": n, "lambda": float(lam), "q": [float(v) for v in q_in]},
    )


def deck_map(model: ManifoldModel, x):
    d = model.deck
    A = block_diag(d.A, model.n)
    return d.lam * A @ np.asarray(x)


def deck_tv(model: ManifoldModel, x):
    """(t, v) coordinates: t = log|x| / log lambda, v = x / |x|."""
    x = np.asarray(x, float)
    r = np.linalg.norm(x)
    return np.log(r) / np.log(model.deck.lam), x / r


def _hp_metric(n):
    def metric(w):
        m = 4 * n
        W = []
        for k in range(n):
            wk = w[4 * k:4 * k + 4]
            wc = qconj(wk)
            # matrix of v -> conj(w_k) v
            L = jnp.stack([qmul(wc, e) for e in jnp.eye(4)], axis=1)
            W.append(L)
        W = jnp.concatenate(W, axis=1)  # 4 x m
        s = 1 + jnp.dot(w, w)
        return (s * jnp.eye(m) - W.T @ W) / s ** 2
    return metric


def levi_civita(metric: Callable) -> Callable:
    def christoffel(x):
        g = metric(x)
        dg = jax.jacfwd(metric)(x)  # dg[a, b, c] = ∂c g_ab
        ginv = jnp.linalg.inv(g)
        # Γ[i, k, j] = 1/2 g^{il} (∂k g_lj + ∂j g_lk - ∂l g_kj)
        t = (jnp.einsum("ljk->lkj", dg) + jnp.einsum("lkj->lkj", dg)
             - jnp.einsum("kjl->lkj", dg))
        return 0.5 * jnp.einsum("il,lkj->ikj", ginv, t)
    return christoffel


def hpn(n: int = 1) -> ManifoldModel:
    """HP^n in the affine chart [1 : w] with its symmetric quaternionic-Kähler metric."""
    if not 1 <= n <= 2:
        raise ParameterError("HP^n supported for 1 <= n <= 2")
    m = 4 * n
    metric = _hp_metric(n)
    Li = jnp.asarray(block_diag(left_matrix(QI), n))
    Ri = jnp.asarray(block_diag(right_matrix(QI), n))

    def X(w):
        return (Li - Ri) @ w

    def flow(x, t):
        e = np.array([np.cos(t), np.sin(t), 0, 0])
        J = block_diag(left_matrix(e) @ right_matrix(np.asarray(qconj(e))), n)
        return J @ np.asarray(x), J

    def log_volume(w):
        return 0.5 * jnp.linalg.slogdet(metric(w))[1]

    return ManifoldModel(
        name=f"hp{n}", n=n,
        chart=Chart(tuple([0.1] * m), tuple([0.9] * m), f"hp{n}_affine"),
        frame=_constant_frame(hypercomplex_frame(n)),
        nabla=Connection(levi_civita(metric), True, "levi-civita"),
        X=X, flow=flow, log_volume=log_volume, metric=metric,
        params={"n": n},
    )


def default_xi(n):
    """xi = x^1 dx^2."""
    m = 4 * n

    def xi(x):
        return jnp.zeros(m, dtype=x.dtype).at[2].set(x[1])
    return xi


def deformed_flat(n: int = 1, xi: Callable | None = None,
                  require_obstruction: bool = True) -> ManifoldModel:
    """Flat H^n with nabla = flat + S^xi (default xi = x^1 dx^2).

    With ``require_obstruction`` the builder rejects xi whose Ric^a is
    Q-hermitian at a probe point.
    """
    base = flat_hn(n)
    label = "x1 dx2" if xi is None else "custom"
    xi = default_xi(n) if xi is None else xi
    nabla = deform_connection(base.nabla, xi, base.frame)
    model = ManifoldModel(
        name="deformed_flat", n=n,
        chart=Chart(base.chart.lower, base.chart.upper, f"deformed_h{n}"),
        frame=base.frame, nabla=nabla, X=base.X, flow=base.flow,
        log_volume=base.log_volume, xi=xi, params={"n": n, "xi": label},
    )
    if require_obstruction:
        probe = jnp.asarray(0.6 + 0.05 * np.arange(4 * n))
        ra = ricci_split(nabla, model.frame, probe).antisymmetric
        if is_q_hermitian(ra, model.frame(probe), 1e-6)[0]:
            raise ParameterError("xi gives a Q-hermitian Ric^a; choose another xi")
    return model


BUILDERS = {
    "flat": flat_hn,
    "hopf": hopf,
    "hp": hpn,
    "deformed_flat": deformed_flat,
}


def build(name: str, **kw) -> ManifoldModel:
    if name in ("hp1", "hp2"):
        return hpn(int(name[-1]))
    if name not in BUILDERS:
        raise ParameterError(f"unknown model {name!r}")
    return BUILDERS[name](**kw)
