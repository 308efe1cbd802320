"""Chart-based tensor calculus.

Fields are plain callables ``x -> array`` written with ``jax.numpy`` so they
can be differentiated in forward mode.  Every differentiation routine also
accepts a central-finite-difference engine, which is kept as an independent
oracle for the algorithmic one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

Field = Callable[[jnp.ndarray], jnp.ndarray]


class DomainError(ValueError):
    """Point outside the chart box."""


class FlowEscapeError(RuntimeError):
    def __init__(self, exit_time: float):
        super().__init__(f"trajectory left the chart at t = {exit_time:.6g}")
        self.exit_time = exit_time


class CapabilityError(ValueError):
    """Unsupported tensor valence."""


@dataclass(frozen=True)
class Chart:
    lower: tuple
    upper: tuple
    chart_id: str = "chart"

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > np.asarray(self.lower)) and np.all(x < np.asarray(self.upper)))

    def shrunk(self, margin: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        pad = margin * (hi - lo) / 2
        return lo + pad, hi - pad


@dataclass(frozen=True)
class ChartPoint:
    coords: np.ndarray
    chart: Chart | None = None

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", c)
        if self.chart is not None:
            if c.shape != (self.chart.dim,):
                raise ValueError("coordinate length does not match chart dimension")
            if not self.chart.contains(c):
                raise DomainError(f"{c} is outside chart {self.chart.chart_id}")

    @property
    def chart_id(self) -> str:
        return self.chart.chart_id if self.chart else "chart"


@dataclass(frozen=True)
class TensorField:
    valence: tuple[int, int]
    evaluator: Field
    dim: int

    def __call__(self, x):
        out = self.evaluator(x)
        want = (self.dim,) * sum(self.valence)
        if jnp.shape(out) != want:
            raise ValueError(f"field output shape {jnp.shape(out)} != {want}")
        return out


@dataclass(frozen=True)
class DerivativeEngine:
    mode: str = "forward"  # or "fd"
    fd_step: float = 1e-5
    ode_tolerance: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("forward", "fd"):
            raise ValueError(f"unknown derivative mode {self.mode!r}")


FORWARD = DerivativeEngine()
FD = DerivativeEngine(mode="fd")


def _coords(point) -> jnp.ndarray:
    if isinstance(point, ChartPoint):
        return jnp.asarray(point.coords)
    return jnp.asarray(point, dtype=float)


def jacobian(f: Field, point, engine: DerivativeEngine = FORWARD):
    """Full derivative; the last axis is the differentiation direction."""
    x = _coords(point)
    if engine.mode == "forward":
        return jax.jacfwd(f)(x)
    h = engine.fd_step
    cols = []
    for k in range(x.shape[0]):
        e = jnp.zeros_like(x).at[k].set(h)
        cols.append((jnp.asarray(f(x + e)) - jnp.asarray(f(x - e))) / (2 * h))
    return jnp.stack(cols, axis=-1)


def differentiate(f: Field, point, direction: int, engine: DerivativeEngine = FORWARD):
    x = _coords(point)
    e = jnp.zeros_like(x).at[direction].set(1.0)
    if engine.mode == "forward":
        return jax.jvp(f, (x,), (e,))[1]
    h = engine.fd_step
    return (jnp.asarray(f(x + h * e)) - jnp.asarray(f(x - h * e))) / (2 * h)


def directional(f: Field, point, v, engine: DerivativeEngine = FORWARD):
    x = _coords(point)
    v = jnp.asarray(v, dtype=float)
    if engine.mode == "forward":
        return jax.jvp(f, (x,), (v,))[1]
    h = engine.fd_step
    return (jnp.asarray(f(x + h * v)) - jnp.asarray(f(x - h * v))) / (2 * h)


def lie_bracket(X: Field, Y: Field, point, engine: DerivativeEngine = FORWARD):
    """[X, Y] = DY.X - DX.Y at the point."""
    x = _coords(point)
    xv, yv = jnp.asarray(X(x)), jnp.asarray(Y(x))
    if xv.shape != yv.shape or xv.shape != x.shape:
        raise ValueError("vector field dimension mismatch")
    return directional(Y, x, xv, engine) - directional(X, x, yv, engine)


def exterior_derivative(form: Field, point, vectors, engine: DerivativeEngine = FORWARD):
    """dω(v0, ..., vk) for a k-form given by its component array."""
    x = _coords(point)
    vs = [jnp.asarray(v, dtype=float) for v in vectors]
    k = jnp.ndim(form(x))
    if len(vs) != k + 1:
        raise ValueError(f"a {k}-form needs {k + 1} vectors, got {len(vs)}")
    total = 0.0
    for j, vj in enumerate(vs):
        dw = directional(form, x, vj, engine)
        rest = vs[:j] + vs[j + 1:]
        val = dw
        for v in rest:
            val = jnp.tensordot(val, v, axes=([0], [0]))
        total = total + (-1) ** j * val
    return total


def d_form(form: Field, point, engine: DerivativeEngine = FORWARD):
    """Component array of dω for a 1- or 2-form."""
    D = jacobian(form, point, engine)
    if D.ndim == 2:
        return D.T - D
    if D.ndim == 3:
        # (dω)_{ijk} = ∂_i ω_jk + ∂_j ω_ki + ∂_k ω_ij, with D[j,k,i] = ∂_i ω_jk
        return (jnp.transpose(D, (2, 0, 1)) + jnp.transpose(D, (1, 2, 0))
                + D)
    raise CapabilityError("d_form supports 1- and 2-forms")


def lie_derivative_tensor(X: Field, T: Field, point, valence, engine: DerivativeEngine = FORWARD):
    """Lie derivative of a tensor field along X.

    ``valence`` is ``(r, s)`` with the r contravariant indices first, or the
    string ``"connection"`` for a Christoffel array Γ[i, k, j] (component i
    of ∇_k ∂_j).
    """
    x = _coords(point)
    Xv = X(x)
    DX = jacobian(X, x, engine)  # DX[i, l] = ∂_l X^i
    Tv = jnp.asarray(T(x))
    out = directional(T, x, Xv, engine)
    if valence == "connection":
        ddX = jacobian(lambda y: jacobian(X, y, engine), x, engine)  # ddX[i,j,k]=∂_k∂_j X^i
        out = (out - jnp.einsum("lkj,il->ikj", Tv, DX)
               + jnp.einsum("ilj,lk->ikj", Tv, DX)
               + jnp.einsum("ikl,lj->ikj", Tv, DX)
               + jnp.transpose(ddX, (0, 2, 1)))
        return out
    r, s = valence
    if Tv.ndim != r + s:
        raise CapabilityError(f"tensor of rank {Tv.ndim} does not match valence {valence}")
    for slot in range(r):
        moved = jnp.moveaxis(Tv, slot, 0)
        term = jnp.tensordot(DX, moved, axes=([1], [0]))
        out = out - jnp.moveaxis(term, 0, slot)
    for slot in range(r, r + s):
        moved = jnp.moveaxis(Tv, slot, -1)
        term = jnp.tensordot(moved, DX, axes=([-1], [0]))
        out = out + jnp.moveaxis(term, -1, slot)
    return out


def _rk4(F, y, t, h):
    n = int(round(abs(t) / h))
    n = max(n, 1)
    dt = t / n
    ys = [y]
    for _ in range(n):
        k1 = F(y)
        k2 = F(y + 0.5 * dt * k1)
        k3 = F(y + 0.5 * dt * k2)
        k4 = F(y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys.append(y)
    return y, ys, dt


@dataclass
class FlowResult:
    point: np.ndarray
    jacobian: np.ndarray
    error_estimate: float = 0.0
    closed_form: bool = False
    extra: dict = field(default_factory=dict)


def flow(X: Field, point, t: float, *, step: float = 1e-3, closed_form=None,
         chart: Chart | None = None, engine: DerivativeEngine = FORWARD) -> FlowResult:
    """Integrate x' = X(x) with the variational equation J' = DX(x) J."""
    x0 = np.asarray(_coords(point), dtype=float)
    if closed_form is not None:
        xt, J = closed_form(x0, t)
        return FlowResult(np.asarray(xt), np.asarray(J), 0.0, True)
    m = x0.size
    Xj = jax.jit(X)
    DXj = jax.jit(lambda y: jacobian(X, y, engine))

    def F(y):
        xs, J = y[:m], y[m:].reshape(m, m)
        return np.concatenate([np.asarray(Xj(xs)), (np.asarray(DXj(xs)) @ J).ravel()])

    y0 = np.concatenate([x0, np.eye(m).ravel()])
    if t == 0:
        return FlowResult(x0, np.eye(m))
    y, ys, dt = _rk4(F, y0, t, step)
    if chart is not None:
        for i, yi in enumerate(ys):
            if not chart.contains(yi[:m]):
                raise FlowEscapeError(i * dt)
    y2, _, _ = _rk4(F, y0, t, 2 * step)
    err = float(np.max(np.abs(y - y2)) / 15)
    return FlowResult(y[:m], y[m:].reshape(m, m), err)
