"""Quaternion arithmetic, right/left multiplication matrices and SO(3) helpers.

A quaternion x0 + x1 i + x2 j + x3 k is stored as (x0, x1, x2, x3).  The
Lie algebra so(3) is identified with R^3 through the basis e_a with
[e_a, e_b] = 2 e_c; as matrices e_a = 2 hat(unit_a).
"""
from __future__ import annotations

import jax.numpy as jnp
import numpy as np

EPS = 1  # orientation sign of the principal actions; fixed

CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))  # (alpha, beta, gamma), zero based


def qmul(p, q):
    p0, p1, p2, p3 = p
    q0, q1, q2, q3 = q
    return jnp.stack([
        p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
        p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
        p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
        p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
    ])


def qconj(q):
    return jnp.asarray(q) * jnp.array([1.0, -1.0, -1.0, -1.0])


def right_matrix(q) -> np.ndarray:
    """Matrix of x -> x q on R^4."""
    q = np.asarray(q, dtype=float)
    basis = np.eye(4)
    return np.stack([np.asarray(qmul(b, q)) for b in basis], axis=1)


def left_matrix(q) -> np.ndarray:
    """Matrix of x -> q x on R^4."""
    q = np.asarray(q, dtype=float)
    basis = np.eye(4)
    return np.stack([np.asarray(qmul(q, b)) for b in basis], axis=1)


ONE, QI, QJ, QK = np.eye(4)


def block_diag(M: np.ndarray, n: int) -> np.ndarray:
    return np.kron(np.eye(n), M)


def hypercomplex_frame(n: int) -> np.ndarray:
    """(I1, I2, I3) = (R_i, R_j, -R_k) on H^n, shape (3, 4n, 4n)."""
    return np.stack([block_diag(right_matrix(QI), n),
                     block_diag(right_matrix(QJ), n),
                     -block_diag(right_matrix(QK), n)])


def hat(v):
    v1, v2, v3 = v[0], v[1], v[2]
    z = jnp.zeros_like(v1)
    return jnp.array([[z, -v3, v2], [v3, z, -v1], [-v2, v1, z]])


def vee(M):
    return jnp.stack([M[2, 1], M[0, 2], M[1, 0]])


def so3_exp(a):
    """exp(sum a_k e_k) = exp(hat(2a)), smooth at a = 0 to all needed orders."""
    w = 2 * jnp.asarray(a)
    t2 = jnp.dot(w, w)
    small = t2 < 1e-4
    t2s = jnp.where(small, 1.0, t2)
    t = jnp.sqrt(t2s)
    A_exact = jnp.sin(t) / t
    B_exact = (1 - jnp.cos(t)) / t2s
    A_ser = 1 - t2 / 6 + t2 ** 2 / 120 - t2 ** 3 / 5040 + t2 ** 4 / 362880
    B_ser = 0.5 - t2 / 24 + t2 ** 2 / 720 - t2 ** 3 / 40320 + t2 ** 4 / 3628800
    A = jnp.where(small, A_ser, A_exact)
    B = jnp.where(small, B_ser, B_exact)
    K = hat(w)
    return jnp.eye(3) + A * K + B * (K @ K)


def so3_log(R) -> np.ndarray:
    """Inverse of so3_exp: a with so3_exp(a) = R."""
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(R)).as_rotvec() / 2


def rotation_from_quaternion(q) -> np.ndarray:
    """SO(3) matrix of v -> q v q^{-1} acting on imaginary quaternions."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_about(axis: int, angle: float) -> np.ndarray:
    """Geometric rotation by ``angle`` about coordinate axis ``axis``."""
    return np.asarray(so3_exp(np.eye(3)[axis] * angle / 2))


def polar_orthonormalize(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(M))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R
