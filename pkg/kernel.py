"""
Projective Metric Function (PMeF) and its per-qubit Complex Kernel Function.

For unit triples p = (x, y, z) and p' = (x', y', z') the single-qubit
fidelity is

    CKF(p, p') = lambda_r^2 + lambda_c^2
    lambda_r   = x x' + y y' + z z'
    lambda_c   = x y' - y x'

PMeF multiplies the per-qubit CKF values; the training surrogate sums them
instead, which keeps gradients from shrinking geometrically in Q.

All reductions over qubits run in ascending qubit order.
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import DimensionError
from geometry import AngularEncoding, _check_same_qubits, angles_to_points, cartesian_jacobian


@dataclass(frozen=True)
class LambdaPair:
    lambda_r: float
    lambda_c: float


@dataclass(frozen=True)
class SimilarityGradient:
    d_theta_a: np.ndarray
    d_gamma_a: np.ndarray
    d_theta_b: np.ndarray
    d_gamma_b: np.ndarray


def _real_part(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return p[..., 0] * q[..., 0] + p[..., 1] * q[..., 1] + p[..., 2] * q[..., 2]


def _imag_part(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]


def _rotate_xy(p: np.ndarray) -> np.ndarray:
    """(y, -x, 0): gradient of lambda_c with respect to the second argument's partner."""
    return np.stack([p[..., 1], -p[..., 0], np.zeros_like(p[..., 0])], axis=-1)


def lambdas(p, p_prime) -> LambdaPair:
    p = np.asarray(p, dtype=np.float64)
    p_prime = np.asarray(p_prime, dtype=np.float64)
    return LambdaPair(float(_real_part(p, p_prime)), float(_imag_part(p, p_prime)))


def ckf(p, p_prime) -> float:
    pair = lambdas(p, p_prime)
    return pair.lambda_r ** 2 + pair.lambda_c ** 2


def ckf_values(points_a: np.ndarray, points_b: np.ndarray) -> np.ndarray:
    """Per-qubit CKF for broadcastable (..., Q, 3) arrays."""
    lam_r = _real_part(points_a, points_b)
    lam_c = _imag_part(points_a, points_b)
    return lam_r * lam_r + lam_c * lam_c


def _check_points(points_a: np.ndarray, points_b: np.ndarray):
    if points_a.shape != points_b.shape:
        raise DimensionError(f"qubit counts differ: {points_a.shape[0]} != {points_b.shape[0]}")


def pmef_cartesian(points_a, points_b) -> float:
    points_a, points_b = np.asarray(points_a, dtype=np.float64), np.asarray(points_b, dtype=np.float64)
    _check_points(points_a, points_b)
    return math.prod(ckf_values(points_a, points_b).tolist())


def pmef_train_cartesian(points_a, points_b) -> float:
    points_a, points_b = np.asarray(points_a, dtype=np.float64), np.asarray(points_b, dtype=np.float64)
    _check_points(points_a, points_b)
    return sum(ckf_values(points_a, points_b).tolist())


def _points(a: AngularEncoding) -> np.ndarray:
    return angles_to_points(a.thetas, a.gammas)


def pmef(a: AngularEncoding, b: AngularEncoding) -> float:
    _check_same_qubits(a, b)
    return pmef_cartesian(_points(a), _points(b))


def pmef_train(a: AngularEncoding, b: AngularEncoding) -> float:
    _check_same_qubits(a, b)
    return pmef_train_cartesian(_points(a), _points(b))


def leave_one_out_products(values: np.ndarray) -> np.ndarray:
    """Product of all entries but one along the last axis, without division."""
    ones = np.ones(values.shape[:-1] + (1,), dtype=values.dtype)
    prefix = np.concatenate([ones, np.cumprod(values[..., :-1], axis=-1)], axis=-1)
    suffix = np.flip(np.cumprod(np.flip(values[..., 1:], axis=-1), axis=-1), axis=-1)
    suffix = np.concatenate([suffix, ones], axis=-1)
    return prefix * suffix


def ckf_backward(points_a: np.ndarray, points_b: np.ndarray, upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Chain rule through CKF for broadcastable (..., Q, 3) triples.

    upstream holds dLoss/dCKF per qubit (shape (..., Q)); returns gradients
    with respect to both triple arrays, reduced to their own shapes.
    """
    lam_r = _real_part(points_a, points_b)
    lam_c = _imag_part(points_a, points_b)
    two_r = (2.0 * upstream * lam_r)[..., None]
    two_c = (2.0 * upstream * lam_c)[..., None]
    grad_a = two_r * points_b + two_c * _rotate_xy(points_b)
    grad_b = two_r * points_a - two_c * _rotate_xy(points_a)
    return _reduce_to(grad_a, points_a.shape), _reduce_to(grad_b, points_b.shape)


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _angle_gradient(a: AngularEncoding, b: AngularEncoding, multiplicative: bool) -> SimilarityGradient:
    _check_same_qubits(a, b)
    points_a, points_b = _points(a), _points(b)
    if multiplicative:
        upstream = leave_one_out_products(ckf_values(points_a, points_b))
    else:
        upstream = np.ones(a.num_qubits)
    grad_a, grad_b = ckf_backward(points_a, points_b, upstream)

    d_theta_a, d_gamma_a = cartesian_jacobian(a.thetas, a.gammas)
    d_theta_b, d_gamma_b = cartesian_jacobian(b.thetas, b.gammas)
    return SimilarityGradient(
        d_theta_a=np.sum(grad_a * d_theta_a, axis=-1),
        d_gamma_a=np.sum(grad_a * d_gamma_a, axis=-1),
        d_theta_b=np.sum(grad_b * d_theta_b, axis=-1),
        d_gamma_b=np.sum(grad_b * d_gamma_b, axis=-1),
    )


def pmef_train_gradient(a: AngularEncoding, b: AngularEncoding) -> SimilarityGradient:
    return _angle_gradient(a, b, multiplicative=False)


def pmef_gradient(a: AngularEncoding, b: AngularEncoding) -> SimilarityGradient:
    """Gradient of the multiplicative PMeF; shrinks with Q, not meant for training."""
    return _angle_gradient(a, b, multiplicative=True)


def similarity_matrix(points_a: np.ndarray, points_b: np.ndarray, additive: bool = True) -> np.ndarray:
    """All-pairs kernel between (M, Q, 3) and (N, Q, 3) triples, shape (M, N)."""
    points_a, points_b = np.asarray(points_a, dtype=np.float64), np.asarray(points_b, dtype=np.float64)
    if points_a.ndim != 3 or points_b.ndim != 3 or points_a.shape[1:] != points_b.shape[1:]:
        raise DimensionError(f"incompatible shapes {points_a.shape} and {points_b.shape}")
    values = ckf_values(points_a[:, None, :, :], points_b[None, :, :, :])
    return values.sum(axis=-1) if additive else np.prod(values, axis=-1)
