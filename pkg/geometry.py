"""
Angular and Cartesian coordinates for factorized qubit encodings.

Each qubit q carries a polar angle theta_q in [0, pi] and an azimuthal angle
gamma_q in [-pi, pi]. The angles map onto a point of the unit sphere in R^3:

    (x, y, z) = (sin(theta) cos(gamma), sin(theta) sin(gamma), cos(theta))

Working on the sphere instead of on the raw angles removes the coordinate
periodicity (gamma = pi and gamma = -pi are the same point).
"""
import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import DimensionError, InvalidEncodingError, UndefinedSimilarityError

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-9


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InvalidEncodingError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AngularEncoding:
    thetas: np.ndarray
    gammas: np.ndarray

    def __post_init__(self):
        thetas = _frozen(self.thetas, "thetas")
        gammas = _frozen(self.gammas, "gammas")
        if thetas.shape != gammas.shape:
            raise DimensionError(
                f"thetas and gammas differ in length: {thetas.size} != {gammas.size}"
            )
        if thetas.size < 1:
            raise InvalidEncodingError("an encoding needs at least one qubit")
        if np.any(thetas < 0.0) or np.any(thetas > math.pi):
            raise InvalidEncodingError("every theta must lie in [0, pi]")
        if np.any(gammas < -math.pi) or np.any(gammas > math.pi):
            raise InvalidEncodingError("every gamma must lie in [-pi, pi]")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "gammas", gammas)

    @property
    def num_qubits(self) -> int:
        return int(self.thetas.size)

    def flattened(self) -> np.ndarray:
        """(theta_1..theta_Q, gamma_1..gamma_Q)"""
        return np.concatenate([self.thetas, self.gammas])


@dataclass(frozen=True)
class CartesianEncoding:
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True)
        if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
            raise DimensionError(f"expected a (Q, 3) array of triples, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidEncodingError("points contain non-finite values")
        norms = np.sqrt(np.sum(points * points, axis=1))
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise InvalidEncodingError("every triple must have unit norm")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def num_qubits(self) -> int:
        return int(self.points.shape[0])


def _check_same_qubits(a, b):
    if a.num_qubits != b.num_qubits:
        raise DimensionError(f"qubit counts differ: {a.num_qubits} != {b.num_qubits}")


def angles_to_points(thetas: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Array form of the conversion; broadcasts over leading axes, adds a trailing axis of 3."""
    sin_t = np.sin(thetas)
    return np.stack([sin_t * np.cos(gammas), sin_t * np.sin(gammas), np.cos(thetas)], axis=-1)


def cartesian_jacobian(thetas: np.ndarray, gammas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of (x, y, z) with respect to theta and gamma."""
    sin_t, cos_t = np.sin(thetas), np.cos(thetas)
    sin_g, cos_g = np.sin(gammas), np.cos(gammas)
    d_theta = np.stack([cos_t * cos_g, cos_t * sin_g, -sin_t], axis=-1)
    d_gamma = np.stack([-sin_t * sin_g, sin_t * cos_g, np.zeros_like(sin_t)], axis=-1)
    return d_theta, d_gamma


def to_cartesian(a: AngularEncoding) -> CartesianEncoding:
    return CartesianEncoding(angles_to_points(a.thetas, a.gammas))


def to_angular(c: CartesianEncoding) -> AngularEncoding:
    x, y, z = c.points[:, 0], c.points[:, 1], c.points[:, 2]
    return AngularEncoding(np.arccos(np.clip(z, -1.0, 1.0)), np.arctan2(y, x))


def wrap_gammas(gammas: np.ndarray) -> np.ndarray:
    """Wraps only values strictly outside [-pi, pi]; +pi and -pi stay as they are."""
    gammas = np.asarray(gammas, dtype=np.float64)
    outside = (gammas < -math.pi) | (gammas > math.pi)
    wrapped = np.mod(gammas + math.pi, 2.0 * math.pi) - math.pi
    return np.where(outside, wrapped, gammas)


def clamp_to_ranges(thetas_raw, gammas_raw) -> AngularEncoding:
    thetas = np.asarray(thetas_raw, dtype=np.float64).reshape(-1)
    gammas = np.asarray(gammas_raw, dtype=np.float64).reshape(-1)
    if thetas.shape != gammas.shape:
        raise DimensionError(f"thetas and gammas differ in length: {thetas.size} != {gammas.size}")
    if not (np.all(np.isfinite(thetas)) and np.all(np.isfinite(gammas))):
        raise InvalidEncodingError("cannot clamp non-finite angles")

    clamped = np.clip(thetas, 0.0, math.pi)
    wrapped = wrap_gammas(gammas)
    changed = int(np.count_nonzero(clamped != thetas) + np.count_nonzero(wrapped != gammas))
    if changed:
        logger.debug(f"clamp_to_ranges adjusted {changed} angle(s)")
    return AngularEncoding(clamped, wrapped)


def classical_cosine_similarity(a: AngularEncoding, b: AngularEncoding) -> float:
    """
    Cosine similarity taken directly on the flattened angles.

    Kept as the negative baseline: it ignores periodicity, so two encodings
    of the same state can look dissimilar.
    """
    _check_same_qubits(a, b)
    va, vb = a.flattened(), b.flattened()
    norm_a, norm_b = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(va, vb) / (norm_a * norm_b), -1.0, 1.0))
