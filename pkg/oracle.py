"""
Brute-force statevector oracle.

Builds the explicit 2^Q amplitude vector of a factorized encoding and
computes fidelities from it, independently of the kernel module. Qubit 1
(array index 0) is the most significant bit of the amplitude index.

Shot sampling uses numpy's PCG64 bit generator: every call constructs its own
Generator from the explicit seed, so no RNG state is shared between calls.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import ArgumentError, CapacityError, DimensionError
from geometry import AngularEncoding, _check_same_qubits

logger = logging.getLogger(__name__)

MAX_QUBITS = 20
NORM_TOL = 1e-10


@dataclass(frozen=True)
class Statevector:
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.array(self.amplitudes, dtype=np.complex128, copy=True).reshape(-1)
        size = amplitudes.size
        if size < 2 or size & (size - 1):
            raise DimensionError(f"statevector length must be a power of two >= 2, got {size}")
        if size > 2 ** MAX_QUBITS:
            raise CapacityError(f"statevector exceeds {MAX_QUBITS} qubits")
        norm = float(np.sum(np.abs(amplitudes) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise ArgumentError(f"statevector is not normalized (norm^2 = {norm})")
        amplitudes.setflags(write=False)
        object.__setattr__(self, "amplitudes", amplitudes)

    @property
    def num_qubits(self) -> int:
        return int(self.amplitudes.size).bit_length() - 1


@dataclass(frozen=True)
class ShotEstimate:
    estimate: float
    shots: int
    seed: int


def qubit_vector(theta: float, gamma: float) -> np.ndarray:
    """cos(theta)|0> + e^{i gamma} sin(theta)|1>"""
    return np.array([math.cos(theta), np.exp(1j * gamma) * math.sin(theta)], dtype=np.complex128)


def build_state(a: AngularEncoding) -> Statevector:
    if a.num_qubits > MAX_QUBITS:
        raise CapacityError(f"oracle supports at most {MAX_QUBITS} qubits, got {a.num_qubits}")
    state = np.ones(1, dtype=np.complex128)
    for theta, gamma in zip(a.thetas.tolist(), a.gammas.tolist()):
        state = np.kron(state, qubit_vector(theta, gamma))
    return Statevector(state)


def overlap_fidelity(psi: np.ndarray, phi: np.ndarray) -> float:
    """|<psi|phi>|^2 for raw amplitude arrays."""
    return float(abs(np.vdot(psi, phi)) ** 2)


def fidelity(a: AngularEncoding, b: AngularEncoding) -> float:
    _check_same_qubits(a, b)
    return overlap_fidelity(build_state(a).amplitudes, build_state(b).amplitudes)


def qubit_fidelities(a: AngularEncoding, b: AngularEncoding) -> np.ndarray:
    _check_same_qubits(a, b)
    return np.array([
        overlap_fidelity(qubit_vector(ta, ga), qubit_vector(tb, gb))
        for ta, ga, tb, gb in zip(a.thetas.tolist(), a.gammas.tolist(), b.thetas.tolist(), b.gammas.tolist())
    ])


def product_fidelity(a: AngularEncoding, b: AngularEncoding) -> float:
    """Right-hand side of the factorization identity: product of single-qubit fidelities."""
    return math.prod(qubit_fidelities(a, b).tolist())


def sample_success_fraction(probability: float, shots: int, seed: int) -> float:
    if shots < 1:
        raise ArgumentError(f"shots must be >= 1, got {shots}")
    rng = np.random.Generator(np.random.PCG64(seed))
    p = min(max(probability, 0.0), 1.0)
    return int(rng.binomial(shots, p)) / shots


def inversion_test(a: AngularEncoding, b: AngularEncoding, shots: int, seed: int) -> ShotEstimate:
    """
    Prepare |a>, apply the inverse preparation of b, count all-zeros outcomes.

    For product states the all-zeros probability is exactly fidelity(a, b), so
    the measurement record is drawn as `shots` Bernoulli trials with that
    success probability.
    """
    if shots < 1:
        raise ArgumentError(f"shots must be >= 1, got {shots}")
    estimate = sample_success_fraction(fidelity(a, b), shots, seed)
    return ShotEstimate(estimate=estimate, shots=int(shots), seed=int(seed))


def per_qubit_inversion_test(a: AngularEncoding, b: AngularEncoding, shots: int, seed: int) -> float:
    """Sum over qubits of single-qubit inversion-test estimates."""
    if shots < 1:
        raise ArgumentError(f"shots must be >= 1, got {shots}")
    rng = np.random.Generator(np.random.PCG64(seed))
    qubit_seeds = rng.integers(0, 2 ** 63, size=a.num_qubits).tolist()
    total = 0.0
    for q, fid in enumerate(qubit_fidelities(a, b).tolist()):
        total += sample_success_fraction(fid, shots, qubit_seeds[q])
    return total
