"""
Self-checks run by `main.py verify`: the kernel against the statevector
oracle, the factorization identity, analytic gradients against central
differences, the periodicity counterexample and circuit replay.
"""
import contextlib
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional
from unittest import mock

import numpy as np

import kernel
import oracle
from circuit_export import simulate_circuit, to_circuit
from errors import ArgumentError
from geometry import AngularEncoding, angles_to_points, classical_cosine_similarity

logger = logging.getLogger(__name__)

FIDELITY_TOL = 1e-10
GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-7
FD_STEP = 1e-6


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: int
    worst: float
    detail: str
    seconds: float = 0.0


def _flipped_imag_part(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return p[..., 0] * q[..., 1] + p[..., 1] * q[..., 0]


FAULTS: Dict[str, Callable] = {
    "lambda-c-sign": lambda: mock.patch.object(kernel, "_imag_part", _flipped_imag_part),
}


def random_encoding(rng: np.random.Generator, num_qubits: int, margin: float = 0.0) -> AngularEncoding:
    thetas = rng.uniform(margin, math.pi - margin, size=num_qubits)
    gammas = rng.uniform(-math.pi + margin, math.pi - margin, size=num_qubits)
    return AngularEncoding(thetas, gammas)


def kernel_vs_oracle(rng: np.random.Generator, pairs: int = 1000) -> SuiteResult:
    worst = 0.0
    checks = 0
    for q in (1, 2, 4, 8, 12):
        for _ in range(pairs):
            a, b = random_encoding(rng, q), random_encoding(rng, q)
            worst = max(worst, abs(kernel.pmef(a, b) - oracle.fidelity(a, b)))
            checks += 1
    return SuiteResult("kernel_vs_oracle", worst <= FIDELITY_TOL, checks, worst, f"max |pmef - fidelity| = {worst:.3e}")


def factorized_fidelity(rng: np.random.Generator, pairs: int = 1000) -> SuiteResult:
    worst = 0.0
    for _ in range(pairs):
        q = int(rng.integers(1, 11))
        a, b = random_encoding(rng, q), random_encoding(rng, q)
        worst = max(worst, abs(oracle.fidelity(a, b) - oracle.product_fidelity(a, b)))
    return SuiteResult(
        "factorized_fidelity", worst <= FIDELITY_TOL, pairs, worst, f"max |full - per-qubit product| = {worst:.3e}"
    )


def _numeric_partials(score, thetas_a, gammas_a, points_b) -> np.ndarray:
    """Central differences of score(points_a, points_b) over (thetas_a, gammas_a)."""
    angles = np.concatenate([thetas_a, gammas_a])
    q = thetas_a.size
    partials = np.zeros_like(angles)
    for i in range(angles.size):
        plus, minus = angles.copy(), angles.copy()
        plus[i] += FD_STEP
        minus[i] -= FD_STEP
        f_plus = score(angles_to_points(plus[:q], plus[q:]), points_b)
        f_minus = score(angles_to_points(minus[:q], minus[q:]), points_b)
        partials[i] = (f_plus - f_minus) / (2.0 * FD_STEP)
    return partials


def gradient_check(rng: np.random.Generator, instances: int = 100) -> SuiteResult:
    worst = 0.0
    failures = 0
    checks = 0
    cases = (
        ("pmef", kernel.pmef_cartesian, kernel.pmef_gradient),
        ("pmef_train", kernel.pmef_train_cartesian, kernel.pmef_train_gradient),
    )
    for _ in range(instances):
        q = int(rng.integers(1, 7))
        a, b = random_encoding(rng, q, margin=0.05), random_encoding(rng, q, margin=0.05)
        for _, score, gradient in cases:
            grad = gradient(a, b)
            analytic = np.concatenate([grad.d_theta_a, grad.d_gamma_a])
            numeric = _numeric_partials(score, a.thetas, a.gammas, angles_to_points(b.thetas, b.gammas))
            error = np.abs(analytic - numeric)
            worst = max(worst, float(np.max(error)))
            failures += int(np.sum(error > GRAD_RTOL * np.abs(numeric) + GRAD_ATOL))
            checks += analytic.size
    return SuiteResult(
        "gradient_check", failures == 0, checks, worst, f"{failures} of {checks} partials off, max error {worst:.3e}"
    )


def periodicity(rng: np.random.Generator) -> SuiteResult:
    a = AngularEncoding([math.pi / 2], [math.pi])
    b = AngularEncoding([math.pi / 2], [-math.pi])
    cosine = classical_cosine_similarity(a, b)
    similarity = kernel.pmef(a, b)
    worst = max(abs(cosine + 0.6), abs(similarity - 1.0))
    return SuiteResult(
        "periodicity", worst <= 1e-12, 2, worst, f"cosine = {cosine:.12f}, pmef = {similarity:.12f}"
    )


def circuit_fidelity(rng: np.random.Generator, encodings: int = 100) -> SuiteResult:
    worst = 0.0
    for _ in range(encodings):
        a = random_encoding(rng, int(rng.integers(1, 9)))
        replay = simulate_circuit(to_circuit(a))
        worst = max(worst, abs(oracle.overlap_fidelity(replay, oracle.build_state(a).amplitudes) - 1.0))
    return SuiteResult(
        "circuit_fidelity", worst <= FIDELITY_TOL, encodings, worst, f"max |overlap^2 - 1| = {worst:.3e}"
    )


SUITES = (kernel_vs_oracle, factorized_fidelity, gradient_check, periodicity, circuit_fidelity)


def run_suites(fault: Optional[str] = None, seed: int = 0) -> List[SuiteResult]:
    if fault is not None and fault not in FAULTS:
        raise ArgumentError(f"unknown fault '{fault}', expected one of {sorted(FAULTS)}")

    patch = FAULTS[fault]() if fault else contextlib.nullcontext()
    results = []
    with patch:
        if fault:
            logger.warning(f"Running verification with injected fault '{fault}'")
        rng = np.random.Generator(np.random.PCG64(seed))
        for suite in SUITES:
            start = time.perf_counter()
            result = suite(rng)
            result.seconds = time.perf_counter() - start
            logger.info(f"{result.name}: {'pass' if result.passed else 'FAIL'} ({result.detail})")
            results.append(result)
    return results
