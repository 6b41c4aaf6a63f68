from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from errors import ArgumentError


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adaptive-moment optimizer with bias correction; updates parameters in place."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ArgumentError(f"learning_rate must be positive, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ArgumentError(f"moment decay rates must lie in [0, 1), got {beta1}, {beta2}")
        self.state = OptimizerState(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        s = self.state
        s.step += 1
        bias1 = 1.0 - s.beta1 ** s.step
        bias2 = 1.0 - s.beta2 ** s.step
        step_size = s.learning_rate / bias1

        # dict order is the model's canonical parameter order
        for name in params:
            g = grads[name]
            if name not in s.first_moments:
                s.first_moments[name] = np.zeros_like(params[name])
                s.second_moments[name] = np.zeros_like(params[name])
            m, v = s.first_moments[name], s.second_moments[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            params[name] -= step_size * m / (np.sqrt(v / bias2) + s.epsilon)
