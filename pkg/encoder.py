"""
Classical encoder with two parallel Angle Projection heads.

    x -> [dense + activation] * L -> h
    theta = pi * sigmoid(h @ W_theta + b_theta)           in (0, pi)
    gamma = pi * (2 * sigmoid(h @ W_gamma + b_gamma) - 1)  in (-pi, pi)

sigmoid(u) is evaluated as (1 + tanh(u / 2)) / 2, so theta and gamma are both
affine in tanh(u / 2). Once tanh saturates in floating point the scaled value
would land on a range end; such outputs are moved to the nearest representable
angle inside the open interval; the head derivative is zero to working
precision there.

Forward and backward passes are written out by hand; parameters live in a
name -> array dict so the optimizer and checkpoint code can walk them in a
fixed order.
"""
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from errors import ArgumentError, DimensionError, FormatError, TruncatedDataError
from geometry import AngularEncoding

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"QPMEL1"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "linear")

THETA_BOUNDS = (float(np.nextafter(0.0, 1.0)), float(np.nextafter(math.pi, 0.0)))
GAMMA_BOUNDS = (float(np.nextafter(-math.pi, 0.0)), float(np.nextafter(math.pi, 0.0)))


def parameter_shapes(layer_dims: Sequence[int], num_qubits: int) -> List[Tuple[str, Tuple[int, ...]]]:
    """Canonical parameter order: trunk ascending, theta head, gamma head; weight before bias."""
    shapes = []
    for i in range(len(layer_dims) - 1):
        shapes.append((f"trunk.{i}.weight", (layer_dims[i], layer_dims[i + 1])))
        shapes.append((f"trunk.{i}.bias", (layer_dims[i + 1],)))
    for head in ("theta_head", "gamma_head"):
        shapes.append((f"{head}.weight", (layer_dims[-1], num_qubits)))
        shapes.append((f"{head}.bias", (num_qubits,)))
    return shapes


@dataclass
class EncoderModel:
    layer_dims: Tuple[int, ...]
    num_qubits: int
    activation: str = "relu"
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if not self.layer_dims or any(d < 1 for d in self.layer_dims):
            raise ArgumentError(f"layer_dims must be non-empty positive integers, got {self.layer_dims}")
        if self.num_qubits < 1:
            raise ArgumentError(f"num_qubits must be >= 1, got {self.num_qubits}")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation '{self.activation}', expected one of {ACTIVATIONS}")
        for name, shape in self.parameter_shapes():
            if name not in self.params:
                raise ArgumentError(f"missing parameter '{name}'")
            if self.params[name].shape != shape:
                raise DimensionError(f"parameter '{name}' has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ArgumentError(f"parameter '{name}' contains non-finite values")

    @property
    def num_trunk_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def parameter_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return parameter_shapes(self.layer_dims, self.num_qubits)

    def parameter_names(self) -> List[str]:
        return [name for name, _ in self.parameter_shapes()]

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.parameter_shapes())

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            layer_dims=self.layer_dims,
            num_qubits=self.num_qubits,
            activation=self.activation,
            params={name: arr.copy() for name, arr in self.params.items()},
        )


@dataclass
class ForwardTrace:
    activations: List[np.ndarray]
    pre_activations: List[np.ndarray]
    theta_tanh: np.ndarray
    gamma_tanh: np.ndarray


def init(layer_dims: Sequence[int], num_qubits: int, seed: int, activation: str = "relu") -> EncoderModel:
    """
    Trunk weights ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in))  (variance 2 / fan_in)
    Head weights  ~ U(-sqrt(3 / fan_in), sqrt(3 / fan_in))  (variance 1 / fan_in)
    Biases are zero. Draws happen in canonical parameter order from one PCG64 stream.
    """
    dims = tuple(int(d) for d in layer_dims)
    if not dims or any(d < 1 for d in dims):
        raise ArgumentError(f"layer_dims must be non-empty positive integers, got {tuple(layer_dims)}")
    if num_qubits < 1:
        raise ArgumentError(f"num_qubits must be >= 1, got {num_qubits}")

    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for i in range(len(dims) - 1):
        limit = math.sqrt(6.0 / dims[i])
        params[f"trunk.{i}.weight"] = rng.uniform(-limit, limit, size=(dims[i], dims[i + 1]))
        params[f"trunk.{i}.bias"] = np.zeros(dims[i + 1])
    for head in ("theta_head", "gamma_head"):
        limit = math.sqrt(3.0 / dims[-1])
        params[f"{head}.weight"] = rng.uniform(-limit, limit, size=(dims[-1], num_qubits))
        params[f"{head}.bias"] = np.zeros(num_qubits)
    return EncoderModel(layer_dims=dims, num_qubits=int(num_qubits), activation=activation, params=params)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def forward_batch(m: EncoderModel, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray, ForwardTrace]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise DimensionError(f"expected inputs of dimension {m.input_dim}, got shape {np.shape(features)}")

    activations = [x]
    pre_activations = []
    for i in range(m.num_trunk_layers):
        z = activations[-1] @ m.params[f"trunk.{i}.weight"] + m.params[f"trunk.{i}.bias"]
        pre_activations.append(z)
        activations.append(_activate(m.activation, z))

    h = activations[-1]
    theta_tanh = np.tanh(0.5 * (h @ m.params["theta_head.weight"] + m.params["theta_head.bias"]))
    gamma_tanh = np.tanh(0.5 * (h @ m.params["gamma_head.weight"] + m.params["gamma_head.bias"]))
    thetas = np.clip(0.5 * math.pi * (1.0 + theta_tanh), *THETA_BOUNDS)
    gammas = np.clip(math.pi * gamma_tanh, *GAMMA_BOUNDS)
    return thetas, gammas, ForwardTrace(activations, pre_activations, theta_tanh, gamma_tanh)


def forward(m: EncoderModel, x: np.ndarray) -> Tuple[AngularEncoding, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"forward takes a single feature vector, got shape {x.shape}")
    thetas, gammas, trace = forward_batch(m, x)
    return AngularEncoding(thetas[0], gammas[0]), trace


def backward(m: EncoderModel, trace: ForwardTrace, d_theta: np.ndarray, d_gamma: np.ndarray) -> Dict[str, np.ndarray]:
    """Parameter gradients for upstream dLoss/dtheta and dLoss/dgamma, summed over the batch."""
    batch = trace.theta_tanh.shape
    d_theta = np.asarray(d_theta, dtype=np.float64)
    d_gamma = np.asarray(d_gamma, dtype=np.float64)
    if d_theta.ndim == 1:
        d_theta = d_theta[None, :]
    if d_gamma.ndim == 1:
        d_gamma = d_gamma[None, :]
    if d_theta.shape != batch or d_gamma.shape != batch:
        raise DimensionError(
            f"upstream gradients must have shape {batch}, got {np.shape(d_theta)} and {np.shape(d_gamma)}"
        )

    # d theta / du = (pi / 4)(1 - t^2), d gamma / du = (pi / 2)(1 - t^2) with t = tanh(u / 2)
    du_theta = d_theta * (0.25 * math.pi) * (1.0 - trace.theta_tanh ** 2)
    du_gamma = d_gamma * (0.5 * math.pi) * (1.0 - trace.gamma_tanh ** 2)

    grads = {}
    h = trace.activations[-1]
    grads["theta_head.weight"] = h.T @ du_theta
    grads["theta_head.bias"] = du_theta.sum(axis=0)
    grads["gamma_head.weight"] = h.T @ du_gamma
    grads["gamma_head.bias"] = du_gamma.sum(axis=0)
    dh = du_theta @ m.params["theta_head.weight"].T + du_gamma @ m.params["gamma_head.weight"].T

    for i in reversed(range(m.num_trunk_layers)):
        dz = dh * _activation_grad(m.activation, trace.pre_activations[i], trace.activations[i + 1])
        grads[f"trunk.{i}.weight"] = trace.activations[i].T @ dz
        grads[f"trunk.{i}.bias"] = dz.sum(axis=0)
        dh = dz @ m.params[f"trunk.{i}.weight"].T

    return {name: grads[name] for name in m.parameter_names()}


def save_checkpoint(m: EncoderModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    header = CHECKPOINT_MAGIC + struct.pack(
        f"<III{len(m.layer_dims)}IB",
        CHECKPOINT_VERSION,
        m.num_qubits,
        len(m.layer_dims),
        *m.layer_dims,
        ACTIVATIONS.index(m.activation),
    )
    body = b"".join(np.ascontiguousarray(m.params[name], dtype="<f8").tobytes() for name in m.parameter_names())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + body)
    logger.info(f"Checkpoint written to {path} ({m.parameter_count} parameters)")
    return path


def _take(buffer: bytes, offset: int, size: int, what: str) -> Tuple[bytes, int]:
    if offset + size > len(buffer):
        raise TruncatedDataError(f"checkpoint truncated while reading {what}")
    return buffer[offset:offset + size], offset + size


def load_checkpoint(path: Union[str, Path]) -> EncoderModel:
    buffer = Path(path).read_bytes()
    magic, offset = _take(buffer, 0, len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"not a QPMEL1 checkpoint: expected magic {CHECKPOINT_MAGIC!r}, found {magic!r}")
    raw, offset = _take(buffer, offset, 12, "header")
    version, num_qubits, num_dims = struct.unpack("<III", raw)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if num_dims == 0 or num_qubits == 0:
        raise FormatError("checkpoint declares an empty encoder")
    raw, offset = _take(buffer, offset, 4 * num_dims + 1, "layer dims")
    *layer_dims, activation_code = struct.unpack(f"<{num_dims}IB", raw)
    if activation_code >= len(ACTIVATIONS):
        raise FormatError(f"unknown activation code {activation_code}")

    params = {}
    for name, shape in parameter_shapes(layer_dims, num_qubits):
        count = int(np.prod(shape))
        raw, offset = _take(buffer, offset, 8 * count, name)
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if offset != len(buffer):
        raise FormatError(f"checkpoint has {len(buffer) - offset} unexpected trailing bytes")

    return EncoderModel(
        layer_dims=tuple(layer_dims),
        num_qubits=num_qubits,
        activation=ACTIVATIONS[activation_code],
        params=params,
    )
