"""
Depth-2 encoding circuit: RY(2 theta_q) followed by RZ(gamma_q) on every qubit.

RY(2 theta) RZ(gamma) |0> = e^{-i gamma / 2} (cos(theta)|0> + e^{i gamma} sin(theta)|1>),
i.e. the encoded qubit state up to a global phase.

QASM qubit q[i] is encoding qubit i + 1, the (i + 1)-th most significant bit
of the oracle's amplitude index.
"""
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Tuple, Union

import numpy as np

from errors import CapacityError, FormatError, InvalidEncodingError
from geometry import AngularEncoding
from oracle import MAX_QUBITS

QASM_HEADER = 'OPENQASM 2.0;\ninclude "qelib1.inc";\n'

_QREG = re.compile(r"^qreg\s+q\[(\d+)\];$")
_GATE = re.compile(r"^(ry|rz)\(([^)]*)\)\s+q\[(\d+)\];$")


class Gate(NamedTuple):
    name: str
    qubit: int
    angle: float


@dataclass(frozen=True)
class EncodingCircuit:
    num_qubits: int
    gates: Tuple[Gate, ...]

    def __post_init__(self):
        gates = tuple(Gate(str(g[0]), int(g[1]), float(g[2])) for g in self.gates)
        if self.num_qubits < 1:
            raise InvalidEncodingError("a circuit needs at least one qubit")
        if len(gates) != 2 * self.num_qubits:
            raise InvalidEncodingError(f"expected {2 * self.num_qubits} gates, got {len(gates)}")
        for q in range(self.num_qubits):
            ry, rz = gates[2 * q], gates[2 * q + 1]
            if (ry.name, ry.qubit, rz.name, rz.qubit) != ("ry", q, "rz", q):
                raise InvalidEncodingError(f"qubit {q} must carry ry then rz")
            if not 0.0 <= ry.angle <= 2.0 * math.pi:
                raise InvalidEncodingError(f"ry angle {ry.angle} on qubit {q} is outside [0, 2pi]")
            if not -math.pi <= rz.angle <= math.pi:
                raise InvalidEncodingError(f"rz angle {rz.angle} on qubit {q} is outside [-pi, pi]")
        object.__setattr__(self, "gates", gates)


def to_circuit(a: AngularEncoding) -> EncodingCircuit:
    gates = []
    for q, (theta, gamma) in enumerate(zip(a.thetas.tolist(), a.gammas.tolist())):
        gates.append(Gate("ry", q, 2.0 * theta))
        gates.append(Gate("rz", q, gamma))
    return EncodingCircuit(a.num_qubits, tuple(gates))


def _literal(angle: float) -> str:
    return format(angle, ".17g")


def emit_qasm(c: EncodingCircuit) -> str:
    lines = [QASM_HEADER + f"qreg q[{c.num_qubits}];"]
    lines.extend(f"{g.name}({_literal(g.angle)}) q[{g.qubit}];" for g in c.gates)
    return "\n".join(lines) + "\n"


def parse_qasm(text: str) -> EncodingCircuit:
    lines = [line.split("//", 1)[0].strip() for line in text.splitlines()]
    lines = [line for line in lines if line]
    if lines[:2] != ["OPENQASM 2.0;", 'include "qelib1.inc";']:
        raise FormatError("missing OpenQASM 2.0 header")
    if len(lines) < 3 or not _QREG.match(lines[2]):
        raise FormatError("expected a single 'qreg q[N];' declaration after the header")
    num_qubits = int(_QREG.match(lines[2]).group(1))

    gates = []
    for lineno, line in enumerate(lines[3:], start=4):
        match = _GATE.match(line)
        if not match:
            raise FormatError(f"unsupported statement on line {lineno}: {line!r}")
        name, literal, qubit = match.groups()
        try:
            angle = float(literal)
        except ValueError:
            raise FormatError(f"invalid angle literal {literal!r} on line {lineno}")
        gates.append(Gate(name, int(qubit), angle))
    return EncodingCircuit(num_qubits, tuple(gates))


def write_qasm(c: EncodingCircuit, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(emit_qasm(c), encoding="utf-8")
    return path


def gate_matrix(gate: Gate) -> np.ndarray:
    half = gate.angle / 2.0
    if gate.name == "ry":
        return np.array([[math.cos(half), -math.sin(half)], [math.sin(half), math.cos(half)]], dtype=np.complex128)
    return np.array([[np.exp(-1j * half), 0.0], [0.0, np.exp(1j * half)]], dtype=np.complex128)


def _apply_single_qubit(state: np.ndarray, matrix: np.ndarray, qubit: int, n: int) -> np.ndarray:
    state = state.reshape([2] * n)
    axes = list(range(n))
    axes[qubit], axes[-1] = axes[-1], axes[qubit]
    state = np.transpose(state, axes)
    state = np.tensordot(state, matrix, axes=([-1], [1]))
    return np.transpose(state, axes).reshape(-1)


def simulate_circuit(c: EncodingCircuit) -> np.ndarray:
    """Apply the gates to |0...0> one by one; returns the 2^Q amplitudes."""
    if c.num_qubits > MAX_QUBITS:
        raise CapacityError(f"gate interpreter supports at most {MAX_QUBITS} qubits")
    state = np.zeros(2 ** c.num_qubits, dtype=np.complex128)
    state[0] = 1.0
    for gate in c.gates:
        state = _apply_single_qubit(state, gate_matrix(gate), gate.qubit, c.num_qubits)
    return state
