import math
import struct

import numpy as np
import pytest

from geometry import AngularEncoding


def random_encoding(rng: np.random.Generator, num_qubits: int, margin: float = 0.0) -> AngularEncoding:
    thetas = rng.uniform(margin, math.pi - margin, size=num_qubits)
    gammas = rng.uniform(-math.pi + margin, math.pi - margin, size=num_qubits)
    return AngularEncoding(thetas, gammas)


def idx_images(pixels: np.ndarray) -> bytes:
    """IDX3 image file for a (count, rows, cols) uint8 array."""
    count, rows, cols = pixels.shape
    return struct.pack(">IIII", 0x803, count, rows, cols) + pixels.astype(np.uint8).tobytes()


def idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", 0x801, labels.size) + labels.tobytes()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture
def tiny_images():
    """Six 4x4 images, two per class 0..2; pixel value encodes the class."""
    pixels = np.zeros((6, 4, 4), dtype=np.uint8)
    labels = [0, 1, 2, 0, 1, 2]
    for i, label in enumerate(labels):
        pixels[i] = 50 * (label + 1) + i
    return pixels, labels


@pytest.fixture
def idx_dir(tmp_path, tiny_images):
    pixels, labels = tiny_images
    (tmp_path / "images.idx").write_bytes(idx_images(pixels))
    (tmp_path / "labels.idx").write_bytes(idx_labels(labels))
    return tmp_path
