"""
Episodic prototypical training over PMeF similarities.

Per episode: encode supports and queries, average each class's supports on
the sphere (per-qubit Euclidean mean of the Cartesian triples, renormalized),
score every query against every prototype with the additive PMeF, and take
softmax cross-entropy over the similarity logits. Gradients flow to queries
and, through the prototypes, to supports.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

import encoder
from config import TrainingSpec, derive_seed
from data import LabeledDataset
from errors import ArgumentError, ConfigurationError, DimensionError
from geometry import (
    AngularEncoding,
    CartesianEncoding,
    angles_to_points,
    cartesian_jacobian,
    to_angular,
    to_cartesian,
)
from kernel import ckf_backward, ckf_values, leave_one_out_products, pmef_cartesian, pmef_train_cartesian
from optimizer import Adam
from oracle import per_qubit_inversion_test

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-9
SIMILARITIES = ("pmef_train", "pmef")


@dataclass(frozen=True)
class Episode:
    """q_queries counts queries per class, like k_shot counts supports per class."""

    n_way: int
    k_shot: int
    q_queries: int
    support: Tuple[Tuple[np.ndarray, int], ...]
    query: Tuple[Tuple[np.ndarray, int], ...]

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.q_queries < 1:
            raise ArgumentError("episodes need n_way >= 2, k_shot >= 1 and q_queries >= 1")
        classes = self.classes
        if len(classes) != self.n_way:
            raise ArgumentError(f"expected {self.n_way} support classes, found {len(classes)}")
        for c in classes:
            count = sum(1 for _, label in self.support if label == c)
            if count != self.k_shot:
                raise ArgumentError(f"class {c} has {count} supports, expected {self.k_shot}")
        stray = {label for _, label in self.query} - set(classes)
        if stray:
            raise ArgumentError(f"query classes {sorted(stray)} have no supports")

    @property
    def classes(self) -> Tuple[int, ...]:
        seen = []
        for _, label in self.support:
            if label not in seen:
                seen.append(label)
        return tuple(seen)

    def _local(self, items) -> np.ndarray:
        position = {c: i for i, c in enumerate(self.classes)}
        return np.array([position[label] for _, label in items], dtype=np.int64)

    def support_features(self) -> np.ndarray:
        return np.stack([f for f, _ in self.support])

    def query_features(self) -> np.ndarray:
        return np.stack([f for f, _ in self.query])

    def support_labels(self) -> np.ndarray:
        return self._local(self.support)

    def query_labels(self) -> np.ndarray:
        return self._local(self.query)


@dataclass(frozen=True)
class Prototype:
    class_index: int
    cartesian: CartesianEncoding
    degenerate_qubits: Tuple[int, ...] = ()


@dataclass
class EpisodeEncodings:
    """Angles of one episode; labels are local class positions 0..n_way-1."""

    support_thetas: np.ndarray
    support_gammas: np.ndarray
    support_labels: np.ndarray
    query_thetas: np.ndarray
    query_gammas: np.ndarray
    query_labels: np.ndarray
    n_way: int


@dataclass
class ProtoLossResult:
    loss: float
    accuracy: float
    logits: np.ndarray
    prototypes: np.ndarray
    degenerate: np.ndarray
    d_support_theta: np.ndarray
    d_support_gamma: np.ndarray
    d_query_theta: np.ndarray
    d_query_gamma: np.ndarray


@dataclass
class EpisodeMetrics:
    episode: int
    loss: float
    accuracy: float
    grad_norm: float


@dataclass
class TrainingResult:
    model: encoder.EncoderModel
    metrics: List[EpisodeMetrics] = field(default_factory=list)


@dataclass(frozen=True)
class EvaluationMode:
    kind: str = "classical"
    shots: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("classical", "quantum"):
            raise ArgumentError(f"unknown evaluation mode '{self.kind}'")
        if self.kind == "quantum" and self.shots < 1:
            raise ArgumentError("quantum evaluation needs shots >= 1")


@dataclass
class EvaluationResult:
    mode: str
    mean_accuracy: float
    interval: float
    accuracies: np.ndarray


def spherical_mean(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    points: (K, Q, 3) unit triples. Returns (unit (Q, 3), norms (Q,), degenerate (Q,)).

    A qubit whose mean has norm below 1e-9 falls back to the first support's triple.
    """
    if points.shape[0] == 1:
        return points[0].copy(), np.ones(points.shape[1]), np.zeros(points.shape[1], dtype=bool)
    mean = points.mean(axis=0)
    norms = np.sqrt(np.sum(mean * mean, axis=-1))
    degenerate = norms < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    unit = np.where(degenerate[:, None], points[0], mean / safe[:, None])
    return unit, norms, degenerate


def spherical_mean_backward(points: np.ndarray, unit: np.ndarray, norms: np.ndarray,
                            degenerate: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    k = points.shape[0]
    grads = np.zeros_like(points)
    if k == 1:
        grads[0] = grad_unit
        return grads
    # d(m / |m|) / dm = (I - u u^T) / |m|
    radial = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    safe = np.where(degenerate, 1.0, norms)[:, None]
    grad_mean = np.where(degenerate[:, None], 0.0, (grad_unit - unit * radial) / safe)
    grads += grad_mean[None, :, :] / k
    grads[0] += np.where(degenerate[:, None], grad_unit, 0.0)
    return grads


def make_prototype(supports: Sequence[AngularEncoding], class_index: int = 0) -> Prototype:
    if not supports:
        raise ArgumentError("a prototype needs at least one support")
    num_qubits = supports[0].num_qubits
    if any(s.num_qubits != num_qubits for s in supports):
        raise DimensionError("all supports of a prototype must share the qubit count")

    points = np.stack([to_cartesian(s).points for s in supports])
    unit, _, degenerate = spherical_mean(points)
    flagged = tuple(int(q) for q in np.flatnonzero(degenerate))
    if flagged:
        logger.warning(f"Prototype for class {class_index} is degenerate on qubits {flagged}; using first support")
    return Prototype(class_index=class_index, cartesian=CartesianEncoding(unit), degenerate_qubits=flagged)


def similarity_logits(query: AngularEncoding, protos: Sequence[Prototype], temperature: float,
                      similarity: str = "pmef_train") -> np.ndarray:
    if not protos:
        raise ArgumentError("similarity_logits needs at least one prototype")
    if similarity not in SIMILARITIES:
        raise ArgumentError(f"unknown similarity '{similarity}', expected one of {SIMILARITIES}")
    if temperature <= 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    points = to_cartesian(query).points
    score = pmef_train_cartesian if similarity == "pmef_train" else pmef_cartesian
    return np.array([score(points, p.cartesian.points) / temperature for p in protos])


def proto_loss(enc: EpisodeEncodings, temperature: float = 1.0, similarity: str = "pmef_train") -> ProtoLossResult:
    """
    Softmax cross-entropy of similarity logits, averaged over queries.

    Prototypes are built here from the support angles so that the returned
    gradients cover supports as well as queries.
    """
    if temperature <= 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    if similarity not in SIMILARITIES:
        raise ArgumentError(f"unknown similarity '{similarity}', expected one of {SIMILARITIES}")
    if enc.support_thetas.shape[-1] != enc.query_thetas.shape[-1]:
        raise DimensionError("support and query encodings differ in qubit count")

    support_points = angles_to_points(enc.support_thetas, enc.support_gammas)
    query_points = angles_to_points(enc.query_thetas, enc.query_gammas)
    num_qubits = support_points.shape[1]

    members = [np.flatnonzero(enc.support_labels == c) for c in range(enc.n_way)]
    if any(m.size == 0 for m in members):
        raise ArgumentError("every class of the episode needs at least one support")
    means = [spherical_mean(support_points[m]) for m in members]
    protos = np.stack([unit for unit, _, _ in means])
    degenerate = np.stack([deg for _, _, deg in means])

    values = ckf_values(query_points[:, None], protos[None])
    scores = values.sum(axis=-1) if similarity == "pmef_train" else np.prod(values, axis=-1)
    logits = scores / temperature

    shift = logits.max(axis=1, keepdims=True)
    log_norm = shift + np.log(np.sum(np.exp(logits - shift), axis=1, keepdims=True))
    rows = np.arange(logits.shape[0])
    labels = enc.query_labels
    loss = float(np.mean(log_norm[:, 0] - logits[rows, labels]))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))

    grad_logits = np.exp(logits - log_norm)
    grad_logits[rows, labels] -= 1.0
    grad_scores = grad_logits / (logits.shape[0] * temperature)
    if similarity == "pmef_train":
        grad_values = np.repeat(grad_scores[:, :, None], num_qubits, axis=2)
    else:
        grad_values = grad_scores[:, :, None] * leave_one_out_products(values)

    grad_query, grad_protos = ckf_backward(query_points[:, None], protos[None], grad_values)
    grad_query, grad_protos = grad_query[:, 0], grad_protos[0]

    grad_support = np.zeros_like(support_points)
    for c, idx in enumerate(members):
        unit, norms, deg = means[c]
        grad_support[idx] += spherical_mean_backward(support_points[idx], unit, norms, deg, grad_protos[c])

    s_theta, s_gamma = cartesian_jacobian(enc.support_thetas, enc.support_gammas)
    q_theta, q_gamma = cartesian_jacobian(enc.query_thetas, enc.query_gammas)
    return ProtoLossResult(
        loss=loss,
        accuracy=accuracy,
        logits=logits,
        prototypes=protos,
        degenerate=degenerate,
        d_support_theta=np.sum(grad_support * s_theta, axis=-1),
        d_support_gamma=np.sum(grad_support * s_gamma, axis=-1),
        d_query_theta=np.sum(grad_query * q_theta, axis=-1),
        d_query_gamma=np.sum(grad_query * q_gamma, axis=-1),
    )


def _eligible_classes(ds: LabeledDataset, per_class: int) -> List[int]:
    return [c for c in ds.classes if len(ds.class_index[c]) >= per_class]


def sample_episode(ds: LabeledDataset, n_way: int, k_shot: int, q_queries: int,
                   rng: np.random.Generator) -> Episode:
    """Classes and samples are drawn without replacement inside an episode."""
    eligible = _eligible_classes(ds, k_shot + q_queries)
    if len(eligible) < n_way:
        raise ConfigurationError(
            f"{n_way}-way episodes need {n_way} classes with >= {k_shot + q_queries} samples, found {len(eligible)}"
        )
    chosen = rng.choice(np.array(eligible), size=n_way, replace=False).tolist()
    support, query = [], []
    for c in chosen:
        members = np.array(ds.class_index[c])
        picked = rng.choice(members, size=k_shot + q_queries, replace=False).tolist()
        support.extend((ds.features[i], c) for i in picked[:k_shot])
        query.extend((ds.features[i], c) for i in picked[k_shot:])
    return Episode(n_way, k_shot, q_queries, tuple(support), tuple(query))


def _encode_episode(model: encoder.EncoderModel, episode: Episode):
    features = np.vstack([episode.support_features(), episode.query_features()])
    thetas, gammas, trace = encoder.forward_batch(model, features)
    n_support = len(episode.support)
    enc = EpisodeEncodings(
        support_thetas=thetas[:n_support],
        support_gammas=gammas[:n_support],
        support_labels=episode.support_labels(),
        query_thetas=thetas[n_support:],
        query_gammas=gammas[n_support:],
        query_labels=episode.query_labels(),
        n_way=episode.n_way,
    )
    return enc, trace


def train(model: encoder.EncoderModel, dataset: LabeledDataset, schedule: TrainingSpec, seed: int,
          metrics_path: Optional[Union[str, Path]] = None) -> TrainingResult:
    """Runs schedule.episodes optimizer steps on a copy of `model`."""
    model = model.copy()
    if schedule.episodes == 0:
        return TrainingResult(model=model)
    if len(_eligible_classes(dataset, schedule.k_shot + schedule.q_queries)) < schedule.n_way:
        raise ConfigurationError(
            f"dataset has fewer than {schedule.n_way} classes with {schedule.k_shot + schedule.q_queries} samples each"
        )

    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "episodes.train")))
    optimizer = Adam(schedule.learning_rate, schedule.beta1, schedule.beta2, schedule.epsilon)
    result = TrainingResult(model=model)
    metrics_file = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        metrics_file = open(metrics_path, "w", encoding="utf-8")

    try:
        for e in range(schedule.episodes):
            episode = sample_episode(dataset, schedule.n_way, schedule.k_shot, schedule.q_queries, rng)
            enc, trace = _encode_episode(model, episode)
            step = proto_loss(enc, schedule.temperature, schedule.similarity)
            if step.degenerate.any():
                logger.warning(f"Episode {e}: degenerate prototype mean, first support used")
            grads = encoder.backward(
                model,
                trace,
                np.vstack([step.d_support_theta, step.d_query_theta]),
                np.vstack([step.d_support_gamma, step.d_query_gamma]),
            )
            grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            optimizer.step(model.params, grads)

            record = EpisodeMetrics(episode=e, loss=step.loss, accuracy=step.accuracy, grad_norm=grad_norm)
            result.metrics.append(record)
            if metrics_file is not None:
                metrics_file.write(json.dumps(record.__dict__) + "\n")
            if (e + 1) % schedule.log_every == 0:
                window = result.metrics[-schedule.log_every:]
                logger.info(
                    f"Episode {e + 1}/{schedule.episodes}: "
                    f"loss {np.mean([m.loss for m in window]):.4f}, "
                    f"accuracy {np.mean([m.accuracy for m in window]):.3f}"
                )
    finally:
        if metrics_file is not None:
            metrics_file.close()

    return result


def _quantum_scores(query_thetas, query_gammas, protos: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    proto_angles = [to_angular(CartesianEncoding(p)) for p in protos]
    scores = np.zeros((query_thetas.shape[0], len(proto_angles)))
    for m in range(query_thetas.shape[0]):
        query = AngularEncoding(query_thetas[m], query_gammas[m])
        for c, proto in enumerate(proto_angles):
            scores[m, c] = per_qubit_inversion_test(query, proto, shots, int(rng.integers(0, 2 ** 63)))
    return scores


def evaluate(model: encoder.EncoderModel, dataset: LabeledDataset, n_way: int, k_shot: int, q_queries: int,
             episodes: int, mode: EvaluationMode = EvaluationMode(), seed: int = 0,
             similarity: str = "pmef_train") -> EvaluationResult:
    """
    Mean episode accuracy with a 95% interval of 1.96 * sd / sqrt(episodes).

    `seed` drives episode sampling only, so classical and quantum runs with the
    same seed see the same episodes; shot noise comes from mode.seed.
    Quantum mode always scores with the per-qubit inversion test, the shot
    estimate of the additive similarity, whatever `similarity` names.
    """
    if episodes < 2:
        raise ArgumentError(f"evaluation needs at least 2 episodes, got {episodes}")
    if similarity not in SIMILARITIES:
        raise ArgumentError(f"unknown similarity '{similarity}', expected one of {SIMILARITIES}")
    if mode.kind == "quantum" and similarity != "pmef_train":
        logger.warning(f"Quantum evaluation scores with the per-qubit sum; similarity '{similarity}' is ignored")
    episode_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "episodes.eval")))
    shot_rng = np.random.Generator(np.random.PCG64(mode.seed))

    accuracies = np.zeros(episodes)
    for e in range(episodes):
        episode = sample_episode(dataset, n_way, k_shot, q_queries, episode_rng)
        enc, _ = _encode_episode(model, episode)
        support_points = angles_to_points(enc.support_thetas, enc.support_gammas)
        protos = np.stack([
            spherical_mean(support_points[enc.support_labels == c])[0] for c in range(n_way)
        ])
        if mode.kind == "classical":
            values = ckf_values(angles_to_points(enc.query_thetas, enc.query_gammas)[:, None], protos[None])
            scores = values.sum(axis=-1) if similarity == "pmef_train" else np.prod(values, axis=-1)
        else:
            scores = _quantum_scores(enc.query_thetas, enc.query_gammas, protos, mode.shots, shot_rng)
        accuracies[e] = np.mean(np.argmax(scores, axis=1) == enc.query_labels)

    mean = float(np.mean(accuracies))
    interval = float(1.96 * np.std(accuracies, ddof=1) / math.sqrt(episodes))
    logger.info(f"Evaluation ({mode.kind}) over {episodes} episodes: {mean:.4f} ± {interval:.4f}")
    return EvaluationResult(mode=mode.kind, mean_accuracy=mean, interval=interval, accuracies=accuracies)
