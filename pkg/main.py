import argparse
import logging
import sys
from typing import List, Optional, Tuple

import numpy as np

import encoder
from circuit_export import to_circuit, write_qasm
from config import RunConfig, derive_seed, load_config, log_level
from data import LabeledDataset, filter_classes, load_idx_pair, preprocess, split, synth_blobs
from errors import ArgumentError, ConfigurationError, QPMeLError
from trainer import EvaluationMode, evaluate, train
from verification import FAULTS, run_suites

logger = logging.getLogger(__name__)


def setup_logging():
    level = getattr(logging, log_level(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )


def build_datasets(cfg: RunConfig) -> Tuple[LabeledDataset, LabeledDataset]:
    """Train/test datasets after class filtering, splitting and preprocessing."""
    source_cfg = cfg.dataset
    split_seed = derive_seed(cfg.seed, "data.split")
    classes = source_cfg.selected_classes()

    if source_cfg.source == "synthetic":
        s = source_cfg.synthetic
        full = synth_blobs(s.n_classes, s.dim, s.per_class, s.separation, s.noise_sd,
                           derive_seed(cfg.seed, "data.synthetic"))
        if classes:
            full = filter_classes(full, classes)
        train_ds, test_ds = split(full, source_cfg.test_fraction, split_seed)
    else:
        train_ds = load_idx_pair(source_cfg.images, source_cfg.labels)
        if classes:
            train_ds = filter_classes(train_ds, classes)
        if source_cfg.test_images is not None:
            test_ds = load_idx_pair(source_cfg.test_images, source_cfg.test_labels)
            if classes:
                test_ds = filter_classes(test_ds, classes)
        else:
            train_ds, test_ds = split(train_ds, source_cfg.test_fraction, split_seed)

    for step in source_cfg.preprocessing:
        if step.mode == "standardize":
            train_ds = preprocess(train_ds, "standardize")
            test_ds = preprocess(test_ds, "standardize", stats=train_ds.standardization)
        else:
            train_ds = preprocess(train_ds, step.mode, step.factor)
            test_ds = preprocess(test_ds, step.mode, step.factor)
    return train_ds, test_ds


def _check_input_width(cfg: RunConfig, ds: LabeledDataset):
    if cfg.encoder.layer_dims[0] != ds.feature_dim:
        raise ConfigurationError(
            f"encoder.layer_dims[0] = {cfg.encoder.layer_dims[0]} but preprocessed features have {ds.feature_dim} dimensions"
        )


def _check_checkpoint(cfg: RunConfig, model: encoder.EncoderModel):
    if model.num_qubits != cfg.encoder.num_qubits:
        raise ConfigurationError(
            f"checkpoint encodes {model.num_qubits} qubits, config expects {cfg.encoder.num_qubits}"
        )
    if list(model.layer_dims) != list(cfg.encoder.layer_dims):
        raise ConfigurationError(
            f"checkpoint layer_dims {list(model.layer_dims)} differ from config {cfg.encoder.layer_dims}"
        )


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)

    print("Step 1: Loading dataset...")
    train_ds, test_ds = build_datasets(cfg)
    _check_input_width(cfg, train_ds)
    print(f"✓ Dataset ready: {train_ds.num_samples} training / {test_ds.num_samples} held-out samples, "
          f"{len(train_ds.classes)} classes, {train_ds.feature_dim} features")

    print("\nStep 2: Initializing encoder...")
    model = encoder.init(cfg.encoder.layer_dims, cfg.encoder.num_qubits,
                         derive_seed(cfg.seed, "encoder.init"), cfg.encoder.activation)
    print(f"✓ Encoder initialized: {model.parameter_count} parameters, {model.num_qubits} qubits")

    t = cfg.training
    print(f"\nStep 3: Training {t.n_way}-way {t.k_shot}-shot for {t.episodes} episodes...")
    result = train(model, train_ds, t, cfg.seed, metrics_path=cfg.output.metrics)
    if result.metrics:
        window = result.metrics[-t.log_every:]
        accuracy = float(np.mean([m.accuracy for m in window]))
        print(f"✓ Training finished, final training accuracy {accuracy:.4f} (last {len(window)} episodes)")
    else:
        print("✓ No training episodes requested, encoder left at initialization")
    print(f"  - Metrics: {cfg.output.metrics}")

    print("\nStep 4: Saving checkpoint...")
    path = encoder.save_checkpoint(result.model, cfg.output.checkpoint)
    print(f"✓ Checkpoint saved at {path}")

    if cfg.output.qasm:
        encoding, _ = encoder.forward(result.model, test_ds.features[0])
        qasm_path = write_qasm(to_circuit(encoding), cfg.output.qasm)
        print(f"✓ Circuit for held-out sample 0 written to {qasm_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    model = encoder.load_checkpoint(args.checkpoint)
    _check_checkpoint(cfg, model)

    print("Step 1: Loading dataset...")
    _, test_ds = build_datasets(cfg)
    _check_input_width(cfg, test_ds)
    print(f"✓ Evaluation set ready: {test_ds.num_samples} samples")

    n_way, k_shot, q_queries = cfg.eval_shape()
    ev = cfg.evaluation
    kinds = ["classical", "quantum"] if ev.mode == "both" else [ev.mode]
    print(f"\nStep 2: Evaluating {n_way}-way {k_shot}-shot over {ev.episodes} episodes...")
    for kind in kinds:
        mode = EvaluationMode(kind=kind, shots=ev.shots if kind == "quantum" else 0,
                              seed=derive_seed(cfg.seed, "shots.eval"))
        result = evaluate(model, test_ds, n_way, k_shot, q_queries, ev.episodes, mode,
                          seed=cfg.seed, similarity=cfg.training.similarity)
        print(f"✓ {kind}: {result.mean_accuracy:.4f} ± {result.interval:.4f}")
    return 0


def cmd_verify(args) -> int:
    print("Running verification suites...")
    results = run_suites(args.inject_fault)
    for r in results:
        mark = "✓" if r.passed else "✗"
        print(f"{mark} {r.name}: {r.detail} [{r.checks} checks]")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"\n{len(failed)} suite(s) failed: {', '.join(failed)}")
        return 1
    print("\n✓ All suites passed")
    return 0


def _parse_features(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ArgumentError(f"--features must be comma separated numbers, got '{text}'")


def cmd_export(args) -> int:
    model = encoder.load_checkpoint(args.checkpoint)
    if args.features is not None:
        x = _parse_features(args.features)
    else:
        if args.config is None or args.index is None:
            raise ArgumentError("export needs --features or both --config and --index")
        cfg = load_config(args.config, args.set)
        _check_checkpoint(cfg, model)
        _, test_ds = build_datasets(cfg)
        if not 0 <= args.index < test_ds.num_samples:
            raise ArgumentError(f"--index {args.index} is outside the {test_ds.num_samples} held-out samples")
        x = test_ds.features[args.index]

    encoding, _ = encoder.forward(model, x)
    path = write_qasm(to_circuit(encoding), args.output)
    print(f"✓ Circuit with {2 * encoding.num_qubits} gates written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpmel", description="Quantum projective metric learning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an encoder from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out episodes")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("verify", help="run the kernel, gradient and circuit self-checks")
    p.add_argument("--inject-fault", choices=sorted(FAULTS), default=None)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("export", help="write the encoding circuit of one sample as OpenQASM 2.0")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features")
    p.add_argument("--config")
    p.add_argument("--index", type=int)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return args.handler(args)
    except (QPMeLError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
