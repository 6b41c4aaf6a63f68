import hashlib
import json
from pathlib import Path

import pytest

import data
from config import RunConfig, apply_overrides, derive_seed, load_config, log_level
from errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload) if not isinstance(payload, str) else payload)
    return path


def _synthetic(**sections):
    payload = {"seed": 3, "encoder": {"layer_dims": [8, 16], "num_qubits": 4}}
    payload.update(sections)
    return payload


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(7, "encoder.init") == derive_seed(7, "encoder.init")
    assert derive_seed(7, "encoder.init") != derive_seed(7, "episodes.train")
    assert derive_seed(7, "encoder.init") != derive_seed(8, "encoder.init")
    assert 0 <= derive_seed(0, "data.split") < 2 ** 64


def test_load_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, _synthetic()))
    assert cfg.seed == 3
    assert cfg.dataset.source == "synthetic"
    assert cfg.training.learning_rate == 1e-3
    assert cfg.training.temperature == 1.0
    assert cfg.training.similarity == "pmef_train"
    assert cfg.evaluation.episodes == 150
    assert cfg.eval_shape() == (4, 5, 5)


def test_overrides_are_validated(tmp_path):
    path = _write(tmp_path, _synthetic())
    cfg = load_config(path, ["training.episodes=12", "training.similarity=pmef", "evaluation.n_way=3"])
    assert cfg.training.episodes == 12
    assert cfg.training.similarity == "pmef"
    assert cfg.eval_shape() == (3, 5, 5)
    with pytest.raises(ConfigurationError, match="training.episodes"):
        load_config(path, ["training.episodes=-1"])
    with pytest.raises(ConfigurationError):
        load_config(path, ["training.episodes"])


def test_apply_overrides_builds_sections():
    raw = apply_overrides({}, ["dataset.classes=[3,5]", "output.qasm=out/c.qasm"])
    assert raw == {"dataset": {"classes": [3, 5]}, "output": {"qasm": "out/c.qasm"}}


def test_json_syntax_error_reports_position(tmp_path):
    path = _write(tmp_path, '{\n  "seed": 1,\n  "encoder": {"layer_dims": [8,]}\n}')
    with pytest.raises(ConfigurationError, match="line 3, column"):
        load_config(path)


def test_validation_error_names_field(tmp_path):
    path = _write(tmp_path, _synthetic(training={"n_way": 1}))
    with pytest.raises(ConfigurationError, match="training.n_way"):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.json"):
        load_config(tmp_path / "nope.json")


def test_missing_dataset_file_is_named(tmp_path):
    payload = _synthetic(dataset={"source": "idx", "images": "imgs.idx", "labels": "lbls.idx"})
    with pytest.raises(FileNotFoundError, match="imgs.idx"):
        load_config(_write(tmp_path, payload))


def test_dataset_paths_resolve_against_data_dir(tmp_path, idx_dir, monkeypatch):
    payload = _synthetic(dataset={"source": "idx", "images": "images.idx", "labels": "labels.idx"})
    (tmp_path / "configs").mkdir()
    path = _write(tmp_path / "configs", payload)
    monkeypatch.setenv("QPMEL_DATA_DIR", str(idx_dir))
    cfg = load_config(path)
    assert Path(cfg.dataset.images) == idx_dir / "images.idx"


class _Response:
    def __init__(self, content):
        self.content = content

    def raise_for_status(self):
        pass


def test_missing_dataset_file_is_downloaded(tmp_path, idx_dir, monkeypatch):
    payload = (idx_dir / "labels.idx").read_bytes()
    calls = []

    def fake_get(url, timeout):
        calls.append(url)
        return _Response(payload)

    monkeypatch.setattr(data.requests, "get", fake_get)
    monkeypatch.setenv("QPMEL_DATA_DIR", str(idx_dir))
    download = {"url": "https://example.org/train-labels.idx", "sha256": hashlib.sha256(payload).hexdigest()}
    config = _synthetic(dataset={
        "source": "idx",
        "images": "images.idx",
        "labels": "cache/train-labels.idx",
        "fetch": {"labels": download},
    })
    cfg = load_config(_write(tmp_path, config))
    assert Path(cfg.dataset.labels) == idx_dir / "cache" / "train-labels.idx"
    assert Path(cfg.dataset.labels).read_bytes() == payload
    assert calls == [download["url"]]

    load_config(_write(tmp_path, config))
    assert len(calls) == 1


@pytest.mark.parametrize(
    "sections",
    [
        {"dataset": {"preset": "mnist-01", "classes": [0, 1]}},
        {"dataset": {"preset": "mnist-99"}},
        {"dataset": {"source": "idx", "images": "a"}},
        {"encoder": {"layer_dims": [5, 16], "num_qubits": 4}},
        {"training": {"n_way": 5}},
        {"training": {"similarity": "cosine"}},
        {"evaluation": {"episodes": 1}},
        {"dataset": {"fetch": {"images": {"url": "https://example.org/a", "sha256": "0" * 64}}}},
        {"dataset": {"source": "idx", "images": "a", "labels": "b",
                     "fetch": {"labels": {"url": "https://example.org/b", "sha256": "xyz"}}}},
    ],
)
def test_invalid_configs(tmp_path, sections):
    with pytest.raises(ConfigurationError):
        load_config(_write(tmp_path, _synthetic(**sections)))


def test_shipped_synthetic_config_is_valid():
    cfg = load_config(CONFIGS / "synthetic_blobs.json")
    assert cfg.encoder.num_qubits == 4
    assert cfg.training.n_way == 4 and cfg.training.k_shot == 5


@pytest.mark.parametrize(
    "name, classes",
    [
        ("mnist_01.json", [0, 1]),
        ("mnist_35.json", [3, 5]),
        ("mnist_36.json", [3, 6]),
        ("mnist_012.json", [0, 1, 2]),
        ("mnist_356.json", [3, 5, 6]),
        ("mnist_fewshot.json", None),
    ],
)
def test_shipped_mnist_configs_validate(name, classes):
    raw = json.loads((CONFIGS / name).read_text())
    cfg = RunConfig.model_validate(raw)
    assert cfg.encoder.layer_dims == [196, 128, 64]
    assert cfg.encoder.num_qubits == 5
    assert cfg.dataset.selected_classes() == classes
    assert cfg.training.n_way == (len(classes) if classes else 5)
    assert cfg.training.k_shot == 5


def test_log_level_from_environment(monkeypatch):
    monkeypatch.setenv("QPMEL_LOG_LEVEL", "debug")
    assert log_level() == "DEBUG"
    monkeypatch.delenv("QPMEL_LOG_LEVEL")
    assert log_level() == "INFO"
