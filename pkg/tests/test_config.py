from pathlib import Path

import pytest

from subtasklab.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_digest,
    dump_config,
    load_config,
    load_config_text,
    with_cell,
)

EXAMPLE = Path(__file__).resolve().parents[1] / "experiment.yaml.example"


def test_empty_file_gives_defaults():
    assert load_config_text("") == ExperimentConfig()


def test_example_config_loads():
    cfg = load_config(EXAMPLE)
    assert cfg.task.kind == "parity"
    assert cfg.training.mode in ("SGD", "FP_SGD", "FP_GD")


def test_dump_is_lossless():
    cfg = load_config_text(
        """
seed: 4
task: {d: 16, supervision: off, subset_seed: 9}
model: {m: 64}
training: {mode: FP_SGD, sigma: 0.001, eta: null, iterations: 500}
sweep: {d: [8, 16], etas: [0.01, 0.1], workers: 2}
"""
    )
    assert cfg.task.supervision is False
    assert cfg.training.eta is None
    assert cfg.subset_seed == 9
    again = load_config_text(dump_config(cfg))
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as e:
        load_config_text(
            """
bogus: 1
model: {m: 0}
training: {mode: ADAM, batch_size: "many"}
eval: {threshold: 0.4}
"""
        )
    text = "\n".join(e.value.errors)
    assert "bogus" in text
    assert "model.m" in text
    assert "training.mode" in text
    assert "training.batch_size" in text
    assert "eval.threshold" in text
    assert len(e.value.errors) >= 5


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("task: {d: 12}", "power of two"),
        ("training: {sigma: 0.1}", "SGD mode"),
        ("task: {kind: circuit}", "task.circuit"),
        ("eval: {threshold: 0.9, grok_threshold: 0.8}", "grok_threshold"),
        ("output: {log_level: LOUD}", "log_level"),
        ("seed: -1", "seed"),
        ("- just\n- a list", "mapping"),
        ("task: [1, 2", "YAML"),
    ],
)
def test_invalid_configs(text, fragment):
    with pytest.raises(ConfigError) as e:
        load_config_text(text)
    assert fragment in str(e.value)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/experiment.yaml")


def test_relative_circuit_path_resolved_against_config(tmp_path):
    (tmp_path / "c.circ").write_text("INPUT a\nINPUT b\ng = XOR a b\nOUTPUT g\n")
    path = tmp_path / "experiment.yaml"
    path.write_text("task: {kind: circuit, circuit: c.circ}\n")
    cfg = load_config(path)
    assert cfg.task.circuit == (tmp_path / "c.circ").resolve()


def test_overrides_are_validated():
    cfg = apply_overrides(ExperimentConfig(), {"task.d": 16, "training.eta": 0.2, "seed": 3})
    assert (cfg.task.d, cfg.training.eta, cfg.seed) == (16, 0.2, 3)
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"task.d": 10})
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"training.nope": 1})


def test_with_cell():
    cell = with_cell(ExperimentConfig(), d=16, supervision=False, seed=2, eta=0.3)
    assert (cell.task.d, cell.task.supervision, cell.seed, cell.training.eta) == (16, False, 2, 0.3)


def test_digest_changes_with_content():
    a = ExperimentConfig()
    b = apply_overrides(a, {"model.m": 64})
    assert config_digest(a) != config_digest(b)
