from pathlib import Path

from subtasklab.main import (
    EXIT_ABORT,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VERIFY,
    build_parser,
    cmd_compile,
    cmd_verify,
    main,
    overrides_from_args,
)

CORPUS = Path(__file__).resolve().parents[1] / "assets" / "circuits"


def test_flags_map_to_config_keys():
    args = build_parser().parse_args(
        ["train", "--d", "16", "--supervision", "off", "--mode", "fp-sgd", "--scope", "w-only", "--sigma", "0.01"]
    )
    o = overrides_from_args(args)
    assert o["task.d"] == 16
    assert o["task.supervision"] is False
    assert o["training.mode"] == "FP_SGD"
    assert o["training.train_scope"] == "W_ONLY"
    assert o["training.sigma"] == 0.01
    assert "training.eta" not in o


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK


def test_unknown_command_is_usage_error():
    assert main(["frobnicate"]) == EXIT_USAGE


def test_config_error_exit_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["train", "--d", "12"]) == EXIT_USAGE


def test_missing_config_file(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "missing.yaml")]) == EXIT_USAGE


def test_sgd_with_sigma_rejected(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["train", "--mode", "sgd", "--sigma", "0.1"]) == EXIT_USAGE


def test_compile_prints_trace(capsys):
    assert main(["compile", str(CORPUS / "adder2.circ"), "--bits", "1110"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "T = 9" in out
    assert "c1=+" in out
    assert "final:  +1" in out


def test_compile_bad_bits():
    assert main(["compile", str(CORPUS / "xor.circ"), "--bits", "101"]) == EXIT_USAGE


def test_compile_missing_file(tmp_path):
    assert main(["compile", str(tmp_path / "none.circ")]) == EXIT_USAGE


def test_train_and_report(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    argv = ["train", "--d", "4", "--m", "8", "--iters", "20", "--out", str(tmp_path / "run")]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    assert "test_accuracy:" in out
    assert main(["report", str(tmp_path / "run"), "--out", str(tmp_path / "rep")]) == EXIT_OK
    assert (tmp_path / "rep" / "summary.csv").exists()


def test_gen_writes_splits(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["gen", "--d", "8", "--out", str(tmp_path / "data")]) == EXIT_OK
    assert {p.name for p in (tmp_path / "data").iterdir()} >= {"train.txt", "val.txt", "test.txt", "dataset.json"}


def test_report_without_runs_is_runtime_error(tmp_path):
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "rep")]) == EXIT_ABORT


def test_compile_xor_single_target():
    lines = cmd_compile(str(CORPUS / "xor.circ"), "10")
    assert "z:      10" in lines
    assert "labels: y=+" in lines
    assert "# topological order (T = 3)" in lines


def test_verify_empty_corpus_exits_2(tmp_path):
    report = cmd_verify(tmp_path, quick=True)
    assert not report.passed
    assert main(["verify", "--quick", "--corpus", str(tmp_path)]) == EXIT_VERIFY
