import pytest

from subtasklab.main import EXIT_VERIFY, main
from subtasklab.rnn import grad_W
from subtasklab.verify import (
    DEFAULT_CORPUS,
    check_circuit_gate_polys,
    check_circuit_soundness,
    check_corpus_present,
    check_correlation,
    check_fp_gd_oracle,
    check_fp_sgd_matches_sgd,
    check_gradient,
    check_guess_error,
    check_lagrange_tables,
    check_phi_gap,
    check_two_bit_parity,
    check_union_bound,
    check_weight_encoding,
    corpus_circuits,
    run_verify,
)


@pytest.mark.parametrize(
    "check",
    [
        check_two_bit_parity,
        check_lagrange_tables,
        check_weight_encoding,
        check_phi_gap,
        check_guess_error,
        check_fp_sgd_matches_sgd,
        check_fp_gd_oracle,
    ],
)
def test_standalone_checks_pass(check):
    ok, measured = check()
    assert ok, measured


def test_correlation_check():
    ok, measured = check_correlation(d=8, pairs=20)
    assert ok, measured


def test_gradient_check_passes_for_true_gradient():
    ok, measured = check_gradient(grad_W, pairs=2, coords=30)
    assert ok, measured


def test_gradient_check_catches_sign_flip():
    ok, _ = check_gradient(lambda p, z, y: -grad_W(p, z, y), pairs=2, coords=30)
    assert not ok


def test_gradient_check_catches_scaling():
    ok, _ = check_gradient(lambda p, z, y: 1.01 * grad_W(p, z, y), pairs=2, coords=30)
    assert not ok


def test_union_bound_check():
    ok, measured = check_union_bound(seeds=1, iterations=20)
    assert ok, measured


def test_corpus_is_shipped():
    assert DEFAULT_CORPUS.is_dir()
    ok, names = check_corpus_present(DEFAULT_CORPUS)
    assert ok and "adder2.circ" in names


def test_missing_corpus_fails(tmp_path):
    ok, _ = check_corpus_present(tmp_path / "nowhere")
    assert not ok


def test_circuit_checks_over_corpus():
    circuits = corpus_circuits(DEFAULT_CORPUS, random_count=5)
    assert len(circuits) == 4 + 1 + 5
    ok, measured = check_circuit_soundness(circuits, samples=64)
    assert ok, measured
    ok, measured = check_circuit_gate_polys(circuits)
    assert ok, measured


def test_run_verify_reports_failures_without_raising(tmp_path):
    report = run_verify(grad_fn=lambda p, z, y: -grad_W(p, z, y), corpus_dir=tmp_path, quick=True)
    failed = {f"{r.suite}.{r.name}" for r in report.failures}
    assert "gradient.finite_differences" in failed
    assert "circuits.corpus" in failed
    assert not report.passed
    assert report.lines()[-1].endswith("checks passed")


@pytest.mark.slow
def test_full_verify_passes():
    report = run_verify()
    assert report.passed, "\n".join(report.lines())


def test_malformed_corpus_file_is_a_failed_check(tmp_path, capsys):
    (tmp_path / "bad.circ").write_text("INPUT a\ng = NAND a a\nOUTPUT g\n", encoding="utf-8")
    assert main(["verify", "--quick", "--corpus", str(tmp_path)]) == EXIT_VERIFY
    out = capsys.readouterr().out
    corpus_line = next(line for line in out.splitlines() if "circuits.corpus" in line)
    assert corpus_line.startswith("FAIL") and "bad.circ" in corpus_line
    soundness_line = next(line for line in out.splitlines() if "circuits.soundness" in line)
    assert soundness_line.startswith("PASS")
