import csv
from dataclasses import replace
import io

import pytest

from subtasklab.config import load_config, load_config_text, with_cell
from subtasklab.experiment import (
    ExperimentError,
    RunRecord,
    _mean_2std,
    cmd_gen,
    cmd_report,
    cmd_sweep,
    cmd_train,
    find_runs,
    load_run,
    run_dir_name,
    summary_csv,
    summary_rows,
    supervision_pair,
)
from subtasklab.fileio import read_jsonl
from subtasklab.training import TrainLog


def _cfg(
    out_dir,
    *,
    training="iterations: 20, batch_size: 4, eta: 0.05",
    eval_="eval_every: 10",
    output="",
    sweep="d: [4], supervision: [on, off], seeds: [0, 1]",
):
    return load_config_text(
        f"""
seed: 0
task: {{d: 8, supervision: on}}
model: {{m: 8}}
training: {{{training}}}
eval: {{{eval_}}}
output: {{out_dir: "{out_dir.as_posix()}"{output}}}
sweep: {{{sweep}}}
"""
    )


def _record(**kw):
    base = dict(
        config_digest="x",
        seed=0,
        d=8,
        supervision=True,
        mode="SGD",
        train_scope="ALL_WEIGHTS",
        eta=0.1,
        iterations=100,
        iterations_to_threshold=50,
        grok_step=80,
        grokking_steps=30,
        final_val_accuracy=0.9,
        final_val_bce=0.3,
        test_accuracy=0.9,
        test_tf_losses=(0.0, 0.1, 0.1),
        test_union_bound_slack=0.1,
    )
    base.update(kw)
    return RunRecord(**base)


def test_cmd_train_writes_run_dir(tmp_path):
    cfg = _cfg(tmp_path)
    record = cmd_train(cfg)
    run = tmp_path / "d8_on_seed0"
    for name in ("config.yaml", "train_log.jsonl", "record.json", "final.ckpt", "data/dataset.json"):
        assert (run / name).exists(), name
    assert record.ok
    assert record.iterations == 20
    assert len(record.test_tf_losses) == 3
    assert 0.0 <= record.test_accuracy <= 1.0
    assert load_run(run) == record


def test_cmd_train_is_deterministic(tmp_path):
    cfg = _cfg(tmp_path)
    cmd_train(cfg, tmp_path / "a")
    cmd_train(cfg, tmp_path / "b")
    logs = [TrainLog.from_records(list(read_jsonl(tmp_path / r / "train_log.jsonl"))) for r in ("a", "b")]
    assert logs[0].without_timing() == logs[1].without_timing()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


def test_keep_checkpoints(tmp_path):
    cmd_train(_cfg(tmp_path, output=", keep_checkpoints: true"))
    names = sorted(p.name for p in (tmp_path / "d8_on_seed0" / "ckpt").iterdir())
    assert names == ["step_00000010.ckpt", "step_00000020.ckpt"]


def test_train_from_generated_data(tmp_path):
    cfg = _cfg(tmp_path)
    data = cmd_gen(cfg, tmp_path / "data")
    record = cmd_train(cfg, tmp_path / "run", data_dir=data)
    assert record.ok
    assert not (tmp_path / "run" / "data").exists()


def test_tampered_record_detected(tmp_path):
    cmd_train(_cfg(tmp_path))
    path = tmp_path / "d8_on_seed0" / "record.json"
    path.write_text(path.read_text().replace('"iterations":20', '"iterations":21'))
    with pytest.raises(ExperimentError):
        load_run(path.parent)


def test_sweep_and_report(tmp_path):
    records, summary = cmd_sweep(_cfg(tmp_path))
    assert len(records) == 4
    assert all(r.ok for r in records)
    assert [(r.supervision, r.seed) for r in records] == [(True, 0), (True, 1), (False, 0), (False, 1)]
    rows = list(csv.DictReader(io.StringIO(summary.read_text())))
    assert [(r["d"], r["supervision"]) for r in rows] == [("4", "on"), ("4", "off")]
    assert rows[0]["runs"] == "2"
    before = summary.read_bytes()
    rebuilt = cmd_report([tmp_path], tmp_path / "report")
    assert rebuilt.read_bytes() == before
    assert len(find_runs([tmp_path])) == 4
    stored_on = load_config(tmp_path / "d4_on_seed1" / "config.yaml")
    stored_off = load_config(tmp_path / "d4_off_seed1" / "config.yaml")
    assert supervision_pair(stored_on, stored_off) == (stored_on, stored_off)


def test_parallel_sweep_matches_serial(tmp_path):
    serial, s1 = cmd_sweep(_cfg(tmp_path / "serial"))
    parallel, s2 = cmd_sweep(_cfg(tmp_path / "parallel", sweep="d: [4], supervision: [on, off], seeds: [0, 1], workers: 2"))
    assert [r.test_accuracy for r in serial] == [r.test_accuracy for r in parallel]
    assert s1.read_bytes() == s2.read_bytes()


def test_failed_cell_is_recorded(tmp_path):
    cfg = _cfg(
        tmp_path,
        training="iterations: 10, batch_size: 4",
        eval_="eval_every: 10, val_size: 100, test_size: 100",
        sweep="d: [4, 8], supervision: [on], seeds: [0]",
    )
    records, summary = cmd_sweep(cfg)
    assert [r.status for r in records] == ["failed", "ok"]
    assert "DatasetError" in records[0].error
    rows = list(csv.DictReader(io.StringIO(summary.read_text())))
    assert rows[0]["failed"] == "1" and rows[0]["test_accuracy_mean"] == ""


def test_mean_2std():
    assert _mean_2std([1.0, 3.0]) == (2.0, 2.0)
    assert _mean_2std([]) == (None, None)


def test_best_eta_selected_by_validation_bce():
    records = [
        _record(eta=0.1, seed=0, final_val_bce=0.5),
        _record(eta=0.1, seed=1, final_val_bce=0.5),
        _record(eta=0.01, seed=0, final_val_bce=0.2),
        _record(eta=0.01, seed=1, final_val_bce=0.2),
    ]
    rows = summary_rows(records)
    assert len(rows) == 1
    assert rows[0].eta == 0.01


def test_bce_tie_broken_by_iterations():
    records = [
        _record(eta=0.1, iterations_to_threshold=40),
        _record(eta=0.01, iterations_to_threshold=90),
    ]
    assert summary_rows(records)[0].eta == 0.1


def test_summary_csv_format():
    text = summary_csv([_record(test_accuracy=0.5), _record(seed=1, test_accuracy=1.0)])
    row = next(csv.DictReader(io.StringIO(text)))
    assert row["test_accuracy_mean"] == "0.750000"
    assert row["test_accuracy_2std"] == "0.500000"
    assert row["reached_threshold"] == "2/2"


def test_run_dir_name(tmp_path):
    cfg = _cfg(tmp_path)
    assert run_dir_name(cfg) == "d8_on_seed0"
    assert run_dir_name(cfg, with_eta=True) == "d8_on_seed0_eta0.05"


def test_supervision_pair_rejects_mismatched_runs(tmp_path):
    cfg = _cfg(tmp_path)
    on = with_cell(cfg, d=4, supervision=True, seed=1, eta=0.05)
    off = with_cell(cfg, d=4, supervision=False, seed=1, eta=0.05)
    assert supervision_pair(on, off) == (on, off)
    with pytest.raises(ExperimentError, match="seed"):
        supervision_pair(on, replace(off, seed=2))
    with pytest.raises(ExperimentError):
        supervision_pair(on, with_cell(cfg, d=4, supervision=False, seed=1, eta=0.1))
    with pytest.raises(ExperimentError):
        supervision_pair(off, on)


def test_report_without_runs(tmp_path):
    with pytest.raises(ExperimentError):
        cmd_report([tmp_path], tmp_path / "out")
