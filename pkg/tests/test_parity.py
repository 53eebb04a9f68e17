import numpy as np
import numpy.testing as npt
import pytest

from subtasklab.numerics import make_rng
from subtasklab.parity import (
    ParityInstance,
    ParityTask,
    TaskError,
    all_inputs,
    final_parity,
    format_line,
    parse_line,
    sample_example,
    sample_subset,
    train_sequence,
    tree_targets,
    validate_dims,
)


def test_d4_example():
    inst = ParityInstance(d=4, subset=(1, 3))
    x = (1, 0, 1, 1)
    assert inst.T == 4
    assert tree_targets(x, inst) == (1,)
    assert final_parity(x, inst) == 1
    seq = train_sequence(x, inst)
    assert seq.z == (1, 0, 1, 1)
    assert seq.targets == (1,)


def test_d8_example():
    inst = ParityInstance(d=8, subset=(1, 2, 3, 4))
    x = (1, 0, 1, 1, 0, 0, 0, 0)
    assert inst.T == 10
    assert tree_targets(x, inst) == (-1, 1, -1)
    assert final_parity(x, inst) == -1
    seq = train_sequence(x, inst)
    assert seq.z == (1, 0, 1, 1, 0, 0, 0, 0, 0, 1)
    assert len(seq.targets) == seq.T - inst.d + 1


@pytest.mark.parametrize("d", [4, 8, 16])
def test_root_equals_final_parity(d):
    inst = sample_subset(d, make_rng(d))
    x = all_inputs(d) if d <= 8 else make_rng(1).integers(0, 2, size=(256, d))
    batch = ParityTask(inst).encode(x)
    expected = np.where(x[:, inst.subset0].sum(axis=1) % 2 == 0, 1.0, -1.0)
    npt.assert_array_equal(batch.finals, expected)
    assert batch.T == 3 * d // 2 - 2


@pytest.mark.parametrize("d", [0, 2, 6, 12])
def test_invalid_dims(d):
    with pytest.raises(TaskError):
        validate_dims(d)
    with pytest.raises(TaskError):
        sample_subset(d, make_rng(0))


def test_subset_validation():
    with pytest.raises(TaskError):
        ParityInstance(d=4, subset=(3, 1))
    with pytest.raises(TaskError):
        ParityInstance(d=4, subset=(1, 5))
    with pytest.raises(TaskError):
        ParityInstance(d=4, subset=(1,))


def test_wrong_input_length():
    inst = ParityInstance(d=4, subset=(1, 2))
    with pytest.raises(TaskError):
        final_parity((1, 0, 1), inst)


def test_sample_subset_is_sorted_and_reproducible():
    a = sample_subset(16, make_rng(5))
    b = sample_subset(16, make_rng(5))
    assert a == b
    assert list(a.subset) == sorted(a.subset)
    assert len(a.subset) == 8


def test_unsupervised_task_has_one_target():
    inst = ParityInstance(d=8, subset=(2, 4, 6, 8))
    batch = ParityTask(inst, supervised=False).encode(all_inputs(8))
    assert batch.T == 8
    assert batch.targets.shape == (256, 1)
    npt.assert_array_equal(batch.z, batch.x)


def test_line_format():
    inst = ParityInstance(d=4, subset=(1, 3))
    seq = train_sequence((1, 0, 0, 1), inst)
    line = format_line((1, 0, 0, 1), seq)
    assert line == "1001\t-\t-"
    assert parse_line(line) == ((1, 0, 0, 1), (-1,), -1)


@pytest.mark.parametrize("line", ["1001\t-", "10a1\t-\t-", "1001\t*\t-", "\t-\t+"])
def test_bad_lines(line):
    with pytest.raises(TaskError):
        parse_line(line)


def test_sample_example_matches_encoders():
    inst = ParityInstance(d=8, subset=(2, 3, 5, 8))
    x, seq = sample_example(inst, make_rng(4, 1))
    assert len(x) == 8 and set(x) <= {0, 1}
    assert seq == train_sequence(x, inst)
    assert seq.final == final_parity(x, inst)


def test_bits_outside_subset_change_no_target():
    inst = ParityInstance(d=8, subset=(2, 3, 5, 8))
    x = all_inputs(8)
    base = ParityTask(inst).encode(x).targets
    for i in range(1, 9):
        if i in inst.subset:
            continue
        flipped = x.copy()
        flipped[:, i - 1] ^= 1
        npt.assert_array_equal(ParityTask(inst).encode(flipped).targets, base)


def test_targets_depend_only_on_the_prefix():
    inst = ParityInstance(d=8, subset=(1, 4, 6, 7))
    batch = ParityTask(inst).encode(all_inputs(8))
    for k, t in enumerate(range(inst.d, inst.T + 1)):
        seen: dict[tuple[int, ...], float] = {}
        for row in range(batch.size):
            prefix = tuple(int(b) for b in batch.z[row, :t])
            assert seen.setdefault(prefix, batch.targets[row, k]) == batch.targets[row, k]


def test_sample_example_is_uniform_and_balanced():
    inst = ParityInstance(d=8, subset=(1, 2, 5, 6))
    rng = make_rng(11)
    xs, finals = [], []
    for _ in range(10_000):
        x, seq = sample_example(inst, rng)
        xs.append(x)
        finals.append(seq.final)
    means = np.asarray(xs).mean(axis=0)
    assert np.all((means > 0.45) & (means < 0.55))
    assert 0.45 < np.mean(np.asarray(finals) == 1) < 0.55


def test_sample_example_is_deterministic():
    inst = ParityInstance(d=8, subset=(1, 2, 5, 6))
    assert sample_example(inst, make_rng(3)) == sample_example(inst, make_rng(3))
