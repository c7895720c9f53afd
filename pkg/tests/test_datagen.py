import ast
import operator
from collections import Counter

import pytest

from ntl.datagen import (
    CapacityError,
    GenSpec,
    gen_addsub,
    gen_copy,
    gen_multiplication,
    generate,
    load_dataset,
    read_split,
    write_dataset,
)
from ntl.numvocab import default_vocabulary

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul}


def exact_eval(question: str) -> int:
    """Independent evaluator: walk the Python AST of the expression in the question."""
    expr = question.removeprefix("What is ").removesuffix("?")

    def walk(node):
        if isinstance(node, ast.BinOp):
            return _OPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        raise AssertionError(f"unexpected node {ast.dump(node)}")

    return walk(ast.parse(expr, mode="eval").body)


def all_samples(splits):
    return [s for samples in splits.values() for s in samples]


def test_multiplication_answers_and_template():
    spec = GenSpec("multiplication", (1, 2), 3, 300, 50, 50, seed=1)
    for s in all_samples(gen_multiplication(spec)):
        a, b = (int(t) for t in s.question.removeprefix("What is ").rstrip("?").split(" * "))
        assert s.question == f"What is {a} * {b}?"
        assert s.answer_value == a * b == exact_eval(s.question)
        assert s.answer == str(a * b)
        assert s.difficulty == (len(str(a)), len(str(b)))
    assert exact_eval("What is 12 * 34?") == 408


def test_addsub_answers_and_examples():
    spec = GenSpec("add_sub", (1, 2), 3, 500, 100, 100, seed=2)
    for s in all_samples(gen_addsub(spec)):
        assert s.answer_value == exact_eval(s.question)
        assert s.answer == str(s.answer_value)
        assert 2 <= len(s.difficulty) <= 4
    assert exact_eval("What is 13 + 54?") == 67
    assert exact_eval("What is 5 - 9?") == -4
    answers = [s.answer_value for s in all_samples(gen_addsub(spec))]
    assert min(answers) < 0


def test_samples_tokenize_without_loss():
    v = default_vocabulary()
    spec = GenSpec("add_sub", (1, 2), 3, 200, 20, 20, seed=3)
    for s in all_samples(generate(spec)):
        assert v.decode(v.encode_text(s.question).ids) == s.question
        assert v.decode(v.encode_text(s.answer).ids) == s.answer


@pytest.mark.parametrize("task", ["multiplication", "add_sub"])
def test_splits_are_disjoint(task):
    splits = generate(GenSpec(task, (1, 2), 3, 2000, 500, 500, seed=4))
    seen = Counter(s.question for s in all_samples(splits))
    assert max(seen.values()) == 1
    assert len(splits["train"]) == 2000 and len(splits["interpolation"]) == 500


def test_extrapolation_samples_need_extra_digits():
    splits = gen_multiplication(GenSpec("multiplication", (1, 5), 6, 200, 200, 500, seed=5))
    assert all(max(s.difficulty) == 6 for s in splits["extrapolation"])
    assert all(max(s.difficulty) <= 5 for s in splits["train"] + splits["interpolation"])
    add = gen_addsub(GenSpec("add_sub", (1, 2), 3, 100, 10, 100, seed=5))
    assert all(max(s.difficulty) == 3 for s in add["extrapolation"])


def test_digit_count_frequencies():
    splits = gen_multiplication(GenSpec("multiplication", (1, 5), 6, 10_000, 0, 0, seed=6))
    counts = Counter(k for s in splits["train"] for k in s.difficulty[:1])
    for k in range(1, 6):
        assert abs(counts[k] / 10_000 - 0.2) <= 0.05


def test_no_leading_zeros():
    splits = generate(GenSpec("multiplication", (1, 3), 4, 500, 0, 100, seed=7))
    for s in all_samples(splits):
        for t in s.question.removeprefix("What is ").rstrip("?").split(" * "):
            assert t == str(int(t))


def test_determinism():
    spec = GenSpec("add_sub", (1, 2), 3, 300, 30, 30, seed=8)
    assert generate(spec) == generate(spec)
    assert generate(spec) != generate(GenSpec("add_sub", (1, 2), 3, 300, 30, 30, seed=9))


def test_capacity_and_spec_errors():
    # 1-digit products: 100 distinct questions
    with pytest.raises(CapacityError):
        generate(GenSpec("multiplication", (1, 1), 2, 90, 20, 0))
    generate(GenSpec("multiplication", (1, 1), 2, 80, 20, 0))
    with pytest.raises(ValueError):
        GenSpec("multiplication", (1, 5), 5)
    with pytest.raises(ValueError):
        GenSpec("multiplication", (3, 2), 5)
    with pytest.raises(ValueError):
        GenSpec("division")
    with pytest.raises(ValueError):
        gen_addsub(GenSpec("multiplication"))


def test_copy_task_has_no_digits():
    samples = gen_copy(300, seed=1)
    assert len({s.question for s in samples}) == 300
    for s in samples:
        assert s.question == f"Copy {s.answer}?"
        assert not any(c.isdigit() for c in s.question + s.answer)
        assert s.answer_value is None
    assert gen_copy(50, seed=1) == gen_copy(50, seed=1)


def test_dataset_files_round_trip(tmp_path):
    spec = GenSpec("add_sub", (1, 2), 3, 50, 10, 10, seed=10)
    splits = generate(spec)
    write_dataset(splits, tmp_path, spec)
    assert load_dataset(tmp_path) == splits
    line = (tmp_path / "train.tsv").read_text().splitlines()[0]
    q, a = line.split("\t")
    assert q == splits["train"][0].question and a == splits["train"][0].answer
    copy = gen_copy(5)
    (tmp_path / "copy.tsv").write_text("".join(f"{s.question}\t{s.answer}\n" for s in copy))
    assert read_split(tmp_path / "copy.tsv") == copy
