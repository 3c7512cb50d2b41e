import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from evoforge.errors import LengthMismatch, NoPositives
from evoforge.judge_eval import (ConfusionMatrix, average_precision, bench_judge, confusion, precision_npv,
                                 score_judge)

T, F = True, False


def test_confusion_examples():
    assert confusion([T, F], [T, F]) == ConfusionMatrix(1, 0, 1, 0)
    m = confusion([T, T, T, F, F, F, F, F, F, T], [T, T, T, T, F, F, F, F, F, F])
    assert m == ConfusionMatrix(3, 1, 5, 1)
    with pytest.raises(LengthMismatch):
        confusion([T], [T, F])


def test_precision_npv_examples():
    assert precision_npv(ConfusionMatrix(3, 1, 5, 1)) == (0.75, 5 / 6)
    assert precision_npv(ConfusionMatrix(0, 0, 3, 1))[0] is None
    assert precision_npv(confusion([T, F], [T, F])) == (1.0, 1.0)


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.7], [T, F, T]) == (1 + 2 / 3) / 2
    assert average_precision([0.9, 0.8, 0.1, 0.0], [T, T, F, F]) == 1.0
    for n in (1, 5, 17):
        assert average_precision(list(range(n, 0, -1)), [F] * (n - 1) + [T]) == pytest.approx(1 / n)
    with pytest.raises(NoPositives):
        average_precision([0.3, 0.2], [F, F])


def _brute_ap(scores, truth):
    ranked = [t for _, _, t in sorted(zip([-s for s in scores], range(len(scores)), truth))]
    precisions = [sum(ranked[: k + 1]) / (k + 1) for k, t in enumerate(ranked) if t]
    return sum(precisions) / len(precisions)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=30))
def test_ap_matches_brute_force(pairs):
    scores, truth = [p[0] for p in pairs], [p[1] for p in pairs]
    if not any(truth):
        return
    assert average_precision(scores, truth) == pytest.approx(_brute_ap(scores, truth))


def _dump(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def test_score_and_bench(tmp_path):
    gt = [{"episode_id": f"e{i}", "success": i % 2 == 0} for i in range(6)]
    pred = [{"episode_id": f"e{i}", "judgment": {"correctness": i < 3, "confidence": 0.9}} for i in range(6)]
    pred.append({"episode_id": "ghost", "judgment": {"correctness": True}})
    rep = score_judge(pred, gt)
    assert rep["confusion"] == {"tp": 2, "fp": 1, "tn": 2, "fn": 1}
    assert rep["unmatched"] == ["ghost"]
    _dump(tmp_path / "gt.jsonl", gt)
    _dump(tmp_path / "a.jsonl", pred)
    _dump(tmp_path / "b.jsonl", [{"episode_id": r["episode_id"], "Correctness": r["success"]} for r in gt])
    out = bench_judge([tmp_path / "a.jsonl", tmp_path / "b.jsonl"], tmp_path / "gt.jsonl", tmp_path / "ap.csv")
    assert out["reports"][1]["precision"] == 1.0
    rows = list(csv.reader(open(tmp_path / "ap.csv")))
    assert len(rows) == 3
