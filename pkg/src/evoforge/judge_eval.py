"""Evaluation of trajectory judges against ground-truth outcomes.

Judges are scored as binary classifiers of episode success (confusion
matrix, precision, negative predictive value) and as rankers through the
confidence they attach to a "success" verdict (average precision).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyInput, LengthMismatch, NoPositives


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def _check(a, b, what):
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} {what} for {len(b)} ground-truth labels")
    if not a:
        raise EmptyInput("nothing to score")


def confusion(preds, truth) -> ConfusionMatrix:
    _check(preds, truth, "predictions")
    tp = fp = tn = fn = 0
    for p, t in zip(preds, truth):
        p, t = bool(p), bool(t)
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def precision_npv(m: ConfusionMatrix) -> tuple[float | None, float | None]:
    """(precision, npv); an entry is None when its denominator is zero."""
    precision = m.tp / (m.tp + m.fp) if m.tp + m.fp else None
    npv = m.tn / (m.tn + m.fn) if m.tn + m.fn else None
    return precision, npv


def average_precision(scores, truth) -> float:
    """Mean of precision@k over the ranks k of the positives.

    Ranking is by descending score; ties keep input order, so the result
    depends only on the order of the scores, never on their values.
    """
    _check(scores, truth, "scores")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if truth[i]:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise NoPositives("average precision needs at least one positive")
    return total / hits


# --------------------------------------------------------------------------
# judgment dumps


def _truth_of(rec: dict) -> bool:
    for key in ("success", "correctness", "label"):
        if key in rec:
            return bool(rec[key])
    if "status" in rec:
        return rec["status"] == "success"
    raise KeyError(f"ground-truth record {rec.get('episode_id')!r} has no success field")


def _prediction_of(rec: dict) -> tuple[bool, float]:
    j = rec.get("judgment", rec)
    if j is None:
        raise KeyError(f"record {rec.get('episode_id')!r} has no judgment")
    verdict = bool(j["correctness"] if "correctness" in j else j["Correctness"])
    conf = j.get("confidence", j.get("Confidence"))
    conf = (1.0 if verdict else 0.0) if conf is None else float(conf)
    # confidence is in the stated verdict; turn it into a score for "success"
    score = conf if verdict else 1.0 - conf
    return verdict, score


def read_jsonl(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def score_judge(pred_records, gt_records) -> dict:
    """Match predictions to ground truth by ``episode_id`` and compute every metric."""
    gt = {r["episode_id"]: _truth_of(r) for r in gt_records}
    preds, scores, truth, missing = [], [], [], []
    for r in pred_records:
        eid = r["episode_id"]
        if eid not in gt:
            missing.append(eid)
            continue
        v, s = _prediction_of(r)
        preds.append(v)
        scores.append(s)
        truth.append(gt[eid])
    m = confusion(preds, truth)
    precision, npv = precision_npv(m)
    try:
        ap = average_precision(scores, truth)
    except NoPositives:
        ap = None
    return {
        "n": m.total,
        "confusion": m.as_dict(),
        "precision": precision,
        "npv": npv,
        "average_precision": ap,
        "unmatched": sorted(missing),
    }


def bench_judge(pred_paths, gt_path, csv_path=None) -> dict:
    """Score one or more prediction files; with several, also write an AP curve CSV.

    Files are taken in the given order as increasing amounts of judge
    context (for example, number of intermediate states shown).
    """
    gt = read_jsonl(gt_path)
    reports = []
    for p in pred_paths:
        rep = score_judge(read_jsonl(p), gt)
        rep["file"] = str(p)
        reports.append(rep)
    if len(pred_paths) > 1 and csv_path is not None:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "file", "average_precision", "precision", "npv"])
            for i, rep in enumerate(reports):
                w.writerow([i, rep["file"], rep["average_precision"], rep["precision"], rep["npv"]])
    return reports[0] if len(reports) == 1 else {"reports": reports, "curve_csv": str(csv_path) if csv_path else None}
