"""Answer-set metrics (Hit@1, MRR, macro F1), latency aggregation and reports."""
from __future__ import annotations

import json
import logging
import os
import random
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Collection, Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

# Published full-scale results of the method with a GPT-4 agent; metadata only.
REFERENCE_RESULTS = {
    "hit1": {"primekg": 0.2968, "mag": 0.4316, "amazon": 0.4586},
    "macro_f1": {"primekg": 0.2898, "mag": 0.4294, "amazon": 0.4542},
    "mrr": {"primekg": 0.3102, "mag": 0.5024, "amazon": 0.5568},
    "latency_s": {"primekg": (28.19, 2.04), "mag": (25.48, 1.77), "amazon": (18.74, 1.34)},
}


@dataclass(frozen=True)
class EvalQuestion:
    id: str
    text: str
    gold: frozenset[str]
    split: str = "test"

    def __post_init__(self):
        if not self.gold:
            raise ValueError(f"question {self.id!r} has no gold answers")


def load_dataset(path: str | os.PathLike, split: str | None = None) -> list[EvalQuestion]:
    """Read ``{id, question, answers, split}`` lines, optionally keeping one split."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                q = EvalQuestion(str(rec["id"]), rec["question"], frozenset(map(str, rec["answers"])), rec.get("split", "test"))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            if split is None or q.split == split:
                out.append(q)
    return out


def write_dataset(questions: Iterable[EvalQuestion], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            rec = {"id": q.id, "question": q.text, "answers": sorted(q.gold), "split": q.split}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def hit_at_1(predicted: Sequence[str], gold: Collection[str]) -> int:
    return int(bool(predicted) and predicted[0] in gold)


def mrr(predicted: Sequence[str], gold: Collection[str]) -> float:
    for rank, p in enumerate(predicted, start=1):
        if p in gold:
            return 1.0 / rank
    return 0.0


def f1(predicted: Collection[str], gold: Collection[str]) -> float:
    pred, gold = set(predicted), set(gold)
    overlap = len(pred & gold)
    if not pred or not overlap:
        return 0.0
    precision, recall = overlap / len(pred), overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


def macro_f1(predicted: Sequence[Collection[str]], gold: Sequence[Collection[str]]) -> float:
    """Per-question F1 averaged over questions."""
    if len(predicted) != len(gold):
        raise ValueError("prediction and gold lists are not aligned")
    if not gold:
        return 0.0
    return sum(f1(p, g) for p, g in zip(predicted, gold)) / len(gold)


@dataclass
class EvalResult:
    hit1: float
    mrr: float
    macro_f1: float
    mean_latency_s: float
    std_latency_s: float
    n: int
    per_question: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_question")
        return d


def _answers(outcome: Any) -> list[str]:
    return list(outcome.answers if hasattr(outcome, "answers") else outcome)


def _evaluate_one(q: EvalQuestion, pipeline: Callable[[EvalQuestion], Any]) -> dict:
    start = time.perf_counter()
    try:
        outcome = pipeline(q)
        error = None
    except Exception as exc:  # a failing question scores zero, the run continues
        log.warning("question %s failed: %s", q.id, exc)
        outcome, error = None, f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    predicted = _answers(outcome) if outcome is not None else []
    latency = getattr(outcome, "latency", None)
    return {
        "id": q.id,
        "predicted": predicted,
        "gold": sorted(q.gold),
        "hit1": hit_at_1(predicted, q.gold),
        "rr": mrr(predicted, q.gold),
        "f1": f1(predicted, q.gold),
        "latency_s": float(latency) if latency is not None else elapsed,
        "status": getattr(outcome, "status", "finished") if error is None else "error",
        "rounds_used": getattr(outcome, "rounds_used", None),
        "error": error,
    }


def aggregate(records: Sequence[Mapping]) -> EvalResult:
    n = len(records)
    if not n:
        raise ValueError("empty dataset")
    latencies = [r["latency_s"] for r in records]
    return EvalResult(
        hit1=sum(r["hit1"] for r in records) / n,
        mrr=sum(r["rr"] for r in records) / n,
        macro_f1=sum(r["f1"] for r in records) / n,
        mean_latency_s=statistics.fmean(latencies),
        std_latency_s=statistics.stdev(latencies) if n > 1 else 0.0,
        n=n,
        per_question=list(records),
    )


def run_eval(
    dataset: Sequence[EvalQuestion],
    pipeline: Callable[[EvalQuestion], Any],
    parallelism: int = 1,
    seed: int = 0,
    limit: int | None = None,
) -> EvalResult:
    """Evaluate ``pipeline`` on every question (or a seeded sample of ``limit``).

    Per-question latency is the outcome's own ``latency`` when it has one,
    else wall-clock time around the call. Latency spread is the sample
    standard deviation.
    """
    if not dataset:
        raise ValueError("empty dataset")
    questions = list(dataset)
    if limit is not None and limit < len(questions):
        questions = random.Random(seed).sample(questions, limit)
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(lambda q: _evaluate_one(q, pipeline), questions))
    else:
        records = [_evaluate_one(q, pipeline) for q in questions]
    return aggregate(records)


def format_table(results: Mapping[str, EvalResult], method: str = "semiqa") -> str:
    """Plain-text table with one column per dataset, rows per metric."""
    names = list(results)
    width = max([len(method) + 10, 14] + [len(n) + 2 for n in names])
    head = "".ljust(width) + "".join(n.ljust(width) for n in names)
    rows = [head]
    for label, fmt in (
        ("Hit@1", lambda r: f"{r.hit1:.4f}"),
        ("MRR", lambda r: f"{r.mrr:.4f}"),
        ("macro F1", lambda r: f"{r.macro_f1:.4f}"),
        ("time (s)", lambda r: f"{r.mean_latency_s:.2f}±{r.std_latency_s:.2f}"),
    ):
        rows.append(f"{method} {label}".ljust(width) + "".join(fmt(results[n]).ljust(width) for n in names))
    return "\n".join(rows)


def write_report(
    result: EvalResult,
    out_dir: str | os.PathLike,
    dataset_name: str = "dataset",
    header: Mapping | None = None,
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"dataset": dataset_name, **result.summary(), "header": dict(header or {}), "reference": REFERENCE_RESULTS}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, ensure_ascii=False), encoding="utf-8")
    with (out / "per_question.jsonl").open("w", encoding="utf-8") as fh:
        for rec in result.per_question:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    (out / "table.txt").write_text(format_table({dataset_name: result}) + "\n", encoding="utf-8")
    return out
