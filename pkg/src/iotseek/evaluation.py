"""Evaluation harness: intent routing accuracy and query latency.

The bundled case file holds 25 long-form queries with the service each one
is really asking for, plus the top-3 service list published for that query.
``run_intent_eval`` replays them through any routing callable and reports
where the intended service landed. ``check_bookkeeping`` verifies the
report is internally consistent with the raw predictions — the accuracy
numbers themselves depend on which embedding provider is plugged in.
"""

from __future__ import annotations

import importlib.resources
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .model import canonical_service_name


@dataclass(frozen=True)
class EvalCase:
    case_id: int
    intent: str
    query: str
    published_top_k: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "intent", canonical_service_name(self.intent))
        object.__setattr__(
            self,
            "published_top_k",
            tuple(canonical_service_name(s) for s in self.published_top_k),
        )


def load_intent_cases(path: str | Path | None = None) -> list[EvalCase]:
    if path is None:
        ref = importlib.resources.files("iotseek.data") / "intent_cases.json"
        raw = json.loads(ref.read_text())
    else:
        raw = json.loads(Path(path).read_text())
    return [
        EvalCase(
            case_id=int(c["id"]),
            intent=c["intent"],
            query=c["query"],
            published_top_k=tuple(c["published_top_k"]),
        )
        for c in raw["cases"]
    ]


def intent_matches(intent: str, service: str) -> bool:
    """Exact canonical match, or containment either way ("furniture store"
    counts when the list offers "antique furniture store")."""
    a, b = canonical_service_name(intent), canonical_service_name(service)
    return a == b or a in b or b in a


def rank_of_intent(intent: str, predicted: Sequence[str]) -> int | None:
    for pos, name in enumerate(predicted, start=1):
        if intent_matches(intent, name):
            return pos
    return None


@dataclass
class EvalRow:
    case_id: int
    intent: str
    predicted: list[str]
    rank: int | None
    published_rank: int | None

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.case_id,
            "intent": self.intent,
            "predicted": list(self.predicted),
            "rank": self.rank,
            "published_rank": self.published_rank,
        }


@dataclass
class EvalReport:
    k: int
    rows: list[EvalRow] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.rows)

    @property
    def top1_hits(self) -> int:
        return sum(1 for r in self.rows if r.rank == 1)

    @property
    def topk_hits(self) -> int:
        return sum(1 for r in self.rows if r.rank is not None and r.rank <= self.k)

    def to_json(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "total": self.total,
            "top1_hits": self.top1_hits,
            "topk_hits": self.topk_hits,
            "rows": [r.to_json() for r in self.rows],
        }

    def format_table(self) -> str:
        lines = [f"{'id':>3}  {'rank':>4}  intent -> predicted"]
        for r in self.rows:
            rank = str(r.rank) if r.rank is not None else "-"
            lines.append(f"{r.case_id:>3}  {rank:>4}  {r.intent} -> {r.predicted}")
        lines.append(
            f"top-1 {self.top1_hits}/{self.total}   top-{self.k} {self.topk_hits}/{self.total}"
        )
        return "\n".join(lines)


RouteFn = Callable[[str, int], Sequence[tuple[str, float]]]


def run_intent_eval(route: RouteFn, cases: Sequence[EvalCase], k: int = 3) -> EvalReport:
    report = EvalReport(k=k)
    for case in cases:
        predicted = [name for name, _sim in route(case.query, k)]
        report.rows.append(
            EvalRow(
                case_id=case.case_id,
                intent=case.intent,
                predicted=predicted,
                rank=rank_of_intent(case.intent, predicted),
                published_rank=rank_of_intent(case.intent, case.published_top_k),
            )
        )
    return report


def check_bookkeeping(report: EvalReport, cases: Sequence[EvalCase]) -> list[str]:
    """Cross-check every recorded rank against the raw prediction lists.

    Returns a list of discrepancies; empty means the ledger adds up.
    """
    problems: list[str] = []
    by_id = {c.case_id: c for c in cases}
    if sorted(by_id) != sorted(r.case_id for r in report.rows):
        problems.append("report rows do not cover exactly the case ids")
    for row in report.rows:
        case = by_id.get(row.case_id)
        if case is None:
            continue
        expect = rank_of_intent(case.intent, row.predicted)
        if expect != row.rank:
            problems.append(f"case {row.case_id}: stored rank {row.rank}, recomputed {expect}")
        if len(row.predicted) > report.k:
            problems.append(f"case {row.case_id}: {len(row.predicted)} predictions for k={report.k}")
        if rank_of_intent(case.intent, case.published_top_k) != row.published_rank:
            problems.append(f"case {row.case_id}: published_rank mismatch")
    top1 = sum(1 for r in report.rows if r.rank == 1)
    topk = sum(1 for r in report.rows if r.rank is not None and r.rank <= report.k)
    if top1 != report.top1_hits or topk != report.topk_hits:
        problems.append("hit counters disagree with rows")
    return problems


# -- latency -------------------------------------------------------------------


@dataclass
class LatencyStats:
    count: int
    mean_s: float
    p50_s: float
    p95_s: float
    p99_s: float
    max_s: float

    def to_json(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "mean_ms": round(self.mean_s * 1000, 3),
            "p50_ms": round(self.p50_s * 1000, 3),
            "p95_ms": round(self.p95_s * 1000, 3),
            "p99_ms": round(self.p99_s * 1000, 3),
            "max_ms": round(self.max_s * 1000, 3),
        }


def run_latency_probe(
    fn: Callable[[str], Any], queries: Sequence[str], repeats: int = 1
) -> LatencyStats:
    """Time fn(query) over the query list; wall-clock, includes everything."""
    samples: list[float] = []
    for _ in range(repeats):
        for q in queries:
            t0 = time.perf_counter()
            fn(q)
            samples.append(time.perf_counter() - t0)
    arr = np.asarray(samples)
    return LatencyStats(
        count=len(samples),
        mean_s=float(arr.mean()),
        p50_s=float(np.percentile(arr, 50)),
        p95_s=float(np.percentile(arr, 95)),
        p99_s=float(np.percentile(arr, 99)),
        max_s=float(arr.max()),
    )
