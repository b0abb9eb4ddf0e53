"""The four-stage answering loop: classify, retrieve, generate, review.

The loop is a small state machine. A classifier picks one of three
retrieval routes (live IoT documents, maps text search, open web) or
answers directly without retrieval; the retriever runs the chosen route;
a generator drafts an answer from the retrieved context; a reviewer
either accepts it or asks for another pass. Another pass means one of two
moves: reformulate (retry the same route with a restated query; at most
once per route) or reroute (switch to an unused route). The engine
enforces the budget regardless of what the backend asks for: at most
``hop_budget`` extra passes, no route visited twice, and when everything
is exhausted the best draft so far is returned marked ``low_confidence``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

from .geo import GeoPoint
from .model import Region
from .providers import MapsProvider, ProviderError, WebSearchProvider
from .retrieval import (
    IotSearch,
    Preferences,
    RetrievedContext,
    extract_preferences,
)

MAX_QUERY_CHARS = 4096
DEFAULT_HOP_BUDGET = 3
SESSION_TURNS = 4

# Cities a query may name. Coverage is decided against the configured
# regions, not this table; the table only anchors out-of-region searches.
GAZETTEER: dict[str, GeoPoint] = {
    "toronto": GeoPoint(43.6532, -79.3832),
    "oshawa": GeoPoint(43.8971, -78.8658),
    "mississauga": GeoPoint(43.5890, -79.6441),
    "ottawa": GeoPoint(45.4215, -75.6972),
    "montreal": GeoPoint(45.5019, -73.5674),
    "vancouver": GeoPoint(49.2827, -123.1207),
    "new york": GeoPoint(40.7128, -74.0060),
    "london": GeoPoint(51.5072, -0.1276),
    "cairo": GeoPoint(30.0444, 31.2357),
}

_WEB_HINTS = (
    "weather", "news", "wikipedia", "stock price",
    "who won", "score of", "who is", "who was",
)
_DIRECT_HINTS = (
    "hello", "hi", "hey", "thanks", "thank you", "good morning",
    "good evening", "what can you do", "who are you", "help",
)
_FOLLOWUP_STARTS = ("how about", "what about", "and ", "any ", "same but")
_FOLLOWUP_WORDS = ("one", "there", "them", "it", "instead")


class Route(str, enum.Enum):
    DIRECT = "direct_answer"
    IOT = "iot_rag_se"
    MAPS = "maps"
    WEB = "web"


# reroute preference order; direct answers never re-enter the rotation
ROUTE_ORDER = (Route.IOT, Route.MAPS, Route.WEB)


class Verdict(str, enum.Enum):
    ACCEPTED = "accepted"
    REFORMULATE = "reformulate"
    REROUTE = "reroute"


@dataclass(frozen=True)
class Classification:
    route: Route
    anchor: GeoPoint | None = None  # where to search when not using the caller origin
    city: str | None = None


@dataclass
class GeneratedAnswer:
    text: str
    results: list[dict[str, Any]] = field(default_factory=list)
    service: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {"text": self.text, "results": self.results, "service": self.service}


@dataclass(frozen=True)
class Review:
    verdict: Verdict
    reason: str


class AgentBackend(Protocol):
    """The decision-making seams; deterministic in the bundled implementation."""

    def classify(
        self, query: str, origin: GeoPoint, covered, memory: "SessionMemory | None"
    ) -> Classification:
        """``covered`` is a callable GeoPoint -> bool for region membership."""
        ...

    def reformulate(self, query: str, reason: str) -> str: ...

    def generate(self, query: str, ctx: RetrievedContext) -> GeneratedAnswer: ...

    def review(self, query: str, ctx: RetrievedContext, answer: GeneratedAnswer) -> Review: ...


@dataclass(frozen=True)
class Turn:
    query: str
    route: str
    context_service: str | None
    answer_text: str


class SessionMemory:
    """The last few exchanges of one session, for follow-up queries."""

    def __init__(self, max_turns: int = SESSION_TURNS):
        self.turns: deque[Turn] = deque(maxlen=max_turns)

    def remember(self, turn: Turn) -> None:
        self.turns.append(turn)

    def last(self) -> Turn | None:
        return self.turns[-1] if self.turns else None


def merge_followup(query: str, memory: SessionMemory | None) -> str:
    """Prefix a follow-up query with the service it implicitly refers to."""
    if memory is None:
        return query
    last = memory.last()
    if last is None or not last.context_service:
        return query
    q = query.lower().strip()
    words = set(q.replace("?", " ").replace(".", " ").split())
    if q.startswith(_FOLLOWUP_STARTS) or (words & set(_FOLLOWUP_WORDS)):
        if last.context_service not in q:
            return f"{last.context_service} {query}"
    return query


class MockBackend:
    """Rule-based backend: same inputs, same decisions, no model calls."""

    def classify(
        self, query: str, origin: GeoPoint, covered, memory: SessionMemory | None
    ) -> Classification:
        q = " ".join(query.lower().split()).rstrip("?!.")
        if q in _DIRECT_HINTS:  # whole-query pleasantries only, never prefixes
            return Classification(route=Route.DIRECT)
        if any(h in q for h in _WEB_HINTS):
            return Classification(route=Route.WEB)
        for city, point in GAZETTEER.items():
            if city in q:
                route = Route.IOT if covered(point) else Route.MAPS
                return Classification(route=route, anchor=point, city=city)
        if not covered(origin):
            return Classification(route=Route.MAPS, anchor=origin)
        return Classification(route=Route.IOT)

    def reformulate(self, query: str, reason: str) -> str:
        # strip qualifiers so a narrower query becomes a broader one
        base = query.split(" with ")[0].split(" that ")[0].strip()
        return base if base and base != query else f"{query} nearby"

    def generate(self, query: str, ctx: RetrievedContext) -> GeneratedAnswer:
        prefs = extract_preferences(ctx.query)
        if ctx.route == Route.DIRECT.value:
            return GeneratedAnswer(
                text=(
                    "I look up live service data near you - availability, "
                    "crowding, prices, travel times. Ask for a service to start."
                ),
                results=[],
            )
        if ctx.route == Route.IOT.value and ctx.documents:
            ranked = sorted(ctx.documents, key=prefs.sort_key)
            results = [d.to_result_json() for d in ranked]
            lines = []
            for i, r in enumerate(results, start=1):
                bits = [f"{i}. {r['Service Name']} ({r['Service Address']})"]
                if r.get("Rate") is not None:
                    bits.append(f"rated {r['Rate']}")
                if r.get("Occupancy Factor") is not None:
                    bits.append(f"occupancy {r['Occupancy Factor']}")
                if "Travel Time" in r:
                    bits.append(f"{r['Travel Time']} away")
                lines.append(", ".join(bits))
            text = f"Here are {ctx.context_service} options: " + " | ".join(lines)
            return GeneratedAnswer(text=text, results=results, service=ctx.context_service)
        if ctx.route == Route.MAPS.value and ctx.places:
            results = [p.to_json() for p in ctx.places]
            names = ", ".join(p["name"] for p in results[:3])
            return GeneratedAnswer(
                text=f"Found on the map: {names}", results=results, service=None
            )
        if ctx.route == Route.WEB.value and ctx.snippets:
            results = [s.to_json() for s in ctx.snippets]
            return GeneratedAnswer(
                text=f"From the web: {results[0]['content']}", results=results, service=None
            )
        return GeneratedAnswer(text="No results found.", results=[])

    def review(self, query: str, ctx: RetrievedContext, answer: GeneratedAnswer) -> Review:
        if ctx.route == Route.DIRECT.value:
            if answer.text.strip():
                return Review(Verdict.ACCEPTED, "direct answer present")
            return Review(Verdict.REROUTE, "empty direct answer")
        if ctx.is_empty():
            return Review(Verdict.REROUTE, "retrieval produced no context")
        if not answer.results:
            return Review(Verdict.REFORMULATE, "draft lists no results")
        grounded = (
            {d.document.display_name for d in ctx.documents}
            | {p.name for p in ctx.places}
            | {s.title for s in ctx.snippets}
        )
        for r in answer.results:
            name = r.get("Service Name") or r.get("name") or r.get("title") or ""
            if name and name not in grounded:
                return Review(Verdict.REROUTE, f"result {name!r} not grounded in context")
        q = query.lower().strip()
        if ctx.route == Route.WEB.value and q.startswith(("who is ", "who was ")):
            # an identity answer has to actually name someone; ignore words
            # that are only capitalized because they open a sentence
            words = answer.text.split()
            named = False
            for i, w in enumerate(words):
                if i == 0 or words[i - 1].rstrip('"\')').endswith((".", "!", "?", ":")):
                    continue
                if w[:1].isupper() and w[1:2].islower():
                    named = True
                    break
            if not named:
                return Review(Verdict.REFORMULATE, "identity answer names no person")
        prefs = extract_preferences(ctx.query)
        if prefs.hard and ctx.route == Route.IOT.value:
            top = answer.results[0]
            for k, v in prefs.hard.items():
                if top.get(k) != v:
                    return Review(
                        Verdict.REFORMULATE, f"top result does not satisfy {k}={v!r}"
                    )
        return Review(Verdict.ACCEPTED, "grounded and satisfies the stated preferences")


# -- engine --------------------------------------------------------------------


@dataclass
class TraceStep:
    seq: int
    agent: str
    event: str
    detail: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"seq": self.seq, "agent": self.agent, "event": self.event, "detail": self.detail}


@dataclass
class QueryResult:
    trace_id: str
    query: str
    answer: GeneratedAnswer
    route: str
    accepted: bool
    low_confidence: bool
    hops_used: int
    cycles: int
    context: RetrievedContext
    steps: list[TraceStep]
    elapsed_s: float = 0.0

    def flags(self) -> list[str]:
        out = []
        if self.low_confidence:
            out.append("low_confidence")
        if self.context.unrouted:
            out.append("unrouted")
        return out

    def to_json(self) -> dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "query": self.query,
            "answer": self.answer.to_json(),
            "route": self.route,
            "accepted": self.accepted,
            "low_confidence": self.low_confidence,
            "flags": self.flags(),
            "hops_used": self.hops_used,
            "cycles": self.cycles,
            "context": self.context.to_json(),
        }

    def trace_json(self) -> dict[str, Any]:
        return {
            "trace_id": self.trace_id,
            "query": self.query,
            "route": self.route,
            "accepted": self.accepted,
            "low_confidence": self.low_confidence,
            "flags": self.flags(),
            "hops_used": self.hops_used,
            "cycles": self.cycles,
            "steps": [s.to_json() for s in self.steps],
        }


class QueryTooLongError(ValueError):
    pass


def replay_trace(trace: dict[str, Any]) -> dict[str, Any]:
    """Fold a trace back into the loop's final state.

    The returned dict must agree with the QueryResult the trace came from;
    that equivalence is what makes traces trustworthy as debugging output.
    """
    state: dict[str, Any] = {
        "route": None,
        "working_query": None,
        "verdict": None,
        "tried_routes": [],
        "hops": 0,
        "accepted": False,
        "low_confidence": False,
        "cycles": 0,
    }
    for step in trace["steps"]:
        event, detail = step["event"], step["detail"]
        if event == "route_selected":
            state["route"] = detail["route"]
            state["working_query"] = detail["effective_query"]
        elif event == "context_retrieved":
            state["cycles"] += 1
            if detail["route"] not in state["tried_routes"]:
                state["tried_routes"].append(detail["route"])
        elif event == "verdict":
            state["verdict"] = detail["verdict"]
        elif event == "reformulated":
            state["hops"] += 1
            state["working_query"] = detail["new_query"]
        elif event == "rerouted":
            state["hops"] += 1
            state["route"] = detail["route"]
            state["working_query"] = detail["new_query"]
        elif event == "finalized":
            state["route"] = detail["route"]
            state["accepted"] = detail["accepted"]
            state["low_confidence"] = detail["low_confidence"]
    return state


class AgentEngine:
    """Runs the loop and owns every termination guarantee."""

    def __init__(
        self,
        iot: IotSearch,
        maps: MapsProvider,
        web: WebSearchProvider,
        regions: Sequence[Region],
        backend: AgentBackend | None = None,
        hop_budget: int = DEFAULT_HOP_BUDGET,
    ):
        if hop_budget < 0:
            raise ValueError("hop_budget must be >= 0")
        self.iot = iot
        self.maps = maps
        self.web = web
        self.regions = list(regions)
        self.backend = backend or MockBackend()
        self.hop_budget = hop_budget

    def covered(self, p: GeoPoint) -> bool:
        return any(r.contains(p) for r in self.regions)

    def _trace_id(self, query: str, origin: GeoPoint) -> str:
        payload = json.dumps(
            {
                "query": query,
                "origin": [round(origin.lat, 6), round(origin.lon, 6)],
                "store": self.iot.store.content_hash(),
                "k": [self.iot.config.k_services, self.iot.config.k_documents],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def _retrieve(
        self, route: Route, query: str, origin: GeoPoint, anchor: GeoPoint | None
    ) -> RetrievedContext:
        if route is Route.DIRECT:  # no retrieval; generator works from the query
            return RetrievedContext(route=route.value, query=query)
        if route is Route.IOT:
            return self.iot.search(query, origin)
        ctx = RetrievedContext(route=route.value, query=query)
        try:
            if route is Route.MAPS:
                ctx.places = self.maps.text_search(query, near=anchor or origin)
            else:
                ctx.snippets = self.web.search(query)
        except ProviderError as err:
            ctx.places = []
            ctx.snippets = []
            ctx.provider_error = err.kind.value
        return ctx

    def run_query(
        self,
        query: str,
        origin: GeoPoint,
        session: SessionMemory | None = None,
    ) -> QueryResult:
        if len(query) > MAX_QUERY_CHARS:
            raise QueryTooLongError(f"query is {len(query)} chars, limit {MAX_QUERY_CHARS}")
        if not query.strip():
            raise ValueError("query is empty")
        t0 = time.perf_counter()
        effective = merge_followup(query, session)

        steps: list[TraceStep] = []
        seq = 0

        def trace(agent: str, event: str, **detail: Any) -> None:
            nonlocal seq
            steps.append(TraceStep(seq, agent, event, detail))
            seq += 1

        covered = self.covered(origin)
        cls = self.backend.classify(effective, origin, self.covered, session)
        trace("classifier", "route_selected", route=cls.route.value, covered=covered,
              city=cls.city, effective_query=effective)

        used_routes: list[Route] = []  # visit order; the engine never revisits
        reformulated: set[Route] = set()
        route = cls.route
        current_query = effective
        hops = 0
        cycles = 0
        best: tuple[RetrievedContext, GeneratedAnswer] | None = None
        accepted = False
        low_confidence = False

        while True:
            cycles += 1
            if route not in used_routes:
                used_routes.append(route)
            ctx = self._retrieve(route, current_query, origin, cls.anchor)
            trace("retriever", "context_retrieved", route=route.value,
                  documents=len(ctx.documents), places=len(ctx.places),
                  snippets=len(ctx.snippets), context_service=ctx.context_service)
            answer = self.backend.generate(current_query, ctx)
            trace("generator", "draft_answer", results=len(answer.results))
            review = self.backend.review(current_query, ctx, answer)
            trace("reviewer", "verdict", verdict=review.verdict.value, reason=review.reason)

            if best is None or (answer.results and not best[1].results):
                best = (ctx, answer)

            if review.verdict is Verdict.ACCEPTED:
                best = (ctx, answer)
                accepted = True
                break

            if hops >= self.hop_budget:
                low_confidence = True
                trace("engine", "budget_exhausted", hops=hops)
                break

            if review.verdict is Verdict.REFORMULATE and route not in reformulated:
                reformulated.add(route)
                hops += 1
                current_query = self.backend.reformulate(current_query, review.reason)
                trace("engine", "reformulated", new_query=current_query)
                continue

            # reroute (or a second reformulate ask, which we escalate to reroute)
            next_route = next((r for r in ROUTE_ORDER if r not in used_routes), None)
            if next_route is None:
                low_confidence = True
                trace("engine", "routes_exhausted", used=[r.value for r in used_routes])
                break
            hops += 1
            route = next_route
            current_query = effective  # rerouting restarts from the original ask
            trace("engine", "rerouted", route=route.value, new_query=current_query)

        ctx, answer = best if best is not None else (
            RetrievedContext(route=route.value, query=current_query),
            GeneratedAnswer(text="No results found.", results=[]),
        )
        if low_confidence and not accepted:
            trace("engine", "forced_acceptance", low_confidence=True)
        trace(
            "engine",
            "finalized",
            route=ctx.route,
            accepted=accepted,
            low_confidence=low_confidence,
            hops=hops,
            cycles=cycles,
            tried_routes=[r.value for r in used_routes],
        )

        result = QueryResult(
            trace_id=self._trace_id(query, origin),
            query=query,
            answer=answer,
            route=ctx.route,
            accepted=accepted,
            low_confidence=low_confidence,
            hops_used=hops,
            cycles=cycles,
            context=ctx,
            steps=steps,
            elapsed_s=time.perf_counter() - t0,
        )
        if session is not None:
            session.remember(
                Turn(
                    query=query,
                    route=ctx.route,
                    context_service=ctx.context_service,
                    answer_text=answer.text,
                )
            )
        return result
