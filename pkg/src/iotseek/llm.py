"""Remote language-model backend and its prompt plumbing.

The deterministic rule-based backend in ``agents`` is the default; this
module adds the other configured choice: an OpenAI-compatible chat
endpoint. Prompts come from a templates directory with one file per
route, each with {query}/{context}/{preferences} slots that must all be
filled before dispatch.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import httpx

from .agents import (
    GAZETTEER,
    Classification,
    GeneratedAnswer,
    Review,
    Route,
    SessionMemory,
    Verdict,
)
from .geo import GeoPoint
from .providers import ProviderError, ProviderErrorKind, _request_with_retries
from .retrieval import RetrievedContext, context_lines, extract_preferences

TEMPLATE_SLOTS = {"query", "context", "preferences"}


@dataclass(frozen=True)
class PromptTemplate:
    route: str
    template: str

    def __post_init__(self) -> None:
        fields = {
            name
            for _, name, _, _ in string.Formatter().parse(self.template)
            if name
        }
        if not fields <= TEMPLATE_SLOTS:
            raise ValueError(
                f"template for {self.route!r} has unknown slots {sorted(fields - TEMPLATE_SLOTS)}"
            )

    def render(self, *, query: str, context: str, preferences: str) -> str:
        rendered = self.template.format(
            query=query, context=context, preferences=preferences
        )
        leftover = re.findall(r"\{(query|context|preferences)\}", rendered)
        if leftover:
            raise ValueError(f"unfilled slots after render: {leftover}")
        return rendered


def load_templates(templates_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    """One template file per route; missing files are a configuration error."""
    routes = [r.value for r in Route]
    out: dict[str, PromptTemplate] = {}
    if templates_dir is None:
        root = resources.files("iotseek").joinpath("data/templates")
        for route in routes:
            text = root.joinpath(f"{route}.txt").read_text()
            out[route] = PromptTemplate(route, text)
        return out
    base = Path(templates_dir)
    for route in routes:
        path = base / f"{route}.txt"
        if not path.exists():
            raise ValueError(f"missing prompt template {path}")
        out[route] = PromptTemplate(route, path.read_text())
    return out


class HttpLlmBackend:
    """OpenAI-compatible chat backend; every decision is one completion call.

    Unparseable replies raise a typed provider error rather than guessing,
    so the HTTP layer can surface a 502 instead of a wrong answer.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str = "default",
        templates_dir: str | Path | None = None,
        deadline_s: float = 10.0,
        retries: int = 1,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.templates = load_templates(templates_dir)
        self.deadline_s = deadline_s
        self.retries = retries

    def _chat(self, prompt: str) -> str:
        def send(timeout: float) -> str:
            headers = {"Content-Type": "application/json"}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json={
                    "model": self.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": 0,
                },
                headers=headers,
                timeout=timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]

        return _request_with_retries(
            "llm", send, deadline_s=self.deadline_s, retries=self.retries
        )

    # -- AgentBackend ------------------------------------------------------

    def classify(
        self, query: str, origin: GeoPoint, covered, memory: SessionMemory | None
    ) -> Classification:
        history = ""
        if memory is not None and memory.turns:
            history = "\n".join(
                f"user: {t.query}\nassistant: {t.answer_text}" for t in memory.turns
            )
        prompt = (
            "Pick one route for the query. Routes: iot_rag_se (local service "
            "lookup in a covered city), maps (local lookup elsewhere), web "
            "(general information/news/weather), direct_answer (greeting or "
            "question about you). Reply with the route name only.\n"
            f"Conversation so far:\n{history}\n"
            f"Origin covered by live data: {covered(origin)}\n"
            f"Query: {query}"
        )
        reply = self._chat(prompt).strip().lower()
        for route in Route:
            if route.value in reply:
                anchor = None
                city = None
                q = query.lower()
                for name, point in GAZETTEER.items():
                    if name in q:
                        anchor, city = point, name
                        break
                return Classification(route=route, anchor=anchor, city=city)
        raise ProviderError(ProviderErrorKind.MALFORMED, "llm", f"bad route reply {reply!r}")

    def reformulate(self, query: str, reason: str) -> str:
        reply = self._chat(
            "Rewrite the query to retrieve better results. Keep the intent, "
            f"drop failed qualifiers. Reason it failed: {reason}\n"
            f"Query: {query}\nReply with the rewritten query only."
        ).strip()
        return reply or query

    def generate(self, query: str, ctx: RetrievedContext) -> GeneratedAnswer:
        prefs = extract_preferences(ctx.query)
        template = self.templates[ctx.route]
        text = self._chat(
            template.render(
                query=query,
                context="\n".join(context_lines(ctx)) or "(none)",
                preferences=json.dumps({"hard": dict(prefs.hard), "order": prefs.order}),
            )
        ).strip()
        if not text:
            raise ProviderError(ProviderErrorKind.MALFORMED, "llm", "empty draft")
        results = [d.to_result_json() for d in ctx.documents]
        results += [p.to_json() for p in ctx.places]
        results += [s.to_json() for s in ctx.snippets]
        return GeneratedAnswer(text=text, results=results, service=ctx.context_service)

    def review(self, query: str, ctx: RetrievedContext, answer: GeneratedAnswer) -> Review:
        reply = self._chat(
            "Does the draft answer the query and stay grounded in the "
            "context? Reply with exactly one word: accepted, reformulate, "
            f"or reroute.\nQuery: {query}\nDraft: {answer.text}\n"
            f"Context items: {len(answer.results)}"
        ).strip().lower()
        for verdict in Verdict:
            if verdict.value in reply:
                return Review(verdict, f"llm verdict: {reply}")
        raise ProviderError(ProviderErrorKind.MALFORMED, "llm", f"bad verdict reply {reply!r}")


def create_backend(
    name: str,
    *,
    base_url: str | None = None,
    api_key: str | None = None,
    model: str = "default",
    templates_dir: str | Path | None = None,
):
    from .agents import MockBackend

    if name == "mock":
        return MockBackend()
    if name == "http-openai-compatible":
        if not base_url:
            raise ValueError("http-openai-compatible backend needs a base URL")
        return HttpLlmBackend(
            base_url, api_key=api_key, model=model, templates_dir=templates_dir
        )
    raise ValueError(f"unknown llm provider {name!r}")
