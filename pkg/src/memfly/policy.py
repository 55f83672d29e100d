"""Every LLM-mediated decision behind one interface.

``MockPolicy`` answers all five decision kinds deterministically from token
rules and an embedding provider, so the whole pipeline runs offline.
``LlmPolicy`` renders the instruction templates, calls a chat endpoint and
parses structured output defensively: any model output maps to either a
valid result or the documented fallback, never a crash.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from typing import Callable, Protocol, runtime_checkable

import requests

from .embeddings import EmbeddingProvider, cosine
from .errors import EmptyText, RemoteFailure
from .graph import Note, NoteId, RELATION_TYPES
from .prompts import (
    GATED_UPDATE_PROMPT,
    INGEST_PROMPT,
    QUERY_INTENT_PROMPT,
    SUBQUERY_PROMPT,
    SUFFICIENCY_PROMPT,
    format_candidates,
    render,
)
from .text import canonical_surface, content_tokens, is_phatic, singularize, tokenize

LLM_API_KEY_ENV = "MEMFLY_LLM_API_KEY"

_NEGATIONS = frozenset(
    "not never none nothing neither nor cannot isn aren wasn weren don doesn "
    "didn won wouldn couldn shouldn hasn haven hadn".split()
)


# ---------------------------------------------------------------------------
# Structured results
# ---------------------------------------------------------------------------

@dataclass
class IngestResult:
    """Canonical keyword surfaces (0-5) plus the denoised context."""

    keywords: list[str]
    context: str


@dataclass
class CandidateJudgment:
    """Relationship verdict for one (new note, candidate) pair."""

    candidate: NoteId
    relation_type: str
    connection_strength: float
    merged_context: str | None = None


@dataclass
class QueryIntent:
    """Topical description plus entity keywords parsed from a query."""

    topic_desc: str
    keywords: list[str]


@dataclass
class SufficiencyVerdict:
    sufficient: bool
    missing_info: str
    confidence: float


@runtime_checkable
class Policy(Protocol):
    """The five decision operations plus answer drafting."""

    def ingest_parse(self, raw_turn: str, speaker: str) -> IngestResult: ...

    def judge_candidates(
        self, new_note: Note, candidates: list[Note],
        surface_of: Callable[[int], str] | None = None,
    ) -> list[CandidateJudgment]: ...

    def parse_query_intent(self, query: str) -> QueryIntent: ...

    def judge_sufficiency(self, evidence: str, query: str) -> SufficiencyVerdict: ...

    def generate_subquery(
        self, query: str, evidence: str,
        history: list[tuple[str, str]], missing_info: str,
    ) -> str | None: ...

    def answer(self, question: str, contexts: list[str], temperature: float) -> str: ...


# ---------------------------------------------------------------------------
# Tolerant JSON extraction
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json(text: str):
    """Pull the first JSON object/array out of model output.

    Tolerates code fences and leading/trailing prose. Raises ValueError if
    nothing parseable is found.
    """
    candidates = [m.strip() for m in _FENCE_RE.findall(text)]
    candidates.append(text)
    for blob in candidates:
        for opener, closer in (("{", "}"), ("[", "]")):
            start = blob.find(opener)
            while start != -1:
                depth = 0
                in_string = False
                escaped = False
                for i in range(start, len(blob)):
                    ch = blob[i]
                    if in_string:
                        if escaped:
                            escaped = False
                        elif ch == "\\":
                            escaped = True
                        elif ch == '"':
                            in_string = False
                        continue
                    if ch == '"':
                        in_string = True
                    elif ch == opener:
                        depth += 1
                    elif ch == closer:
                        depth -= 1
                        if depth == 0:
                            try:
                                return json.loads(blob[start:i + 1])
                            except json.JSONDecodeError:
                                break
                start = blob.find(opener, start + 1)
    raise ValueError("no JSON value found in model output")


def _clamp01(value) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        return 0.0
    return min(1.0, max(0.0, x))


def _truncate_words(text: str, limit: int = 8) -> str:
    words = text.split()
    return " ".join(words[:limit])


def _canonical_keywords(raw, cap: int = 5) -> list[str]:
    if not isinstance(raw, list):
        return []
    out: list[str] = []
    seen: set[str] = set()
    for item in raw:
        if not isinstance(item, str):
            continue
        canon = canonical_surface(item)
        if canon and canon not in seen:
            seen.add(canon)
            out.append(canon)
        if len(out) >= cap:
            break
    return out


# ---------------------------------------------------------------------------
# Chat transport
# ---------------------------------------------------------------------------

@runtime_checkable
class ChatClient(Protocol):
    def complete(self, prompt: str, temperature: float) -> str: ...


class RemoteChatClient:
    """Client for a POST {model, temperature, messages} chat endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        timeout: float = 30.0,
        retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(LLM_API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str, temperature: float) -> str:
        payload = {
            "model": self.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=self._headers(),
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except Exception as exc:
                last_error = exc
        raise RemoteFailure(f"chat request failed after retries: {last_error}")


# ---------------------------------------------------------------------------
# Deterministic offline policy
# ---------------------------------------------------------------------------

class MockPolicy:
    """Token-rule policy: fully deterministic, never fails.

    Redundancy is the non-negative cosine of the two contexts under the
    shared embedder; complementarity is the Jaccard overlap of keyword
    sets; a negation appearing in exactly one of two otherwise-similar
    contexts reads as a conflict.
    """

    def __init__(self, embedder: EmbeddingProvider, *, tau_merge: float = 0.7):
        self.embedder = embedder
        self.tau_merge = tau_merge

    # -- construction side ---------------------------------------------------

    def ingest_parse(self, raw_turn: str, speaker: str) -> IngestResult:
        if not raw_turn or not raw_turn.strip():
            raise EmptyText("raw turn is empty")
        if is_phatic(raw_turn):
            return IngestResult(keywords=[], context=raw_turn)
        return IngestResult(keywords=content_tokens(raw_turn)[:5], context=raw_turn)

    def _redundancy(self, new_context: str, cand_context: str) -> float:
        sim = cosine(self.embedder.embed(new_context), self.embedder.embed(cand_context))
        return max(0.0, sim)

    @staticmethod
    def _jaccard(a: set, b: set) -> float:
        union = a | b
        if not union:
            return 0.0
        return len(a & b) / len(union)

    def _conflict_similarity(self, new_context: str, cand_context: str) -> float | None:
        """Cosine of the de-negated contexts when exactly one side negates."""
        new_tokens = tokenize(new_context)
        cand_tokens = tokenize(cand_context)
        new_neg = any(t in _NEGATIONS for t in new_tokens)
        cand_neg = any(t in _NEGATIONS for t in cand_tokens)
        if new_neg == cand_neg:
            return None
        stripped_new = " ".join(t for t in new_tokens if t not in _NEGATIONS)
        stripped_cand = " ".join(t for t in cand_tokens if t not in _NEGATIONS)
        if not stripped_new or not stripped_cand:
            return None
        sim = max(0.0, cosine(self.embedder.embed(stripped_new),
                              self.embedder.embed(stripped_cand)))
        return sim if sim >= 0.5 else None

    def _merged_context(self, new_context: str, cand_context: str) -> str:
        new_tok = set(singularize(t) for t in tokenize(new_context))
        cand_tok = set(singularize(t) for t in tokenize(cand_context))
        if new_tok <= cand_tok:
            return cand_context
        return f"{cand_context.rstrip('. ')}. Specifically, {new_context}"

    def judge_candidates(
        self, new_note: Note, candidates: list[Note],
        surface_of: Callable[[int], str] | None = None,
    ) -> list[CandidateJudgment]:
        if not candidates:
            raise ValueError("candidates must be non-empty")
        judgments: list[CandidateJudgment] = []
        for cand in candidates:
            conflict_sim = self._conflict_similarity(new_note.context, cand.context)
            if conflict_sim is not None:
                judgments.append(CandidateJudgment(
                    candidate=cand.id,
                    relation_type="CONFLICTS",
                    connection_strength=conflict_sim,
                ))
                continue
            s_red = self._redundancy(new_note.context, cand.context)
            s_comp = self._jaccard(set(new_note.keywords), set(cand.keywords))
            if s_red >= s_comp:
                relation, strength = "SUPPORTS", s_red
            else:
                relation, strength = "RELATED_TO", s_comp
            merged = None
            if strength >= self.tau_merge:
                merged = self._merged_context(new_note.context, cand.context)
            judgments.append(CandidateJudgment(
                candidate=cand.id,
                relation_type=relation,
                connection_strength=strength,
                merged_context=merged,
            ))
        return judgments

    # -- retrieval side ---------------------------------------------------------

    def parse_query_intent(self, query: str) -> QueryIntent:
        if not query or not query.strip():
            raise EmptyText("query is empty")
        return QueryIntent(
            topic_desc=_truncate_words(query.strip(), 8),
            keywords=content_tokens(query)[:5],
        )

    @staticmethod
    def _evidence_tokens(evidence: str) -> set[str]:
        return {singularize(t) for t in tokenize(evidence)}

    def judge_sufficiency(self, evidence: str, query: str) -> SufficiencyVerdict:
        needed = content_tokens(query)
        if not needed:
            return SufficiencyVerdict(sufficient=True, missing_info="", confidence=1.0)
        have = self._evidence_tokens(evidence)
        missing = [t for t in needed if t not in have]
        if missing:
            return SufficiencyVerdict(
                sufficient=False,
                missing_info=" ".join(missing),
                confidence=1.0 - len(missing) / len(needed),
            )
        return SufficiencyVerdict(sufficient=True, missing_info="", confidence=1.0)

    def generate_subquery(
        self, query: str, evidence: str,
        history: list[tuple[str, str]], missing_info: str,
    ) -> str | None:
        missing_info = (missing_info or "").strip()
        return missing_info or None

    def answer(self, question: str, contexts: list[str], temperature: float) -> str:
        return contexts[0] if contexts else ""


# ---------------------------------------------------------------------------
# Remote chat policy
# ---------------------------------------------------------------------------

class LlmPolicy:
    """Template-driven policy over a chat client.

    One reparse attempt (a fresh completion) per call; after that the
    documented fallback result is returned so the pipeline stays total.
    """

    def __init__(
        self,
        chat: ChatClient,
        *,
        tau_merge: float = 0.7,
        temperature: float = 0.7,
        answer_template: str | None = None,
    ):
        self.chat = chat
        self.tau_merge = tau_merge
        self.temperature = temperature
        self.answer_template = answer_template or (
            "Answer the question using only the evidence below. "
            "Reply with the shortest exact answer.\n\n"
            "Evidence:\n{context}\n\nQuestion: {question}\n\nAnswer:"
        )

    def _completion_attempts(self, prompt: str):
        """Yield up to two completions (initial + one reparse attempt)."""
        for _ in range(2):
            yield self.chat.complete(prompt, self.temperature)

    def ingest_parse(self, raw_turn: str, speaker: str) -> IngestResult:
        if not raw_turn or not raw_turn.strip():
            raise EmptyText("raw turn is empty")
        content = f"{speaker}: {raw_turn}" if speaker else raw_turn
        prompt = render(INGEST_PROMPT, content=content)
        for reply in self._completion_attempts(prompt):
            try:
                data = extract_json(reply)
                keywords = _canonical_keywords(data.get("keywords"))
                context = data.get("context")
                if not isinstance(context, str) or not context.strip():
                    context = raw_turn
                return IngestResult(keywords=keywords, context=context)
            except ValueError:
                continue
        return IngestResult(keywords=[], context=raw_turn)

    def judge_candidates(
        self, new_note: Note, candidates: list[Note],
        surface_of: Callable[[int], str] | None = None,
    ) -> list[CandidateJudgment]:
        if not candidates:
            raise ValueError("candidates must be non-empty")
        surface_of = surface_of or str
        rows = [
            (c.id, c.context, sorted(surface_of(k) for k in c.keywords))
            for c in candidates
        ]
        prompt = render(
            GATED_UPDATE_PROMPT,
            content=new_note.raw[0].text if new_note.raw else new_note.context,
            context=new_note.context,
            keywords=sorted(surface_of(k) for k in new_note.keywords),
            candidates_str=format_candidates(rows),
        )
        known = {c.id for c in candidates}
        for reply in self._completion_attempts(prompt):
            try:
                data = extract_json(reply)
            except ValueError:
                continue
            items = data.get("judgments") if isinstance(data, dict) else data
            if not isinstance(items, list):
                continue
            by_candidate: dict[int, CandidateJudgment] = {}
            for item in items:
                if not isinstance(item, dict):
                    continue
                try:
                    cand_id = int(item.get("candidate"))
                except (TypeError, ValueError):
                    continue
                if cand_id not in known:
                    continue
                relation = str(item.get("relation_type", "")).upper()
                if relation not in RELATION_TYPES:
                    relation = "RELATED_TO"
                strength = _clamp01(item.get("connection_strength"))
                merged = item.get("merged_context")
                if not isinstance(merged, str) or not merged.strip():
                    merged = None
                if relation == "CONFLICTS" or strength < self.tau_merge:
                    merged = None
                by_candidate[cand_id] = CandidateJudgment(
                    candidate=cand_id,
                    relation_type=relation,
                    connection_strength=strength,
                    merged_context=merged,
                )
            out: list[CandidateJudgment] = []
            for cand in candidates:
                judgment = by_candidate.get(
                    cand.id, CandidateJudgment(cand.id, "RELATED_TO", 0.0)
                )
                if (judgment.merged_context is None
                        and judgment.relation_type != "CONFLICTS"
                        and judgment.connection_strength >= self.tau_merge):
                    judgment.merged_context = f"{cand.context}; {new_note.context}"
                out.append(judgment)
            return out
        # Unparseable twice: neutral judgments, which the gate turns into Append.
        return [CandidateJudgment(c.id, "RELATED_TO", 0.0) for c in candidates]

    def parse_query_intent(self, query: str) -> QueryIntent:
        if not query or not query.strip():
            raise EmptyText("query is empty")
        prompt = render(QUERY_INTENT_PROMPT, query=query)
        for reply in self._completion_attempts(prompt):
            try:
                data = extract_json(reply)
                topic = data.get("topic_desc")
                if not isinstance(topic, str) or not topic.strip():
                    continue
                return QueryIntent(
                    topic_desc=_truncate_words(topic.strip(), 8),
                    keywords=_canonical_keywords(data.get("keywords")),
                )
            except ValueError:
                continue
        return QueryIntent(
            topic_desc=_truncate_words(query.strip(), 8),
            keywords=content_tokens(query)[:5],
        )

    def judge_sufficiency(self, evidence: str, query: str) -> SufficiencyVerdict:
        prompt = render(SUFFICIENCY_PROMPT, question=query, context=evidence)
        for reply in self._completion_attempts(prompt):
            try:
                data = extract_json(reply)
                sufficient = data.get("sufficient")
                if not isinstance(sufficient, bool):
                    continue
                missing = data.get("missing_info")
                return SufficiencyVerdict(
                    sufficient=sufficient,
                    missing_info=missing if isinstance(missing, str) else "",
                    confidence=_clamp01(data.get("confidence")),
                )
            except ValueError:
                continue
        # Fail closed: stop iterating rather than loop.
        return SufficiencyVerdict(sufficient=True, missing_info="", confidence=0.0)

    def generate_subquery(
        self, query: str, evidence: str,
        history: list[tuple[str, str]], missing_info: str,
    ) -> str | None:
        if not (missing_info or "").strip():
            return None
        reasoning = "\n".join(f"Q: {q}\nA: {a}" for q, a in history) or "(none)"
        prompt = render(
            SUBQUERY_PROMPT,
            query_str=query,
            context_str=evidence,
            prev_reasoning=reasoning,
            missing_info=missing_info,
        )
        reply = self.chat.complete(prompt, self.temperature).strip()
        if not reply:
            return None
        cleaned = reply.strip().strip("\"'`").rstrip(".").strip()
        if cleaned.lower() == "none":
            return None
        return reply

    def answer(self, question: str, contexts: list[str], temperature: float) -> str:
        prompt = render(
            self.answer_template,
            context="\n".join(contexts) if contexts else "(no evidence)",
            question=question,
        )
        return self.chat.complete(prompt, temperature).strip()
