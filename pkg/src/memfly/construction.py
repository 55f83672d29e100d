"""Online consolidation: ingest a turn, pick candidate neighbors, then
merge / link / append under the configured thresholds.

Every input either creates exactly one note or is absorbed by exactly one
merge, so note_count == inputs_seen - merge_total and the multiset of raw
segments always equals the multiset of ingested turns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .embeddings import EmbeddingProvider
from .errors import EmptyText, NotFound, RemoteFailure, SelfLoop
from .graph import KeywordId, MemoryGraph, Note, NoteId, RawSegment
from .policy import CandidateJudgment, Policy
from .topics import evolve_topics

logger = logging.getLogger(__name__)

OPERATIONS = ("MERGED", "LINKED", "APPENDED")


@dataclass
class AblationSwitches:
    """Pipeline toggles used by the evaluation harness."""

    disable_update: bool = False
    disable_denoise: bool = False
    disable_link: bool = False
    disable_merge: bool = False
    disable_topic_pathway: bool = False
    disable_keyword_pathway: bool = False
    disable_neighbor: bool = False
    disable_ier: bool = False


@dataclass
class IngestReport:
    """Outcome record for one ingested input."""

    note_id: NoteId
    operation: str
    partner: NoteId | None = None
    judgments: list[CandidateJudgment] = field(default_factory=list)
    new_keywords: list[KeywordId] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "operation": self.operation,
            "partner": self.partner,
            "judgments": [
                {
                    "candidate": j.candidate,
                    "relation_type": j.relation_type,
                    "connection_strength": j.connection_strength,
                    "merged_context": j.merged_context,
                }
                for j in self.judgments
            ],
            "new_keywords": list(self.new_keywords),
        }


@dataclass
class IbDiagnostics:
    """Compression and connectivity statistics for a memory instance."""

    note_count: int
    merge_total: int
    link_total: int
    append_total: int
    compression_ratio: float
    mean_keywords_per_note: float
    related_edge_count: int

    def to_dict(self) -> dict:
        return {
            "note_count": self.note_count,
            "merge_total": self.merge_total,
            "link_total": self.link_total,
            "append_total": self.append_total,
            "compression_ratio": self.compression_ratio,
            "mean_keywords_per_note": self.mean_keywords_per_note,
            "related_edge_count": self.related_edge_count,
        }


# ---------------------------------------------------------------------------
# Primitive mutations
# ---------------------------------------------------------------------------

def link_notes(g: MemoryGraph, src: NoteId, dst: NoteId,
               relation_type: str, strength: float) -> None:
    """Add a directed related edge; re-linking the same pair overwrites."""
    if src == dst:
        raise SelfLoop(f"cannot link note {src} to itself")
    g.put_related_edge(src, dst, relation_type, strength)


def update_cooccurrence(g: MemoryGraph, keyword_ids: set[KeywordId]) -> None:
    """Bump the co-occurrence count for every unordered pair in the set."""
    ordered = sorted(keyword_ids)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            g.bump_cooccurrence(a, b)


def merge_notes(g: MemoryGraph, target_id: NoteId, source: Note,
                merged_context: str, embedder: EmbeddingProvider) -> NoteId:
    """Fold ``source`` into an existing note.

    Raw segments are unioned in timestamp order, keywords unioned, and the
    embedding recomputed from the merged context (not averaged).
    """
    target = g.get_note(target_id)
    if not merged_context or not merged_context.strip():
        merged_context = f"{target.context}; {source.context}"

    target.raw = sorted(target.raw + source.raw, key=lambda seg: seg.timestamp)
    target.context = merged_context
    target.keywords = target.keywords | source.keywords
    target.merge_count = len(target.raw) - 1
    target.updated_at = g.clock
    for kid in target.keywords:
        if kid not in g.keywords:
            raise NotFound(f"merge references unknown keyword {kid}")
        g.keywords[kid].note_refs.add(target_id)
    g.refresh_note_embedding(target_id, embedder.embed(merged_context))
    return target_id


# ---------------------------------------------------------------------------
# Candidate selection
# ---------------------------------------------------------------------------

def candidate_neighborhood(g: MemoryGraph, note: Note, pool: int) -> list[Note]:
    """Consolidation candidates for a new note, capped at ``pool``.

    Two arms feed a rank fusion: dense neighbors by cosine, and every note
    sharing at least one keyword (ranked by shared count, then id). The
    note itself is excluded.
    """
    if pool <= 0 or not g.notes:
        return []

    dense = [
        (nid, score) for nid, score in g.nearest_notes(note.embedding, pool)
        if nid != note.id
    ]

    shared_counts: dict[NoteId, int] = {}
    for kid in note.keywords:
        kw = g.keywords.get(kid)
        if kw is None:
            continue
        for nid in kw.note_refs:
            if nid != note.id:
                shared_counts[nid] = shared_counts.get(nid, 0) + 1
    sparse = sorted(shared_counts.items(), key=lambda item: (-item[1], item[0]))

    rrf_k = g.config.rrf_k
    fused: dict[NoteId, float] = {}
    for ranked in ([nid for nid, _ in dense], [nid for nid, _ in sparse]):
        for rank, nid in enumerate(ranked, start=1):
            fused[nid] = fused.get(nid, 0.0) + 1.0 / (rrf_k + rank)
    ordered = sorted(fused.items(), key=lambda item: (-item[1], item[0]))
    return [g.notes[nid] for nid, _ in ordered[:pool]]


# ---------------------------------------------------------------------------
# Gated structural update
# ---------------------------------------------------------------------------

def gated_update(
    g: MemoryGraph,
    new_note: Note,
    judgments: list[CandidateJudgment],
    embedder: EmbeddingProvider,
    *,
    disable_merge: bool = False,
    disable_link: bool = False,
    new_keywords: list[KeywordId] | None = None,
) -> IngestReport:
    """Apply exactly one of Merge / Link / Append for a new note.

    Decision order: the strongest SUPPORTS judgment above tau_merge wins a
    single merge; otherwise every RELATED_TO judgment above tau_link (and
    every CONFLICTS judgment, which links with its contrast tag) yields an
    edge and the note is appended; otherwise the note is appended alone.
    """
    cfg = g.config
    new_keywords = new_keywords or []

    if not disable_merge:
        supports = [j for j in judgments if j.relation_type == "SUPPORTS"]
        if supports:
            best = min(supports, key=lambda j: (-j.connection_strength, j.candidate))
            if best.connection_strength > cfg.tau_merge and best.candidate in g.notes:
                merge_notes(g, best.candidate, new_note,
                            best.merged_context or "", embedder)
                g.op_counts["merged"] += 1
                return IngestReport(
                    note_id=best.candidate,
                    operation="MERGED",
                    partner=new_note.id,
                    judgments=judgments,
                    new_keywords=new_keywords,
                )

    link_targets: list[CandidateJudgment] = []
    if not disable_link:
        for j in judgments:
            if j.candidate not in g.notes or j.candidate == new_note.id:
                continue
            if j.relation_type == "CONFLICTS":
                link_targets.append(j)
            elif j.relation_type == "RELATED_TO" and j.connection_strength > cfg.tau_link:
                link_targets.append(j)

    g.add_note(new_note)
    if link_targets:
        for j in link_targets:
            link_notes(g, new_note.id, j.candidate, j.relation_type,
                       j.connection_strength)
        g.op_counts["linked"] += 1
        return IngestReport(
            note_id=new_note.id,
            operation="LINKED",
            partner=link_targets[0].candidate,
            judgments=judgments,
            new_keywords=new_keywords,
        )

    g.op_counts["appended"] += 1
    return IngestReport(
        note_id=new_note.id,
        operation="APPENDED",
        judgments=judgments,
        new_keywords=new_keywords,
    )


# ---------------------------------------------------------------------------
# Ingest pipeline
# ---------------------------------------------------------------------------

def ingest(
    g: MemoryGraph,
    raw_turn: str,
    speaker: str,
    policy: Policy,
    embedder: EmbeddingProvider,
    *,
    turn_id: str | None = None,
    ablation: AblationSwitches | None = None,
    auto_evolve: bool = True,
) -> IngestReport:
    """Consolidate one input turn into the graph.

    Advances the clock, extracts keywords and context, embeds, selects the
    candidate neighborhood and applies the gated update. Judgment failures
    degrade to Append.
    """
    if not raw_turn or not raw_turn.strip():
        raise EmptyText("raw turn is empty")
    ablation = ablation or AblationSwitches()
    cfg = g.config

    g.clock += 1
    timestamp = g.clock
    if turn_id is None:
        turn_id = f"t{timestamp}"

    parsed = policy.ingest_parse(raw_turn, speaker)
    context = raw_turn if ablation.disable_denoise else (parsed.context or raw_turn)

    new_keywords: list[KeywordId] = []
    keyword_ids: set[KeywordId] = set()
    for surface in parsed.keywords:
        existed = surface in g.surface_index
        kid = g.upsert_keyword(surface, embedder.embed(surface))
        keyword_ids.add(kid)
        if not existed:
            new_keywords.append(kid)

    note = Note(
        id=g.next_note_id(),
        raw=[RawSegment(text=raw_turn, turn_id=turn_id, timestamp=timestamp)],
        context=context,
        embedding=embedder.embed(context),
        keywords=keyword_ids,
        created_at=timestamp,
        updated_at=timestamp,
    )

    judgments: list[CandidateJudgment] = []
    if not ablation.disable_update:
        candidates = candidate_neighborhood(g, note, cfg.candidate_pool)
        if candidates:
            try:
                judgments = policy.judge_candidates(
                    note, candidates,
                    surface_of=lambda kid: g.keywords[kid].surface,
                )
            except RemoteFailure as exc:
                logger.warning("judgment failed, appending: %s", exc)
                judgments = []

    report = gated_update(
        g, note, judgments, embedder,
        disable_merge=ablation.disable_merge,
        disable_link=ablation.disable_link,
        new_keywords=new_keywords,
    )

    if len(keyword_ids) > 1:
        update_cooccurrence(g, keyword_ids)

    if auto_evolve and cfg.evolve_every > 0 and g.clock % cfg.evolve_every == 0:
        evolve_topics(g, embedder)

    return report


def ib_diagnostics(g: MemoryGraph, inputs_seen: int) -> IbDiagnostics:
    """Counts plus the compression ratio inputs_seen / note_count."""
    note_count = len(g.notes)
    ratio = 1.0 if note_count == 0 else max(1.0, inputs_seen / note_count)
    if inputs_seen == 0:
        ratio = 1.0
    mean_kw = (
        sum(len(n.keywords) for n in g.notes.values()) / note_count
        if note_count else 0.0
    )
    return IbDiagnostics(
        note_count=note_count,
        merge_total=g.op_counts["merged"],
        link_total=g.op_counts["linked"],
        append_total=g.op_counts["appended"],
        compression_ratio=ratio,
        mean_keywords_per_note=mean_kw,
        related_edge_count=len(g.related),
    )
