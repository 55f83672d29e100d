"""Versioned JSON snapshot persistence for a MemoryGraph.

One self-contained document per file: schema_version, config, clock, node
tables, edge sets and a trailing sha256 checksum over the canonical
serialization of everything that precedes it. Embeddings are stored as
arrays of 64-bit floats, which round-trip bit-exactly through JSON.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .config import EngineConfig
from .errors import CorruptSnapshot, SchemaVersionMismatch
from .graph import Keyword, MemoryGraph, Note, RawSegment, RelatedEdge, Topic

SCHEMA_VERSION = 1


def _graph_document(graph: MemoryGraph) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": graph.config.to_dict(),
        "clock": graph.clock,
        "counters": {
            "note": graph._note_seq,
            "keyword": graph._keyword_seq,
            "topic": graph._topic_seq,
        },
        "op_counts": dict(graph.op_counts),
        "notes": [
            {
                "id": note.id,
                "raw": [seg.to_dict() for seg in note.raw],
                "context": note.context,
                "embedding": note.embedding.tolist(),
                "keywords": sorted(note.keywords),
                "created_at": note.created_at,
                "updated_at": note.updated_at,
                "merge_count": note.merge_count,
            }
            for note in sorted(graph.notes.values(), key=lambda n: n.id)
        ],
        "keywords": [
            {
                "id": kw.id,
                "surface": kw.surface,
                "embedding": kw.embedding.tolist(),
                "note_refs": sorted(kw.note_refs),
                "topic": kw.topic,
            }
            for kw in sorted(graph.keywords.values(), key=lambda k: k.id)
        ],
        "topics": [
            {
                "id": topic.id,
                "members": sorted(topic.members),
                "centroid": topic.centroid.tolist(),
                "undersized": topic.undersized,
            }
            for topic in sorted(graph.topics.values(), key=lambda t: t.id)
        ],
        "related_edges": [
            {
                "src": src,
                "dst": dst,
                "relation_type": edge.relation_type,
                "strength": edge.strength,
            }
            for (src, dst), edge in sorted(graph.related.items())
        ],
        "co_occur_edges": [
            {"a": a, "b": b, "count": count}
            for (a, b), count in sorted(graph.co_occur.items())
        ],
    }


def _checksum(document: dict) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def snapshot_save(graph: MemoryGraph, path: str | Path) -> None:
    """Write the graph to ``path`` atomically (write-then-rename)."""
    path = Path(path)
    document = _graph_document(graph)
    document["checksum"] = _checksum(document)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(document), encoding="utf-8")
    os.replace(tmp, path)


def snapshot_load(path: str | Path) -> MemoryGraph:
    """Rebuild a graph (tables, edges and indices) from a snapshot file."""
    raw = Path(path).read_text(encoding="utf-8")
    try:
        document = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorruptSnapshot(f"snapshot is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise CorruptSnapshot("snapshot root must be an object")

    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"snapshot schema_version {version!r}, expected {SCHEMA_VERSION}"
        )
    stored_checksum = document.pop("checksum", None)
    if stored_checksum is None:
        raise CorruptSnapshot("snapshot missing checksum field")
    if _checksum(document) != stored_checksum:
        raise CorruptSnapshot("snapshot checksum mismatch")

    try:
        config = EngineConfig.from_dict(document["config"])
        graph = MemoryGraph(config)
        graph.clock = int(document["clock"])
        counters = document.get("counters", {})
        graph.op_counts = {
            "merged": int(document.get("op_counts", {}).get("merged", 0)),
            "linked": int(document.get("op_counts", {}).get("linked", 0)),
            "appended": int(document.get("op_counts", {}).get("appended", 0)),
        }

        for item in document["keywords"]:
            kw = Keyword(
                id=int(item["id"]),
                surface=item["surface"],
                embedding=np.asarray(item["embedding"], dtype=np.float64),
                note_refs=set(int(n) for n in item["note_refs"]),
                topic=None if item["topic"] is None else int(item["topic"]),
            )
            graph.keywords[kw.id] = kw
            graph.surface_index[kw.surface] = kw.id
            graph.keyword_index.add(kw.id, kw.embedding)

        for item in document["notes"]:
            note = Note(
                id=int(item["id"]),
                raw=[RawSegment.from_dict(seg) for seg in item["raw"]],
                context=item["context"],
                embedding=np.asarray(item["embedding"], dtype=np.float64),
                keywords=set(int(k) for k in item["keywords"]),
                created_at=int(item["created_at"]),
                updated_at=int(item["updated_at"]),
                merge_count=int(item["merge_count"]),
            )
            graph.notes[note.id] = note
            graph.note_index.add(note.id, note.embedding)

        for item in document["topics"]:
            topic = Topic(
                id=int(item["id"]),
                members=set(int(k) for k in item["members"]),
                centroid=np.asarray(item["centroid"], dtype=np.float64),
                undersized=bool(item.get("undersized", False)),
            )
            graph.topics[topic.id] = topic

        for item in document["related_edges"]:
            graph.related[(int(item["src"]), int(item["dst"]))] = RelatedEdge(
                relation_type=item["relation_type"],
                strength=float(item["strength"]),
            )
        for item in document["co_occur_edges"]:
            graph.co_occur[(int(item["a"]), int(item["b"]))] = int(item["count"])

        graph._note_seq = int(counters.get("note", max(graph.notes, default=0)))
        graph._keyword_seq = int(counters.get("keyword", max(graph.keywords, default=0)))
        graph._topic_seq = int(counters.get("topic", max(graph.topics, default=0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptSnapshot(f"snapshot structure invalid: {exc}") from exc

    return graph


def graphs_equal(a: MemoryGraph, b: MemoryGraph) -> bool:
    """Structural deep equality: ids, text, edges and bit-exact embeddings."""
    return structural_diff(a, b) == []


def structural_diff(a: MemoryGraph, b: MemoryGraph) -> list[str]:
    """Human-readable differences between two graphs (empty = identical)."""
    diffs: list[str] = []
    if a.config.to_dict() != b.config.to_dict():
        diffs.append("config differs")
    if a.clock != b.clock:
        diffs.append(f"clock {a.clock} != {b.clock}")
    if a.op_counts != b.op_counts:
        diffs.append("op_counts differ")
    if (a._note_seq, a._keyword_seq, a._topic_seq) != (b._note_seq, b._keyword_seq, b._topic_seq):
        diffs.append("id counters differ")
    if set(a.notes) != set(b.notes):
        diffs.append(f"note ids differ: {sorted(set(a.notes) ^ set(b.notes))}")
    else:
        for nid, na in a.notes.items():
            nb = b.notes[nid]
            if [s.to_dict() for s in na.raw] != [s.to_dict() for s in nb.raw]:
                diffs.append(f"note {nid}: raw differs")
            if na.context != nb.context:
                diffs.append(f"note {nid}: context differs")
            if not np.array_equal(na.embedding, nb.embedding):
                diffs.append(f"note {nid}: embedding differs")
            if na.keywords != nb.keywords:
                diffs.append(f"note {nid}: keywords differ")
            if (na.created_at, na.updated_at, na.merge_count) != (
                nb.created_at, nb.updated_at, nb.merge_count
            ):
                diffs.append(f"note {nid}: timestamps/merge_count differ")
    if set(a.keywords) != set(b.keywords):
        diffs.append(f"keyword ids differ: {sorted(set(a.keywords) ^ set(b.keywords))}")
    else:
        for kid, ka in a.keywords.items():
            kb = b.keywords[kid]
            if (ka.surface, ka.topic, ka.note_refs) != (kb.surface, kb.topic, kb.note_refs):
                diffs.append(f"keyword {kid}: fields differ")
            if not np.array_equal(ka.embedding, kb.embedding):
                diffs.append(f"keyword {kid}: embedding differs")
    if set(a.topics) != set(b.topics):
        diffs.append(f"topic ids differ: {sorted(set(a.topics) ^ set(b.topics))}")
    else:
        for tid, ta in a.topics.items():
            tb = b.topics[tid]
            if ta.members != tb.members or ta.undersized != tb.undersized:
                diffs.append(f"topic {tid}: fields differ")
            if not np.array_equal(ta.centroid, tb.centroid):
                diffs.append(f"topic {tid}: centroid differs")
    if set(a.related) != set(b.related):
        diffs.append("related edge sets differ")
    else:
        for pair, ea in a.related.items():
            eb = b.related[pair]
            if (ea.relation_type, ea.strength) != (eb.relation_type, eb.strength):
                diffs.append(f"related edge {pair}: fields differ")
    if a.co_occur != b.co_occur:
        diffs.append("co-occurrence edges differ")
    return diffs
