"""Stratified memory state: notes, keyword anchors, topics, edges, indices.

``MemoryGraph`` owns every structural invariant. All rankings produced here
are deterministic: descending score, then ascending id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EngineConfig
from .embeddings import unit_normalize
from .errors import (
    DimensionMismatch,
    EmptySurface,
    NotFound,
    SelfLoop,
    UnknownKeyword,
)

NoteId = int
KeywordId = int
TopicId = int

RELATION_TYPES = ("SUPPORTS", "CONFLICTS", "RELATED_TO")

_NORM_TOL = 1e-6


@dataclass
class RawSegment:
    """One verbatim input preserved inside a note."""

    text: str
    turn_id: str
    timestamp: int

    def to_dict(self) -> dict:
        return {"text": self.text, "turn_id": self.turn_id, "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, data: dict) -> "RawSegment":
        return cls(text=data["text"], turn_id=data["turn_id"], timestamp=data["timestamp"])


@dataclass
class Note:
    """Atomic memory unit: verbatim segments plus a denoised context."""

    id: NoteId
    raw: list[RawSegment]
    context: str
    embedding: np.ndarray
    keywords: set[KeywordId]
    created_at: int
    updated_at: int
    merge_count: int = 0


@dataclass
class Keyword:
    """Symbolic anchor with its own embedding and note back-references."""

    id: KeywordId
    surface: str
    embedding: np.ndarray
    note_refs: set[NoteId] = field(default_factory=set)
    topic: TopicId | None = None


@dataclass
class Topic:
    """Keyword community with a unit-norm centroid.

    ``undersized`` marks a connected component smaller than delta_min that
    was kept as its own topic rather than force-merged.
    """

    id: TopicId
    members: set[KeywordId]
    centroid: np.ndarray
    undersized: bool = False


@dataclass
class RelatedEdge:
    relation_type: str
    strength: float


class DenseIndex:
    """Cosine top-k over unit vectors keyed by integer id.

    Exact mode is a full scan (the oracle). Above ``exact_threshold`` in
    "auto"/"approx" mode an inverted-file structure is used: vectors are
    bucketed around k-means centroids and only the closest buckets are
    scanned. The structure rebuilds lazily as the collection grows.
    """

    def __init__(self, dim: int, *, mode: str = "auto",
                 exact_threshold: int = 4096, seed: int = 0):
        self.dim = dim
        self.mode = mode
        self.exact_threshold = exact_threshold
        self.seed = seed
        self._keys: list[int] = []
        self._pos: dict[int, int] = {}
        self._matrix = np.zeros((0, dim), dtype=np.float64)
        self._ivf_centroids: np.ndarray | None = None
        self._ivf_lists: list[list[int]] | None = None
        self._ivf_size = 0

    def __len__(self) -> int:
        return len(self._keys)

    def _invalidate(self) -> None:
        self._ivf_centroids = None
        self._ivf_lists = None

    def add(self, key: int, vec: np.ndarray) -> None:
        if key in self._pos:
            raise KeyError(f"key {key} already indexed")
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"index dim {self.dim}, vector {vec.shape}")
        self._pos[key] = len(self._keys)
        self._keys.append(key)
        self._matrix = np.vstack([self._matrix, vec[None, :]])
        self._invalidate()

    def update(self, key: int, vec: np.ndarray) -> None:
        if key not in self._pos:
            raise KeyError(f"key {key} not indexed")
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"index dim {self.dim}, vector {vec.shape}")
        self._matrix[self._pos[key]] = vec
        self._invalidate()

    def remove(self, key: int) -> None:
        pos = self._pos.pop(key, None)
        if pos is None:
            raise KeyError(f"key {key} not indexed")
        last = len(self._keys) - 1
        if pos != last:
            moved = self._keys[last]
            self._keys[pos] = moved
            self._matrix[pos] = self._matrix[last]
            self._pos[moved] = pos
        self._keys.pop()
        self._matrix = self._matrix[:last]
        self._invalidate()

    def vector(self, key: int) -> np.ndarray:
        return self._matrix[self._pos[key]].copy()

    def _use_exact(self) -> bool:
        if self.mode == "exact":
            return True
        if self.mode == "approx":
            return False
        return len(self._keys) <= self.exact_threshold

    def _rank(self, candidates: np.ndarray, scores: np.ndarray, k: int) -> list[tuple[int, float]]:
        order = np.lexsort((candidates, -scores))[:k]
        return [(int(candidates[i]), float(scores[i])) for i in order]

    def search(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        """Top-k (key, cosine) pairs, score desc then key asc."""
        if query.shape != (self.dim,):
            raise DimensionMismatch(f"index dim {self.dim}, query {query.shape}")
        if not self._keys or k <= 0:
            return []
        if self._use_exact():
            scores = self._matrix @ query
            return self._rank(np.asarray(self._keys), scores, k)
        return self._search_ivf(query, k)

    # -- inverted-file approximate search -----------------------------------

    def _build_ivf(self) -> None:
        n = len(self._keys)
        n_cells = max(2, int(np.sqrt(n)))
        rng = np.random.default_rng(self.seed)
        centroids = self._matrix[rng.choice(n, size=n_cells, replace=False)].copy()
        assign = np.zeros(n, dtype=np.int64)
        for _ in range(6):
            assign = np.argmax(self._matrix @ centroids.T, axis=1)
            for c in range(n_cells):
                members = self._matrix[assign == c]
                if len(members):
                    mean = members.mean(axis=0)
                    norm = np.linalg.norm(mean)
                    if norm > 0:
                        centroids[c] = mean / norm
        lists: list[list[int]] = [[] for _ in range(n_cells)]
        for pos, cell in enumerate(assign):
            lists[int(cell)].append(pos)
        self._ivf_centroids = centroids
        self._ivf_lists = lists
        self._ivf_size = n

    def _search_ivf(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        if self._ivf_centroids is None or self._ivf_size != len(self._keys):
            self._build_ivf()
        assert self._ivf_centroids is not None and self._ivf_lists is not None
        n_cells = len(self._ivf_lists)
        nprobe = max(1, n_cells // 4)
        cell_scores = self._ivf_centroids @ query
        probe = np.argsort(-cell_scores)[:nprobe]
        positions: list[int] = []
        for cell in probe:
            positions.extend(self._ivf_lists[int(cell)])
        if len(positions) < k:  # widen until enough candidates
            for cell in np.argsort(-cell_scores)[nprobe:]:
                positions.extend(self._ivf_lists[int(cell)])
                if len(positions) >= k:
                    break
        pos_arr = np.asarray(positions, dtype=np.int64)
        scores = self._matrix[pos_arr] @ query
        keys = np.asarray([self._keys[p] for p in positions])
        return self._rank(keys, scores, k)


class MemoryGraph:
    """Full memory state: node tables, edge sets, indices and the clock.

    Single-writer / many-reader: callers serialize mutations; read
    operations never mutate state.
    """

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self.config.validate()
        dim = self.config.embedding_dim
        self.notes: dict[NoteId, Note] = {}
        self.keywords: dict[KeywordId, Keyword] = {}
        self.topics: dict[TopicId, Topic] = {}
        self.related: dict[tuple[NoteId, NoteId], RelatedEdge] = {}
        self.co_occur: dict[tuple[KeywordId, KeywordId], int] = {}
        self.surface_index: dict[str, KeywordId] = {}
        self.note_index = DenseIndex(
            dim, mode=self.config.index_mode,
            exact_threshold=self.config.exact_index_threshold,
            seed=self.config.seed,
        )
        self.keyword_index = DenseIndex(
            dim, mode=self.config.index_mode,
            exact_threshold=self.config.exact_index_threshold,
            seed=self.config.seed,
        )
        self.clock: int = 0
        self.op_counts: dict[str, int] = {"merged": 0, "linked": 0, "appended": 0}
        self._note_seq: int = 0
        self._keyword_seq: int = 0
        self._topic_seq: int = 0

    # -- id issue ------------------------------------------------------------

    def next_note_id(self) -> NoteId:
        self._note_seq += 1
        return self._note_seq

    def next_keyword_id(self) -> KeywordId:
        self._keyword_seq += 1
        return self._keyword_seq

    def next_topic_id(self) -> TopicId:
        self._topic_seq += 1
        return self._topic_seq

    # -- notes ----------------------------------------------------------------

    def _check_embedding(self, vec: np.ndarray) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64)
        if arr.shape != (self.config.embedding_dim,):
            raise DimensionMismatch(
                f"expected dim {self.config.embedding_dim}, got {arr.shape}"
            )
        return unit_normalize(arr)

    def add_note(self, note: Note) -> NoteId:
        """Store a note; its keywords must already be registered."""
        if note.id in self.notes:
            raise ValueError(f"note id {note.id} already stored")
        if not note.raw:
            raise ValueError("note.raw must be non-empty")
        for kid in note.keywords:
            if kid not in self.keywords:
                raise UnknownKeyword(f"note {note.id} references unknown keyword {kid}")
        note.embedding = self._check_embedding(note.embedding)
        self.notes[note.id] = note
        self.note_index.add(note.id, note.embedding)
        for kid in note.keywords:
            self.keywords[kid].note_refs.add(note.id)
        return note.id

    def remove_note(self, note_id: NoteId) -> Note:
        """Drop a note, its index entry and incident related edges.

        Keywords left with empty note_refs are retained; topic membership
        is untouched until the next evolution pass.
        """
        note = self.notes.pop(note_id, None)
        if note is None:
            raise NotFound(f"note {note_id} does not exist")
        self.note_index.remove(note_id)
        for kid in note.keywords:
            self.keywords[kid].note_refs.discard(note_id)
        for pair in [p for p in self.related if note_id in p]:
            del self.related[pair]
        return note

    def get_note(self, note_id: NoteId) -> Note:
        note = self.notes.get(note_id)
        if note is None:
            raise NotFound(f"note {note_id} does not exist")
        return note

    def refresh_note_embedding(self, note_id: NoteId, vec: np.ndarray) -> None:
        note = self.get_note(note_id)
        note.embedding = self._check_embedding(vec)
        self.note_index.update(note_id, note.embedding)

    # -- keywords ---------------------------------------------------------------

    def upsert_keyword(self, surface: str, embedding: np.ndarray) -> KeywordId:
        """Return the existing id for a surface, or insert a new keyword.

        The surface must already be canonical; an existing keyword keeps
        its original embedding.
        """
        if not surface or not surface.strip():
            raise EmptySurface("keyword surface is empty")
        existing = self.surface_index.get(surface)
        if existing is not None:
            return existing
        kid = self.next_keyword_id()
        vec = self._check_embedding(embedding)
        self.keywords[kid] = Keyword(id=kid, surface=surface, embedding=vec)
        self.surface_index[surface] = kid
        self.keyword_index.add(kid, vec)
        return kid

    def get_keyword(self, keyword_id: KeywordId) -> Keyword:
        kw = self.keywords.get(keyword_id)
        if kw is None:
            raise NotFound(f"keyword {keyword_id} does not exist")
        return kw

    # -- edges -------------------------------------------------------------------

    def put_related_edge(self, src: NoteId, dst: NoteId,
                         relation_type: str, strength: float) -> None:
        """Insert or overwrite a directed related edge (last writer wins)."""
        if src == dst:
            raise SelfLoop(f"note {src} cannot relate to itself")
        if src not in self.notes or dst not in self.notes:
            raise NotFound(f"edge endpoints must exist: {src} -> {dst}")
        if relation_type not in RELATION_TYPES:
            raise ValueError(f"unknown relation_type {relation_type!r}")
        strength = float(strength)
        if not (0.0 <= strength <= 1.0):
            raise ValueError(f"strength must lie in [0, 1], got {strength}")
        self.related[(src, dst)] = RelatedEdge(relation_type, strength)

    def bump_cooccurrence(self, a: KeywordId, b: KeywordId) -> None:
        if a == b:
            raise SelfLoop("co-occurrence pairs must be distinct")
        if a not in self.keywords or b not in self.keywords:
            raise NotFound(f"co-occurrence endpoints must exist: {a}, {b}")
        key = (a, b) if a < b else (b, a)
        self.co_occur[key] = self.co_occur.get(key, 0) + 1

    def related_neighbors(self, note_id: NoteId) -> set[NoteId]:
        """Neighbors across related edges, ignoring direction."""
        out: set[NoteId] = set()
        for (src, dst) in self.related:
            if src == note_id:
                out.add(dst)
            elif dst == note_id:
                out.add(src)
        return out

    # -- search ---------------------------------------------------------------

    def nearest_notes(self, query: np.ndarray, k: int) -> list[tuple[NoteId, float]]:
        """Top-k notes by cosine, score desc then id asc."""
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.config.embedding_dim,):
            raise DimensionMismatch(
                f"expected dim {self.config.embedding_dim}, got {query.shape}"
            )
        return self.note_index.search(query, k)

    def nearest_keywords(self, query: np.ndarray, k: int) -> list[tuple[KeywordId, float]]:
        """Top-k keywords by cosine, score desc then id asc."""
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.config.embedding_dim,):
            raise DimensionMismatch(
                f"expected dim {self.config.embedding_dim}, got {query.shape}"
            )
        return self.keyword_index.search(query, k)

    # -- validation --------------------------------------------------------------

    def check_invariants(self) -> list[str]:
        """Empty list iff every structural invariant holds."""
        bad: list[str] = []
        dim = self.config.embedding_dim

        for nid, note in self.notes.items():
            if note.id != nid:
                bad.append(f"note {nid}: table key disagrees with note.id {note.id}")
            if note.embedding.shape != (dim,):
                bad.append(f"note {nid}: embedding dim {note.embedding.shape} != ({dim},)")
            else:
                norm = float(np.linalg.norm(note.embedding))
                if abs(norm - 1.0) > _NORM_TOL:
                    bad.append(f"note {nid}: embedding norm {norm} not within {_NORM_TOL} of 1")
            if not note.raw:
                bad.append(f"note {nid}: raw segments empty")
            if note.merge_count != len(note.raw) - 1:
                bad.append(
                    f"note {nid}: merge_count {note.merge_count} != |raw|-1 ({len(note.raw) - 1})"
                )
            for kid in note.keywords:
                kw = self.keywords.get(kid)
                if kw is None:
                    bad.append(f"note {nid}: unknown keyword {kid}")
                elif nid not in kw.note_refs:
                    bad.append(f"note {nid}: keyword {kid} missing back-reference")
            if nid > self._note_seq:
                bad.append(f"note {nid}: id beyond issued counter {self._note_seq}")

        surfaces_seen: dict[str, KeywordId] = {}
        for kid, kw in self.keywords.items():
            if kw.id != kid:
                bad.append(f"keyword {kid}: table key disagrees with keyword.id {kw.id}")
            if kw.surface in surfaces_seen:
                bad.append(f"keyword {kid}: duplicate surface {kw.surface!r}")
            surfaces_seen[kw.surface] = kid
            if self.surface_index.get(kw.surface) != kid:
                bad.append(f"keyword {kid}: surface index out of sync for {kw.surface!r}")
            if kw.embedding.shape != (dim,):
                bad.append(f"keyword {kid}: embedding dim {kw.embedding.shape} != ({dim},)")
            else:
                norm = float(np.linalg.norm(kw.embedding))
                if abs(norm - 1.0) > _NORM_TOL:
                    bad.append(f"keyword {kid}: embedding norm {norm} not near 1")
            for nid in kw.note_refs:
                note = self.notes.get(nid)
                if note is None:
                    bad.append(f"keyword {kid}: note_ref {nid} does not exist")
                elif kid not in note.keywords:
                    bad.append(f"keyword {kid}: note {nid} does not list it back")
            if kw.topic is not None and kw.topic not in self.topics:
                bad.append(f"keyword {kid}: topic {kw.topic} does not exist")

        assigned: dict[KeywordId, TopicId] = {}
        for tid, topic in self.topics.items():
            if topic.id != tid:
                bad.append(f"topic {tid}: table key disagrees with topic.id {topic.id}")
            if not topic.members:
                bad.append(f"topic {tid}: empty member set")
            for kid in topic.members:
                if kid in assigned:
                    bad.append(f"topic {tid}: keyword {kid} also in topic {assigned[kid]}")
                assigned[kid] = tid
                kw = self.keywords.get(kid)
                if kw is None:
                    bad.append(f"topic {tid}: member {kid} does not exist")
                elif kw.topic != tid:
                    bad.append(f"topic {tid}: member {kid} back-reference is {kw.topic}")
            if not topic.undersized and len(topic.members) < self.config.delta_min:
                bad.append(f"topic {tid}: size {len(topic.members)} below delta_min")
            if len(topic.members) > self.config.delta_max:
                bad.append(f"topic {tid}: size {len(topic.members)} above delta_max")
            if topic.centroid.shape != (dim,):
                bad.append(f"topic {tid}: centroid dim {topic.centroid.shape} != ({dim},)")
            else:
                norm = float(np.linalg.norm(topic.centroid))
                if abs(norm - 1.0) > _NORM_TOL:
                    bad.append(f"topic {tid}: centroid norm {norm} not near 1")
                member_vecs = [
                    self.keywords[k].embedding for k in topic.members if k in self.keywords
                ]
                if member_vecs:
                    mean = np.mean(member_vecs, axis=0)
                    mnorm = float(np.linalg.norm(mean))
                    if mnorm > 0 and float(np.linalg.norm(mean / mnorm - topic.centroid)) > 1e-6:
                        bad.append(f"topic {tid}: centroid differs from normalized member mean")

        for (src, dst), edge in self.related.items():
            if src == dst:
                bad.append(f"related edge {src}->{dst}: self loop")
            if src not in self.notes or dst not in self.notes:
                bad.append(f"related edge {src}->{dst}: dangling endpoint")
            if edge.relation_type not in RELATION_TYPES:
                bad.append(f"related edge {src}->{dst}: bad relation {edge.relation_type!r}")
            if not (0.0 <= edge.strength <= 1.0):
                bad.append(f"related edge {src}->{dst}: strength {edge.strength} out of range")

        for (a, b), count in self.co_occur.items():
            if a >= b:
                bad.append(f"co-occurrence {a},{b}: not canonically ordered")
            if a not in self.keywords or b not in self.keywords:
                bad.append(f"co-occurrence {a},{b}: dangling endpoint")
            if count <= 0:
                bad.append(f"co-occurrence {a},{b}: non-positive count {count}")

        if set(self.note_index._pos) != set(self.notes):
            bad.append("note index keys out of sync with note table")
        if set(self.keyword_index._pos) != set(self.keywords):
            bad.append("keyword index keys out of sync with keyword table")
        for nid, note in self.notes.items():
            if nid in self.note_index._pos and not np.array_equal(
                self.note_index.vector(nid), note.embedding
            ):
                bad.append(f"note {nid}: index vector differs from table")
        for kid, kw in self.keywords.items():
            if kid in self.keyword_index._pos and not np.array_equal(
                self.keyword_index.vector(kid), kw.embedding
            ):
                bad.append(f"keyword {kid}: index vector differs from table")

        return bad
