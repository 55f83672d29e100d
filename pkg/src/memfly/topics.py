"""Keyword-community maintenance: weighted modularity, a Leiden-style
partitioner with cardinality repair, and the topic rebuild pass.

The partitioner is deterministic for a given seed: visit orders come from
seeded rngs, several independent restarts are scored, and ties resolve to
the lexicographically smallest canonical labeling.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGraph
from .graph import MemoryGraph, Topic

Edges = dict[tuple[int, int], float]

_RESTARTS = 8


# ---------------------------------------------------------------------------
# Public modularity
# ---------------------------------------------------------------------------

def modularity(edges: Edges, assignment: dict[int, int]) -> float:
    """Weighted modularity of a partition.

    Q = sum over communities of [ L_c / m - (d_c / 2m)^2 ], with L_c the
    intra-community edge weight, d_c the community degree sum and m the
    total edge weight. Raises EmptyGraph when m == 0.
    """
    m = float(sum(edges.values()))
    if m <= 0.0:
        raise EmptyGraph("modularity needs at least one weighted edge")
    vertices = set()
    for a, b in edges:
        vertices.add(a)
        vertices.add(b)
    missing = vertices - set(assignment)
    if missing:
        raise ValueError(f"assignment must cover all vertices, missing {sorted(missing)}")

    intra: dict[int, float] = {}
    degree: dict[int, float] = {}
    for (a, b), w in edges.items():
        ca, cb = assignment[a], assignment[b]
        degree[ca] = degree.get(ca, 0.0) + w
        degree[cb] = degree.get(cb, 0.0) + w
        if ca == cb:
            intra[ca] = intra.get(ca, 0.0) + w

    q = 0.0
    for c in degree:
        q += intra.get(c, 0.0) / m - (degree[c] / (2.0 * m)) ** 2
    return q


# ---------------------------------------------------------------------------
# Internal compact graph (self-loops appear during aggregation)
# ---------------------------------------------------------------------------

class _Compact:
    """Graph over nodes 0..n-1 with adjacency dicts and self-loop weights."""

    def __init__(self, n: int):
        self.n = n
        self.adj: list[dict[int, float]] = [dict() for _ in range(n)]
        self.self_loop = [0.0] * n
        self.m = 0.0

    def add_edge(self, a: int, b: int, w: float) -> None:
        if a == b:
            self.self_loop[a] += w
        else:
            self.adj[a][b] = self.adj[a].get(b, 0.0) + w
            self.adj[b][a] = self.adj[b].get(a, 0.0) + w
        self.m += w

    def degree(self, v: int) -> float:
        return sum(self.adj[v].values()) + 2.0 * self.self_loop[v]


def _compact_quality(g: _Compact, labels: list[int]) -> float:
    intra: dict[int, float] = {}
    degree: dict[int, float] = {}
    for v in range(g.n):
        c = labels[v]
        degree[c] = degree.get(c, 0.0) + g.degree(v)
        intra[c] = intra.get(c, 0.0) + g.self_loop[v]
        for u, w in g.adj[v].items():
            if u > v and labels[u] == c:
                intra[c] = intra.get(c, 0.0) + w
    q = 0.0
    for c in degree:
        q += intra.get(c, 0.0) / g.m - (degree[c] / (2.0 * g.m)) ** 2
    return q


def _local_move(g: _Compact, labels: list[int], rng: random.Random,
                restrict: list[int] | None = None) -> bool:
    """Greedy single-node moves until no move improves modularity.

    Candidate targets are the communities of a node's neighbors plus a
    fresh singleton. With ``restrict`` set, only neighbors sharing the
    node's restrict label count (the refinement phase).
    """
    comm_degree: dict[int, float] = {}
    comm_size: dict[int, int] = {}
    for v in range(g.n):
        comm_degree[labels[v]] = comm_degree.get(labels[v], 0.0) + g.degree(v)
        comm_size[labels[v]] = comm_size.get(labels[v], 0) + 1
    next_label = max(labels) + 1 if labels else 0

    order = list(range(g.n))
    rng.shuffle(order)
    m = g.m
    improved_any = False
    changed = True
    while changed:
        changed = False
        for v in order:
            old = labels[v]
            k_v = g.degree(v)
            weights: dict[int, float] = {}
            for u, w in g.adj[v].items():
                if restrict is not None and restrict[u] != restrict[v]:
                    continue
                cu = labels[u]
                weights[cu] = weights.get(cu, 0.0) + w
            comm_degree[old] -= k_v
            comm_size[old] -= 1
            # gain(c) = w_{v,c}/m - k_v * deg_c / (2 m^2), v removed from old;
            # shared terms (self-loop, k_v^2) cancel across candidates.
            best_c: int | None = old
            best_gain = weights.get(old, 0.0) / m - k_v * comm_degree[old] / (2.0 * m * m)
            if comm_size[old] > 0 and 0.0 > best_gain + 1e-12:
                best_c, best_gain = None, 0.0  # None = fresh singleton
            for c in sorted(weights):
                if c == old:
                    continue
                gain = weights[c] / m - k_v * comm_degree.get(c, 0.0) / (2.0 * m * m)
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            if best_c is None:
                best_c = next_label
                next_label += 1
            comm_degree[best_c] = comm_degree.get(best_c, 0.0) + k_v
            comm_size[best_c] = comm_size.get(best_c, 0) + 1
            if best_c != old:
                labels[v] = best_c
                changed = True
                improved_any = True
    return improved_any


def _refine(g: _Compact, coarse: list[int], rng: random.Random) -> list[int]:
    """Split each coarse community into well-connected sub-communities by
    restricted local moving from singletons."""
    labels = list(range(g.n))
    _local_move(g, labels, rng, restrict=coarse)
    return labels


def _aggregate(g: _Compact, labels: list[int]) -> tuple[_Compact, list[int]]:
    """Collapse label groups into super-nodes; returns (graph, node->super)."""
    remap: dict[int, int] = {}
    for v in range(g.n):
        if labels[v] not in remap:
            remap[labels[v]] = len(remap)
    agg = _Compact(len(remap))
    for v in range(g.n):
        sv = remap[labels[v]]
        if g.self_loop[v]:
            agg.add_edge(sv, sv, g.self_loop[v])
        for u, w in g.adj[v].items():
            if u > v:
                agg.add_edge(sv, remap[labels[u]], w)
    return agg, [remap[labels[v]] for v in range(g.n)]


def _leiden_once(g0: _Compact, rng: random.Random) -> list[int]:
    """Local moving, refinement and aggregation repeated to convergence.

    Each level's initial partition is the previous level's communities,
    while aggregation happens on the finer refined partition.
    """
    n0 = g0.n
    node_to_agg = list(range(n0))  # original node -> current aggregate node
    graph = g0
    init = list(range(graph.n))
    while True:
        labels = list(init)
        _local_move(graph, labels, rng)
        refined = _refine(graph, labels, rng)
        if len(set(refined)) == graph.n:
            return [labels[node_to_agg[v]] for v in range(n0)]
        agg, agg_map = _aggregate(graph, refined)
        init_agg = [0] * agg.n
        for v in range(graph.n):
            init_agg[agg_map[v]] = labels[v]
        node_to_agg = [agg_map[node_to_agg[v]] for v in range(n0)]
        graph, init = agg, init_agg


def _canonical(labels: list[int]) -> tuple[int, ...]:
    """Relabel communities in order of first appearance."""
    remap: dict[int, int] = {}
    out = []
    for lab in labels:
        if lab not in remap:
            remap[lab] = len(remap)
        out.append(remap[lab])
    return tuple(out)


@dataclass
class Partition:
    """Community assignment over keyword ids plus its modularity."""

    assignment: dict[int, int]
    modularity: float
    undersized: set[int] = field(default_factory=set)

    def communities(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for node, label in self.assignment.items():
            groups.setdefault(label, []).append(node)
        for members in groups.values():
            members.sort()
        return groups


def _components(vertices: list[int], adj: dict[int, dict[int, float]]) -> list[list[int]]:
    seen: set[int] = set()
    comps: list[list[int]] = []
    for start in vertices:
        if start in seen:
            continue
        stack, comp = [start], []
        seen.add(start)
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in adj.get(v, {}):
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


def _best_labels(edges: Edges, vertices: list[int], seed: int) -> dict[int, int]:
    """Multi-restart optimization, best modularity wins deterministically."""
    index = {v: i for i, v in enumerate(vertices)}
    g = _Compact(len(vertices))
    for (a, b), w in edges.items():
        g.add_edge(index[a], index[b], float(w))

    best: tuple[float, tuple[int, ...]] | None = None
    for restart in range(_RESTARTS):
        rng = random.Random((seed * 1_000_003 + restart) & 0xFFFFFFFF)
        labels = _leiden_once(g, rng)
        canon = _canonical(labels)
        q = _compact_quality(g, list(canon))
        if best is None or q > best[0] + 1e-12 or (
            abs(q - best[0]) <= 1e-12 and canon < best[1]
        ):
            best = (q, canon)
    assert best is not None
    return {v: best[1][index[v]] for v in vertices}


def _merge_undersized(
    edges: Edges,
    assignment: dict[int, int],
    delta_min: int,
    undersized_out: set[int],
) -> dict[int, int]:
    """Fold communities below delta_min into their best-Q neighbor."""
    adj: dict[int, dict[int, float]] = {}
    for (a, b), w in edges.items():
        adj.setdefault(a, {})[b] = adj.setdefault(a, {}).get(b, 0.0) + w
        adj.setdefault(b, {})[a] = adj.setdefault(b, {}).get(a, 0.0) + w

    assignment = dict(assignment)
    while True:
        sizes: dict[int, int] = {}
        for lab in assignment.values():
            sizes[lab] = sizes.get(lab, 0) + 1
        small = sorted(
            (lab for lab, size in sizes.items() if size < delta_min),
            key=lambda lab: (sizes[lab], lab),
        )
        merged_one = False
        for lab in small:
            members = [v for v, l in assignment.items() if l == lab]
            neighbors = set()
            for v in members:
                for u in adj.get(v, {}):
                    if assignment[u] != lab:
                        neighbors.add(assignment[u])
            if not neighbors:
                undersized_out.add(lab)
                continue
            best_target, best_q = None, -np.inf
            for target in sorted(neighbors):
                trial = dict(assignment)
                for v in members:
                    trial[v] = target
                q = modularity(edges, trial)
                if q > best_q + 1e-15:
                    best_target, best_q = target, q
            for v in members:
                assignment[v] = best_target
            undersized_out.discard(lab)
            merged_one = True
            break  # sizes changed; recompute
        if not merged_one:
            return assignment


def _split_oversized(
    edges: Edges,
    assignment: dict[int, int],
    delta_min: int,
    delta_max: int,
    seed: int,
    undersized_out: set[int],
    next_label: int,
) -> tuple[dict[int, int], int]:
    """Recursively split communities above delta_max."""
    assignment = dict(assignment)
    while True:
        groups: dict[int, list[int]] = {}
        for v, lab in assignment.items():
            groups.setdefault(lab, []).append(v)
        oversized = sorted(
            (lab for lab, members in groups.items() if len(members) > delta_max),
            key=lambda lab: (-len(groups[lab]), lab),
        )
        if not oversized:
            return assignment, next_label
        lab = oversized[0]
        members = sorted(groups[lab])
        member_set = set(members)
        sub_edges: Edges = {
            pair: w for pair, w in edges.items()
            if pair[0] in member_set and pair[1] in member_set
        }
        sub_labels: dict[int, int] | None = None
        if sub_edges:
            sub_labels = _best_labels(sub_edges, members, seed + lab + 1)
            if len(set(sub_labels.values())) < 2:
                sub_labels = None
        if sub_labels is None:
            # Cohesive or edgeless region: deterministic balanced chunks.
            n_chunks = -(-len(members) // delta_max)
            chunk = -(-len(members) // n_chunks)
            sub_labels = {v: i // chunk for i, v in enumerate(members)}
        # Re-run repair inside the split region.
        sub_under: set[int] = set()
        sub_labels = _merge_undersized(sub_edges, sub_labels, delta_min, sub_under)
        relabel: dict[int, int] = {}
        for v in members:
            sub = sub_labels[v]
            if sub not in relabel:
                relabel[sub] = next_label
                next_label += 1
            assignment[v] = relabel[sub]
        for sub in sub_under:
            undersized_out.add(relabel[sub])


def leiden_partition(edges: Edges, delta_min: int, delta_max: int,
                     seed: int = 0) -> Partition:
    """Partition a weighted graph maximizing modularity under size bounds.

    After optimization, communities below delta_min merge into their
    best-modularity neighbor (a connected component smaller than delta_min
    stays as a recorded undersized community) and communities above
    delta_max are split recursively.
    """
    edges = {pair: float(w) for pair, w in edges.items() if w > 0}
    if not edges:
        raise EmptyGraph("partitioning needs at least one weighted edge")
    vertices = sorted({v for pair in edges for v in pair})

    assignment = _best_labels(edges, vertices, seed)

    undersized: set[int] = set()
    assignment = _merge_undersized(edges, assignment, delta_min, undersized)
    next_label = max(assignment.values()) + 1
    assignment, _ = _split_oversized(
        edges, assignment, delta_min, delta_max, seed, undersized, next_label
    )

    canon_map: dict[int, int] = {}
    canonical: dict[int, int] = {}
    for v in vertices:
        lab = assignment[v]
        if lab not in canon_map:
            canon_map[lab] = len(canon_map)
        canonical[v] = canon_map[lab]
    undersized_canon = {canon_map[lab] for lab in undersized if lab in canon_map}

    return Partition(
        assignment=canonical,
        modularity=modularity(edges, canonical),
        undersized=undersized_canon,
    )


# ---------------------------------------------------------------------------
# Topic rebuild
# ---------------------------------------------------------------------------

def evolve_topics(g: MemoryGraph, embedder) -> int:
    """Re-partition the keyword co-occurrence graph into topics.

    No-op (returning the current count) when there are no co-occurrence
    edges. Keywords without co-occurrence edges stay topic-less.
    """
    if not g.co_occur:
        return len(g.topics)

    edges: Edges = {pair: float(count) for pair, count in g.co_occur.items()}
    partition = leiden_partition(
        edges, g.config.delta_min, g.config.delta_max, g.config.seed
    )

    for kw in g.keywords.values():
        kw.topic = None
    g.topics.clear()

    groups = partition.communities()
    for label in sorted(groups, key=lambda lab: groups[lab][0]):
        members = [kid for kid in groups[label] if kid in g.keywords]
        if not members:
            continue
        vectors = [g.keywords[kid].embedding for kid in members]
        mean = np.mean(vectors, axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            centroid = g.keywords[members[0]].embedding.copy()
        else:
            centroid = mean / norm
        topic = Topic(
            id=g.next_topic_id(),
            members=set(members),
            centroid=centroid,
            undersized=label in partition.undersized,
        )
        g.topics[topic.id] = topic
        for kid in members:
            g.keywords[kid].topic = topic.id
    return len(g.topics)
