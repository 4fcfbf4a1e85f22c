"""Pair-centered subgraph extraction.

Two views are produced for a candidate link (u, v):

* a local view: the intersection of the k-hop neighborhoods of u and v,
  with every edge between u and v removed first so the queried link can
  never leak into its own features;
* a semantic view: the union of all relation-sequence path instances that
  start at u and end at v, matching a configured set of relation-class
  sequences ("metapaths") over the smoothed graph.

Both extractions are pure functions of their arguments.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .kgstore import KnowledgeGraph


@dataclass(frozen=True)
class Metapath:
    head_type: str
    relations: tuple          # relation ids, in traversal order
    tail_type: str


@dataclass
class LocalSubgraph:
    """nodes[0] == u, nodes[1] == v; edge pairs are local indexes with i < j."""

    nodes: tuple
    observed_edges: tuple
    candidate_pairs: tuple

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class SemanticSubgraph:
    """nodes[0] == u, nodes[1] == v; edges are (src_local, relation, dst_local)."""

    nodes: tuple
    node_types: tuple
    edges: tuple

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def khop_neighbors(kg: KnowledgeGraph, node: int, k: int) -> set:
    """All nodes within k undirected hops of node (the node itself included)."""
    if not (0 <= node < kg.n_entities):
        raise KeyError(f"unknown entity id {node}")
    if k < 0:
        raise ValueError("k must be non-negative")
    seen = {node}
    frontier = deque([(node, 0)])
    while frontier:
        cur, d = frontier.popleft()
        if d == k:
            continue
        for nb in kg.neighbors[cur]:
            nb = int(nb)
            if nb not in seen:
                seen.add(nb)
                frontier.append((nb, d + 1))
    return seen


def _bfs_dist(kg: KnowledgeGraph, src: int, cutoff: int, skip_pair) -> dict:
    """BFS hop distances up to cutoff, ignoring edges between skip_pair."""
    a, b = skip_pair
    dist = {src: 0}
    frontier = deque([src])
    while frontier:
        cur = frontier.popleft()
        d = dist[cur]
        if d == cutoff:
            continue
        for nb in kg.neighbors[cur]:
            nb = int(nb)
            if {cur, nb} == {a, b}:
                continue
            if nb not in dist:
                dist[nb] = d + 1
                frontier.append(nb)
    return dist


def extract_local(kg: KnowledgeGraph, u: int, v: int, k: int, v_max: int,
                  seed: int) -> LocalSubgraph:
    """Enclosing subgraph over N_k(u) & N_k(v), down-sampled to v_max nodes.

    Any edge joining u and v directly (either direction, any relation) is
    removed before distance computation and edge collection. Over-size
    intersections keep the nodes closest to the pair (ascending d(u,.) +
    d(v,.)), breaking ties by a seeded draw; u and v always survive.
    """
    if u == v:
        raise ValueError("extract_local: endpoints must differ")
    for node in (u, v):
        if not (0 <= node < kg.n_entities):
            raise KeyError(f"unknown entity id {node}")
    if v_max < 2:
        raise ValueError("v_max must allow at least the endpoints")
    du = _bfs_dist(kg, u, k, (u, v))
    dv = _bfs_dist(kg, v, k, (u, v))
    inter = sorted(n for n in du if n in dv and n not in (u, v))

    if len(inter) > v_max - 2:
        rng = np.random.default_rng([seed, u, v])
        ties = rng.random(len(inter))
        ranked = sorted(
            range(len(inter)), key=lambda i: (du[inter[i]] + dv[inter[i]], ties[i], inter[i])
        )
        inter = [inter[i] for i in ranked[:v_max - 2]]

    nodes = (u, v) + tuple(sorted(inter, key=lambda n: (du[n] + dv[n], n)))
    index = {n: i for i, n in enumerate(nodes)}
    node_set = set(nodes)
    observed = set()
    for n in nodes:
        for ti in kg.out_edges[n]:
            t = kg.triples[ti]
            if t.tail not in node_set:
                continue
            if {t.head, t.tail} == {u, v}:
                continue  # never expose the queried pair's own edges
            if t.head == t.tail:
                continue  # reflexive triples carry no pair structure here
            i, j = index[t.head], index[t.tail]
            observed.add((min(i, j), max(i, j)))
    n_nodes = len(nodes)
    candidate = tuple(
        (i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)
    )
    return LocalSubgraph(nodes, tuple(sorted(observed)), candidate)


def default_metapaths(kg: KnowledgeGraph, head_type: str, tail_type: str,
                      max_len: int) -> list:
    """Enumerate relation sequences of length <= max_len realizable from
    head_type to tail_type under the graph's observed type schemes."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    types = set(kg.entity_types)
    if head_type not in types:
        raise KeyError(f"unknown entity type {head_type!r}")
    if tail_type not in types:
        raise KeyError(f"unknown entity type {tail_type!r}")
    schemes = sorted({
        (kg.entity_types[t.head], t.relation, kg.entity_types[t.tail])
        for t in kg.triples
    })
    by_src: dict = {}
    for th, rel, tt in schemes:
        by_src.setdefault(th, []).append((rel, tt))

    found = []

    def walk(cur_type, prefix):
        if len(prefix) >= 1 and cur_type == tail_type:
            found.append(tuple(prefix))
        if len(prefix) == max_len:
            return
        for rel, nxt in by_src.get(cur_type, ()):
            prefix.append(rel)
            walk(nxt, prefix)
            prefix.pop()

    walk(head_type, [])
    uniq = sorted(set(found), key=lambda rels: (len(rels), rels))
    return [Metapath(head_type, rels, tail_type) for rels in uniq]


def parse_metapaths(lines, kg: KnowledgeGraph) -> list:
    """head_type<TAB>r1;r2;...;rk<TAB>tail_type rows over kg's relations."""
    out = []
    for ln, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"metapaths line {ln}: expected 3 tab-separated fields")
        head_type, seq, tail_type = parts
        rels = []
        for name in seq.split(";"):
            if name not in kg.relation_ids:
                raise ValueError(f"metapaths line {ln}: unknown relation {name!r}")
            rels.append(kg.relation_ids[name])
        if not rels:
            raise ValueError(f"metapaths line {ln}: empty relation sequence")
        out.append(Metapath(head_type, tuple(rels), tail_type))
    return out


def extract_semantic(kg: KnowledgeGraph, u: int, v: int, metapaths) -> SemanticSubgraph:
    """Union of all path instances anchored at u and ending at v.

    An edge belongs to the subgraph iff it lies on at least one complete
    instance of an applicable metapath. Membership is computed with forward
    and backward reachability level sets, so no path enumeration happens.
    Direct u-v edges are skipped, mirroring the local extraction.
    """
    if u == v:
        raise ValueError("extract_semantic: endpoints must differ")
    for node in (u, v):
        if not (0 <= node < kg.n_entities):
            raise KeyError(f"unknown entity id {node}")
    tu, tv = kg.entity_types[u], kg.entity_types[v]
    edges = set()

    def eligible(head, tail):
        return {head, tail} != {u, v}

    for mp in metapaths:
        if mp.head_type != tu or mp.tail_type != tv:
            continue
        for rel in mp.relations:
            if not (0 <= rel < kg.n_relations):
                raise KeyError(f"metapath uses unknown relation id {rel}")
        L = len(mp.relations)
        forward = [set() for _ in range(L + 1)]
        forward[0] = {u}
        for s, rel in enumerate(mp.relations):
            nxt = set()
            for node in forward[s]:
                for ti in kg.out_edges[node]:
                    t = kg.triples[ti]
                    if t.relation == rel and eligible(t.head, t.tail):
                        nxt.add(t.tail)
            forward[s + 1] = nxt
        if v not in forward[L]:
            continue
        back = [set() for _ in range(L + 1)]
        back[L] = {v}
        for s in range(L - 1, -1, -1):
            rel = mp.relations[s]
            prev = set()
            for node in back[s + 1]:
                for ti in kg.in_edges[node]:
                    t = kg.triples[ti]
                    if t.relation == rel and eligible(t.head, t.tail):
                        prev.add(t.head)
            back[s] = prev
        for s, rel in enumerate(mp.relations):
            srcs = forward[s] & back[s]
            dsts = forward[s + 1] & back[s + 1]
            for node in srcs:
                for ti in kg.out_edges[node]:
                    t = kg.triples[ti]
                    if t.relation == rel and t.tail in dsts and eligible(t.head, t.tail):
                        edges.add((t.head, t.relation, t.tail))

    touched = {h for h, _, _ in edges} | {t for _, _, t in edges}
    others = sorted(touched - {u, v})
    nodes = (u, v) + tuple(others)
    index = {n: i for i, n in enumerate(nodes)}
    local_edges = tuple(sorted(
        (index[h], rel, index[t]) for h, rel, t in edges
    ))
    node_types = tuple(kg.entity_types[n] for n in nodes)
    return SemanticSubgraph(nodes, node_types, local_edges)
