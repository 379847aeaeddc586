"""Manipulation relation graph: pair reconciliation, cycle reporting, grasp orders.

An edge ``a -> b`` means object ``a`` rests on object ``b``, so ``a`` has to be
removed before ``b`` can be grasped safely.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .scene import ObjectBox, Relation, RelationKind, relation_inverse, RELATION_KINDS


class ConflictError(ValueError):
    pass


class CycleError(ValueError):
    def __init__(self, cycles: list[list[int]]):
        self.cycles = cycles
        listing = "; ".join(" -> ".join(str(n) for n in c + c[:1]) for c in cycles)
        super().__init__(f"relation graph has cycles: {listing}")


@dataclass(frozen=True)
class RelationGraph:
    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    # optional edge confidences, used only by cycle breaking
    weights: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(set(self.nodes))))
        object.__setattr__(self, "edges", frozenset(self.edges))

    def parents(self, n: int) -> list[int]:
        """Objects resting on ``n``."""
        return sorted(a for a, b in self.edges if b == n)

    def without(self, removed: Iterable[int]) -> "RelationGraph":
        gone = set(removed)
        return RelationGraph(
            nodes=tuple(n for n in self.nodes if n not in gone),
            edges=frozenset((a, b) for a, b in self.edges if a not in gone and b not in gone),
            weights=self.weights,
        )

    def to_json(self, order: Optional[Sequence[int]] = None) -> str:
        doc = {
            "nodes": list(self.nodes),
            "edges": [list(e) for e in sorted(self.edges)],
            "order": list(order) if order is not None else [],
        }
        return json.dumps(doc)


@dataclass(frozen=True)
class PairPrediction:
    """Both directional relation distributions of an unordered pair ``i < j``."""

    pair: tuple[int, int]
    probs_ij: tuple[float, float, float]
    probs_ji: tuple[float, float, float]

    def __post_init__(self):
        for p in (self.probs_ij, self.probs_ji):
            if len(p) != 3 or abs(sum(p) - 1.0) > 1e-5:
                raise ValueError(f"not a 3-simplex: {p}")


def symmetrize_pair(p: PairPrediction) -> Relation:
    """Combine both directions: score(k) = p_ij[k] + p_ji[inverse(k)], argmax with On > Under > NoRel."""
    i, j = p.pair
    best, best_score = None, -np.inf
    for kind in RELATION_KINDS:
        score = p.probs_ij[kind.index] + p.probs_ji[relation_inverse(kind).index]
        if score > best_score:
            best, best_score = kind, score
    return Relation(i, j, best)


def pair_confidence(p: PairPrediction, kind: RelationKind) -> float:
    return 0.5 * (p.probs_ij[kind.index] + p.probs_ji[relation_inverse(kind).index])


def build_graph(objects: Sequence[ObjectBox], rels: Iterable[Relation], weights=None) -> RelationGraph:
    ids = [o.id for o in objects]
    known = set(ids)
    edges: set[tuple[int, int]] = set()
    for r in rels:
        if r.from_id not in known or r.to_id not in known:
            raise KeyError(f"relation {r.from_id}->{r.to_id} references unknown object")
        if r.kind is RelationKind.ON:
            e = (r.from_id, r.to_id)
        elif r.kind is RelationKind.UNDER:
            e = (r.to_id, r.from_id)
        else:
            continue
        if (e[1], e[0]) in edges:
            raise ConflictError(f"both {e[0]} on {e[1]} and {e[1]} on {e[0]} asserted")
        edges.add(e)
    return RelationGraph(tuple(ids), frozenset(edges), dict(weights or {}))


def graspable_set(g: RelationGraph) -> set[int]:
    covered = {b for _, b in g.edges}
    return {n for n in g.nodes if n not in covered}


def detect_cycles(g: RelationGraph) -> list[list[int]]:
    """All elementary cycles, each rotated to start at its smallest id.

    Small graphs only: this is a plain backtracking enumeration rooted at each
    node, visiting larger ids only, so each cycle is found once.
    """
    succ: dict[int, list[int]] = {n: [] for n in g.nodes}
    for a, b in g.edges:
        succ.setdefault(a, []).append(b)
    for v in succ.values():
        v.sort()

    cycles: list[list[int]] = []
    for start in g.nodes:
        stack = [(start, iter(succ.get(start, [])))]
        path = [start]
        on_path = {start}
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            if nxt == start:
                cycles.append(list(path))
            elif nxt > start and nxt not in on_path:
                path.append(nxt)
                on_path.add(nxt)
                stack.append((nxt, iter(succ.get(nxt, []))))
    cycles.sort(key=lambda c: (len(c), c))
    return cycles


def _ancestors(g: RelationGraph, target: int) -> set[int]:
    """Everything stacked (transitively) on top of ``target``."""
    seen: set[int] = set()
    todo = [target]
    while todo:
        n = todo.pop()
        for a in g.parents(n):
            if a not in seen:
                seen.add(a)
                todo.append(a)
    seen.discard(target)
    return seen


def _topo(g: RelationGraph) -> list[int]:
    indeg = {n: 0 for n in g.nodes}
    succ: dict[int, list[int]] = {n: [] for n in g.nodes}
    for a, b in g.edges:
        indeg[b] += 1
        succ[a].append(b)
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, m)
    if len(order) != len(g.nodes):
        raise CycleError(detect_cycles(g))
    return order


def full_clearing_order(g: RelationGraph) -> list[int]:
    """Removal order for every object; smallest graspable id first at each step."""
    return _topo(g)


def grasp_order_for_target(g: RelationGraph, target: int) -> list[int]:
    """Blockers of ``target`` in a safe removal order, ending with ``target``."""
    if target not in g.nodes:
        raise KeyError(f"target {target} not in graph")
    keep = _ancestors(g, target) | {target}
    sub = RelationGraph(
        nodes=tuple(keep),
        edges=frozenset((a, b) for a, b in g.edges if a in keep and b in keep),
    )
    order = _topo(sub)
    # the target has everything else in keep above it, so it is always emitted last
    return order


def break_cycles_weakest_edge(g: RelationGraph) -> tuple[RelationGraph, list[tuple[int, int]]]:
    """Drop the lowest-confidence edge of each cycle until the graph is acyclic."""
    removed: list[tuple[int, int]] = []
    edges = set(g.edges)
    while True:
        cur = RelationGraph(g.nodes, frozenset(edges), g.weights)
        cycles = detect_cycles(cur)
        if not cycles:
            return cur, removed
        cyc = cycles[0]
        cyc_edges = [(cyc[k], cyc[(k + 1) % len(cyc)]) for k in range(len(cyc))]
        weakest = min(cyc_edges, key=lambda e: (g.weights.get(e, 1.0), e))
        edges.discard(weakest)
        removed.append(weakest)
