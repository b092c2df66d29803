"""Metric graphs with a compact core and half-lines.

A graph is a finite multigraph. Bounded edges carry a length and an
orientation (``x = 0`` at ``tail``); half-lines are copies of ``[0, inf)``
attached at an anchor vertex with ``x = 0`` there. Self-loops and parallel
edges are allowed; a self-loop contributes two incidences at its vertex.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import (Disconnected, DuplicateId, EmptyCore, NonPositiveLength,
                     NotAHalfLine, UnknownVertex)


@dataclass(frozen=True)
class BoundedEdge:
    id: str
    tail: str
    head: str
    length: float

    @property
    def is_loop(self) -> bool:
        return self.tail == self.head


@dataclass(frozen=True)
class HalfLine:
    id: str
    anchor: str


@dataclass(frozen=True)
class CoreOnly:
    """Nonlinearity supported on the compact core."""

    def describe(self) -> str:
        return "core"


@dataclass(frozen=True)
class CoreUnionSegment:
    """Nonlinearity supported on the core plus ``[0, ell]`` of a half-line."""

    halfline: str
    ell: float

    def __post_init__(self):
        if not (self.ell >= 0 and math.isfinite(self.ell)):
            raise NonPositiveLength(f"segment length must be >= 0, got {self.ell}")

    def describe(self) -> str:
        return f"core+segment({self.halfline},{self.ell:g})"


Region = Union[CoreOnly, CoreUnionSegment]


@dataclass(frozen=True)
class CompactCore:
    edge_ids: tuple
    total_length: float
    vertices: tuple

    @property
    def empty(self) -> bool:
        return len(self.edge_ids) == 0


@dataclass(frozen=True)
class MetricGraph:
    """Validated, immutable metric graph.

    Parameters
    ----------
    vertices : tuple of str
        Vertex identifiers, in document order.
    bounded_edges : tuple of BoundedEdge
    half_lines : tuple of HalfLine
    """

    vertices: tuple
    bounded_edges: tuple = ()
    half_lines: tuple = ()
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        verts = tuple(self.vertices)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "bounded_edges", tuple(self.bounded_edges))
        object.__setattr__(self, "half_lines", tuple(self.half_lines))
        if len(set(verts)) != len(verts):
            raise DuplicateId("duplicate vertex id")
        vset = set(verts)
        ids = set()
        for e in self.bounded_edges:
            if e.id in ids:
                raise DuplicateId(f"duplicate edge id {e.id!r}")
            ids.add(e.id)
            for v in (e.tail, e.head):
                if v not in vset:
                    raise UnknownVertex(f"edge {e.id!r} references unknown vertex {v!r}")
            if not (e.length > 0 and math.isfinite(e.length)):
                raise NonPositiveLength(f"edge {e.id!r} has length {e.length}")
        for hl in self.half_lines:
            if hl.id in ids:
                raise DuplicateId(f"duplicate edge id {hl.id!r}")
            ids.add(hl.id)
            if hl.anchor not in vset:
                raise UnknownVertex(f"half-line {hl.id!r} references unknown vertex {hl.anchor!r}")
        if not verts:
            raise Disconnected("graph has no vertices")
        if not _connected(verts, self.bounded_edges):
            raise Disconnected("graph is not connected")
        index = {e.id: e for e in self.bounded_edges}
        index.update({h.id: h for h in self.half_lines})
        object.__setattr__(self, "_index", index)

    # -- lookup ---------------------------------------------------------
    def edge(self, eid: str):
        return self._index[eid]

    @property
    def edge_ids(self) -> tuple:
        return tuple(e.id for e in self.bounded_edges) + tuple(h.id for h in self.half_lines)

    def halfline(self, hid: str) -> HalfLine:
        obj = self._index.get(hid)
        if not isinstance(obj, HalfLine):
            raise NotAHalfLine(f"{hid!r} is not a half-line")
        return obj

    @property
    def is_compact(self) -> bool:
        return len(self.half_lines) == 0

    def incidences(self, v: str) -> list:
        """Edge ids incident at ``v`` as a multiset (loops appear twice)."""
        out = []
        for e in self.bounded_edges:
            if e.tail == v:
                out.append(e.id)
            if e.head == v:
                out.append(e.id)
        for hl in self.half_lines:
            if hl.anchor == v:
                out.append(hl.id)
        return out

    def core_degree(self, v: str) -> int:
        return sum((e.tail == v) + (e.head == v) for e in self.bounded_edges)

    def halflines_at(self, v: str) -> list:
        return [h.id for h in self.half_lines if h.anchor == v]


def _connected(vertices, edges) -> bool:
    parent = {v: v for v in vertices}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        parent[find(e.tail)] = find(e.head)
    return len({find(v) for v in vertices}) == 1


def make_graph(vertices: Iterable[str], bounded: Iterable[tuple] = (),
               half_lines: Iterable[tuple] = ()) -> MetricGraph:
    """Build a graph from ``(id, tail, head, length)`` and ``(id, anchor)`` tuples."""
    return MetricGraph(tuple(vertices),
                       tuple(BoundedEdge(i, t, h, float(l)) for i, t, h, l in bounded),
                       tuple(HalfLine(i, a) for i, a in half_lines))


def parse_graph(doc: dict) -> MetricGraph:
    """Validate a graph document (format in :mod:`qgdirac.cli`) and build the graph."""
    from .errors import InvalidGraph
    if not isinstance(doc, dict) or "vertices" not in doc or "edges" not in doc:
        raise InvalidGraph("graph document needs 'vertices' and 'edges'")
    verts = [str(v) for v in doc["vertices"]]
    bounded, halfs = [], []
    for item in doc["edges"]:
        if "id" not in item or "from" not in item:
            raise InvalidGraph(f"edge entry {item!r} lacks 'id' or 'from'")
        if item.get("halfline", False):
            halfs.append(HalfLine(str(item["id"]), str(item["from"])))
        else:
            if "to" not in item or "length" not in item:
                raise InvalidGraph(f"bounded edge {item['id']!r} needs 'to' and 'length'")
            try:
                length = float(item["length"])
            except (TypeError, ValueError):
                raise NonPositiveLength(f"edge {item['id']!r}: bad length {item['length']!r}")
            bounded.append(BoundedEdge(str(item["id"]), str(item["from"]), str(item["to"]), length))
    return MetricGraph(tuple(verts), tuple(bounded), tuple(halfs))


def graph_to_doc(g: MetricGraph) -> dict:
    edges = [{"id": e.id, "from": e.tail, "to": e.head, "length": e.length}
             for e in g.bounded_edges]
    edges += [{"id": h.id, "from": h.anchor, "halfline": True} for h in g.half_lines]
    return {"vertices": list(g.vertices), "edges": edges}


def compact_core(g: MetricGraph) -> CompactCore:
    ids = tuple(e.id for e in g.bounded_edges)
    total = math.fsum(e.length for e in g.bounded_edges)
    verts = []
    for e in g.bounded_edges:
        for v in (e.tail, e.head):
            if v not in verts:
                verts.append(v)
    return CompactCore(ids, total, tuple(verts))


def region_length(g: MetricGraph, region: Region) -> float:
    total = compact_core(g).total_length
    if isinstance(region, CoreUnionSegment):
        g.halfline(region.halfline)
        total += region.ell
    return total


def _core_adjacency(g: MetricGraph) -> dict:
    adj = {v: [] for v in g.vertices}
    for e in sorted(g.bounded_edges, key=lambda e: e.id):
        adj[e.tail].append((e.id, e.head))
        if not e.is_loop:
            adj[e.head].append((e.id, e.tail))
    return adj


def graph_distance(g: MetricGraph, v: str, w: str) -> int:
    """Combinatorial distance (number of bounded edges on a shortest path)."""
    return len(shortest_path(g, v, w))


def shortest_path(g: MetricGraph, v: str, w: str) -> list:
    """Bounded-edge ids of a shortest path from ``v`` to ``w`` (BFS)."""
    for x in (v, w):
        if x not in g.vertices:
            raise UnknownVertex(f"vertex {x!r} not in graph")
    if v == w:
        return []
    adj = _core_adjacency(g)
    prev = {v: None}
    queue = deque([v])
    while queue:
        x = queue.popleft()
        for eid, y in adj[x]:
            if y not in prev:
                prev[y] = (x, eid)
                if y == w:
                    path = []
                    while prev[y] is not None:
                        y, e = prev[y]
                        path.append(e)
                    return path[::-1]
                queue.append(y)
    raise Disconnected(f"no path between {v!r} and {w!r}")  # unreachable for valid graphs


def core_is_tree_with_at_most_one_free_leaf(g: MetricGraph):
    """Check the tree hypothesis for uniqueness of trivial solutions.

    Returns
    -------
    ok : bool
        True iff the core is a tree and at most one of its leaves has no
        half-line attached.
    free_leaves : list of str
        Core leaves without an incident half-line.
    """
    core = compact_core(g)
    if core.empty:
        raise EmptyCore("graph has no bounded edges")
    verts = core.vertices
    is_tree = (len(core.edge_ids) == len(verts) - 1
               and not any(e.is_loop for e in g.bounded_edges)
               and _connected(verts, g.bounded_edges))
    leaves = [v for v in verts if g.core_degree(v) == 1]
    free = [v for v in leaves if not g.halflines_at(v)]
    return is_tree and len(free) <= 1, free


def find_simple_cycle(g: MetricGraph) -> Optional[list]:
    """A simple cycle in the core as ``[(edge_id, forward), ...]`` or None.

    ``forward`` is True when the walk traverses the edge from tail to head.
    Depth-first search with edges visited in lexicographic id order.
    """
    loops = sorted((e for e in g.bounded_edges if e.is_loop), key=lambda e: e.id)
    if loops:
        return [(loops[0].id, True)]
    adj = {v: [] for v in g.vertices}
    for e in sorted(g.bounded_edges, key=lambda e: e.id):
        if e.is_loop:
            continue
        adj[e.tail].append((e.id, e.head, True))
        adj[e.head].append((e.id, e.tail, False))
    visited = set()
    for root in sorted(g.vertices):
        if root in visited:
            continue
        # iterative DFS keeping the current path of (vertex, edge-in)
        path = [(root, None, None)]
        on_path = {root: 0}
        iters = [iter(adj[root])]
        visited.add(root)
        while iters:
            try:
                eid, y, fwd = next(iters[-1])
            except StopIteration:
                iters.pop()
                x, _, _ = path.pop()
                del on_path[x]
                continue
            if eid == path[-1][1]:
                continue  # do not go back along the edge we came in by
            if y in on_path:
                k = on_path[y]
                return [(e, f) for _, e, f in path[k + 1:]] + [(eid, fwd)]
            if y in visited:
                continue
            visited.add(y)
            on_path[y] = len(path)
            path.append((y, eid, fwd))
            iters.append(iter(adj[y]))
    return None


def attach_pendant(g: MetricGraph, halfline: str, ell: float) -> MetricGraph:
    """Replace half-line ``halfline`` by a bounded edge of length ``ell``
    followed by a half-line with the same id anchored at a new vertex."""
    hl = g.halfline(halfline)
    if not (ell > 0 and math.isfinite(ell)):
        raise NonPositiveLength(f"pendant length must be > 0, got {ell}")
    taken = set(g.vertices) | set(g.edge_ids)
    vnew = _fresh(f"{hl.anchor}~{halfline}", taken)
    taken.add(vnew)
    enew = _fresh(f"{halfline}~seg", taken)
    halfs = tuple(HalfLine(h.id, vnew) if h.id == halfline else h for h in g.half_lines)
    return MetricGraph(g.vertices + (vnew,),
                       g.bounded_edges + (BoundedEdge(enew, hl.anchor, vnew, float(ell)),),
                       halfs)


def _fresh(base: str, taken: set) -> str:
    name, k = base, 1
    while name in taken:
        k += 1
        name = f"{base}{k}"
    return name


def zero_propagation(g: MetricGraph, initially_zero: Iterable[str]):
    """Close an edge set under the rule: at any vertex, if all incident
    edges but one are zero, the remaining one is zero too.

    Returns
    -------
    closure : frozenset of str
    forces_all_zero : bool
    """
    zero = set(initially_zero)
    unknown = zero - set(g.edge_ids)
    if unknown:
        raise KeyError(f"unknown edge ids {sorted(unknown)}")
    inc = {v: g.incidences(v) for v in g.vertices}
    by_edge = {}
    for v, lst in inc.items():
        for eid in lst:
            by_edge.setdefault(eid, set()).add(v)
    work = deque(g.vertices)
    queued = set(g.vertices)
    while work:
        v = work.popleft()
        queued.discard(v)
        rest = [e for e in inc[v] if e not in zero]
        if len(rest) == 1:
            e = rest[0]
            zero.add(e)
            for w in by_edge[e]:
                if w not in queued:
                    work.append(w)
                    queued.add(w)
    closure = frozenset(zero)
    return closure, closure == frozenset(g.edge_ids)


# -- standard graphs used throughout the tests and CLI examples ----------

def tadpole(loop_length: float = 2 * math.pi) -> MetricGraph:
    return make_graph(["v"], [("loop", "v", "v", loop_length)], [("H", "v")])


def interval(length: float = 1.0) -> MetricGraph:
    return make_graph(["a", "b"], [("e", "a", "b", length)])


def cycle(length: float = 2 * math.pi) -> MetricGraph:
    return make_graph(["v"], [("loop", "v", "v", length)])


def triangle(lengths=(1.0, 1.0, 1.0), half_lines: bool = False) -> MetricGraph:
    a, b, c = lengths
    hl = [("H1", "v1"), ("H2", "v2"), ("H3", "v3")] if half_lines else []
    return make_graph(["v1", "v2", "v3"],
                      [("e12", "v1", "v2", a), ("e23", "v2", "v3", b), ("e31", "v3", "v1", c)],
                      hl)


def star(lengths=(1.0, 1.0, 1.0), half_lines: int = 0) -> MetricGraph:
    """Star with bounded arms (oriented out of the centre) and optional
    half-lines at the centre."""
    verts = ["o"] + [f"x{i}" for i in range(len(lengths))]
    edges = [(f"a{i}", "o", f"x{i}", l) for i, l in enumerate(lengths)]
    hls = [(f"H{i}", "o") for i in range(half_lines)]
    return make_graph(verts, edges, hls)
