"""PENMAN notation: parsing, serialization and depth-first spanning trees.

A graph is stored with every edge in its canonical direction.  Roles written
with an ``-of`` suffix are inverted at parse time, and :func:`spanning_tree`
decides which edges have to be traversed against their direction when the
graph is written back out.
"""

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union

__all__ = [
    "PenmanError",
    "PenmanNode",
    "PenmanEdge",
    "PenmanGraph",
    "Descend",
    "Attributes",
    "Reference",
    "Ascend",
    "TraversalPlan",
    "parse_penman",
    "serialize_penman",
    "spanning_tree",
    "read_penman_corpus",
    "write_penman_corpus",
]

INVERSE_SUFFIX = "-of"
FIRST_ID = 10000


class PenmanError(ValueError):
    pass


@dataclass(frozen=True)
class PenmanNode:
    id: str
    label: str
    attributes: dict = field(default_factory=dict)
    carg: Optional[str] = None


@dataclass(frozen=True)
class PenmanEdge:
    source: str
    label: str
    target: str

    def __post_init__(self):
        if not self.label or re.search(r"\s", self.label):
            raise PenmanError(f"bad edge label {self.label!r}")


@dataclass(frozen=True)
class PenmanGraph:
    top: str
    nodes: tuple
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    def node(self, node_id: str) -> PenmanNode:
        return self._index[node_id]

    @property
    def _index(self) -> dict:
        index = self.__dict__.get("_node_index")
        if index is None:
            index = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_node_index", index)
        return index

    def outgoing(self, node_id: str) -> list:
        return [e for e in self.edges if e.source == node_id]

    def incoming(self, node_id: str) -> list:
        return [e for e in self.edges if e.target == node_id]

    def replace(self, nodes=None, edges=None, top=None) -> "PenmanGraph":
        return PenmanGraph(
            top=self.top if top is None else top,
            nodes=self.nodes if nodes is None else nodes,
            edges=self.edges if edges is None else edges,
        )

    def check(self) -> None:
        """Raise :class:`PenmanError` unless the graph is a connected DAG."""
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise PenmanError("duplicate node identifiers")
        known = set(ids)
        if self.top not in known:
            raise PenmanError(f"top {self.top!r} is not a node")
        for e in self.edges:
            if e.source not in known or e.target not in known:
                raise PenmanError(f"edge {e} refers to a missing node")
        _check_acyclic(self)
        _check_connected(self)


def _check_acyclic(graph: PenmanGraph) -> None:
    children = {n.id: [] for n in graph.nodes}
    for e in graph.edges:
        children[e.source].append(e.target)
    state = dict.fromkeys(children, 0)
    for root in children:
        if state[root]:
            continue
        stack = [(root, iter(children[root]))]
        state[root] = 1
        while stack:
            nid, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[nid] = 2
                stack.pop()
            elif state[nxt] == 1:
                raise PenmanError(f"cycle through node {nxt!r}")
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(children[nxt])))


def _check_connected(graph: PenmanGraph) -> None:
    neighbours = {n.id: set() for n in graph.nodes}
    for e in graph.edges:
        neighbours[e.source].add(e.target)
        neighbours[e.target].add(e.source)
    seen = {graph.top}
    todo = [graph.top]
    while todo:
        for other in neighbours[todo.pop()]:
            if other not in seen:
                seen.add(other)
                todo.append(other)
    if len(seen) != len(neighbours):
        missing = sorted(set(neighbours) - seen)
        raise PenmanError(f"nodes unreachable from top: {', '.join(missing)}")


# ---------------------------------------------------------------------------
# traversal


@dataclass(frozen=True)
class Descend:
    node: str
    label: Optional[str]
    inverted: bool = False


@dataclass(frozen=True)
class Attributes:
    node: str


@dataclass(frozen=True)
class Reference:
    source: str
    label: str
    target: str
    inverted: bool = False


@dataclass(frozen=True)
class Ascend:
    node: str


Event = Union[Descend, Attributes, Reference, Ascend]


@dataclass(frozen=True)
class TraversalPlan:
    events: tuple

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def definition_order(self) -> list:
        return [ev.node for ev in self.events if isinstance(ev, Descend)]

    def edges(self) -> list:
        """Stored-direction edges covered by the plan, tree and non-tree."""
        out = []
        stack = []
        for ev in self.events:
            if isinstance(ev, Descend):
                if stack:
                    parent = stack[-1]
                    if ev.inverted:
                        out.append(PenmanEdge(ev.node, ev.label, parent))
                    else:
                        out.append(PenmanEdge(parent, ev.label, ev.node))
                stack.append(ev.node)
            elif isinstance(ev, Ascend):
                stack.pop()
            elif isinstance(ev, Reference):
                if ev.inverted:
                    out.append(PenmanEdge(ev.target, ev.label, ev.source))
                else:
                    out.append(PenmanEdge(ev.source, ev.label, ev.target))
        return out


def _static_key(edge_label: str, other: PenmanNode, inverted: bool):
    attrs = tuple(sorted(other.attributes.items()))
    return (inverted, edge_label, other.label, attrs, other.carg or "")


def spanning_tree(graph: PenmanGraph) -> TraversalPlan:
    """Depth-first spanning tree from ``graph.top``.

    Outgoing edges are tried before incoming ones, each group sorted by
    (role, neighbour label).  Remaining ties go to already-defined neighbours
    first (in definition order), then to node identifier; the choice is made
    lazily so the result does not depend on how identifiers were assigned.
    """
    graph.check()
    out_edges = {n.id: [] for n in graph.nodes}
    in_edges = {n.id: [] for n in graph.nodes}
    for i, e in enumerate(graph.edges):
        out_edges[e.source].append(i)
        in_edges[e.target].append(i)

    defined = {}
    handled = set()
    events = []

    def candidates(nid):
        for i in out_edges[nid]:
            e = graph.edges[i]
            yield i, e.target, False, _static_key(e.label, graph.node(e.target), False)
        for i in in_edges[nid]:
            e = graph.edges[i]
            yield i, e.source, True, _static_key(e.label, graph.node(e.source), True)

    def pick(pending):
        live = []
        for item in pending:
            i, other, inverted, key = item
            if i in handled:
                continue
            # incoming edges from defined nodes are left to their source
            if inverted and other in defined:
                continue
            live.append(item)
        if not live:
            return None, []

        def dynamic(item):
            _, other, _, key = item
            if other in defined:
                return key + (0, defined[other], "")
            return key + (1, 0, other)

        best = min(live, key=dynamic)
        return best, [x for x in live if x is not best]

    def visit(nid, label, inverted):
        defined[nid] = len(defined)
        events.append(Descend(nid, label, inverted))
        events.append(Attributes(nid))
        # explicit stack of (node, pending candidates) avoids recursion limits
        return nid, list(candidates(nid))

    stack = [visit(graph.top, None, False)]
    while stack:
        nid, pending = stack[-1]
        best, rest = pick(pending)
        stack[-1] = (nid, rest)
        if best is None:
            events.append(Ascend(nid))
            stack.pop()
            continue
        i, other, inverted, _ = best
        handled.add(i)
        label = graph.edges[i].label
        if other in defined:
            events.append(Reference(nid, label, other, False))
        else:
            stack.append(visit(other, label, inverted))
    return TraversalPlan(tuple(events))


# ---------------------------------------------------------------------------
# serialization

_BARE = re.compile(r'^[^\s()":]+$')


def _format_value(value: str) -> str:
    if _BARE.match(value) and value != "/":
        return value
    return _quote(value)


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_penman(graph: PenmanGraph, indent: int = 2, sort_attributes: bool = True,
                     renumber: bool = True) -> str:
    """Write ``graph`` in PENMAN notation.

    Identifiers are renumbered from 10000 in definition order unless
    ``renumber`` is false.  ``sort_attributes=False`` keeps each node's stored
    attribute order instead of sorting keys.
    """
    plan = spanning_tree(graph)
    if renumber:
        names = {nid: str(FIRST_ID + i) for i, nid in enumerate(plan.definition_order())}
    else:
        names = {n.id: n.id for n in graph.nodes}

    lines = []
    depth = 0
    for ev in plan:
        if isinstance(ev, Descend):
            node = graph.node(ev.node)
            head = f"({names[node.id]} / {node.label}"
            if ev.label is None:
                lines.append(head)
            else:
                role = ev.label + (INVERSE_SUFFIX if ev.inverted else "")
                lines.append(" " * (indent * depth) + f":{role} {head}")
            depth += 1
        elif isinstance(ev, Attributes):
            node = graph.node(ev.node)
            pad = " " * (indent * depth)
            if node.carg is not None:
                lines.append(f"{pad}:carg {_quote(node.carg)}")
            items = node.attributes.items()
            if sort_attributes:
                items = sorted(items)
            for key, value in items:
                lines.append(f"{pad}:{key} {_format_value(value)}")
        elif isinstance(ev, Reference):
            role = ev.label + (INVERSE_SUFFIX if ev.inverted else "")
            lines.append(" " * (indent * depth) + f":{role} {names[ev.target]}")
        else:
            depth -= 1
            lines[-1] += ")"
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r'\s*(?:(\()|(\))|("(?:[^"\\]|\\.)*")|(:[^\s()"]*)|([^\s()"]+))')


def _tokens(text: str) -> list:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise PenmanError(f"unexpected character {text[pos]!r} at offset {pos}")
        pos = m.end()
        kind = m.lastindex
        out.append((kind, m.group(kind), m.start(kind)))
    return out


_LPAREN, _RPAREN, _STRING, _ROLE, _SYMBOL = 1, 2, 3, 4, 5


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


def _strip_comments(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if not line.lstrip().startswith("#"))


def parse_penman(text: str) -> PenmanGraph:
    """Parse a single PENMAN expression."""
    toks = _tokens(_strip_comments(text))
    if not toks:
        raise PenmanError("empty input")
    depth = 0
    for kind, _, off in toks:
        depth += kind == _LPAREN
        depth -= kind == _RPAREN
        if depth < 0:
            raise PenmanError(f"unbalanced ')' at offset {off}")
    if depth:
        raise PenmanError("unbalanced parentheses: missing ')'")

    nodes = {}
    order = []
    edges = []
    refs = []  # (source, label, target-id, inverted, offset) resolved at the end
    pos = 0

    def expect(kind, what):
        nonlocal pos
        if pos >= len(toks) or toks[pos][0] != kind:
            got = toks[pos][1] if pos < len(toks) else "end of input"
            raise PenmanError(f"expected {what}, got {got!r}")
        tok = toks[pos]
        pos += 1
        return tok

    def parse_node():
        nonlocal pos
        expect(_LPAREN, "'('")
        _, nid, off = expect(_SYMBOL, "node identifier")
        _, slash, _ = expect(_SYMBOL, "'/'")
        if slash != "/":
            raise PenmanError(f"expected '/' after identifier {nid!r}")
        kind, label, _ = toks[pos] if pos < len(toks) else (None, None, None)
        if kind == _STRING:
            label = _unquote(label)
        elif kind != _SYMBOL:
            raise PenmanError(f"missing label for node {nid!r}")
        pos += 1
        if nid in nodes:
            raise PenmanError(f"duplicate definition of node {nid!r} at offset {off}")
        attrs = {}
        carg = None
        nodes[nid] = None
        order.append(nid)
        while toks[pos][0] != _RPAREN:
            _, role, roff = expect(_ROLE, "role or ')'")
            role = role[1:]
            if not role:
                raise PenmanError(f"empty role at offset {roff}")
            kind, value, voff = toks[pos]
            inverted = role.endswith(INVERSE_SUFFIX) and len(role) > len(INVERSE_SUFFIX)
            base = role[: -len(INVERSE_SUFFIX)] if inverted else role
            if kind == _LPAREN:
                child = parse_node()
                edges.append(PenmanEdge(child, base, nid) if inverted else PenmanEdge(nid, base, child))
                continue
            if kind not in (_STRING, _SYMBOL):
                raise PenmanError(f"role :{role} has no value (offset {roff})")
            pos += 1
            if role == "carg":
                if carg is not None:
                    raise PenmanError(f"node {nid!r} has two :carg values")
                carg = _unquote(value) if kind == _STRING else value
            elif kind == _SYMBOL and (inverted or role != role.lower()):
                refs.append((nid, base, value, inverted, voff))
            else:
                if role != role.lower():
                    raise PenmanError(f"attribute key :{role} must be lowercase (offset {roff})")
                if role in attrs:
                    raise PenmanError(f"duplicate attribute :{role} on node {nid!r}")
                attrs[role] = _unquote(value) if kind == _STRING else value
        pos += 1
        nodes[nid] = PenmanNode(nid, label, attrs, carg)
        return nid

    top = parse_node()
    if pos != len(toks):
        raise PenmanError(f"trailing content after expression: {toks[pos][1]!r}")

    for source, label, target, inverted, off in refs:
        if target not in nodes:
            raise PenmanError(f"reference to undefined node {target!r} at offset {off}")
        edges.append(PenmanEdge(target, label, source) if inverted else PenmanEdge(source, label, target))

    graph = PenmanGraph(top, [nodes[n] for n in order], edges)
    graph.check()
    return graph


# ---------------------------------------------------------------------------
# corpus files


def read_penman_corpus(lines: Iterable[str]) -> Iterator[tuple]:
    """Yield ``(first_line_number, text)`` for blank-line separated records."""
    buf = []
    start = None
    for lineno, line in enumerate(lines, 1):
        if line.strip():
            if start is None:
                start = lineno
            buf.append(line.rstrip("\n"))
        elif buf:
            yield start, "\n".join(buf)
            buf, start = [], None
    if buf:
        yield start, "\n".join(buf)


def write_penman_corpus(graphs: Iterable[PenmanGraph], fh, **kwargs) -> None:
    first = True
    for g in graphs:
        if not first:
            fh.write("\n")
        fh.write(serialize_penman(g, **kwargs) + "\n")
        first = False
