"""Flat token sequences for the encoder, and their inverse for tree graphs.

The sequence for the graph of *Kim sees a boy* reads::

    ( _see_v_1 mood=INDICATIVE|perf=-|sf=PROP|tense=PRES ARG1-NEQ ( named0 ... ) ... )

Internally a :class:`LinearSequence` keeps symbols and attribute bundles in two
aligned streams; the inline bundle token only exists in the flat text form.
"""

from dataclasses import dataclass

from .dmrs import parse_bundle, render_bundle
from .penman import (FIRST_ID, INVERSE_SUFFIX, Ascend, Descend, PenmanEdge, PenmanGraph,
                     PenmanNode, Reference, spanning_tree)

OPEN, CLOSE = "(", ")"
NO_BUNDLE = "<nb>"


class LinearizationError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSequence:
    symbols: tuple
    attributes: tuple

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if len(self.symbols) != len(self.attributes):
            raise LinearizationError("symbol and attribute streams differ in length")

    def __len__(self):
        return len(self.symbols)

    def predicate_positions(self) -> list:
        return [i for i in range(1, len(self.symbols))
                if self.symbols[i - 1] == OPEN and self.symbols[i] not in (OPEN, CLOSE)]

    def to_tokens(self) -> list:
        out = []
        for sym, bundle in zip(self.symbols, self.attributes):
            out.append(sym)
            if bundle != NO_BUNDLE:
                out.append(bundle)
        return out

    def to_text(self) -> str:
        return " ".join(self.to_tokens())

    __str__ = to_text

    @classmethod
    def from_text(cls, text: str) -> "LinearSequence":
        symbols, attributes = [], []
        want_pred = after_pred = False
        for tok in text.split():
            if after_pred and "=" in tok:
                attributes[-1] = tok
                after_pred = False
                continue
            if "=" in tok and not want_pred:
                raise LinearizationError(f"attribute bundle {tok!r} in illegal position")
            after_pred = want_pred and tok not in (OPEN, CLOSE)
            want_pred = tok == OPEN
            symbols.append(tok)
            attributes.append(NO_BUNDLE)
        return cls(symbols, attributes)


def linearize(graph: PenmanGraph) -> LinearSequence:
    """Depth-first token sequence without node identifiers.

    A re-entrancy is written as a bare copy of the target's predicate,
    ``ROLE ( pred )``, so the sequence stays well formed but loses the sharing.
    """
    symbols, attributes = [], []

    def emit(sym, bundle=NO_BUNDLE):
        symbols.append(sym)
        attributes.append(bundle)

    for ev in spanning_tree(graph):
        if isinstance(ev, Descend):
            if ev.label is not None:
                emit(ev.label + (INVERSE_SUFFIX if ev.inverted else ""))
            node = graph.node(ev.node)
            emit(OPEN)
            emit(node.label, render_bundle(node.attributes) or NO_BUNDLE)
        elif isinstance(ev, Reference):
            emit(ev.label + (INVERSE_SUFFIX if ev.inverted else ""))
            emit(OPEN)
            emit(graph.node(ev.target).label)
            emit(CLOSE)
        elif isinstance(ev, Ascend):
            emit(CLOSE)
    return LinearSequence(symbols, attributes)


def delinearize(seq: LinearSequence) -> PenmanGraph:
    syms, bundles = seq.symbols, seq.attributes
    nodes, edges = [], []
    pos = 0

    def bundle_at(i):
        if bundles[i] != NO_BUNDLE:
            raise LinearizationError(f"attribute bundle at position {i} ({syms[i]!r})")

    def node():
        nonlocal pos
        if pos >= len(syms) or syms[pos] != OPEN:
            raise LinearizationError(f"expected '(' at position {pos}")
        bundle_at(pos)
        pos += 1
        if pos >= len(syms) or syms[pos] in (OPEN, CLOSE):
            raise LinearizationError(f"missing predicate at position {pos}")
        nid = str(FIRST_ID + len(nodes))
        attrs = {} if bundles[pos] == NO_BUNDLE else parse_bundle(bundles[pos])
        nodes.append(PenmanNode(nid, syms[pos], attrs))
        pos += 1
        while True:
            if pos >= len(syms):
                raise LinearizationError("unbalanced parentheses: missing ')'")
            if syms[pos] == CLOSE:
                bundle_at(pos)
                pos += 1
                return nid
            role = syms[pos]
            bundle_at(pos)
            if role == OPEN:
                raise LinearizationError(f"node without role at position {pos}")
            pos += 1
            if pos >= len(syms) or syms[pos] != OPEN:
                raise LinearizationError(f"role {role!r} has no following node")
            child = node()
            if role.endswith(INVERSE_SUFFIX) and len(role) > len(INVERSE_SUFFIX):
                edges.append(PenmanEdge(child, role[: -len(INVERSE_SUFFIX)], nid))
            else:
                edges.append(PenmanEdge(nid, role, child))

    if not syms:
        raise LinearizationError("empty sequence")
    top = node()
    if pos != len(syms):
        raise LinearizationError(f"unbalanced parentheses: extra tokens from position {pos}")
    return PenmanGraph(top, nodes, edges)
