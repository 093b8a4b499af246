"""DMRS reading of PENMAN graphs: predicates, attribute bundles, edge labels.

Also hosts the feature ablations used to measure how much node attributes and
scopal edge flavors contribute to generation quality.
"""

import re
from dataclasses import dataclass, field
from typing import Optional

from .penman import PenmanEdge, PenmanGraph, PenmanNode

KNOWN_ATTRIBUTE_KEYS = frozenset(["tense", "sf", "perf", "mood", "pers", "num", "ind"])
FLAVORS = frozenset(["H", "EQ", "NEQ", "HEQ"])
ROLES = frozenset(
    ["ARG1", "ARG2", "ARG3", "ARG4", "RSTR", "BODY", "MOD",
     "L-INDEX", "R-INDEX", "L-HNDL", "R-HNDL"]
)
# node attribute marking a surface-form token as out of the grammar's lexicon
OOV_FLAG = "oov"

_SURFACE = re.compile(r"^_(?P<lemma>.+)_(?P<pos>[a-z])(?:_(?P<sense>[^_\s]+))?$")


@dataclass(frozen=True)
class Predicate:
    kind: str  # "surface" or "abstract"
    lemma: str
    pos: Optional[str] = None
    sense: Optional[str] = None

    @property
    def is_surface(self) -> bool:
        return self.kind == "surface"

    @property
    def is_quantifier(self) -> bool:
        return self.pos == "q" or (not self.is_surface and self.lemma.endswith("_q"))

    def render(self) -> str:
        if not self.is_surface:
            return self.lemma
        out = f"_{self.lemma}_{self.pos}"
        if self.sense is not None:
            out += f"_{self.sense}"
        return out

    __str__ = render


def parse_predicate(token: str) -> Predicate:
    m = _SURFACE.match(token)
    if m is None:
        return Predicate("abstract", token)
    return Predicate("surface", m["lemma"], m["pos"], m["sense"])


def render_bundle(attributes: dict) -> str:
    """``k1=v1|k2=v2`` in key order; empty string for no attributes."""
    return "|".join(f"{k}={v}" for k, v in sorted(attributes.items()))


def parse_bundle(token: str) -> dict:
    if not token:
        return {}
    out = {}
    for part in token.split("|"):
        key, sep, value = part.partition("=")
        if not sep or not key:
            raise ValueError(f"malformed attribute bundle {token!r}")
        out[key] = value
    return out


@dataclass(frozen=True)
class EdgeLabel:
    role: str
    flavor: Optional[str] = None

    def render(self, inverted: bool = False) -> str:
        out = self.role if self.flavor is None else f"{self.role}-{self.flavor}"
        return out + "-of" if inverted else out

    __str__ = render


def parse_edge_label(label: str, roles=ROLES, flavors=FLAVORS) -> EdgeLabel:
    """Split ``ARG1-NEQ`` into role and flavor.  Raises ValueError when malformed."""
    if label in roles:
        return EdgeLabel(label)
    role, sep, flavor = label.rpartition("-")
    if sep and role in roles and flavor in flavors:
        return EdgeLabel(role, flavor)
    raise ValueError(f"malformed DMRS edge label {label!r}")


def strip_flavor(label: str, flavors=FLAVORS) -> str:
    role, sep, flavor = label.rpartition("-")
    if sep and role and flavor in flavors:
        return role
    return label


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" or "warning"
    code: str
    message: str
    where: str = ""


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)

    @property
    def ok(self) -> bool:
        return not self.issues

    @property
    def errors(self) -> list:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list:
        return [i for i in self.issues if i.severity == "warning"]


def validate_dmrs(graph: PenmanGraph, known_keys=KNOWN_ATTRIBUTE_KEYS, roles=ROLES,
                  flavors=FLAVORS) -> ValidationReport:
    report = ValidationReport()
    for node in graph.nodes:
        for key in node.attributes:
            if key not in known_keys and key != OOV_FLAG:
                report.issues.append(Issue("warning", "unknown-attribute",
                                           f"unknown attribute key {key!r}", node.id))
    rstr = set()
    for e in graph.edges:
        try:
            lab = parse_edge_label(e.label, roles, flavors)
        except ValueError as exc:
            report.issues.append(Issue("error", "bad-edge-label", str(exc),
                                       f"{e.source}->{e.target}"))
            continue
        if lab.role == "RSTR":
            rstr.add(e.source)
            rstr.add(e.target)
    for node in graph.nodes:
        if parse_predicate(node.label).is_quantifier and node.id not in rstr:
            report.issues.append(Issue("warning", "quantifier-without-rstr",
                                       f"quantifier {node.label} has no RSTR edge", node.id))
    return report


# ---------------------------------------------------------------------------
# ablation


@dataclass(frozen=True)
class AblationSpec:
    mode: str = "keep-all"
    keys: frozenset = frozenset()

    MODES = ("keep-all", "drop-node-attributes", "keep-only-keys", "drop-edge-flavors")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown ablation mode {self.mode!r}")
        object.__setattr__(self, "keys", frozenset(self.keys))
        unknown = self.keys - KNOWN_ATTRIBUTE_KEYS
        if unknown:
            raise ValueError(f"unknown attribute keys in ablation: {sorted(unknown)}")
        if self.keys and self.mode != "keep-only-keys":
            raise ValueError("keys are only meaningful for keep-only-keys")

    @classmethod
    def parse(cls, text: str) -> "AblationSpec":
        """Parse the command-line form: ``all``, ``none``, ``keep=k1,k2``, ``noedgeflavor``."""
        text = text.strip()
        if text == "all":
            return cls("keep-all")
        if text == "none":
            return cls("drop-node-attributes")
        if text == "noedgeflavor":
            return cls("drop-edge-flavors")
        if text.startswith("keep="):
            keys = [k.strip() for k in text[len("keep="):].split(",") if k.strip()]
            return cls("keep-only-keys", frozenset(keys))
        raise ValueError(f"cannot parse ablation spec {text!r}")

    def __str__(self):
        if self.mode == "keep-all":
            return "all"
        if self.mode == "drop-node-attributes":
            return "none"
        if self.mode == "drop-edge-flavors":
            return "noedgeflavor"
        return "keep=" + ",".join(sorted(self.keys))


def ablate(graph: PenmanGraph, spec: AblationSpec) -> PenmanGraph:
    # carg is kept in every mode: it names the entity anonymization aligns on
    if spec.mode == "keep-all":
        return graph
    if spec.mode == "drop-edge-flavors":
        edges = [PenmanEdge(e.source, strip_flavor(e.label), e.target) for e in graph.edges]
        return graph.replace(edges=edges)
    keep = frozenset() if spec.mode == "drop-node-attributes" else spec.keys
    nodes = [
        PenmanNode(n.id, n.label, {k: v for k, v in n.attributes.items() if k in keep}, n.carg)
        for n in graph.nodes
    ]
    return graph.replace(nodes=nodes)
