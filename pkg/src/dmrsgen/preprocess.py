"""Text-side preprocessing: normalization, anonymization, tokenization, and
the singleton policy for node tokens outside the grammar's lexicon."""

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .dmrs import OOV_FLAG, parse_predicate
from .penman import PenmanGraph, PenmanNode, parse_penman, serialize_penman

log = logging.getLogger(__name__)

UNK = "UNK0"

# abstract predicate -> anonymization category
NAME_CATEGORIES = {
    "named": "named",
    "named_n": "named",
    "mofy": "month",
    "dofw": "day",
    "dofm": "day",
    "yofc": "year",
    "card": "number",
    "ord": "number",
}

# abstract (grammar-internal) ERG predicates; anything else without the
# `_lemma_pos` shape is taken to be a surface form missing from the lexicon
KNOWN_ABSTRACT = frozenset("""
named named_n card ord yofc mofy dofw dofm season holiday numbered_hour minute timezone_p
compound udef_q proper_q pronoun_q def_explicit_q def_implicit_q number_q which_q
free_relative_q free_relative_ever_q every_q some_q idiom_q_i
pron neg subord loc_nonsp nominalization poss parg_d appos implicit_conj unknown focus_d
generic_entity place_n time_n person thing reason manner measure much-many_a little-few_a
comp comp_equal comp_less comp_not+so comp_so superl ellipsis ellipsis_ref ellipsis_expl
times plus part_of abstr_deg id eventuality elliptical_n with_p temp_loc_x temp interval
interval_p_start interval_p_end relative_mod discourse greet polite fw_seq meas_np recip_pro
refl_mod excl cop_id unspec_manner unspec_adj addressee v_event_rel_0 num_seq
""".split())

_PLACEHOLDER = re.compile(r"^(?:named|month|day|year|number)\d+$")
_ERG_UNKNOWN = re.compile(r"^_(?P<form>.+)/[A-Z$]+_u_unknown$")


@dataclass
class CorpusExample:
    graph: PenmanGraph
    text: str
    provenance: str = "gold"
    domain: str = ""

    def to_json(self) -> dict:
        return {"penman": serialize_penman(self.graph, renumber=False), "text": self.text,
                "provenance": self.provenance, "domain": self.domain}

    @classmethod
    def from_json(cls, record: dict) -> "CorpusExample":
        return cls(parse_penman(record["penman"]), record["text"],
                   record.get("provenance", "gold"), record.get("domain", ""))


def read_corpus(lines: Iterable[str]):
    """Yield ``(line_number, example)``; malformed records yield the exception instead."""
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield lineno, CorpusExample.from_json(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            yield lineno, exc


def write_corpus(examples: Iterable[CorpusExample], fh) -> None:
    for ex in examples:
        fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# normalization

_TAG = re.compile(r"</?[A-Za-z][^<>]*>")
_QUOTES = re.compile(r"''|``|[“”„‟«»]|&quot;")
_SPACE = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    while True:
        out = _TAG.sub("", text)
        out = out.replace("[[", "").replace("]]", "")
        out = _QUOTES.sub('"', out)
        out = _SPACE.sub(" ", out).strip()
        if out == text:
            return out
        text = out


# ---------------------------------------------------------------------------
# anonymization


@dataclass(frozen=True)
class AnonEntry:
    placeholder: str
    surface: str
    category: str
    aligned: bool = True


@dataclass
class AnonymizationMap:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def as_dict(self) -> dict:
        out = {}
        for e in self.entries:
            out.setdefault(e.placeholder, e.surface)
        return out

    def placeholders(self) -> list:
        return [e.placeholder for e in self.entries]


def _word_pattern(word: str) -> str:
    return r"(?<!\w)" + re.escape(word) + r"(?!\w)"


def _find(surface: str, text: str) -> int:
    m = re.search(_word_pattern(surface), text)
    return -1 if m is None else m.start()


def _replace_all(text: str, mapping: dict) -> str:
    if not mapping:
        return text
    alternatives = sorted(mapping, key=len, reverse=True)
    pattern = re.compile("|".join(_word_pattern(s) for s in alternatives))
    return pattern.sub(lambda m: mapping[m.group(0)], text)


def anonymize(example: CorpusExample, categories: Optional[dict] = None):
    """Replace name-bearing nodes and their surface strings with placeholders.

    Returns the rewritten example and its :class:`AnonymizationMap`.
    Placeholders are numbered per category in order of first mention in the
    text; a carg that cannot be found in the text is still anonymized in the
    graph but recorded as unaligned.
    """
    categories = NAME_CATEGORIES if categories is None else categories
    text = example.text
    found = {}  # (category, surface) -> text offset or -1
    for node in example.graph.nodes:
        cat = categories.get(node.label)
        if cat is None or node.carg is None:
            continue
        key = (cat, node.carg)
        if key not in found:
            found[key] = _find(node.carg, text)

    first_seen = list(found)  # graph order, for unaligned entries
    ordered = sorted(found, key=lambda k: (found[k] < 0, found[k] if found[k] >= 0 else first_seen.index(k)))
    counters = Counter()
    assigned = {}
    entries = []
    for cat, surface in ordered:
        ph = f"{cat}{counters[cat]}"
        counters[cat] += 1
        assigned[(cat, surface)] = ph
        entries.append(AnonEntry(ph, surface, cat, found[(cat, surface)] >= 0))
        if found[(cat, surface)] < 0:
            log.warning("carg %r not found in text %r", surface, text)

    nodes = []
    for node in example.graph.nodes:
        cat = categories.get(node.label)
        if cat is None or node.carg is None:
            nodes.append(node)
        else:
            nodes.append(PenmanNode(node.id, assigned[(cat, node.carg)], node.attributes, None))

    surface_map = {}
    for e in entries:
        if e.aligned:
            surface_map.setdefault(e.surface, e.placeholder)
    new_text = _replace_all(text, surface_map)
    return replace(example, graph=example.graph.replace(nodes=nodes), text=new_text), AnonymizationMap(entries)


def deanonymize(text: str, amap: Optional[AnonymizationMap]) -> str:
    """Put original surface strings back in place of placeholders.

    A placeholder used by several entries (``UNK0``) is filled in entry order.
    """
    if not amap:
        return text
    surfaces = {}
    for e in amap:
        surfaces.setdefault(e.placeholder, []).append(e.surface)
    used = Counter()

    def fill(m):
        ph = m.group(0)
        options = surfaces[ph]
        i = min(used[ph], len(options) - 1)
        used[ph] += 1
        return options[i]

    pattern = re.compile("|".join(_word_pattern(p) for p in sorted(surfaces, key=len, reverse=True)))
    return pattern.sub(fill, text)


def write_maps(maps, fh) -> None:
    """TSV sidecar: example index, placeholder, surface, category."""
    w = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    for i, amap in enumerate(maps):
        for e in amap:
            w.writerow([i, e.placeholder, e.surface, e.category])


def read_maps(fh, count: Optional[int] = None) -> list:
    by_index = {}
    for row in csv.reader(fh, delimiter="\t"):
        if not row:
            continue
        idx, ph, surface, cat = row
        by_index.setdefault(int(idx), AnonymizationMap()).entries.append(AnonEntry(ph, surface, cat))
    n = count if count is not None else (max(by_index) + 1 if by_index else 0)
    return [by_index.get(i, AnonymizationMap()) for i in range(n)]


# ---------------------------------------------------------------------------
# tokenization (Moses-like rules)

NONBREAKING_PREFIXES = frozenset(
    "Mr Mrs Ms Dr Prof St Jr Sr Inc Co Corp Ltd vs etc e.g i.e Jan Feb Mar Apr Jun Jul Aug "
    "Sep Sept Oct Nov Dec No Nos Mt Ft Gen Gov Sen Rep Rev Col Capt Lt Sgt".split()
)
_LEADING = "([{\"$"
_TRAILING = ")]}\",!?;:%"
_CONTRACTION = re.compile(r"^(.*[A-Za-z])('(?:s|re|ve|d|ll|m|t))$", re.IGNORECASE)
_CONTRACTION_TOKEN = re.compile(r"^'(?:s|re|ve|d|ll|m|t)$", re.IGNORECASE)
_ACRONYM = re.compile(r"^(?:[A-Za-z]\.)+[A-Za-z]$")


def _keeps_period(stem: str, nonbreaking) -> bool:
    return stem in nonbreaking or _ACRONYM.match(stem) is not None or (len(stem) == 1 and stem.isalpha())


def _split_chunk(chunk: str, last: bool, nonbreaking) -> list:
    head, tail = [], []
    while chunk and chunk[0] in _LEADING and len(chunk) > 1:
        head.append(chunk[0])
        chunk = chunk[1:]
    while len(chunk) > 1:
        if chunk.endswith("..."):
            tail.append("...")
            chunk = chunk[:-3]
        elif chunk[-1] in _TRAILING:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        elif chunk[-1] == "." and (last or not _keeps_period(chunk[:-1], nonbreaking)):
            tail.append(".")
            chunk = chunk[:-1]
        else:
            break
    body = [chunk] if chunk else []
    m = _CONTRACTION.match(chunk)
    if m:
        body = [m.group(1), m.group(2)]
    return head + body + tail[::-1]


def tokenize(text: str, nonbreaking=NONBREAKING_PREFIXES) -> list:
    chunks = text.split()
    out = []
    for i, chunk in enumerate(chunks):
        out.extend(_split_chunk(chunk, i == len(chunks) - 1, nonbreaking))
    return out


_ATTACH_LEFT = frozenset([".", ",", "!", "?", ";", ":", ")", "]", "}", "%", "..."])
_ATTACH_RIGHT = frozenset(["(", "[", "{", "$"])


def detokenize(tokens: Iterable[str]) -> str:
    out = []
    glue_next = True
    quotes = 0
    for tok in tokens:
        if tok == '"':
            opening = quotes % 2 == 0
            quotes += 1
            if opening:
                if out and not glue_next:
                    out.append(" ")
                out.append(tok)
                glue_next = True
            else:
                out.append(tok)
                glue_next = False
            continue
        if not (glue_next or tok in _ATTACH_LEFT or _CONTRACTION_TOKEN.match(tok)):
            out.append(" ")
        out.append(tok)
        glue_next = tok in _ATTACH_RIGHT
    return "".join(out)


# ---------------------------------------------------------------------------
# corpus-level steps


def dedup(train: Iterable[CorpusExample], test: Iterable[CorpusExample]) -> list:
    banned = {normalize_text(ex.text) for ex in test}
    return [ex for ex in train if normalize_text(ex.text) not in banned]


def surface_form(label: str) -> str:
    m = _ERG_UNKNOWN.match(label)
    return m["form"] if m else label


def is_out_of_lexicon(node: PenmanNode, known_abstract=KNOWN_ABSTRACT) -> bool:
    flag = node.attributes.get(OOV_FLAG)
    if flag is not None:
        return flag == "+"
    label = node.label
    if label == UNK or _PLACEHOLDER.match(label):
        return False
    if _ERG_UNKNOWN.match(label):
        return True
    if parse_predicate(label).is_surface:
        return False
    return label not in known_abstract


@dataclass
class UnknownReport:
    replaced: Counter = field(default_factory=Counter)
    kept: Counter = field(default_factory=Counter)
    maps: Optional[list] = None


def apply_unknown_policy(train: list, maps: Optional[list] = None, known_abstract=KNOWN_ABSTRACT):
    """Singleton out-of-lexicon node tokens become ``UNK0``; the rest keep their surface form.

    With ``maps`` (one per example) the singleton's surface string is also
    replaced in the text and recorded, so the copy mechanism can learn to
    point at ``UNK0`` positions and generation can restore the word.
    """
    counts = Counter()
    for ex in train:
        for node in ex.graph.nodes:
            if is_out_of_lexicon(node, known_abstract):
                counts[surface_form(node.label)] += 1

    report = UnknownReport(maps=[] if maps is not None else None)
    out = []
    for i, ex in enumerate(train):
        nodes = []
        singletons = []
        for node in ex.graph.nodes:
            attrs = {k: v for k, v in node.attributes.items() if k != OOV_FLAG}
            label = node.label
            if is_out_of_lexicon(node, known_abstract):
                form = surface_form(label)
                if counts[form] == 1:
                    label = UNK
                    report.replaced[form] += 1
                    singletons.append(form)
                else:
                    label = form
                    report.kept[form] += 1
            nodes.append(PenmanNode(node.id, label, attrs, node.carg))
        text = ex.text
        if maps is not None:
            amap = AnonymizationMap(list(maps[i].entries))
            hits = sorted(((_find(f, text), f) for f in singletons), key=lambda h: (h[0] < 0, h[0]))
            for pos, form in hits:
                amap.entries.append(AnonEntry(UNK, form, "unk", pos >= 0))
            text = _replace_all(text, {f: UNK for pos, f in hits if pos >= 0})
            report.maps.append(amap)
        out.append(replace(ex, graph=ex.graph.replace(nodes=nodes), text=text))
    return out, report


def surface_unknowns(examples: list, known_abstract=KNOWN_ABSTRACT) -> list:
    """Held-out counterpart of :func:`apply_unknown_policy`: out-of-lexicon
    nodes take their surface form (no ``UNK0``, no frequency test)."""
    out = []
    for ex in examples:
        nodes = []
        for node in ex.graph.nodes:
            label = surface_form(node.label) if is_out_of_lexicon(node, known_abstract) else node.label
            attrs = {k: v for k, v in node.attributes.items() if k != OOV_FLAG}
            nodes.append(PenmanNode(node.id, label, attrs, node.carg))
        out.append(replace(ex, graph=ex.graph.replace(nodes=nodes)))
    return out
