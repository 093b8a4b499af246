"""A toy DMRS/English corpus with deterministic realization.

Transitive clauses over names and common nouns.  Number and tense attributes
drive noun and verb inflection, so they carry information the text depends
on; optional invented nouns stand in for words outside the grammar lexicon.
"""

import random

from .penman import PenmanEdge, PenmanGraph, PenmanNode
from .preprocess import CorpusExample

NAMES = ["Kim", "Sandy", "Lee", "Pat", "Alex", "Robin", "Chris", "Dana"]
NOUNS = {
    "boy": "boys", "girl": "girls", "dog": "dogs", "cat": "cats", "teacher": "teachers",
    "farmer": "farmers", "bird": "birds", "horse": "horses",
}
VERBS = {
    # lemma: (3sg present, plain present, past)
    "see": ("sees", "see", "saw"),
    "chase": ("chases", "chase", "chased"),
    "like": ("likes", "like", "liked"),
    "help": ("helps", "help", "helped"),
    "follow": ("follows", "follow", "followed"),
    "find": ("finds", "find", "found"),
}
ADJECTIVES = ["big", "small", "old", "happy"]
TENSES = ["PRES", "PAST", "FUT"]

_EVENT = {"sf": "PROP", "perf": "-", "mood": "INDICATIVE"}


def pseudo_words(n: int, seed: int = 0, exclude=()) -> list:
    """Distinct pronounceable non-words."""
    rng = random.Random(seed)
    onsets, vowels, codas = "bdfgklmnprstvz", "aeiou", "bdgklmnprstxz"
    seen = set(exclude) | set(NOUNS) | set(NOUNS.values()) | {n.lower() for n in NAMES}
    out = []
    while len(out) < n:
        w = "".join(rng.choice(onsets) + rng.choice(vowels) for _ in range(2)) + rng.choice(codas)
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


class _Builder:
    def __init__(self):
        self.nodes, self.edges = [], []

    def node(self, label, attrs=None, carg=None):
        nid = str(len(self.nodes) + 1)
        self.nodes.append(PenmanNode(nid, label, dict(attrs or {}), carg))
        return nid

    def edge(self, source, label, target):
        self.edges.append(PenmanEdge(source, label, target))


def _noun_phrase(b: _Builder, rng: random.Random, oov_word=None):
    """Returns (node id, words, is_plural)."""
    if oov_word is None and rng.random() < 0.35:
        name = rng.choice(NAMES)
        nid = b.node("named", {"pers": "3", "num": "SG", "ind": "+"}, carg=name)
        b.edge(b.node("proper_q"), "RSTR-H", nid)
        return nid, [name], False
    if oov_word is not None:
        plural = False
        nid = b.node(oov_word, {"pers": "3", "num": "SG", "ind": "+"})
        words = [oov_word]
    else:
        lemma = rng.choice(sorted(NOUNS))
        plural = rng.random() < 0.5
        nid = b.node(f"_{lemma}_n_1", {"pers": "3", "num": "PL" if plural else "SG", "ind": "+"})
        words = [NOUNS[lemma] if plural else lemma]
    if rng.random() < 0.3:
        adj = rng.choice(ADJECTIVES)
        a = b.node(f"_{adj}_a_1", dict(_EVENT, tense="UNTENSED"))
        b.edge(a, "ARG1-EQ", nid)
        words = [adj] + words
    if plural and rng.random() < 0.5:
        q, det = "udef_q", []
    elif not plural and rng.random() < 0.5:
        q, det = "_a_q", ["an" if words[0][0] in "aeiou" else "a"]
    else:
        q, det = "_the_q", ["the"]
    b.edge(b.node(q), "RSTR-H", nid)
    return nid, det + words, plural


def make_example(rng: random.Random, oov_word=None) -> CorpusExample:
    b = _Builder()
    lemma = rng.choice(sorted(VERBS))
    tense = rng.choice(TENSES)
    verb = b.node(f"_{lemma}_v_1", dict(_EVENT, tense=tense))
    oov_slot = rng.choice([1, 2]) if oov_word is not None else 0
    subj, subj_words, subj_plural = _noun_phrase(b, rng, oov_word if oov_slot == 1 else None)
    obj, obj_words, _ = _noun_phrase(b, rng, oov_word if oov_slot == 2 else None)
    b.edge(verb, "ARG1-NEQ", subj)
    b.edge(verb, "ARG2-NEQ", obj)
    sg, pl, past = VERBS[lemma]
    if tense == "PRES":
        vwords = [pl if subj_plural else sg]
    elif tense == "PAST":
        vwords = [past]
    else:
        vwords = ["will", lemma]
    words = subj_words + vwords + obj_words
    words[0] = words[0][:1].upper() + words[0][1:]
    graph = PenmanGraph(verb, b.nodes, b.edges)
    return CorpusExample(graph, " ".join(words) + ".", "gold", "toy")


def synthetic_corpus(n: int, seed: int = 0, oov_words=(), oov_rate: float = 0.0) -> list:
    """``n`` examples; a fraction ``oov_rate`` each use the next word of ``oov_words``."""
    rng = random.Random(seed)
    pool = iter(oov_words)
    out = []
    for _ in range(n):
        word = next(pool, None) if oov_words and rng.random() < oov_rate else None
        out.append(make_example(rng, word))
    return out
