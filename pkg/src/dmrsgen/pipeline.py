"""End-to-end example preparation shared by the command line and tests."""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .corpus import ParallelExample
from .dmrs import AblationSpec, ablate
from .linearize import linearize
from .preprocess import (CorpusExample, UnknownReport, anonymize, apply_unknown_policy,
                         normalize_text, surface_unknowns, tokenize)


@dataclass
class PreparedSplit:
    pairs: list
    maps: list
    references: list       # normalized original sentences
    unknowns: Optional[UnknownReport] = None
    domains: list = field(default_factory=list)


def prepare(examples: Sequence[CorpusExample], ablation: Optional[AblationSpec] = None,
            unknown_policy: bool = False) -> PreparedSplit:
    """normalize -> anonymize -> unknown words -> [ablation] -> linearize -> tokenize.

    ``unknown_policy`` marks training data: singletons become ``UNK0``.
    Otherwise out-of-lexicon nodes just take their surface form.
    """
    normed = [replace(ex, text=normalize_text(ex.text)) for ex in examples]
    refs = [ex.text for ex in normed]
    anon, maps = [], []
    for ex in normed:
        a, m = anonymize(ex)
        anon.append(a)
        maps.append(m)
    report = None
    if unknown_policy:
        anon, report = apply_unknown_policy(anon, maps)
        maps = report.maps
    else:
        anon = surface_unknowns(anon)
    if ablation is not None:
        anon = [replace(ex, graph=ablate(ex.graph, ablation)) for ex in anon]
    pairs = [
        ParallelExample(linearize(ex.graph), tokenize(ex.text), ex.provenance, ex.domain, i)
        for i, ex in enumerate(anon)
    ]
    return PreparedSplit(pairs, maps, refs, report, [ex.domain for ex in anon])
