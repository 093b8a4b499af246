"""BLEU, exact match, per-domain reports and sentence-BLEU bucket sampling.

BLEU follows the usual corpus definition (clipped 1-4 gram precisions,
geometric mean, brevity penalty) over mteval-13a tokenization, case-sensitive.
"""

import logging
import math
import random
import re
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .preprocess import normalize_text

log = logging.getLogger(__name__)

MAX_ORDER = 4


def tokenize_13a(line: str) -> str:
    norm = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    norm = norm.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    norm = f" {norm} "
    norm = re.sub(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])", r" \1 ", norm)
    norm = re.sub(r"([^0-9])([\.,])", r"\1 \2 ", norm)
    norm = re.sub(r"([\.,])([^0-9])", r" \1 \2", norm)
    norm = re.sub(r"([0-9])(-)", r"\1 \2 ", norm)
    return " ".join(norm.split())


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp: str, ref: str, tokenize=tokenize_13a):
    """(matches per order, totals per order, hyp length, ref length)."""
    h = tokenize(hyp).split()
    r = tokenize(ref).split()
    matches, totals = [], []
    for n in range(1, MAX_ORDER + 1):
        hc, rc = ngrams(h, n), ngrams(r, n)
        matches.append(sum(min(c, rc[g]) for g, c in hc.items()))
        totals.append(max(len(h) - n + 1, 0))
    return matches, totals, len(h), len(r)


def bleu_from_stats(matches, totals, sys_len, ref_len, smooth: str = "none"):
    """Returns (score in [0, 100], precisions in percent, brevity penalty)."""
    precisions = []
    for n, (m, t) in enumerate(zip(matches, totals), 1):
        if smooth == "add-one" and n > 1:
            m, t = m + 1, t + 1
        precisions.append(100.0 * m / t if t > 0 else 0.0)
    if sys_len == 0:
        bp = 0.0
    elif sys_len < ref_len:
        bp = math.exp(1 - ref_len / sys_len)
    else:
        bp = 1.0
    # orders the hypothesis is too short to have at all drop out of the mean
    used = [p for p, t in zip(precisions, totals) if t > 0]
    if not used or min(used) == 0.0:
        return 0.0, precisions, bp
    score = bp * math.exp(sum(math.log(p / 100.0) for p in used) / len(used))
    return 100.0 * score, precisions, bp


@dataclass
class EvalReport:
    bleu: float
    exact_match: float
    precisions: list
    brevity_penalty: float
    sys_len: int
    ref_len: int
    matches: list
    totals: list
    count: int
    domains: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["domains"] = {k: v.to_json() for k, v in self.domains.items()}
        return out


def _check_lengths(hyps, refs):
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")


def corpus_bleu(hypotheses: Sequence[str], references: Sequence[str],
                domains: Optional[Sequence[str]] = None) -> EvalReport:
    _check_lengths(hypotheses, references)
    if not hypotheses:
        raise ValueError("empty corpus")
    report = _report(hypotheses, references)
    if domains is not None:
        _check_lengths(hypotheses, domains)
        groups = defaultdict(list)
        for i, d in enumerate(domains):
            groups[d].append(i)
        for d in sorted(groups):
            idx = groups[d]
            report.domains[d] = _report([hypotheses[i] for i in idx], [references[i] for i in idx])
    return report


def _report(hyps, refs) -> EvalReport:
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    sys_len = ref_len = 0
    for h, r in zip(hyps, refs):
        m, t, hl, rl = sentence_stats(h, r)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        sys_len += hl
        ref_len += rl
    score, precisions, bp = bleu_from_stats(matches, totals, sys_len, ref_len)
    return EvalReport(round(score, 2), exact_match(hyps, refs), precisions, bp, sys_len, ref_len,
                      matches, totals, len(hyps))


def sentence_bleu(hypothesis: str, reference: str, smooth: str = "add-one") -> float:
    m, t, hl, rl = sentence_stats(hypothesis, reference)
    return bleu_from_stats(m, t, hl, rl, smooth=smooth)[0]


def exact_match(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    _check_lengths(hypotheses, references)
    if not hypotheses:
        return 0.0
    hits = sum(normalize_text(h).strip() == normalize_text(r).strip() for h, r in zip(hypotheses, references))
    return round(100.0 * hits / len(hypotheses), 2)


def signature(smooth: str = "none") -> str:
    return f"BLEU+case.mixed+numrefs.1+smooth.{smooth}+tok.13a+order.{MAX_ORDER}"


# ---------------------------------------------------------------------------
# error-analysis sampling

DEFAULT_BUCKETS = ((80, 89), (60, 69), (40, 49))


def parse_buckets(text: str) -> list:
    out = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        out.append((float(lo), float(hi)))
    return out


def in_bucket(score: float, bucket) -> bool:
    # integer-labelled ranges: "80-89" covers every score from 80 up to (not including) 90
    lo, hi = bucket
    return lo <= score < hi + 1


def bucket_sample(pairs: Sequence[tuple], buckets=DEFAULT_BUCKETS, per_bucket: int = 33,
                  seed: int = 0) -> list:
    """Sample up to ``per_bucket`` (hyp, ref) pairs per sentence-BLEU range.

    Returns dicts with index, bucket label, score, hypothesis and reference.
    """
    if per_bucket < 1:
        raise ValueError("per_bucket must be >= 1")
    scored = [(i, sentence_bleu(h, r)) for i, (h, r) in enumerate(pairs)]
    rng = random.Random(seed)
    out = []
    for bucket in buckets:
        members = [(i, s) for i, s in scored if in_bucket(s, bucket)]
        label = f"{bucket[0]:g}-{bucket[1]:g}"
        if len(members) < per_bucket:
            if not members:
                log.warning("bucket %s is empty", label)
            chosen = members
        else:
            chosen = sorted(rng.sample(members, per_bucket))
        for i, s in chosen:
            out.append({"index": i, "bucket": label, "score": round(s, 2),
                        "hypothesis": pairs[i][0], "reference": pairs[i][1]})
    return out
