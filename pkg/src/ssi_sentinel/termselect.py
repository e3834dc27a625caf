"""Semi-automatic discriminative-term selection.

Pipeline over an indexed corpus of labeled procedures: keep terms frequent
among positives, rank survivors by smoothed odds ratio, drop terms absent
from an external reference text, then cut to the top K (or to an explicit
expert approval list).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import nlp
from .nlp import Lexicon, TagMapping, TermIndex

log = logging.getLogger(__name__)


class SelectionError(ValueError):
    """Selection preconditions not met (e.g. no labeled positives)."""


@dataclass(frozen=True)
class TermStats:
    """2x2 contingency counts of a term against the SSI label.

    a/b: positives/negatives containing the term; c/d: those without.
    Presence is procedure-level binary, however often the term occurs.
    """

    term: str
    a: int
    b: int
    c: int
    d: int
    odds_ratio: float


@dataclass
class SelectionConfig:
    positive_ratio: float = 0.20
    smoothing: float = 0.5
    top_k: int = 20
    approval_list: list[str] | None = None

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0 < self.positive_ratio <= 1:
            raise ValueError("positive_ratio must be in (0, 1]")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")


def _split_labels(labels: Mapping[str, bool]) -> tuple[set[str], set[str]]:
    positives = {pid for pid, lab in labels.items() if lab}
    negatives = {pid for pid, lab in labels.items() if not lab}
    return positives, negatives


def frequency_filter(
    index: TermIndex, labels: Mapping[str, bool], ratio: float
) -> set[str]:
    """Keep terms present in at least ceil(ratio * n_positives) positives."""
    positives, _ = _split_labels(labels)
    if not positives:
        raise SelectionError("frequency filter undefined without labeled positives")
    min_count = math.ceil(ratio * len(positives))
    return {
        term
        for term in index.presence
        if index.presence_count(term, positives) >= min_count
    }


def odds_ratio(a: int, b: int, c: int, d: int, smoothing: float = 0.5) -> float:
    """Smoothed odds ratio ((a+s)(d+s)) / ((b+s)(c+s)).

    With s=0 a zero in b or c yields +inf rather than raising.
    """
    num = (a + smoothing) * (d + smoothing)
    den = (b + smoothing) * (c + smoothing)
    if den == 0:
        return math.inf
    return num / den


def compute_stats(
    index: TermIndex, labels: Mapping[str, bool], config: SelectionConfig
) -> list[TermStats]:
    """Contingency stats for frequency-filter survivors, sorted by odds ratio.

    Ties break on higher positive count, then lexicographic term, so the
    ranking is deterministic.
    """
    unlabeled = index.procedure_ids - set(labels)
    if unlabeled:
        raise SelectionError(
            f"{len(unlabeled)} indexed procedures lack labels (e.g. {sorted(unlabeled)[0]!r})"
        )
    positives, negatives = _split_labels(labels)
    survivors = frequency_filter(index, labels, config.positive_ratio)
    stats = []
    for term in survivors:
        a = index.presence_count(term, positives)
        b = index.presence_count(term, negatives)
        stats.append(
            TermStats(
                term=term,
                a=a,
                b=b,
                c=len(positives) - a,
                d=len(negatives) - b,
                odds_ratio=odds_ratio(a, b, len(positives) - a, len(negatives) - b, config.smoothing),
            )
        )
    stats.sort(key=lambda s: (-s.odds_ratio, -s.a, s.term))
    return stats


def extract_reference_terms(
    reference_text: str,
    *,
    lexicon: Lexicon | None = None,
    mapping: TagMapping | None = None,
    max_content: int = 3,
    tagged: nlp.TaggedDoc | None = None,
) -> set[str]:
    """Term set of a reference text, extracted with the identical pipeline.

    Pass `tagged` to use pre-tagged sentences instead of the built-in tagger.
    """
    mapping = mapping or TagMapping.default()
    if tagged is None:
        lexicon = lexicon if lexicon is not None else nlp.default_lexicon()
        tagged = nlp.tag_text(reference_text, lexicon)
    terms: set[str] = set()
    for sentence_terms in nlp.extract_document_terms(tagged, mapping, max_content):
        terms.update(t.text for t in sentence_terms)
    return terms


def reference_filter(
    candidates: Iterable[str],
    reference_text: str,
    *,
    lexicon: Lexicon | None = None,
    mapping: TagMapping | None = None,
    max_content: int = 3,
    tagged: nlp.TaggedDoc | None = None,
) -> set[str]:
    """Keep candidates whose normalized form also occurs in the reference."""
    reference_terms = extract_reference_terms(
        reference_text, lexicon=lexicon, mapping=mapping, max_content=max_content, tagged=tagged
    )
    if not reference_terms:
        log.warning("reference text produced no terms; all candidates excluded")
        return set()
    return {c for c in candidates if c in reference_terms}


def select_final(stats: Sequence[TermStats], config: SelectionConfig) -> list[TermStats]:
    """Top-K cut, or the expert approval list when one is given.

    Approved terms missing from the stats are carried with null stats
    (NaN odds ratio) and logged.
    """
    if config.approval_list is not None:
        by_term = {s.term: s for s in stats}
        selected = []
        for term in config.approval_list:
            if term in by_term:
                selected.append(by_term[term])
            else:
                log.warning("approved term %r absent from computed stats", term)
                selected.append(TermStats(term=term, a=0, b=0, c=0, d=0, odds_ratio=math.nan))
        return selected
    return list(stats[: config.top_k])


def write_candidate_report(
    stats: Sequence[TermStats],
    path: str | Path,
    reference_terms: set[str] | None = None,
) -> None:
    """Ranked candidate report for expert review (candidate_report.json)."""
    rows = []
    for s in stats:
        rows.append(
            {
                "term": s.term,
                "a": s.a,
                "b": s.b,
                "c": s.c,
                "d": s.d,
                "odds_ratio": None if math.isnan(s.odds_ratio) else s.odds_ratio,
                "in_reference": None if reference_terms is None else s.term in reference_terms,
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def read_approved_terms(path: str | Path) -> list[str]:
    """approved_terms.txt: one normalized term per line, order significant."""
    terms = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            term = nlp.normalize_term([raw.strip()])
            if term:
                terms.append(term)
    return terms


def write_terms(terms: Iterable[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for term in terms:
            fh.write(term + "\n")
