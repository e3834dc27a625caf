"""Tokenization, POS-tag handling and noun-group term extraction.

Candidate terms are contiguous noun-headed spans of a tagged sentence.
A span qualifies when its abstract tag sequence matches

    NOUN ( ADJ | (PREP DET?)? NOUN )*

it therefore starts on a noun, ends on a noun or adjective, and its
noun/adjective count stays within a configurable budget (3 by default).
Every qualifying sub-span is emitted, so "infection du site opératoire"
also yields "infection", "infection du site", "site" and "site opératoire".

Tagging can come from an external tagger's TSV output (the production
path) or from the intentionally naive built-in lexicon/suffix tagger that
keeps the pipeline testable without external software.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class TaggingError(ValueError):
    """Malformed tagged input."""


class Category(Enum):
    NOUN = "NOUN"
    ADJ = "ADJ"
    PREP = "PREP"
    DET = "DET"
    OTHER = "OTHER"


@dataclass(frozen=True)
class TaggedToken:
    surface: str
    tag: str
    lemma: str

    def __post_init__(self) -> None:
        # Empty lemma falls back to the lowercased surface.
        if not self.lemma:
            object.__setattr__(self, "lemma", self.surface.lower())


@dataclass(frozen=True)
class Term:
    """A normalized lemma sequence with its noun/adjective count."""

    text: str
    content_len: int


# A tagged document: sentences of tagged tokens.
TaggedDoc = list[list[TaggedToken]]


@dataclass
class TagMapping:
    """Total mapping from concrete tag symbols to abstract categories."""

    table: dict[str, Category] = field(default_factory=dict)

    def category(self, tag: str) -> Category:
        return self.table.get(tag, Category.OTHER)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Iterable[str]]) -> "TagMapping":
        table: dict[str, Category] = {}
        for name, symbols in raw.items():
            cat = Category(name)
            for symbol in symbols:
                table[symbol] = cat
        return cls(table)

    @classmethod
    def from_json(cls, path: str | Path) -> "TagMapping":
        import json

        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "TagMapping":
        import json

        raw = resources.files("ssi_sentinel.data").joinpath("tagmap.json").read_text("utf-8")
        return cls.from_dict(json.loads(raw))


# --- tokenization ---------------------------------------------------------

# Numbers first so decimals stay whole, then words (hyphenated compounds are
# one token), then any single non-space symbol.
_TOKEN_RE = re.compile(r"\d+(?:[.,]\d+)*|\w+(?:-\w+)*|[^\w\s]", re.UNICODE)
_TERMINAL = {".", "!", "?"}


def tokenize(text: str) -> list[list[str]]:
    """Split text into sentences of raw tokens.

    Sentences break on terminal punctuation and on newlines; punctuation
    tokens are retained.
    """
    sentences: list[list[str]] = []
    for line in text.splitlines():
        current: list[str] = []
        for token in _TOKEN_RE.findall(line):
            current.append(token)
            if token in _TERMINAL:
                sentences.append(current)
                current = []
        if current:
            sentences.append(current)
    return sentences


# --- built-in tagger ------------------------------------------------------

# surface (lowercased) -> (category name, lemma)
Lexicon = dict[str, tuple[str, str]]

_DIGITS_RE = re.compile(r"^\d+(?:[.,]\d+)*$")
_ADJ_SUFFIXES = (
    "ique", "iques", "aire", "aires", "atoire", "atoires", "eux", "euse",
    "euses", "if", "ive", "ifs", "ives", "able", "ables", "ible", "ibles",
    "al", "ale", "ales", "el", "elle", "elles", "ant", "ante", "antes",
)


def load_lexicon(path: str | Path) -> Lexicon:
    """Read a lexicon TSV of `surface<TAB>category<TAB>lemma` lines."""
    lexicon: Lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.rstrip("\n")
            if not raw or raw.startswith("#"):
                continue
            parts = raw.split("\t")
            if len(parts) != 3:
                raise TaggingError(f"{path}:{lineno}: expected 3 tab-separated columns")
            surface, category, lemma = parts
            lexicon[surface.lower()] = (category, lemma)
    return lexicon


def default_lexicon() -> Lexicon:
    import io

    raw = resources.files("ssi_sentinel.data").joinpath("lexicon.tsv").read_text("utf-8")
    lexicon: Lexicon = {}
    for line in io.StringIO(raw):
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        surface, category, lemma = line.split("\t")
        lexicon[surface.lower()] = (category, lemma)
    return lexicon


def _strip_plural(word: str) -> str:
    if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def builtin_tag(tokens: Sequence[str], lexicon: Lexicon) -> list[TaggedToken]:
    """Naive deterministic tagger: lexicon lookup, then suffix heuristics.

    Unknown alphabetic tokens default to NOUN (with a naive plural strip),
    which over-generates candidates the downstream filters prune. Pure
    digit tokens and punctuation are OTHER.
    """
    tagged = []
    for token in tokens:
        lower = token.lower()
        if lower in lexicon:
            category, lemma = lexicon[lower]
            tagged.append(TaggedToken(token, category, lemma))
        elif _DIGITS_RE.match(token) or not any(ch.isalnum() for ch in token):
            tagged.append(TaggedToken(token, Category.OTHER.value, lower))
        elif lower.endswith(_ADJ_SUFFIXES):
            tagged.append(TaggedToken(token, Category.ADJ.value, lower))
        else:
            tagged.append(TaggedToken(token, Category.NOUN.value, _strip_plural(lower)))
    return tagged


def tag_text(text: str, lexicon: Lexicon) -> TaggedDoc:
    """Tokenize and tag free text with the built-in tagger."""
    return [builtin_tag(sentence, lexicon) for sentence in tokenize(text)]


# --- external tagger output -----------------------------------------------

_UNKNOWN_LEMMA = "<unknown>"


def parse_tagged_tsv(source: str | Path | Iterable[str]) -> TaggedDoc:
    """Parse `token<TAB>tag<TAB>lemma` lines; blank lines separate sentences.

    An `<unknown>` lemma is replaced by the lowercased surface.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            return _parse_tagged_lines(fh, str(source))
    return _parse_tagged_lines(source, "<lines>")


def _parse_tagged_lines(lines: Iterable[str], origin: str) -> TaggedDoc:
    sentences: TaggedDoc = []
    current: list[TaggedToken] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if current:
                sentences.append(current)
                current = []
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise TaggingError(f"{origin}:{lineno}: expected 3 tab-separated columns")
        surface, tag, lemma = parts
        if lemma == _UNKNOWN_LEMMA:
            lemma = surface.lower()
        current.append(TaggedToken(surface, tag, lemma))
    if current:
        sentences.append(current)
    return sentences


# --- term extraction ------------------------------------------------------


def normalize_term(lemmas: Iterable[str]) -> str:
    """Lowercase, space-join and whitespace-collapse a lemma sequence.

    Diacritics are preserved; the result is idempotent under re-application.
    """
    return " ".join(" ".join(lemmas).lower().split())


def extract_noun_groups(
    sentence: Sequence[TaggedToken],
    mapping: TagMapping,
    max_content: int = 3,
) -> set[Term]:
    """All sub-spans of the sentence matching the noun-group pattern.

    Scans forward from every noun, emitting a Term at each position where
    the span ends on a noun or adjective, and stopping once the
    noun/adjective budget is spent. Duplicates within the sentence are
    collapsed by the returned set.
    """
    cats = [mapping.category(tok.tag) for tok in sentence]
    found: set[Term] = set()
    n = len(sentence)
    for start in range(n):
        if cats[start] is not Category.NOUN:
            continue
        lemmas = [sentence[start].lemma]
        content = 1
        found.add(Term(normalize_term(lemmas), content))
        pending: list[str] = []  # lemmas of an unclosed PREP (DET?) tail
        awaiting: str | None = None  # None | "prep" | "det"
        for j in range(start + 1, n):
            cat = cats[j]
            lemma = sentence[j].lemma
            if awaiting is None:
                if cat is Category.ADJ or cat is Category.NOUN:
                    content += 1
                    if content > max_content:
                        break
                    lemmas.append(lemma)
                    found.add(Term(normalize_term(lemmas), content))
                    if content == max_content:
                        break
                elif cat is Category.PREP:
                    if content == max_content:
                        break
                    awaiting = "prep"
                    pending = [lemma]
                else:
                    break
            elif awaiting == "prep" and cat is Category.DET:
                awaiting = "det"
                pending.append(lemma)
            elif cat is Category.NOUN:
                content += 1
                lemmas.extend(pending)
                lemmas.append(lemma)
                found.add(Term(normalize_term(lemmas), content))
                pending = []
                awaiting = None
                if content == max_content:
                    break
            else:
                break
    return found


def extract_document_terms(
    doc: TaggedDoc, mapping: TagMapping, max_content: int = 3
) -> list[set[Term]]:
    """Per-sentence extraction over a tagged document."""
    return [extract_noun_groups(sentence, mapping, max_content) for sentence in doc]


# --- lemma streams and term index -----------------------------------------


def lemma_sentences(doc: TaggedDoc) -> list[list[str]]:
    """Normalized lemma stream of a tagged document, one list per sentence."""
    return [[tok.lemma.lower() for tok in sentence] for sentence in doc]


def fold_diacritics(text: str) -> str:
    """Lowercase and strip combining marks (for loose string matching)."""
    decomposed = unicodedata.normalize("NFKD", text.lower())
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


@dataclass
class TermIndex:
    """Term -> procedures containing it, plus per-procedure extraction counts.

    A count is the number of sentence-level extraction events of the term
    across a procedure's window documents.
    """

    presence: dict[str, set[str]] = field(default_factory=dict)
    counts: dict[str, dict[str, int]] = field(default_factory=dict)
    procedure_ids: set[str] = field(default_factory=set)

    def add(self, term: str, procedure_id: str, count: int = 1) -> None:
        self.presence.setdefault(term, set()).add(procedure_id)
        per_proc = self.counts.setdefault(term, {})
        per_proc[procedure_id] = per_proc.get(procedure_id, 0) + count
        self.procedure_ids.add(procedure_id)

    def terms(self) -> list[str]:
        return sorted(self.presence)

    def presence_count(self, term: str, within: set[str] | None = None) -> int:
        pids = self.presence.get(term, set())
        if within is not None:
            pids = pids & within
        return len(pids)

    def restrict(self, procedure_ids: Iterable[str]) -> "TermIndex":
        """Index projected onto a subset of procedures; empty terms dropped."""
        keep = set(procedure_ids)
        out = TermIndex(procedure_ids=keep & self.procedure_ids)
        for term, pids in self.presence.items():
            kept = pids & keep
            if not kept:
                continue
            out.presence[term] = kept
            out.counts[term] = {p: c for p, c in self.counts[term].items() if p in keep}
        return out


def index_terms(
    docs_by_procedure: Mapping[str, Sequence[TaggedDoc]],
    mapping: TagMapping,
    max_content: int = 3,
) -> TermIndex:
    """Build the term index over per-procedure window documents."""
    index = TermIndex()
    for procedure_id, docs in docs_by_procedure.items():
        index.procedure_ids.add(procedure_id)
        for doc in docs:
            for sentence_terms in extract_document_terms(doc, mapping, max_content):
                for term in sentence_terms:
                    index.add(term.text, procedure_id)
    return index
