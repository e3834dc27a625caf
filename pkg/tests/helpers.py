"""Shared test oracles and random-input builders.

The extraction oracle here is deliberately independent of the production
scanner: it enumerates every O(n^2) sub-span and regex-matches the
category string.
"""

from __future__ import annotations

import re
from random import Random

from ssi_sentinel.nlp import Category, TagMapping, TaggedToken, Term, normalize_term

# N(A | (PD?)?N)* over category characters
NOUN_GROUP_RE = re.compile(r"^N(?:A|(?:PD?)?N)*$")

CAT_CHAR = {
    Category.NOUN: "N",
    Category.ADJ: "A",
    Category.PREP: "P",
    Category.DET: "D",
    Category.OTHER: "O",
}

CHAR_TAG = {"N": "NOM", "A": "ADJ", "P": "PRP", "D": "DET:ART", "O": "XXX"}


def brute_force_noun_groups(
    sentence: list[TaggedToken], mapping: TagMapping, max_content: int = 3
) -> set[Term]:
    """Enumerate all sub-spans; keep those matching the pattern and budget."""
    chars = [CAT_CHAR[mapping.category(tok.tag)] for tok in sentence]
    out: set[Term] = set()
    for i in range(len(sentence)):
        for j in range(i + 1, len(sentence) + 1):
            span = "".join(chars[i:j])
            content = span.count("N") + span.count("A")
            if content <= max_content and NOUN_GROUP_RE.match(span):
                out.add(Term(normalize_term(t.lemma for t in sentence[i:j]), content))
    return out


def random_tagged_sentence(rng: Random, max_len: int = 20, vocab: int = 8) -> list[TaggedToken]:
    """Random category sequence biased toward nouns, with repeated lemmas."""
    n = rng.randrange(0, max_len + 1)
    tokens = []
    for _ in range(n):
        char = rng.choice("NNNAAPPDO")
        lemma = f"l{rng.randrange(vocab)}"
        tokens.append(TaggedToken(lemma, CHAR_TAG[char], lemma))
    return tokens


def count_occurrences_oracle(lemma_sentences, term: str) -> int:
    """String-scan recount of contiguous lemma-sequence matches."""
    needle = " " + term + " "
    total = 0
    for sentence in lemma_sentences:
        padded = " " + " ".join(sentence) + " "
        total += sum(1 for i in range(len(padded)) if padded.startswith(needle, i))
    return total
