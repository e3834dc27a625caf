from __future__ import annotations

from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssi_sentinel import nlp
from ssi_sentinel.nlp import (
    Category,
    TagMapping,
    TaggedToken,
    TaggingError,
    Term,
    builtin_tag,
    default_lexicon,
    extract_noun_groups,
    index_terms,
    normalize_term,
    parse_tagged_tsv,
    tokenize,
)

from helpers import brute_force_noun_groups, random_tagged_sentence

MAPPING = TagMapping.default()


def tt(surface, tag, lemma=None):
    return TaggedToken(surface, tag, lemma if lemma is not None else surface)


PAPER_SENTENCE = [
    tt("reprise", "NOM"),
    tt("chirurgicale", "ADJ"),
    tt("pour", "PRP"),
    tt("infection", "NOM"),
    tt("du", "PRP:det"),
    tt("site", "NOM"),
    tt("opératoire", "ADJ"),
]

PAPER_TERMS = {
    "reprise",
    "reprise chirurgicale",
    "reprise chirurgicale pour infection",
    "infection",
    "infection du site",
    "infection du site opératoire",
    "site",
    "site opératoire",
}


class TestTokenize:
    def test_simple_sentence(self):
        sentences = tokenize("infection du site.")
        assert sentences == [["infection", "du", "site", "."]]

    def test_empty(self):
        assert tokenize("") == []

    def test_measurements(self):
        tokens = tokenize("CRP: 120 mg/L")[0]
        assert "CRP" in tokens and "120" in tokens

    def test_newline_splits_sentences(self):
        assert len(tokenize("un texte\nsur deux lignes")) == 2

    def test_decimal_number_is_one_token(self):
        tokens = tokenize("température 38,5 ce jour.")[0]
        assert "38,5" in tokens

    def test_terminal_punctuation_splits(self):
        assert len(tokenize("Douleur. Fièvre. Ecoulement.")) == 3


class TestNormalize:
    def test_basic(self):
        assert normalize_term(["Site", "Opératoire"]) == "site opératoire"

    def test_accented_casefold(self):
        assert normalize_term(["Écoulement"]) == "écoulement"

    @given(st.lists(st.text(alphabet="abcé ", min_size=1, max_size=6), min_size=1, max_size=5))
    def test_idempotent(self, lemmas):
        once = normalize_term(lemmas)
        assert normalize_term([once]) == once


class TestBuiltinTagger:
    LEX = default_lexicon()

    def test_lexicon_hit_lemmatizes(self):
        (token,) = builtin_tag(["infections"], self.LEX)
        assert token.tag == "NOUN" and token.lemma == "infection"

    def test_ique_suffix_is_adjective(self):
        (token,) = builtin_tag(["nosocomique"], self.LEX)
        assert token.tag == "ADJ"

    def test_digits_are_other(self):
        (token,) = builtin_tag(["120"], self.LEX)
        assert token.tag == "OTHER"

    def test_punctuation_is_other(self):
        (token,) = builtin_tag(["."], self.LEX)
        assert token.tag == "OTHER"

    def test_unknown_word_defaults_to_noun_with_plural_strip(self):
        (token,) = builtin_tag(["ostéophytes"], self.LEX)
        assert token.tag == "NOUN" and token.lemma == "ostéophyte"

    def test_deterministic(self):
        tokens = ["infection", "purulente", "xyz", "12"]
        assert builtin_tag(tokens, self.LEX) == builtin_tag(tokens, self.LEX)


class TestParseTaggedTsv:
    def test_three_columns(self, tmp_path):
        path = tmp_path / "doc.tsv"
        path.write_text("infections\tNOM\tinfection\n", encoding="utf-8")
        ((token,),) = parse_tagged_tsv(path)
        assert token == TaggedToken("infections", "NOM", "infection")

    def test_blank_line_separates_sentences(self, tmp_path):
        path = tmp_path / "doc.tsv"
        path.write_text("a\tNOM\ta\n\nb\tNOM\tb\n", encoding="utf-8")
        assert len(parse_tagged_tsv(path)) == 2

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "doc.tsv"
        path.write_text("a\tNOM\ta\nbroken\tNOM\n", encoding="utf-8")
        with pytest.raises(TaggingError, match=":2"):
            parse_tagged_tsv(path)

    def test_unknown_lemma_falls_back_to_surface(self):
        ((token,),) = parse_tagged_tsv(["Rifadine\tNAM\t<unknown>\n"])
        assert token.lemma == "rifadine"


class TestExtractNounGroups:
    def test_paper_example_exact(self):
        terms = extract_noun_groups(PAPER_SENTENCE, MAPPING)
        assert {t.text for t in terms} == PAPER_TERMS

    def test_single_noun(self):
        terms = extract_noun_groups([tt("sepsis", "NOM")], MAPPING)
        assert terms == {Term("sepsis", 1)}

    def test_no_nouns(self):
        sentence = [tt("très", "ADV"), tt("bien", "ADV")]
        assert extract_noun_groups(sentence, MAPPING) == set()

    def test_term_invariants_on_random_sentences(self):
        rng = Random(41)
        for _ in range(300):
            sentence = random_tagged_sentence(rng)
            for term in extract_noun_groups(sentence, MAPPING):
                assert 1 <= term.content_len <= 3
                assert term.text == normalize_term(term.text.split())

    def test_matches_brute_force_oracle(self):
        rng = Random(99)
        for _ in range(400):
            sentence = random_tagged_sentence(rng)
            assert extract_noun_groups(sentence, MAPPING) == brute_force_noun_groups(
                sentence, MAPPING
            ), [(t.surface, t.tag) for t in sentence]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_matches_brute_force_any_budget(self, seed, max_content):
        sentence = random_tagged_sentence(Random(seed))
        got = extract_noun_groups(sentence, MAPPING, max_content)
        assert got == brute_force_noun_groups(sentence, MAPPING, max_content)

    def test_raising_budget_never_removes_terms(self):
        rng = Random(7)
        for _ in range(100):
            sentence = random_tagged_sentence(rng)
            smaller = extract_noun_groups(sentence, MAPPING, 2)
            larger = extract_noun_groups(sentence, MAPPING, 3)
            assert {t.text for t in smaller} <= {t.text for t in larger}

    def test_four_content_word_span_absent_from_paper_example(self):
        terms = {t.text for t in extract_noun_groups(PAPER_SENTENCE, MAPPING)}
        assert "reprise chirurgicale pour infection du site" not in terms
        assert "reprise chirurgicale pour infection du site opératoire" not in terms


class TestIndexTerms:
    def _doc(self, *sentences) -> nlp.TaggedDoc:
        return [[tt(w, "NOM") for w in sentence.split()] for sentence in sentences]

    def test_presence_and_counts(self):
        docs = {"p1": [self._doc("sepsis"), self._doc("sepsis fievre")]}
        index = index_terms(docs, MAPPING)
        assert index.presence["sepsis"] == {"p1"}
        assert index.counts["sepsis"] == {"p1": 2}

    def test_absent_term_not_indexed(self):
        index = index_terms({"p1": [self._doc("sepsis")]}, MAPPING)
        assert "abcès" not in index.presence

    def test_matches_brute_force_reextraction(self):
        rng = Random(13)
        docs_by_proc = {
            f"p{i}": [
                [random_tagged_sentence(rng, max_len=12) for _ in range(rng.randrange(1, 4))]
                for _ in range(rng.randrange(0, 3))
            ]
            for i in range(8)
        }
        index = index_terms(docs_by_proc, MAPPING)
        presence: dict[str, set[str]] = {}
        counts: dict[str, dict[str, int]] = {}
        for pid, docs in docs_by_proc.items():
            for doc in docs:
                for sentence in doc:
                    for term in brute_force_noun_groups(sentence, MAPPING):
                        presence.setdefault(term.text, set()).add(pid)
                        per = counts.setdefault(term.text, {})
                        per[pid] = per.get(pid, 0) + 1
        assert index.presence == presence
        assert index.counts == counts

    def test_restrict(self):
        docs = {"p1": [self._doc("sepsis")], "p2": [self._doc("sepsis"), self._doc("abcès")]}
        restricted = index_terms(docs, MAPPING).restrict(["p2"])
        assert restricted.presence["sepsis"] == {"p2"}
        assert restricted.procedure_ids == {"p2"}
