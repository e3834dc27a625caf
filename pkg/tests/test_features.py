from __future__ import annotations

from datetime import date, timedelta
from random import Random

import numpy as np
import pytest

from ssi_sentinel.corpus import DocType, EventKind, Procedure
from ssi_sentinel.features import (
    Algo,
    FLAG_COLUMNS,
    FeatureError,
    FeatureMatrix,
    StructuredConfig,
    TermMode,
    assemble,
    count_occurrences,
    structured_flags,
    term_features,
)
from ssi_sentinel.nlp import default_lexicon, lemma_sentences, tag_text

from conftest import make_doc, make_event
from helpers import count_occurrences_oracle

LEX = default_lexicon()


class TestStructuredFlags:
    def test_icd10_match(self, procedure):
        events = [make_event("pat-1", date(2016, 3, 20), EventKind.ICD10, "T81.4")]
        assert structured_flags(events, StructuredConfig())["dx_flag"] == 1

    def test_atc_prefix_match(self, procedure):
        events = [make_event("pat-1", date(2016, 3, 20), EventKind.ATC, "J01CA04")]
        assert structured_flags(events, StructuredConfig())["abx_flag"] == 1

    def test_no_events(self):
        flags = structured_flags([], StructuredConfig())
        assert flags == {"dx_flag": 0, "reprise_flag": 0, "abx_flag": 0, "bacterio_flag": 0}

    def test_ccam_match(self):
        events = [make_event("pat-1", date(2016, 3, 20), EventKind.CCAM, "AFPA001")]
        assert structured_flags(events, StructuredConfig())["reprise_flag"] == 1

    def test_bacterio_containment_folds_case_and_diacritics(self):
        events = [
            make_event("pat-1", date(2016, 3, 20), EventKind.BACTERIOLOGY,
                       "Prelevement PLAIE OPERATOIRE jambe gauche")
        ]
        assert structured_flags(events, StructuredConfig())["bacterio_flag"] == 1

    def test_unrelated_codes_do_not_flag(self):
        events = [
            make_event("pat-1", date(2016, 3, 20), EventKind.ICD10, "M54.5"),
            make_event("pat-1", date(2016, 3, 20), EventKind.ATC, "N02BE01"),
            make_event("pat-1", date(2016, 3, 20), EventKind.BACTERIOLOGY, "Hémoculture"),
        ]
        flags = structured_flags(events, StructuredConfig())
        assert sum(flags.values()) == 0

    def test_empty_config_set_rejected(self):
        with pytest.raises(FeatureError):
            StructuredConfig(icd10_codes=set())


class TestTermCounting:
    def test_binary_and_count(self):
        docs = [
            [["le", "sepsis", "persiste"]],
            [["sepsis", "et", "sepsis"], ["rien"]],
        ]
        assert term_features(docs, ["sepsis"], TermMode.COUNT) == [3]
        assert term_features(docs, ["sepsis"], TermMode.BINARY) == [1]

    def test_absent_term_is_zero(self):
        docs = [[["site", "opératoire"]]]
        assert term_features(docs, ["abcès"], TermMode.COUNT) == [0]
        assert term_features(docs, ["abcès"], TermMode.BINARY) == [0]

    def test_multiword_does_not_cross_sentences(self):
        docs = [[["site"], ["opératoire"]]]
        assert term_features(docs, ["site opératoire"], TermMode.COUNT) == [0]

    def test_overlapping_occurrences_counted(self):
        assert count_occurrences([["site", "site", "site"]], "site site") == 2

    def test_matches_string_scan_oracle(self):
        rng = Random(61)
        vocab = ["site", "sepsis", "plaie", "abcès", "contrôle"]
        for _ in range(200):
            sentences = [
                [rng.choice(vocab) for _ in range(rng.randrange(0, 10))]
                for _ in range(rng.randrange(1, 4))
            ]
            term = " ".join(rng.choice(vocab) for _ in range(rng.randrange(1, 3)))
            assert count_occurrences(sentences, term) == count_occurrences_oracle(sentences, term)

    def test_binary_is_clamped_count(self):
        rng = Random(67)
        vocab = ["a", "b", "c"]
        for _ in range(100):
            docs = [
                [[rng.choice(vocab) for _ in range(rng.randrange(0, 8))]]
                for _ in range(rng.randrange(1, 3))
            ]
            terms = ["a", "b c", "c"]
            counts = term_features(docs, terms, TermMode.COUNT)
            binary = term_features(docs, terms, TermMode.BINARY)
            assert binary == [min(c, 1) for c in counts]


def _tiny_corpus():
    procs = [
        Procedure("p1", "pat1", date(2016, 1, 10), "rachis", True),
        Procedure("p2", "pat2", date(2016, 2, 5), "rachis", False),
    ]
    docs = [
        make_doc("d1", "pat1", date(2016, 1, 20), "On note un écoulement purulent. Sepsis."),
        make_doc("d2", "pat1", date(2016, 9, 1), "Sepsis tardif hors fenêtre."),
        make_doc("d3", "pat2", date(2016, 2, 10), "La cicatrice est calme."),
    ]
    events = [
        make_event("pat1", date(2016, 1, 25), EventKind.ICD10, "T81.4"),
        make_event("pat2", date(2016, 2, 20), EventKind.ATC, "N02BE01"),
    ]
    lemmas = {d.doc_id: lemma_sentences(tag_text(d.text, LEX)) for d in docs}
    return procs, docs, events, lemmas


class TestAssemble:
    def test_algo2_binary_matrix(self):
        procs, docs, events, lemmas = _tiny_corpus()
        matrix = assemble(
            procs, docs, events, Algo.ALGO2,
            term_list=["écoulement purulent", "sepsis", "cicatrice"],
            lemmas_by_doc=lemmas,
        )
        assert matrix.feature_names == [
            "term:écoulement purulent", "term:sepsis", "term:cicatrice",
        ]
        assert matrix.values.tolist() == [[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        assert matrix.labels == [True, False]
        assert set(np.unique(matrix.values)) <= {0.0, 1.0}

    def test_algo1_has_flag_and_count_columns(self):
        procs, docs, events, lemmas = _tiny_corpus()
        terms = [f"t{i}" for i in range(12)]
        matrix = assemble(
            procs, docs, events, Algo.ALGO1, term_list=terms, lemmas_by_doc=lemmas
        )
        assert len(matrix.feature_names) == 16
        assert matrix.feature_names[:4] == list(FLAG_COLUMNS)
        assert matrix.values[0][0] == 1.0  # T81.4 in window

    def test_empty_term_list_rejected(self):
        procs, docs, events, lemmas = _tiny_corpus()
        with pytest.raises(FeatureError):
            assemble(procs, docs, events, Algo.ALGO2, term_list=[], lemmas_by_doc=lemmas)

    def test_documents_outside_window_never_change_matrix(self):
        procs, docs, events, lemmas = _tiny_corpus()
        kwargs = dict(term_list=["sepsis"], lemmas_by_doc=lemmas)
        with_late = assemble(procs, docs, events, Algo.ALGO2, **kwargs)
        without_late = assemble(
            procs, [d for d in docs if d.doc_id != "d2"], events, Algo.ALGO2, **kwargs
        )
        assert np.array_equal(with_late.values, without_late.values)

    def test_term_permutation_permutes_columns(self):
        procs, docs, events, lemmas = _tiny_corpus()
        terms = ["sepsis", "cicatrice", "écoulement purulent"]
        forward = assemble(procs, docs, events, Algo.ALGO2, term_list=terms, lemmas_by_doc=lemmas)
        backward = assemble(
            procs, docs, events, Algo.ALGO2, term_list=terms[::-1], lemmas_by_doc=lemmas
        )
        assert backward.feature_names == forward.feature_names[::-1]
        assert np.array_equal(backward.values, forward.values[:, ::-1])

    def test_single_procedure_without_data_gives_zero_row(self):
        proc = Procedure("p9", "pat9", date(2016, 5, 1))
        matrix = assemble([proc], [], [], Algo.ALGO2, term_list=["sepsis"], lemmas_by_doc={})
        assert matrix.values.tolist() == [[0.0]]
        assert matrix.labels == [None]


class TestFeatureMatrixIO:
    def test_csv_round_trip(self, tmp_path):
        procs, docs, events, lemmas = _tiny_corpus()
        matrix = assemble(
            procs, docs, events, Algo.ALGO1,
            term_list=["sepsis", "écoulement purulent"],
            lemmas_by_doc=lemmas,
        )
        path = tmp_path / "features.csv"
        matrix.to_csv(path)
        loaded = FeatureMatrix.from_csv(path)
        assert loaded.procedure_ids == matrix.procedure_ids
        assert loaded.feature_names == matrix.feature_names
        assert np.array_equal(loaded.values, matrix.values)
        assert loaded.labels == matrix.labels

    def test_unlabeled_survives_round_trip(self, tmp_path):
        matrix = FeatureMatrix(["p1"], ["f"], np.array([[2.0]]), [None])
        matrix.to_csv(tmp_path / "m.csv")
        assert FeatureMatrix.from_csv(tmp_path / "m.csv").labels == [None]

    def test_duplicate_feature_names_rejected(self):
        with pytest.raises(FeatureError):
            FeatureMatrix(["p1"], ["f", "f"], np.zeros((1, 2)), [None])
