from __future__ import annotations

from datetime import date
from random import Random

import pytest

from ssi_sentinel.corpus import Procedure
from ssi_sentinel.evaluation import (
    ConfusionMatrix,
    EvaluationError,
    build_report,
    confusion,
    metrics,
    pct,
    render_markdown,
    temporal_split,
    write_report,
)
from ssi_sentinel.models import Prediction


class TestConfusion:
    def test_perfect_predictor(self):
        cm = confusion([True, False], [True, False])
        assert (cm.fp, cm.fn) == (0, 0)

    def test_all_flagged(self):
        flags = [True] * 2133
        gold = [True] * 22 + [False] * 2111
        cm = confusion(flags, gold)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (22, 2111, 0, 0)

    def test_unlabeled_rejected(self):
        with pytest.raises(EvaluationError, match="gold"):
            confusion([True], [None])

    def test_length_mismatch_rejected(self):
        with pytest.raises(EvaluationError):
            confusion([True], [True, False])

    def test_matches_recount_oracle(self):
        rng = Random(71)
        for _ in range(100):
            n = rng.randrange(1, 60)
            flags = [rng.random() < 0.5 for _ in range(n)]
            gold = [rng.random() < 0.5 for _ in range(n)]
            cm = confusion(flags, gold)
            pairs = list(zip(flags, gold))
            assert cm == ConfusionMatrix(
                tp=pairs.count((True, True)),
                fp=pairs.count((True, False)),
                fn=pairs.count((False, True)),
                tn=pairs.count((False, False)),
            )
            assert cm.total == n

    def test_polarity_swap_maps_cells(self):
        rng = Random(73)
        for _ in range(50):
            n = rng.randrange(1, 40)
            flags = [rng.random() < 0.5 for _ in range(n)]
            gold = [rng.random() < 0.5 for _ in range(n)]
            cm = confusion(flags, gold)
            swapped = confusion([not f for f in flags], gold)
            assert (swapped.tp, swapped.fp, swapped.fn, swapped.tn) == (
                cm.fn, cm.tn, cm.tp, cm.fp,
            )


class TestMetrics:
    def test_published_full_data_training_table(self):
        m = metrics(ConfusionMatrix(tp=22, fp=20, fn=0, tn=2091))
        assert pct(m.sensitivity) == 100.0
        assert pct(m.specificity) == 99.05
        assert pct(m.ppv) == 52.38
        assert pct(m.accuracy) == 99.06

    def test_published_heldout_table(self):
        m = metrics(ConfusionMatrix(tp=2, fp=4, fn=0, tn=757))
        assert pct(m.ppv) == 33.33

    def test_published_forest_precision(self):
        m = metrics(ConfusionMatrix(tp=22, fp=87, fn=0, tn=0))
        assert pct(m.ppv) == 20.18

    def test_text_only_training_table(self):
        m = metrics(ConfusionMatrix(tp=22, fp=26, fn=0, tn=2085))
        assert pct(m.ppv) == 45.83

    def test_undefined_metrics_are_none(self):
        m = metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=5))
        assert m.sensitivity is None and m.ppv is None
        assert m.specificity == 1.0
        assert pct(None) is None

    def test_half_up_rounding(self):
        assert pct(0.10125) == 10.13  # 10.125 rounds up, not banker's


class TestTemporalSplit:
    def _procs(self):
        rng = Random(79)
        out = []
        for i in range(50):
            year = rng.choice([2014, 2015, 2016, 2017])
            out.append(Procedure(f"p{i}", f"pat{i}", date(year, 3, 1), "rachis", False))
        return out

    def test_disjoint_cover(self):
        procs = self._procs()
        train, test = temporal_split(procs, {2015, 2016}, {2017})
        assert {p.year for p in train} <= {2015, 2016}
        assert {p.year for p in test} == {2017}
        assert set(p.procedure_id for p in train).isdisjoint(p.procedure_id for p in test)

    def test_overlap_rejected(self):
        with pytest.raises(EvaluationError, match="2016"):
            temporal_split(self._procs(), {2015, 2016}, {2016})

    def test_empty_test_year_warns(self, caplog):
        with caplog.at_level("WARNING"):
            _, test = temporal_split(self._procs(), {2015}, {2030})
        assert test == []
        assert any("empty test set" in r.message for r in caplog.records)

    def test_order_independence(self):
        procs = self._procs()
        shuffled = list(procs)
        Random(5).shuffle(shuffled)
        a = temporal_split(procs, {2015, 2016}, {2017})
        b = temporal_split(shuffled, {2015, 2016}, {2017})
        assert {p.procedure_id for p in a[0]} == {p.procedure_id for p in b[0]}
        assert {p.procedure_id for p in a[1]} == {p.procedure_id for p in b[1]}


class TestReport:
    def test_minimal_report_has_all_cells_and_metrics(self):
        report = build_report(ConfusionMatrix(tp=1, fp=2, fn=3, tn=4))
        assert set(report["confusion"]) == {"tp", "fp", "fn", "tn", "total"}
        assert set(report["metrics"]) == {
            "sensitivity_pct", "specificity_pct", "ppv_pct", "accuracy_pct",
        }

    def test_published_margins_rendered(self):
        report = build_report(ConfusionMatrix(tp=22, fp=20, fn=0, tn=2091))
        md = render_markdown(report)
        assert "| T+ | 22 | 20 | 42 |" in md
        assert "| T- | 0 | 2091 | 2091 |" in md
        assert "| total | 22 | 2111 | 2133 |" in md

    def test_markdown_agrees_with_json(self, tmp_path):
        cm = ConfusionMatrix(tp=22, fp=20, fn=0, tn=2091)
        report = build_report(cm)
        write_report(report, tmp_path / "report.json", tmp_path / "report.md")
        md = (tmp_path / "report.md").read_text("utf-8")
        assert f"specificity: {report['metrics']['specificity_pct']:.2f} %" in md
        assert f"PPV: {report['metrics']['ppv_pct']:.2f} %" in md

    def test_undefined_metric_rendered_na(self):
        md = render_markdown(build_report(ConfusionMatrix(tp=0, fp=0, fn=0, tn=3)))
        assert "sensitivity: n/a" in md

    def test_false_positive_drilldown(self):
        predictions = [
            Prediction("p1", 0.9, True),
            Prediction("p2", 0.8, True),
            Prediction("p3", 0.2, False),
        ]
        gold = {"p1": True, "p2": False, "p3": False}
        report = build_report(
            ConfusionMatrix(tp=1, fp=1, fn=0, tn=1), predictions=predictions, gold=gold
        )
        assert report["false_positives"] == [{"procedure_id": "p2", "probability": 0.8}]
