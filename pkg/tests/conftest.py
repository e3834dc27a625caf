from __future__ import annotations

from datetime import date

import pytest

from ssi_sentinel.corpus import CareEvent, ClinicalDocument, DocType, EventKind, Procedure


@pytest.fixture
def procedure():
    return Procedure(
        procedure_id="proc-1",
        patient_id="pat-1",
        intervention_date=date(2016, 3, 10),
        specialty="rachis",
        gold_label=True,
    )


def make_doc(doc_id, patient_id, when, text, doc_type=DocType.CONSULTATION):
    return ClinicalDocument(doc_id=doc_id, patient_id=patient_id, date=when, doc_type=doc_type, text=text)


def make_event(patient_id, when, kind=EventKind.ICD10, code="T81.4"):
    return CareEvent(patient_id=patient_id, date=when, kind=kind, code=code)
