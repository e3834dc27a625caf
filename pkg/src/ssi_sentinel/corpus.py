"""Data model and JSONL ingestion for procedures, documents and care events.

The surveillance unit is the surgical procedure. Free-text documents and
coded care events are linked to a procedure through the patient id and a
post-operative surveillance window (90 days by default).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class CorpusError(ValueError):
    """Malformed or inconsistent corpus file."""


class DocType(str, Enum):
    OPERATIVE_REPORT = "operative_report"
    CONSULTATION = "consultation"
    HOSPITALIZATION = "hospitalization"
    OTHER = "other"


class EventKind(str, Enum):
    ICD10 = "icd10"
    CCAM = "ccam"
    ATC = "atc_administration"
    BACTERIOLOGY = "bacteriology_protocol"


@dataclass(frozen=True)
class Procedure:
    """A surgical act; `gold_label` is the declared SSI status (None = unlabeled)."""

    procedure_id: str
    patient_id: str
    intervention_date: date
    specialty: str = ""
    gold_label: bool | None = None

    @property
    def year(self) -> int:
        return self.intervention_date.year


@dataclass(frozen=True)
class ClinicalDocument:
    doc_id: str
    patient_id: str
    date: date
    doc_type: DocType
    text: str


@dataclass(frozen=True)
class CareEvent:
    patient_id: str
    date: date
    kind: EventKind
    code: str


@dataclass(frozen=True)
class SurveillanceWindow:
    """Post-operative period in which evidence counts for a procedure."""

    start: date
    length_days: int = 90

    def __post_init__(self) -> None:
        if self.length_days <= 0:
            raise ValueError("window length must be positive")

    @property
    def end(self) -> date:
        return self.start + timedelta(days=self.length_days)


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _parse_date(value: object, where: str) -> date:
    try:
        return date.fromisoformat(str(value))
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"{where}: invalid date {value!r}") from exc


def _require(obj: dict, key: str, where: str) -> object:
    if key not in obj or obj[key] in (None, ""):
        raise CorpusError(f"{where}: missing field {key!r}")
    return obj[key]


def load_procedures(path: str | Path) -> list[Procedure]:
    """Load procedures.jsonl, rejecting duplicate procedure ids."""
    path = Path(path)
    procedures: list[Procedure] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        pid = str(_require(obj, "procedure_id", where))
        if pid in seen:
            raise CorpusError(f"{where}: duplicate procedure_id {pid!r}")
        seen.add(pid)
        label = obj.get("gold_label")
        if label is not None and not isinstance(label, bool):
            raise CorpusError(f"{where}: gold_label must be true/false/null")
        procedures.append(
            Procedure(
                procedure_id=pid,
                patient_id=str(_require(obj, "patient_id", where)),
                intervention_date=_parse_date(_require(obj, "intervention_date", where), where),
                specialty=str(obj.get("specialty", "")),
                gold_label=label,
            )
        )
    return procedures


def load_documents(path: str | Path) -> list[ClinicalDocument]:
    """Load documents.jsonl. Text must be non-empty."""
    path = Path(path)
    documents = []
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        raw_type = str(obj.get("doc_type", "other"))
        try:
            doc_type = DocType(raw_type)
        except ValueError as exc:
            raise CorpusError(f"{where}: unknown doc_type {raw_type!r}") from exc
        documents.append(
            ClinicalDocument(
                doc_id=str(_require(obj, "doc_id", where)),
                patient_id=str(_require(obj, "patient_id", where)),
                date=_parse_date(_require(obj, "date", where), where),
                doc_type=doc_type,
                text=str(_require(obj, "text", where)),
            )
        )
    return documents


def load_events(path: str | Path) -> list[CareEvent]:
    """Load events.jsonl. The kind determines the code vocabulary."""
    path = Path(path)
    events = []
    for lineno, obj in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        raw_kind = str(_require(obj, "kind", where))
        try:
            kind = EventKind(raw_kind)
        except ValueError as exc:
            raise CorpusError(f"{where}: unknown event kind {raw_kind!r}") from exc
        events.append(
            CareEvent(
                patient_id=str(_require(obj, "patient_id", where)),
                date=_parse_date(_require(obj, "date", where), where),
                kind=kind,
                code=str(_require(obj, "code", where)),
            )
        )
    return events


def dump_procedures(procedures: Iterable[Procedure], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in procedures:
            fh.write(
                json.dumps(
                    {
                        "procedure_id": p.procedure_id,
                        "patient_id": p.patient_id,
                        "intervention_date": p.intervention_date.isoformat(),
                        "specialty": p.specialty,
                        "gold_label": p.gold_label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def dump_documents(documents: Iterable[ClinicalDocument], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in documents:
            fh.write(
                json.dumps(
                    {
                        "doc_id": d.doc_id,
                        "patient_id": d.patient_id,
                        "date": d.date.isoformat(),
                        "doc_type": d.doc_type.value,
                        "text": d.text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def dump_events(events: Iterable[CareEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(
                json.dumps(
                    {
                        "patient_id": e.patient_id,
                        "date": e.date.isoformat(),
                        "kind": e.kind.value,
                        "code": e.code,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def in_window(
    item_date: date,
    procedure: Procedure,
    length_days: int = 90,
    include_day0: bool = True,
) -> bool:
    """True iff the item falls inside the procedure's surveillance window.

    Both bounds are inclusive; `include_day0` controls whether the
    intervention day itself counts.
    """
    start = procedure.intervention_date
    if not include_day0:
        start = start + timedelta(days=1)
    return start <= item_date <= procedure.intervention_date + timedelta(days=length_days)


def collect_window(
    procedure: Procedure,
    documents: Sequence[ClinicalDocument],
    events: Sequence[CareEvent],
    length_days: int = 90,
    include_day0: bool = True,
) -> tuple[list[ClinicalDocument], list[CareEvent]]:
    """Items of the procedure's patient that fall inside its window.

    Overlapping windows of two procedures on one patient both receive
    shared items; there is no exclusive assignment.
    """
    docs = [
        d
        for d in documents
        if d.patient_id == procedure.patient_id
        and in_window(d.date, procedure, length_days, include_day0)
    ]
    evs = [
        e
        for e in events
        if e.patient_id == procedure.patient_id
        and in_window(e.date, procedure, length_days, include_day0)
    ]
    return docs, evs
