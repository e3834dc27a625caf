"""Prediction persistence, evidence snippets and the review HTTP API.

Flagged cases are stored with the term and coded-event evidence that
triggered them, reviewers confirm or infirm each case, and the corrected
labels can be exported as a corpus file to close the retraining loop.
Persistence is an append-only JSONL event log replayed at startup, so the
surveillance record stays auditable.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .corpus import CareEvent, ClinicalDocument, EventKind, Procedure, collect_window
from .features import StructuredConfig
from .models import Prediction
from .nlp import TaggedDoc, fold_diacritics

SNIPPET_RADIUS = 80

DECISIONS = ("confirmed_ssi", "rejected", "confirmed_superficial")
_EVENT_SOURCE = {
    EventKind.ICD10: "icd10",
    EventKind.CCAM: "ccam",
    EventKind.ATC: "atc",
    EventKind.BACTERIOLOGY: "bacterio",
}


class StoreError(ValueError):
    pass


class UnknownRecordError(StoreError):
    pass


@dataclass(frozen=True)
class Evidence:
    source: str  # term | icd10 | ccam | atc | bacterio
    detail: str
    snippet: str | None = None

    def to_dict(self) -> dict:
        return {"source": self.source, "detail": self.detail, "snippet": self.snippet}


@dataclass(frozen=True)
class ReviewLabel:
    procedure_id: str
    reviewer: str
    decision: str
    timestamp: str
    comment: str | None = None

    def __post_init__(self) -> None:
        if self.decision not in DECISIONS:
            raise StoreError(f"invalid decision {self.decision!r}")

    def to_dict(self) -> dict:
        return {
            "procedure_id": self.procedure_id,
            "reviewer": self.reviewer,
            "decision": self.decision,
            "timestamp": self.timestamp,
            "comment": self.comment,
        }


@dataclass
class PredictionRecord:
    procedure_id: str
    probability: float
    flagged: bool
    evidence: list[Evidence] = field(default_factory=list)
    status: str = "pending"
    history: list[ReviewLabel] = field(default_factory=list)
    version: int = 0

    def to_dict(self, with_evidence: bool = True) -> dict:
        out = {
            "procedure_id": self.procedure_id,
            "probability": self.probability,
            "flagged": self.flagged,
            "status": self.status,
            "version": self.version,
            "history": [label.to_dict() for label in self.history],
        }
        if with_evidence:
            out["evidence"] = [e.to_dict() for e in self.evidence]
        else:
            out["evidence_count"] = len(self.evidence)
        return out


# --- evidence extraction ----------------------------------------------------


def _term_snippet(doc_text: str, surfaces: Sequence[str], fallback: str) -> str:
    """±80 characters of raw text around the matched surface sequence."""
    pattern = r"\s+".join(re.escape(s) for s in surfaces)
    match = re.search(pattern, doc_text, flags=re.IGNORECASE)
    if match is None:
        return fallback[: 2 * SNIPPET_RADIUS]
    start = max(0, match.start() - SNIPPET_RADIUS)
    end = min(len(doc_text), match.end() + SNIPPET_RADIUS)
    prefix = "…" if start > 0 else ""
    suffix = "…" if end < len(doc_text) else ""
    return prefix + doc_text[start:end] + suffix


def _find_term(tagged: TaggedDoc, words: Sequence[str]) -> list[str] | None:
    """Surfaces of the first lemma-stream occurrence, or None."""
    k = len(words)
    for sentence in tagged:
        lemmas = [tok.lemma.lower() for tok in sentence]
        for i in range(len(lemmas) - k + 1):
            if lemmas[i : i + k] == list(words):
                return [tok.surface for tok in sentence[i : i + k]]
    return None


def build_evidence(
    procedure: Procedure,
    documents: Sequence[ClinicalDocument],
    events: Sequence[CareEvent],
    tagged_by_doc: Mapping[str, TaggedDoc],
    term_list: Sequence[str],
    structured_config: StructuredConfig | None = None,
    window_days: int = 90,
    include_day0: bool = True,
) -> list[Evidence]:
    """Every matched term (first occurrence per document) and matched code."""
    docs, evs = collect_window(procedure, documents, events, window_days, include_day0)
    evidence: list[Evidence] = []
    for term in term_list:
        words = term.split()
        for doc in docs:
            surfaces = _find_term(tagged_by_doc[doc.doc_id], words)
            if surfaces is None:
                continue
            evidence.append(
                Evidence(source="term", detail=term, snippet=_term_snippet(doc.text, surfaces, doc.text))
            )
    config = structured_config or StructuredConfig()
    protocols = [fold_diacritics(p) for p in config.bacterio_protocols]
    for event in evs:
        matched = False
        if event.kind is EventKind.ICD10:
            matched = event.code.upper() in {c.upper() for c in config.icd10_codes}
        elif event.kind is EventKind.CCAM:
            matched = event.code.upper() in {c.upper() for c in config.ccam_codes}
        elif event.kind is EventKind.ATC:
            matched = any(event.code.upper().startswith(p.upper()) for p in config.atc_prefixes)
        elif event.kind is EventKind.BACTERIOLOGY:
            matched = any(p in fold_diacritics(event.code) for p in protocols)
        if matched:
            evidence.append(Evidence(source=_EVENT_SOURCE[event.kind], detail=event.code))
    return evidence


# --- store -------------------------------------------------------------------


class PredictionStore:
    """In-memory record map backed by an append-only JSONL event log."""

    def __init__(self, log_path: str | Path | None = None):
        self._records: dict[str, PredictionRecord] = {}
        self._lock = threading.Lock()
        self._log_path = Path(log_path) if log_path is not None else None
        if self._log_path is not None and self._log_path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self._log_path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    event = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise StoreError(f"{self._log_path}:{lineno}: corrupt log entry") from exc
                self._apply(event)

    def _apply(self, event: dict) -> PredictionRecord:
        if event["type"] == "prediction":
            record = PredictionRecord(
                procedure_id=event["procedure_id"],
                probability=event["probability"],
                flagged=True,
                evidence=[Evidence(**e) for e in event["evidence"]],
            )
            self._records[record.procedure_id] = record
            return record
        if event["type"] == "label":
            label = ReviewLabel(
                procedure_id=event["procedure_id"],
                reviewer=event["reviewer"],
                decision=event["decision"],
                timestamp=event["timestamp"],
                comment=event.get("comment"),
            )
            record = self._records.get(label.procedure_id)
            if record is None:
                raise UnknownRecordError(f"unknown procedure {label.procedure_id!r}")
            record.history.append(label)
            record.status = label.decision
            record.version += 1
            return record
        raise StoreError(f"unknown log event type {event.get('type')!r}")

    def _append_log(self, event: dict) -> None:
        if self._log_path is None:
            return
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False, sort_keys=True) + "\n")

    def ingest(
        self,
        predictions: Sequence[Prediction],
        evidence_by_id: Mapping[str, Sequence[Evidence]],
        known_procedures: set[str] | None = None,
    ) -> int:
        """Store flagged predictions with their evidence; returns the count."""
        stored = 0
        with self._lock:
            for pred in predictions:
                if known_procedures is not None and pred.procedure_id not in known_procedures:
                    raise UnknownRecordError(f"unknown procedure {pred.procedure_id!r}")
                if not pred.flagged:
                    continue
                event = {
                    "type": "prediction",
                    "procedure_id": pred.procedure_id,
                    "probability": pred.probability,
                    "evidence": [e.to_dict() for e in evidence_by_id.get(pred.procedure_id, [])],
                }
                self._apply(event)
                self._append_log(event)
                stored += 1
        return stored

    def record_label(self, procedure_id: str, label: ReviewLabel) -> PredictionRecord:
        """Append to the record's audit trail; the last decision wins."""
        with self._lock:
            if procedure_id not in self._records:
                raise UnknownRecordError(f"unknown procedure {procedure_id!r}")
            event = {"type": "label", **label.to_dict()}
            record = self._apply(event)
            self._append_log(event)
            return record

    def get(self, procedure_id: str) -> PredictionRecord:
        with self._lock:
            if procedure_id not in self._records:
                raise UnknownRecordError(f"unknown procedure {procedure_id!r}")
            return self._records[procedure_id]

    def records(self, status: str | None = None) -> list[PredictionRecord]:
        """Records sorted by probability descending (id breaks ties)."""
        with self._lock:
            records = list(self._records.values())
        if status is not None:
            records = [r for r in records if r.status == status]
        return sorted(records, key=lambda r: (-r.probability, r.procedure_id))

    def export_gold(self, procedures: Sequence[Procedure]) -> list[Procedure]:
        """Procedures with reviewer-corrected gold labels.

        Confirmations (deep or superficial) set the label true, rejections
        false; unreviewed procedures keep their original label.
        """
        with self._lock:
            decisions = {
                pid: rec.status for pid, rec in self._records.items() if rec.status != "pending"
            }
        corrected = []
        for proc in procedures:
            decision = decisions.get(proc.procedure_id)
            if decision is None:
                corrected.append(proc)
                continue
            label = decision in ("confirmed_ssi", "confirmed_superficial")
            corrected.append(
                Procedure(
                    procedure_id=proc.procedure_id,
                    patient_id=proc.patient_id,
                    intervention_date=proc.intervention_date,
                    specialty=proc.specialty,
                    gold_label=label,
                )
            )
        return corrected


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- HTTP API ----------------------------------------------------------------


def create_app(
    store: PredictionStore,
    procedures: Sequence[Procedure] = (),
    report_path: str | Path | None = None,
    ui_dir: str | Path | None = None,
):
    """FastAPI application over a prediction store.

    `procedures` is needed for /export/gold; `report_path` backs /metrics.
    """
    app = FastAPI(title="ssi-sentinel review service")

    @app.get("/predictions")
    def list_predictions(status: str | None = None):
        return [r.to_dict(with_evidence=False) for r in store.records(status)]

    @app.get("/predictions/{procedure_id}")
    def get_prediction(procedure_id: str):
        try:
            return store.get(procedure_id).to_dict()
        except UnknownRecordError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/predictions/{procedure_id}/label")
    async def post_label(procedure_id: str, request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError as exc:
            raise HTTPException(status_code=400, detail="body must be JSON") from exc
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        reviewer = body.get("reviewer")
        decision = body.get("decision")
        if not reviewer or decision not in DECISIONS:
            raise HTTPException(
                status_code=400,
                detail=f"required: reviewer and decision in {list(DECISIONS)}",
            )
        expected = body.get("expected_version")
        if expected is not None:
            try:
                current = store.get(procedure_id).version
            except UnknownRecordError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            if current != expected:
                raise HTTPException(status_code=409, detail="record changed since read")
        label = ReviewLabel(
            procedure_id=procedure_id,
            reviewer=str(reviewer),
            decision=str(decision),
            timestamp=now_iso(),
            comment=body.get("comment"),
        )
        try:
            return store.record_label(procedure_id, label).to_dict()
        except UnknownRecordError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/export/gold")
    def export_gold():
        corrected = store.export_gold(list(procedures))
        lines = [
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
            for p in corrected
        ]
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""), media_type="application/jsonl")

    @app.get("/metrics")
    def metrics():
        if report_path is None or not Path(report_path).exists():
            raise HTTPException(status_code=404, detail="no report available")
        with open(report_path, encoding="utf-8") as fh:
            return JSONResponse(json.load(fh))

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
