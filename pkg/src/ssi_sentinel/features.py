"""Per-procedure feature assembly.

Algorithm 1 combines four structured-event flags with per-term occurrence
counts; Algorithm 2 is binary term presence only. Term matching happens on
the lemmatized token stream as an exact contiguous-sequence match.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CareEvent, ClinicalDocument, EventKind, Procedure, collect_window
from .nlp import fold_diacritics

FLAG_COLUMNS = ("dx_flag", "reprise_flag", "abx_flag", "bacterio_flag")

# Shipped stand-in for the expert-curated free-text term list of the
# structured+text algorithm (the published method does not enumerate it).
DEFAULT_EXPERT_TERMS = (
    "infection",
    "sepsis",
    "écoulement purulent",
    "désunion",
    "pus",
    "abcès",
    "reprise chirurgicale",
    "lavage",
    "antibiothérapie",
    "staphylocoque",
    "fistule",
    "collection",
)


class FeatureError(ValueError):
    pass


class Algo(str, Enum):
    ALGO1 = "algo1"
    ALGO2 = "algo2"


class TermMode(str, Enum):
    BINARY = "binary"
    COUNT = "count"


@dataclass
class StructuredConfig:
    icd10_codes: set[str] = field(
        default_factory=lambda: {"T81.4", "T84.5", "T84.6", "T84.7"}
    )
    ccam_codes: set[str] = field(default_factory=lambda: {"AFPA001"})
    atc_prefixes: set[str] = field(default_factory=lambda: {"J01", "J04"})
    bacterio_protocols: set[str] = field(
        default_factory=lambda: {
            "plaie opératoire",
            "pus profond",
            "matériel orthopédique",
            "biopsie ostéo-articulaire",
            "liquide de lame",
            "redon",
        }
    )

    def __post_init__(self) -> None:
        if not (self.icd10_codes and self.ccam_codes and self.atc_prefixes and self.bacterio_protocols):
            raise FeatureError("structured config sets must be non-empty")

    @classmethod
    def from_json(cls, path: str | Path) -> "StructuredConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            icd10_codes=set(raw.get("icd10_codes", [])) or cls().icd10_codes,
            ccam_codes=set(raw.get("ccam_codes", [])) or cls().ccam_codes,
            atc_prefixes=set(raw.get("atc_prefixes", [])) or cls().atc_prefixes,
            bacterio_protocols=set(raw.get("bacterio_protocols", []))
            or cls().bacterio_protocols,
        )

    def to_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "icd10_codes": sorted(self.icd10_codes),
                    "ccam_codes": sorted(self.ccam_codes),
                    "atc_prefixes": sorted(self.atc_prefixes),
                    "bacterio_protocols": sorted(self.bacterio_protocols),
                },
                fh,
                ensure_ascii=False,
                indent=2,
            )
            fh.write("\n")


def structured_flags(
    events_in_window: Sequence[CareEvent], config: StructuredConfig
) -> dict[str, int]:
    """Four binary flags from coded events already filtered to the window."""
    dx = reprise = abx = bacterio = 0
    icd10 = {c.upper() for c in config.icd10_codes}
    ccam = {c.upper() for c in config.ccam_codes}
    protocols = [fold_diacritics(p) for p in config.bacterio_protocols]
    for event in events_in_window:
        if event.kind is EventKind.ICD10 and event.code.upper() in icd10:
            dx = 1
        elif event.kind is EventKind.CCAM and event.code.upper() in ccam:
            reprise = 1
        elif event.kind is EventKind.ATC and any(
            event.code.upper().startswith(p.upper()) for p in config.atc_prefixes
        ):
            abx = 1
        elif event.kind is EventKind.BACTERIOLOGY:
            folded = fold_diacritics(event.code)
            if any(p in folded for p in protocols):
                bacterio = 1
    return {"dx_flag": dx, "reprise_flag": reprise, "abx_flag": abx, "bacterio_flag": bacterio}


def count_occurrences(lemma_sentences: Sequence[Sequence[str]], term: str) -> int:
    """Occurrences of a term's lemma sequence, counting every start position.

    Matches never cross sentence boundaries.
    """
    words = term.split()
    k = len(words)
    if k == 0:
        return 0
    total = 0
    for sentence in lemma_sentences:
        for i in range(len(sentence) - k + 1):
            if list(sentence[i : i + k]) == words:
                total += 1
    return total


def term_features(
    doc_lemmas: Sequence[Sequence[Sequence[str]]],
    terms: Sequence[str],
    mode: TermMode,
) -> list[int]:
    """Per-term vector over a procedure's window documents.

    `doc_lemmas` holds one lemma-sentence list per document; counts are
    summed across documents, binary is presence anywhere in the window.
    """
    vector = []
    for term in terms:
        count = sum(count_occurrences(sentences, term) for sentences in doc_lemmas)
        vector.append(min(count, 1) if mode is TermMode.BINARY else count)
    return vector


@dataclass
class FeatureMatrix:
    procedure_ids: list[str]
    feature_names: list[str]
    values: np.ndarray  # shape (n_procedures, n_features)
    labels: list[bool | None]
    config_hash: str | None = None

    def __post_init__(self) -> None:
        if len(set(self.feature_names)) != len(self.feature_names):
            raise FeatureError("feature names must be unique")
        if self.values.shape != (len(self.procedure_ids), len(self.feature_names)):
            raise FeatureError("value shape does not match rows/columns")

    def label_array(self) -> np.ndarray:
        if any(lab is None for lab in self.labels):
            raise FeatureError("matrix contains unlabeled procedures")
        return np.array([1.0 if lab else 0.0 for lab in self.labels])

    def select_rows(self, procedure_ids: Sequence[str]) -> "FeatureMatrix":
        pos = {pid: i for i, pid in enumerate(self.procedure_ids)}
        idx = [pos[pid] for pid in procedure_ids]
        return FeatureMatrix(
            procedure_ids=list(procedure_ids),
            feature_names=list(self.feature_names),
            values=self.values[idx, :].copy(),
            labels=[self.labels[i] for i in idx],
            config_hash=self.config_hash,
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["procedure_id", *self.feature_names, "gold_label"])
            for i, pid in enumerate(self.procedure_ids):
                row = [pid]
                for v in self.values[i]:
                    row.append(str(int(v)) if float(v).is_integer() else repr(float(v)))
                label = self.labels[i]
                row.append("" if label is None else ("true" if label else "false"))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:1] != ["procedure_id"] or header[-1:] != ["gold_label"]:
                raise FeatureError(f"{path}: unexpected feature CSV header")
            names = header[1:-1]
            ids, rows, labels = [], [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:-1]])
                labels.append(None if row[-1] == "" else row[-1] == "true")
        values = np.array(rows, dtype=float) if rows else np.zeros((0, len(names)))
        return cls(procedure_ids=ids, feature_names=names, values=values, labels=labels)


def _config_hash(parts: Sequence[object]) -> str:
    digest = hashlib.sha256(json.dumps(parts, ensure_ascii=False, default=str).encode())
    return digest.hexdigest()


def assemble(
    procedures: Sequence[Procedure],
    documents: Sequence[ClinicalDocument],
    events: Sequence[CareEvent],
    algo: Algo,
    *,
    term_list: Sequence[str],
    lemmas_by_doc: Mapping[str, Sequence[Sequence[str]]],
    structured_config: StructuredConfig | None = None,
    window_days: int = 90,
    include_day0: bool = True,
) -> FeatureMatrix:
    """Assemble the feature matrix, one row per procedure in input order.

    `lemmas_by_doc` maps doc_id to that document's lemma sentences.
    """
    if not term_list:
        raise FeatureError("term list must not be empty")
    if algo is Algo.ALGO1:
        structured_config = structured_config or StructuredConfig()
        names = [*FLAG_COLUMNS, *(f"term:{t}" for t in term_list)]
        mode = TermMode.COUNT
    else:
        names = [f"term:{t}" for t in term_list]
        mode = TermMode.BINARY

    rows = []
    labels: list[bool | None] = []
    for proc in procedures:
        docs, evs = collect_window(proc, documents, events, window_days, include_day0)
        doc_lemmas = [lemmas_by_doc[d.doc_id] for d in docs]
        term_vec = term_features(doc_lemmas, term_list, mode)
        if algo is Algo.ALGO1:
            flags = structured_flags(evs, structured_config)
            rows.append([flags[c] for c in FLAG_COLUMNS] + term_vec)
        else:
            rows.append(term_vec)
        labels.append(proc.gold_label)

    values = np.array(rows, dtype=float) if rows else np.zeros((0, len(names)))
    cfg_hash = _config_hash(
        [
            algo.value,
            list(term_list),
            window_days,
            include_day0,
            sorted(structured_config.icd10_codes) if structured_config else None,
            sorted(structured_config.ccam_codes) if structured_config else None,
            sorted(structured_config.atc_prefixes) if structured_config else None,
            sorted(structured_config.bacterio_protocols) if structured_config else None,
        ]
    )
    return FeatureMatrix(
        procedure_ids=[p.procedure_id for p in procedures],
        feature_names=names,
        values=values,
        labels=labels,
        config_hash=cfg_hash,
    )
