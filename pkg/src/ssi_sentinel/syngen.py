"""Seeded synthetic corpus generator.

Stands in for the (unavailable) clinical dataset in end-to-end tests.
Positive procedures emit planted discriminative terms and suggestive coded
events inside their 90-day window; negatives mostly emit decoys and
filler. Text is template-generated so every planted term sits in a
noun-group context the extraction pipeline can actually recover, with the
term bounded by verbs, determiners or punctuation so templates do not leak
super-terms into the candidate pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from random import Random

from .corpus import (
    CareEvent,
    ClinicalDocument,
    DocType,
    EventKind,
    Procedure,
    dump_documents,
    dump_events,
    dump_procedures,
)


@dataclass(frozen=True)
class PlantedTerm:
    term: str
    pos_prob: float = 0.9
    neg_prob: float = 0.02
    in_reference: bool = True


DEFAULT_PLANTED = (
    PlantedTerm("sepsis"),
    PlantedTerm("écoulement purulent"),
    PlantedTerm("lavage"),
    PlantedTerm("parage"),
    PlantedTerm("antibiothérapie"),
    PlantedTerm("staphylocoque doré"),
    PlantedTerm("abcès"),
    PlantedTerm("fistule"),
    PlantedTerm("désunion de la cicatrice"),
    PlantedTerm("pus profond"),
)

# High odds ratio but too site-specific to appear in a reference book;
# the reference filter is expected to drop it.
DEFAULT_SITE_SPECIFIC = (PlantedTerm("code afpa001", 0.9, 0.0, in_reference=False),)

DEFAULT_DECOYS = (
    "douleur lombaire",
    "arthrodèse",
    "scoliose",
    "corset",
    "kinésithérapie",
    "antalgique",
    "vertèbre lombaire",
    "consultation",
    "pansement",
    "rééducation",
)

_FEMININE = {"désunion de la cicatrice", "fistule", "antibiothérapie", "consultation", "rééducation"}

# Term slots are preceded by a verb, determiner or colon and followed by a
# non-content token, so no template word can extend the planted span.
_TERM_TEMPLATES = (
    "On note {art} {term}.",
    "Le patient présente {art} {term}.",
    "Il persiste {art} {term}.",
    "La consultation retrouve {art} {term}.",
    "{Term} constaté ce jour.",
)

_FILLERS = (
    "Le patient est revu en consultation de contrôle.",
    "La radiographie de contrôle est satisfaisante.",
    "Les suites sont simples.",
    "La cicatrice est calme et propre.",
    "La douleur est modérée.",
    "Le pansement est sec.",
    "Bonne évolution clinique.",
    "Appui complet autorisé.",
    "Contrôle clinique sans particularité.",
    "Le traitement est poursuivi.",
)

_OPERATIVE = (
    "Compte rendu opératoire.",
    "Arthrodèse du rachis lombaire réalisée ce jour.",
    "Intervention sans incident.",
    "Fermeture plan par plan.",
)


@dataclass
class SynthConfig:
    years: tuple[int, ...] = (2015, 2016, 2017)
    procedures_per_year: int = 700
    prevalence: float = 0.01
    planted_terms: tuple[PlantedTerm, ...] = DEFAULT_PLANTED
    site_specific_terms: tuple[PlantedTerm, ...] = DEFAULT_SITE_SPECIFIC
    decoy_terms: tuple[str, ...] = DEFAULT_DECOYS
    decoy_prob: float = 0.35
    window_days: int = 90
    # structured event emission probabilities per class
    pos_dx: float = 0.7
    neg_dx: float = 0.005
    pos_reprise: float = 0.35
    neg_reprise: float = 0.002
    pos_abx: float = 0.85
    neg_abx: float = 0.05
    pos_bacterio: float = 0.6
    neg_bacterio: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.planted_terms:
            raise ValueError("at least one planted term is required")
        for p in (self.prevalence, self.decoy_prob):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")


@dataclass
class GeneratedCorpus:
    out_dir: Path
    procedures_path: Path
    documents_path: Path
    events_path: Path
    reference_path: Path
    manifest_path: Path
    manifest: dict


def _sentence(term: str, rng: Random) -> str:
    template = rng.choice(_TERM_TEMPLATES)
    article = "une" if term in _FEMININE else "un"
    return template.format(art=article, term=term, Term=term.capitalize())


def _day(year: int, rng: Random) -> date:
    return date(year, 1, 1) + timedelta(days=rng.randrange(0, 360))


def generate(config: SynthConfig, out_dir: str | Path) -> GeneratedCorpus:
    """Write the corpus files, a reference text and the truth manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = Random(config.seed)

    procedures: list[Procedure] = []
    documents: list[ClinicalDocument] = []
    events: list[CareEvent] = []
    embedded: dict[str, list[str]] = {}

    doc_seq = 0
    proc_seq = 0
    previous_patient: str | None = None
    for year in config.years:
        for _ in range(config.procedures_per_year):
            proc_seq += 1
            pid = f"proc-{proc_seq:05d}"
            if previous_patient is not None and rng.random() < 0.02:
                patient = previous_patient
            else:
                patient = f"pat-{proc_seq:05d}"
            previous_patient = patient
            positive = rng.random() < config.prevalence
            intervention = _day(year, rng)
            procedures.append(
                Procedure(
                    procedure_id=pid,
                    patient_id=patient,
                    intervention_date=intervention,
                    specialty="rachis",
                    gold_label=positive,
                )
            )

            # window documents: operative report at day 0 plus follow-ups
            n_follow = rng.randrange(2, 4) if positive else rng.randrange(1, 3)
            offsets = [0] + sorted(rng.randrange(5, 86) for _ in range(n_follow))
            doc_sentences: list[list[str]] = []
            doc_types = [DocType.OPERATIVE_REPORT]
            doc_sentences.append(list(_OPERATIVE))
            for _ in range(n_follow):
                doc_types.append(rng.choice([DocType.CONSULTATION, DocType.HOSPITALIZATION]))
                doc_sentences.append(
                    [rng.choice(_FILLERS) for _ in range(rng.randrange(1, 4))]
                )

            emitted: list[str] = []
            for planted in (*config.planted_terms, *config.site_specific_terms):
                prob = planted.pos_prob if positive else planted.neg_prob
                if rng.random() < prob:
                    emitted.append(planted.term)
                    slot = rng.randrange(len(doc_sentences))
                    doc_sentences[slot].append(_sentence(planted.term, rng))
                    if rng.random() < 0.3:
                        doc_sentences[rng.randrange(len(doc_sentences))].append(
                            _sentence(planted.term, rng)
                        )
            for decoy in config.decoy_terms:
                if rng.random() < config.decoy_prob:
                    slot = rng.randrange(len(doc_sentences))
                    doc_sentences[slot].append(_sentence(decoy, rng))
            embedded[pid] = sorted(set(emitted))

            for offset, doc_type, sentences in zip(offsets, doc_types, doc_sentences):
                doc_seq += 1
                rng.shuffle(sentences)
                documents.append(
                    ClinicalDocument(
                        doc_id=f"doc-{doc_seq:06d}",
                        patient_id=patient,
                        date=intervention + timedelta(days=offset),
                        doc_type=doc_type,
                        text=" ".join(sentences),
                    )
                )
            if rng.random() < 0.15:
                # late note outside the surveillance window
                doc_seq += 1
                documents.append(
                    ClinicalDocument(
                        doc_id=f"doc-{doc_seq:06d}",
                        patient_id=patient,
                        date=intervention + timedelta(days=rng.randrange(95, 150)),
                        doc_type=DocType.OTHER,
                        text=" ".join(rng.choice(_FILLERS) for _ in range(2)),
                    )
                )

            def emit_event(kind: EventKind, code: str, max_offset: int = 76) -> None:
                events.append(
                    CareEvent(
                        patient_id=patient,
                        date=intervention + timedelta(days=rng.randrange(1, max_offset)),
                        kind=kind,
                        code=code,
                    )
                )

            if rng.random() < (config.pos_dx if positive else config.neg_dx):
                emit_event(EventKind.ICD10, rng.choice(["T81.4", "T84.6", "T84.7"]))
            if rng.random() < (config.pos_reprise if positive else config.neg_reprise):
                emit_event(EventKind.CCAM, "AFPA001")
            if rng.random() < (config.pos_abx if positive else config.neg_abx):
                emit_event(EventKind.ATC, rng.choice(["J01CA04", "J01DB01", "J04AB02"]))
            if rng.random() < (config.pos_bacterio if positive else config.neg_bacterio):
                emit_event(
                    EventKind.BACTERIOLOGY,
                    rng.choice(
                        [
                            "Prélèvement plaie opératoire",
                            "Pus profond au bloc",
                            "Culture matériel orthopédique",
                            "Liquide de redon",
                        ]
                    ),
                )
            # unrelated background events for both classes
            if rng.random() < 0.25:
                emit_event(EventKind.ATC, "N02BE01", max_offset=120)
            if rng.random() < 0.10:
                emit_event(EventKind.ICD10, "M54.5", max_offset=120)
            if rng.random() < 0.05:
                emit_event(EventKind.BACTERIOLOGY, "Hémoculture périphérique", max_offset=120)

    procedures_path = out / "procedures.jsonl"
    documents_path = out / "documents.jsonl"
    events_path = out / "events.jsonl"
    reference_path = out / "reference.txt"
    manifest_path = out / "truth_manifest.json"

    dump_procedures(procedures, procedures_path)
    dump_documents(documents, documents_path)
    dump_events(events, events_path)

    reference_rng = Random(config.seed + 1)
    reference_lines = ["Complications infectieuses de la chirurgie du rachis."]
    for planted in config.planted_terms:
        if planted.in_reference:
            reference_lines.append(_sentence(planted.term, reference_rng))
    for decoy in config.decoy_terms:
        reference_lines.append(_sentence(decoy, reference_rng))
    reference_lines.extend(_FILLERS)
    reference_path.write_text("\n".join(reference_lines) + "\n", encoding="utf-8")

    labels = {p.procedure_id: bool(p.gold_label) for p in procedures}
    manifest = {
        "seed": config.seed,
        "years": list(config.years),
        "n_procedures": len(procedures),
        "n_positives": sum(labels.values()),
        "labels": labels,
        "planted_terms": [p.term for p in config.planted_terms],
        "site_specific_terms": [p.term for p in config.site_specific_terms],
        "decoy_terms": list(config.decoy_terms),
        "embedded": embedded,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")

    return GeneratedCorpus(
        out_dir=out,
        procedures_path=procedures_path,
        documents_path=documents_path,
        events_path=events_path,
        reference_path=reference_path,
        manifest_path=manifest_path,
        manifest=manifest,
    )
