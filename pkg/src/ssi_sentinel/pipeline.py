"""Run configuration and the pipeline stages behind the CLI subcommands.

Every stage reads its inputs from files and writes its artifact back to
the run's output directory, so any stage can be rerun in isolation and two
runs with the same config and seed produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import nlp, termselect
from .corpus import (
    ClinicalDocument,
    Procedure,
    dump_procedures,
    load_documents,
    load_events,
    load_procedures,
)
from .evaluation import build_report, confusion, temporal_split, write_report
from .features import Algo, DEFAULT_EXPERT_TERMS, FeatureMatrix, StructuredConfig, assemble
from .models import (
    CalibratedModel,
    calibrate,
    flag,
    load_model,
    save_model,
    train_forest,
    train_logreg,
)
from .nlp import TagMapping, TaggedDoc, TermIndex
from .service import PredictionStore, build_evidence
from .syngen import SynthConfig, generate
from .termselect import SelectionConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # corpus inputs
    procedures: str = "procedures.jsonl"
    documents: str = "documents.jsonl"
    events: str = "events.jsonl"
    # tagging: pre-tagged TSVs win over the built-in tagger
    tagged_dir: str = ""
    lexicon: str = ""
    tagmap: str = ""
    max_content: int = 3
    # windowing
    window_days: int = 90
    include_day0: bool = True
    # term selection
    positive_ratio: float = 0.20
    smoothing: float = 0.5
    top_k: int = 20
    reference: str = ""
    approved_terms: str = ""
    # features
    algo: str = "algo2"
    structured_config: str = ""
    expert_terms: str = ""
    # model
    model: str = "logreg"
    l2_lambda: float = 1e-2
    max_iters: int = 500
    tolerance: float = 1e-6
    n_trees: int = 100
    max_depth: int = 8
    features_per_split: int = 0  # 0 = ceil(sqrt(p))
    seed: int = 0
    # evaluation protocol
    train_years: list[int] = field(default_factory=list)
    test_years: list[int] = field(default_factory=list)
    # synthetic corpus
    synth_per_year: int = 700
    synth_years: list[int] = field(default_factory=lambda: [2015, 2016, 2017])
    synth_prevalence: float = 0.01
    # service
    store_log: str = ""
    port: int = 8000
    ui_dir: str = ""
    # artifacts
    out_dir: str = "out"


def _coerce(value: str) -> object:
    try:
        return tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        return value


def load_run_config(path: str | Path | None, overrides: Sequence[str] = ()) -> RunConfig:
    """Read a flat TOML run config and apply `key=value` overrides."""
    raw: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must be key=value")
        raw[key.strip()] = _coerce(value.strip())
    known = {f.name: f.type for f in fields(RunConfig)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**raw)


def _out(cfg: RunConfig, name: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _load_mapping(cfg: RunConfig) -> TagMapping:
    return TagMapping.from_json(cfg.tagmap) if cfg.tagmap else TagMapping.default()


def _load_lexicon(cfg: RunConfig) -> nlp.Lexicon:
    return nlp.load_lexicon(cfg.lexicon) if cfg.lexicon else nlp.default_lexicon()


def tag_documents(cfg: RunConfig, documents: Sequence[ClinicalDocument]) -> dict[str, TaggedDoc]:
    """Tag each document, from pre-tagged TSVs or the built-in tagger."""
    tagged: dict[str, TaggedDoc] = {}
    if cfg.tagged_dir:
        base = Path(cfg.tagged_dir)
        for doc in documents:
            tsv = base / f"{doc.doc_id}.tsv"
            if not tsv.exists():
                raise ConfigError(f"missing tagged file {tsv}")
            tagged[doc.doc_id] = nlp.parse_tagged_tsv(tsv)
    else:
        lexicon = _load_lexicon(cfg)
        for doc in documents:
            tagged[doc.doc_id] = nlp.tag_text(doc.text, lexicon)
    return tagged


def _window_docs(
    cfg: RunConfig,
    procedures: Sequence[Procedure],
    documents: Sequence[ClinicalDocument],
    tagged: Mapping[str, TaggedDoc],
) -> dict[str, list[TaggedDoc]]:
    from .corpus import collect_window

    by_proc: dict[str, list[TaggedDoc]] = {}
    for proc in procedures:
        docs, _ = collect_window(proc, documents, (), cfg.window_days, cfg.include_day0)
        by_proc[proc.procedure_id] = [tagged[d.doc_id] for d in docs]
    return by_proc


def write_term_index(index: TermIndex, path: Path) -> None:
    payload = {
        "procedure_ids": sorted(index.procedure_ids),
        "terms": {
            term: {
                "presence": sorted(index.presence[term]),
                "counts": dict(sorted(index.counts[term].items())),
            }
            for term in sorted(index.presence)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def read_term_index(path: str | Path) -> TermIndex:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    index = TermIndex(procedure_ids=set(payload["procedure_ids"]))
    for term, entry in payload["terms"].items():
        index.presence[term] = set(entry["presence"])
        index.counts[term] = {pid: int(c) for pid, c in entry["counts"].items()}
    return index


def _labels(procedures: Sequence[Procedure]) -> dict[str, bool]:
    return {p.procedure_id: p.gold_label for p in procedures if p.gold_label is not None}


# --- stages -------------------------------------------------------------------


def stage_synth(cfg: RunConfig) -> Path:
    target = Path(cfg.procedures).parent
    result = generate(
        SynthConfig(
            years=tuple(cfg.synth_years),
            procedures_per_year=cfg.synth_per_year,
            prevalence=cfg.synth_prevalence,
            window_days=cfg.window_days,
            seed=cfg.seed,
        ),
        target,
    )
    log.info(
        "generated %d procedures (%d positive) under %s",
        result.manifest["n_procedures"],
        result.manifest["n_positives"],
        target,
    )
    return result.out_dir


def stage_extract_terms(cfg: RunConfig) -> Path:
    procedures = load_procedures(cfg.procedures)
    documents = load_documents(cfg.documents)
    tagged = tag_documents(cfg, documents)
    labeled = [p for p in procedures if p.gold_label is not None]
    index = nlp.index_terms(
        _window_docs(cfg, labeled, documents, tagged), _load_mapping(cfg), cfg.max_content
    )
    path = _out(cfg, "term_index.json")
    write_term_index(index, path)
    return path


def stage_select_terms(cfg: RunConfig) -> tuple[Path, Path]:
    index = read_term_index(_out(cfg, "term_index.json"))
    procedures = load_procedures(cfg.procedures)
    labels = {pid: lab for pid, lab in _labels(procedures).items() if pid in index.procedure_ids}
    selection = SelectionConfig(
        positive_ratio=cfg.positive_ratio,
        smoothing=cfg.smoothing,
        top_k=cfg.top_k,
        approval_list=termselect.read_approved_terms(cfg.approved_terms)
        if cfg.approved_terms
        else None,
    )
    stats = termselect.compute_stats(index, labels, selection)
    reference_terms = None
    if cfg.reference:
        reference_path = Path(cfg.reference)
        if reference_path.suffix == ".tsv":
            tagged = nlp.parse_tagged_tsv(reference_path)
            reference_terms = termselect.extract_reference_terms(
                "", mapping=_load_mapping(cfg), max_content=cfg.max_content, tagged=tagged
            )
        else:
            reference_terms = termselect.extract_reference_terms(
                reference_path.read_text("utf-8"),
                lexicon=_load_lexicon(cfg),
                mapping=_load_mapping(cfg),
                max_content=cfg.max_content,
            )
        stats_for_cut = [s for s in stats if s.term in reference_terms]
    else:
        stats_for_cut = list(stats)
    selected = termselect.select_final(stats_for_cut, selection)
    report_path = _out(cfg, "candidate_report.json")
    termselect.write_candidate_report(stats, report_path, reference_terms)
    terms_path = _out(cfg, "selected_terms.txt")
    termselect.write_terms([s.term for s in selected], terms_path)
    return report_path, terms_path


def _term_list(cfg: RunConfig) -> list[str]:
    if cfg.algo == Algo.ALGO1.value:
        if cfg.expert_terms:
            return termselect.read_approved_terms(cfg.expert_terms)
        return list(DEFAULT_EXPERT_TERMS)
    terms_path = _out(cfg, "selected_terms.txt")
    if not terms_path.exists():
        raise ConfigError(f"{terms_path} not found; run select-terms first")
    return termselect.read_approved_terms(terms_path)


def stage_build_features(cfg: RunConfig) -> Path:
    procedures = load_procedures(cfg.procedures)
    documents = load_documents(cfg.documents)
    events = load_events(cfg.events)
    tagged = tag_documents(cfg, documents)
    lemmas_by_doc = {doc_id: nlp.lemma_sentences(t) for doc_id, t in tagged.items()}
    structured = (
        StructuredConfig.from_json(cfg.structured_config)
        if cfg.structured_config
        else StructuredConfig()
    )
    matrix = assemble(
        procedures,
        documents,
        events,
        Algo(cfg.algo),
        term_list=_term_list(cfg),
        lemmas_by_doc=lemmas_by_doc,
        structured_config=structured,
        window_days=cfg.window_days,
        include_day0=cfg.include_day0,
    )
    path = _out(cfg, "features.csv")
    matrix.to_csv(path)
    return path


def _labeled_rows(matrix: FeatureMatrix) -> FeatureMatrix:
    ids = [pid for pid, lab in zip(matrix.procedure_ids, matrix.labels) if lab is not None]
    return matrix.select_rows(ids)


def _train(cfg: RunConfig, matrix: FeatureMatrix):
    if cfg.model == "logreg":
        return train_logreg(
            matrix,
            l2_lambda=cfg.l2_lambda,
            max_iters=cfg.max_iters,
            tolerance=cfg.tolerance,
        )
    if cfg.model == "forest":
        return train_forest(
            matrix,
            n_trees=cfg.n_trees,
            max_depth=cfg.max_depth,
            features_per_split=cfg.features_per_split or None,
            seed=cfg.seed,
        )
    raise ConfigError(f"unknown model kind {cfg.model!r} (expected logreg or forest)")


def stage_train(cfg: RunConfig) -> Path:
    matrix = _labeled_rows(FeatureMatrix.from_csv(_out(cfg, "features.csv")))
    model = _train(cfg, matrix)
    path = _out(cfg, "model.json")
    save_model(model, path)
    return path


def stage_calibrate(cfg: RunConfig) -> Path:
    path = _out(cfg, "model.json")
    loaded = load_model(path)
    base = loaded.model if isinstance(loaded, CalibratedModel) else loaded
    matrix = _labeled_rows(FeatureMatrix.from_csv(_out(cfg, "features.csv")))
    save_model(calibrate(base, matrix), path)
    return path


def stage_predict(cfg: RunConfig) -> Path:
    loaded = load_model(_out(cfg, "model.json"))
    if not isinstance(loaded, CalibratedModel):
        raise ConfigError("model.json is not calibrated; run calibrate first")
    matrix = FeatureMatrix.from_csv(_out(cfg, "features.csv"))
    predictions = flag(loaded, matrix)
    path = _out(cfg, "predictions.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(
                json.dumps(
                    {
                        "procedure_id": p.procedure_id,
                        "probability": p.probability,
                        "flagged": p.flagged,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    if cfg.store_log:
        ingest_predictions(cfg, predictions)
    return path


def ingest_predictions(cfg: RunConfig, predictions) -> int:
    """Store flagged cases with term and coded-event evidence."""
    procedures = load_procedures(cfg.procedures)
    documents = load_documents(cfg.documents)
    events = load_events(cfg.events)
    tagged = tag_documents(cfg, documents)
    terms = [
        name[5:]
        for name in FeatureMatrix.from_csv(_out(cfg, "features.csv")).feature_names
        if name.startswith("term:")
    ]
    structured = (
        StructuredConfig.from_json(cfg.structured_config)
        if cfg.structured_config
        else StructuredConfig()
    )
    by_id = {p.procedure_id: p for p in procedures}
    evidence = {}
    for pred in predictions:
        if not pred.flagged:
            continue
        proc = by_id.get(pred.procedure_id)
        if proc is None:
            raise ConfigError(f"prediction references unknown procedure {pred.procedure_id!r}")
        evidence[pred.procedure_id] = build_evidence(
            proc,
            documents,
            events,
            tagged,
            terms,
            structured,
            cfg.window_days,
            cfg.include_day0,
        )
    store = PredictionStore(cfg.store_log)
    return store.ingest(predictions, evidence, known_procedures=set(by_id))


def stage_evaluate(cfg: RunConfig) -> tuple[Path, Path]:
    procedures = load_procedures(cfg.procedures)
    matrix = FeatureMatrix.from_csv(_out(cfg, "features.csv"))
    labeled = _labeled_rows(matrix)
    split_info: dict | None = None
    if cfg.train_years or cfg.test_years:
        train_procs, test_procs = temporal_split(
            [p for p in procedures if p.gold_label is not None],
            set(cfg.train_years),
            set(cfg.test_years),
        )
        train = labeled.select_rows([p.procedure_id for p in train_procs])
        test = labeled.select_rows([p.procedure_id for p in test_procs])
        split_info = {
            "train_years": sorted(cfg.train_years),
            "test_years": sorted(cfg.test_years),
            "n_train": len(train.procedure_ids),
            "n_test": len(test.procedure_ids),
        }
    else:
        train = test = labeled
        split_info = {"protocol": "training-set evaluation"}
    calibrated = calibrate(_train(cfg, train), train)
    predictions = flag(calibrated, test)
    gold = {pid: lab for pid, lab in zip(test.procedure_ids, test.labels)}
    cm = confusion([p.flagged for p in predictions], list(test.labels))
    terms = _selected_stats(cfg)
    report = build_report(cm, terms=terms, predictions=predictions, gold=gold, split=split_info)
    json_path = _out(cfg, "report.json")
    md_path = _out(cfg, "report.md")
    write_report(report, json_path, md_path)
    return json_path, md_path


def _selected_stats(cfg: RunConfig):
    """Stats of the selected terms, when the selection artifacts exist."""
    report_path = _out(cfg, "candidate_report.json")
    terms_path = _out(cfg, "selected_terms.txt")
    if not (report_path.exists() and terms_path.exists()):
        return None
    with open(report_path, encoding="utf-8") as fh:
        rows = {row["term"]: row for row in json.load(fh)}
    stats = []
    for term in termselect.read_approved_terms(terms_path):
        row = rows.get(term)
        if row is None:
            stats.append(termselect.TermStats(term, 0, 0, 0, 0, float("nan")))
        else:
            stats.append(
                termselect.TermStats(
                    term,
                    row["a"],
                    row["b"],
                    row["c"],
                    row["d"],
                    float("nan") if row["odds_ratio"] is None else row["odds_ratio"],
                )
            )
    return stats


def export_gold_file(cfg: RunConfig, path: str | Path) -> Path:
    """Write reviewer-corrected procedures.jsonl from the store log."""
    store = PredictionStore(cfg.store_log)
    procedures = load_procedures(cfg.procedures)
    corrected = store.export_gold(procedures)
    dump_procedures(corrected, path)
    return Path(path)
