"""Orchestrates the three extraction variants.

single_pass: one request per paper asking for all 47 features of every
material, schema-parsed directly (no confirmation stage).
multi_stage_plain: staged extraction (materials, then per-material
microstructure and properties, then confirmation) without quote requirements.
multi_stage_sourced: the full protocol; every present non-inferred value
must carry a verbatim quote, quotes accumulate in a ledger passed to later
stages, and the confirmation stage re-verifies each quote against the text.

Within a paper the stages are strictly sequential (context accumulates);
papers are independent and can run concurrently.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from string import Template

from . import llm, schema, validate
from .errors import (CompletionTimeout, EmptyInput, RateLimited, SchemaViolation,
                     StageFailure)
from .llm import Backend, CallKey, CompletionRequest, TranscriptLog
from .schema import Database, MaterialRecord, PaperFailure, SourcedValue
from .store import ChangeEntry

log = logging.getLogger("matex.pipeline")

VARIANTS = ("single_pass", "multi_stage_plain", "multi_stage_sourced")
EFFORTS = ("low", "medium", "high")

SINGLE_PASS_STAGE = 0  # transcript stage id for the one-shot request

_REPAIR_SUFFIX = (
    "\n\nYour previous response violated the output schema ({violation}). "
    "Respond again with corrected JSON only."
)


@dataclass(frozen=True)
class PipelineConfig:
    variant: str
    model_name: str = "o3-mini"
    reasoning_effort: str = "high"
    max_json_repairs: int = 2
    request_timeout: float = 120.0
    token_budget_per_paper: int = 21500

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.reasoning_effort not in EFFORTS:
            raise ValueError(f"unknown reasoning effort {self.reasoning_effort!r}")
        if not 0 <= self.max_json_repairs <= 5:
            raise ValueError("max_json_repairs must be within [0, 5]")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")

    @property
    def sourced(self) -> bool:
        return self.variant == "multi_stage_sourced"


@dataclass(frozen=True)
class StageContext:
    """Per-paper state carried between stages.

    The source ledger exists only in the sourced variant and only ever grows;
    accumulated records are extended, never overwritten, until confirmation.
    """

    paper_id: str
    paper_text: str
    variant: str
    accumulated: tuple[MaterialRecord, ...] = ()
    source_ledger: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.variant != "multi_stage_sourced" and self.source_ledger:
            raise ValueError("source ledger requires the sourced variant")

    def with_records(self, records: tuple[MaterialRecord, ...]) -> "StageContext":
        return replace(self, accumulated=records)

    def extended_ledger(self, entries: list[tuple[str, str]]) -> "StageContext":
        if self.variant != "multi_stage_sourced":
            return self
        return replace(self, source_ledger=self.source_ledger + tuple(entries))


def _template(name: str) -> Template:
    text = resources.files("matex.data.prompts").joinpath(name).read_text(encoding="utf-8")
    return Template(text)


_PREAMBLE = resources.files("matex.data.prompts").joinpath("preamble.txt").read_text(encoding="utf-8")
_SOURCE_CLAUSE = resources.files("matex.data.prompts").joinpath("source_clause.txt").read_text(encoding="utf-8")
_VALUE_SHAPE = resources.files("matex.data.prompts").joinpath("value_shape.txt").read_text(encoding="utf-8")
_TEMPLATES = {
    SINGLE_PASS_STAGE: _template("single_pass.txt"),
    1: _template("stage1.txt"),
    2: _template("stage2.txt"),
    3: _template("stage3.txt"),
    4: _template("stage4.txt"),
}


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ": "))


def _ledger_block(ctx: StageContext) -> str:
    if ctx.variant != "multi_stage_sourced":
        return ""
    lines = [f'{path}: "{quote}"' for path, quote in ctx.source_ledger]
    body = "\n".join(lines) if lines else "(empty)"
    return f"Source ledger accumulated so far:\n{body}\n\n"


def build_prompt(stage: int, ctx: StageContext, config: PipelineConfig,
                 material: MaterialRecord | None = None,
                 database: tuple[MaterialRecord, ...] | None = None) -> str:
    """Deterministic prompt assembly: identical inputs yield identical bytes."""
    source_clause = _SOURCE_CLAUSE + "\n" if config.sourced else ""
    mapping = {
        "preamble": _PREAMBLE,
        "source_clause": source_clause,
        "value_shape": _VALUE_SHAPE,
        "paper_text": ctx.paper_text,
        "ledger_block": _ledger_block(ctx),
    }
    if stage in (2, 3):
        if material is None:
            raise ValueError(f"stage {stage} prompt needs the material")
        context_dict = {
            "material_id": material.material_id,
            "composition": material.composition.to_dict(),
            "processing": material.processing.to_dict(),
        }
        if stage == 3:
            context_dict["microstructure"] = material.microstructure.to_dict()
        mapping["material_context"] = _dumps(context_dict)
    if stage == 4:
        if database is None:
            raise ValueError("stage 4 prompt needs the database")
        mapping["database_json"] = _dumps([rec.to_dict() for rec in database])
    return _TEMPLATES[stage].substitute(mapping)


def _ask(prompt: str, parse, stage: int, config: PipelineConfig, backend: Backend,
         transcript: TranscriptLog, paper_id: str, material_id: str | None = None):
    """Issue a request and parse it, re-prompting with the violation message
    up to max_json_repairs times."""
    key = CallKey(paper_id=paper_id, stage=stage, material_id=material_id)
    failure_stage = stage if stage != SINGLE_PASS_STAGE else 1
    attempt_prompt = prompt
    last: SchemaViolation | None = None
    for _ in range(config.max_json_repairs + 1):
        request = CompletionRequest(
            model_name=config.model_name,
            prompt=attempt_prompt,
            reasoning_effort=config.reasoning_effort,
            timeout=config.request_timeout,
        )
        try:
            response = llm.complete(request, backend, key, transcript)
        except (CompletionTimeout, RateLimited) as exc:
            # transport problems fail this paper; others keep running
            raise StageFailure(failure_stage, paper_id, material_id, reason=str(exc))
        try:
            return parse(response.text)
        except SchemaViolation as exc:
            last = exc
            attempt_prompt = prompt + _REPAIR_SUFFIX.format(violation=exc)
    raise StageFailure(failure_stage, paper_id, material_id, reason=str(last))


def _require_quotes(records: list[MaterialRecord]) -> None:
    for i, rec in enumerate(records):
        violations = [v for v in schema.validate_record(rec, require_quotes=True)
                      if v.code == "missing-source-quote"]
        if violations:
            raise SchemaViolation(f"$.materials[{i}].{violations[0].path}",
                                  "present value missing its source_quote")


def _check_unique(records: list[MaterialRecord]) -> None:
    seen: dict[tuple, str] = {}
    seen_ids: set[str] = set()
    for i, rec in enumerate(records):
        if rec.material_id in seen_ids:
            raise SchemaViolation(f"$.materials[{i}].material_id",
                                  f"duplicate material_id {rec.material_id!r}")
        seen_ids.add(rec.material_id)
        key = rec.identity_key()
        if key in seen:
            raise SchemaViolation(
                f"$.materials[{i}]",
                f"duplicates {seen[key]}: same composition and processing is one material")
        seen[key] = rec.material_id


def _ledger_entries(material_id: str, record_like) -> list[tuple[str, str]]:
    if isinstance(record_like, MaterialRecord):
        walker = schema.iter_sourced_values(record_like)
    else:
        walker = record_like
    return [(f"{material_id}.{path}", sv.source_quote)
            for path, sv in walker if sv.source_quote]


# --- stages ---------------------------------------------------------------------

def run_stage1(ctx: StageContext, config: PipelineConfig, backend: Backend,
               transcript: TranscriptLog) -> list[MaterialRecord]:
    prompt = build_prompt(1, ctx, config)

    def parse(text: str) -> list[MaterialRecord]:
        skeletons = llm.parse_structured(text, 1, ctx.paper_id)
        _check_unique(skeletons)
        if config.sourced:
            _require_quotes(skeletons)
        return skeletons

    return _ask(prompt, parse, 1, config, backend, transcript, ctx.paper_id)


def run_stage2(material: MaterialRecord, ctx: StageContext, config: PipelineConfig,
               backend: Backend, transcript: TranscriptLog) -> schema.Microstructure:
    prompt = build_prompt(2, ctx, config, material=material)

    def parse(text: str) -> schema.Microstructure:
        micro = llm.parse_structured(text, 2, ctx.paper_id, material.material_id)
        if config.sourced:
            probe = replace(material, microstructure=micro)
            _require_quotes([probe])
        return micro

    return _ask(prompt, parse, 2, config, backend, transcript, ctx.paper_id,
                material.material_id)


def run_stage3(material: MaterialRecord, ctx: StageContext, config: PipelineConfig,
               backend: Backend, transcript: TranscriptLog) -> schema.PropertySet:
    prompt = build_prompt(3, ctx, config, material=material)

    def parse(text: str) -> schema.PropertySet:
        props = llm.parse_structured(text, 3, ctx.paper_id, material.material_id)
        if config.sourced:
            probe = replace(material, properties=props)
            _require_quotes([probe])
        return props

    return _ask(prompt, parse, 3, config, backend, transcript, ctx.paper_id,
                material.material_id)


# confidence order used when the confirmation stage has to clear one volume
# fraction: inferred < unquoted < quoted
def _confidence(sv: SourcedValue) -> int:
    if sv.inferred:
        return 0
    return 2 if sv.source_quote else 1


def _clear_verbatim(rec: MaterialRecord, feature: str, reason: str,
                    changes: list[ChangeEntry]) -> MaterialRecord:
    spec = schema.FEATURE_BY_NAME[feature]
    sv = schema.get_feature(rec, feature)
    old = None if sv is None else (None if not sv.is_reported else sv.value)
    cleared = validate._cleared_value(spec)
    changes.append(ChangeEntry(rec.paper_id, rec.material_id, feature,
                               old=old, new=None, reason=reason))
    rec = schema.replace_feature(rec, feature, cleared)
    if spec.kind == "boolean":
        step = rec.processing.step(spec.group)
        rec = replace(rec, processing=replace(
            rec.processing, **{spec.group: replace(step, param_a=None, param_b=None)}))
    return rec


def _apply_revisions(records: list[MaterialRecord], revisions: list[dict],
                     changes: list[ChangeEntry]) -> list[MaterialRecord]:
    by_id = {rec.material_id: i for i, rec in enumerate(records)}
    for rev in revisions:
        mid, feature = rev["material_id"], rev["field_path"]
        if mid not in by_id:
            raise SchemaViolation("$.revisions", f"unknown material_id {mid!r}")
        if feature not in schema.FEATURE_BY_NAME:
            raise SchemaViolation("$.revisions", f"unknown field_path {feature!r}")
        idx = by_id[mid]
        rec = records[idx]
        old_sv = schema.get_feature(rec, feature)
        old = None if old_sv is None or not old_sv.is_reported else old_sv.value
        if rev["new_value"] is None:
            spec = schema.FEATURE_BY_NAME[feature]
            new_sv = validate._cleared_value(spec)
            new = None
        else:
            spec = schema.FEATURE_BY_NAME[feature]
            value_types: tuple[type, ...] = (str,) if spec.kind == "label" else \
                ((bool,) if spec.kind == "boolean" else (int, float))
            new_sv = llm._parse_sv(rev["new_value"], "$.revisions.new_value",
                                   value_types=value_types)
            new = None if not new_sv.is_reported else new_sv.value
        changes.append(ChangeEntry(rec.paper_id, mid, feature, old=old, new=new,
                                   reason=rev["reason"]))
        records[idx] = schema.replace_feature(rec, feature, new_sv)
    return records


def _drop_failed_quotes(records: list[MaterialRecord], paper_text: str,
                        changes: list[ChangeEntry]) -> list[MaterialRecord]:
    out = []
    for rec in records:
        for spec in schema.FEATURES:
            sv = schema.get_feature(rec, spec.name)
            if sv is None or not schema.feature_is_present(spec, sv) or not sv.source_quote:
                continue
            if not validate.verify_source(sv.source_quote, paper_text):
                rec = _clear_verbatim(rec, spec.name, "source-verification-failed", changes)
        out.append(rec)
    return out


def _merge_duplicates(records: list[MaterialRecord],
                      changes: list[ChangeEntry]) -> list[MaterialRecord]:
    db = Database(records=tuple(records))
    groups = validate.check_uniqueness(db)
    if not groups:
        return records
    drop_ids: dict[str, str] = {}
    merged_by_id: dict[str, MaterialRecord] = {}
    for group in groups:
        keeper = group[0]
        merged = keeper
        for other in group[1:]:
            for spec in schema.FEATURES:
                kept = schema.get_feature(merged, spec.name)
                cand = schema.get_feature(other, spec.name)
                kept_present = kept is not None and schema.feature_is_present(spec, kept)
                cand_present = cand is not None and schema.feature_is_present(spec, cand)
                if cand_present and (not kept_present
                                     or _confidence(cand) > _confidence(kept)):  # type: ignore[arg-type]
                    merged = schema.replace_feature(merged, spec.name, cand)
            drop_ids[other.material_id] = keeper.material_id
            changes.append(ChangeEntry(keeper.paper_id, other.material_id, "material",
                                       old=other.material_id, new=keeper.material_id,
                                       reason="duplicate-material-merged"))
        merged_by_id[keeper.material_id] = merged
    out = []
    for rec in records:
        if rec.material_id in drop_ids:
            continue
        out.append(merged_by_id.get(rec.material_id, rec))
    return out


def _enforce_volume_sums(records: list[MaterialRecord],
                         changes: list[ChangeEntry]) -> list[MaterialRecord]:
    pct_features = ("matrix_pct", "precipitate1_pct", "precipitate2_pct", "precipitate3_pct")
    out = []
    for rec in records:
        while validate.check_volume_fractions(rec.microstructure):
            present = [(schema.get_feature(rec, name), name) for name in pct_features]
            present = [(sv, name) for sv, name in present if sv is not None and sv.is_reported]
            if not present:
                break
            # lowest confidence loses; among equals the last (least prominent) slot
            sv, name = min(reversed(present), key=lambda pair: _confidence(pair[0]))
            rec = _clear_verbatim(rec, name, "volume-sum-exceeds-100", changes)
        out.append(rec)
    return out


def _enforce_nrt_alignment(records: list[MaterialRecord],
                           changes: list[ChangeEntry]) -> list[MaterialRecord]:
    out = []
    for rec in records:
        props = rec.properties
        if not props.nrt_cryo_temp.is_reported:
            for name in ("nrt_cryo_strength", "nrt_cryo_ductility"):
                if getattr(props, name).is_reported:
                    rec = _clear_verbatim(rec, name, "nrt-cryo-temp-missing", changes)
                    props = rec.properties
        out.append(rec)
    return out


def run_stage4(records: list[MaterialRecord], ctx: StageContext, config: PipelineConfig,
               backend: Backend, transcript: TranscriptLog
               ) -> tuple[list[MaterialRecord], list[ChangeEntry]]:
    """Confirmation: one LLM review pass, then deterministic consistency
    enforcement. Every mutation is logged; nothing changes silently."""
    changes: list[ChangeEntry] = []
    prompt = build_prompt(4, ctx, config, database=tuple(records))

    def parse(text: str) -> list[dict]:
        return llm.parse_structured(text, 4, ctx.paper_id)

    revisions = _ask(prompt, parse, 4, config, backend, transcript, ctx.paper_id)
    records = _apply_revisions(list(records), revisions, changes)
    if config.sourced:
        records = _drop_failed_quotes(records, ctx.paper_text, changes)
    records = _merge_duplicates(records, changes)
    records = _enforce_volume_sums(records, changes)
    records = _enforce_nrt_alignment(records, changes)

    for rec in records:
        violations = schema.validate_record(rec)
        if violations:
            raise StageFailure(4, ctx.paper_id, rec.material_id,
                               reason=f"{violations[0].code} at {violations[0].path}")
    return records, changes


# --- whole-paper runs --------------------------------------------------------------

@dataclass
class PaperResult:
    paper_id: str
    records: tuple[MaterialRecord, ...]
    failure: PaperFailure | None
    transcript: TranscriptLog
    changes: list[ChangeEntry] = field(default_factory=list)

    @property
    def token_total(self) -> int:
        return self.transcript.total_tokens()


def run_pipeline(paper_text: str, paper_id: str, config: PipelineConfig,
                 backend: Backend) -> PaperResult:
    """Extract one paper under the configured variant.

    Stage failures are caught and reported as a failure marker with whatever
    records completed; the transcript always reflects every request made.
    """
    if not paper_text.strip():
        raise EmptyInput(f"paper {paper_id!r} has no text")
    transcript = TranscriptLog()
    ctx = StageContext(paper_id=paper_id, paper_text=paper_text, variant=config.variant)
    records: list[MaterialRecord] = []
    failure: PaperFailure | None = None
    changes: list[ChangeEntry] = []
    try:
        if config.variant == "single_pass":
            prompt = build_prompt(SINGLE_PASS_STAGE, ctx, config)

            def parse(text: str) -> list[MaterialRecord]:
                parsed = llm.parse_single_pass(text, paper_id)
                _check_unique(parsed)
                return parsed

            records = _ask(prompt, parse, SINGLE_PASS_STAGE, config, backend,
                           transcript, paper_id)
        else:
            skeletons = run_stage1(ctx, config, backend, transcript)
            for skeleton in skeletons:
                ctx = ctx.extended_ledger(_ledger_entries(skeleton.material_id, skeleton))
                micro = run_stage2(skeleton, ctx, config, backend, transcript)
                with_micro = replace(skeleton, microstructure=micro)
                ctx = ctx.extended_ledger(_ledger_entries(
                    skeleton.material_id,
                    ((p, sv) for p, sv in schema.iter_sourced_values(with_micro)
                     if p.startswith("microstructure."))))
                props = run_stage3(with_micro, ctx, config, backend, transcript)
                complete = replace(with_micro, properties=props)
                ctx = ctx.extended_ledger(_ledger_entries(
                    skeleton.material_id,
                    ((p, sv) for p, sv in schema.iter_sourced_values(complete)
                     if p.startswith("properties."))))
                records.append(complete)
                ctx = ctx.with_records(tuple(records))
            records, changes = run_stage4(records, ctx, config, backend, transcript)
    except StageFailure as exc:
        failure = PaperFailure(paper_id=paper_id, stage=exc.stage, reason=str(exc))
        log.warning("paper %s failed: %s", paper_id, exc)

    total = transcript.total_tokens()
    if total > config.token_budget_per_paper:
        log.warning("paper %s used %d tokens (budget %d)",
                    paper_id, total, config.token_budget_per_paper)
    return PaperResult(paper_id=paper_id, records=tuple(records), failure=failure,
                       transcript=transcript, changes=changes)


def run_corpus(papers: list[tuple[str, str]], config: PipelineConfig, backend: Backend,
               jobs: int = 1) -> tuple[Database, TranscriptLog, list[ChangeEntry]]:
    """Run many (paper_id, text) pairs; outputs are merged in input order so
    concurrent runs stay deterministic under replay."""
    def one(pair: tuple[str, str]) -> PaperResult:
        paper_id, text = pair
        return run_pipeline(text, paper_id, config, backend)

    if jobs > 1 and len(papers) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, papers))
    else:
        results = [one(pair) for pair in papers]

    records: list[MaterialRecord] = []
    failures: list[PaperFailure] = []
    merged_log = TranscriptLog()
    changes: list[ChangeEntry] = []
    for result in results:
        records.extend(result.records)
        if result.failure is not None:
            failures.append(result.failure)
        for entry in result.transcript.entries:
            merged_log.append(entry)
        changes.extend(result.changes)
    return (Database(records=tuple(records), failures=tuple(failures)),
            merged_log, changes)
