"""Source-quote verification, semantic consistency checks, and inferred-value
filtering. Used by the pipeline's confirmation stage and by standalone audits.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from . import schema
from .errors import MatexError
from .schema import Database, MaterialRecord, Microstructure, SourcedValue

# PDF text extraction mangles exactly these characters, so quote matching
# folds them before the substring test. Case is preserved.
_CHAR_FOLDS = {
    "–": "-", "—": "-", "−": "-", "‒": "-", "‐": "-",
    "‘": "'", "’": "'", "′": "'",
    "“": '"', "”": '"', "″": '"',
    "℃": "°C", "º": "°", " ": " ",
}


def _normalize(text: str) -> str:
    for src, dst in _CHAR_FOLDS.items():
        text = text.replace(src, dst)
    text = re.sub(r"\s*°\s*", "°", text)
    text = re.sub(r"\s+", " ", text)
    return text.strip()


def verify_source(quote: str, paper_text: str) -> bool:
    """True iff the quote occurs verbatim in the text after whitespace and
    typographic dash/quote/degree folding on both sides."""
    if not quote:
        raise ValueError("empty quote")
    return _normalize(quote) in _normalize(paper_text)


@dataclass(frozen=True)
class Finding:
    code: str
    detail: str = ""


@dataclass(frozen=True)
class AuditFinding:
    paper_id: str
    material_id: str
    code: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"paper_id": self.paper_id, "material_id": self.material_id,
                "code": self.code, "detail": self.detail}


def check_volume_fractions(micro: Microstructure) -> list[Finding]:
    """Flag phase volume percentages that cannot all be true at once."""
    findings: list[Finding] = []
    reported = [float(sv.value) for sv in
                (micro.matrix_pct, *(p.pct for p in micro.precipitates))
                if sv.is_reported and isinstance(sv.value, (int, float))]
    total = sum(reported)
    if total > 100.0 + schema.EPS_SUM:
        findings.append(Finding("volume-sum-exceeds-100", f"sum={total:g}"))
    if not micro.matrix_pct.is_reported:
        precip_total = sum(float(p.pct.value) for p in micro.precipitates
                           if p.pct.is_reported and isinstance(p.pct.value, (int, float)))
        if precip_total > 100.0:
            findings.append(Finding("precipitates-exceed-100", f"sum={precip_total:g}"))
    return findings


def _compositions_close(a: dict[str, float], b: dict[str, float], tol: float) -> bool:
    for el in set(a) | set(b):
        if abs(a.get(el, 0.0) - b.get(el, 0.0)) > tol:
            return False
    return True


def _processing_tuple(rec: MaterialRecord) -> tuple:
    out = []
    for step in rec.processing.steps():
        out.append((
            bool(step.applied.value),
            None if step.param_a is None else float(step.param_a.value),
            None if step.param_b is None else float(step.param_b.value),
        ))
    return tuple(out)


def check_uniqueness(db: Database, tol: float = 0.1) -> list[tuple[MaterialRecord, ...]]:
    """Group records of one paper that describe the same material.

    Same material = compositions within ``tol`` at.% per element (checked
    against the group's first record, which keeps the relation transitive)
    and identical processing tuples. Only groups of two or more are returned.
    """
    groups: list[list[MaterialRecord]] = []
    for rec in db.records:
        comp = rec.composition.as_percentages()
        proc = _processing_tuple(rec)
        for group in groups:
            rep = group[0]
            if (rep.paper_id == rec.paper_id
                    and proc == _processing_tuple(rep)
                    and _compositions_close(comp, rep.composition.as_percentages(), tol)):
                group.append(rec)
                break
        else:
            groups.append([rec])
    return [tuple(g) for g in groups if len(g) > 1]


def _cleared_value(spec: schema.FeatureSpec) -> SourcedValue | None:
    # Absence is encoded per field kind: elements -> 0, applied -> False,
    # step params -> null, everything else -> NOT_REPORTED.
    if spec.kind == "element":
        return SourcedValue.zero()
    if spec.kind == "boolean":
        return SourcedValue(False)
    if spec.category == "processing":
        return None
    return SourcedValue.not_reported()


def _clear_feature(rec: MaterialRecord, spec: schema.FeatureSpec) -> MaterialRecord:
    rec = schema.replace_feature(rec, spec.name, _cleared_value(spec))
    if spec.kind == "boolean":
        # A cleared applied flag takes its params with it.
        kind = spec.group
        step = rec.processing.step(kind)
        step = replace(step, param_a=None, param_b=None)
        rec = replace(rec, processing=replace(rec.processing, **{kind: step}))
    elif spec.name == "nrt_cryo_temp":
        # strength/ductility cannot stand without their test temperature
        for dependent in ("nrt_cryo_strength", "nrt_cryo_ductility"):
            rec = schema.replace_feature(rec, dependent, SourcedValue.not_reported())
    return rec


def _should_clear(sv: SourcedValue, policy: str, paper_text: str | None) -> bool:
    if sv.inferred:
        return policy in ("drop", "drop-unverified")
    if policy == "drop-unverified" and sv.source_quote:
        assert paper_text is not None
        return not verify_source(sv.source_quote, paper_text)
    return False


def filter_inferred(db: Database, policy: str,
                    paper_texts: dict[str, str] | None = None) -> Database:
    """Apply an inference-filtering policy and return the filtered database.

    keep: identity. drop: every inferred value becomes absent.
    drop-unverified: additionally clears values whose source quote does not
    verify against the paper text (requires ``paper_texts``). Idempotent for
    every policy.
    """
    if policy not in ("keep", "drop", "drop-unverified"):
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "keep":
        return db
    if policy == "drop-unverified" and paper_texts is None:
        raise MatexError("drop-unverified policy needs the paper texts")

    new_records = []
    for rec in db.records:
        text = (paper_texts or {}).get(rec.paper_id)
        if policy == "drop-unverified" and text is None:
            raise MatexError(f"no paper text for {rec.paper_id!r}")
        for spec in schema.FEATURES:
            sv = schema.get_feature(rec, spec.name)
            if sv is None or not schema.feature_is_present(spec, sv):
                continue
            if _should_clear(sv, policy, text):
                rec = _clear_feature(rec, spec)
        if rec.composition.other:
            other = tuple(
                (sym, SourcedValue.zero() if _should_clear(sv, policy, text) else sv)
                for sym, sv in rec.composition.other
            )
            other = tuple((sym, sv) for sym, sv in other if float(sv.value) != 0.0)
            rec = replace(rec, composition=replace(rec.composition, other=other))
        new_records.append(rec)
    return replace(db, records=tuple(new_records))


def audit_sources(db: Database, paper_texts: dict[str, str]) -> tuple[list[AuditFinding], list[str]]:
    """Re-verify every attached quote; returns (findings, warnings).

    A database with no quotes at all (an untracked pipeline's output) yields
    no findings but a "no ledger" warning.
    """
    findings: list[AuditFinding] = []
    saw_quote = False
    for rec in db.records:
        text = paper_texts.get(rec.paper_id)
        for path, sv in schema.iter_sourced_values(rec):
            if not sv.source_quote:
                continue
            saw_quote = True
            if text is None:
                findings.append(AuditFinding(rec.paper_id, rec.material_id,
                                             "paper-text-missing", path))
            elif not verify_source(sv.source_quote, text):
                findings.append(AuditFinding(rec.paper_id, rec.material_id,
                                             "source-verification-failed",
                                             f"{path}: {sv.source_quote!r}"))
    warnings = [] if saw_quote else ["no ledger: database carries no source quotes"]
    return findings, warnings
