"""Persistence and interchange.

Every machine-read file is line-delimited JSON with a one-line header naming
the format and version; serialization is deterministic (stable field order,
UTF-8, no ASCII escaping) so files round-trip bit-exactly and diff cleanly.
CSV exists only as a terminal export.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from . import schema
from .errors import FormatError, VersionMismatch
from .llm import TranscriptEntry
from .schema import Database, MaterialRecord, PaperFailure

DB_FORMAT = "matex-db"
DB_VERSION = 2
TRANSCRIPT_FORMAT = "matex-transcript"
TRANSCRIPT_VERSION = 1
CHANGELOG_FORMAT = "matex-changelog"
CHANGELOG_VERSION = 1
REPORT_FORMAT = "matex-report"
REPORT_VERSION = 1
MANIFEST_FORMAT = "matex-manifest"
MANIFEST_VERSION = 1


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _write_lines(path: Path, fmt: str, version: int, objs: Iterable[dict]) -> None:
    lines = [_dumps({"format": fmt, "version": version})]
    lines.extend(_dumps(obj) for obj in objs)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_lines(path: Path, fmt: str, current_version: int,
                migrations: dict[int, Callable[[dict], dict]] | None = None
                ) -> list[tuple[int, dict]]:
    """Parse a headed JSONL file; returns (line_number, record_dict) pairs
    with any version migration already applied."""
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(0, "file not found", str(path))
    # split on "\n" only: JSON strings may contain U+2028/U+2029, which
    # splitlines() would treat as record boundaries
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(1, "empty file, missing header", str(path))
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(1, f"bad header: {exc}", str(path))
    if not isinstance(header, dict) or header.get("format") != fmt:
        raise FormatError(1, f"expected format {fmt!r}, got {header!r}", str(path))
    version = header.get("version")
    migrate: Callable[[dict], dict] | None = None
    if version != current_version:
        migrate = (migrations or {}).get(version)
        if migrate is None:
            raise VersionMismatch(
                f"{path}: version {version} not readable (current {current_version})")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(lineno, f"bad JSON: {exc.msg}", str(path))
        if not isinstance(obj, dict):
            raise FormatError(lineno, "expected object", str(path))
        out.append((lineno, migrate(obj) if migrate else obj))
    return out


# --- databases / ground truth -------------------------------------------------

def _migrate_db_v1(obj: dict) -> dict:
    # v1 predates value qualifiers; every sourced value gets the default.
    def add_qualifier(node):
        if isinstance(node, dict):
            if "value" in node and "inferred" in node:
                node.setdefault("qualifier", "exact")
            for v in node.values():
                add_qualifier(v)
        elif isinstance(node, list):
            for v in node:
                add_qualifier(v)

    add_qualifier(obj)
    return obj


_DB_MIGRATIONS = {1: _migrate_db_v1}


def save_database(db: Database, path: Path | str) -> None:
    objs: list[dict] = [rec.to_dict() for rec in db.records]
    objs.extend(f.to_dict() for f in db.failures)
    _write_lines(Path(path), DB_FORMAT, DB_VERSION, objs)


def load_database(path: Path | str, validate: bool = True) -> Database:
    records: list[MaterialRecord] = []
    failures: list[PaperFailure] = []
    for lineno, obj in _read_lines(Path(path), DB_FORMAT, DB_VERSION, _DB_MIGRATIONS):
        try:
            if "failure" in obj:
                failures.append(PaperFailure.from_dict(obj))
                continue
            rec = MaterialRecord.from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(lineno, f"malformed record: {exc}", str(path))
        if validate:
            violations = schema.validate_record(rec)
            if violations:
                raise FormatError(lineno,
                                  f"invalid record: {violations[0].code} at {violations[0].path}",
                                  str(path))
        records.append(rec)
    return Database(records=tuple(records), failures=tuple(failures))


load_ground_truth = load_database
save_ground_truth = save_database


# --- transcripts ---------------------------------------------------------------

def save_transcript(entries: Iterable[TranscriptEntry], path: Path | str) -> None:
    _write_lines(Path(path), TRANSCRIPT_FORMAT, TRANSCRIPT_VERSION,
                 (e.to_dict() for e in entries))


def load_transcript(path: Path | str) -> list[TranscriptEntry]:
    out = []
    for lineno, obj in _read_lines(Path(path), TRANSCRIPT_FORMAT, TRANSCRIPT_VERSION):
        try:
            out.append(TranscriptEntry.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(lineno, f"malformed transcript entry: {exc}", str(path))
    return out


# --- change logs ----------------------------------------------------------------

@dataclass(frozen=True)
class ChangeEntry:
    """One confirmation-stage mutation: nothing changes silently."""

    paper_id: str
    material_id: str
    field_path: str
    old: object
    new: object
    reason: str

    def to_dict(self) -> dict:
        return {"paper_id": self.paper_id, "material_id": self.material_id,
                "field_path": self.field_path, "old": self.old, "new": self.new,
                "reason": self.reason}

    @classmethod
    def from_dict(cls, d: dict) -> "ChangeEntry":
        return cls(paper_id=d["paper_id"], material_id=d["material_id"],
                   field_path=d["field_path"], old=d["old"], new=d["new"],
                   reason=d["reason"])


def save_changelog(entries: Iterable[ChangeEntry], path: Path | str) -> None:
    _write_lines(Path(path), CHANGELOG_FORMAT, CHANGELOG_VERSION,
                 (e.to_dict() for e in entries))


def load_changelog(path: Path | str) -> list[ChangeEntry]:
    out = []
    for lineno, obj in _read_lines(Path(path), CHANGELOG_FORMAT, CHANGELOG_VERSION):
        try:
            out.append(ChangeEntry.from_dict(obj))
        except (KeyError, TypeError) as exc:
            raise FormatError(lineno, f"malformed change entry: {exc}", str(path))
    return out


# --- reports --------------------------------------------------------------------

def save_report(report_dict: dict, path: Path | str) -> None:
    """Persist a MetricsReport (as produced by MetricsReport.to_dict)."""
    rows = report_dict["rows"]
    summary = {k: v for k, v in report_dict.items() if k != "rows"}
    objs = [{"kind": "row", **row} for row in rows]
    objs.append({"kind": "summary", **summary})
    _write_lines(Path(path), REPORT_FORMAT, REPORT_VERSION, objs)


def load_report_rows(path: Path | str) -> list[dict]:
    return [obj for _, obj in _read_lines(Path(path), REPORT_FORMAT, REPORT_VERSION)]


# --- manifests ------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    """One corpus paper; text_path is None only for failed ingestions."""

    paper_id: str
    text_path: Path | None
    gt_path: Path | None = None
    error: str | None = None  # set when ingestion failed for this paper


def save_manifest(entries: Iterable[ManifestEntry], path: Path | str) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        p = Path(p)
        try:
            return p.resolve().relative_to(base).as_posix()
        except ValueError:
            return p.as_posix()

    objs = []
    for e in entries:
        obj: dict = {"paper_id": e.paper_id,
                     "text": rel(e.text_path) if e.text_path is not None else None}
        obj["gt"] = rel(e.gt_path) if e.gt_path is not None else None
        if e.error:
            obj["error"] = e.error
        objs.append(obj)
    _write_lines(path, MANIFEST_FORMAT, MANIFEST_VERSION, objs)


def load_manifest(path: Path | str) -> list[ManifestEntry]:
    """Entries with paths resolved relative to the manifest location."""
    path = Path(path)
    base = path.parent
    out = []
    for lineno, obj in _read_lines(path, MANIFEST_FORMAT, MANIFEST_VERSION):
        try:
            text = obj["text"]
            error = obj.get("error")
            if text is None and not error:
                raise FormatError(lineno, "entry has neither text nor error", str(path))
            gt = obj.get("gt")
            out.append(ManifestEntry(
                paper_id=obj["paper_id"],
                text_path=(base / text) if text is not None else None,
                gt_path=(base / gt) if gt else None,
                error=error,
            ))
        except (KeyError, TypeError) as exc:
            raise FormatError(lineno, f"malformed manifest entry: {exc}", str(path))
    return out


# --- CSV export -----------------------------------------------------------------

def export_csv(db: Database, path: Path | str) -> None:
    """One row per material: ids, the 47 feature values each followed by an
    inferred marker column, the free-text overflow fields, and a JSON column
    of source quotes. NOT_REPORTED renders as an empty cell; labels stay
    verbatim."""
    feature_names = [spec.name for spec in schema.FEATURES]
    header = ["paper_id", "material_id"]
    for name in feature_names:
        header.extend([name, f"{name}_inferred"])
    header.extend(["other_composition", "additional_processing",
                   "additional_microstructure", "additional_properties",
                   "source_quotes"])

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in db.records:
            row: list[str] = [rec.paper_id, rec.material_id]
            quotes: dict[str, str] = {}
            for spec in schema.FEATURES:
                sv = schema.get_feature(rec, spec.name)
                if sv is None or not sv.is_reported:
                    row.extend(["", ""])
                    continue
                value = sv.value
                if isinstance(value, bool):
                    rendered = "1" if value else "0"
                elif isinstance(value, float) and value.is_integer():
                    rendered = str(int(value))
                else:
                    rendered = str(value)
                row.extend([rendered, "*" if sv.inferred else ""])
                if sv.source_quote:
                    quotes[spec.name] = sv.source_quote
            row.append(";".join(f"{sym}:{sv.value}" for sym, sv in rec.composition.other))
            row.append("; ".join(rec.processing.additional))
            row.append("; ".join(rec.microstructure.additional))
            row.append("; ".join(rec.properties.additional))
            row.append(_dumps(quotes) if quotes else "")
            writer.writerow(row)
