"""Provider-agnostic completion client.

Three interchangeable backends: a live HTTP backend speaking the generic
chat-completions wire shape, a replay backend serving recorded responses
keyed by request hash, and a scripted mock keyed by (stage, material_id).
Every call is appended to a TranscriptLog, which doubles as the replay
fixture format.

Request hashes cover the exact request bytes; any prompt edit invalidates
replays loudly (ReplayMiss) rather than silently serving stale fixtures.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol

import httpx

from . import schema
from .errors import (CompletionTimeout, CredentialMissing, RateLimited, ReplayMiss,
                     SchemaViolation)

API_KEY_ENV = "MATEX_API_KEY"

MAX_RETRIES = 3
BACKOFF_BASE_S = 1.0


@dataclass(frozen=True)
class CompletionRequest:
    model_name: str
    prompt: str
    reasoning_effort: str = "high"
    response_format: str = "json_object"
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def request_hash(request: CompletionRequest) -> str:
    payload = json.dumps(
        {
            "model_name": request.model_name,
            "prompt": request.prompt,
            "reasoning_effort": request.reasoning_effort,
            "response_format": request.response_format,
        },
        ensure_ascii=False, sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class BackendResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int


@dataclass(frozen=True)
class CallKey:
    """Where in the protocol a request was issued; used for transcripts and
    for scripted mock lookup."""

    paper_id: str
    stage: int
    material_id: str | None = None


@dataclass(frozen=True)
class TranscriptEntry:
    paper_id: str
    stage: int
    material_id: str | None
    request_hash: str
    response_text: str
    prompt_tokens: int
    completion_tokens: int
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "stage": self.stage,
            "material_id": self.material_id,
            "request_hash": self.request_hash,
            "response_text": self.response_text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriptEntry":
        return cls(
            paper_id=d["paper_id"],
            stage=int(d["stage"]),
            material_id=d["material_id"],
            request_hash=d["request_hash"],
            response_text=d["response_text"],
            prompt_tokens=int(d["prompt_tokens"]),
            completion_tokens=int(d["completion_tokens"]),
            wall_time=float(d["wall_time"]),
        )


@dataclass
class TranscriptLog:
    """Append-only record of every request/response, in issuance order."""

    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        if entry.prompt_tokens < 0 or entry.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        self.entries.append(entry)

    def total_tokens(self, paper_id: str | None = None) -> int:
        return sum(e.prompt_tokens + e.completion_tokens for e in self.entries
                   if paper_id is None or e.paper_id == paper_id)

    def for_paper(self, paper_id: str) -> list[TranscriptEntry]:
        return [e for e in self.entries if e.paper_id == paper_id]


class Backend(Protocol):
    def complete(self, request: CompletionRequest, key: CallKey) -> BackendResponse: ...


class MockBackend:
    """Scripted responses keyed by (stage, material_id); paper-scoped scripts
    map "stage" or "stage:material_id" to a response payload.

    Token counts are deterministic length-based estimates so budget
    accounting stays reproducible.
    """

    def __init__(self, scripts: dict[str, dict[str, object]]):
        self._scripts = scripts

    @staticmethod
    def script_key(stage: int, material_id: str | None) -> str:
        return f"{stage}" if material_id is None else f"{stage}:{material_id}"

    def complete(self, request: CompletionRequest, key: CallKey) -> BackendResponse:
        paper = self._scripts.get(key.paper_id)
        if paper is None:
            raise KeyError(f"no script for paper {key.paper_id!r}")
        lookup = self.script_key(key.stage, key.material_id)
        if lookup not in paper:
            raise KeyError(f"no script for {lookup!r} in paper {key.paper_id!r}")
        payload = paper[lookup]
        text = payload if isinstance(payload, str) else json.dumps(
            payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        return BackendResponse(
            text=text,
            prompt_tokens=len(request.prompt) // 4,
            completion_tokens=len(text) // 4,
        )


class ReplayBackend:
    """Serves recorded responses; requests must hash to a recorded entry.

    Entries with the same hash are served in recording order, so repeated
    identical requests replay faithfully.
    """

    def __init__(self, entries: list[TranscriptEntry]):
        self._by_hash: dict[str, deque[TranscriptEntry]] = {}
        for entry in entries:
            self._by_hash.setdefault(entry.request_hash, deque()).append(entry)

    def complete(self, request: CompletionRequest, key: CallKey) -> BackendResponse:
        h = request_hash(request)
        queue = self._by_hash.get(h)
        if not queue:
            raise ReplayMiss(h)
        entry = queue.popleft()
        return BackendResponse(entry.response_text, entry.prompt_tokens,
                               entry.completion_tokens)


class LiveBackend:
    """Generic chat-completions HTTP backend with bounded retries.

    Retries transient failures (429 and 5xx, connection errors) with
    exponential backoff up to MAX_RETRIES; total time stays within
    timeout + backoff envelope.
    """

    def __init__(self, endpoint: str, api_key: str | None = None,
                 transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep):
        self._endpoint = endpoint
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise CredentialMissing(f"set {API_KEY_ENV} to use the live backend")
        self._api_key = key
        self._transport = transport
        self._sleep = sleep

    def complete(self, request: CompletionRequest, key: CallKey) -> BackendResponse:
        body = {
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "reasoning_effort": request.reasoning_effort,
            "response_format": {"type": request.response_format},
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_error: Exception | None = None
        with httpx.Client(transport=self._transport, timeout=request.timeout) as client:
            for attempt in range(MAX_RETRIES + 1):
                if attempt:
                    self._sleep(BACKOFF_BASE_S * 2 ** (attempt - 1))
                try:
                    resp = client.post(self._endpoint, json=body, headers=headers)
                except httpx.TimeoutException as exc:
                    last_error = CompletionTimeout(str(exc))
                    continue
                except httpx.TransportError as exc:
                    last_error = CompletionTimeout(str(exc))
                    continue
                if resp.status_code == 429:
                    last_error = RateLimited(f"429 after attempt {attempt + 1}")
                    continue
                if resp.status_code >= 500:
                    last_error = RateLimited(f"{resp.status_code} after attempt {attempt + 1}")
                    continue
                resp.raise_for_status()
                data = resp.json()
                usage = data.get("usage", {})
                return BackendResponse(
                    text=data["choices"][0]["message"]["content"],
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                )
        raise last_error if last_error is not None else RateLimited("retries exhausted")


def complete(request: CompletionRequest, backend: Backend, key: CallKey,
             log: TranscriptLog | None = None) -> BackendResponse:
    """Issue one completion and append it to the transcript log."""
    start = time.monotonic()
    response = backend.complete(request, key)
    wall = 0.0 if isinstance(backend, (ReplayBackend, MockBackend)) \
        else time.monotonic() - start
    if log is not None:
        log.append(TranscriptEntry(
            paper_id=key.paper_id,
            stage=key.stage,
            material_id=key.material_id,
            request_hash=request_hash(request),
            response_text=response.text,
            prompt_tokens=response.prompt_tokens,
            completion_tokens=response.completion_tokens,
            wall_time=wall,
        ))
    return response


# --- structured-output parsing ------------------------------------------------

def _require(payload: dict, path: str, key: str, types: tuple[type, ...],
             allow_none: bool = False):
    if key not in payload:
        raise SchemaViolation(f"{path}.{key}", "required field missing")
    value = payload[key]
    if value is None:
        if allow_none:
            return None
        raise SchemaViolation(f"{path}.{key}", "must not be null")
    if not isinstance(value, types):
        raise SchemaViolation(f"{path}.{key}",
                              f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")
    return value


def _reject_unknown(payload: dict, path: str, allowed: set[str]) -> None:
    unknown = set(payload) - allowed
    if unknown:
        raise SchemaViolation(f"{path}.{sorted(unknown)[0]}", "unknown field")


_SV_KEYS = {"value", "source_quote", "inferred", "derivation_note", "qualifier"}


def _parse_sv(payload, path: str, *, value_types: tuple[type, ...]) -> schema.SourcedValue:
    if not isinstance(payload, dict):
        raise SchemaViolation(path, f"expected object, got {type(payload).__name__}")
    _reject_unknown(payload, path, _SV_KEYS)
    if "value" not in payload:
        raise SchemaViolation(f"{path}.value", "required field missing")
    value = payload["value"]
    if value is not None and not isinstance(value, value_types):
        raise SchemaViolation(f"{path}.value",
                              f"expected {'/'.join(t.__name__ for t in value_types)}, got {type(value).__name__}")
    if isinstance(value, bool) and bool not in value_types:
        raise SchemaViolation(f"{path}.value", "expected number, got bool")
    quote = payload.get("source_quote")
    if quote is not None and not isinstance(quote, str):
        raise SchemaViolation(f"{path}.source_quote", "expected string")
    note = payload.get("derivation_note")
    if note is not None and not isinstance(note, str):
        raise SchemaViolation(f"{path}.derivation_note", "expected string")
    qualifier = payload.get("qualifier", "exact")
    if qualifier not in schema.QUALIFIERS:
        raise SchemaViolation(f"{path}.qualifier", f"unknown qualifier {qualifier!r}")
    return schema.SourcedValue(
        value=schema.NOT_REPORTED if value is None else value,
        source_quote=quote,
        inferred=bool(payload.get("inferred", False)),
        derivation_note=note,
        qualifier=qualifier,
    )


def _parse_number_field(payload: dict, path: str, key: str) -> schema.SourcedValue:
    raw = _require(payload, path, key, (dict,))
    return _parse_sv(raw, f"{path}.{key}", value_types=(int, float))


def _parse_optional_sv(payload: dict, path: str, key: str,
                       value_types: tuple[type, ...]) -> schema.SourcedValue | None:
    if key not in payload:
        raise SchemaViolation(f"{path}.{key}", "required field missing")
    if payload[key] is None:
        return None
    return _parse_sv(payload[key], f"{path}.{key}", value_types=value_types)


_STEP_KEYS = {"applied", "param_a", "param_b"}


def _parse_step(payload, path: str, kind: str) -> schema.ProcessingStep:
    if not isinstance(payload, dict):
        raise SchemaViolation(path, "expected object")
    _reject_unknown(payload, path, _STEP_KEYS)
    applied_raw = _require(payload, path, "applied", (dict,))
    applied = _parse_sv(applied_raw, f"{path}.applied", value_types=(bool,))
    return schema.ProcessingStep(
        kind=kind,
        applied=applied,
        param_a=_parse_optional_sv(payload, path, "param_a", (int, float)),
        param_b=_parse_optional_sv(payload, path, "param_b", (int, float)),
    )


_SKELETON_KEYS = {"material_id", "composition", "processing"}
_COMPOSITION_KEYS = set(schema.ELEMENTS) | {"other_composition"}
_PROCESSING_KEYS = set(schema.STEP_KINDS) | {"additional_processing"}


def _parse_string_list(payload: dict, path: str, key: str) -> tuple[str, ...]:
    raw = payload.get(key, [])
    if not isinstance(raw, list) or any(not isinstance(s, str) for s in raw):
        raise SchemaViolation(f"{path}.{key}", "expected list of strings")
    return tuple(raw)


def _parse_skeleton(payload, path: str, paper_id: str) -> schema.MaterialRecord:
    if not isinstance(payload, dict):
        raise SchemaViolation(path, "expected object")
    _reject_unknown(payload, path, _SKELETON_KEYS)
    material_id = _require(payload, path, "material_id", (str,))
    if not material_id:
        raise SchemaViolation(f"{path}.material_id", "must be non-empty")
    comp_raw = _require(payload, path, "composition", (dict,))
    _reject_unknown(comp_raw, f"{path}.composition", _COMPOSITION_KEYS)
    elements = []
    for el in schema.ELEMENTS:
        if el not in comp_raw:
            elements.append(schema.SourcedValue.zero())
        else:
            elements.append(_parse_sv(comp_raw[el], f"{path}.composition.{el}",
                                      value_types=(int, float)))
    other = []
    for i, pair in enumerate(comp_raw.get("other_composition", [])):
        if (not isinstance(pair, list) or len(pair) != 2
                or not isinstance(pair[0], str)):
            raise SchemaViolation(f"{path}.composition.other_composition[{i}]",
                                  "expected [symbol, value] pair")
        other.append((pair[0], _parse_sv(pair[1],
                                         f"{path}.composition.other_composition[{i}]",
                                         value_types=(int, float))))
    proc_raw = _require(payload, path, "processing", (dict,))
    _reject_unknown(proc_raw, f"{path}.processing", _PROCESSING_KEYS)
    steps = {}
    for kind in schema.STEP_KINDS:
        if kind not in proc_raw:
            steps[kind] = schema.ProcessingStep.absent(kind)
        else:
            steps[kind] = _parse_step(proc_raw[kind], f"{path}.processing.{kind}", kind)
    processing = schema.Processing(
        **steps, additional=_parse_string_list(proc_raw, f"{path}.processing",
                                               "additional_processing"))
    return schema.MaterialRecord(
        material_id=material_id,
        paper_id=paper_id,
        composition=schema.Composition(elements=tuple(elements), other=tuple(other)),
        processing=processing,
    )


_MICRO_KEYS = {"matrix_type", "matrix_pct", "precipitates", "additional_microstructure"}
_PRECIPITATE_KEYS = {"type", "size", "pct"}


def _parse_microstructure(payload, path: str) -> schema.Microstructure:
    if not isinstance(payload, dict):
        raise SchemaViolation(path, "expected object")
    _reject_unknown(payload, path, _MICRO_KEYS)
    matrix_type = _parse_sv(_require(payload, path, "matrix_type", (dict,)),
                            f"{path}.matrix_type", value_types=(str,))
    matrix_pct = _parse_number_field(payload, path, "matrix_pct")
    precs_raw = _require(payload, path, "precipitates", (list,))
    if len(precs_raw) != 3:
        raise SchemaViolation(f"{path}.precipitates",
                              f"expected exactly 3 slots, got {len(precs_raw)}")
    precs = []
    for i, p in enumerate(precs_raw):
        if not isinstance(p, dict):
            raise SchemaViolation(f"{path}.precipitates[{i}]", "expected object")
        _reject_unknown(p, f"{path}.precipitates[{i}]", _PRECIPITATE_KEYS)
        precs.append(schema.Precipitate(
            type=_parse_sv(_require(p, f"{path}.precipitates[{i}]", "type", (dict,)),
                           f"{path}.precipitates[{i}].type", value_types=(str,)),
            size=_parse_number_field(p, f"{path}.precipitates[{i}]", "size"),
            pct=_parse_number_field(p, f"{path}.precipitates[{i}]", "pct"),
        ))
    return schema.Microstructure(
        matrix_type=matrix_type,
        matrix_pct=matrix_pct,
        precipitates=tuple(precs),  # type: ignore[arg-type]
        additional=_parse_string_list(payload, path, "additional_microstructure"),
    )


_PROPERTY_KEYS = set(schema.PROPERTY_FIELDS) | {"additional_properties"}


def _parse_properties(payload, path: str) -> schema.PropertySet:
    if not isinstance(payload, dict):
        raise SchemaViolation(path, "expected object")
    _reject_unknown(payload, path, _PROPERTY_KEYS)
    values = {}
    for name in schema.PROPERTY_FIELDS:
        if name not in payload:
            values[name] = schema.SourcedValue.not_reported()
        else:
            values[name] = _parse_sv(payload[name], f"{path}.{name}",
                                     value_types=(int, float))
    return schema.PropertySet(
        **values,
        additional=_parse_string_list(payload, path, "additional_properties"),
    )


def _validate_bridge(record: schema.MaterialRecord, path: str) -> None:
    violations = schema.validate_record(record)
    if violations:
        v = violations[0]
        raise SchemaViolation(f"{path}.{v.path}", f"{v.code} {v.detail}".strip())


def parse_structured(response_text: str, stage: int, paper_id: str,
                     material_id: str | None = None):
    """Strict parse of a stage response against its field contract.

    Stage 1 returns a list of material skeletons, stage 2 a Microstructure,
    stage 3 a PropertySet, stage 4 a revision list. Unknown fields are
    rejected; structural invariants are enforced through the record
    validator so a violation reads like a repair instruction.
    """
    try:
        payload = json.loads(response_text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"response is not valid JSON: {exc}") from exc

    if stage == 1:
        if not isinstance(payload, dict):
            raise SchemaViolation("$", "expected object")
        _reject_unknown(payload, "$", {"materials"})
        raw = _require(payload, "$", "materials", (list,))
        skeletons = [
            _parse_skeleton(item, f"$.materials[{i}]", paper_id)
            for i, item in enumerate(raw)
        ]
        for i, rec in enumerate(skeletons):
            _validate_bridge(rec, f"$.materials[{i}]")
        return skeletons
    if stage == 2:
        micro = _parse_microstructure(payload, "$")
        probe = schema.MaterialRecord(
            material_id=material_id or "probe", paper_id=paper_id,
            composition=schema.Composition.from_map({}), microstructure=micro)
        _validate_bridge(probe, "$")
        return micro
    if stage == 3:
        props = _parse_properties(payload, "$")
        probe = schema.MaterialRecord(
            material_id=material_id or "probe", paper_id=paper_id,
            composition=schema.Composition.from_map({}), properties=props)
        _validate_bridge(probe, "$")
        return props
    if stage == 4:
        if not isinstance(payload, dict):
            raise SchemaViolation("$", "expected object")
        _reject_unknown(payload, "$", {"revisions"})
        raw = _require(payload, "$", "revisions", (list,))
        revisions = []
        for i, rev in enumerate(raw):
            if not isinstance(rev, dict):
                raise SchemaViolation(f"$.revisions[{i}]", "expected object")
            _reject_unknown(rev, f"$.revisions[{i}]",
                            {"material_id", "field_path", "new_value", "reason"})
            revisions.append({
                "material_id": _require(rev, f"$.revisions[{i}]", "material_id", (str,)),
                "field_path": _require(rev, f"$.revisions[{i}]", "field_path", (str,)),
                "new_value": rev.get("new_value"),
                "reason": _require(rev, f"$.revisions[{i}]", "reason", (str,)),
            })
        return revisions
    raise ValueError(f"unknown stage {stage}")


# Single-pass responses reuse the stage-1 skeleton contract with full
# microstructure/properties blocks attached per material.
_FULL_KEYS = _SKELETON_KEYS | {"microstructure", "properties"}


def parse_single_pass(response_text: str, paper_id: str) -> list[schema.MaterialRecord]:
    try:
        payload = json.loads(response_text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"response is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SchemaViolation("$", "expected object")
    _reject_unknown(payload, "$", {"materials"})
    raw = _require(payload, "$", "materials", (list,))
    records = []
    for i, item in enumerate(raw):
        path = f"$.materials[{i}]"
        if not isinstance(item, dict):
            raise SchemaViolation(path, "expected object")
        _reject_unknown(item, path, _FULL_KEYS)
        skeleton_part = {k: item[k] for k in _SKELETON_KEYS if k in item}
        rec = _parse_skeleton(skeleton_part, path, paper_id)
        micro = _parse_microstructure(_require(item, path, "microstructure", (dict,)),
                                      f"{path}.microstructure")
        props = _parse_properties(_require(item, path, "properties", (dict,)),
                                  f"{path}.properties")
        rec = schema.MaterialRecord(
            material_id=rec.material_id, paper_id=paper_id,
            composition=rec.composition, processing=rec.processing,
            microstructure=micro, properties=props)
        _validate_bridge(rec, path)
        records.append(rec)
    return records
