"""Data model for extracted material records.

A material record covers 47 features in four categories: 14 element
percentages, 12 processing parameters (4 steps x applied?/param_a/param_b),
11 microstructure attributes (matrix type + fraction, 3 precipitate slots),
and 10 mechanical properties. Every feature is wrapped in a SourcedValue so
the verbatim source quote, an inference flag, and a derivation note travel
with the value.

Absence is encoded the way ground truth encodes it: unreported elements are
0, unmentioned processing steps carry applied=False with null params, and
microstructure/property values are NOT_REPORTED.

All types are immutable; instances can be shared across threads freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Iterator

EPS_SUM = 0.5  # at.% / vol.% slack on sum checks (rounding in source articles)

ELEMENTS = ("Fe", "Ni", "Co", "Mn", "Cr", "Al", "Ti", "Cu", "Si", "V", "Nb", "B", "Mo", "Ta")

STEP_KINDS = ("homogenization", "rolling", "recrystallization", "aging")

PROPERTY_FIELDS = (
    "uts", "ucs", "tys", "cys", "hardness",
    "tensile_ductility", "compressive_ductility",
    "nrt_cryo_temp", "nrt_cryo_strength", "nrt_cryo_ductility",
)

QUALIFIERS = ("exact", "approximate", "bound_below", "bound_above", "range")

_STRENGTH_FIELDS = ("uts", "ucs", "tys", "cys", "nrt_cryo_strength")
_DUCTILITY_FIELDS = ("tensile_ductility", "compressive_ductility", "nrt_cryo_ductility")


class NotReported:
    """Singleton marker for a value the article does not report."""

    _instance: "NotReported | None" = None

    def __new__(cls) -> "NotReported":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NOT_REPORTED"

    def __deepcopy__(self, memo: dict) -> "NotReported":
        return self


NOT_REPORTED = NotReported()

Scalar = Any  # float | str | bool | NotReported


@dataclass(frozen=True)
class SourcedValue:
    """A value plus its provenance: verbatim quote, inference flag, note.

    ``qualifier`` records how the source stated the number (exact,
    approximate, a bound, or a range collapsed to its midpoint) so scoring
    can widen tolerances for hedged values.
    """

    value: Scalar
    source_quote: str | None = None
    inferred: bool = False
    derivation_note: str | None = None
    qualifier: str = "exact"

    @classmethod
    def not_reported(cls) -> "SourcedValue":
        return cls(NOT_REPORTED)

    @classmethod
    def zero(cls) -> "SourcedValue":
        return cls(0.0)

    @property
    def is_reported(self) -> bool:
        return self.value is not NOT_REPORTED

    def to_dict(self) -> dict:
        return {
            "value": None if self.value is NOT_REPORTED else self.value,
            "source_quote": self.source_quote,
            "inferred": self.inferred,
            "derivation_note": self.derivation_note,
            "qualifier": self.qualifier,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourcedValue":
        value = d.get("value")
        return cls(
            value=NOT_REPORTED if value is None else value,
            source_quote=d.get("source_quote"),
            inferred=bool(d.get("inferred", False)),
            derivation_note=d.get("derivation_note"),
            qualifier=d.get("qualifier", "exact"),
        )


NR = SourcedValue.not_reported


@dataclass(frozen=True)
class Composition:
    """Atomic-percent values for the 14 tracked elements plus overflow.

    ``elements`` is parallel to ELEMENTS; a value of 0 means the element was
    not reported. ``other`` holds (symbol, value) pairs for elements outside
    the tracked set.
    """

    elements: tuple[SourcedValue, ...]
    other: tuple[tuple[str, SourcedValue], ...] = ()

    @classmethod
    def from_map(cls, values: dict[str, SourcedValue | float],
                 other: dict[str, SourcedValue | float] | None = None) -> "Composition":
        def as_sv(v: SourcedValue | float) -> SourcedValue:
            return v if isinstance(v, SourcedValue) else SourcedValue(float(v))

        tracked = tuple(as_sv(values.get(el, 0.0)) for el in ELEMENTS)
        extra = tuple((sym, as_sv(v)) for sym, v in (other or {}).items())
        return cls(elements=tracked, other=extra)

    def value_of(self, symbol: str) -> SourcedValue:
        return self.elements[ELEMENTS.index(symbol)]

    def as_percentages(self) -> dict[str, float]:
        """Tracked + other element values as plain numbers (absent -> 0)."""
        out = {el: float(sv.value) for el, sv in zip(ELEMENTS, self.elements)}
        for sym, sv in self.other:
            out[sym] = float(sv.value)
        return out

    def to_dict(self) -> dict:
        d: dict = {el: sv.to_dict() for el, sv in zip(ELEMENTS, self.elements)}
        d["other_composition"] = [[sym, sv.to_dict()] for sym, sv in self.other]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Composition":
        return cls(
            elements=tuple(SourcedValue.from_dict(d[el]) for el in ELEMENTS),
            other=tuple((sym, SourcedValue.from_dict(sv)) for sym, sv in d.get("other_composition", [])),
        )


@dataclass(frozen=True)
class ProcessingStep:
    """One thermomechanical step; param_a is temperature (degC), param_b is
    time (h), except rolling where param_b is thickness reduction (%)."""

    kind: str
    applied: SourcedValue = field(default_factory=lambda: SourcedValue(False))
    param_a: SourcedValue | None = None
    param_b: SourcedValue | None = None

    @classmethod
    def absent(cls, kind: str) -> "ProcessingStep":
        return cls(kind=kind)

    def to_dict(self) -> dict:
        return {
            "applied": self.applied.to_dict(),
            "param_a": None if self.param_a is None else self.param_a.to_dict(),
            "param_b": None if self.param_b is None else self.param_b.to_dict(),
        }

    @classmethod
    def from_dict(cls, kind: str, d: dict) -> "ProcessingStep":
        return cls(
            kind=kind,
            applied=SourcedValue.from_dict(d["applied"]),
            param_a=None if d.get("param_a") is None else SourcedValue.from_dict(d["param_a"]),
            param_b=None if d.get("param_b") is None else SourcedValue.from_dict(d["param_b"]),
        )


@dataclass(frozen=True)
class Processing:
    homogenization: ProcessingStep = field(default_factory=lambda: ProcessingStep.absent("homogenization"))
    rolling: ProcessingStep = field(default_factory=lambda: ProcessingStep.absent("rolling"))
    recrystallization: ProcessingStep = field(default_factory=lambda: ProcessingStep.absent("recrystallization"))
    aging: ProcessingStep = field(default_factory=lambda: ProcessingStep.absent("aging"))
    additional: tuple[str, ...] = ()

    def step(self, kind: str) -> ProcessingStep:
        return getattr(self, kind)

    def steps(self) -> tuple[ProcessingStep, ...]:
        return tuple(self.step(kind) for kind in STEP_KINDS)

    def to_dict(self) -> dict:
        d: dict = {kind: self.step(kind).to_dict() for kind in STEP_KINDS}
        d["additional_processing"] = list(self.additional)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Processing":
        return cls(
            **{kind: ProcessingStep.from_dict(kind, d[kind]) for kind in STEP_KINDS},
            additional=tuple(d.get("additional_processing", [])),
        )


@dataclass(frozen=True)
class Precipitate:
    type: SourcedValue = field(default_factory=NR)
    size: SourcedValue = field(default_factory=NR)
    pct: SourcedValue = field(default_factory=NR)

    @property
    def is_populated(self) -> bool:
        return any(sv.is_reported for sv in (self.type, self.size, self.pct))

    def to_dict(self) -> dict:
        return {"type": self.type.to_dict(), "size": self.size.to_dict(), "pct": self.pct.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Precipitate":
        return cls(
            type=SourcedValue.from_dict(d["type"]),
            size=SourcedValue.from_dict(d["size"]),
            pct=SourcedValue.from_dict(d["pct"]),
        )


@dataclass(frozen=True)
class Microstructure:
    matrix_type: SourcedValue = field(default_factory=NR)
    matrix_pct: SourcedValue = field(default_factory=NR)
    precipitates: tuple[Precipitate, Precipitate, Precipitate] = (
        Precipitate(), Precipitate(), Precipitate())
    additional: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "matrix_type": self.matrix_type.to_dict(),
            "matrix_pct": self.matrix_pct.to_dict(),
            "precipitates": [p.to_dict() for p in self.precipitates],
            "additional_microstructure": list(self.additional),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Microstructure":
        precs = tuple(Precipitate.from_dict(p) for p in d["precipitates"])
        if len(precs) != 3:
            raise ValueError(f"expected 3 precipitate slots, got {len(precs)}")
        return cls(
            matrix_type=SourcedValue.from_dict(d["matrix_type"]),
            matrix_pct=SourcedValue.from_dict(d["matrix_pct"]),
            precipitates=precs,  # type: ignore[arg-type]
            additional=tuple(d.get("additional_microstructure", [])),
        )


@dataclass(frozen=True)
class PropertySet:
    uts: SourcedValue = field(default_factory=NR)
    ucs: SourcedValue = field(default_factory=NR)
    tys: SourcedValue = field(default_factory=NR)
    cys: SourcedValue = field(default_factory=NR)
    hardness: SourcedValue = field(default_factory=NR)
    tensile_ductility: SourcedValue = field(default_factory=NR)
    compressive_ductility: SourcedValue = field(default_factory=NR)
    nrt_cryo_temp: SourcedValue = field(default_factory=NR)
    nrt_cryo_strength: SourcedValue = field(default_factory=NR)
    nrt_cryo_ductility: SourcedValue = field(default_factory=NR)
    additional: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d: dict = {name: getattr(self, name).to_dict() for name in PROPERTY_FIELDS}
        d["additional_properties"] = list(self.additional)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PropertySet":
        return cls(
            **{name: SourcedValue.from_dict(d[name]) for name in PROPERTY_FIELDS},
            additional=tuple(d.get("additional_properties", [])),
        )


@dataclass(frozen=True)
class MaterialRecord:
    """One material: a unique composition + processing pair within a paper."""

    material_id: str
    paper_id: str
    composition: Composition
    processing: Processing = field(default_factory=Processing)
    microstructure: Microstructure = field(default_factory=Microstructure)
    properties: PropertySet = field(default_factory=PropertySet)

    def identity_key(self) -> tuple:
        """Composition values + processing tuple values; the material identity."""
        comp = tuple(round(float(sv.value), 6) for sv in self.composition.elements)
        extra = tuple(sorted((sym, round(float(sv.value), 6)) for sym, sv in self.composition.other))
        proc = []
        for step in self.processing.steps():
            proc.append((
                bool(step.applied.value),
                None if step.param_a is None else float(step.param_a.value),
                None if step.param_b is None else float(step.param_b.value),
            ))
        return (comp, extra, tuple(proc))

    def to_dict(self) -> dict:
        return {
            "material_id": self.material_id,
            "paper_id": self.paper_id,
            "composition": self.composition.to_dict(),
            "processing": self.processing.to_dict(),
            "microstructure": self.microstructure.to_dict(),
            "properties": self.properties.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialRecord":
        return cls(
            material_id=d["material_id"],
            paper_id=d["paper_id"],
            composition=Composition.from_dict(d["composition"]),
            processing=Processing.from_dict(d["processing"]),
            microstructure=Microstructure.from_dict(d["microstructure"]),
            properties=PropertySet.from_dict(d["properties"]),
        )


@dataclass(frozen=True)
class PaperFailure:
    """Marker persisted alongside partial results when a paper's extraction
    aborted."""

    paper_id: str
    stage: int
    reason: str

    def to_dict(self) -> dict:
        return {"paper_id": self.paper_id, "failure": {"stage": self.stage, "reason": self.reason}}

    @classmethod
    def from_dict(cls, d: dict) -> "PaperFailure":
        f = d["failure"]
        return cls(paper_id=d["paper_id"], stage=int(f["stage"]), reason=f["reason"])


@dataclass(frozen=True)
class Database:
    """Per-paper collection of material records (extraction output or ground
    truth), plus failure markers for papers whose extraction aborted."""

    records: tuple[MaterialRecord, ...] = ()
    failures: tuple[PaperFailure, ...] = ()

    def paper_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.paper_id, None)
        for failure in self.failures:
            seen.setdefault(failure.paper_id, None)
        return tuple(seen)

    def for_paper(self, paper_id: str) -> tuple[MaterialRecord, ...]:
        return tuple(rec for rec in self.records if rec.paper_id == paper_id)


GroundTruth = Database


# --- 47-feature inventory -------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    name: str
    category: str  # composition | processing | microstructure | properties
    kind: str      # element | boolean | number | label
    group: str     # tuple group this feature belongs to (its own name if single)


def _build_features() -> tuple[FeatureSpec, ...]:
    specs: list[FeatureSpec] = []
    for el in ELEMENTS:
        specs.append(FeatureSpec(el, "composition", "element", el))
    for kind in STEP_KINDS:
        third = "reduction" if kind == "rolling" else "time"
        specs.append(FeatureSpec(f"{kind}_applied", "processing", "boolean", kind))
        specs.append(FeatureSpec(f"{kind}_temperature", "processing", "number", kind))
        specs.append(FeatureSpec(f"{kind}_{third}", "processing", "number", kind))
    specs.append(FeatureSpec("matrix_type", "microstructure", "label", "matrix"))
    specs.append(FeatureSpec("matrix_pct", "microstructure", "number", "matrix"))
    for i in (1, 2, 3):
        specs.append(FeatureSpec(f"precipitate{i}_type", "microstructure", "label", f"precipitate{i}"))
        specs.append(FeatureSpec(f"precipitate{i}_size", "microstructure", "number", f"precipitate{i}"))
        specs.append(FeatureSpec(f"precipitate{i}_pct", "microstructure", "number", f"precipitate{i}"))
    for name in PROPERTY_FIELDS:
        specs.append(FeatureSpec(name, "properties", "number", name))
    return tuple(specs)


FEATURES: tuple[FeatureSpec, ...] = _build_features()
assert len(FEATURES) == 47

FEATURE_BY_NAME = {spec.name: spec for spec in FEATURES}

CATEGORIES = ("composition", "processing", "microstructure", "properties")

# Tuple groups in report order: 14 composition singles, 4 processing tuples,
# matrix + 3 precipitate tuples, 10 property singles (32 groups).
TUPLE_GROUPS: tuple[str, ...] = tuple(
    dict.fromkeys(spec.group for spec in FEATURES)
)
assert len(TUPLE_GROUPS) == 32


def get_feature(record: MaterialRecord, name: str) -> SourcedValue | None:
    """Return the SourcedValue behind one of the 47 features.

    Processing params return None when the step was never parameterized
    (absent step); callers treat None like a NOT_REPORTED value.
    """
    if name in ELEMENTS:
        return record.composition.value_of(name)
    spec = FEATURE_BY_NAME[name]
    if spec.category == "processing":
        kind, _, part = name.partition("_")
        step = record.processing.step(kind)
        if part == "applied":
            return step.applied
        if part == "temperature":
            return step.param_a
        return step.param_b  # time or reduction
    if spec.category == "microstructure":
        if name == "matrix_type":
            return record.microstructure.matrix_type
        if name == "matrix_pct":
            return record.microstructure.matrix_pct
        slot = int(name[len("precipitate")]) - 1
        part = name.split("_", 1)[1]
        return getattr(record.microstructure.precipitates[slot], part)
    return getattr(record.properties, name)


def feature_is_present(spec: FeatureSpec, sv: SourcedValue | None) -> bool:
    """Presence for scoring/quote purposes.

    Element zeros and applied=False encode absence; NOT_REPORTED and missing
    params are absent everywhere.
    """
    if sv is None or not sv.is_reported:
        return False
    if spec.kind == "element":
        return float(sv.value) != 0.0
    if spec.kind == "boolean":
        return bool(sv.value)
    return True


# --- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "path": self.path, "detail": self.detail}


def _is_number(value: Scalar) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_sv(sv: SourcedValue, path: str, out: list[Violation]) -> None:
    if sv.inferred and not sv.derivation_note:
        out.append(Violation("inferred-missing-note", path))
    if not sv.is_reported:
        if sv.source_quote:
            out.append(Violation("not-reported-with-quote", path))
        if sv.inferred:
            out.append(Violation("not-reported-inferred", path))
    if sv.qualifier not in QUALIFIERS:
        out.append(Violation("invalid-qualifier", path, sv.qualifier))


def iter_sourced_values(record: MaterialRecord) -> Iterator[tuple[str, SourcedValue]]:
    """Walk every SourcedValue in the record with its path."""
    for el, sv in zip(ELEMENTS, record.composition.elements):
        yield f"composition.{el}", sv
    for sym, sv in record.composition.other:
        yield f"composition.other_composition[{sym}]", sv
    for kind in STEP_KINDS:
        step = record.processing.step(kind)
        yield f"processing.{kind}.applied", step.applied
        if step.param_a is not None:
            yield f"processing.{kind}.param_a", step.param_a
        if step.param_b is not None:
            yield f"processing.{kind}.param_b", step.param_b
    micro = record.microstructure
    yield "microstructure.matrix_type", micro.matrix_type
    yield "microstructure.matrix_pct", micro.matrix_pct
    for i, prec in enumerate(micro.precipitates):
        yield f"microstructure.precipitates[{i}].type", prec.type
        yield f"microstructure.precipitates[{i}].size", prec.size
        yield f"microstructure.precipitates[{i}].pct", prec.pct
    for name in PROPERTY_FIELDS:
        yield f"properties.{name}", getattr(record.properties, name)


# symbols accepted in other_composition (IUPAC element symbols)
VALID_SYMBOLS = frozenset(
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm".split()
)


def validate_record(record: MaterialRecord, *, require_quotes: bool = False) -> list[Violation]:
    """Collect every invariant violation in the record.

    Total over structurally well-formed inputs: violations are returned as
    data, never raised. When ``require_quotes`` is set (source-tracked
    pipeline output), every present non-inferred value must carry a quote.
    """
    out: list[Violation] = []
    if not record.material_id:
        out.append(Violation("missing-material-id", "material_id"))
    if not record.paper_id:
        out.append(Violation("missing-paper-id", "paper_id"))

    for path, sv in iter_sourced_values(record):
        _check_sv(sv, path, out)

    comp = record.composition
    total = 0.0
    for el, sv in zip(ELEMENTS, comp.elements):
        path = f"composition.{el}"
        if not _is_number(sv.value):
            out.append(Violation("element-not-numeric", path, repr(sv.value)))
            continue
        v = float(sv.value)
        if not 0.0 <= v <= 100.0:
            out.append(Violation("element-out-of-range", path, f"{v}"))
        total += v
    for sym, sv in comp.other:
        path = f"composition.other_composition[{sym}]"
        if sym in ELEMENTS:
            out.append(Violation("other-duplicates-tracked", path))
        elif sym not in VALID_SYMBOLS:
            out.append(Violation("invalid-element-symbol", path, sym))
        if _is_number(sv.value):
            total += float(sv.value)
        else:
            out.append(Violation("element-not-numeric", path, repr(sv.value)))
    if total > 100.0 + EPS_SUM:
        out.append(Violation("composition-sum-exceeds-100", "composition", f"sum={total:g}"))

    for kind in STEP_KINDS:
        step = record.processing.step(kind)
        base = f"processing.{kind}"
        if not isinstance(step.applied.value, bool):
            out.append(Violation("applied-not-boolean", f"{base}.applied", repr(step.applied.value)))
            continue
        if not step.applied.value and (step.param_a is not None or step.param_b is not None):
            out.append(Violation("applied-false-params-present", base))
        if step.param_a is not None:
            if not _is_number(step.param_a.value):
                out.append(Violation("param-not-numeric", f"{base}.param_a"))
            elif not -273.15 <= float(step.param_a.value) <= 3500.0:
                out.append(Violation("temperature-out-of-range", f"{base}.param_a",
                                     f"{step.param_a.value}"))
        if step.param_b is not None:
            if not _is_number(step.param_b.value):
                out.append(Violation("param-not-numeric", f"{base}.param_b"))
            else:
                v = float(step.param_b.value)
                if kind == "rolling":
                    if not 0.0 < v <= 100.0:
                        out.append(Violation("reduction-out-of-range", f"{base}.param_b", f"{v}"))
                elif v <= 0.0:
                    out.append(Violation("time-not-positive", f"{base}.param_b", f"{v}"))

    micro = record.microstructure
    vol = 0.0
    for path, sv in (("microstructure.matrix_pct", micro.matrix_pct),
                     *((f"microstructure.precipitates[{i}].pct", p.pct)
                       for i, p in enumerate(micro.precipitates))):
        if not sv.is_reported:
            continue
        if not _is_number(sv.value):
            out.append(Violation("pct-not-numeric", path))
            continue
        v = float(sv.value)
        if not 0.0 < v <= 100.0:
            out.append(Violation("pct-out-of-range", path, f"{v}"))
        vol += v
    if vol > 100.0 + EPS_SUM:
        out.append(Violation("volume-sum-exceeds-100", "microstructure", f"sum={vol:g}"))
    for i, prec in enumerate(micro.precipitates):
        if prec.size.is_reported and _is_number(prec.size.value) and float(prec.size.value) <= 0.0:
            out.append(Violation("size-not-positive", f"microstructure.precipitates[{i}].size"))
        if prec.type.is_reported and not isinstance(prec.type.value, str):
            out.append(Violation("label-not-text", f"microstructure.precipitates[{i}].type"))
        if i > 0 and prec.is_populated and not micro.precipitates[i - 1].is_populated:
            out.append(Violation("precipitate-slot-gap", f"microstructure.precipitates[{i}]"))
    if micro.matrix_type.is_reported and not isinstance(micro.matrix_type.value, str):
        out.append(Violation("label-not-text", "microstructure.matrix_type"))

    props = record.properties
    for name in _STRENGTH_FIELDS:
        sv = getattr(props, name)
        if sv.is_reported and _is_number(sv.value) and float(sv.value) <= 0.0:
            out.append(Violation("strength-not-positive", f"properties.{name}"))
    if props.hardness.is_reported and _is_number(props.hardness.value) and float(props.hardness.value) <= 0.0:
        out.append(Violation("hardness-not-positive", "properties.hardness"))
    for name in _DUCTILITY_FIELDS:
        sv = getattr(props, name)
        if sv.is_reported and _is_number(sv.value) and float(sv.value) < 0.0:
            out.append(Violation("ductility-negative", f"properties.{name}"))
    if ((props.nrt_cryo_strength.is_reported or props.nrt_cryo_ductility.is_reported)
            and not props.nrt_cryo_temp.is_reported):
        out.append(Violation("nrt-cryo-temp-missing", "properties.nrt_cryo_temp"))
    if (props.nrt_cryo_temp.is_reported and _is_number(props.nrt_cryo_temp.value)
            and float(props.nrt_cryo_temp.value) < -273.15):
        out.append(Violation("temperature-out-of-range", "properties.nrt_cryo_temp"))

    if require_quotes:
        for spec in FEATURES:
            sv = get_feature(record, spec.name)
            if sv is None or not feature_is_present(spec, sv):
                continue
            if not sv.inferred and not (sv.source_quote or "").strip():
                out.append(Violation("missing-source-quote", spec.name))

    return out


def validate_database(db: Database, *, require_quotes: bool = False) -> list[Violation]:
    """Record-level violations plus database-level uniqueness rules."""
    out: list[Violation] = []
    seen_ids: set[str] = set()
    seen_keys: dict[tuple, str] = {}
    for rec in db.records:
        out.extend(validate_record(rec, require_quotes=require_quotes))
        if rec.material_id in seen_ids:
            out.append(Violation("duplicate-material-id", rec.material_id))
        seen_ids.add(rec.material_id)
        key = (rec.paper_id, rec.identity_key())
        if key in seen_keys:
            out.append(Violation("duplicate-material", rec.material_id,
                                 f"same composition+processing as {seen_keys[key]}"))
        else:
            seen_keys[key] = rec.material_id
    return out


def replace_feature(record: MaterialRecord, name: str, sv: SourcedValue | None) -> MaterialRecord:
    """Functional update of one of the 47 features (None clears a step param)."""
    spec = FEATURE_BY_NAME[name]
    if spec.kind == "element":
        idx = ELEMENTS.index(name)
        elements = list(record.composition.elements)
        elements[idx] = sv if sv is not None else SourcedValue.zero()
        return replace(record, composition=replace(record.composition, elements=tuple(elements)))
    if spec.category == "processing":
        kind, _, part = name.partition("_")
        step = record.processing.step(kind)
        if part == "applied":
            step = replace(step, applied=sv if sv is not None else SourcedValue(False))
        elif part == "temperature":
            step = replace(step, param_a=sv)
        else:
            step = replace(step, param_b=sv)
        return replace(record, processing=replace(record.processing, **{kind: step}))
    if spec.category == "microstructure":
        new_sv = sv if sv is not None else NR()
        micro = record.microstructure
        if name == "matrix_type":
            micro = replace(micro, matrix_type=new_sv)
        elif name == "matrix_pct":
            micro = replace(micro, matrix_pct=new_sv)
        else:
            slot = int(name[len("precipitate")]) - 1
            part = name.split("_", 1)[1]
            precs = list(micro.precipitates)
            precs[slot] = replace(precs[slot], **{part: new_sv})
            micro = replace(micro, precipitates=tuple(precs))  # type: ignore[arg-type]
        return replace(record, microstructure=micro)
    return replace(record, properties=replace(record.properties,
                                              **{name: sv if sv is not None else NR()}))
