from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import strategies as st

from matex.schema import (ELEMENTS, Composition, Database, MaterialRecord,
                          Microstructure, Precipitate, Processing, ProcessingStep,
                          PropertySet, SourcedValue)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


# --- hypothesis strategies ---------------------------------------------------

_QUOTE = st.one_of(st.none(), st.text(min_size=1, max_size=20))

_finite = dict(allow_nan=False, allow_infinity=False)


def _sv(value, quote=None, inferred=False) -> SourcedValue:
    return SourcedValue(value=value, source_quote=quote, inferred=inferred,
                        derivation_note="derived" if inferred else None)


@st.composite
def present_number(draw, min_value: float, max_value: float) -> SourcedValue:
    value = draw(st.floats(min_value=min_value, max_value=max_value, **_finite))
    quote = draw(_QUOTE)
    inferred = quote is None and draw(st.booleans())
    return _sv(value, quote, inferred)


@st.composite
def maybe_number(draw, min_value: float, max_value: float) -> SourcedValue:
    if draw(st.booleans()):
        return SourcedValue.not_reported()
    return draw(present_number(min_value, max_value))


@st.composite
def compositions(draw) -> Composition:
    count = draw(st.integers(min_value=0, max_value=6))
    symbols = draw(st.permutations(ELEMENTS))[:count]
    values = {}
    for symbol in symbols:
        values[symbol] = draw(present_number(0.1, 15.0))
    other = {}
    if draw(st.booleans()):
        other[draw(st.sampled_from(["Zr", "Hf", "W", "Re", "C"]))] = \
            draw(present_number(0.01, 2.0))
    return Composition.from_map(values, other)


@st.composite
def steps(draw, kind: str) -> ProcessingStep:
    if draw(st.booleans()):
        return ProcessingStep.absent(kind)
    applied = _sv(True, draw(_QUOTE))
    param_a = None
    param_b = None
    if draw(st.booleans()):
        param_a = draw(present_number(-100.0, 1500.0))
    if draw(st.booleans()):
        if kind == "rolling":
            param_b = draw(present_number(1.0, 100.0))
        else:
            param_b = draw(present_number(0.1, 500.0))
    return ProcessingStep(kind=kind, applied=applied, param_a=param_a, param_b=param_b)


@st.composite
def microstructures(draw) -> Microstructure:
    matrix_type = SourcedValue.not_reported()
    if draw(st.booleans()):
        matrix_type = _sv(draw(st.sampled_from(["FCC", "BCC", "L12", "γ′", "σ phase"])),
                          draw(_QUOTE))
    matrix_pct = draw(maybe_number(1.0, 60.0))
    slots = draw(st.integers(min_value=0, max_value=3))
    precipitates = []
    for i in range(3):
        if i < slots:
            precipitates.append(Precipitate(
                type=_sv(draw(st.sampled_from(["L12", "B2", "sigma", "η"])), draw(_QUOTE)),
                size=draw(maybe_number(1.0, 500.0)),
                pct=draw(maybe_number(0.5, 10.0)),
            ))
        else:
            precipitates.append(Precipitate())
    return Microstructure(matrix_type=matrix_type, matrix_pct=matrix_pct,
                          precipitates=tuple(precipitates))


@st.composite
def property_sets(draw) -> PropertySet:
    values = {
        "uts": draw(maybe_number(10.0, 3000.0)),
        "ucs": draw(maybe_number(10.0, 3000.0)),
        "tys": draw(maybe_number(10.0, 3000.0)),
        "cys": draw(maybe_number(10.0, 3000.0)),
        "hardness": draw(maybe_number(10.0, 900.0)),
        "tensile_ductility": draw(maybe_number(0.0, 90.0)),
        "compressive_ductility": draw(maybe_number(0.0, 90.0)),
    }
    if draw(st.booleans()):
        values["nrt_cryo_temp"] = draw(present_number(-196.0, 1000.0))
        values["nrt_cryo_strength"] = draw(maybe_number(10.0, 3000.0))
        values["nrt_cryo_ductility"] = draw(maybe_number(0.0, 90.0))
    return PropertySet(**values)


@st.composite
def material_records(draw, paper_id: str = "paper-x", material_id: str | None = None
                     ) -> MaterialRecord:
    mid = material_id or f"M{draw(st.integers(min_value=1, max_value=99))}"
    return MaterialRecord(
        material_id=mid,
        paper_id=paper_id,
        composition=draw(compositions()),
        processing=Processing(
            homogenization=draw(steps("homogenization")),
            rolling=draw(steps("rolling")),
            recrystallization=draw(steps("recrystallization")),
            aging=draw(steps("aging")),
        ),
        microstructure=draw(microstructures()),
        properties=draw(property_sets()),
    )


@st.composite
def databases(draw, max_records: int = 4) -> Database:
    count = draw(st.integers(min_value=0, max_value=max_records))
    records = tuple(
        draw(material_records(material_id=f"M{i + 1}")) for i in range(count)
    )
    return Database(records=records)
