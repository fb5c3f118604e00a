from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import databases
from matex.errors import MatexError
from matex.schema import (Composition, Database, MaterialRecord, Microstructure,
                          Precipitate, Processing, ProcessingStep, PropertySet,
                          SourcedValue, validate_record)
from matex.validate import (audit_sources, check_uniqueness, check_volume_fractions,
                            filter_inferred, verify_source)

PAPER = ("The recrystallized samples were further aged at 780°C for 24 h to "
         "introduce precipitates — see Fig. 2 for the “aged” microstructure.")


class TestVerifySource:
    def test_degree_and_space_folding(self) -> None:
        assert verify_source("aged at 780 °C for 24 h", PAPER)

    def test_whole_text_is_a_substring_of_itself(self) -> None:
        assert verify_source(PAPER, PAPER)

    def test_absent_quote_fails(self) -> None:
        assert not verify_source("annealed at 900°C", PAPER)

    def test_dash_and_quote_folding(self) -> None:
        assert verify_source('precipitates - see Fig. 2 for the "aged" microstructure', PAPER)

    def test_empty_quote_rejected(self) -> None:
        with pytest.raises(ValueError):
            verify_source("", PAPER)

    @given(st.data())
    @settings(max_examples=100)
    def test_invariant_under_typographic_substitution(self, data) -> None:
        quote = "aged at 780°C for 24 h"
        mangled = quote
        swaps = data.draw(st.lists(st.sampled_from([
            (" ", "  "), ("°C", " °C"), ("-", "–"), ("'", "’"),
        ]), max_size=3))
        for src, dst in swaps:
            mangled = mangled.replace(src, dst)
        assert verify_source(mangled, PAPER)


def micro(matrix_pct=None, pcts=()) -> Microstructure:
    precs = []
    for i in range(3):
        if i < len(pcts):
            precs.append(Precipitate(type=SourcedValue(f"P{i}"),
                                     pct=SourcedValue(pcts[i])))
        else:
            precs.append(Precipitate())
    return Microstructure(
        matrix_pct=SourcedValue(matrix_pct) if matrix_pct is not None
        else SourcedValue.not_reported(),
        precipitates=tuple(precs))


class TestVolumeFractions:
    def test_complete_enumeration_sums_clean(self) -> None:
        assert check_volume_fractions(micro(85.0, (10.0, 5.0))) == []

    def test_all_not_reported(self) -> None:
        assert check_volume_fractions(micro()) == []

    def test_sum_exceeds_100(self) -> None:
        findings = check_volume_fractions(micro(70.0, (25.0, 10.0)))
        assert findings and findings[0].code == "volume-sum-exceeds-100"
        assert "105" in findings[0].detail

    def test_precipitates_alone_over_100_without_matrix(self) -> None:
        findings = check_volume_fractions(micro(None, (60.0, 41.0)))
        assert {f.code for f in findings} == {"volume-sum-exceeds-100",
                                              "precipitates-exceed-100"}


def record(mid: str, elements: dict, aging: tuple | None = None,
           paper: str = "p1") -> MaterialRecord:
    processing = Processing()
    if aging is not None:
        temp, hours = aging
        processing = Processing(aging=ProcessingStep(
            "aging", SourcedValue(True), SourcedValue(temp), SourcedValue(hours)))
    return MaterialRecord(material_id=mid, paper_id=paper,
                          composition=Composition.from_map(elements),
                          processing=processing)


class TestUniqueness:
    def test_identical_records_group(self) -> None:
        db = Database(records=(record("M1", {"Fe": 50.0, "Ni": 50.0}),
                               record("M2", {"Fe": 50.0, "Ni": 50.0})))
        groups = check_uniqueness(db)
        assert len(groups) == 1
        assert {r.material_id for r in groups[0]} == {"M1", "M2"}

    def test_tolerance_applies_per_element(self) -> None:
        db = Database(records=(record("M1", {"Fe": 50.0, "Ni": 50.0}),
                               record("M2", {"Fe": 50.08, "Ni": 49.92})))
        assert len(check_uniqueness(db)) == 1

    def test_different_aging_times_stay_distinct(self) -> None:
        db = Database(records=(record("M1", {"Fe": 50.0}, aging=(780.0, 24.0)),
                               record("M2", {"Fe": 50.0}, aging=(780.0, 50.0))))
        assert check_uniqueness(db) == []

    def test_cross_paper_records_never_group(self) -> None:
        db = Database(records=(record("M1", {"Fe": 50.0}, paper="p1"),
                               record("M2", {"Fe": 50.0}, paper="p2")))
        assert check_uniqueness(db) == []

    def test_empty_database(self) -> None:
        assert check_uniqueness(Database()) == []

    def test_grouping_is_an_equivalence(self) -> None:
        # chain within tolerance of the first record groups transitively
        db = Database(records=(record("M1", {"Fe": 50.00}),
                               record("M2", {"Fe": 50.06}),
                               record("M3", {"Fe": 50.09})))
        groups = check_uniqueness(db)
        assert len(groups) == 1 and len(groups[0]) == 3


def _inferred(value: float) -> SourcedValue:
    return SourcedValue(value, inferred=True, derivation_note="balance")


class TestFilterInferred:
    def base_db(self) -> Database:
        rec = MaterialRecord(
            material_id="M1", paper_id="p1",
            composition=Composition.from_map({"Fe": SourcedValue(50.0, "Fe50 (at.%)")}),
            microstructure=Microstructure(
                matrix_pct=SourcedValue(85.0, "matrix 85%"),
                matrix_type=SourcedValue("FCC", "FCC matrix"),
                precipitates=(Precipitate(type=SourcedValue("L12", "L12 at 10%"),
                                          pct=_inferred(5.0)),
                              Precipitate(), Precipitate())),
            properties=PropertySet(uts=SourcedValue(700.0, "UTS of 700 MPa")))
        return Database(records=(rec,))

    def test_keep_is_identity(self) -> None:
        db = self.base_db()
        assert filter_inferred(db, "keep") is db

    def test_drop_clears_only_inferred(self) -> None:
        db = filter_inferred(self.base_db(), "drop")
        rec = db.records[0]
        assert not rec.microstructure.precipitates[0].pct.is_reported
        assert rec.microstructure.precipitates[0].type.value == "L12"
        assert rec.properties.uts.value == 700.0

    def test_drop_without_inferred_is_identity(self) -> None:
        db = self.base_db()
        clean = filter_inferred(db, "drop")
        again = filter_inferred(clean, "drop")
        assert clean == again

    def test_drop_unverified_needs_texts(self) -> None:
        with pytest.raises(MatexError):
            filter_inferred(self.base_db(), "drop-unverified")

    def test_drop_unverified_clears_failed_quotes(self) -> None:
        text = "Fe50 (at.%) alloy with an FCC matrix, matrix 85%, L12 at 10%."
        db = filter_inferred(self.base_db(), "drop-unverified", {"p1": text})
        rec = db.records[0]
        assert not rec.properties.uts.is_reported          # quote not in text
        assert rec.microstructure.matrix_pct.value == 85.0  # verified quote kept
        assert not rec.microstructure.precipitates[0].pct.is_reported  # inferred dropped

    def test_unknown_policy_rejected(self) -> None:
        with pytest.raises(ValueError):
            filter_inferred(self.base_db(), "purge")

    @given(databases(), st.sampled_from(["keep", "drop"]))
    @settings(max_examples=60)
    def test_idempotent(self, db: Database, policy: str) -> None:
        once = filter_inferred(db, policy)
        twice = filter_inferred(once, policy)
        assert once == twice

    @given(databases())
    @settings(max_examples=40)
    def test_filtered_records_stay_valid(self, db: Database) -> None:
        for rec in filter_inferred(db, "drop").records:
            assert validate_record(rec) == []


class TestAuditSources:
    def test_clean_database_no_findings(self) -> None:
        db = TestFilterInferred().base_db()
        text = ("Fe50 (at.%) alloy with an FCC matrix, matrix 85%, L12 at 10%, "
                "and a UTS of 700 MPa.")
        findings, warnings = audit_sources(db, {"p1": text})
        assert findings == [] and warnings == []

    def test_planted_bad_quote_is_found(self) -> None:
        db = TestFilterInferred().base_db()
        rec = db.records[0]
        bad = replace(rec, properties=PropertySet(
            uts=SourcedValue(700.0, "a quote that is not in the text")))
        findings, _ = audit_sources(Database(records=(bad,)),
                                    {"p1": "Fe50 (at.%) FCC matrix, matrix 85%, L12 at 10%."})
        assert len(findings) == 1
        assert findings[0].code == "source-verification-failed"
        assert findings[0].material_id == "M1"

    def test_quoteless_database_warns_no_ledger(self) -> None:
        db = filter_inferred(TestFilterInferred().base_db(), "drop")
        stripped = []
        for rec in db.records:
            d = rec.to_dict()

            def scrub(node):
                if isinstance(node, dict):
                    for k in node:
                        if k == "source_quote":
                            node[k] = None
                        else:
                            scrub(node[k])
                elif isinstance(node, list):
                    for v in node:
                        scrub(v)

            scrub(d)
            stripped.append(MaterialRecord.from_dict(d))
        findings, warnings = audit_sources(Database(records=tuple(stripped)), {"p1": "text"})
        assert findings == []
        assert warnings and "no ledger" in warnings[0]
