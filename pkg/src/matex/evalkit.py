"""Scores an extraction database against ground truth.

Feature-level evaluation treats each of the 47 features independently;
tuple-level evaluation groups interdependent features (one tuple per
processing step, the matrix pair, each precipitate triple) and scores the
group as a unit, while composition and property features stay single.
Materials are first aligned per paper; ground-truth records with no
counterpart are penalized as all-FN, extracted records with no counterpart
as all-FP.

Presence semantics follow the ground-truth encoding: element zeros,
applied=False, null params, and NOT_REPORTED all count as absent, so mutual
absence scores TN.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import normalize, schema
from .errors import PaperSetMismatch
from .schema import Database, FeatureSpec, MaterialRecord, SourcedValue

# Numeric match tolerance: 1% relative or one unit in the last reported
# decimal place, whichever is wider; hedged ("approximate") values widen the
# relative part to 5%.
REL_TOL = 0.01
REL_TOL_APPROX = 0.05

SIMILARITY_THRESHOLD = 0.95


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "accuracy": self.accuracy}


def metrics(counts: ConfusionCounts) -> Metrics:
    """Precision/recall/F1/accuracy with empty-class conventions.

    0/0 ratios score 1.0 (an empty class extracted as empty is perfect);
    once any positive exists (fp or fn nonzero), tp=0 forces f1=0.
    """
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    if tp == 0:
        f1 = 1.0 if fp == 0 and fn == 0 else 0.0
    else:
        f1 = 2 * tp / (2 * tp + fp + fn)
    accuracy = (tp + tn) / counts.total if counts.total else 1.0
    return Metrics(precision, recall, f1, accuracy)


# --- material alignment -----------------------------------------------------

@dataclass(frozen=True)
class MatchedPair:
    extracted_id: str
    gt_id: str
    similarity: float


@dataclass(frozen=True)
class MaterialAlignment:
    matched: tuple[MatchedPair, ...]
    missed: tuple[str, ...]   # gt ids without a counterpart
    extra: tuple[str, ...]    # extracted ids without a counterpart


def _composition_similarity(a: MaterialRecord, b: MaterialRecord) -> float:
    pa, pb = a.composition.as_percentages(), b.composition.as_percentages()
    l1 = sum(abs(pa.get(el, 0.0) - pb.get(el, 0.0)) for el in set(pa) | set(pb))
    return 1.0 - l1 / 200.0


def _applied_booleans(rec: MaterialRecord) -> tuple[bool, ...]:
    return tuple(bool(step.applied.value) for step in rec.processing.steps())


def _param_discrepancy(a: MaterialRecord, b: MaterialRecord) -> float:
    total = 0.0
    for sa, sb in zip(a.processing.steps(), b.processing.steps()):
        for pa, pb in ((sa.param_a, sb.param_a), (sa.param_b, sb.param_b)):
            va = None if pa is None else float(pa.value)
            vb = None if pb is None else float(pb.value)
            if va is None and vb is None:
                continue
            if va is None or vb is None:
                total += abs(va if va is not None else vb)  # type: ignore[arg-type]
            else:
                total += abs(va - vb)
    return total


def align_materials(extracted: tuple[MaterialRecord, ...],
                    gt: tuple[MaterialRecord, ...]) -> MaterialAlignment:
    """Greedy maximum-similarity matching of extracted records onto ground
    truth within one paper.

    Eligible pairs need composition similarity >= 0.95 (1 - L1/200) and
    identical applied booleans; ties break on lower combined parameter
    discrepancy, then document order.
    """
    candidates = []
    for i, ex in enumerate(extracted):
        for j, g in enumerate(gt):
            if _applied_booleans(ex) != _applied_booleans(g):
                continue
            sim = _composition_similarity(ex, g)
            if sim >= SIMILARITY_THRESHOLD:
                candidates.append((-sim, _param_discrepancy(ex, g), i, j))
    candidates.sort()

    used_ex: set[int] = set()
    used_gt: set[int] = set()
    matched: list[MatchedPair] = []
    for neg_sim, _, i, j in candidates:
        if i in used_ex or j in used_gt:
            continue
        used_ex.add(i)
        used_gt.add(j)
        matched.append(MatchedPair(extracted[i].material_id, gt[j].material_id, -neg_sim))

    missed = tuple(g.material_id for j, g in enumerate(gt) if j not in used_gt)
    extra = tuple(ex.material_id for i, ex in enumerate(extracted) if i not in used_ex)
    return MaterialAlignment(tuple(matched), missed, extra)


def align_all(db: Database, gt: Database) -> dict[str, MaterialAlignment]:
    papers = list(dict.fromkeys((*gt.paper_ids(), *db.paper_ids())))
    return {pid: align_materials(db.for_paper(pid), gt.for_paper(pid)) for pid in papers}


# --- per-feature classification ----------------------------------------------

def _last_decimal_unit(value: float) -> float:
    s = repr(float(value))
    if "e" in s or "E" in s:
        return 0.0
    _, _, frac = s.partition(".")
    frac = frac.rstrip("0")
    return 1.0 if not frac else 10.0 ** -len(frac)


def _numbers_match(gt_val: float, ex_val: float, gt_sv: SourcedValue, ex_sv: SourcedValue) -> bool:
    rel = REL_TOL_APPROX if "approximate" in (gt_sv.qualifier, ex_sv.qualifier) else REL_TOL
    tol = max(rel * abs(gt_val), _last_decimal_unit(gt_val))
    return abs(gt_val - ex_val) <= tol


def _values_match(spec: FeatureSpec, gt_sv: SourcedValue, ex_sv: SourcedValue) -> bool:
    if spec.kind == "label":
        return normalize.phase_codes_equal(str(gt_sv.value), str(ex_sv.value))
    if spec.kind == "boolean":
        return bool(gt_sv.value) == bool(ex_sv.value)
    return _numbers_match(float(gt_sv.value), float(ex_sv.value), gt_sv, ex_sv)


def classify_feature(gt_sv: SourcedValue | None, ex_sv: SourcedValue | None,
                     spec: FeatureSpec) -> str:
    """One confusion-matrix outcome ("tp"/"tn"/"fp"/"fn") for one feature."""
    gt_present = gt_sv is not None and schema.feature_is_present(spec, gt_sv)
    ex_present = ex_sv is not None and schema.feature_is_present(spec, ex_sv)
    if not gt_present and not ex_present:
        return "tn"
    if gt_present and not ex_present:
        return "fn"
    if not gt_present and ex_present:
        return "fp"
    return "tp" if _values_match(spec, gt_sv, ex_sv) else "fp"  # type: ignore[arg-type]


def _one(outcome: str) -> ConfusionCounts:
    return ConfusionCounts(**{outcome: 1})


def feature_confusion(db: Database, gt: Database,
                      alignments: dict[str, MaterialAlignment] | None = None,
                      include_penalties: bool = True) -> dict[str, ConfusionCounts]:
    """Confusion counts for each of the 47 features across all papers.

    Matched pairs contribute one outcome per feature; every missed material
    adds one FN and every extra material one FP to all 47 features (the
    penalty rows), unless ``include_penalties`` is off.
    """
    alignments = alignments if alignments is not None else align_all(db, gt)
    counts = {spec.name: ConfusionCounts() for spec in schema.FEATURES}
    by_id_db = {rec.material_id: rec for rec in db.records}
    by_id_gt = {rec.material_id: rec for rec in gt.records}
    for alignment in alignments.values():
        for pair in alignment.matched:
            ex, g = by_id_db[pair.extracted_id], by_id_gt[pair.gt_id]
            for spec in schema.FEATURES:
                outcome = classify_feature(schema.get_feature(g, spec.name),
                                           schema.get_feature(ex, spec.name), spec)
                counts[spec.name] += _one(outcome)
        if include_penalties:
            for _ in alignment.missed:
                for spec in schema.FEATURES:
                    counts[spec.name] += ConfusionCounts(fn=1)
            for _ in alignment.extra:
                for spec in schema.FEATURES:
                    counts[spec.name] += ConfusionCounts(fp=1)
    return counts


# --- tuple-level classification ----------------------------------------------

_GROUP_FEATURES: dict[str, tuple[FeatureSpec, ...]] = {
    group: tuple(spec for spec in schema.FEATURES if spec.group == group)
    for group in schema.TUPLE_GROUPS
}


def group_category(group: str) -> str:
    return _GROUP_FEATURES[group][0].category


def classify_tuple(gt_rec: MaterialRecord, ex_rec: MaterialRecord, group: str) -> str:
    """Joint outcome for one tuple group.

    TN when absent on both sides; FP when any extracted component is wrong
    or unsupported; FN when the extraction lacks components the ground truth
    has; TP only on an exact joint match.
    """
    specs = _GROUP_FEATURES[group]
    gt_present: dict[str, SourcedValue] = {}
    ex_present: dict[str, SourcedValue] = {}
    for spec in specs:
        g_sv = schema.get_feature(gt_rec, spec.name)
        e_sv = schema.get_feature(ex_rec, spec.name)
        if g_sv is not None and schema.feature_is_present(spec, g_sv):
            gt_present[spec.name] = g_sv
        if e_sv is not None and schema.feature_is_present(spec, e_sv):
            ex_present[spec.name] = e_sv

    if not gt_present and not ex_present:
        return "tn"
    if not ex_present:
        return "fn"
    for name in set(gt_present) & set(ex_present):
        if not _values_match(schema.FEATURE_BY_NAME[name], gt_present[name], ex_present[name]):
            return "fp"
    if set(ex_present) - set(gt_present):
        return "fp"
    if set(gt_present) - set(ex_present):
        return "fn"
    return "tp"


def tuple_confusion(db: Database, gt: Database,
                    alignments: dict[str, MaterialAlignment] | None = None,
                    include_penalties: bool = True) -> dict[str, ConfusionCounts]:
    """Confusion counts for the 32 tuple groups (14 composition singles, 4
    processing tuples, matrix, 3 precipitate tuples, 10 property singles).

    Single-feature groups score exactly as in feature-level evaluation.
    Missed/extra materials add one FN/FP per group.
    """
    alignments = alignments if alignments is not None else align_all(db, gt)
    counts = {group: ConfusionCounts() for group in schema.TUPLE_GROUPS}
    by_id_db = {rec.material_id: rec for rec in db.records}
    by_id_gt = {rec.material_id: rec for rec in gt.records}
    for alignment in alignments.values():
        for pair in alignment.matched:
            ex, g = by_id_db[pair.extracted_id], by_id_gt[pair.gt_id]
            for group in schema.TUPLE_GROUPS:
                specs = _GROUP_FEATURES[group]
                if len(specs) == 1:
                    outcome = classify_feature(schema.get_feature(g, specs[0].name),
                                               schema.get_feature(ex, specs[0].name), specs[0])
                else:
                    outcome = classify_tuple(g, ex, group)
                counts[group] += _one(outcome)
        if include_penalties:
            for _ in alignment.missed:
                for group in schema.TUPLE_GROUPS:
                    counts[group] += ConfusionCounts(fn=1)
            for _ in alignment.extra:
                for group in schema.TUPLE_GROUPS:
                    counts[group] += ConfusionCounts(fp=1)
    return counts


# --- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    name: str
    category: str
    counts: ConfusionCounts
    metrics: Metrics

    def to_dict(self) -> dict:
        return {"name": self.name, "category": self.category,
                **self.counts.to_dict(), **self.metrics.to_dict()}


@dataclass(frozen=True)
class MetricsReport:
    mode: str  # feature | tuple
    rows: tuple[ReportRow, ...]
    category_means: dict[str, Metrics]
    overall_pooled: Metrics
    overall_macro: Metrics
    pooled_counts: ConfusionCounts
    matched_count: int
    missed_count: int
    extra_count: int
    gt_count: int
    miss_rate: float
    include_penalties: bool = True

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "include_penalties": self.include_penalties,
            "rows": [r.to_dict() for r in self.rows],
            "category_means": {cat: m.to_dict() for cat, m in self.category_means.items()},
            "overall_pooled": self.overall_pooled.to_dict(),
            "overall_macro": self.overall_macro.to_dict(),
            "pooled_counts": self.pooled_counts.to_dict(),
            "matched_count": self.matched_count,
            "missed_count": self.missed_count,
            "extra_count": self.extra_count,
            "gt_count": self.gt_count,
            "miss_rate": self.miss_rate,
        }


def _mean_metrics(rows: list[ReportRow]) -> Metrics:
    n = len(rows)
    if not n:
        return Metrics(1.0, 1.0, 1.0, 1.0)
    return Metrics(
        sum(r.metrics.precision for r in rows) / n,
        sum(r.metrics.recall for r in rows) / n,
        sum(r.metrics.f1 for r in rows) / n,
        sum(r.metrics.accuracy for r in rows) / n,
    )


def report(db: Database, gt: Database, mode: str = "feature",
           include_penalties: bool = True) -> MetricsReport:
    """Full metrics report at feature or tuple granularity.

    Category values are unweighted means over the category's rows; the
    overall block is emitted both ways (pooled counts and macro average)
    since either aggregation is defensible.
    """
    if mode not in ("feature", "tuple"):
        raise ValueError(f"unknown mode {mode!r}")
    alignments = align_all(db, gt)
    if mode == "feature":
        counts = feature_confusion(db, gt, alignments, include_penalties)
        names = [spec.name for spec in schema.FEATURES]
        categories = {spec.name: spec.category for spec in schema.FEATURES}
    else:
        counts = tuple_confusion(db, gt, alignments, include_penalties)
        names = list(schema.TUPLE_GROUPS)
        categories = {group: group_category(group) for group in schema.TUPLE_GROUPS}

    rows = tuple(ReportRow(name, categories[name], counts[name], metrics(counts[name]))
                 for name in names)
    category_means = {
        cat: _mean_metrics([r for r in rows if r.category == cat])
        for cat in schema.CATEGORIES
    }
    pooled = ConfusionCounts()
    for name in names:
        pooled += counts[name]

    matched = sum(len(a.matched) for a in alignments.values())
    missed = sum(len(a.missed) for a in alignments.values())
    extra = sum(len(a.extra) for a in alignments.values())
    gt_count = len(gt.records)
    return MetricsReport(
        mode=mode,
        rows=rows,
        category_means=category_means,
        overall_pooled=metrics(pooled),
        overall_macro=_mean_metrics(list(rows)),
        pooled_counts=pooled,
        matched_count=matched,
        missed_count=missed,
        extra_count=extra,
        gt_count=gt_count,
        miss_rate=(missed / gt_count) if gt_count else 0.0,
        include_penalties=include_penalties,
    )


def render_table(rep: MetricsReport) -> str:
    """Human-readable table: per-feature rows grouped by category with
    Average rows, then the overall and completeness summary."""
    lines = []
    header = f"{'feature':34s} {'TP':>5s} {'FP':>5s} {'TN':>5s} {'FN':>5s}  {'P':>6s} {'R':>6s} {'F1':>6s} {'Acc':>6s}"
    lines.append(f"== {rep.mode}-level evaluation ==")
    lines.append(header)
    lines.append("-" * len(header))
    for cat in schema.CATEGORIES:
        rows = [r for r in rep.rows if r.category == cat]
        if not rows:
            continue
        lines.append(f"[{cat}]")
        for r in rows:
            c, m = r.counts, r.metrics
            lines.append(f"{r.name:34s} {c.tp:5d} {c.fp:5d} {c.tn:5d} {c.fn:5d}  "
                         f"{m.precision:6.3f} {m.recall:6.3f} {m.f1:6.3f} {m.accuracy:6.3f}")
        mean = rep.category_means[cat]
        lines.append(f"{'Average':34s} {'':5s} {'':5s} {'':5s} {'':5s}  "
                     f"{mean.precision:6.3f} {mean.recall:6.3f} {mean.f1:6.3f} {mean.accuracy:6.3f}")
    c, m = rep.pooled_counts, rep.overall_pooled
    lines.append("-" * len(header))
    lines.append(f"{'Overall (pooled counts)':34s} {c.tp:5d} {c.fp:5d} {c.tn:5d} {c.fn:5d}  "
                 f"{m.precision:6.3f} {m.recall:6.3f} {m.f1:6.3f} {m.accuracy:6.3f}")
    mm = rep.overall_macro
    lines.append(f"{'Overall (macro average)':34s} {'':5s} {'':5s} {'':5s} {'':5s}  "
                 f"{mm.precision:6.3f} {mm.recall:6.3f} {mm.f1:6.3f} {mm.accuracy:6.3f}")
    lines.append(f"materials: matched={rep.matched_count} missed={rep.missed_count} "
                 f"extra={rep.extra_count} of {rep.gt_count} ground-truth "
                 f"(miss rate {rep.miss_rate:.4f})")
    return "\n".join(lines) + "\n"


def render_comparison(labeled: list[tuple[str, MetricsReport, MetricsReport]]) -> str:
    """Side-by-side variant table: one column per database, P/R/F1/Acc rows
    at both evaluation levels."""
    if not labeled:
        raise ValueError("nothing to compare")
    labels = [label for label, _, _ in labeled]
    width = max(16, *(len(label) + 2 for label in labels))
    head = f"{'metric':28s}" + "".join(f"{label:>{width}s}" for label in labels)
    lines = [head, "-" * len(head)]
    for level, idx in (("feature", 1), ("tuple", 2)):
        for metric_name in ("precision", "recall", "f1", "accuracy"):
            row = f"{level + ' ' + metric_name:28s}"
            for entry in labeled:
                rep = entry[idx]
                row += f"{getattr(rep.overall_pooled, metric_name):>{width}.3f}"
            lines.append(row)
    lines.append("-" * len(head))
    row = f"{'missed materials':28s}"
    for _, feat_rep, _ in labeled:
        row += f"{feat_rep.missed_count:>{width}d}"
    lines.append(row)
    row = f"{'extra materials':28s}"
    for _, feat_rep, _ in labeled:
        row += f"{feat_rep.extra_count:>{width}d}"
    lines.append(row)
    return "\n".join(lines) + "\n"


def check_paper_sets(dbs: list[Database]) -> None:
    """Raise PaperSetMismatch unless all databases cover the same papers."""
    if not dbs:
        return
    base = set(dbs[0].paper_ids())
    for other in dbs[1:]:
        if set(other.paper_ids()) != base:
            raise PaperSetMismatch(
                f"paper sets differ: {sorted(base)} vs {sorted(set(other.paper_ids()))}")
