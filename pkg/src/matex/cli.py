"""Operator entry point.

Subcommands: extract (run a corpus through a pipeline variant), evaluate
(score a database against ground truth), compare (side-by-side variant
table), audit (re-verify source quotes).

Exit codes: 0 success, 1 extraction finished with per-paper failures,
2 usage/input/credential errors. The API key comes only from the
MATEX_API_KEY environment variable; everything else lives in the config
file (plain "key value" lines) with flags taking precedence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import evalkit, llm, pipeline, store, validate
from .errors import CredentialMissing, MatexError

CONFIG_KEYS = ("model_name", "endpoint", "reasoning_effort", "max_json_repairs",
               "request_timeout", "token_budget_per_paper")


def _read_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        if key not in CONFIG_KEYS:
            raise MatexError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def _pipeline_config(args, file_cfg: dict[str, str]) -> pipeline.PipelineConfig:
    def pick(flag_value, key: str, default):
        if flag_value is not None:
            return flag_value
        if key in file_cfg:
            return type(default)(file_cfg[key])
        return default

    return pipeline.PipelineConfig(
        variant=args.variant,
        model_name=pick(args.model, "model_name", "o3-mini"),
        reasoning_effort=pick(args.effort, "reasoning_effort", "high"),
        max_json_repairs=pick(None, "max_json_repairs", 2),
        request_timeout=pick(None, "request_timeout", 120.0),
        token_budget_per_paper=pick(None, "token_budget_per_paper", 21500),
    )


def _make_backend(args, file_cfg: dict[str, str]) -> llm.Backend:
    if args.backend == "live":
        endpoint = args.endpoint or file_cfg.get("endpoint")
        if not endpoint:
            raise MatexError("live backend needs an endpoint (flag --endpoint or config)")
        return llm.LiveBackend(endpoint)
    if args.backend == "replay":
        if not args.replay:
            raise MatexError("replay backend needs --replay <transcript file>")
        return llm.ReplayBackend(store.load_transcript(args.replay))
    if not args.script:
        raise MatexError("mock backend needs --script <scripts json>")
    scripts = json.loads(Path(args.script).read_text(encoding="utf-8"))
    return llm.MockBackend(scripts)


def _load_texts(manifest_path: str) -> dict[str, str]:
    texts = {}
    for entry in store.load_manifest(manifest_path):
        if entry.error:
            continue
        texts[entry.paper_id] = entry.text_path.read_text(encoding="utf-8")
    return texts


def cmd_extract(args) -> int:
    file_cfg = _read_config(args.config)
    config = _pipeline_config(args, file_cfg)
    backend = _make_backend(args, file_cfg)

    papers = []
    for entry in store.load_manifest(args.manifest):
        if entry.error:
            print(f"skip {entry.paper_id}: {entry.error}", file=sys.stderr)
            continue
        text = entry.text_path.read_text(encoding="utf-8")
        if not text.strip():
            print(f"skip {entry.paper_id}: empty text", file=sys.stderr)
            continue
        papers.append((entry.paper_id, text))

    jobs = args.jobs or os.cpu_count() or 1
    db, transcript, changes = pipeline.run_corpus(papers, config, backend, jobs=jobs)

    out = Path(args.out)
    store.save_database(db, out / "database.jsonl")
    store.save_transcript(transcript.entries, out / "transcripts.jsonl")
    store.save_changelog(changes, out / "changelog.jsonl")

    if db.failures:
        for failure in db.failures:
            print(f"FAILED {failure.paper_id}: stage {failure.stage}: {failure.reason}",
                  file=sys.stderr)
        print(f"{len(db.failures)} paper(s) failed, {len(db.records)} record(s) extracted",
              file=sys.stderr)
        return 1
    print(f"extracted {len(db.records)} record(s) from {len(papers)} paper(s) -> {out}")
    return 0


def _apply_filter(db, args):
    if args.filter_inferred == "keep":
        return db
    texts = None
    if args.filter_inferred == "drop-unverified":
        if not args.texts:
            raise MatexError("--filter-inferred drop-unverified needs --texts <manifest>")
        texts = _load_texts(args.texts)
    return validate.filter_inferred(db, args.filter_inferred, texts)


def cmd_evaluate(args) -> int:
    db = store.load_database(args.db)
    gt = store.load_ground_truth(args.gt)
    db = _apply_filter(db, args)

    modes = ("feature", "tuple") if args.mode == "both" else (args.mode,)
    out = Path(args.out) if args.out else None
    for mode in modes:
        rep = evalkit.report(db, gt, mode=mode, include_penalties=not args.no_penalties)
        table = evalkit.render_table(rep)
        if out:
            store.save_report(rep.to_dict(), out / f"report_{mode}.jsonl")
            (out / f"report_{mode}.txt").write_text(table, encoding="utf-8")
        print(table, end="")
    return 0


def cmd_compare(args) -> int:
    gt = store.load_ground_truth(args.gt)
    dbs = [store.load_database(path) for path in args.db]
    evalkit.check_paper_sets(dbs)
    labeled = []
    for path, db in zip(args.db, dbs):
        label = Path(path).stem
        labeled.append((label,
                        evalkit.report(db, gt, mode="feature"),
                        evalkit.report(db, gt, mode="tuple")))
    table = evalkit.render_comparison(labeled)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_audit(args) -> int:
    db = store.load_database(args.db)
    texts = _load_texts(args.texts)
    findings, warnings = validate.audit_sources(db, texts)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(f.to_dict(), ensure_ascii=False) for f in findings]
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    for finding in findings:
        print(f"{finding.paper_id}\t{finding.material_id}\t{finding.code}\t{finding.detail}")
    print(f"{len(findings)} finding(s)", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run a corpus through an extraction pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", required=True, choices=pipeline.VARIANTS)
    p.add_argument("--backend", required=True, choices=("live", "replay", "mock"))
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--replay", help="transcript file for the replay backend")
    p.add_argument("--script", help="scripts json for the mock backend")
    p.add_argument("--model", default=None)
    p.add_argument("--effort", default=None, choices=pipeline.EFFORTS)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--jobs", type=int, default=None,
                   help="concurrent papers (default: logical cores)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="score a database against ground truth")
    p.add_argument("--db", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", default="both", choices=("feature", "tuple", "both"))
    p.add_argument("--filter-inferred", default="keep",
                   choices=("keep", "drop", "drop-unverified"))
    p.add_argument("--texts", help="manifest for drop-unverified filtering")
    p.add_argument("--no-penalties", action="store_true",
                   help="score matched materials only (skip missed/extra penalties)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="side-by-side table for several databases")
    p.add_argument("--db", action="append", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("audit", help="re-verify source quotes against article text")
    p.add_argument("--db", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CredentialMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MatexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
