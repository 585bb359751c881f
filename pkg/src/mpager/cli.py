"""Command-line entry point: ``mpager {normalize,score,rover,mpa,report}``.

Exit codes: 0 success, 1 data error, 2 config error, 3 transport error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from enum import IntEnum
from pathlib import Path

from .corpus import CorpusError, load_jsonl, load_trn, format_trn_line, parse_trn_line
from .llm_client import ConfigError
from .pipeline import ANCHOR, MERGED, load_scheme, read_report, run_mpa
from .rover import VoteOptions, rover_combine
from .scoring import (
    bucket_report,
    cer_table,
    compare_reports,
    format_table,
    score_corpus,
)
from .stats import DegenerateTestError
from .textnorm import CHAR, MODES, NormalizationOptions, normalize, tokenize

log = logging.getLogger("mpager")


class ExitStatus(IntEnum):
    OK = 0
    DATA_ERROR = 1
    CONFIG_ERROR = 2
    TRANSPORT_ERROR = 3


class DataError(Exception):
    pass


def _read_text(path) -> str:
    try:
        data = sys.stdin.buffer.read() if path in (None, "-") else Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path or '<stdin>'}: invalid UTF-8 ({e})") from None


def _write(text: str, path=None):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def _add_norm_flags(p):
    g = p.add_argument_group("normalization")
    g.add_argument("--no-fold-width", dest="fold_width", action="store_false", help="keep full-width forms")
    g.add_argument("--keep-punctuation", dest="strip_punctuation", action="store_false")
    g.add_argument("--punctuation", default=None, metavar="CHARS",
                   help="strip exactly these characters instead of the default P* + Japanese set")
    g.add_argument("--no-collapse-whitespace", dest="collapse_whitespace", action="store_false")


def _norm_opts(args) -> NormalizationOptions:
    return NormalizationOptions(
        fold_width=args.fold_width,
        strip_punctuation=args.strip_punctuation,
        punctuation_set=None if args.punctuation is None else frozenset(args.punctuation),
        collapse_whitespace=args.collapse_whitespace,
    )


# ---- normalize -------------------------------------------------------------------

def cmd_normalize(args) -> int:
    text = _read_text(args.input)
    opts = _norm_opts(args)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    _write("".join(normalize(line, opts) + "\n" for line in lines), args.output)
    return ExitStatus.OK


# ---- score -----------------------------------------------------------------------

def _load_trn_dict(path) -> dict:
    try:
        return dict(load_trn(path))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None


def cmd_score(args) -> int:
    refs = _load_trn_dict(args.ref)
    hyps = _load_trn_dict(args.hyp)
    extra = [u for u in hyps if u not in refs]
    if extra:
        log.warning("%d hypothesis utterance(s) have no reference and are ignored", len(extra))
    try:
        report = score_corpus(refs, hyps, _norm_opts(args), args.mode)
    except KeyError as e:
        raise DataError(str(e.args[0])) from None
    except ValueError as e:
        raise DataError(str(e)) from None
    doc = json.dumps(report.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    if args.output:
        _write(doc, args.output)
    if args.json:
        _write(doc)
    else:
        _write(cer_table(report) + "\n")
        if report.flagged:
            _write(f"flagged (empty reference): {', '.join(report.flagged)}\n")
    return ExitStatus.OK


# ---- rover -----------------------------------------------------------------------

def _read_stream(path, fmt) -> list:
    text = _read_text(path)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if fmt == "lines":
        return [(str(k), line) for k, line in enumerate(lines)]
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            if fmt == "trn":
                out.append(parse_trn_line(line))
            else:
                rec = json.loads(line)
                out.append((str(rec["utt_id"]), str(rec["text"])))
        except (CorpusError, ValueError, KeyError, TypeError) as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
    return out


def cmd_rover(args) -> int:
    streams = [_read_stream(p, args.format) for p in args.inputs]
    ids = [u for u, _ in streams[0]]
    if len(set(ids)) != len(ids):
        raise DataError(f"{args.inputs[0]}: duplicate utterance ids")
    tables = [dict(s) for s in streams]
    for path, s, t in zip(args.inputs[1:], streams[1:], tables[1:]):
        if args.format == "lines" and len(s) != len(ids):
            raise DataError(f"{path}: {len(s)} lines, expected {len(ids)}")
        if set(t) != set(ids) or len(s) != len(t):
            raise DataError(f"{path}: utterance ids do not match {args.inputs[0]}")
    opts = VoteOptions(alpha=args.alpha, null_confidence=args.null_confidence)
    out = []
    for u in ids:
        merged = rover_combine([tokenize(t[u], args.mode) for t in tables], opts).text()
        if args.format == "lines":
            out.append(merged)
        elif args.format == "trn":
            out.append(format_trn_line(u, merged))
        else:
            out.append(json.dumps({"utt_id": u, "text": merged}, ensure_ascii=False))
    _write("".join(line + "\n" for line in out), args.output)
    return ExitStatus.OK


# ---- mpa -------------------------------------------------------------------------

def cmd_mpa(args) -> int:
    overrides = {"endpoint_url": args.endpoint_url, "api_key": args.api_key}
    scheme, backends, templates = load_scheme(args.scheme, overrides=overrides)
    try:
        corpus = load_jsonl(args.corpus, references=args.refs)
    except OSError as e:
        raise DataError(f"cannot read corpus: {e}") from None
    report = run_mpa(corpus, scheme, backends, templates, workers=args.workers)
    report.write(args.out)
    summary = report.summary()
    if args.json:
        _write(json.dumps(summary, ensure_ascii=False, sort_keys=True, indent=2) + "\n")
    else:
        rows = [(k, f"{100 * v:.2f}") for k, v in summary["corpus_cer"].items()]
        if rows:
            _write(format_table(rows, ("stream", "CER[%]")) + "\n")
        _write(f"utterances: {summary['utterances']}  fallbacks: {summary['fallback_utterances']}"
               f"  skipped: {len(summary['skipped'])}\ndigest: {summary['digest']}\n")
    dead = [b for b, st in report.backend_stats.items()
            if st["requests"] and st["transport_failures"] == st["requests"]]
    if dead:
        log.error("backend(s) unreachable for every request: %s", ", ".join(dead))
        return ExitStatus.TRANSPORT_ERROR
    return ExitStatus.OK


# ---- report ----------------------------------------------------------------------

def _records(report, stream, path):
    recs = [u.scores[stream] for u in report.utterances if stream in u.scores]
    if not recs:
        raise DataError(f"{path}: no scores for stream {stream!r} (run without references?)")
    return recs


def cmd_report(args) -> int:
    run = read_report(args.run)
    base_name = args.baseline
    target = _records(run, args.stream, args.run)
    if args.compare:
        other = read_report(args.compare)
        base = _records(other, args.stream, args.compare)
        base_label = f"{args.compare}:{args.stream}"
    else:
        base = _records(run, base_name, args.run)
        base_label = base_name

    bt = bucket_report(target, args.width)
    bb = bucket_report(base, args.width)
    doc = {"buckets": {base_label: bb.to_dict(), args.stream: bt.to_dict()}, "ttest": None}
    try:
        tt = compare_reports(base, target, args.metric)
        doc["ttest"] = {"t": tt.t, "df": tt.df, "p_two_sided": tt.p_two_sided, "n": tt.n,
                        "mean_diff": tt.mean_diff, "metric": args.metric}
    except DegenerateTestError as e:
        log.warning("t-test skipped: %s", e)
        doc["ttest_warning"] = str(e)
    except ValueError as e:
        raise DataError(str(e)) from None

    if args.json:
        _write(json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n")
        return ExitStatus.OK

    n = max(len(bb.buckets), len(bt.buckets))
    rows = []
    for k in range(n):
        a = bb.buckets[k] if k < len(bb.buckets) else None
        b = bt.buckets[k] if k < len(bt.buckets) else None
        ref = a or b
        rows.append((
            ref.label,
            a.count if a else 0,
            "-" if a is None or a.cer is None else f"{100 * a.cer:.2f}",
            "-" if b is None or b.cer is None else f"{100 * b.cer:.2f}",
        ))
    _write(format_table(rows, ("ref_len", "count", f"{base_label} CER[%]", f"{args.stream} CER[%]")) + "\n")
    if doc["ttest"]:
        t = doc["ttest"]
        _write(f"paired t-test ({args.metric}, {base_label} - {args.stream}): "
               f"t={t['t']:.4f} df={t['df']} p={t['p_two_sided']:.6g}\n")
    else:
        _write(f"paired t-test: {doc['ttest_warning']}\n")
    return ExitStatus.OK


# ---- main ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpager", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="normalize text line by line")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output")
    _add_norm_flags(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("score", help="CER of a hypothesis trn against a reference trn")
    p.add_argument("ref")
    p.add_argument("hyp")
    p.add_argument("--mode", choices=MODES, default=CHAR)
    p.add_argument("--json", action="store_true", help="print the JSON report instead of a table")
    p.add_argument("-o", "--output", help="also write the JSON report here")
    _add_norm_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rover", help="ROVER-combine hypothesis files (first file is the base)")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--format", choices=("lines", "trn", "jsonl"), default="lines")
    p.add_argument("--mode", choices=MODES, default=CHAR)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--null-confidence", type=float, default=0.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_rover)

    p = sub.add_parser("mpa", help="run an MPA GER scheme over a corpus")
    p.add_argument("corpus", help="hypothesis JSONL")
    p.add_argument("scheme", help="scheme JSON")
    p.add_argument("--out", required=True, help="output directory for report.jsonl and summary.json")
    p.add_argument("--refs", help="reference trn file")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--endpoint-url", help="override every http backend's endpoint")
    p.add_argument("--api-key", help="override the API key of every http backend")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mpa)

    p = sub.add_parser("report", help="length-bucket CER tables and a paired t-test")
    p.add_argument("run", help="run directory or report.jsonl")
    p.add_argument("--compare", help="second run; its --stream is the baseline")
    p.add_argument("--stream", default=MERGED)
    p.add_argument("--baseline", default=ANCHOR, help="baseline stream within RUN when --compare is absent")
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--metric", choices=("cer", "errors"), default="cer")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * args.verbose,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return int(args.func(args))
    except ConfigError as e:
        log.error("%s", e)
        return ExitStatus.CONFIG_ERROR
    except (DataError, CorpusError) as e:
        log.error("%s", e)
        return ExitStatus.DATA_ERROR
    except ValueError as e:
        log.error("%s", e)
        return ExitStatus.DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
