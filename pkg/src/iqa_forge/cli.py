"""Command-line orchestration of the calibration/build/fusion/eval workflow.

Subcommands: calibrate, build, score, sqb, ksweep, eval, summarize. All
tabular I/O is CSV with headers; configs and summaries are JSON. Every run
echoes its resolved configuration to run.json in the output directory, and
every output file is written atomically (temp file + rename). Outputs are
invariant to the worker count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import builder, calibrate, evaluation, sqb
from .distort import KINDS
from .metrics import DEFAULT_METRICS, metric_by_id
from .pixels import load_image

WORKERS_ENV = "IQA_FORGE_WORKERS"

IMAGE_SUFFIXES = (".png", ".ppm")


class CliError(RuntimeError):
    pass


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv_atomic(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    _write_text_atomic(path, buf.getvalue())


def _write_run_config(out_dir: Path, command: str, options: dict) -> None:
    doc = {"command": command, "options": options}
    _write_text_atomic(out_dir / "run.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _list_refs(refs_dir: Path) -> dict[str, Path]:
    if not refs_dir.is_dir():
        raise CliError(f"reference directory not found: {refs_dir}")
    refs = {
        p.stem: p
        for p in sorted(refs_dir.iterdir())
        if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    }
    if not refs:
        raise CliError(f"no PNG/PPM reference images in {refs_dir}")
    return refs


def _parse_levels(text: str) -> list[int]:
    try:
        if "-" in text:
            lo, hi = text.split("-")
            levels = list(range(int(lo), int(hi) + 1))
        else:
            levels = [int(part) for part in text.split(",")]
    except ValueError:
        raise CliError(f"bad --levels value {text!r} (use e.g. 1-17 or 1,2,5)") from None
    if not levels or any(l < 1 or l > 21 for l in levels):
        raise CliError(f"levels out of range in {text!r}")
    return levels


def _fmt_float(x: float) -> str:
    return repr(float(x))


# --- calibrate -------------------------------------------------------------


def _calibrate_task(args):
    ref_id, path, kind, levels, seed_root = args
    ref = load_image(path)
    return calibrate.calibrate_levels(ref, kind, levels=levels, ref_id=ref_id, seed_root=seed_root)


def cmd_calibrate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    refs = _list_refs(Path(args.refs))
    kinds = args.kinds.split(",") if args.kinds else list(KINDS)
    for kind in kinds:
        if kind not in KINDS:
            raise CliError(f"unknown distortion kind {kind!r}")
    levels = _parse_levels(args.levels)
    tasks = [
        (ref_id, str(refs[ref_id]), kind, levels, args.seed_root)
        for ref_id in sorted(refs)
        for kind in kinds
    ]
    chunks = _pool_map(_calibrate_task, tasks, args.workers)
    entries = [e for chunk in chunks for e in chunk]
    entries.sort(key=lambda e: (e.ref_id, e.kind, e.level))
    rows = [
        [e.ref_id, e.kind, e.level, _fmt_float(e.param), _fmt_float(e.achieved), int(e.clamped)]
        for e in entries
    ]
    _write_csv_atomic(out_dir / "calibration.csv", calibrate.CALIBRATION_HEADER, rows)
    _write_run_config(
        out_dir,
        "calibrate",
        {
            "refs": str(Path(args.refs)),
            "kinds": kinds,
            "levels": levels,
            "workers": args.workers,
            "seed_root": args.seed_root,
        },
    )
    return 0


def _pool_map(fn, tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


# --- build -----------------------------------------------------------------


def cmd_build(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    if manifest_path.exists() and not args.force:
        raise CliError(f"{manifest_path} already exists (use --force to rebuild)")
    refs = _list_refs(Path(args.refs))
    calib = calibrate.read_calibration(args.calib)
    stages = sorted(int(s) for s in args.stages.split(","))
    if any(s not in (1, 2) for s in stages):
        raise CliError(f"bad --stages value {args.stages!r}")

    records = builder.build_stage1(
        refs, calib, out_dir, workers=args.workers, seed_root=args.seed_root
    )
    if 2 in stages:
        records = records + builder.build_stage2(
            refs, records, calib, out_dir, workers=args.workers, seed_root=args.seed_root
        )
        records.sort(key=lambda r: r.image_id)
    if 1 not in stages:
        records = [r for r in records if r.stage != 1]
    builder.write_manifest(records, manifest_path)

    desc_rows = []
    for ref_id in sorted(refs):
        img = load_image(refs[ref_id])
        d = builder.content_descriptors(img)
        desc_rows.append([ref_id, _fmt_float(d.si), _fmt_float(d.cf)])
    _write_csv_atomic(out_dir / "refs.csv", ("ref_id", "si", "cf"), desc_rows)

    _write_run_config(
        out_dir,
        "build",
        {
            "refs": str(Path(args.refs)),
            "calib": str(Path(args.calib)),
            "stages": stages,
            "workers": args.workers,
            "force": bool(args.force),
            "seed_root": args.seed_root,
        },
    )
    return 0


# --- score -----------------------------------------------------------------


def _score_task(args):
    ref_path, manifest_dir, rows, metric_ids = args
    ref = load_image(ref_path)
    out = []
    for image_id, rel_path in rows:
        dist = load_image(Path(manifest_dir) / rel_path)
        for mid in metric_ids:
            out.append((image_id, mid, metric_by_id(mid).score(ref, dist)))
    return out


def cmd_score(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    refs = _list_refs(Path(args.refs))
    records = builder.read_manifest(args.manifest)
    manifest_dir = Path(args.manifest).parent
    metric_ids = args.metrics.split(",") if args.metrics else [m.id for m in DEFAULT_METRICS]
    for mid in metric_ids:
        metric_by_id(mid)  # validate early

    by_ref: dict[str, list[tuple[str, str]]] = {}
    for rec in records:
        if rec.ref_id not in refs:
            raise CliError(f"manifest row {rec.image_id!r}: no reference image {rec.ref_id!r}")
        by_ref.setdefault(rec.ref_id, []).append((rec.image_id, rec.path))
    tasks = [
        (str(refs[ref_id]), str(manifest_dir), rows, metric_ids)
        for ref_id, rows in sorted(by_ref.items())
    ]
    chunks = _pool_map(_score_task, tasks, args.workers)
    scored = sorted((r for chunk in chunks for r in chunk), key=lambda r: (r[0], r[1]))
    rows = [[image_id, mid, _fmt_float(score)] for image_id, mid, score in scored]
    _write_csv_atomic(out_dir / "scores.csv", ("image_id", "metric_id", "score"), rows)
    _write_run_config(
        out_dir,
        "score",
        {
            "manifest": str(Path(args.manifest)),
            "refs": str(Path(args.refs)),
            "metrics": metric_ids,
            "workers": args.workers,
        },
    )
    return 0


# --- sqb / ksweep ----------------------------------------------------------


def _load_sqb_inputs(args):
    scores = sqb.load_scores_csv(args.scores)
    segments, matrix, image_order = sqb.load_segments_json(args.segments, scores)
    return segments, matrix, image_order


def cmd_sqb(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    segments, matrix, image_order = _load_sqb_inputs(args)
    result = sqb.generate_sqb(segments, matrix, args.k, args.anchor)

    for seg in result.segments:
        ids = image_order[seg.offset : seg.offset + seg.length]
        rows = [[image_id, _fmt_float(v)] for image_id, v in zip(ids, result.per_segment[seg.name])]
        _write_csv_atomic(out_dir / f"sqb_{seg.name}.csv", ("image_id", "sqb"), rows)

    params = result.params
    params_doc = {
        "k": result.k,
        "anchor": args.anchor,
        "beta": [params.beta1, params.beta2, params.beta3, params.beta4, params.beta5],
    }
    _write_text_atomic(out_dir / "params.json", json.dumps(params_doc, indent=2) + "\n")

    if args.manifest:
        records = builder.read_manifest(args.manifest)
        sqb_by_image = dict(zip(image_order, result.sqb))
        annotated = builder.annotate_sqb(records, sqb_by_image)
        builder.write_manifest(annotated, out_dir / "manifest_sqb.csv")

    _write_run_config(
        out_dir,
        "sqb",
        {
            "scores": str(Path(args.scores)),
            "segments": str(Path(args.segments)),
            "anchor": args.anchor,
            "k": result.k,
            "k_requested": args.k,
            "manifest": str(Path(args.manifest)) if args.manifest else None,
        },
    )
    return 0


def cmd_ksweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    segments, matrix, _ = _load_sqb_inputs(args)
    try:
        ks = [float(part) for part in args.ks.split(",")]
    except ValueError:
        raise CliError(f"bad --ks value {args.ks!r}") from None
    pairs = sqb.k_sweep(segments, matrix, ks, args.anchor)
    rows = [[_fmt_float(k), _fmt_float(wa)] for k, wa in pairs]
    _write_csv_atomic(out_dir / "ksweep.csv", ("k", "wa_srcc"), rows)
    _write_run_config(
        out_dir,
        "ksweep",
        {
            "scores": str(Path(args.scores)),
            "segments": str(Path(args.segments)),
            "anchor": args.anchor,
            "ks": ks,
        },
    )
    return 0


# --- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table: dict[tuple[str, str], list[tuple[float, float]]] = {}
    with open(args.table, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"dataset", "method", "objective", "subjective"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise CliError(f"eval table must have columns {sorted(need)}")
        for row in reader:
            key = (row["method"], row["dataset"])
            table.setdefault(key, []).append((float(row["objective"]), float(row["subjective"])))

    results_rows = []
    residual_table: dict[tuple[str, str], np.ndarray] = {}
    per_method: dict[str, list[tuple[int, float, float]]] = {}
    for (method, dataset), pairs in sorted(table.items()):
        objective = np.array([p[0] for p in pairs])
        subjective = np.array([p[1] for p in pairs])
        res = evaluation.plcc_mapped(objective, subjective)
        resid = evaluation.residuals(objective, subjective, res.params)
        residual_table[(method, dataset)] = resid
        kurt = evaluation.kurtosis(resid)
        gate = evaluation.KURTOSIS_GATE[0] <= kurt <= evaluation.KURTOSIS_GATE[1]
        results_rows.append(
            [method, dataset, res.n, _fmt_float(res.plcc), _fmt_float(res.srcc),
             _fmt_float(kurt), int(gate)]
        )
        per_method.setdefault(method, []).append((res.n, res.plcc, res.srcc))
    _write_csv_atomic(
        out_dir / "results.csv",
        ("method", "dataset", "n", "plcc", "srcc", "kurtosis", "gaussian_ok"),
        results_rows,
    )

    wa_rows = []
    for method, stats in sorted(per_method.items()):
        weights = [s[0] for s in stats]
        wa_plcc = evaluation.weighted_average([s[1] for s in stats], weights)
        wa_srcc = evaluation.weighted_average([s[2] for s in stats], weights)
        wa_rows.append([method, _fmt_float(wa_plcc), _fmt_float(wa_srcc)])
    _write_csv_atomic(out_dir / "wa.csv", ("method", "wa_plcc", "wa_srcc"), wa_rows)

    if args.baseline:
        verdicts = evaluation.significance_matrix(residual_table, args.baseline, alpha=args.alpha)
        datasets = sorted({d for _, d in residual_table})
        methods = sorted({m for m, _ in residual_table})
        rows = [
            [method] + [evaluation.VERDICT_CODES[verdicts[(method, ds)].value] for ds in datasets]
            for method in methods
        ]
        _write_csv_atomic(out_dir / "verdicts.csv", ["method"] + datasets, rows)

    gate_rate = evaluation.gaussian_gate_rate(residual_table)
    _write_run_config(
        out_dir,
        "eval",
        {
            "table": str(Path(args.table)),
            "baseline": args.baseline,
            "alpha": args.alpha,
            "gaussian_gate_pass_rate": gate_rate,
        },
    )
    return 0


# --- summarize ---------------------------------------------------------------


def cmd_summarize(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = builder.read_manifest(args.manifest)
    if args.sqb:
        with open(args.sqb, newline="") as fh:
            sqb_by_image = {row["image_id"]: float(row["sqb"]) for row in csv.DictReader(fh)}
        records = builder.annotate_sqb(records, sqb_by_image)
    values = [r.sqb for r in records if r.sqb is not None]
    if not values:
        raise CliError("manifest has no sqb values (annotate via `iqa-forge sqb --manifest`)")
    summary = builder.summarize(values)
    _write_text_atomic(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_run_config(
        out_dir,
        "summarize",
        {"manifest": str(Path(args.manifest)), "sqb": str(Path(args.sqb)) if args.sqb else None},
    )
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iqa-forge",
        description="Distortion simulation, rank-fusion quality annotation, and "
        "evaluation statistics for blind IQA datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_workers(p):
        p.add_argument("--workers", type=int, default=_default_workers(),
                       help=f"worker processes (default ${WORKERS_ENV} or 1)")

    p = sub.add_parser("calibrate", help="search content-adaptive distortion parameters")
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kinds", default="")
    p.add_argument("--levels", default="1-17")
    p.add_argument("--seed-root", type=int, default=0, dest="seed_root")
    add_workers(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("build", help="generate the two-stage distorted corpus")
    p.add_argument("--refs", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stages", default="1,2")
    p.add_argument("--force", action="store_true")
    p.add_argument("--seed-root", type=int, default=0, dest="seed_root")
    add_workers(p)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("score", help="score manifest images with FR metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default="")
    add_workers(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("sqb", help="generate the synthetic quality benchmark")
    p.add_argument("--scores", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--anchor", required=True)
    p.add_argument("--k", default="auto")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default="", help="also emit a manifest annotated with sqb")
    p.set_defaults(fn=cmd_sqb)

    p = sub.add_parser("ksweep", help="weighted-average SRCC across k values")
    p.add_argument("--scores", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--anchor", required=True)
    p.add_argument("--ks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ksweep)

    p = sub.add_parser("eval", help="correlation criteria and significance tests")
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", default="")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("summarize", help="histogram/boxplot summary of manifest sqb")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sqb", default="")
    p.set_defaults(fn=cmd_summarize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"iqa-forge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
