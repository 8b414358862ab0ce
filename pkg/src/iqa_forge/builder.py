"""Two-stage distorted-corpus generation with provenance manifests.

Stage 1 applies three single distortions (noise, blur, jpeg) at levels
1-11 to every reference. Stage 2 applies a second distortion at levels
1-17 on top of each stage-1 image, using the parent reference's own
calibrated parameters, for five fixed kind combinations. Every generated
image gets a manifest row carrying its full distortion chain, so the
corpus is reproducible from the manifest alone.

Generation is embarrassingly parallel across (reference, kind/combo)
tasks; the manifest is a deterministic reduction sorted by image_id, so
outputs are byte-identical for any worker count.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .calibrate import STAGE1_LEVELS, STAGE2_LEVELS, CalibrationEntry
from .distort import DistortionChain, DistortionSpec, derive_seed, parse_chain, serialize_chain
from .metrics import quality100
from .pixels import channel_count, load_image, save_image, to_luma

STAGE1_KINDS = ("gaussian_noise", "gaussian_blur", "jpeg_like")
# (first kind, second kind) in the corpus's fixed combination order.
STAGE2_COMBOS = (
    ("gaussian_blur", "jpeg_like"),
    ("gaussian_blur", "gaussian_noise"),
    ("jpeg_like", "jpeg_like"),
    ("gaussian_noise", "jpeg_like"),
    ("gaussian_noise", "jp2k_like"),
)

KIND_TAGS = {
    "gaussian_noise": "noise",
    "gaussian_blur": "blur",
    "jpeg_like": "jpeg",
    "jp2k_like": "jp2k",
}


class BuildError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    """Provenance row for one generated (or pristine) image."""

    image_id: str
    ref_id: str
    stage: int
    chain: DistortionChain
    level1: Optional[int] = None
    level2: Optional[int] = None
    achieved1: Optional[float] = None
    achieved2: Optional[float] = None
    sqb: Optional[float] = None
    path: str = ""


@dataclass(frozen=True)
class ContentDescriptors:
    si: float
    cf: float


CalibrationTable = Mapping[tuple[str, str, int], CalibrationEntry]
RefSource = Mapping[str, object]  # ref_id -> path or float image array


def _load_ref(source) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return source
    return load_image(source)


def _image_id(ref_id: str, stage: int, chain: DistortionChain) -> str:
    return f"{ref_id}__{stage}__{serialize_chain(chain)}"


def _calib_spec(
    calib: CalibrationTable, ref_id: str, kind: str, level: int, stage: int, seed_root: int
) -> DistortionSpec:
    try:
        entry = calib[(ref_id, kind, level)]
    except KeyError:
        raise BuildError(f"missing calibration entry for ({ref_id}, {kind}, level {level})") from None
    seed = derive_seed(ref_id, kind, level, stage, root=seed_root)
    return DistortionSpec(kind=kind, param=entry.param, seed=seed)


def _stage1_task(args) -> list[ManifestRecord]:
    ref_id, source, kind, params, out_dir = args
    ref = _load_ref(source)
    records = []
    for level, spec in params:
        img = spec.apply(ref)
        fname = f"images/{ref_id}__s1__{KIND_TAGS[kind]}_L{level:02d}.png"
        save_image(img, Path(out_dir) / fname)
        chain = (spec,)
        records.append(
            ManifestRecord(
                image_id=_image_id(ref_id, 1, chain),
                ref_id=ref_id,
                stage=1,
                chain=chain,
                level1=level,
                achieved1=quality100(ref, img),
                path=fname,
            )
        )
    return records


def build_stage1(
    refs: RefSource,
    calib: CalibrationTable,
    out_dir: str | Path,
    workers: int = 1,
    seed_root: int = 0,
) -> list[ManifestRecord]:
    """Generate the singly distorted corpus: kinds x levels 1-11 per reference."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    tasks = []
    for ref_id in sorted(refs):
        for kind in STAGE1_KINDS:
            params = [
                (level, _calib_spec(calib, ref_id, kind, level, 1, seed_root))
                for level in STAGE1_LEVELS
            ]
            tasks.append((ref_id, refs[ref_id], kind, params, str(out_dir)))
    chunks = _run_tasks(_stage1_task, tasks, workers)
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: r.image_id)
    return records


def _stage2_task(args) -> list[ManifestRecord]:
    ref_id, source, combo, parents, second_specs, out_dir = args
    kind1, kind2 = combo
    ref = _load_ref(source)
    records = []
    for level1, parent_spec, parent_achieved in parents:
        parent_img = parent_spec.apply(ref)
        for level2, second in second_specs:
            img = second.apply(parent_img)
            fname = (
                f"images/{ref_id}__s2__{KIND_TAGS[kind1]}L{level1:02d}"
                f"__{KIND_TAGS[kind2]}L{level2:02d}.png"
            )
            save_image(img, Path(out_dir) / fname)
            chain = (parent_spec, second)
            records.append(
                ManifestRecord(
                    image_id=_image_id(ref_id, 2, chain),
                    ref_id=ref_id,
                    stage=2,
                    chain=chain,
                    level1=level1,
                    level2=level2,
                    achieved1=parent_achieved,
                    achieved2=quality100(ref, img),
                    path=fname,
                )
            )
    return records


def build_stage2(
    refs: RefSource,
    stage1: Sequence[ManifestRecord],
    calib: CalibrationTable,
    out_dir: str | Path,
    workers: int = 1,
    seed_root: int = 0,
) -> list[ManifestRecord]:
    """Generate the multiply distorted corpus from the stage-1 manifest.

    Second-stage parameters are the parent reference's calibrated
    parameters for levels 1-17 (re-seeded for stage 2); the parent image
    is regenerated from its stage-1 chain in the float domain.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    by_parent: dict[tuple[str, str, int], ManifestRecord] = {}
    for rec in stage1:
        if rec.stage != 1 or len(rec.chain) != 1:
            raise BuildError(f"stage-1 manifest row {rec.image_id!r} is not a single-spec row")
        by_parent[(rec.ref_id, rec.chain[0].kind, rec.level1)] = rec

    tasks = []
    for ref_id in sorted(refs):
        for combo in STAGE2_COMBOS:
            kind1, kind2 = combo
            parents = []
            for level1 in STAGE1_LEVELS:
                key = (ref_id, kind1, level1)
                if key not in by_parent:
                    raise BuildError(f"stage-1 manifest missing ({ref_id}, {kind1}, level {level1})")
                parent = by_parent[key]
                parents.append((level1, parent.chain[0], parent.achieved1))
            second_specs = [
                (level2, _calib_spec(calib, ref_id, kind2, level2, 2, seed_root))
                for level2 in STAGE2_LEVELS
            ]
            tasks.append((ref_id, refs[ref_id], combo, parents, second_specs, str(out_dir)))
    chunks = _run_tasks(_stage2_task, tasks, workers)
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: r.image_id)
    return records


def _run_tasks(fn, tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


# ---------------------------------------------------------------------------
# Content descriptors.


def spatial_information(img: np.ndarray) -> float:
    """Mean Sobel gradient magnitude of the luma plane (edge-energy SI)."""
    x = to_luma(img) if channel_count(img) == 3 else np.asarray(img, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, :, 0]
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([1.0, 0.0, -1.0])
    gx = correlate1d(correlate1d(x, smooth, axis=0, mode="nearest"), diff, axis=1, mode="nearest")
    gy = correlate1d(correlate1d(x, smooth, axis=1, mode="nearest"), diff, axis=0, mode="nearest")
    return float(np.mean(np.hypot(gx, gy)))


def colorfulness(img: np.ndarray) -> float:
    """Opponent-channel colorfulness: spread plus 0.3x distance from neutral."""
    if channel_count(img) != 3:
        raise BuildError("colorfulness needs a 3-channel image")
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    spread = np.sqrt(np.var(rg) + np.var(yb))
    offset = np.sqrt(np.mean(rg) ** 2 + np.mean(yb) ** 2)
    return float(spread + 0.3 * offset)


def content_descriptors(img: np.ndarray) -> ContentDescriptors:
    return ContentDescriptors(si=spatial_information(img), cf=colorfulness(img))


# ---------------------------------------------------------------------------
# Distribution summary (histogram + boxplot statistics).


def summarize(values: Sequence[float]) -> dict:
    """Integer-bin histogram over 0-100 plus quartile/whisker/outlier stats."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise BuildError("cannot summarize an empty collection")
    bins = np.floor(v + 0.5).astype(int)
    hist = {int(b): int(c) for b, c in zip(*np.unique(bins, return_counts=True))}
    q1, med, q3 = (float(np.percentile(v, p)) for p in (25, 50, 75))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inliers = v[(v >= lo_fence) & (v <= hi_fence)]
    return {
        "n": int(v.size),
        "min": float(v.min()),
        "max": float(v.max()),
        "median": med,
        "q1": q1,
        "q3": q3,
        "whisker_low": float(inliers.min()),
        "whisker_high": float(inliers.max()),
        "n_outliers": int(v.size - inliers.size),
        "histogram": hist,
    }


# ---------------------------------------------------------------------------
# Manifest CSV.

MANIFEST_HEADER = (
    "image_id",
    "ref_id",
    "stage",
    "chain",
    "level1",
    "level2",
    "achieved1",
    "achieved2",
    "sqb",
    "path",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    return str(value)


def write_manifest(records: Sequence[ManifestRecord], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow(
                [
                    r.image_id,
                    r.ref_id,
                    r.stage,
                    serialize_chain(r.chain),
                    _fmt(r.level1),
                    _fmt(r.level2),
                    _fmt(r.achieved1),
                    _fmt(r.achieved2),
                    _fmt(r.sqb),
                    r.path,
                ]
            )
    os.replace(tmp, path)


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_HEADER:
            raise BuildError(f"manifest {path} has unexpected header {reader.fieldnames}")
        for row in reader:
            records.append(
                ManifestRecord(
                    image_id=row["image_id"],
                    ref_id=row["ref_id"],
                    stage=int(row["stage"]),
                    chain=parse_chain(row["chain"]),
                    level1=int(row["level1"]) if row["level1"] else None,
                    level2=int(row["level2"]) if row["level2"] else None,
                    achieved1=float(row["achieved1"]) if row["achieved1"] else None,
                    achieved2=float(row["achieved2"]) if row["achieved2"] else None,
                    sqb=float(row["sqb"]) if row["sqb"] else None,
                    path=row["path"],
                )
            )
    return records


def annotate_sqb(records: Sequence[ManifestRecord], sqb_by_image: Mapping[str, float]) -> list[ManifestRecord]:
    """Return records with the sqb column filled from an image_id -> value map."""
    return [
        replace(rec, sqb=sqb_by_image.get(rec.image_id, rec.sqb))
        for rec in records
    ]
