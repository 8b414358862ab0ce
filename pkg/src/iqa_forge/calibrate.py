"""Content-adaptive distortion parameter search against fixed quality targets.

Each reference image gets its own parameter per (distortion kind, level)
such that quality100(ref, distort(ref, param)) lands on the level's target
score. Continuous parameters are found by monotone bisection; the jpeg
quality factor is discrete, so its full 1..100 grid is swept and the
nearest achieved score wins (ties go to the numerically smaller q).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .distort import DistortionSpec, derive_seed
from .metrics import quality100

# Level -> target quality; level 1 = 100, stepping down by 5 to level 21 = 0.
FULL_LEVELS = tuple(range(1, 22))
STAGE1_LEVELS = tuple(range(1, 12))
STAGE2_LEVELS = tuple(range(1, 18))

# Continuous search domains; the maxima drive quality100 below 20 on
# natural content. jpeg_like is a discrete grid instead.
PARAM_DOMAINS = {
    "gaussian_noise": (0.0, 0.5),
    "gaussian_blur": (0.0, 16.0),
    "jp2k_like": (0.0, 2.0),
}
JPEG_GRID = tuple(range(1, 101))

IDENTITY_PARAMS = {
    "gaussian_noise": 0.0,
    "gaussian_blur": 0.0,
    "jpeg_like": 100.0,
    "jp2k_like": 0.0,
}

TARGET_TOLERANCE = 0.25
ACCEPT_TOLERANCE = 1.0
MAX_BISECTIONS = 40


@dataclass(frozen=True)
class LevelTable:
    """Ordered (level, target score) pairs, strictly decreasing by 5."""

    levels: tuple[tuple[int, float], ...]

    def target(self, level: int) -> float:
        for lvl, tgt in self.levels:
            if lvl == level:
                return tgt
        raise KeyError(f"level {level} not in table")


def default_level_table() -> LevelTable:
    return LevelTable(tuple((lvl, float(105 - 5 * lvl)) for lvl in FULL_LEVELS))


@dataclass(frozen=True)
class CalibrationEntry:
    """One calibrated level. ``clamped`` marks targets the search could not
    reach within the +/-1.0 acceptance band (domain boundary hit, or jpeg
    grid granularity); non-clamped entries always satisfy the band."""

    ref_id: str
    kind: str
    level: int
    param: float
    achieved: float
    clamped: bool


class CalibrationError(ValueError):
    pass


def _spec_for(
    kind: str, param: float, ref_id: str, level: int, stage: int, seed_root: int
) -> DistortionSpec:
    seed = derive_seed(ref_id, kind, level, stage, root=seed_root)
    return DistortionSpec(kind=kind, param=param, seed=seed)


def _achieved(
    ref: np.ndarray, kind: str, param: float, ref_id: str, level: int, stage: int, seed_root: int = 0
) -> float:
    spec = _spec_for(kind, param, ref_id, level, stage, seed_root)
    return quality100(ref, spec.apply(ref))


def achievable_range(
    ref: np.ndarray, kind: str, ref_id: str = "", stage: int = 1, seed_root: int = 0
) -> tuple[float, float]:
    """(score at the domain-maximum parameter, score at the identity parameter)."""
    if kind == "jpeg_like":
        worst = _achieved(ref, kind, float(JPEG_GRID[0]), ref_id, 0, stage, seed_root)
    elif kind in PARAM_DOMAINS:
        worst = _achieved(ref, kind, PARAM_DOMAINS[kind][1], ref_id, 0, stage, seed_root)
    else:
        raise CalibrationError(f"unsupported distortion kind {kind!r}")
    best = _achieved(ref, kind, IDENTITY_PARAMS[kind], ref_id, 0, stage, seed_root)
    return worst, best


def _bisect_level(
    ref: np.ndarray, kind: str, target: float, ref_id: str, level: int, stage: int, seed_root: int
) -> tuple[float, float, bool]:
    lo, hi = PARAM_DOMAINS[kind]
    q_hi = _achieved(ref, kind, hi, ref_id, level, stage, seed_root)
    if q_hi > target:
        return hi, q_hi, True  # floor above target: clamp to the domain max
    best_param, best_q = hi, q_hi
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        q = _achieved(ref, kind, mid, ref_id, level, stage, seed_root)
        if abs(q - target) < abs(best_q - target):
            best_param, best_q = mid, q
        if abs(q - target) <= TARGET_TOLERANCE:
            break
        if q > target:
            lo = mid
        else:
            hi = mid
    return best_param, best_q, abs(best_q - target) > ACCEPT_TOLERANCE


def calibrate_levels(
    ref: np.ndarray,
    kind: str,
    table: LevelTable | None = None,
    levels: Sequence[int] = STAGE2_LEVELS,
    ref_id: str = "",
    stage: int = 1,
    seed_root: int = 0,
) -> list[CalibrationEntry]:
    """Find per-level parameters whose achieved quality100 hits the targets.

    Level 1 (target 100) always returns the identity parameter. Noise
    calibration evaluates with the corpus seed for (ref_id, kind, level,
    stage), so the builder reproduces the achieved scores exactly.
    """
    table = table or default_level_table()
    if kind not in IDENTITY_PARAMS:
        raise CalibrationError(f"unsupported distortion kind {kind!r}")

    entries: list[CalibrationEntry] = []
    jpeg_scores: np.ndarray | None = None
    if kind == "jpeg_like" and any(lvl != 1 for lvl in levels):
        jpeg_scores = np.array(
            [_achieved(ref, kind, float(q), ref_id, 0, stage, seed_root) for q in JPEG_GRID]
        )

    for level in levels:
        target = table.target(level)
        if level == 1:
            # Identity by construction; measured jpeg q=100 would read
            # ~99.99 from DC rounding, below the scale's resolution.
            entries.append(CalibrationEntry(ref_id, kind, level, IDENTITY_PARAMS[kind], 100.0, False))
            continue
        if kind == "jpeg_like":
            assert jpeg_scores is not None
            idx = int(np.argmin(np.abs(jpeg_scores - target)))
            param, achieved = float(JPEG_GRID[idx]), float(jpeg_scores[idx])
            clamped = abs(achieved - target) > ACCEPT_TOLERANCE
        else:
            param, achieved, clamped = _bisect_level(ref, kind, target, ref_id, level, stage, seed_root)
        entries.append(CalibrationEntry(ref_id, kind, level, param, achieved, clamped))
    return entries


CALIBRATION_HEADER = ("ref_id", "kind", "level", "param", "achieved", "clamped")


def write_calibration(entries: Iterable[CalibrationEntry], path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CALIBRATION_HEADER)
        for e in entries:
            w.writerow([e.ref_id, e.kind, e.level, repr(e.param), repr(e.achieved), int(e.clamped)])
    os.replace(tmp, path)


def read_calibration(path: str | Path) -> dict[tuple[str, str, int], CalibrationEntry]:
    out: dict[tuple[str, str, int], CalibrationEntry] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            e = CalibrationEntry(
                ref_id=row["ref_id"],
                kind=row["kind"],
                level=int(row["level"]),
                param=float(row["param"]),
                achieved=float(row["achieved"]),
                clamped=bool(int(row["clamped"])),
            )
            out[(e.ref_id, e.kind, e.level)] = e
    return out
