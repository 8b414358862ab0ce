"""Synthetic Quality Benchmark generation via reciprocal rank fusion.

Pipeline over a concatenated multi-dataset score matrix: orientation-aware
fractional ranking per metric, reciprocal rank fusion with stabilization
constant k, max-normalization, a five-parameter logistic map fitted on an
anchor segment with subjective scores, and a final 0-100 rescale. Segments
punctuate the concatenation so synthetic corpora inherit the anchor's
subjective scale.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .metrics import HIGHER_BETTER, LOWER_BETTER, FrMetricDescriptor, metric_by_id

MOS_HIGHER_BETTER = "mos_higher_better"
DMOS_LOWER_BETTER = "dmos_lower_better"

# Stabilization-constant plateau for million-row concatenations; smaller
# concatenations use 2n instead.
LARGE_SCALE_K = 8e6
LARGE_SCALE_N = 1_000_000


class SqbError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSegment:
    """One named contiguous span of the concatenated score vector."""

    name: str
    offset: int
    length: int
    subjective: Optional[np.ndarray] = None
    orientation: str = MOS_HIGHER_BETTER

    def __post_init__(self):
        if self.orientation not in (MOS_HIGHER_BETTER, DMOS_LOWER_BETTER):
            raise SqbError(f"bad subjective orientation {self.orientation!r}")
        if self.subjective is not None and len(self.subjective) != self.length:
            raise SqbError(
                f"segment {self.name!r}: {len(self.subjective)} subjective scores for {self.length} rows"
            )

    @property
    def rows(self) -> slice:
        return slice(self.offset, self.offset + self.length)

    def folded_subjective(self) -> np.ndarray:
        """Subjective scores folded to higher-is-better."""
        if self.subjective is None:
            raise SqbError(f"segment {self.name!r} has no subjective scores")
        s = np.asarray(self.subjective, dtype=np.float64)
        return -s if self.orientation == DMOS_LOWER_BETTER else s


@dataclass(frozen=True)
class ScoreMatrix:
    """n images x J metrics of raw scores, with per-metric orientations."""

    metrics: tuple[FrMetricDescriptor, ...]
    scores: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 2 or self.scores.shape[1] != len(self.metrics):
            raise SqbError(f"score matrix shape {self.scores.shape} vs {len(self.metrics)} metrics")
        if len(self.metrics) < 2:
            raise SqbError("rank fusion needs at least 2 metrics")
        if not np.all(np.isfinite(self.scores)):
            raise SqbError("score matrix contains non-finite entries")

    @property
    def n(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class LogisticParams:
    """Coefficients of S(R) = b1*(1/2 - 1/(1 + exp(b2 (R - b3)))) + b4 R + b5."""

    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.beta1, self.beta2, self.beta3, self.beta4, self.beta5])


def rank_scores(scores: np.ndarray, orientation: str) -> np.ndarray:
    """Fractional ranks with rank 1 = best quality after orientation folding.

    Exact ties receive the average of the positions they cover, so every
    full column of ranks sums to n(n+1)/2.
    """
    s = np.asarray(scores, dtype=np.float64)
    if np.any(np.isnan(s)):
        raise SqbError("cannot rank NaN scores")
    if orientation == HIGHER_BETTER:
        return rankdata(-s, method="average")
    if orientation == LOWER_BETTER:
        return rankdata(s, method="average")
    raise SqbError(f"bad orientation {orientation!r}")


def rank_matrix(matrix: ScoreMatrix) -> np.ndarray:
    cols = [rank_scores(matrix.scores[:, j], m.orientation) for j, m in enumerate(matrix.metrics)]
    return np.column_stack(cols)


def rrf(ranks: np.ndarray, k: float) -> np.ndarray:
    """Reciprocal rank fusion: score(i) = sum_j 1 / (k + r_j(i))."""
    if k <= 0:
        raise SqbError(f"stabilization constant k must be > 0, got {k}")
    r = np.atleast_2d(np.asarray(ranks, dtype=np.float64))
    return np.sum(1.0 / (k + r), axis=1)


def normalize_rrf(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise SqbError("empty RRF vector")
    top = float(np.max(v))
    if top <= 0:
        raise SqbError("RRF vector has no positive entries")
    return v / top


def logistic_curve(beta: Sequence[float], r: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    z = np.clip(b2 * (np.asarray(r, dtype=np.float64) - b3), -500.0, 500.0)
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(z))) + b4 * r + b5


def apply_logistic(params: LogisticParams, r: np.ndarray) -> np.ndarray:
    return logistic_curve(params.as_array(), r)


def _simplex_descent(f, x0: np.ndarray, max_iter: int = 2000, rtol: float = 1e-10):
    """Nelder-Mead with standard coefficients; converged when the relative
    SSE spread of the simplex drops below ``rtol``. The best vertex never
    regresses, so the result is always at least as good as ``x0``."""
    n = len(x0)
    sim = [np.asarray(x0, dtype=np.float64)]
    for i in range(n):
        vertex = np.array(x0, dtype=np.float64)
        vertex[i] = vertex[i] * 1.05 if vertex[i] != 0 else 0.00025
        sim.append(vertex)
    sim = np.array(sim)
    fv = np.array([f(x) for x in sim])
    for _ in range(max_iter):
        order = np.argsort(fv, kind="stable")
        sim, fv = sim[order], fv[order]
        spread = 2.0 * abs(fv[-1] - fv[0]) / (abs(fv[-1]) + abs(fv[0]) + 1e-300)
        if spread < rtol:
            break
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fr < fv[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            sim[-1], fv[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fv[-2]:
            sim[-1], fv[-1] = xr, fr
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = f(xc)
            if fc < fv[-1]:
                sim[-1], fv[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                    fv[i] = f(sim[i])
    i_best = int(np.argsort(fv, kind="stable")[0])
    return sim[i_best], float(fv[i_best])


def fit_logistic(r: np.ndarray, s: np.ndarray) -> LogisticParams:
    """Least-squares fit of the five-parameter logistic by simplex descent.

    Restarts from five deterministic initializations (beta3 at the 0.1 to
    0.9 quantiles of R, beta2 = +/-4/range(R), beta4/beta5 from the
    least-squares line) plus a pure-affine start, each run until the
    relative SSE change falls below 1e-10 or 2,000 iterations; the winner
    gets one polish pass. The affine start guarantees the fit is never
    worse than the least-squares line, so logistic mapping can only help
    PLCC.
    """
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if r.shape != s.shape or r.ndim != 1:
        raise SqbError("R and S must be 1-D vectors of equal length")
    if len(r) < 10:
        raise SqbError(f"need at least 10 anchor points, got {len(r)}")
    r_range = float(np.max(r) - np.min(r))
    if r_range == 0:
        raise SqbError("R is constant; logistic fit is degenerate")

    slope, intercept = np.polyfit(r, s, 1)
    s_range = float(np.max(s) - np.min(s))
    b2 = np.copysign(4.0 / r_range, slope if slope != 0 else 1.0)

    def sse(beta):
        resid = logistic_curve(beta, r) - s
        return float(resid @ resid)

    starts = [
        np.array([s_range, b2, q, slope, intercept])
        for q in np.quantile(r, [0.1, 0.3, 0.5, 0.7, 0.9])
    ]
    starts.append(np.array([0.0, b2, float(np.median(r)), slope, intercept]))

    best = min((_simplex_descent(sse, x0) for x0 in starts), key=lambda t: t[1])
    best = min([best, _simplex_descent(sse, best[0])], key=lambda t: t[1])
    beta = best[0]
    if not np.all(np.isfinite(beta)):
        raise SqbError("logistic fit produced non-finite coefficients")
    return LogisticParams(*(float(b) for b in beta))


def rescale_0_100(q: np.ndarray) -> np.ndarray:
    """SQB = 100 (Q - min Q) / max(Q - min Q); affine-invariant, order-preserving."""
    q = np.asarray(q, dtype=np.float64)
    span = float(np.max(q) - np.min(q))
    if span == 0:
        raise SqbError("constant Q vector cannot be rescaled to 0-100")
    # divide before scaling so the endpoints land on exactly 0 and 100
    return (q - np.min(q)) / span * 100.0


def resolve_k(n: int, k: float | str) -> float:
    """'auto' picks 2n at desk scale and the plateau value 8e6 once the
    concatenation reaches a million rows."""
    if k == "auto":
        return LARGE_SCALE_K if n >= LARGE_SCALE_N else 2.0 * n
    k = float(k)
    if k <= 0:
        raise SqbError(f"k must be positive, got {k}")
    return k


@dataclass(frozen=True)
class SqbResult:
    segments: tuple[DatasetSegment, ...]
    k: float
    params: LogisticParams
    sqb: np.ndarray  # full concatenated vector
    normalized_rrf: np.ndarray
    per_segment: dict[str, np.ndarray] = field(default_factory=dict)


def _check_tiling(segments: Sequence[DatasetSegment], n: int) -> None:
    spans = sorted((seg.offset, seg.length, seg.name) for seg in segments)
    cursor = 0
    for offset, length, name in spans:
        if offset != cursor:
            raise SqbError(f"segments do not tile the matrix: gap/overlap at {name!r}")
        cursor = offset + length
    if cursor != n:
        raise SqbError(f"segments tile only {cursor} of the matrix's {n} rows")
    names = [seg.name for seg in segments]
    if len(set(names)) != len(names):
        raise SqbError("duplicate segment names")


def generate_sqb(
    segments: Sequence[DatasetSegment],
    matrix: ScoreMatrix,
    k: float | str,
    anchor: str,
) -> SqbResult:
    """Run the full fusion pipeline and split the SQB vector by segment.

    rank each metric over the whole concatenation -> RRF(k) -> normalize
    -> fit the logistic on the anchor rows (subjective folded to
    higher-better) -> map every row -> rescale to 0-100.
    """
    _check_tiling(segments, matrix.n)
    anchors = [seg for seg in segments if seg.name == anchor]
    if not anchors:
        raise SqbError(f"anchor segment {anchor!r} not found")
    anchor_seg = anchors[0]
    if anchor_seg.subjective is None:
        raise SqbError(f"anchor segment {anchor!r} has no subjective scores")

    k_val = resolve_k(matrix.n, k)
    ranks = rank_matrix(matrix)
    fused = rrf(ranks, k_val)
    normalized = normalize_rrf(fused)
    params = fit_logistic(normalized[anchor_seg.rows], anchor_seg.folded_subjective())
    q = apply_logistic(params, normalized)
    sqb = rescale_0_100(q)
    per_segment = {seg.name: sqb[seg.rows].copy() for seg in segments}
    return SqbResult(
        segments=tuple(segments),
        k=k_val,
        params=params,
        sqb=sqb,
        normalized_rrf=normalized,
        per_segment=per_segment,
    )


def k_sweep(
    segments: Sequence[DatasetSegment],
    matrix: ScoreMatrix,
    ks: Sequence[float],
    anchor: str,
) -> list[tuple[float, float]]:
    """(k, weighted-average SRCC) over all subjective segments, weighted by
    segment length; SRCC is taken against orientation-folded subjective
    scores so higher is always better."""
    from .evaluation import srcc

    rated = [seg for seg in segments if seg.subjective is not None]
    if not rated:
        raise SqbError("k_sweep needs at least one segment with subjective scores")
    out = []
    for k in ks:
        result = generate_sqb(segments, matrix, k, anchor)
        vals = [srcc(result.per_segment[seg.name], seg.folded_subjective()) for seg in rated]
        weights = [seg.length for seg in rated]
        wa = float(np.average(vals, weights=weights))
        out.append((float(resolve_k(matrix.n, k)), wa))
    return out


# ---------------------------------------------------------------------------
# External formats: scores CSV (image_id,metric_id,score) + segments JSON.


def load_scores_csv(path: str | Path) -> dict[str, dict[str, float]]:
    """image_id -> {metric_id -> score}."""
    table: dict[str, dict[str, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"image_id", "metric_id", "score"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise SqbError(f"scores CSV {path} must have columns {sorted(need)}")
        for row in reader:
            table.setdefault(row["image_id"], {})[row["metric_id"]] = float(row["score"])
    return table


def _descriptor_for(metric_id: str, orientations: dict[str, str]) -> FrMetricDescriptor:
    if metric_id in orientations:
        return FrMetricDescriptor(metric_id, orientations[metric_id], (-np.inf, np.inf), None)
    try:
        return metric_by_id(metric_id)
    except KeyError:
        raise SqbError(
            f"metric {metric_id!r} is not built in and has no orientation declared "
            "in the segments JSON 'orientations' object"
        ) from None


def load_segments_json(
    path: str | Path, scores: dict[str, dict[str, float]]
) -> tuple[list[DatasetSegment], ScoreMatrix, list[str]]:
    """Assemble segments and the concatenated score matrix.

    The JSON holds {"segments": [{name, image_ids, subjective?, orientation?}...],
    "orientations": {metric_id: higher_better|lower_better}?}. Rows follow
    the declared segment order; metric columns are sorted by id.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "segments" not in doc:
        raise SqbError(f"segments JSON {path} must hold a 'segments' array")
    orientations = doc.get("orientations", {})

    metric_ids = sorted({mid for per_image in scores.values() for mid in per_image})
    descriptors = tuple(_descriptor_for(mid, orientations) for mid in metric_ids)

    segments: list[DatasetSegment] = []
    rows: list[list[float]] = []
    image_order: list[str] = []
    offset = 0
    for entry in doc["segments"]:
        ids = entry["image_ids"]
        for image_id in ids:
            if image_id not in scores:
                raise SqbError(f"segment {entry['name']!r}: no scores for image {image_id!r}")
            per_image = scores[image_id]
            missing = [mid for mid in metric_ids if mid not in per_image]
            if missing:
                raise SqbError(f"image {image_id!r} missing metrics {missing}")
            rows.append([per_image[mid] for mid in metric_ids])
            image_order.append(image_id)
        subjective = entry.get("subjective")
        segments.append(
            DatasetSegment(
                name=entry["name"],
                offset=offset,
                length=len(ids),
                subjective=None if subjective is None else np.asarray(subjective, dtype=np.float64),
                orientation=entry.get("orientation", MOS_HIGHER_BETTER),
            )
        )
        offset += len(ids)
    matrix = ScoreMatrix(metrics=descriptors, scores=np.asarray(rows, dtype=np.float64))
    return segments, matrix, image_order
