import numpy as np
import pytest

from iqa_forge.metrics import HIGHER_BETTER, LOWER_BETTER, FrMetricDescriptor
from iqa_forge.sqb import (
    DatasetSegment,
    LogisticParams,
    ScoreMatrix,
    SqbError,
    apply_logistic,
    fit_logistic,
    generate_sqb,
    k_sweep,
    logistic_curve,
    normalize_rrf,
    rank_matrix,
    rank_scores,
    rescale_0_100,
    resolve_k,
    rrf,
)

# --- independent oracles (explicit loops, no shared code paths) -------------


def oracle_ranks(scores, orientation):
    folded = [-s for s in scores] if orientation == HIGHER_BETTER else list(scores)
    ranks = []
    for i, v in enumerate(folded):
        better = sum(1 for u in folded if u < v)
        ties = sum(1 for u in folded if u == v)
        ranks.append(better + (ties + 1) / 2.0)
    return ranks


def oracle_rrf(rank_rows, k):
    return [sum(1.0 / (k + r) for r in row) for row in rank_rows]


def _descriptor(mid, orientation):
    return FrMetricDescriptor(mid, orientation, (-np.inf, np.inf), None)


def random_matrix(rng, n, j):
    orientations = [HIGHER_BETTER if rng.random() < 0.5 else LOWER_BETTER for _ in range(j)]
    metrics = tuple(_descriptor(f"m{i}", o) for i, o in enumerate(orientations))
    return ScoreMatrix(metrics=metrics, scores=rng.random((n, j)))


# --- ranking -----------------------------------------------------------------


def test_rank_examples():
    assert rank_scores([0.9, 0.5, 0.7], HIGHER_BETTER).tolist() == [1, 3, 2]
    assert rank_scores([0.9, 0.5, 0.7], LOWER_BETTER).tolist() == [3, 1, 2]
    assert rank_scores([0.5, 0.5, 0.1], HIGHER_BETTER).tolist() == [1.5, 1.5, 3]


def test_rank_rejects_nan():
    with pytest.raises(SqbError):
        rank_scores([0.1, np.nan], HIGHER_BETTER)


def test_rank_matches_oracle_and_column_sums():
    rng = np.random.default_rng(0)
    for _ in range(30):
        n = int(rng.integers(2, 40))
        scores = rng.choice([0.1, 0.25, 0.5, 0.8], size=n)  # force ties
        for orientation in (HIGHER_BETTER, LOWER_BETTER):
            got = rank_scores(scores, orientation)
            assert np.allclose(got, oracle_ranks(scores, orientation))
            assert np.isclose(got.sum(), n * (n + 1) / 2)


# --- rrf ---------------------------------------------------------------------


def test_rrf_examples():
    ranks = np.array([[1.0, 2.0], [2.0, 1.0], [3.0, 3.0]])
    got = rrf(ranks, 60)
    expect = [1 / 61 + 1 / 62, 1 / 62 + 1 / 61, 2 / 63]
    assert np.allclose(got, expect, atol=1e-15)
    assert got[0] == got[1] and got[2] < got[0]


def test_rrf_single_metric_preserves_order():
    rng = np.random.default_rng(1)
    scores = rng.random(20)
    ranks = rank_scores(scores, HIGHER_BETTER).reshape(-1, 1)
    for k in (0.5, 60, 1e6):
        fused = rrf(ranks, k)
        assert np.array_equal(np.argsort(-fused), np.argsort(ranks[:, 0]))


def test_rrf_agreement_and_monotonicity():
    rng = np.random.default_rng(2)
    # all metrics agree -> fused order equals the shared order
    scores = rng.random(15)
    ranks = np.column_stack([rank_scores(scores, HIGHER_BETTER)] * 4)
    fused = rrf(ranks, 60)
    assert np.array_equal(np.argsort(-fused), np.argsort(ranks[:, 0]))
    # improving any single rank strictly increases the fused score
    base = rng.integers(1, 30, size=(10, 3)).astype(float)
    for _ in range(20):
        i, j = rng.integers(0, 10), rng.integers(0, 3)
        if base[i, j] <= 1:
            continue
        bumped = base.copy()
        bumped[i, j] -= 1
        assert rrf(bumped, 60)[i] > rrf(base, 60)[i]


def test_rrf_rejects_bad_k():
    with pytest.raises(SqbError):
        rrf(np.ones((3, 2)), 0.0)


def test_rrf_large_k_equals_borda():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n, j = int(rng.integers(3, 50)), int(rng.integers(2, 6))
        ranks = np.column_stack([rng.permutation(n) + 1.0 for _ in range(j)])
        k = 100.0 * n * j
        fused = rrf(ranks, k)
        sums = ranks.sum(axis=1)
        for a in range(n):
            for b in range(n):
                if sums[a] < sums[b]:  # strictly better Borda -> strictly higher RRF
                    assert fused[a] > fused[b]


# --- normalize / rescale -------------------------------------------------------


def test_normalize_rrf():
    assert normalize_rrf(np.array([2.0, 4.0])).tolist() == [0.5, 1.0]
    assert normalize_rrf(np.array([3.7])).tolist() == [1.0]
    v = np.random.default_rng(4).random(20) + 0.1
    assert np.argmax(normalize_rrf(v)) == np.argmax(v)
    with pytest.raises(SqbError):
        normalize_rrf(np.array([]))
    with pytest.raises(SqbError):
        normalize_rrf(np.zeros(5))


def test_rescale_examples():
    assert rescale_0_100(np.array([2.0, 4.0, 6.0])).tolist() == [0.0, 50.0, 100.0]
    q = np.random.default_rng(5).random(30)
    assert np.allclose(rescale_0_100(q), rescale_0_100(3.5 * q - 11.0), atol=1e-9)
    with pytest.raises(SqbError):
        rescale_0_100(np.full(4, 2.2))


# --- logistic ------------------------------------------------------------------


def test_fit_recovers_generating_curve():
    rng = np.random.default_rng(6)
    r = rng.uniform(0, 1, 200)
    beta = (1.0, 8.0, 0.5, 0.2, 3.0)
    s = logistic_curve(beta, r)
    params = fit_logistic(r, s)
    pred = apply_logistic(params, r)
    assert np.sqrt(np.mean((pred - s) ** 2)) < 1e-6


def test_fit_pure_linear():
    rng = np.random.default_rng(7)
    r = rng.uniform(0, 1, 80)
    s = 2.0 * r + 1.0
    params = fit_logistic(r, s)
    pred = apply_logistic(params, r)
    assert np.sqrt(np.mean((pred - s) ** 2)) < 1e-8


def test_logistic_bracket_vanishes_at_beta3():
    params = LogisticParams(2.5, 7.0, 0.4, 1.5, -0.3)
    val = apply_logistic(params, np.array([0.4]))[0]
    assert np.isclose(val, 1.5 * 0.4 - 0.3, atol=1e-12)


def test_apply_logistic_special_params():
    r = np.linspace(-2, 2, 31)
    assert np.allclose(apply_logistic(LogisticParams(0, 1, 0, 1, 0), r), r)
    assert np.allclose(apply_logistic(LogisticParams(0, 1, 0, 0, 4.2), r), 4.2)
    # beta2 > 0, beta4 >= 0, beta1 >= 0 -> monotone map
    q = apply_logistic(LogisticParams(3.0, 5.0, 0.5, 0.1, 0.0), np.sort(r))
    assert np.all(np.diff(q) > 0)


def test_fit_rejects_degenerate_inputs():
    with pytest.raises(SqbError):
        fit_logistic(np.ones(20), np.arange(20.0))
    with pytest.raises(SqbError):
        fit_logistic(np.arange(5.0), np.arange(5.0))


# --- pipeline ------------------------------------------------------------------


def _single_segment(n, subjective):
    return [DatasetSegment("bench", 0, n, subjective=subjective)]


def test_generate_sqb_monotone_composition():
    rng = np.random.default_rng(8)
    n = 60
    latent = rng.uniform(0, 1, n)
    metrics = (_descriptor("a", HIGHER_BETTER), _descriptor("b", HIGHER_BETTER))
    matrix = ScoreMatrix(metrics=metrics, scores=np.column_stack([latent, latent]))
    result = generate_sqb(_single_segment(n, latent), matrix, 60.0, "bench")
    sqb = result.per_segment["bench"]
    assert np.array_equal(np.argsort(sqb), np.argsort(latent))
    assert sqb.min() == 0.0 and sqb.max() == 100.0


def test_generate_sqb_matches_step_by_step_oracle():
    rng = np.random.default_rng(9)
    for trial in range(12):
        n, j = int(rng.integers(12, 50)), int(rng.integers(2, 5))
        matrix = random_matrix(rng, n, j)
        cut = n // 2
        subjective = rng.uniform(0, 9, n - cut)
        segments = [
            DatasetSegment("plain", 0, cut),
            DatasetSegment("anchor", cut, n - cut, subjective=subjective),
        ]
        k = float(rng.uniform(10, 500))
        result = generate_sqb(segments, matrix, k, "anchor")

        # independent recomputation of Eqs. 1-4, sharing only the fitted betas
        rank_rows = np.column_stack(
            [oracle_ranks(matrix.scores[:, c], matrix.metrics[c].orientation) for c in range(j)]
        )
        fused = np.array(oracle_rrf(rank_rows, k))
        normalized = fused / max(fused)
        b = result.params
        z = np.clip(b.beta2 * (normalized - b.beta3), -500, 500)
        q = b.beta1 * (0.5 - 1.0 / (1.0 + np.exp(z))) + b.beta4 * normalized + b.beta5
        expected = 100.0 * (q - q.min()) / (q.max() - q.min())
        assert np.max(np.abs(result.sqb - expected)) < 1e-12, trial
        assert result.sqb.min() == 0.0 and result.sqb.max() == 100.0


def test_generate_sqb_anchor_folding():
    rng = np.random.default_rng(10)
    n = 80
    latent = rng.uniform(0, 1, n)
    noisy = latent + rng.normal(0, 0.05, n)
    matrix = ScoreMatrix(
        metrics=(_descriptor("a", HIGHER_BETTER), _descriptor("b", HIGHER_BETTER)),
        scores=np.column_stack([noisy, latent + rng.normal(0, 0.05, n)]),
    )
    mos = [DatasetSegment("bench", 0, n, subjective=latent, orientation="mos_higher_better")]
    dmos = [DatasetSegment("bench", 0, n, subjective=-latent, orientation="dmos_lower_better")]
    a = generate_sqb(mos, matrix, 60.0, "bench").per_segment["bench"]
    b = generate_sqb(dmos, matrix, 60.0, "bench").per_segment["bench"]
    assert np.allclose(a, b, atol=1e-9)


def test_generate_sqb_segment_permutation_invariance():
    rng = np.random.default_rng(11)
    n1, n2, n3 = 20, 30, 25
    n = n1 + n2 + n3
    matrix = random_matrix(rng, n, 3)
    subj = rng.uniform(0, 5, n2)
    segs = [
        DatasetSegment("x", 0, n1),
        DatasetSegment("anchor", n1, n2, subjective=subj),
        DatasetSegment("y", n1 + n2, n3),
    ]
    res = generate_sqb(segs, matrix, 77.0, "anchor")

    # permute declaration order AND physical row order consistently
    perm_rows = np.concatenate(
        [np.arange(n1 + n2, n), np.arange(n1, n1 + n2), np.arange(0, n1)]
    )
    perm_matrix = ScoreMatrix(metrics=matrix.metrics, scores=matrix.scores[perm_rows])
    perm_segs = [
        DatasetSegment("y", 0, n3),
        DatasetSegment("anchor", n3, n2, subjective=subj),
        DatasetSegment("x", n3 + n2, n1),
    ]
    res_p = generate_sqb(perm_segs, perm_matrix, 77.0, "anchor")
    for name in ("x", "anchor", "y"):
        assert np.allclose(res.per_segment[name], res_p.per_segment[name], atol=1e-12)


def test_generate_sqb_validations():
    rng = np.random.default_rng(12)
    matrix = random_matrix(rng, 20, 2)
    with pytest.raises(SqbError, match="anchor"):
        generate_sqb([DatasetSegment("a", 0, 20)], matrix, 60, "a")
    with pytest.raises(SqbError, match="tile"):
        generate_sqb([DatasetSegment("a", 0, 10, subjective=rng.random(10))], matrix, 60, "a")


def test_resolve_k():
    assert resolve_k(1000, "auto") == 2000.0
    assert resolve_k(2_000_000, "auto") == 8e6
    assert resolve_k(10, 60) == 60.0
    with pytest.raises(SqbError):
        resolve_k(10, -1.0)


def test_k_sweep_plateau():
    rng = np.random.default_rng(13)
    n = 300
    latent = rng.uniform(0, 1, n)
    scores = np.column_stack(
        [latent + rng.normal(0, s, n) for s in (0.05, 0.08, 0.12)]
    )
    matrix = ScoreMatrix(
        metrics=tuple(_descriptor(f"m{i}", HIGHER_BETTER) for i in range(3)),
        scores=scores,
    )
    segs = _single_segment(n, latent)
    ks = [60.0, float(n), 100.0 * n, 250.0 * n]
    pairs = k_sweep(segs, matrix, ks, "bench")
    assert len(pairs) == 4 and [k for k, _ in pairs] == ks
    wa = [v for _, v in pairs]
    assert wa[2] >= wa[0] - 1e-9  # rise toward the plateau
    # beyond 100n the ordering is frozen
    r1 = generate_sqb(segs, matrix, 100.0 * n, "bench").sqb
    r2 = generate_sqb(segs, matrix, 250.0 * n, "bench").sqb
    assert np.array_equal(np.argsort(r1), np.argsort(r2))


def test_k_sweep_single_k():
    rng = np.random.default_rng(14)
    n = 40
    latent = rng.uniform(0, 1, n)
    matrix = ScoreMatrix(
        metrics=(_descriptor("a", HIGHER_BETTER), _descriptor("b", HIGHER_BETTER)),
        scores=np.column_stack([latent, latent + rng.normal(0, 0.1, n)]),
    )
    pairs = k_sweep(_single_segment(n, latent), matrix, [60.0], "bench")
    assert len(pairs) == 1 and pairs[0][0] == 60.0
