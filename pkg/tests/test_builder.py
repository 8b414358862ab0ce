import hashlib
from pathlib import Path

import numpy as np
import pytest

from iqa_forge.builder import (
    STAGE1_KINDS,
    STAGE2_COMBOS,
    BuildError,
    annotate_sqb,
    build_stage1,
    build_stage2,
    colorfulness,
    content_descriptors,
    read_manifest,
    spatial_information,
    summarize,
    write_manifest,
)
from iqa_forge.calibrate import STAGE2_LEVELS, calibrate_levels
from iqa_forge.pixels import load_image


@pytest.fixture(scope="module")
def small_refs(refs128):
    return {
        "alpha": refs128["astronaut"][:96, :96],
        "bravo": refs128["coffee"][:96, :96],
    }


@pytest.fixture(scope="module")
def small_calib(small_refs):
    table = {}
    for ref_id, img in small_refs.items():
        for kind in set(STAGE1_KINDS) | {k2 for _, k2 in STAGE2_COMBOS}:
            for e in calibrate_levels(img, kind, levels=STAGE2_LEVELS, ref_id=ref_id):
                table[(e.ref_id, e.kind, e.level)] = e
    return table


@pytest.fixture(scope="module")
def built(tmp_path_factory, small_refs, small_calib):
    out = tmp_path_factory.mktemp("corpus")
    stage1 = build_stage1(small_refs, small_calib, out)
    stage2 = build_stage2(small_refs, stage1, small_calib, out)
    return out, stage1, stage2


def test_stage_counts(built, small_refs):
    _, stage1, stage2 = built
    n = len(small_refs)
    assert len(stage1) == n * 3 * 11
    assert len(stage2) == n * 11 * 17 * 5
    per_combo = n * 11 * 17
    for k1, k2 in STAGE2_COMBOS:
        rows = [r for r in stage2 if r.chain[0].kind == k1 and r.chain[1].kind == k2]
        assert len(rows) == per_combo


def test_empty_refs_empty_manifest(tmp_path, small_calib):
    assert build_stage1({}, small_calib, tmp_path) == []


def test_manifest_invariants(built):
    out, stage1, stage2 = built
    ids = [r.image_id for r in stage1 + stage2]
    assert len(set(ids)) == len(ids)
    for r in stage1:
        assert r.stage == 1 and len(r.chain) == 1 and 1 <= r.level1 <= 11
        assert r.level2 is None and r.achieved1 is not None
    for r in stage2:
        assert r.stage == 2 and len(r.chain) == 2 and 1 <= r.level2 <= 17
        assert r.achieved2 is not None
        assert (out / r.path).is_file()


def test_stage2_level1_identity(built):
    out, stage1, stage2 = built
    parents = {(r.ref_id, r.chain[0].kind, r.level1): r for r in stage1}
    # jp2k step 0 second stage: final file is byte-identical to its parent
    for r in stage2:
        if r.chain[1].kind != "jp2k_like" or r.level2 != 1:
            continue
        parent = parents[(r.ref_id, r.chain[0].kind, r.level1)]
        assert (out / r.path).read_bytes() == (out / parent.path).read_bytes()
    # jpeg q=100 second stage: within the DC rounding bound of the parent
    checked = 0
    for r in stage2:
        if r.chain[1].kind != "jpeg_like" or r.level2 != 1 or r.chain[0].kind != "gaussian_noise":
            continue
        parent = parents[(r.ref_id, r.chain[0].kind, r.level1)]
        a = load_image(out / r.path)
        b = load_image(out / parent.path)
        assert np.max(np.abs(a - b)) <= 3.0 / 255.0
        checked += 1
    assert checked > 0


def test_rebuild_is_byte_identical(built, small_refs, small_calib, tmp_path):
    out, stage1, _ = built
    again = build_stage1(small_refs, small_calib, tmp_path)
    assert again == stage1
    for rec in stage1[:8]:
        h1 = hashlib.sha256((out / rec.path).read_bytes()).hexdigest()
        h2 = hashlib.sha256((tmp_path / rec.path).read_bytes()).hexdigest()
        assert h1 == h2


def test_seed_root_changes_noise_reproducibly(small_refs, small_calib, tmp_path):
    a = build_stage1(small_refs, small_calib, tmp_path / "r0", seed_root=0)
    b = build_stage1(small_refs, small_calib, tmp_path / "r1", seed_root=1)
    b2 = build_stage1(small_refs, small_calib, tmp_path / "r1b", seed_root=1)
    assert b == b2
    noise_a = next(r for r in a if r.chain[0].kind == "gaussian_noise" and r.level1 == 5)
    noise_b = next(r for r in b if r.chain[0].kind == "gaussian_noise" and r.level1 == 5)
    assert noise_a.chain[0].seed != noise_b.chain[0].seed
    assert (tmp_path / "r0" / noise_a.path).read_bytes() != (tmp_path / "r1" / noise_b.path).read_bytes()


def test_build_worker_invariance(small_refs, small_calib, tmp_path):
    a = build_stage1(small_refs, small_calib, tmp_path / "w1", workers=1)
    b = build_stage1(small_refs, small_calib, tmp_path / "w2", workers=2)
    assert a == b
    for rec in a:
        assert (tmp_path / "w1" / rec.path).read_bytes() == (tmp_path / "w2" / rec.path).read_bytes()


def test_missing_calibration_aborts(small_refs, small_calib, tmp_path):
    broken = dict(small_calib)
    del broken[("alpha", "gaussian_blur", 7)]
    with pytest.raises(BuildError, match=r"alpha.*gaussian_blur.*7"):
        build_stage1(small_refs, broken, tmp_path)


def test_stage2_requires_complete_stage1(small_refs, small_calib, tmp_path, built):
    _, stage1, _ = built
    partial = [r for r in stage1 if not (r.ref_id == "bravo" and r.level1 == 4)]
    with pytest.raises(BuildError, match="bravo"):
        build_stage2(small_refs, partial, small_calib, tmp_path)


def test_manifest_csv_roundtrip(built, tmp_path):
    _, stage1, stage2 = built
    records = stage1 + stage2[:40]
    path = tmp_path / "manifest.csv"
    write_manifest(records, path)
    assert read_manifest(path) == records


def test_annotate_sqb(built):
    _, stage1, _ = built
    labeled = annotate_sqb(stage1, {stage1[0].image_id: 55.5})
    assert labeled[0].sqb == 55.5
    assert labeled[1].sqb is None


# --- content descriptors -----------------------------------------------------


def test_spatial_information_cases():
    assert spatial_information(np.full((16, 16), 0.7)) == 0.0
    step = np.zeros((8, 8))
    step[:, 4:] = 1.0
    # Sobel magnitude is 4 on the two columns flanking the edge: mean = 1
    assert np.isclose(spatial_information(step), 1.0)
    base = np.random.default_rng(0).random((32, 32)) * 0.5 + 0.2
    assert np.isclose(
        spatial_information(base), spatial_information(base + 0.2), atol=1e-12
    )


def test_colorfulness_cases():
    gray = np.repeat(np.random.default_rng(1).random((10, 10))[:, :, None], 3, axis=2)
    assert np.isclose(colorfulness(gray), 0.0)

    half = np.zeros((4, 8, 3))
    half[:, :4, 0] = 1.0  # left: pure red
    half[:, 4:, 1] = 1.0  # right: pure green
    # rg = +/-1 (var 1, mean 0); yb = 0.5 everywhere (var 0, mean 0.5)
    assert np.isclose(colorfulness(half), 1.0 + 0.3 * 0.5)

    rng = np.random.default_rng(2)
    img = rng.random((12, 12, 3))
    flat = img.reshape(-1, 3)
    shuffled = flat[rng.permutation(len(flat))].reshape(img.shape)
    assert np.isclose(colorfulness(img), colorfulness(shuffled), atol=1e-12)
    with pytest.raises(BuildError):
        colorfulness(np.zeros((8, 8)))


def test_content_descriptors_on_natural(refs128):
    d = content_descriptors(refs128["astronaut"])
    assert d.si > 0 and d.cf > 0


# --- summaries ------------------------------------------------------------------


def test_summarize_examples():
    s = summarize([50.0])
    assert s["histogram"] == {50: 1} and s["median"] == 50.0

    s = summarize([0.0, 25.0, 50.0, 75.0, 100.0])
    assert s["median"] == 50.0 and s["q1"] == 25.0 and s["q3"] == 75.0

    rng = np.random.default_rng(3)
    s = summarize(rng.uniform(0, 100, 10_000))
    for decile in range(0, 100, 10):
        assert any(decile <= b < decile + 10 for b in s["histogram"])

    with pytest.raises(BuildError):
        summarize([])


def test_summarize_outliers():
    vals = [10.0] * 20 + [11.0] * 20 + [12.0] * 20 + [90.0]
    s = summarize(vals)
    assert s["n_outliers"] == 1
    assert s["whisker_high"] == 12.0
    assert s["max"] == 90.0
