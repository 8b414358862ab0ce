import numpy as np
import pytest

from iqa_forge.distort import (
    DistortionSpec,
    apply_chain,
    derive_seed,
    gaussian_blur,
    gaussian_kernel1d,
    gaussian_noise,
    jp2k_like,
    jpeg_like,
    parse_chain,
    serialize_chain,
)
from iqa_forge.metrics import psnr, ssim


@pytest.fixture(scope="module")
def natural(refs128):
    return refs128["astronaut"]


def test_noise_zero_sigma_identity():
    img = np.random.default_rng(0).random((16, 16))
    assert gaussian_noise(img, 0.0, 123) is img


def test_noise_determinism():
    img = np.random.default_rng(1).random((32, 32, 3))
    a = gaussian_noise(img, 0.1, 42)
    b = gaussian_noise(img, 0.1, 42)
    assert np.array_equal(a, b)
    c = gaussian_noise(img, 0.1, 43)
    assert not np.array_equal(a, c)


def test_noise_variance_mid_gray():
    img = np.full((512, 512), 0.5)
    out = gaussian_noise(img, 0.05, 7)
    var = np.var(out - img)
    assert abs(var - 0.05**2) < 0.05 * 0.05**2


def test_blur_identity_and_constants():
    img = np.random.default_rng(2).random((24, 24))
    assert gaussian_blur(img, 0.0) is img
    const = np.full((20, 20), 0.42)
    assert np.allclose(gaussian_blur(const, 3.7), 0.42, atol=1e-12)


def test_blur_impulse_matches_kernel():
    imp = np.zeros((21, 21))
    imp[10, 10] = 1.0
    out = gaussian_blur(imp, 1.0)
    k = gaussian_kernel1d(1.0)
    r = len(k) // 2
    expected = np.outer(k, k)
    assert np.max(np.abs(out[10 - r : 10 + r + 1, 10 - r : 10 + r + 1] - expected)) < 1e-9
    assert abs(out.sum() - 1.0) < 1e-9


def test_jpeg_near_lossless_at_100(natural):
    out = jpeg_like(natural, 100)
    assert psnr(natural, out) >= 45.0


def test_jpeg_constant_image():
    from iqa_forge.distort import _jpeg_qtable

    const = np.full((32, 32), 0.4)
    for q in (10, 50, 90):
        out = jpeg_like(const, q)
        # only the DC coefficient is nonzero; its rounding error is at most
        # half a step, spread uniformly over the 8x8 block
        dc_step = _jpeg_qtable(q)[0, 0]
        assert np.max(np.abs(out - const)) <= (dc_step / 2.0) / 8.0 / 255.0 + 1e-12


def test_jpeg_quality_monotonicity(natural):
    assert psnr(natural, jpeg_like(natural, 90)) >= psnr(natural, jpeg_like(natural, 10))


def test_jpeg_rejects_bad_quality():
    with pytest.raises(ValueError):
        jpeg_like(np.zeros((8, 8)), 0.5)


def test_jp2k_step_zero_identity(natural):
    assert jp2k_like(natural, 0.0) is natural


def test_jp2k_constant_unchanged():
    const = np.full((40, 40), 0.6)
    assert np.max(np.abs(jp2k_like(const, 0.5) - const)) < 1e-9


def test_jp2k_odd_sizes_reconstruct():
    # a vanishing quantization step exercises the full filter bank, whose
    # reconstruction must be transparent on any geometry
    rng = np.random.default_rng(9)
    for shape in [(17, 23), (9, 8), (31, 33, 3), (2, 2), (8, 3)]:
        img = rng.random(shape) * 0.8 + 0.1
        assert np.max(np.abs(jp2k_like(img, 1e-12) - img)) < 1e-9


def test_jp2k_psnr_monotone_in_step(natural):
    vals = [psnr(natural, jp2k_like(natural, s)) for s in (0.01, 0.05, 0.1, 0.2)]
    assert all(vals[i + 1] <= vals[i] + 1e-9 for i in range(len(vals) - 1))


def test_chain_empty_identity():
    img = np.random.default_rng(4).random((12, 12))
    assert apply_chain(img, ()) is img


def test_chain_blur_zero_transparent():
    img = np.random.default_rng(5).random((32, 32))
    noise_only = apply_chain(img, (DistortionSpec("gaussian_noise", 0.03, 99),))
    both = apply_chain(
        img,
        (DistortionSpec("gaussian_noise", 0.03, 99), DistortionSpec("gaussian_blur", 0.0)),
    )
    assert np.array_equal(noise_only, both)


def test_chain_order_sensitivity(natural):
    noise = DistortionSpec("gaussian_noise", 0.08, 11)
    blur = DistortionSpec("gaussian_blur", 2.0)
    a = apply_chain(natural, (noise, blur))
    b = apply_chain(natural, (blur, noise))
    assert abs(ssim(natural, a) - ssim(natural, b)) > 1e-3


def test_spec_serialization_roundtrip():
    chain = (
        DistortionSpec("gaussian_noise", 0.036279999999999996, 12345678901234),
        DistortionSpec("jpeg_like", 37.0, 0),
    )
    assert parse_chain(serialize_chain(chain)) == chain
    assert parse_chain("") == ()


def test_derive_seed_stable():
    s = derive_seed("ref1", "gaussian_noise", 3, 1)
    assert s == derive_seed("ref1", "gaussian_noise", 3, 1)
    assert s != derive_seed("ref1", "gaussian_noise", 3, 2)
    assert s != derive_seed("ref1", "gaussian_noise", 4, 1)
    assert 0 <= s < 2**64
