import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import convolve2d

from metafuse.errors import ParameterError, ShapeError
from metafuse.forward import color_average, sv_convolve
from metafuse.image import Image, KernelField, PsfGrid
from metafuse.metrics import psnr
from metafuse.predeblur import (apply_kernel_field, concat_condition, dkpn_loss, fft_size, inverse_kernel,
                                predeblur_image, predict_kernels, split_condition, taper_window)
from metafuse.psf import gaussian_kernel, make_psf_grid
from metafuse.scenes import standard_scene

# PSNR gains (dB) of the noiseless 64x64 example, frozen from the first green run
NOISELESS_GAIN_FIXTURE = {0: 5.602, 1: 6.272, 2: 6.955}


def oracle_inverse(psf, lam, k_out):
    """Independent evaluation: explicit zero-padding, DFT by matrix products,
    centre crop by index arithmetic."""
    k = psf.shape[0]
    P = 1 << int(np.ceil(np.log2(4 * k)))
    n = np.arange(P)
    F = np.exp(-2j * np.pi * np.outer(n, n) / P)
    buf = np.zeros((P, P))
    r = k // 2
    for i in range(k):
        for j in range(k):
            buf[(i - r) % P, (j - r) % P] = psf[i, j]
    H = F @ buf @ F.T
    G = np.conj(H) / (np.abs(H) ** 2 + lam)
    g = np.real(np.conj(F) @ G @ np.conj(F).T) / P ** 2
    ro = k_out // 2
    idx = [(i - ro) % P for i in range(k_out)]
    return g[np.ix_(idx, idx)]


def composite(psf, kern):
    c = convolve2d(kern, psf)
    r = c.shape[0] // 2
    off = c.copy()
    off[r, r] = 0.0
    return c[r, r], float((off ** 2).sum())


def test_fft_size():
    assert [fft_size(k) for k in (1, 3, 7, 8, 11)] == [4, 16, 32, 32, 64]


def test_window_shape():
    w = taper_window(15)
    assert w.shape == (15, 15) and w[7, 7] == 1.0
    np.testing.assert_allclose(w, w.T)
    np.testing.assert_allclose(w, w[::-1, ::-1])
    assert np.all(w > 0) and np.all(w <= 1)


@pytest.mark.parametrize("k,k_out,lam", [(7, 15, 1e-6), (5, 9, 1e-2), (3, 15, 0.5), (11, 31, 1e-4)])
def test_kernels_against_oracle(rng, k, k_out, lam):
    psf = rng.random((k, k))
    psf /= psf.sum()
    expected = oracle_inverse(psf, lam, k_out) * taper_window(k_out)
    np.testing.assert_allclose(inverse_kernel(psf, lam, k_out), expected, atol=1e-9)


def test_kout_beyond_fft_grid_zero_pads(rng):
    psf = rng.random((3, 3))
    psf /= psf.sum()
    small = inverse_kernel(psf, 0.5, 15, window=False)  # P = 16
    big = inverse_kernel(psf, 0.5, 21, window=False)
    np.testing.assert_array_equal(big[3:18, 3:18], small)
    # every periodic tap appears exactly once, the rest is zero
    full = np.real(np.fft.ifft2(np.conj(np.fft.fft2(np.roll(np.pad(psf, ((0, 13), (0, 13))), (-1, -1), (0, 1))))
                                / (np.abs(np.fft.fft2(np.pad(psf, ((0, 13), (0, 13))))) ** 2 + 0.5)))
    assert np.count_nonzero(big) == 256
    assert big.sum() == pytest.approx(full.sum(), abs=1e-12)


def test_predict_kernels_layout_and_lambda(rng):
    grid = make_psf_grid("astigmatic-ramp", 2, 3, 5, 20, 12, channels=3, chromatic=(0.8, 1, 1.2))
    field = predict_kernels(grid, noise_sigma=0.01, k_out=9, lambda_scale=3.0)
    assert isinstance(field, KernelField)
    assert field.kernels.shape == (2, 3, 3, 9, 9)
    assert (field.image_w, field.image_h) == (20, 12)
    lam = 3.0 * 0.01 ** 2
    expected = oracle_inverse(grid.kernels[1, 2, 0], lam, 9) * taper_window(9)
    np.testing.assert_allclose(field.kernels[1, 2, 0], expected, atol=1e-9)


def test_even_kout_rejected():
    with pytest.raises(ParameterError):
        predict_kernels(make_psf_grid("delta", 1, 1, 3, 8, 8), k_out=14)


def test_delta_psf_gives_identity(rng):
    grid = make_psf_grid("delta", 2, 2, 5, 16, 16)
    field = predict_kernels(grid, 0.0, 15)
    centre = field.kernels[..., 7, 7]
    assert np.all(np.abs(centre - 1) < 1e-3)
    y = Image(rng.random((3, 16, 16)))
    assert np.max(np.abs(predeblur_image(y, grid).data - y.data)) < 1e-3


def test_centre_tap_matches_periodic_oracle():
    # the composite centre tap equals the mean Wiener gain over the P x P grid
    psf = gaussian_kernel(7, 1.0)
    P = fft_size(7)
    H = np.fft.fft2(psf, (P, P))
    expected = float(np.mean(np.abs(H) ** 2 / (np.abs(H) ** 2 + 1e-6)))
    centre, off_energy = composite(psf, inverse_kernel(psf, 1e-6, 15))
    assert centre == pytest.approx(expected, abs=1e-9)
    assert off_energy < 0.05


@pytest.mark.xfail(strict=True, reason="periodic Wiener composite tops out at 0.9441 on a 32-point grid")
def test_centre_tap_above_095():
    centre, _ = composite(gaussian_kernel(7, 1.0), inverse_kernel(gaussian_kernel(7, 1.0), 1e-6, 15))
    assert centre > 0.95


@pytest.mark.parametrize("sigma", [0.6, 0.8, 1.0])
def test_wiener_consistency(sigma):
    psf = gaussian_kernel(7, sigma)
    centre, _ = composite(psf, inverse_kernel(psf, 1e-8, 31))
    assert centre >= 0.99


def test_large_lambda_limit():
    psf = gaussian_kernel(7, 1.2, 0.8, 0.3)
    kern = inverse_kernel(psf, 10.0, 15)
    limit = np.zeros((15, 15))
    limit[4:11, 4:11] = psf[::-1, ::-1] / 10.0
    assert np.max(np.abs(kern - limit)) < 1e-3


def test_noise_energy_bound(rng):
    grid = make_psf_grid("gaussian-ramp", 3, 3, 7, 48, 48, 0.8, 1.6)
    lam_scale, sigma = 10.0 / 1e-6, 0.0
    noise = Image(rng.normal(size=(1, 48, 48)))
    out = predeblur_image(noise, grid, sigma, 15, lam_scale)
    max_h = max(np.abs(np.fft.fft2(k, (32, 32))).max() for k in grid.kernels.reshape(-1, 7, 7))
    e_in, e_out = np.sum(noise.data ** 2), np.sum(out.data ** 2)
    assert e_out <= e_in / 10.0 * max_h
    # per-frequency gain |H|/(|H|^2+lam) <= max|H|/lam gives the tighter squared bound too
    assert e_out <= e_in * (max_h / 10.0) ** 2 * 1.05


def test_lambda_monotonicity(rng):
    for _ in range(10):
        psf = rng.random((5, 5)) ** 3
        psf /= psf.sum()
        norms = [np.linalg.norm(inverse_kernel(psf, lam, 15)) for lam in (1e-6, 1e-4, 1e-2, 1e-1, 1.0)]
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_apply_kernel_field_single_anchor(rng):
    k = rng.normal(size=(5, 5))
    img = rng.random((1, 14, 11))
    out = apply_kernel_field(Image(img), KernelField(k[None, None, None], 11, 14))
    oracle = convolve2d(np.pad(img[0], 2, mode="edge"), k, mode="valid")
    np.testing.assert_allclose(out.data[0], oracle, atol=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-2, 2))
def test_predeblur_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    grid = make_psf_grid("gaussian-ramp", 2, 2, 5, 16, 16)
    u, v = rng.random((1, 16, 16)), rng.random((1, 16, 16))
    f = lambda z: predeblur_image(Image(z), grid, 0.01, 9).data  # noqa: E731
    np.testing.assert_allclose(f(a * u + b * v), a * f(u) + b * f(v), atol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noiseless_gain_64(seed):
    x = Image(standard_scene(64, seed).data.mean(axis=0, keepdims=True))
    grid = make_psf_grid("gaussian-ramp", 1, 1, 7, 64, 64, 1.0, 1.0)
    y = sv_convolve(x, grid)
    gain = psnr(predeblur_image(y, grid, 0.0, 31, 1.0), x) - psnr(y, x)
    assert gain >= 5.0
    assert gain == pytest.approx(NOISELESS_GAIN_FIXTURE[seed], abs=0.01)


def test_dkpn_loss_cases(rng):
    x = Image(rng.random((3, 8, 8)))
    gray = color_average(x)
    assert dkpn_loss(x, gray, x) == 0.0
    assert dkpn_loss(Image(x.data + 0.1), gray, x) == pytest.approx(0.01, abs=1e-12)
    with pytest.raises(ShapeError):
        dkpn_loss(gray, gray, x)


def test_dkpn_loss_two_loop_oracle(rng):
    tc, ts, x = rng.random((3, 5, 6)), rng.random((1, 5, 6)), rng.random((3, 5, 6))
    acc_c = acc_s = 0.0
    for i in range(5):
        for j in range(6):
            for c in range(3):
                acc_c += (tc[c, i, j] - x[c, i, j]) ** 2
            acc_s += (ts[0, i, j] - (x[0, i, j] + x[1, i, j] + x[2, i, j]) / 3) ** 2
    expected = acc_c / 90 + acc_s / 30
    assert dkpn_loss(Image(tc), Image(ts), Image(x)) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans(), st.booleans())
def test_dkpn_loss_nonneg_zero_iff_exact(seed, perturb_c, perturb_s):
    rng = np.random.default_rng(seed)
    x = Image(rng.random((3, 4, 4)))
    tc = Image(x.data + (1e-3 if perturb_c else 0.0))
    ts = Image(color_average(x).data + (1e-3 if perturb_s else 0.0))
    loss = dkpn_loss(tc, ts, x)
    assert loss >= 0
    assert (loss == 0) == (not perturb_c and not perturb_s)


def test_concat_and_split(rng):
    a, b = Image(rng.random((3, 4, 5))), Image(rng.random((3, 4, 5)))
    cat = concat_condition(a, b)
    assert cat.channels == 6
    np.testing.assert_array_equal(cat.data[:3], a.data)
    np.testing.assert_array_equal(cat.data[3:], b.data)
    a2, b2 = split_condition(cat, 3)
    np.testing.assert_array_equal(a2.data, a.data)
    np.testing.assert_array_equal(b2.data, b.data)
    assert concat_condition(Image(a.data[:1]), Image(b.data[:1])).channels == 2
    with pytest.raises(ShapeError):
        concat_condition(a, Image(rng.random((3, 4, 6))))
