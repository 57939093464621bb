import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sean.metrics import (
    PSNR_CAP,
    SSIM_C1,
    SSIM_C2,
    feature_statistics,
    frechet_distance,
    psnr,
    rmse,
    segmentation_scores,
    ssim,
    to_unit_range,
)
from sean.tensor import ShapeError
from sean.training import gen_synthetic_dataset

corpus = [to_unit_range(s.image) for s in gen_synthetic_dataset(4, 3, 16, seed=5)]


def test_psnr_examples():
    a = np.random.default_rng(0).uniform(0, 1, (3, 8, 8))
    assert psnr(a, a) == PSNR_CAP
    b = np.full((4, 4), 0.5)
    assert abs(psnr(b, b + 0.1) - 20.0) < 1e-9
    err = np.random.default_rng(1).uniform(-0.05, 0.05, a.shape)
    drop = psnr(a, a + err) - psnr(a, a + 2 * err)
    assert abs(drop - 20 * np.log10(2)) < 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_rmse_examples():
    a = np.random.default_rng(2).uniform(0, 1, (3, 5, 5))
    b = np.random.default_rng(3).uniform(0, 1, (3, 5, 5))
    assert rmse(a, a) == 0.0
    assert rmse(np.zeros((2, 2)), np.full((2, 2), 0.5)) == 0.5
    brute = np.sqrt(sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size)
    assert abs(rmse(a, b) - brute) < 1e-15


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_rmse_zero_iff_psnr_cap_iff_equal(seed, equal):
    a = np.random.default_rng(seed).uniform(0, 1, (2, 4, 4))
    b = a.copy()
    if not equal:
        b[0, 0, 0] = np.nextafter(b[0, 0, 0], 2.0)
    assert (rmse(a, b) == 0.0) == equal == np.array_equal(a, b)
    assert (psnr(a, b) == PSNR_CAP) == equal


def test_ssim_examples():
    for img in corpus:
        assert ssim(img, img) == 1.0
    a, b = np.zeros((8, 8)), np.ones((8, 8))
    expected = (SSIM_C1 * SSIM_C2) / ((1 + SSIM_C1) * SSIM_C2)
    assert abs(ssim(a, b) - expected) < 1e-15
    x, y = corpus[0], corpus[1]
    assert ssim(x, y) == ssim(y, x)
    assert -1.0 <= ssim(x, y) <= 1.0
    with pytest.raises(ShapeError, match="window"):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_segmentation_examples():
    gt = np.array([[0, 0], [1, 1]])
    assert segmentation_scores(gt, gt, 2) == (1.0, 1.0)
    assert segmentation_scores(np.zeros((2, 2), dtype=int), gt, 2) == (0.25, 0.5)
    with pytest.raises(ShapeError):
        segmentation_scores(np.zeros((2, 2), dtype=int), np.zeros((3, 2), dtype=int), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_segmentation_invariances(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 4, (6, 6))
    pred = np.where(rng.uniform(size=(6, 6)) < 0.7, gt, rng.integers(0, 4, (6, 6)))
    base = segmentation_scores(pred, gt, 4)
    order = rng.permutation(36)
    assert segmentation_scores(pred.ravel()[order], gt.ravel()[order], 4) == base
    perm = rng.permutation(4)
    relabeled = segmentation_scores(perm[pred], perm[gt], 4)
    assert abs(relabeled[0] - base[0]) < 1e-15 and relabeled[1] == base[1]


def random_psd(rng, d):
    m = rng.standard_normal((d, d + 2))
    return m @ m.T / (d + 2)


def test_frechet_examples():
    rng = np.random.default_rng(4)
    mu, cov = rng.standard_normal(5), random_psd(rng, 5)
    assert abs(frechet_distance(mu, cov, mu, cov)) < 1e-9
    assert abs(frechet_distance([0.0], [[1.0]], [1.0], [[4.0]]) - 2.0) < 1e-9
    mu2, cov2 = rng.standard_normal(5), random_psd(rng, 5)
    assert abs(frechet_distance(mu, cov, mu2, cov2) - frechet_distance(mu2, cov2, mu, cov)) < 1e-9


def test_frechet_rejects_non_psd():
    with pytest.raises(ValueError, match="positive semi-definite"):
        frechet_distance([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], np.eye(2))
    with pytest.raises(ValueError, match="symmetric"):
        frechet_distance([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0], np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_frechet_nonnegative_and_matches_commuting_closed_form(seed, d):
    rng = np.random.default_rng(seed)
    assert frechet_distance(rng.standard_normal(d), random_psd(rng, d),
                            rng.standard_normal(d), random_psd(rng, d)) >= -1e-9
    # diagonal covariances commute: trace term is sum (sqrt(a) - sqrt(b))^2
    a, b = rng.uniform(0, 3, d), rng.uniform(0, 3, d)
    expected = np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)
    assert abs(frechet_distance(np.zeros(d), np.diag(a), np.zeros(d), np.diag(b)) - expected) < 1e-9


def test_feature_statistics():
    feats = np.random.default_rng(6).standard_normal((50, 3))
    mu, cov = feature_statistics(feats)
    assert np.allclose(mu, feats.mean(axis=0))
    assert np.allclose(cov, np.cov(feats.T))
