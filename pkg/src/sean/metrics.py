"""Image similarity, segmentation agreement and Frechet distance."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSD_TOL = 1e-8


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _pair(a, b, name: str) -> tuple[np.ndarray, np.ndarray]:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def to_unit_range(x) -> np.ndarray:
    """Map generator-range [-1, 1] values to [0, 1]."""
    return (_arr(x) + 1.0) * 0.5


def mse(a, b) -> float:
    a, b = _pair(a, b, "mse")
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Identical inputs give ``PSNR_CAP``; any nonzero error gives the exact
    value, so the cap is reached only on equality.
    """
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / err))


def rmse(a, b) -> float:
    return float(np.sqrt(mse(a, b)))


def ssim(a, b, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over non-overlapping ``window`` x ``window`` tiles, averaged over channels.

    Accepts ``[H, W]``, ``[C, H, W]`` or ``[N, C, H, W]``; trailing rows or
    columns that do not fill a tile are ignored.
    """
    a, b = _pair(a, b, "ssim")
    if a.ndim < 2:
        raise ShapeError("ssim: need at least 2-D images")
    h, w = a.shape[-2:]
    if h < window or w < window:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the {window}x{window} window")
    th, tw = h // window, w // window
    lead = a.shape[:-2]

    def tiles(x):
        x = x[..., : th * window, : tw * window]
        x = x.reshape(lead + (th, window, tw, window))
        return np.moveaxis(x, -3, -2).reshape(lead + (th, tw, window * window))

    ta, tb = tiles(a), tiles(b)
    mu_a, mu_b = ta.mean(axis=-1), tb.mean(axis=-1)
    da, db = ta - mu_a[..., None], tb - mu_b[..., None]
    var_a = (da * da).mean(axis=-1)
    var_b = (db * db).mean(axis=-1)
    cov = (da * db).mean(axis=-1)
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def confusion_matrix(pred, gt, s: int) -> np.ndarray:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"segmentation: shape mismatch {pred.shape} vs {gt.shape}")
    idx = gt.reshape(-1).astype(np.int64) * s + pred.reshape(-1).astype(np.int64)
    return np.bincount(idx, minlength=s * s).reshape(s, s)


def segmentation_scores(pred, gt, s: int) -> tuple[float, float]:
    """``(mIoU, pixel accuracy)``; mIoU averages over classes that occur in ``gt``."""
    cm = confusion_matrix(pred, gt, s).astype(np.float64)
    total = cm.sum()
    accu = float(np.trace(cm) / total) if total else 0.0
    tp = np.diag(cm)
    gt_count = cm.sum(axis=1)
    union = gt_count + cm.sum(axis=0) - tp
    present = gt_count > 0
    iou = tp[present] / union[present]
    return float(iou.mean()) if iou.size else 0.0, accu


def _check_cov(cov: np.ndarray, name: str) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape[0] != cov.shape[1]:
        raise ShapeError(f"{name} must be square, got {cov.shape}")
    scale = max(1.0, float(np.abs(cov).max()))
    if np.abs(cov - cov.T).max() > PSD_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(cov).min() < -PSD_TOL * scale:
        raise ValueError(f"{name} is not positive semi-definite")
    return cov


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) * 0.5)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """``|mu1 - mu2|^2 + Tr(cov1 + cov2 - 2 (cov1 cov2)^(1/2))`` for two Gaussians.

    The trace of the product root is taken from the symmetric matrix
    ``cov1^(1/2) cov2 cov1^(1/2)``, which has the same spectrum.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    if mu1.shape != mu2.shape:
        raise ShapeError(f"mean shapes differ: {mu1.shape} vs {mu2.shape}")
    cov1, cov2 = _check_cov(cov1, "cov1"), _check_cov(cov2, "cov2")
    if cov1.shape != cov2.shape or cov1.shape[0] != mu1.shape[0]:
        raise ShapeError("covariance and mean dimensions disagree")
    root1 = _psd_sqrt(cov1)
    inner = root1 @ cov2 @ root1
    vals = np.linalg.eigvalsh((inner + inner.T) * 0.5)
    tr_root = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_root)


def feature_statistics(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``[num_samples, dim]`` feature vectors."""
    features = np.asarray(features, dtype=np.float64)
    return features.mean(axis=0), np.atleast_2d(np.cov(features, rowvar=False))
