"""Segmentation masks, per-region style pooling and style broadcast.

Label maps are plain integer arrays, ``[H, W]`` for one sample or
``[N, H, W]`` for a batch, with every label in ``[0, s)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import ShapeError, Tensor, apply_op, take, transpose

__all__ = [
    "StyleMatrix",
    "validate_labels",
    "one_hot",
    "region_counts",
    "region_avg_pool",
    "broadcast_style",
    "downsample_mask",
    "assemble_styles",
    "blend_styles",
]


def validate_labels(labels: np.ndarray, s: int) -> np.ndarray:
    labels = np.asarray(labels)
    if s < 1:
        raise ValueError(f"number of labels must be >= 1, got {s}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError(f"label map must be integer typed, got {labels.dtype}")
    bad = np.argwhere((labels < 0) | (labels >= s))
    if bad.size:
        pos = tuple(int(i) for i in bad[0])
        raise ValueError(f"label {int(labels[pos])} at pixel {pos} is outside [0, {s})")
    return labels


def one_hot(labels: np.ndarray, s: int) -> np.ndarray:
    """Binary encoding with the class axis just before the spatial axes.

    ``[H, W] -> [s, H, W]`` and ``[N, H, W] -> [N, s, H, W]``.
    """
    labels = validate_labels(labels, s)
    eye = np.eye(s, dtype=np.float64)
    return np.moveaxis(eye[labels], -1, -3)


def region_counts(labels: np.ndarray, s: int) -> np.ndarray:
    """Pixel count per label, per sample: ``[N, s]`` for a batch."""
    labels = validate_labels(labels, s)
    batch = labels.reshape(-1, labels.shape[-2] * labels.shape[-1])
    return np.stack([np.bincount(row, minlength=s) for row in batch])


@dataclass
class StyleMatrix:
    """Per-region style codes for a batch.

    ``codes`` has shape ``[N, D, s]``; ``present[n, j]`` says whether region ``j``
    had any pixels in sample ``n``'s style mask. Absent columns are zero.
    """

    codes: Tensor
    present: np.ndarray = field(default=None)

    def __post_init__(self):
        if not isinstance(self.codes, Tensor):
            self.codes = Tensor(self.codes)
        if self.codes.ndim != 3:
            raise ShapeError(f"style codes must be [N, D, s], got shape {self.codes.shape}")
        if self.present is None:
            self.present = np.ones((self.batch, self.num_labels), dtype=bool)
        self.present = np.asarray(self.present, dtype=bool)

    @property
    def batch(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    @property
    def num_labels(self) -> int:
        return self.codes.shape[2]

    @classmethod
    def zeros(cls, batch: int, dim: int, s: int) -> "StyleMatrix":
        return cls(Tensor(np.zeros((batch, dim, s))), np.zeros((batch, s), dtype=bool))

    def detach(self) -> "StyleMatrix":
        return StyleMatrix(self.codes.detach(), self.present.copy())

    def numpy(self) -> np.ndarray:
        return self.codes.data


def region_avg_pool(features: Tensor, labels: np.ndarray, s: int) -> StyleMatrix:
    """Average ``features [N, D, H, W]`` over each labelled region.

    The mean is refined with one correction pass so a constant region pools
    back to exactly that constant.
    """
    if features.ndim != 4:
        raise ShapeError(f"region_avg_pool: features must be [N,D,H,W], got {features.shape}")
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    n, d, h, w = features.shape
    if labels.shape[1:] != (h, w):
        raise ShapeError(
            f"region_avg_pool: mask spatial size {labels.shape[1:]} != feature spatial size {(h, w)}"
        )
    if labels.shape[0] != n:
        raise ShapeError(f"region_avg_pool: mask batch {labels.shape[0]} != feature batch {n}")
    mask = one_hot(labels, s).reshape(n, s, h * w)
    counts = mask.sum(axis=2)
    present = counts > 0
    safe = np.where(present, counts, 1.0)[:, None, :]
    flat = features.data.reshape(n, d, h * w)
    first = (flat @ mask.transpose(0, 2, 1)) / safe
    # second pass: mean of residuals around the first estimate
    spread = np.take_along_axis(first, labels.reshape(n, 1, h * w).repeat(d, axis=1), axis=2)
    pooled = first + ((flat - spread) @ mask.transpose(0, 2, 1)) / safe
    pooled = np.where(present[:, None, :], pooled, 0.0)

    def bw(g):
        scaled = np.where(present[:, None, :], g / safe, 0.0)
        return ((scaled @ mask).reshape(n, d, h, w),)

    return StyleMatrix(apply_op(pooled, (features,), bw), present)


def broadcast_style(st: StyleMatrix | Tensor, labels: np.ndarray) -> Tensor:
    """Scatter each region's code to its pixels: ``[N, D, s] -> [N, D, H, W]``."""
    codes = st.codes if isinstance(st, StyleMatrix) else st
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    n, d, s = codes.shape
    if labels.shape[0] not in (1, n):
        raise ShapeError(f"broadcast_style: mask batch {labels.shape[0]} != style batch {n}")
    if labels.shape[0] == 1 and n > 1:
        labels = np.repeat(labels, n, axis=0)
    labels = validate_labels(labels, s)
    h, w = labels.shape[1:]
    if n == 1:
        return take(codes, labels[0], axis=2).reshape(1, d, h, w)
    # gather per sample through a flattened [N*s] index
    flat = codes.reshape(n, d, s)
    offsets = (np.arange(n) * s)[:, None, None]
    idx = (labels + offsets).reshape(-1)
    stacked = transpose(flat, (1, 0, 2)).reshape(d, n * s)
    gathered = take(stacked, idx, axis=1).reshape(d, n, h, w)
    return transpose(gathered, (1, 0, 2, 3))


def downsample_mask(labels: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour label sampling at rows ``floor(y*H/th)``, cols ``floor(x*W/tw)``."""
    labels = np.asarray(labels)
    if target_h < 1 or target_w < 1:
        raise ValueError(f"downsample_mask: target dims must be positive, got {target_h}x{target_w}")
    h, w = labels.shape[-2:]
    if target_h > h or target_w > w:
        raise ValueError(f"downsample_mask: target {target_h}x{target_w} exceeds source {h}x{w}")
    rows = (np.arange(target_h) * h) // target_h
    cols = (np.arange(target_w) * w) // target_w
    return labels[..., rows[:, None], cols[None, :]]


def assemble_styles(
    sources: Mapping[int, StyleMatrix],
    s: int,
    dim: int,
    fallback: Callable[[int], np.ndarray | None] | None = None,
) -> StyleMatrix:
    """Build a one-sample style matrix column by column.

    ``sources[j]`` is an encoded (batch-1) style matrix supplying column ``j``.
    A region the source did not contain gets ``fallback(j)`` if given, else a
    zero column.
    """
    codes = np.zeros((1, dim, s))
    present = np.zeros((1, s), dtype=bool)
    for j, src in sources.items():
        if not 0 <= j < s:
            raise ValueError(f"region {j} is outside [0, {s})")
        if src.dim != dim:
            raise ShapeError(f"style dimension {src.dim} != expected {dim}")
        if src.present[0, j]:
            codes[0, :, j] = src.codes.data[0, :, j]
            present[0, j] = True
        elif fallback is not None:
            col = fallback(j)
            if col is not None:
                codes[0, :, j] = col
                present[0, j] = True
    return StyleMatrix(Tensor(codes), present)


def blend_styles(a: StyleMatrix, b: StyleMatrix, t: float, regions=None) -> StyleMatrix:
    """``(1 - t) * a + t * b`` on the selected regions, ``a`` elsewhere."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation weight t={t} is outside [0, 1]")
    if a.codes.shape != b.codes.shape:
        raise ShapeError(f"style shapes differ: {a.codes.shape} vs {b.codes.shape}")
    ca, cb = a.codes.data, b.codes.data
    mixed = (1.0 - t) * ca + t * cb
    present = a.present | b.present
    if regions is not None:
        sel = np.zeros(a.num_labels, dtype=bool)
        sel[list(regions)] = True
        mixed = np.where(sel[None, None, :], mixed, ca)
        present = np.where(sel[None, :], present, a.present)
    return StyleMatrix(Tensor(mixed), present)
