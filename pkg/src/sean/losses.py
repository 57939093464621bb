"""Adversarial, feature-matching and perceptual objectives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import tensor as T
from .layers import glorot_uniform
from .tensor import ShapeError, Tensor


@dataclass
class LossWeights:
    lambda_fm: float = 10.0
    lambda_percept: float = 10.0

    def __post_init__(self):
        if self.lambda_fm < 0 or self.lambda_percept < 0:
            raise ValueError("loss weights must be non-negative")


def hinge_d_loss(real_logits: Sequence[Tensor], fake_logits: Sequence[Tensor]) -> Tensor:
    """Mean over scales of ``E[max(0, 1 - D(real))] + E[max(0, 1 + D(fake))]``."""
    if not real_logits or not fake_logits:
        raise ValueError("hinge_d_loss needs at least one scale")
    if len(real_logits) != len(fake_logits):
        raise ValueError(f"{len(real_logits)} real scales vs {len(fake_logits)} fake scales")
    terms = []
    for real, fake in zip(real_logits, fake_logits):
        r = T.mean(T.relu(T.sub(Tensor(1.0), real)))
        f = T.mean(T.relu(T.add(Tensor(1.0), fake)))
        terms.append(T.add(r, f))
    return _mean_of(terms)


def hinge_g_loss(fake_logits: Sequence[Tensor]) -> Tensor:
    """Mean over scales of ``-E[D(fake)]``."""
    if not fake_logits:
        raise ValueError("hinge_g_loss needs at least one scale")
    return T.neg(_mean_of([T.mean(f) for f in fake_logits]))


def _mean_of(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(terms))


def _l1_mean(real: Tensor, fake: Tensor) -> Tensor:
    if real.shape != fake.shape:
        raise ShapeError(f"feature shapes differ: {real.shape} vs {fake.shape}")
    return T.mean(T.absolute(T.sub(fake, real.detach())))


def feature_matching_loss(real_feats: Sequence[Sequence[Tensor]], fake_feats: Sequence[Sequence[Tensor]]) -> Tensor:
    """Sum over scales and layers of the element-averaged L1 distance.

    Real features are detached, so gradients reach only the fake branch.
    """
    if len(real_feats) != len(fake_feats):
        raise ValueError(f"{len(real_feats)} real scales vs {len(fake_feats)} fake scales")
    terms = []
    for k, (rs, fs) in enumerate(zip(real_feats, fake_feats)):
        if len(rs) != len(fs):
            raise ValueError(f"scale {k}: {len(rs)} real layers vs {len(fs)} fake layers")
        terms.extend(_l1_mean(r, f) for r, f in zip(rs, fs))
    if not terms:
        raise ValueError("feature_matching_loss needs at least one layer")
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total


class FeatureExtractor(Protocol):
    def __call__(self, image: Tensor) -> list[Tensor]: ...


class IdentityExtractor:
    """One layer that returns the image itself; perceptual loss becomes mean L1."""

    def __call__(self, image: Tensor) -> list[Tensor]:
        return [image]


class RandomConvExtractor:
    """Frozen pyramid of Glorot-initialized 3x3 convs with leaky ReLU.

    Stands in for a pretrained classification backbone; any callable returning
    a list of feature maps can replace it.
    """

    def __init__(self, channels: Sequence[int] = (8, 16, 32), in_channels: int = 3, seed: int = 1234):
        rng = np.random.default_rng(seed)
        self.weights = []
        self.strides = []
        cin = in_channels
        for i, cout in enumerate(channels):
            self.weights.append(Tensor(glorot_uniform(rng, (cout, cin, 3, 3))))
            self.strides.append(1 if i == 0 else 2)
            cin = cout

    def __len__(self) -> int:
        return len(self.weights)

    def __call__(self, image: Tensor) -> list[Tensor]:
        feats, x = [], image
        for w, stride in zip(self.weights, self.strides):
            x = T.lrelu(T.conv2d(x, w, None, stride=stride, pad=1))
            feats.append(x)
        return feats


def perceptual_loss(real_img: Tensor, fake_img: Tensor, extractor: FeatureExtractor) -> Tensor:
    """Sum over extractor layers of the element-averaged L1 distance; real side detached."""
    real_feats = extractor(real_img.detach())
    fake_feats = extractor(fake_img)
    if len(real_feats) == 0:
        raise ValueError("feature extractor produced no layers")
    terms = [_l1_mean(r, f) for r, f in zip(real_feats, fake_feats)]
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total


def total_g_loss(hinge_g, fm, percept, weights: LossWeights | None = None) -> Tensor:
    """``hinge_g + lambda_fm * fm + lambda_percept * percept``."""
    weights = weights if weights is not None else LossWeights()
    parts = [T.Tensor(x) if not isinstance(x, Tensor) else x for x in (hinge_g, fm, percept)]
    total = T.add(parts[0], T.scale(parts[1], weights.lambda_fm))
    return T.add(total, T.scale(parts[2], weights.lambda_percept))
