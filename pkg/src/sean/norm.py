"""Semantic region-adaptive normalization block."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Conv2d, Module, glorot_uniform
from .regions import StyleMatrix, broadcast_style, downsample_mask, one_hot
from .tensor import Parameter, ShapeError, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batch_stats(h: Tensor, eps: float = BN_EPS) -> tuple[Tensor, Tensor]:
    """Per-channel mean and standard deviation over batch and spatial axes.

    ``sigma = sqrt(max(E[h^2] - mu^2, 0) + eps)``.
    """
    if h.ndim != 4:
        raise ShapeError(f"batch_stats: expected [N,C,H,W], got {h.shape}")
    mu = T.mean(h, axis=(0, 2, 3))
    ex2 = T.mean(T.mul(h, h), axis=(0, 2, 3))
    var = T.relu(T.sub(ex2, T.mul(mu, mu)))
    sigma = T.sqrt(T.add(var, Tensor(eps)))
    return mu, sigma


def inject_noise(h: Tensor, noise_scale: Tensor, rng: np.random.Generator) -> Tensor:
    """``h + B * n`` with ``n`` standard normal per element and ``B`` per channel."""
    n = Tensor(rng.standard_normal(h.shape))
    return T.add(h, T.mul(n, noise_scale))


class SeanBlock(Module):
    """Modulates ``h`` with scales and biases blended from a style branch and a mask branch.

    The style branch sees the region codes (after a shared 1x1 transform)
    broadcast onto the mask; the mask branch sees the one-hot mask alone.
    ``alpha_override`` pins both blend weights, e.g. ``(0.0, 0.0)`` for a
    mask-only block.
    """

    def __init__(
        self,
        channels: int,
        style_dim: int,
        num_labels: int,
        hidden: int = 32,
        style_kernel: int = 3,
        mask_kernel: int = 3,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.style_dim, self.num_labels = channels, style_dim, num_labels
        self.style_transform = Parameter(glorot_uniform(rng, (style_dim, style_dim)))
        self.style_transform_bias = Parameter(np.zeros(style_dim))
        self.style_shared = Conv2d(style_dim, hidden, style_kernel, rng=rng)
        self.style_gamma = Conv2d(hidden, channels, style_kernel, rng=rng)
        self.style_beta = Conv2d(hidden, channels, style_kernel, rng=rng)
        self.mask_shared = Conv2d(num_labels, hidden, mask_kernel, rng=rng)
        self.mask_gamma = Conv2d(hidden, channels, mask_kernel, rng=rng)
        self.mask_beta = Conv2d(hidden, channels, mask_kernel, rng=rng)
        self.alpha_gamma_raw = Parameter(np.zeros(()))
        self.alpha_beta_raw = Parameter(np.zeros(()))
        self.noise_scale = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.alpha_override: tuple[float, float] | None = None
        self.noise_enabled: bool | None = None  # None: follow training mode
        self.noise_rng = np.random.default_rng(int(rng.integers(2**31)))

    # -- pieces -----------------------------------------------------------
    def transform_styles(self, st: StyleMatrix) -> Tensor:
        if st.dim != self.style_dim:
            raise ShapeError(f"SEAN: style dimension {st.dim} != configured {self.style_dim}")
        codes = T.einsum("ed,nds->nes", self.style_transform.value, st.codes)
        bias = T.broadcast_to(T.reshape(self.style_transform_bias.value, (1, -1, 1)), codes.shape)
        return T.add(codes, bias)

    def style_params(self, st: StyleMatrix, labels: np.ndarray) -> tuple[Tensor, Tensor]:
        style_map = broadcast_style(self.transform_styles(st), labels)
        hid = T.relu(self.style_shared(style_map))
        return self.style_gamma(hid), self.style_beta(hid)

    def mask_params(self, labels: np.ndarray) -> tuple[Tensor, Tensor]:
        onehot = Tensor(one_hot(labels, self.num_labels))
        hid = T.relu(self.mask_shared(onehot))
        return self.mask_gamma(hid), self.mask_beta(hid)

    def blend_weights(self) -> tuple[Tensor, Tensor]:
        if self.alpha_override is not None:
            ag, ab = self.alpha_override
            return Tensor(ag), Tensor(ab)
        return T.sigmoid(self.alpha_gamma_raw.value), T.sigmoid(self.alpha_beta_raw.value)

    def statistics(self, h: Tensor) -> tuple[Tensor, Tensor]:
        if not self.training:
            return Tensor(self.running_mean), Tensor(np.sqrt(self.running_var + BN_EPS))
        mu, sigma = batch_stats(h)
        var = np.maximum(sigma.data**2 - BN_EPS, 0.0)
        self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mu.data
        self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * var
        return mu, sigma

    # -- forward ------------------------------------------------------------
    def forward(self, h: Tensor, st: StyleMatrix, labels: np.ndarray) -> Tensor:
        if h.ndim != 4 or h.shape[1] != self.channels:
            raise ShapeError(f"SEAN: activation channels (dim 1) {h.shape} != configured {self.channels}")
        n, _, height, width = h.shape
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = np.broadcast_to(labels, (n,) + labels.shape)
        if labels.shape[-2:] != (height, width):
            labels = downsample_mask(labels, height, width)
        if st.batch != n:
            raise ShapeError(f"SEAN: style batch {st.batch} != activation batch {n}")

        noise_on = self.training if self.noise_enabled is None else self.noise_enabled
        if noise_on:
            h = inject_noise(h, self.noise_scale.value, self.noise_rng)

        gamma_s, beta_s = self.style_params(st, labels)
        gamma_o, beta_o = self.mask_params(labels)
        a_g, a_b = self.blend_weights()
        gamma = T.add(T.mul(a_g, gamma_s), T.mul(T.sub(Tensor(1.0), a_g), gamma_o))
        beta = T.add(T.mul(a_b, beta_s), T.mul(T.sub(Tensor(1.0), a_b), beta_o))

        mu, sigma = self.statistics(h)
        normalized = T.div(T.sub(h, mu), sigma)
        return T.add(T.mul(gamma, normalized), beta)


def sean_forward(h, st, labels, block: SeanBlock, noise_rng=None, noise_enabled=False) -> Tensor:
    """Functional entry point: one SEAN pass with explicit noise control."""
    prev_flag, prev_rng = block.noise_enabled, block.noise_rng
    block.noise_enabled = noise_enabled
    if noise_rng is not None:
        block.noise_rng = noise_rng
    try:
        return block(h, st, labels)
    finally:
        block.noise_enabled, block.noise_rng = prev_flag, prev_rng
