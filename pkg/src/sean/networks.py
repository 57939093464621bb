"""Style encoder, SEAN residual blocks, generator and multi-scale discriminator."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .layers import Conv2d, Module
from .norm import SeanBlock
from .regions import StyleMatrix, downsample_mask, one_hot, region_avg_pool
from .tensor import Parameter, ShapeError, Tensor

ENCODER_VARIANTS = ("unified", "resblk", "sean")
GEN_INPUTS = ("const", "mask")


@dataclass
class GeneratorConfig:
    num_labels: int = 3
    style_dim: int = 64
    channels: tuple[int, ...] = (64, 64, 32, 32, 16, 16)
    upsample: tuple[bool, ...] = (True, True, True, True, False, False)
    base_resolution: int = 4
    image_size: int = 64
    image_channels: int = 3
    num_style_blocks: int = 6
    sean_hidden: int = 32
    style_kernel: int = 3
    mask_kernel: int = 3
    conv_kernel: int = 3
    final_kernel: int = 3
    gen_input: str = "const"
    spectral: bool = True
    noise: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.upsample = tuple(bool(u) for u in self.upsample)
        self.validate()

    @property
    def num_resblks(self) -> int:
        return len(self.channels)

    def validate(self) -> None:
        if len(self.upsample) != len(self.channels):
            raise ValueError(
                f"upsample schedule length {len(self.upsample)} != channel schedule length {len(self.channels)}"
            )
        out = self.base_resolution * 2 ** sum(self.upsample)
        if out != self.image_size:
            raise ValueError(
                f"base resolution {self.base_resolution} with {sum(self.upsample)} upsamplings gives "
                f"{out}, not image size {self.image_size}"
            )
        if self.gen_input not in GEN_INPUTS:
            raise ValueError(f"gen_input must be one of {GEN_INPUTS}, got {self.gen_input!r}")
        if self.num_labels < 1 or self.style_dim < 1:
            raise ValueError("num_labels and style_dim must be positive")

    @property
    def style_blocks(self) -> int:
        return min(self.num_style_blocks, self.num_resblks)


@dataclass
class EncoderConfig:
    num_labels: int = 3
    style_dim: int = 64
    image_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 32)
    kernel: int = 3
    downsampling: bool = True

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 1:
            raise ValueError("encoder needs at least one width")


@dataclass
class DiscriminatorConfig:
    num_labels: int = 3
    image_channels: int = 3
    num_scales: int = 2
    layers_per_scale: int = 3
    base_channels: int = 16
    max_channels: int = 64
    kernel: int = 3

    def __post_init__(self):
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if self.layers_per_scale < 1:
            raise ValueError("layers_per_scale must be >= 1")

    def strides(self) -> list[int]:
        # first two layers halve the resolution, the rest keep it
        return [2 if i < 2 else 1 for i in range(self.layers_per_scale)]


# ---------------------------------------------------------------------------
# style encoder
# ---------------------------------------------------------------------------

class StyleEncoder(Module):
    """Bottleneck conv stack followed by region-wise average pooling.

    With downsampling: stem, ``len(widths) - 1`` stride-2 convs, a middle
    conv, then as many upsample+conv stages back to input resolution and a
    1x1 projection to ``style_dim`` with tanh.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        w, k = cfg.widths, cfg.kernel
        self.stem = Conv2d(cfg.image_channels, w[0], k, rng=rng)
        stride = 2 if cfg.downsampling else 1
        self.down = [Conv2d(w[i], w[i + 1], k, stride=stride, rng=rng) for i in range(len(w) - 1)]
        self.mid = Conv2d(w[-1], w[-1], k, rng=rng)
        self.up = [Conv2d(w[i + 1], w[i], k, rng=rng) for i in reversed(range(len(w) - 1))]
        self.proj = Conv2d(w[0], cfg.style_dim, 1, rng=rng)

    def features(self, image: Tensor) -> Tensor:
        x = T.lrelu(self.stem(image))
        for conv in self.down:
            x = T.lrelu(conv(x))
        x = T.lrelu(self.mid(x))
        for conv in self.up:
            if self.cfg.downsampling:
                x = T.upsample_nearest(x, 2)
            x = T.lrelu(conv(x))
        return T.tanh(self.proj(x))

    def forward(self, image: Tensor, labels: np.ndarray) -> StyleMatrix:
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = labels[None]
        if image.ndim != 4 or image.shape[1] != self.cfg.image_channels:
            raise ShapeError(f"encoder: expected [N,{self.cfg.image_channels},H,W] image, got {image.shape}")
        if labels.shape[-2:] != image.shape[-2:]:
            raise ShapeError(f"encoder: mask resolution {labels.shape[-2:]} != image resolution {image.shape[-2:]}")
        feats = self.features(image)
        if feats.shape[-2:] != image.shape[-2:]:
            raise ShapeError(
                f"encoder: feature map {feats.shape[-2:]} did not return to input resolution; "
                "image size must be divisible by 2**(len(widths)-1)"
            )
        return region_avg_pool(feats, labels, self.cfg.num_labels)


def style_encoder_forward(encoder: StyleEncoder, image: Tensor, labels: np.ndarray) -> StyleMatrix:
    return encoder(image, labels)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

class SeanResBlk(Module):
    """Two SEAN-modulated convs on the main path plus a SEAN-modulated 1x1 skip.

    The skip path is the identity when input and output widths agree.
    """

    def __init__(self, cin: int, cout: int, cfg: GeneratorConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        mid = min(cin, cout)
        k = cfg.conv_kernel
        self.cin, self.cout = cin, cout
        self.learned_skip = cin != cout
        norm_args = dict(
            style_dim=cfg.style_dim,
            num_labels=cfg.num_labels,
            hidden=cfg.sean_hidden,
            style_kernel=cfg.style_kernel,
            mask_kernel=cfg.mask_kernel,
            rng=rng,
        )
        self.norm_0 = SeanBlock(cin, **norm_args)
        self.conv_0 = Conv2d(cin, mid, k, spectral=cfg.spectral, rng=rng)
        self.norm_1 = SeanBlock(mid, **norm_args)
        self.conv_1 = Conv2d(mid, cout, k, spectral=cfg.spectral, rng=rng)
        if self.learned_skip:
            self.norm_s = SeanBlock(cin, **norm_args)
            self.conv_s = Conv2d(cin, cout, 1, bias=False, spectral=cfg.spectral, rng=rng)
        else:
            self.norm_s = None
            self.conv_s = None

    @property
    def sean_blocks(self) -> list[SeanBlock]:
        blocks = [self.norm_0, self.norm_1]
        if self.learned_skip:
            blocks.append(self.norm_s)
        return blocks

    def forward(self, x: Tensor, st, labels: np.ndarray) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeError(f"ResBlk: input channels (dim 1) of {x.shape} != declared {self.cin}")
        if isinstance(st, StyleMatrix):
            st0 = st1 = sts = st
        else:
            st0, st1 = st[0], st[1]
            sts = st[2] if len(st) > 2 else st[0]
        dx = self.conv_0(T.lrelu(self.norm_0(x, st0, labels)))
        dx = self.conv_1(T.lrelu(self.norm_1(dx, st1, labels)))
        if self.learned_skip:
            skip = self.conv_s(T.lrelu(self.norm_s(x, sts, labels)))
        else:
            skip = x
        return T.add(skip, dx)


def sean_resblk_forward(block: SeanResBlk, x: Tensor, st, labels: np.ndarray) -> Tensor:
    return block(x, st, labels)


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        c0 = cfg.channels[0]
        b = cfg.base_resolution
        if cfg.gen_input == "const":
            self.const = Parameter(0.02 * rng.standard_normal((1, c0, b, b)))
            self.input_conv = None
        else:
            self.const = None
            self.input_conv = Conv2d(cfg.num_labels, c0, 3, rng=rng)
        widths = (c0,) + cfg.channels
        self.blocks = [SeanResBlk(widths[i], widths[i + 1], cfg, rng=rng) for i in range(cfg.num_resblks)]
        self.final = Conv2d(cfg.channels[-1], cfg.image_channels, cfg.final_kernel, rng=rng)
        if not cfg.noise:
            for blk in self.blocks:
                for norm in blk.sean_blocks:
                    norm.noise_enabled = False

    def resolutions(self) -> list[int]:
        res, out = self.cfg.base_resolution, []
        for up in self.cfg.upsample:
            out.append(res)
            res *= 2 if up else 1
        return out

    def route_styles(self, styles, batch: int) -> list:
        """One style entry per ResBlk; blocks past the style-injected ones get zeros."""
        cfg = self.cfg
        n_style = cfg.style_blocks
        if isinstance(styles, StyleMatrix):
            per_block = [styles] * n_style
        else:
            per_block = list(styles)
            if len(per_block) != n_style:
                raise ValueError(f"expected {n_style} per-block style entries, got {len(per_block)}")
        zero = StyleMatrix.zeros(batch, cfg.style_dim, cfg.num_labels)
        return per_block + [zero] * (cfg.num_resblks - n_style)

    def forward(self, styles, labels: np.ndarray) -> Tensor:
        cfg = self.cfg
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = labels[None]
        if labels.shape[-2:] != (cfg.image_size, cfg.image_size):
            raise ShapeError(f"generator: mask size {labels.shape[-2:]} != output size {cfg.image_size}")
        batch = labels.shape[0]
        per_block = self.route_styles(styles, batch)
        first = per_block[0] if isinstance(per_block[0], StyleMatrix) else per_block[0][0]
        if first.batch != batch:
            raise ShapeError(f"generator: style batch {first.batch} != mask batch {batch}")
        b = cfg.base_resolution
        if self.const is not None:
            x = T.broadcast_to(self.const.value, (batch,) + self.const.shape[1:])
        else:
            small = downsample_mask(labels, b, b)
            x = self.input_conv(Tensor(one_hot(small, cfg.num_labels)))
        for blk, st, up in zip(self.blocks, per_block, cfg.upsample):
            x = blk(x, st, downsample_mask(labels, x.shape[2], x.shape[3]))
            if up:
                x = T.upsample_nearest(x, 2)
        return T.tanh(self.final(T.lrelu(x)))


def generator_forward(gen: Generator, st, labels) -> Tensor:
    return gen(st, labels)


def crossover_forward(gen: Generator, st_a: StyleMatrix, st_b: StyleMatrix, selection: Sequence, labels) -> Tensor:
    """ResBlk ``i`` takes ``st_a`` or ``st_b`` according to ``selection[i]`` ('A'/'B' or 0/1)."""
    selection = list(selection)
    if len(selection) != gen.cfg.style_blocks:
        raise ValueError(f"selection length {len(selection)} != {gen.cfg.style_blocks} style-injected ResBlks")
    routed = []
    for choice in selection:
        key = str(choice).upper()
        if key in ("A", "0"):
            routed.append(st_a)
        elif key in ("B", "1"):
            routed.append(st_b)
        else:
            raise ValueError(f"selection entries must be A/B, got {choice!r}")
    return gen(routed, labels)


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------

class PatchDiscriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        cin = cfg.image_channels + cfg.num_labels
        widths = [min(cfg.base_channels * 2**i, cfg.max_channels) for i in range(cfg.layers_per_scale)]
        self.convs = []
        for width, stride in zip(widths, cfg.strides()):
            self.convs.append(Conv2d(cin, width, cfg.kernel, stride=stride, spectral=True, rng=rng))
            cin = width
        self.logit = Conv2d(cin, 1, cfg.kernel, spectral=True, rng=rng)

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        feats = []
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i > 0:
                x = T.instance_norm(x)
            x = T.lrelu(x)
            feats.append(x)
        return self.logit(x), feats


class MultiScaleDiscriminator(Module):
    """PatchGAN discriminators on the image+mask stack at successively halved scales."""

    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.scales = [PatchDiscriminator(cfg, rng=rng) for _ in range(cfg.num_scales)]

    def forward(self, image: Tensor, labels: np.ndarray) -> tuple[list[Tensor], list[list[Tensor]]]:
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = labels[None]
        if image.ndim != 4 or image.shape[1] != self.cfg.image_channels:
            raise ShapeError(f"discriminator: expected [N,{self.cfg.image_channels},H,W], got {image.shape}")
        if labels.shape[0] != image.shape[0] or labels.shape[-2:] != image.shape[-2:]:
            raise ShapeError(f"discriminator: mask {labels.shape} does not match image {image.shape}")
        x = T.concat([image, Tensor(one_hot(labels, self.cfg.num_labels))], axis=1)
        logits, features = [], []
        for k, disc in enumerate(self.scales):
            if k > 0:
                x = T.avg_pool2d(x, 2)
            out, feats = disc(x)
            logits.append(out)
            features.append(feats)
        return logits, features


def discriminator_forward(disc: MultiScaleDiscriminator, image: Tensor, labels) -> tuple[list, list]:
    return disc(image, labels)


def logit_shape(cfg: DiscriminatorConfig, size: int, scale: int) -> int:
    """Spatial extent of the patch-logit map at ``scale`` for a ``size``x``size`` input."""
    res = size // 2**scale
    pad = cfg.kernel // 2
    for stride in cfg.strides():
        res = (res + 2 * pad - cfg.kernel) // stride + 1
    return res


# ---------------------------------------------------------------------------
# encoder + generator bundle
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    encoder_variant: str = "unified"

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.discriminator, dict):
            self.discriminator = DiscriminatorConfig(**self.discriminator)
        if self.encoder_variant not in ENCODER_VARIANTS:
            raise ValueError(f"encoder_variant must be one of {ENCODER_VARIANTS}")
        g, e, d = self.generator, self.encoder, self.discriminator
        if not (g.num_labels == e.num_labels == d.num_labels):
            raise ValueError("generator, encoder and discriminator disagree on num_labels")
        if g.style_dim != e.style_dim:
            raise ValueError(f"encoder style_dim {e.style_dim} != generator style_dim {g.style_dim}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


class SeanModel(Module):
    """Style encoder(s) and generator trained together as one reconstruction network."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.generator = Generator(cfg.generator, rng=rng)
        n_style = cfg.generator.style_blocks
        if cfg.encoder_variant == "unified":
            self.encoders = [StyleEncoder(cfg.encoder, rng=rng)]
        elif cfg.encoder_variant == "resblk":
            self.encoders = [StyleEncoder(cfg.encoder, rng=rng) for _ in range(n_style)]
        else:
            counts = [len(b.sean_blocks) for b in self.generator.blocks[:n_style]]
            self.encoders = [StyleEncoder(cfg.encoder, rng=rng) for _ in range(int(np.sum(counts)))]

    @property
    def encoder(self) -> StyleEncoder:
        return self.encoders[0]

    def encode(self, image: Tensor, labels):
        """Unified: one StyleMatrix. ResBlk-level: one per ResBlk. SEAN-level: a tuple per ResBlk."""
        if self.cfg.encoder_variant == "unified":
            return self.encoders[0](image, labels)
        codes = [enc(image, labels) for enc in self.encoders]
        if self.cfg.encoder_variant == "resblk":
            return codes
        routed, i = [], 0
        for blk in self.generator.blocks[: self.cfg.generator.style_blocks]:
            k = len(blk.sean_blocks)
            routed.append(tuple(codes[i:i + k]))
            i += k
        return routed

    def forward(self, image: Tensor, labels) -> Tensor:
        return self.generator(self.encode(image, labels), labels)
