"""Reconstruction training: synthetic data, ADAM, and the alternating D/G loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .layers import Module
from .losses import (
    LossWeights,
    RandomConvExtractor,
    feature_matching_loss,
    hinge_d_loss,
    hinge_g_loss,
    perceptual_loss,
    total_g_loss,
)
from .metrics import psnr, to_unit_range
from .networks import (
    DiscriminatorConfig,
    EncoderConfig,
    GeneratorConfig,
    ModelConfig,
    MultiScaleDiscriminator,
    SeanModel,
)
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)

LOG_HEADER = ("step", "loss_d", "loss_g", "loss_fm", "loss_percept", "psnr")
STRIPE_AMPLITUDE = 0.12


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def desk_model_config(image_size: int = 32, num_labels: int = 3, style_dim: int = 32) -> ModelConfig:
    """Small architecture sized for CPU training at 32x32 (or any power-of-two size >= 8)."""
    ups = int(np.log2(image_size // 4))
    if 4 * 2**ups != image_size:
        raise ValueError(f"image size {image_size} must be 4 * 2**k")
    channels = tuple([32] * max(ups - 1, 1) + [16, 16])[: ups + 1]
    upsample = tuple([True] * ups + [False])
    gen = GeneratorConfig(
        num_labels=num_labels,
        style_dim=style_dim,
        channels=channels,
        upsample=upsample,
        base_resolution=4,
        image_size=image_size,
        sean_hidden=16,
    )
    enc = EncoderConfig(num_labels=num_labels, style_dim=style_dim, widths=(16, 32, 32))
    disc = DiscriminatorConfig(num_labels=num_labels, base_channels=16, max_channels=64)
    return ModelConfig(generator=gen, encoder=enc, discriminator=disc)


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    steps: int = 2000
    seed: int = 0
    image_size: int = 32
    num_labels: int = 3
    style_dim: int = 32
    noise_enabled: bool = True
    lambda_fm: float = 10.0
    lambda_percept: float = 10.0
    log_interval: int = 50
    checkpoint_interval: int = 500
    model: ModelConfig | None = None

    def __post_init__(self):
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("ADAM betas must lie in [0, 1)")
        if self.batch_size < 1 or self.steps < 0 or self.log_interval < 1:
            raise ValueError("batch_size and log_interval must be positive, steps non-negative")
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.model is None:
            self.model = desk_model_config(self.image_size, self.num_labels, self.style_dim)
        self.model.generator.noise = self.noise_enabled

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_fm, self.lambda_percept)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SynthSample:
    image: np.ndarray  # [3, H, W] in [-1, 1]
    mask: np.ndarray  # [H, W] int labels
    style_seeds: list[int] = field(default_factory=list)


def _voronoi_mask(rng: np.random.Generator, s: int, size: int, min_pixels: int, tries: int = 200) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(tries):
        sites = rng.uniform(0, size, size=(s, 2))
        d = (yy[None] - sites[:, 0, None, None]) ** 2 + (xx[None] - sites[:, 1, None, None]) ** 2
        labels = np.argmin(d, axis=0)
        if np.bincount(labels.ravel(), minlength=s).min() >= min_pixels:
            return labels.astype(np.int64)
    raise RuntimeError("could not draw a partition with every region large enough")


def _texture(seed: int, size: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.uniform(-0.8, 0.8, size=3)
    freq = rng.uniform(1.0, 3.0)
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / size
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
    return base[:, None, None] + STRIPE_AMPLITUDE * wave[None]


def gen_synthetic_dataset(n: int, s: int, size: int, seed: int) -> list[SynthSample]:
    """Voronoi partitions into ``s`` regions, each filled with a seeded striped colour texture."""
    if s < 2:
        raise ValueError(f"need at least 2 regions, got {s}")
    min_pixels = max(1, size * size // (4 * s))
    if size * size < 4 * s or size < 2:
        raise ValueError(f"a {size}x{size} image cannot hold {s} regions")
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        labels = _voronoi_mask(rng, s, size, min_pixels)
        seeds = [int(x) for x in rng.integers(0, 2**31 - 1, size=s)]
        image = np.zeros((3, size, size))
        for j, sd in enumerate(seeds):
            image = np.where(labels[None] == j, _texture(sd, size), image)
        samples.append(SynthSample(np.clip(image, -1.0, 1.0), labels, seeds))
    return samples


def stack_samples(samples: Sequence[SynthSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(p: Parameter, lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """Bias-corrected ADAM update in place; clears the gradient."""
    if p.grad is None:
        raise ValueError("adam_step: parameter has no gradient")
    if t < 1:
        raise ValueError(f"adam_step: step index must be >= 1, got {t}")
    g = p.grad
    p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
    p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
    m_hat = p.adam_m / (1.0 - beta1**t)
    v_hat = p.adam_v / (1.0 - beta2**t)
    p.value.data = p.value.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    p.zero_grad()


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float, beta1: float, beta2: float, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0

    def step(self) -> None:
        self.t += 1
        for p in self.params:
            # parameters outside this step's graph keep their state
            if p.grad is not None:
                adam_step(p, self.lr, self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainConfig
    model: SeanModel
    disc: MultiScaleDiscriminator
    opt_g: Adam
    opt_d: Adam
    extractor: RandomConvExtractor
    step: int = 0

    def checkpoint_entries(self) -> dict[str, np.ndarray]:
        entries = ckpt.module_state(self.model, "model")
        entries.update(ckpt.module_state(self.disc, "disc"))
        entries["optimizer.step_g"] = np.array(float(self.opt_g.t))
        entries["optimizer.step_d"] = np.array(float(self.opt_d.t))
        entries["train.step"] = np.array(float(self.step))
        return entries

    def save(self, path) -> Path:
        return ckpt.save(path, self.config.to_dict(), self.checkpoint_entries())


def build_state(cfg: TrainConfig) -> TrainState:
    model = SeanModel(cfg.model, rng=np.random.default_rng([cfg.seed, 1]))
    disc = MultiScaleDiscriminator(cfg.model.discriminator, rng=np.random.default_rng([cfg.seed, 2]))
    opt_g = Adam(model.parameters(), cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_d = Adam(disc.parameters(), cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps)
    extractor = RandomConvExtractor(seed=cfg.seed + 7919)
    return TrainState(cfg, model, disc, opt_g, opt_d, extractor)


def load_state(path) -> TrainState:
    config, entries = ckpt.load(path)
    state = build_state(TrainConfig.from_dict(config))
    ckpt.load_module_state(state.model, "model", entries)
    ckpt.load_module_state(state.disc, "disc", entries)
    state.opt_g.t = int(entries["optimizer.step_g"])
    state.opt_d.t = int(entries["optimizer.step_d"])
    state.step = int(entries["train.step"])
    return state


def _set_requires_grad(module: Module, flag: bool) -> None:
    for p in module.parameters():
        p.value.requires_grad = flag


def reconstruct(model: SeanModel, images: np.ndarray, masks: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Inference-mode reconstruction of a stack of images."""
    was_training = model.training
    model.eval()
    out = []
    with T.no_grad():
        for lo in range(0, len(images), batch_size):
            out.append(model(Tensor(images[lo:lo + batch_size]), masks[lo:lo + batch_size]).data)
    model.train(was_training)
    return np.concatenate(out)


def mean_psnr(model: SeanModel, images: np.ndarray, masks: np.ndarray) -> float:
    recon = reconstruct(model, images, masks)
    return float(np.mean([psnr(to_unit_range(r), to_unit_range(x)) for r, x in zip(recon, images)]))


@dataclass
class StepResult:
    loss_d: float
    loss_g: float
    loss_fm: float
    loss_percept: float
    psnr: float
    grad_norm_encoder: float
    grad_norm_generator: float


def train_step(state: TrainState, real_np: np.ndarray, labels: np.ndarray) -> StepResult:
    """One discriminator update followed by one joint encoder+generator update."""
    cfg = state.config
    model, disc = state.model, state.disc
    b = real_np.shape[0]
    real = Tensor(real_np)
    both_labels = np.concatenate([labels, labels])

    # noise streams depend only on (seed, step, block) so a resumed run continues exactly
    norms = [n for blk in model.generator.blocks for n in blk.sean_blocks]
    for i, norm in enumerate(norms):
        norm.noise_rng = np.random.default_rng([cfg.seed, 4, state.step, i])

    fake = model(real, labels)

    # discriminator: real vs detached fake
    logits, _ = disc(T.concat([real, fake.detach()], axis=0), both_labels)
    loss_d = hinge_d_loss([l[:b] for l in logits], [l[b:] for l in logits])
    loss_d.backward()
    state.opt_d.step()

    # encoder + generator through the updated discriminator (its weights frozen)
    _set_requires_grad(disc, False)
    try:
        logits, feats = disc(T.concat([fake, real], axis=0), both_labels)
    finally:
        _set_requires_grad(disc, True)
    adv = hinge_g_loss([l[:b] for l in logits])
    fm = feature_matching_loss([[f[b:] for f in fs] for fs in feats], [[f[:b] for f in fs] for fs in feats])
    percept = perceptual_loss(real, fake, state.extractor)
    loss_g = total_g_loss(adv, fm, percept, cfg.weights)
    if not (np.isfinite(loss_d.item()) and np.isfinite(loss_g.item())):
        raise TrainingDivergedError(
            f"non-finite loss at step {state.step + 1}: loss_d={loss_d.item()}, loss_g={loss_g.item()}"
        )
    loss_g.backward()
    gn_enc = T.parameters_grad_norm(p for enc in model.encoders for p in enc.parameters())
    gn_gen = T.parameters_grad_norm(model.generator.parameters())
    state.opt_g.step()
    disc.zero_grad()
    state.step += 1

    batch_psnr = float(np.mean([psnr(to_unit_range(f), to_unit_range(r)) for f, r in zip(fake.data, real_np)]))
    return StepResult(loss_d.item(), loss_g.item(), fm.item(), percept.item(), batch_psnr, gn_enc, gn_gen)


@dataclass
class TrainResult:
    state: TrainState
    log_rows: list[tuple]
    psnr_initial: float
    psnr_final: float
    grad_norms: list[tuple[float, float]]
    checkpoint_path: Path | None = None


def write_log(path, rows: Sequence[tuple]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for row in rows:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return path


def _dump_batch(out_dir: Path | None, step: int, images: np.ndarray, labels: np.ndarray) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / f"diverged_step{step}.npz"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, images=images, labels=labels, step=step)
    return path


def train(
    cfg: TrainConfig,
    data: Sequence[SynthSample] | tuple[np.ndarray, np.ndarray],
    out_dir=None,
    callback: Callable[[TrainState], None] | None = None,
    state: TrainState | None = None,
) -> TrainResult:
    """Run ``cfg.steps`` reconstruction steps.

    Writes ``checkpoint.ckpt`` (plus ``checkpoint_step{k}.ckpt`` every
    ``checkpoint_interval`` steps) and ``log.csv`` to ``out_dir`` when given.
    ``callback`` runs after every step.
    """
    images, masks = data if isinstance(data, tuple) else stack_samples(data)
    if images.shape[-1] != cfg.image_size:
        raise ValueError(f"data size {images.shape[-1]} != configured image size {cfg.image_size}")
    state = state if state is not None else build_state(cfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    batch_rng = np.random.default_rng([cfg.seed, 3])
    n = len(images)

    psnr_initial = mean_psnr(state.model, images, masks)
    rows, grad_norms = [], []
    for _ in range(cfg.steps):
        idx = batch_rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        try:
            res = train_step(state, images[idx], masks[idx])
        except TrainingDivergedError as err:
            dump = _dump_batch(out_dir, state.step + 1, images[idx], masks[idx])
            raise TrainingDivergedError(f"{err}; batch indices {idx.tolist()}; dump {dump}") from err
        grad_norms.append((res.grad_norm_encoder, res.grad_norm_generator))
        if state.step % cfg.log_interval == 0:
            rows.append((state.step, res.loss_d, res.loss_g, res.loss_fm, res.loss_percept, res.psnr))
            log.info(
                "step %d loss_d %.4f loss_g %.4f fm %.4f percept %.4f psnr %.2f",
                state.step, res.loss_d, res.loss_g, res.loss_fm, res.loss_percept, res.psnr,
            )
        if out_dir is not None and cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
            state.save(out_dir / f"checkpoint_step{state.step}.ckpt")
        if callback is not None:
            callback(state)

    psnr_final = mean_psnr(state.model, images, masks)
    path = None
    if out_dir is not None:
        path = state.save(out_dir / "checkpoint.ckpt")
        write_log(out_dir / "log.csv", rows)
    return TrainResult(state, rows, psnr_initial, psnr_final, grad_norms, path)
