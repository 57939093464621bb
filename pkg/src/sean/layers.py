"""Module container, convolution layer and spectral normalization."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

SPECTRAL_EPS = 1e-12


class Module:
    """Minimal parameter container.

    Parameters, buffers and submodules are discovered from instance attributes
    (including lists of modules), in attribute definition order.
    """

    training: bool = True
    spectral_update: bool = True

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.named_children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        names = list(getattr(self, "_buffer_names", ()))
        if name not in names:
            names.append(name)
        object.__setattr__(self, "_buffer_names", tuple(names))
        setattr(self, name, np.asarray(value, dtype=np.float64))

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze_spectral(self, frozen: bool = True) -> "Module":
        """Stop (or resume) power-iteration updates of spectral-norm state."""
        for m in self.modules():
            m.spectral_update = not frozen
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def power_iteration(w: np.ndarray, u: np.ndarray, iterations: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Refine the left singular vector ``u`` of ``w [rows, cols]``; returns ``(u, v)``."""
    v = None
    for _ in range(max(iterations, 1)):
        v = w.T @ u
        v = v / (np.linalg.norm(v) + SPECTRAL_EPS)
        u = w @ v
        u = u / (np.linalg.norm(u) + SPECTRAL_EPS)
    return u, v


def spectral_normalize(p: Parameter, iterations: int = 1, update: bool = True) -> Tensor:
    """Weight divided by its estimated top singular value, differentiable in the weight.

    The singular vectors are treated as constants in the backward pass. When
    ``update`` is set, ``iterations`` power-iteration steps refine ``u`` first
    and the result is stored back on the parameter.
    """
    if p.spectral_state is None:
        raise ValueError("parameter has no spectral state")
    rows = p.shape[0]
    w_mat = p.data.reshape(rows, -1)
    if update:
        u, v = power_iteration(w_mat, p.spectral_state, iterations)
        p.spectral_state = u
    else:
        u = p.spectral_state
        v = w_mat.T @ u
        v = v / (np.linalg.norm(v) + SPECTRAL_EPS)
    w_flat = T.reshape(p.value, (rows, -1))
    sigma = T.einsum("i,ij->j", Tensor(u), w_flat)
    sigma = T.einsum("j,j->", sigma, Tensor(v))
    sigma = T.add(sigma, Tensor(SPECTRAL_EPS))
    return T.div(p.value, sigma)


def estimated_sigma(p: Parameter) -> float:
    w_mat = p.data.reshape(p.shape[0], -1)
    u = p.spectral_state
    v = w_mat.T @ u
    v = v / (np.linalg.norm(v) + SPECTRAL_EPS)
    return float(u @ w_mat @ v)


def calibrate_spectral(module: Module, iterations: int = 50) -> None:
    """Run power iteration close to convergence on every spectrally normalized weight."""
    for p in module.parameters():
        if p.spectral_state is not None:
            u, _ = power_iteration(p.data.reshape(p.shape[0], -1), p.spectral_state, iterations)
            p.spectral_state = u


class Conv2d(Module):
    def __init__(
        self,
        cin: int,
        cout: int,
        kernel: int = 3,
        stride: int = 1,
        pad: int | None = None,
        bias: bool = True,
        spectral: bool = False,
        rng: np.random.Generator | None = None,
        zero_init: bool = False,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (cout, cin, kernel, kernel)
        w = np.zeros(shape) if zero_init else glorot_uniform(rng, shape)
        self.weight = Parameter(w, spectral=spectral, rng=rng)
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        self.cin, self.cout, self.kernel = cin, cout, kernel
        if spectral:
            calibrate_spectral(self)

    @property
    def spectral(self) -> bool:
        return self.weight.spectral_state is not None

    def effective_weight(self) -> Tensor:
        if not self.spectral:
            return self.weight.value
        return spectral_normalize(self.weight, 1, update=self.training and self.spectral_update)

    def forward(self, x: Tensor) -> Tensor:
        b = self.bias.value if self.bias is not None else None
        return T.conv2d(x, self.effective_weight(), b, stride=self.stride, pad=self.pad)
