"""Stage functions: the small learnable sub-net applied at every block stage."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    ACTIVATIONS,
    DimensionError,
    Tensor,
    batch_norm,
    conv2d_3x3,
    linear,
    mul,
    parameter,
)


class NormLayer:
    """Per-channel batch normalisation.

    Training mode normalises with batch statistics over every axis except
    the channel axis (1) and updates the running estimates; inference mode
    uses the frozen running estimates.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, affine: bool = False):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.training = True
        self.gamma = parameter(np.ones(channels), name="gamma") if affine else None
        self.beta = parameter(np.zeros(channels), name="beta") if affine else None

    def parameters(self) -> list[Tensor]:
        return [p for p in (self.gamma, self.beta) if p is not None]

    def buffers(self) -> list[np.ndarray]:
        return [self.running_mean, self.running_var]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise DimensionError(f"norm layer expects {self.channels} channels, got shape {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        bshape = (1, self.channels) + (1,) * (x.ndim - 2)
        gamma = None if self.gamma is None else _view(self.gamma, bshape)
        beta = None if self.beta is None else _view(self.beta, bshape)
        if self.training:
            out, mu, var = batch_norm(x, None, None, self.eps, gamma, beta, axes)
            m = x.data.size / self.channels
            unbiased = var.reshape(-1) * (m / max(m - 1.0, 1.0))
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mu.reshape(-1)
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * unbiased
            return out
        out, _, _ = batch_norm(x, self.running_mean.reshape(bshape), self.running_var.reshape(bshape),
                               self.eps, gamma, beta, axes)
        return out


def _view(p: Tensor, shape) -> Tensor:
    return p.reshape(shape)


class StageFunction:
    """Base class; subclasses map a tensor to a tensor of the same shape."""

    kind = "abstract"

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return []

    def norm_layers(self) -> list[NormLayer]:
        return []

    def train(self, mode: bool = True) -> None:
        for n in self.norm_layers():
            n.training = mode

    def eval(self) -> None:
        self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Stub(StageFunction):
    """Parameter-free F(x) = x or F(x) = lam * x."""

    kind = "stub"

    def __init__(self, lam: float = 1.0):
        self.lam = float(lam)

    def forward(self, x: Tensor) -> Tensor:
        if self.lam == 1.0:
            return mul(x, 1.0)
        return mul(x, self.lam)


def make_stub(response="identity") -> Stub:
    """``'identity'`` gives F(x)=x; a number gives F(x)=response*x."""
    if response == "identity":
        return Stub(1.0)
    return Stub(float(response))


def _he(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Dense2(StageFunction):
    """VGG-style pair of dense layers: (affine -> norm -> act) x 2.

    No activation follows the block's shortcut add, so shortcuts are summed
    with the raw stage outputs.  ``zero_last`` zero-initialises the second
    affine layer, making F identically zero.
    """

    kind = "dense2"

    def __init__(self, features: int, width: int | None = None, activation: str = "relu",
                 rng: np.random.Generator | None = None, norm: bool = True, zero_last: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        width = features if width is None else width
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.features, self.width, self.activation = features, width, activation
        self._act = ACTIVATIONS[activation]
        self.norm1 = NormLayer(width) if norm else None
        self.norm2 = NormLayer(features) if norm else None
        self.w1 = parameter(_he(rng, features, (features, width)), name="w1")
        self.b1 = parameter(np.zeros(width), name="b1")
        w2 = np.zeros((width, features)) if zero_last else _he(rng, width, (width, features))
        self.w2 = parameter(w2, name="w2")
        self.b2 = parameter(np.zeros(features), name="b2")

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.features:
            raise DimensionError(f"dense2 expects (n, {self.features}), got {x.shape}")
        h = linear(x, self.w1, self.b1)
        if self.norm1 is not None:
            h = self.norm1(h)
        h = linear(self._act(h), self.w2, self.b2)
        if self.norm2 is not None:
            h = self.norm2(h)
        return self._act(h)

    def parameters(self) -> list[Tensor]:
        params = [self.w1, self.b1, self.w2, self.b2]
        for n in self.norm_layers():
            params.extend(n.parameters())
        return params

    def norm_layers(self) -> list[NormLayer]:
        return [n for n in (self.norm1, self.norm2) if n is not None]


class Conv2(StageFunction):
    """VGG-style pair of 3x3 conv layers: (conv3x3 -> norm -> act) x 2."""

    kind = "conv2"

    def __init__(self, channels: int, activation: str = "relu", rng: np.random.Generator | None = None,
                 zero_last: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.activation = channels, activation
        self._act = ACTIVATIONS[activation]
        self.norm1 = NormLayer(channels)
        self.norm2 = NormLayer(channels)
        fan_in = channels * 9
        self.w1 = parameter(_he(rng, fan_in, (channels, channels, 3, 3)), name="w1")
        self.b1 = parameter(np.zeros(channels), name="b1")
        w2 = np.zeros((channels, channels, 3, 3)) if zero_last else _he(rng, fan_in, (channels, channels, 3, 3))
        self.w2 = parameter(w2, name="w2")
        self.b2 = parameter(np.zeros(channels), name="b2")

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"conv2 expects (n, {self.channels}, h, w), got {x.shape}")
        h = self._act(self.norm1(conv2d_3x3(x, self.w1, self.b1)))
        return self._act(self.norm2(conv2d_3x3(h, self.w2, self.b2)))

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def norm_layers(self) -> list[NormLayer]:
        return [self.norm1, self.norm2]


def make_stage(kind: str, features: int, rng: np.random.Generator, activation: str = "relu",
               width: int | None = None) -> StageFunction:
    if kind == "dense2":
        return Dense2(features, width, activation, rng)
    if kind == "conv2":
        return Conv2(features, activation, rng)
    if kind == "zero":
        return make_stub(0.0)
    if kind == "identity":
        return make_stub("identity")
    raise ValueError(f"unknown stage kind {kind!r}")


def iter_parameters(stages) -> Iterator[Tensor]:
    for s in stages:
        yield from s.parameters()
