"""Network layers with explicit forward/backward passes.

Convolutions are cross-correlations with zero padding, computed over
windows built with ``sliding_window_view`` and contracted with einsum.
Every layer caches what its backward pass needs during forward; calling
backward without a cached forward is a usage error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mask import ValidationError
from .tensor import Tensor

__all__ = [
    "ShapeError",
    "LayerSpec",
    "Conv2D",
    "Conv1D",
    "Dense",
    "ReLU",
    "Flatten",
    "Sequential",
    "he_uniform",
]


class ShapeError(ValidationError):
    """An activation or parameter has the wrong shape."""


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer, as stored in checkpoints."""

    kind: str  # conv2d | conv1d | fully_connected | relu | flatten
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        kinds = ("conv2d", "conv1d", "fully_connected", "relu", "flatten")
        if self.kind not in kinds:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.kind.startswith("conv"):
            if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
                raise ValidationError(f"invalid conv geometry {self!r}")


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ShapeError(f"conv output size {out} for input {size}, kernel {kernel}, stride {stride}, padding {padding}")
    return out


class Conv2D:
    """2-D cross-correlation over (batch, channels, height, width) inputs."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        *,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.spec = LayerSpec("conv2d", in_channels, out_channels, kernel_size, stride, padding)
        fan_in = in_channels * kernel_size * kernel_size
        if rng is None:
            weight = np.zeros((out_channels, in_channels, kernel_size, kernel_size))
        else:
            weight = he_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.weight = Tensor(weight)
        self.bias = Tensor(np.zeros(out_channels))
        self._cache = None

    def params(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight), ("bias", self.bias)]

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        b, c, h, w = in_shape
        s = self.spec
        if c != s.in_channels:
            raise ShapeError(f"conv2d expects {s.in_channels} input channels, got {c}")
        return (b, s.out_channels, conv_output_size(h, s.kernel_size, s.stride, s.padding),
                conv_output_size(w, s.kernel_size, s.stride, s.padding))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"conv2d input must be 4-D, got shape {x.shape}")
        _, _, h_out, w_out = self.out_shape(x.shape)
        s = self.spec
        p, k, st = s.padding, s.kernel_size, s.stride
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
        windows = windows[:, :, ::st, ::st][:, :, :h_out, :w_out]
        out = np.einsum("bcxyij,ocij->boxy", windows, self.weight.data, optimize=True)
        out += self.bias.data[None, :, None, None]
        self._cache = (x.shape, padded.shape, windows)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("conv2d backward called before forward")
        x_shape, padded_shape, windows = self._cache
        s = self.spec
        p, k, st = s.padding, s.kernel_size, s.stride
        h_out, w_out = grad_out.shape[2], grad_out.shape[3]

        self.bias.add_grad(grad_out.sum(axis=(0, 2, 3)))
        self.weight.add_grad(np.einsum("bcxyij,boxy->ocij", windows, grad_out, optimize=True))

        grad_padded = np.zeros(padded_shape)
        w = self.weight.data
        for ki in range(k):
            for kj in range(k):
                # (B, Hout, Wout, Cin) contribution of kernel tap (ki, kj)
                contrib = np.tensordot(grad_out, w[:, :, ki, kj], axes=([1], [0]))
                grad_padded[:, :, ki : ki + st * h_out : st, kj : kj + st * w_out : st] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        h, w_in = x_shape[2], x_shape[3]
        grad_in = grad_padded[:, :, p : p + h, p : p + w_in]
        self._cache = None
        return grad_in

    def flop_count(self, in_shape: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
        out_shape = self.out_shape(in_shape)
        s = self.spec
        flops = 2 * s.kernel_size**2 * s.in_channels * s.out_channels * out_shape[2] * out_shape[3]
        return flops, out_shape


class Conv1D:
    """1-D cross-correlation over (batch, channels, length) inputs."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        *,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.spec = LayerSpec("conv1d", in_channels, out_channels, kernel_size, stride, padding)
        fan_in = in_channels * kernel_size
        if rng is None:
            weight = np.zeros((out_channels, in_channels, kernel_size))
        else:
            weight = he_uniform(rng, (out_channels, in_channels, kernel_size), fan_in)
        self.weight = Tensor(weight)
        self.bias = Tensor(np.zeros(out_channels))
        self._cache = None

    def params(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight), ("bias", self.bias)]

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        b, c, n = in_shape
        s = self.spec
        if c != s.in_channels:
            raise ShapeError(f"conv1d expects {s.in_channels} input channels, got {c}")
        return (b, s.out_channels, conv_output_size(n, s.kernel_size, s.stride, s.padding))

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3:
            raise ShapeError(f"conv1d input must be 3-D, got shape {x.shape}")
        _, _, n_out = self.out_shape(x.shape)
        s = self.spec
        p, k, st = s.padding, s.kernel_size, s.stride
        padded = np.pad(x, ((0, 0), (0, 0), (p, p)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=2)
        windows = windows[:, :, ::st][:, :, :n_out]
        out = np.einsum("bcnk,ock->bon", windows, self.weight.data, optimize=True)
        out += self.bias.data[None, :, None]
        self._cache = (x.shape, padded.shape, windows)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("conv1d backward called before forward")
        x_shape, padded_shape, windows = self._cache
        s = self.spec
        p, k, st = s.padding, s.kernel_size, s.stride
        n_out = grad_out.shape[2]

        self.bias.add_grad(grad_out.sum(axis=(0, 2)))
        self.weight.add_grad(np.einsum("bcnk,bon->ock", windows, grad_out, optimize=True))

        grad_padded = np.zeros(padded_shape)
        w = self.weight.data
        for ki in range(k):
            contrib = np.tensordot(grad_out, w[:, :, ki], axes=([1], [0]))  # (B, Nout, Cin)
            grad_padded[:, :, ki : ki + st * n_out : st] += contrib.transpose(0, 2, 1)
        grad_in = grad_padded[:, :, p : p + x_shape[2]]
        self._cache = None
        return grad_in

    def flop_count(self, in_shape: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
        out_shape = self.out_shape(in_shape)
        s = self.spec
        flops = 2 * s.kernel_size * s.in_channels * s.out_channels * out_shape[2]
        return flops, out_shape


class Dense:
    """Affine layer y = W x + b with W of shape (out_features, in_features)."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        *,
        rng: np.random.Generator | None = None,
    ) -> None:
        self.spec = LayerSpec("fully_connected", in_features, out_features)
        if rng is None:
            weight = np.zeros((out_features, in_features))
        else:
            weight = he_uniform(rng, (out_features, in_features), in_features)
        self.weight = Tensor(weight)
        self.bias = Tensor(np.zeros(out_features))
        self._cache = None

    def params(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight), ("bias", self.bias)]

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        b, n = in_shape
        if n != self.spec.in_channels:
            raise ShapeError(f"dense expects {self.spec.in_channels} input features, got {n}")
        return (b, self.spec.out_channels)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2:
            raise ShapeError(f"dense input must be 2-D, got shape {x.shape}")
        self.out_shape(x.shape)
        self._cache = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("dense backward called before forward")
        x = self._cache
        self.weight.add_grad(grad_out.T @ x)
        self.bias.add_grad(grad_out.sum(axis=0))
        grad_in = grad_out @ self.weight.data
        self._cache = None
        return grad_in

    def flop_count(self, in_shape: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
        out_shape = self.out_shape(in_shape)
        return 2 * self.spec.in_channels * self.spec.out_channels, out_shape


class ReLU:
    """Elementwise max(x, 0); the subgradient at exactly 0 is 0."""

    spec = LayerSpec("relu")

    def __init__(self) -> None:
        self._cache = None

    def params(self) -> list[tuple[str, Tensor]]:
        return []

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("relu backward called before forward")
        grad_in = np.where(self._cache, grad_out, 0.0)
        self._cache = None
        return grad_in

    def flop_count(self, in_shape: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
        return 0, in_shape


class Flatten:
    """Collapse every non-batch axis, C-order."""

    spec = LayerSpec("flatten")

    def __init__(self) -> None:
        self._cache = None

    def params(self) -> list[tuple[str, Tensor]]:
        return []

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        n = 1
        for d in in_shape[1:]:
            n *= d
        return (in_shape[0], n)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("flatten backward called before forward")
        grad_in = grad_out.reshape(self._cache)
        self._cache = None
        return grad_in

    def flop_count(self, in_shape: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
        return 0, self.out_shape(in_shape)


class Sequential:
    """A named chain of layers applied in order."""

    def __init__(self, layers: list[tuple[str, object]]) -> None:
        names = [name for name, _ in layers]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate layer names in {names}")
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for _, layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def params(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, layer in self.layers:
            for pname, tensor in layer.params():
                out.append((f"{name}.{pname}", tensor))
        return out

    def zero_grad(self) -> None:
        for _, tensor in self.params():
            tensor.zero_grad()

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        for _, layer in self.layers:
            in_shape = layer.out_shape(in_shape)
        return in_shape

    def flop_count(self, in_shape: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
        total = 0
        for _, layer in self.layers:
            flops, in_shape = layer.flop_count(in_shape)
            total += flops
        return total, in_shape
