"""
Reverse-mode Autodiff for the Road-Mask Tree Mapping Toolkit

A small tape-free autodiff core: every Tensor produced by an op remembers
its parents and a closure that pushes its gradient back to them. Only the
ops the U-Net needs are provided. Computation runs in float32; the
``double_precision()`` context switches new tensors to float64 for
finite-difference gradient checks.
"""

import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ValidationError

logger = logging.getLogger(__name__)

_default_dtype = np.float32


@contextmanager
def double_precision() -> Iterator[None]:
    """Create tensors in float64 inside the block"""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.float64
    try:
        yield
    finally:
        _default_dtype = previous


def default_dtype():
    return _default_dtype


class Tensor:
    """N-dimensional array with an optional gradient buffer"""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=_default_dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[], None]] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, parents: Tuple['Tensor', ...]) -> 'Tensor':
        """Op output: keeps the computed array and dtype as is"""
        tensor = cls.__new__(cls)
        tensor.data = data
        tensor.grad = None
        tensor.requires_grad = any(p.requires_grad for p in parents)
        tensor._parents = parents if tensor.requires_grad else ()
        tensor._backward = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Propagate gradients to every tensor this one depends on

        Args:
            grad: Seed gradient; defaults to ones (scalar losses)
        """
        if not self.requires_grad:
            raise ValidationError("backward() called on a tensor that does not require grad")
        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()


def _result(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    return Tensor._wrap(data, tuple(parents))


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype)
    else:
        tensor.grad = tensor.grad + grad


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """
    Same-padded, stride-1 cross-correlation plus bias

    Args:
        x: Input (N, Cin, H, W)
        w: Weights (Cout, Cin, k, k), k odd
        b: Bias (Cout,)

    Returns:
        Output (N, Cout, H, W)
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValidationError(f"conv2d expects 4-D input and weights, got {x.shape} and {w.shape}")
    n, cin, height, width = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin:
        raise ValidationError(f"conv2d input has {cin} channels, weights expect {wcin}")
    if k != k2 or k % 2 == 0:
        raise ValidationError(f"conv2d needs a square odd kernel, got {k}x{k2}")
    if b.shape != (cout,):
        raise ValidationError(f"conv2d bias shape {b.shape} does not match {cout} output channels")

    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, cout, height, width), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            window = xp[:, :, i:i + height, j:j + width]
            out += np.tensordot(w.data[:, :, i, j], window, axes=([1], [1])).transpose(1, 0, 2, 3)
    out += b.data[np.newaxis, :, np.newaxis, np.newaxis]

    result = _result(out, (x, w, b))

    def backward():
        g = result.grad
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + height, j:j + width] += np.tensordot(
                        w.data[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
            _accumulate(x, gxp[:, :, pad:pad + height, pad:pad + width])
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i in range(k):
                for j in range(k):
                    window = xp[:, :, i:i + height, j:j + width]
                    gw[:, :, i, j] = np.tensordot(g, window, axes=([0, 2, 3], [0, 2, 3]))
            _accumulate(w, gw)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)))

    result._backward = backward
    return result


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at 0 is taken as 0"""
    x = _as_tensor(x)
    result = _result(np.maximum(x.data, 0), (x,))

    def backward():
        _accumulate(x, result.grad * (x.data > 0))

    result._backward = backward
    return result


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = _stable_sigmoid(x.data)
    result = _result(s, (x,))

    def backward():
        _accumulate(x, result.grad * s * (1 - s))

    result._backward = backward
    return result


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling; ties route the gradient to the first element in row-major order"""
    x = _as_tensor(x)
    n, c, height, width = x.shape
    if height % 2 or width % 2:
        raise ValidationError(f"maxpool2 needs even height and width, got {height}x{width}")
    windows = (x.data.reshape(n, c, height // 2, 2, width // 2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, height // 2, width // 2, 4))
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., np.newaxis], axis=-1)[..., 0]
    result = _result(out, (x,))

    def backward():
        routed = np.zeros(windows.shape, dtype=x.data.dtype)
        np.put_along_axis(routed, arg[..., np.newaxis], result.grad[..., np.newaxis], axis=-1)
        grad = (routed.reshape(n, c, height // 2, width // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, height, width))
        _accumulate(x, grad)

    result._backward = backward
    return result


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by 2 in both spatial axes"""
    x = _as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    result = _result(out, (x,))

    def backward():
        n, c, height, width = x.shape
        _accumulate(x, result.grad.reshape(n, c, height, 2, width, 2).sum(axis=(3, 5)))

    result._backward = backward
    return result


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis"""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValidationError(f"Cannot concatenate shapes {a.shape} and {b.shape}")
    split = a.shape[1]
    result = _result(np.concatenate([a.data, b.data], axis=1), (a, b))

    def backward():
        _accumulate(a, result.grad[:, :split])
        _accumulate(b, result.grad[:, split:])

    result._backward = backward
    return result


def multiply_constant(x: Tensor, factor: np.ndarray) -> Tensor:
    """Elementwise product with a constant array"""
    x = _as_tensor(x)
    factor = np.asarray(factor, dtype=x.data.dtype)
    if factor.shape != x.shape:
        raise ValidationError(f"Shape mismatch: {x.shape} vs {factor.shape}")
    result = _result(x.data * factor, (x,))

    def backward():
        _accumulate(x, result.grad * factor)

    result._backward = backward
    return result
