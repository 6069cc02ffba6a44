"""Forward and backward kernels for the layers of the split CNN.

A tensor is a C-contiguous ``float32`` numpy array. Every op is a pure
function of its inputs except :func:`sgd_step`, which updates the caller's
parameter and velocity buffers in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import NonFiniteError, ShapeError, ValidationError

DTYPE = np.float32


def as_tensor(x, ndim: int | None = None, name: str = "tensor") -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 array, checking its rank."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim == 0 or 0 in arr.shape:
        raise ShapeError(f"{name} must have at least one dim and no zero dims, got {arr.shape}")
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-d, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, name: str) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")


@dataclass
class ConvParams:
    weights: np.ndarray  # [out, in, 3, 3]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        self.weights = as_tensor(self.weights, 4, "conv weights")
        self.bias = as_tensor(self.bias, 1, "conv bias")
        o, _, kh, kw = self.weights.shape
        if (kh, kw) != (3, 3) or self.bias.shape != (o,):
            raise ShapeError(
                f"conv params need weights [O,C,3,3] and bias [O], got "
                f"{self.weights.shape} and {self.bias.shape}"
            )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


@dataclass
class DenseParams:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        self.weights = as_tensor(self.weights, 2, "dense weights")
        self.bias = as_tensor(self.bias, 1, "dense bias")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"dense bias {self.bias.shape} does not match weights {self.weights.shape}"
            )


@dataclass(frozen=True)
class PoolIndices:
    """Argmax of each 2x2 window as a row-major offset 0..3 inside the window."""

    argmax: np.ndarray  # int8, same dims as the pooled output
    input_dims: tuple[int, ...]


def _conv_input(x, params: ConvParams) -> np.ndarray:
    x = as_tensor(x, 4, "conv input")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"conv input {x.shape} has {x.shape[1]} channels but weights "
            f"{params.weights.shape} expect {params.in_channels}"
        )
    return x


def conv2d_forward(x, params: ConvParams) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1: [N,C,H,W] -> [N,O,H,W]."""
    x = _conv_input(x, params)
    n, c, h, w = x.shape
    o = params.out_channels
    cols = backend.kernels.im2col3x3(x)
    out = np.matmul(params.weights.reshape(o, c * 9), cols)
    out += params.bias[None, :, None]
    return out.reshape(n, o, h, w)


def conv2d_backward(x, params: ConvParams, grad_out):
    """Return ``(grad_input, grad_weights, grad_bias)`` for :func:`conv2d_forward`."""
    x = _conv_input(x, params)
    n, c, h, w = x.shape
    o = params.out_channels
    grad_out = as_tensor(grad_out, 4, "conv grad_out")
    if grad_out.shape != (n, o, h, w):
        raise ShapeError(f"conv grad_out {grad_out.shape} does not match output {(n, o, h, w)}")
    g = grad_out.reshape(n, o, h * w)
    cols = backend.kernels.im2col3x3(x)
    k = c * 9
    g_flat = g.transpose(1, 0, 2).reshape(o, n * h * w)
    cols_flat = cols.transpose(1, 0, 2).reshape(k, n * h * w)
    grad_w = (g_flat @ cols_flat.T).reshape(params.weights.shape)
    grad_b = g_flat.sum(axis=1, dtype=DTYPE)
    grad_cols = np.matmul(params.weights.reshape(o, k).T, g)
    grad_x = backend.kernels.col2im3x3(grad_cols, x.shape)
    return grad_x, np.ascontiguousarray(grad_w), grad_b


def maxpool2x2_forward(x):
    """Non-overlapping 2x2 max-pool; ties go to the first cell in row-major order."""
    x = as_tensor(x, 4, "pool input")
    _, _, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max-pool needs even spatial dims, got {x.shape}")
    out, idx = backend.kernels.maxpool2x2(x)
    return out, PoolIndices(idx, x.shape)


def maxpool2x2_backward(grad_out, indices: PoolIndices, input_dims=None) -> np.ndarray:
    grad_out = as_tensor(grad_out, 4, "pool grad_out")
    dims = tuple(indices.input_dims if input_dims is None else input_dims)
    if grad_out.shape != indices.argmax.shape or dims != tuple(indices.input_dims):
        raise ShapeError(
            f"pool grad_out {grad_out.shape} / input dims {dims} do not match the forward pass "
            f"({indices.argmax.shape} from {tuple(indices.input_dims)})"
        )
    return backend.kernels.maxpool2x2_backward(grad_out, indices.argmax)


def relu_forward(x) -> np.ndarray:
    x = as_tensor(x)
    return np.maximum(x, DTYPE(0))


def relu_backward(x, grad_out) -> np.ndarray:
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu grad_out {grad_out.shape} does not match input {x.shape}")
    return np.where(x > 0, grad_out, DTYPE(0))


def _dense_input(x, params: DenseParams) -> np.ndarray:
    x = as_tensor(x, 2, "dense input")
    if x.shape[1] != params.weights.shape[1]:
        raise ShapeError(
            f"dense input {x.shape} does not match weights {params.weights.shape}"
        )
    return x


def dense_forward(x, params: DenseParams) -> np.ndarray:
    x = _dense_input(x, params)
    return x @ params.weights.T + params.bias


def dense_backward(x, params: DenseParams, grad_out):
    x = _dense_input(x, params)
    grad_out = as_tensor(grad_out, 2, "dense grad_out")
    if grad_out.shape != (x.shape[0], params.weights.shape[0]):
        raise ShapeError(
            f"dense grad_out {grad_out.shape} does not match output "
            f"{(x.shape[0], params.weights.shape[0])}"
        )
    grad_x = grad_out @ params.weights
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0, dtype=DTYPE)
    return grad_x, grad_w, grad_b


def softmax_cross_entropy(logits, labels, num_classes: int = 10):
    """Mean cross-entropy of ``logits`` [N, classes] against integer ``labels``.

    Returns ``(loss, grad_logits)`` where the gradient already carries the 1/N
    of the mean reduction.
    """
    logits = as_tensor(logits, 2, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, classes = logits.shape
    if classes != num_classes:
        raise ShapeError(f"logits {logits.shape} must have {num_classes} columns")
    if labels.shape != (n,):
        raise ShapeError(f"got {labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes - 1}]")
    check_finite(logits, "logits")
    rows = np.arange(n)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    log_p = z[rows, labels] - np.log(s[:, 0])
    loss = float(-log_p.mean(dtype=DTYPE))
    grad = e / s
    grad[rows, labels] -= DTYPE(1)
    grad /= DTYPE(n)
    return loss, grad


def sgd_step(params: np.ndarray, grads, velocity: np.ndarray, lr: float, momentum: float):
    """Momentum SGD in place: ``v = momentum*v + g``; ``p -= lr*v``."""
    grads = np.asarray(grads, dtype=DTYPE)
    if not (params.shape == grads.shape == velocity.shape):
        raise ShapeError(
            f"sgd shapes differ: params {params.shape}, grads {grads.shape}, "
            f"velocity {velocity.shape}"
        )
    check_finite(grads, "gradient")
    velocity *= DTYPE(momentum)
    velocity += grads
    params -= DTYPE(lr) * velocity
    return params, velocity
