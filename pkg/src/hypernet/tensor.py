"""Dense tensor primitives: same-size 2D convolution, its adjoint, ReLU, init.

Tensors are plain numpy arrays. Image-like inputs are either a single sample
``(c, h, w)`` or a batch ``(n, c, h, w)``; outputs keep the caller's layout.
Convolution is cross-correlation with zero padding ``(k - 1) / 2`` and
stride 1.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def check_finite(t: np.ndarray, where: str = "tensor") -> np.ndarray:
    if not np.isfinite(t).all():
        raise NonFiniteError(f"non-finite values in {where}")
    return t


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (c,h,w) or (n,c,h,w), got shape {x.shape}")


def _check_kernel(k: np.ndarray) -> int:
    if k.ndim != 4 or k.shape[2] != k.shape[3]:
        raise ValueError(f"kernel must have shape (c_out, c_in, k, k), got {k.shape}")
    size = k.shape[2]
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    return size


def im2col(x: np.ndarray, size: int) -> np.ndarray:
    """Patch matrix of a batch: ``(n, c*size*size, h*w)`` with zero padding."""
    n, c, h, w = x.shape
    if size == 1:
        return x.reshape(n, c, h * w)
    p = size // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, size, size, h, w), dtype=x.dtype)
    for u in range(size):
        for v in range(size):
            cols[:, :, u, v] = xp[:, :, u : u + h, v : v + w]
    return cols.reshape(n, c * size * size, h * w)


def _conv(x: np.ndarray, k: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    # batched, unchecked
    n, _, h, w = x.shape
    c_out = k.shape[0]
    out = np.matmul(k.reshape(c_out, -1), im2col(x, k.shape[2]))
    out = out.reshape(n, c_out, h, w)
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    return out


def flip_transpose(k: np.ndarray) -> np.ndarray:
    """Kernel whose convolution is the adjoint of convolution with ``k``."""
    return np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def _conv_adjoint(y: np.ndarray, k: np.ndarray) -> np.ndarray:
    return _conv(y, flip_transpose(k))


def _kernel_grad(x: np.ndarray, gy: np.ndarray, size: int, cols: np.ndarray | None = None) -> np.ndarray:
    # d<gy, conv(x, K)>/dK summed over the batch
    if cols is None:
        cols = im2col(x, size)
    n, c_out = gy.shape[:2]
    g = gy.reshape(n, c_out, -1)
    dk = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
    return dk.reshape(c_out, x.shape[1], size, size)


def conv2d(x: np.ndarray, k: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-size cross-correlation of ``x`` with ``k`` plus optional bias.

    ``out[o, i, j] = sum_{c,u,v} k[o, c, u, v] * x_pad[c, i + u, j + v] + bias[o]``
    """
    xb, single = _as_batch(x)
    _check_kernel(k)
    if xb.shape[1] != k.shape[1]:
        raise ValueError(f"input has {xb.shape[1]} channels, kernel expects {k.shape[1]}")
    if bias is not None and bias.shape != (k.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {k.shape[0]} output channels")
    out = check_finite(_conv(xb, k, bias), "conv2d")
    return out[0] if single else out


def conv2d_adjoint(y: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Exact adjoint of bias-free :func:`conv2d` with respect to its input."""
    yb, single = _as_batch(y)
    _check_kernel(k)
    if yb.shape[1] != k.shape[0]:
        raise ValueError(f"input has {yb.shape[1]} channels, kernel produces {k.shape[0]}")
    out = check_finite(_conv_adjoint(yb, k), "conv2d_adjoint")
    return out[0] if single else out


def conv2d_kernel_grad(x: np.ndarray, gy: np.ndarray, size: int) -> np.ndarray:
    """Gradient of ``<gy, conv2d(x, K)>`` with respect to ``K``."""
    xb, _ = _as_batch(x)
    gb, _ = _as_batch(gy)
    if xb.shape[0] != gb.shape[0] or xb.shape[2:] != gb.shape[2:]:
        raise ValueError(f"shape mismatch: x {x.shape}, gy {gy.shape}")
    return _kernel_grad(xb, gb, size)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_vjp(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # subgradient 0 at the kink
    return gy * (x > 0)


def init_kernel(rng: np.random.Generator, c_out: int, c_in: int, size: int,
                dtype=np.float64) -> np.ndarray:
    """Zero-mean uniform kernel with bound ``1 / sqrt(fan_in)``."""
    bound = 1.0 / np.sqrt(c_in * size * size)
    return rng.uniform(-bound, bound, size=(c_out, c_in, size, size)).astype(dtype)
