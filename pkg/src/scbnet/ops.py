"""Forward and backward math for every layer primitive.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
consumes the upstream gradient and that cache. Functions never keep state of
their own; the only mutation is the running-statistics update of
:func:`batchnorm_forward` in the train phase.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import as_tensor4, default_dtype

KERNEL = 3
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class ConvParams:
    weight: np.ndarray  # (filters, c_in, 3, 3)
    bias: np.ndarray  # (filters,)

    @property
    def filters(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def he_init(cls, c_in: int, filters: int, rng: np.random.Generator, dtype=None) -> "ConvParams":
        dtype = dtype or default_dtype()
        std = np.sqrt(2.0 / (c_in * KERNEL * KERNEL))
        w = rng.normal(0.0, std, size=(filters, c_in, KERNEL, KERNEL)).astype(dtype)
        return cls(w, np.zeros(filters, dtype=dtype))


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"batchnorm epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError(f"batchnorm momentum must lie in (0, 1), got {self.momentum}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def fresh(cls, channels: int, dtype=None) -> "BatchNormParams":
        dtype = dtype or default_dtype()
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


@dataclass
class DenseParams:
    weight: np.ndarray  # (out_features, in_features)
    bias: np.ndarray  # (out_features,)

    @classmethod
    def he_init(cls, in_features: int, out_features: int, rng: np.random.Generator, dtype=None) -> "DenseParams":
        dtype = dtype or default_dtype()
        std = np.sqrt(2.0 / in_features)
        w = rng.normal(0.0, std, size=(out_features, in_features)).astype(dtype)
        return cls(w, np.zeros(out_features, dtype=dtype))


# -- convolution ---------------------------------------------------------------


def conv2d_forward(x: np.ndarray, params: ConvParams):
    """3x3 cross-correlation, stride 1, zero padding 1 ("same")."""
    x = as_tensor4(x)
    w, b = params.weight, params.bias
    if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL):
        raise ConfigError(f"conv kernel must be {KERNEL}x{KERNEL}, got weight shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input shape {x.shape} vs weight shape {w.shape}"
        )
    n, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # (n, c, h, w, 3, 3) -> rows ordered (n, h, w), columns ordered (c, kh, kw)
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * KERNEL * KERNEL)
    out = cols @ w.reshape(f, -1).T + b
    out = np.ascontiguousarray(out.reshape(n, h, wd, f).transpose(0, 3, 1, 2))
    return out, (x.shape, cols, w)


def conv2d_backward(dout: np.ndarray, cache):
    """Return (input grad, weight grad, bias grad)."""
    x_shape, cols, w = cache
    n, c, h, wd = x_shape
    f = w.shape[0]
    dmat = dout.transpose(0, 2, 3, 1).reshape(n * h * wd, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(f, -1)).reshape(n, h, wd, c, KERNEL, KERNEL)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=dout.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    return conv2d_forward(x, params)[0]


# -- batch normalization -------------------------------------------------------


def batchnorm_forward(x: np.ndarray, params: BatchNormParams, phase: str = "train", *, update_stats: bool = True):
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(
            f"batchnorm channel mismatch: input shape {x.shape} vs {params.channels} channels"
        )
    g = params.gamma.reshape(1, c, 1, 1)
    bt = params.beta.reshape(1, c, 1, 1)
    if phase == "train":
        m = n * h * w
        if m < 2:
            raise ShapeError(f"batchnorm train phase needs >= 2 values per channel, input shape {x.shape}")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + params.epsilon)
        xhat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        if update_stats:
            mom = params.momentum
            params.running_mean[...] = mom * params.running_mean + (1 - mom) * mean
            params.running_var[...] = mom * params.running_var + (1 - mom) * var
        return g * xhat + bt, (xhat, inv_std, params.gamma)
    if phase == "infer":
        inv_std = 1.0 / np.sqrt(params.running_var + params.epsilon)
        xhat = (x - params.running_mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        return (g * xhat + bt).astype(x.dtype, copy=False), None
    raise ValueError(f"phase must be 'train' or 'infer', got {phase!r}")


def batchnorm_backward(dout: np.ndarray, cache):
    """Train-phase backward. Returns (input grad, gamma grad, beta grad)."""
    if cache is None:
        raise ValueError("batchnorm backward requires a train-phase forward cache")
    xhat, inv_std, gamma = cache
    n, c, h, w = dout.shape
    m = n * h * w
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(1, c, 1, 1)
    dx = (inv_std.reshape(1, c, 1, 1) / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
    )
    return dx, dgamma, dbeta


def batchnorm(x: np.ndarray, params: BatchNormParams, phase: str = "train") -> np.ndarray:
    return batchnorm_forward(x, params, phase)[0]


# -- pooling -------------------------------------------------------------------


def _pool_windows(x: np.ndarray) -> np.ndarray:
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"2x2 pooling needs h >= 2 and w >= 2, got input shape {x.shape}")
    ho, wo = h // 2, w // 2
    # window entries in row-major order: (0,0), (0,1), (1,0), (1,1)
    win = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(n, c, ho, wo, 4)


def maxpool2x2(x: np.ndarray, argmax: np.ndarray | None = None):
    """Return (pooled, argmax) with argmax in 0..3 per output cell; ties go to the first.

    A given ``argmax`` selects those window entries instead of the maxima.
    """
    win = _pool_windows(x)
    idx = win.argmax(axis=-1) if argmax is None else argmax
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(dout: np.ndarray, argmax: np.ndarray, input_shape) -> np.ndarray:
    n, c, h, w = input_shape
    ho, wo = dout.shape[2:]
    win = np.zeros((n, c, ho, wo, 4), dtype=dout.dtype)
    np.put_along_axis(win, argmax[..., None], dout[..., None], axis=-1)
    dx = np.zeros(input_shape, dtype=dout.dtype)
    dx[:, :, :2 * ho, :2 * wo] = (
        win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    )
    return dx


def avgpool2x2(x: np.ndarray) -> np.ndarray:
    return _pool_windows(x).mean(axis=-1)


def avgpool2x2_backward(dout: np.ndarray, input_shape) -> np.ndarray:
    n, c, h, w = input_shape
    ho, wo = dout.shape[2:]
    dx = np.zeros(input_shape, dtype=dout.dtype)
    dx[:, :, :2 * ho, :2 * wo] = np.repeat(np.repeat(dout / 4, 2, axis=2), 2, axis=3)
    return dx


# -- activation and dense ------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return dout * (x > 0)


def dense_forward(x: np.ndarray, params: DenseParams):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != params.weight.shape[1]:
        raise ShapeError(
            f"dense input shape {x.shape} does not match weight shape {params.weight.shape}"
        )
    return x @ params.weight.T + params.bias, (x, params.weight)


def dense_backward(dout: np.ndarray, cache):
    """Return (input grad, weight grad, bias grad)."""
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def dense(x: np.ndarray, params: DenseParams) -> np.ndarray:
    return dense_forward(x, params)[0]


# -- loss ----------------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_bce(logits, labels):
    """Mean binary cross-entropy on logits.

    Returns ``(loss, grad)`` where ``grad`` is d(mean loss)/d(logit), i.e.
    ``(sigmoid(z) - y) / n``.
    """
    z = np.asarray(logits)
    y = np.asarray(labels, dtype=z.dtype if z.dtype.kind == "f" else np.float64).reshape(z.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    per_sample = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    return float(per_sample.mean()), (sigmoid(z) - y) / n
