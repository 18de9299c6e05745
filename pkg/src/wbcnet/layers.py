"""Forward and backward passes for every layer in the classifier stack.

Public APIs speak channels-first: a single image is ``[C, H, W]`` and a batch
is ``[N, C, H, W]``. Internally the spatial layers run channels-last (NHWC),
which keeps the inner GEMMs and window slices contiguous on CPU; the
``forward``/``backward`` methods wrap the ``*_nhwc`` twins with transposes,
and the model pipeline calls the NHWC forms directly so the conversion is
paid once per batch instead of once per layer.

Convolution uses cross-correlation semantics (no kernel flip). Gradients are
exact for the forward definitions here; every backward is validated against
central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import GeometryError, ShapeError

# Patch rows shorter than this GEMM better through an explicit im2col matrix;
# wider patches are cheaper as one GEMM per kernel offset on shifted slices.
_IM2COL_MAX_PATCH = 128


def he_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _out_size(size: int, window: int, stride: int, padding: int = 0) -> int:
    return (size + 2 * padding - window) // stride + 1


def conv_output_hw(h: int, w: int, kernel: int, stride: int, padding: int = 0) -> tuple[int, int]:
    """Spatial output size of a valid convolution/pool: floor((in+2p-k)/s)+1."""
    return _out_size(h, kernel, stride, padding), _out_size(w, kernel, stride, padding)


def _to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _to_nchw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


class Conv2D:
    """2-D convolution with per-filter bias.

    ``kernels`` has shape ``[out_channels, in_channels, kh, kw]`` and bias one
    entry per filter. Output spatial size is floor((in + 2*padding - k)/stride) + 1.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 0, *,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if padding < 0:
            raise ValueError(f"padding must be >= 0, got {padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng()
        fan_in = in_channels * kernel_size * kernel_size
        self.kernels = he_uniform((out_channels, in_channels, kernel_size, kernel_size),
                                  fan_in, rng, self.dtype)
        self.bias = np.zeros(out_channels, dtype=self.dtype)
        self._cache = None

    # -- NHWC fast path ------------------------------------------------------

    def _weights_nhwc(self) -> np.ndarray:
        # [kh, kw, C, F] copy of the canonical [F, C, kh, kw] parameter; the
        # copy is tiny and keeps the GEMM operands contiguous (a strided
        # weight view forces numpy off the BLAS fast path)
        return np.ascontiguousarray(self.kernels.transpose(2, 3, 1, 0))

    def forward_nhwc(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected NHWC batch of rank 4, got shape {x.shape}")
        n, h, w, c = x.shape
        if c != self.in_channels:
            raise ShapeError(f"input has {c} channels, layer expects {self.in_channels}")
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = conv_output_hw(h, w, k, s, p)
        if ho < 1 or wo < 1:
            raise GeometryError(f"kernel {k}x{k} stride {s} does not fit input {h}x{w} (padding {p})")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        w9 = self._weights_nhwc()
        if c * k * k <= _IM2COL_MAX_PATCH:
            win = as_strided(
                xp,
                shape=(n, ho, wo, k, k, c),
                strides=(xp.strides[0], xp.strides[1] * s, xp.strides[2] * s,
                         xp.strides[1], xp.strides[2], xp.strides[3]),
            )
            cols = np.ascontiguousarray(win).reshape(n * ho * wo, k * k * c)
            out2 = cols @ w9.reshape(-1, self.out_channels)
            self._cache = ("im2col", xp.shape, (n, ho, wo), cols)
        else:
            out2 = np.zeros((n * ho * wo, self.out_channels), dtype=self.dtype)
            slabs = []
            for u in range(k):
                for v in range(k):
                    sl = np.ascontiguousarray(
                        xp[:, u:u + s * ho:s, v:v + s * wo:s, :]).reshape(-1, c)
                    slabs.append(sl)
                    out2 += sl @ w9[u, v]
            self._cache = ("shift", xp.shape, (n, ho, wo), slabs)
        out2 += self.bias
        return out2.reshape(n, ho, wo, self.out_channels)

    def backward_nhwc(self, grad_out: np.ndarray):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        kind, xp_shape, (n, ho, wo), stash = self._cache
        if grad_out.shape != (n, ho, wo, self.out_channels):
            raise ShapeError(f"grad shape {grad_out.shape} does not match forward "
                             f"output {(n, ho, wo, self.out_channels)}")
        k, s, p = self.kernel_size, self.stride, self.padding
        c = self.in_channels
        g2 = np.ascontiguousarray(grad_out, dtype=self.dtype).reshape(-1, self.out_channels)
        grad_bias = g2.sum(axis=0)
        w9 = self._weights_nhwc()
        gxp = np.zeros(xp_shape, dtype=self.dtype)
        if kind == "im2col":
            cols = stash
            gw = (cols.T @ g2).reshape(k, k, c, self.out_channels)
            gcols = (g2 @ w9.reshape(-1, self.out_channels).T).reshape(n, ho, wo, k, k, c)
            for u in range(k):
                for v in range(k):
                    gxp[:, u:u + s * ho:s, v:v + s * wo:s, :] += gcols[:, :, :, u, v, :]
        else:
            gw = np.empty((k, k, c, self.out_channels), dtype=self.dtype)
            for idx, (u, v) in enumerate((u, v) for u in range(k) for v in range(k)):
                sl = stash[idx]
                gw[u, v] = sl.T @ g2
                gsl = g2 @ w9[u, v].T
                gxp[:, u:u + s * ho:s, v:v + s * wo:s, :] += gsl.reshape(n, ho, wo, c)
        grad_kernels = np.ascontiguousarray(gw.transpose(3, 2, 0, 1))
        grad_input = gxp[:, p:xp_shape[1] - p, p:xp_shape[2] - p, :] if p else gxp
        return grad_input, grad_kernels, grad_bias

    # -- channels-first contract ----------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        single = x.ndim == 3
        if single:
            x = x[np.newaxis]
        if x.ndim != 4:
            raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got shape {x.shape}")
        out = _to_nchw(self.forward_nhwc(_to_nhwc(x)))
        self._single = single
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray):
        if grad_out.ndim == 3:
            grad_out = grad_out[np.newaxis]
        gx, gk, gb = self.backward_nhwc(_to_nhwc(grad_out))
        gx = _to_nchw(gx)
        if getattr(self, "_single", False):
            gx = gx[0]
        return gx, gk, gb


class MaxPool2D:
    """Max pooling over ``pool_h x pool_w`` windows.

    The argmax of each window is cached on forward for gradient routing; ties
    resolve to the first maximum in row-major window order, so backward is
    deterministic.
    """

    def __init__(self, pool_h: int = 2, pool_w: int = 2, stride: int = 1):
        if pool_h < 1 or pool_w < 1 or stride < 1:
            raise ValueError("pool window and stride must be >= 1")
        self.pool_h = pool_h
        self.pool_w = pool_w
        self.stride = stride
        self._cache = None

    def forward_nhwc(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"expected NHWC batch of rank 4, got shape {x.shape}")
        n, h, w, c = x.shape
        ph, pw, s = self.pool_h, self.pool_w, self.stride
        if h < ph or w < pw:
            raise GeometryError(f"pool window {ph}x{pw} larger than input {h}x{w}")
        ho, wo = _out_size(h, ph, s), _out_size(w, pw, s)
        slices = [x[:, u:u + s * ho:s, v:v + s * wo:s, :]
                  for u in range(ph) for v in range(pw)]
        out = slices[0].copy()
        for sl in slices[1:]:
            np.maximum(out, sl, out=out)
        argmax = np.full(out.shape, ph * pw - 1, dtype=np.uint8)
        for idx in range(ph * pw - 2, -1, -1):
            np.copyto(argmax, np.uint8(idx), where=(slices[idx] == out))
        self._cache = (x.shape, argmax)
        return out

    def backward_nhwc(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x_shape, argmax = self._cache
        if grad_out.shape != argmax.shape:
            raise ShapeError(f"grad shape {grad_out.shape} does not match pooled "
                             f"output {argmax.shape}")
        ph, pw, s = self.pool_h, self.pool_w, self.stride
        _, ho, wo, _ = grad_out.shape
        gx = np.zeros(x_shape, dtype=grad_out.dtype)
        for idx in range(ph * pw):
            u, v = divmod(idx, pw)
            # windows sharing an input cell live in different (u,v) iterations,
            # so each in-place add below touches disjoint positions
            gx[:, u:u + s * ho:s, v:v + s * wo:s, :] += grad_out * (argmax == idx)
        return gx

    @property
    def argmax_cache(self) -> np.ndarray | None:
        return None if self._cache is None else self._cache[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        single = x.ndim == 3
        if single:
            x = x[np.newaxis]
        if x.ndim != 4:
            raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got shape {x.shape}")
        out = _to_nchw(self.forward_nhwc(_to_nhwc(x)))
        self._single = single
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if grad_out.ndim == 3:
            grad_out = grad_out[np.newaxis]
        gx = _to_nchw(self.backward_nhwc(_to_nhwc(grad_out)))
        return gx[0] if getattr(self, "_single", False) else gx


class Dropout:
    """Inverted dropout: train-time masking and rescaling, inference is identity.

    Each element is zeroed independently with probability ``rate`` and the
    survivors are scaled by 1/(1-rate), so the expected activation is unchanged
    and no rescaling is needed at inference.
    """

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.training = False
        self._mask = None

    def forward(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout requires an rng")
        u = rng.random(x.shape, dtype=x.dtype if x.dtype in (np.float32, np.float64) else np.float64)
        mask = (u >= self.rate).astype(x.dtype)
        mask *= 1.0 / (1.0 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0, zero elsewhere (subgradient at 0 is 0)."""
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu_backward: shape mismatch {x.shape} vs {grad_out.shape}")
    return grad_out * (x > 0)


class ReLU:
    """Stateful wrapper around :func:`relu` that caches the mask for backward."""

    def __init__(self):
        self._positive = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.maximum(x, 0)
        # relu(x) > 0 iff x > 0, so the post-activation sign is a valid mask
        self._positive = out > 0
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._positive is None:
            raise RuntimeError("backward called before forward")
        return grad_out * self._positive


class Dense:
    """Fully connected layer: x @ weights + bias, weights ``[in, out]``."""

    def __init__(self, in_features: int, out_features: int, *, init: str = "he",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng()
        if init == "he":
            self.weights = he_uniform((in_features, out_features), in_features, rng, self.dtype)
        elif init == "glorot":
            self.weights = glorot_uniform((in_features, out_features), in_features,
                                          out_features, rng, self.dtype)
        else:
            raise ValueError(f"unknown init {init!r}, expected 'he' or 'glorot'")
        self.bias = np.zeros(out_features, dtype=self.dtype)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        single = x.ndim == 1
        x2 = x[np.newaxis] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} input features, got shape {x.shape}")
        x2 = np.ascontiguousarray(x2, dtype=self.dtype)
        self._cache = (x2, single)
        out = x2 @ self.weights + self.bias
        return out[0] if single else out

    def backward(self, grad_out: np.ndarray):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x2, single = self._cache
        g2 = grad_out[np.newaxis] if grad_out.ndim == 1 else grad_out
        if g2.shape != (x2.shape[0], self.out_features):
            raise ShapeError(f"grad shape {grad_out.shape} does not match dense "
                             f"output ({x2.shape[0]}, {self.out_features})")
        g2 = np.ascontiguousarray(g2, dtype=self.dtype)
        grad_weights = x2.T @ g2
        grad_bias = g2.sum(axis=0)
        grad_input = g2 @ self.weights.T
        return (grad_input[0] if single else grad_input), grad_weights, grad_bias


class Flatten:
    """Flatten ``[N,C,H,W]`` to ``[N, C*H*W]`` in channel-major row-major order."""

    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._shape is None:
            raise RuntimeError("backward called before forward")
        return grad_out.reshape(self._shape)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for stability.

    Always computed in float64 so each row sums to 1 within 1e-12 regardless
    of the input dtype; outputs are strictly positive for finite input.
    """
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
