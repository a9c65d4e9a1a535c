"""Dense-tensor layers with explicit forward/backward passes.

Every layer caches whatever the backward pass needs during forward; a
backward call without a preceding forward raises StateError.  Parameters
and their gradient slots live in plain dicts so models can register them
under stable names for optimizers and checkpoints.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ShapeError, StateError


def glorot_uniform(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class: named parameters, same-shape gradient slots."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.grads = {}
        self.non_trainable = set()
        self._cache = None

    def _register(self, name, value, trainable=True):
        self.params[name] = value
        if trainable:
            self.grads[name] = np.zeros_like(value)
        else:
            self.non_trainable.add(name)

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward before forward")
        cache = self._cache
        self._cache = None
        return cache

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Dense(Layer):
    """Affine map y = x W + b on inputs of shape (N, in_features)."""

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self._register(
            "W", glorot_uniform(rng, in_features, out_features, (in_features, out_features), self.dtype)
        )
        self._register("b", np.zeros(out_features, dtype=self.dtype))

    def forward(self, x, train=False):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"dense expects (N, {self.in_features}), got {x.shape}"
            )
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x = self._take_cache()
        dy = np.ascontiguousarray(dy, dtype=self.dtype)
        self.grads["W"] += x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"].T


class Conv2D(Layer):
    """2D cross-correlation on (N, C, H, W) maps.

    padding "same" keeps H, W at stride 1; "valid" requires the kernel to
    fit inside the input.  Runs as an im2col matmul over frame chunks so
    the unfolded buffer stays within a fixed memory budget.
    """

    _CHUNK_BYTES = 48 << 20

    def __init__(self, in_channels, out_channels, kernel=3, stride=1,
                 padding="same", rng=None, dtype=np.float32):
        super().__init__(dtype)
        if padding not in ("same", "valid"):
            raise ConfigError(f"padding must be 'same' or 'valid', got {padding!r}")
        if stride < 1:
            raise ConfigError(f"stride must be >= 1, got {stride}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        self._register(
            "W",
            glorot_uniform(rng, fan_in, fan_out,
                           (out_channels, in_channels, kernel, kernel), self.dtype),
        )
        self._register("b", np.zeros(out_channels, dtype=self.dtype))

    def _pad_amounts(self, size):
        k, s = self.kernel, self.stride
        if self.padding == "valid":
            return 0, 0
        out = -(-size // s)  # ceil
        total = max((out - 1) * s + k - size, 0)
        return total // 2, total - total // 2

    def _cols(self, xp_chunk, oh, ow):
        k, s = self.kernel, self.stride
        windows = sliding_window_view(xp_chunk, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        n = xp_chunk.shape[0]
        return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
            n * oh * ow, self.in_channels * k * k
        )

    def _chunk(self, n, oh, ow):
        row_bytes = self.in_channels * self.kernel * self.kernel * self.dtype.itemsize
        per_frame = oh * ow * row_bytes
        return max(1, min(n, self._CHUNK_BYTES // max(per_frame, 1)))

    def forward(self, x, train=False):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv expects (N, {self.in_channels}, H, W), got {x.shape}"
            )
        n, _, h, w = x.shape
        k, s = self.kernel, self.stride
        pt, pb = self._pad_amounts(h)
        pl, pr = self._pad_amounts(w)
        hp, wp = h + pt + pb, w + pl + pr
        if k > hp or k > wp:
            raise ShapeError(
                f"kernel {k}x{k} larger than padded input {hp}x{wp}"
            )
        if pt or pb or pl or pr:
            xp = np.zeros((n, self.in_channels, hp, wp), dtype=self.dtype)
            xp[:, :, pt:pt + h, pl:pl + w] = x
        else:
            xp = x
        oh = (hp - k) // s + 1
        ow = (wp - k) // s + 1
        w_mat = self.params["W"].reshape(self.out_channels, -1)
        out = np.empty((n, self.out_channels, oh, ow), dtype=self.dtype)
        step = self._chunk(n, oh, ow)
        for lo in range(0, n, step):
            hi = min(lo + step, n)
            cols = self._cols(xp[lo:hi], oh, ow)
            chunk = cols @ w_mat.T + self.params["b"]
            out[lo:hi] = chunk.reshape(hi - lo, oh, ow, self.out_channels).transpose(0, 3, 1, 2)
        self._cache = (xp, x.shape, (pt, pl), (oh, ow))
        return out

    def backward(self, dy):
        xp, x_shape, (pt, pl), (oh, ow) = self._take_cache()
        dy = np.ascontiguousarray(dy, dtype=self.dtype)
        n = xp.shape[0]
        k, s = self.kernel, self.stride
        w_mat = self.params["W"].reshape(self.out_channels, -1)
        dw_mat = np.zeros_like(w_mat)
        dxp = np.zeros_like(xp)
        step = self._chunk(n, oh, ow)
        for lo in range(0, n, step):
            hi = min(lo + step, n)
            cols = self._cols(xp[lo:hi], oh, ow)
            dyf = dy[lo:hi].transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
            dw_mat += dyf.T @ cols
            dcols = (dyf @ w_mat).reshape(hi - lo, oh, ow, self.in_channels, k, k)
            dst = dxp[lo:hi]
            for ki in range(k):
                for kj in range(k):
                    dst[:, :, ki:ki + oh * s:s, kj:kj + ow * s:s] += \
                        dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        self.grads["W"] += dw_mat.reshape(self.params["W"].shape)
        self.grads["b"] += dy.sum(axis=(0, 2, 3))
        n_, c, h, w = x_shape
        return dxp[:, :, pt:pt + h, pl:pl + w]


class BatchNorm2D(Layer):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes with batch statistics and updates the running
    estimates (momentum 0.9); infer mode uses the running estimates.
    Variance uses the biased 1/m estimator in both places.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__(dtype)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self._register("gamma", np.ones(channels, dtype=self.dtype))
        self._register("beta", np.zeros(channels, dtype=self.dtype))
        self._register("running_mean", np.zeros(channels, dtype=self.dtype), trainable=False)
        self._register("running_var", np.ones(channels, dtype=self.dtype), trainable=False)

    def forward(self, x, train=False):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects (N, {self.channels}, H, W), got {x.shape}")
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.params["running_mean"][...] = m * self.params["running_mean"] + (1 - m) * mean
            self.params["running_var"][...] = m * self.params["running_var"] + (1 - m) * var
        else:
            mean = self.params["running_mean"]
            var = self.params["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = self.params["gamma"][None, :, None, None] * xhat + self.params["beta"][None, :, None, None]
        self._cache = (xhat, inv_std, train, x.shape)
        return out.astype(self.dtype, copy=False)

    def backward(self, dy):
        xhat, inv_std, train, x_shape = self._take_cache()
        dy = np.ascontiguousarray(dy, dtype=self.dtype)
        gamma = self.params["gamma"]
        dgamma = (dy * xhat).sum(axis=(0, 2, 3))
        dbeta = dy.sum(axis=(0, 2, 3))
        self.grads["gamma"] += dgamma
        self.grads["beta"] += dbeta
        if not train:
            return dy * (gamma * inv_std)[None, :, None, None]
        n, c, h, w = x_shape
        m = n * h * w
        coeff = (gamma * inv_std / m)[None, :, None, None]
        return coeff * (m * dy - dbeta[None, :, None, None] - xhat * dgamma[None, :, None, None])


class MaxPool2D(Layer):
    """Per-window maximum with argmax routing for the backward pass."""

    def __init__(self, window=2, stride=None, dtype=np.float32):
        super().__init__(dtype)
        self.window = window
        self.stride = stride if stride is not None else window

    def forward(self, x, train=False):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4:
            raise ShapeError(f"maxpool expects (N, C, H, W), got {x.shape}")
        n, c, h, w = x.shape
        k, s = self.window, self.stride
        if k > h or k > w:
            raise ShapeError(f"pool window {k}x{k} larger than input {h}x{w}")
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        best = np.full((n, c, oh, ow), -np.inf, dtype=self.dtype)
        best_off = np.zeros((n, c, oh, ow), dtype=np.uint8)
        for idx in range(k * k):
            ki, kj = divmod(idx, k)
            cand = x[:, :, ki:ki + oh * s:s, kj:kj + ow * s:s]
            better = cand > best
            best_off[better] = idx
            np.maximum(best, cand, out=best)
        self._cache = (best_off, x.shape, (oh, ow))
        return best

    def backward(self, dy):
        best_off, x_shape, (oh, ow) = self._take_cache()
        dy = np.ascontiguousarray(dy, dtype=self.dtype)
        k, s = self.window, self.stride
        dx = np.zeros(x_shape, dtype=self.dtype)
        for idx in range(k * k):
            ki, kj = divmod(idx, k)
            sel = best_off == idx
            dx[:, :, ki:ki + oh * s:s, kj:kj + ow * s:s] += dy * sel
        return dx


class Dropout(Layer):
    """Inverted dropout: train-time masking scaled by 1/(1-rate)."""

    def __init__(self, rate, dtype=np.float32):
        super().__init__(dtype)
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=self.dtype)
        if not train or self.rate == 0.0:
            self._cache = None
            return x
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng")
        keep = (rng.random(x.shape) >= self.rate)
        scale = self.dtype.type(1.0 / (1.0 - self.rate))
        mask = keep.astype(self.dtype) * scale
        self._cache = mask
        return x * mask

    def backward(self, dy):
        mask = self._cache
        self._cache = None
        if mask is None:
            return np.asarray(dy, dtype=self.dtype)
        return np.asarray(dy, dtype=self.dtype) * mask


class ReLU(Layer):
    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        self._cache = x > 0
        return x * self._cache

    def backward(self, dy):
        mask = self._take_cache()
        return np.asarray(dy, dtype=self.dtype) * mask


class Flatten(Layer):
    """(N, ...) -> (N, prod(...))."""

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        shape = self._take_cache()
        return np.asarray(dy, dtype=self.dtype).reshape(shape)
