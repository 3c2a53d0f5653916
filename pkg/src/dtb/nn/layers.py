"""Layer vocabulary for the transcription networks.

Tensors are NCHW (batch, channels, time, frequency) or NF after a dense
layer. Every layer caches what it needs during ``forward`` and returns the
input gradient from ``backward``; parameter gradients land in ``grads``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def param_count(self) -> int:
        """Learnable values plus stored running statistics."""
        return sum(a.size for a in self.params.values()) + sum(a.size for a in self.buffers.values())

    def init(self, rng: np.random.Generator, dtype=np.float32) -> None:
        pass

    def astype(self, dtype) -> None:
        for store in (self.params, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)

    def label(self) -> str:
        return self.kind

    def dims_suffix(self) -> str:
        return ""

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class _Affine(Layer):
    """Shared sigmoid fusion for the layers that may end a network."""

    def __init__(self, activation: str):
        super().__init__()
        if activation not in ("id", "sigmoid"):
            raise ValueError(f"unsupported fused activation {activation!r}")
        self.activation = activation
        self.emit_logits = False

    def _activate(self, z):
        if self.activation == "sigmoid" and not self.emit_logits:
            self._out = sigmoid(z)
            return self._out
        return z

    def _activation_grad(self, grad):
        if self.activation == "sigmoid" and not self.emit_logits:
            return grad * self._out * (1 - self._out)
        return grad

    def label(self) -> str:
        return f"{self.kind} ({'Sigmoid' if self.activation == 'sigmoid' else 'Id'})"


class Conv2d(_Affine):
    kind = "Conv"

    def __init__(self, in_ch: int, out_ch: int, kernel=3, padding="same", stride=1,
                 bias: bool = False, activation: str = "id"):
        super().__init__(activation)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        if padding not in ("same", "valid"):
            raise ValueError("padding must be 'same' or 'valid'")
        self.padding = padding
        self.bias = bias
        kh, kw = self.kernel
        self.params["W"] = np.zeros((out_ch, in_ch, kh, kw), dtype=np.float32)
        if bias:
            self.params["b"] = np.zeros(out_ch, dtype=np.float32)

    def init(self, rng, dtype=np.float32):
        kh, kw = self.kernel
        self.params["W"] = glorot_uniform(rng, self.params["W"].shape, self.in_ch * kh * kw,
                                          self.out_ch * kh * kw, dtype)
        if self.bias:
            self.params["b"] = np.zeros(self.out_ch, dtype=dtype)

    def _pads(self, h: int, w: int):
        if self.padding == "valid":
            return (0, 0), (0, 0)
        pads = []
        for n, k, s in zip((h, w), self.kernel, self.stride):
            out = -(-n // s)
            total = max((out - 1) * s + k - n, 0)
            pads.append((total // 2, total - total // 2))
        return tuple(pads)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"Conv expects ({self.in_ch}, H, W) input, got {in_shape}")
        _, h, w = in_shape
        (pt, pb), (pl, pr) = self._pads(h, w)
        ho = (h + pt + pb - self.kernel[0]) // self.stride[0] + 1
        wo = (w + pl + pr - self.kernel[1]) // self.stride[1] + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"Conv kernel {self.kernel} does not fit input {in_shape}")
        return (self.out_ch, ho, wo)

    def dims_suffix(self):
        return f"@{self.kernel[0]}x{self.kernel[1]}"

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        (pt, pb), (pl, pr) = self._pads(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
        kh, kw = self.kernel
        sh, sw = self.stride
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        wmat = self.params["W"].reshape(self.out_ch, -1)
        z = cols @ wmat.T
        if self.bias:
            z += self.params["b"]
        self._cache = (cols, xp.shape, (pt, pl), (h, w), (ho, wo))
        z = z.reshape(n, ho, wo, self.out_ch).transpose(0, 3, 1, 2)
        return self._activate(z)

    def backward(self, grad):
        grad = self._activation_grad(grad)
        cols, xp_shape, (pt, pl), (h, w), (ho, wo) = self._cache
        n = grad.shape[0]
        kh, kw = self.kernel
        sh, sw = self.stride
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        self.grads["W"] = (g.T @ cols).reshape(self.params["W"].shape)
        if self.bias:
            self.grads["b"] = g.sum(axis=0)
        dcols = (g @ self.params["W"].reshape(self.out_ch, -1)).reshape(n, ho, wo, self.in_ch, kh, kw)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += \
                    dcols[..., i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, pt:pt + h, pl:pl + w]


class Dense(_Affine):
    kind = "Dense"

    def __init__(self, in_features: int, out_features: int, bias: bool = False, activation: str = "id"):
        super().__init__(activation)
        self.in_features, self.out_features = in_features, out_features
        self.bias = bias
        self.params["W"] = np.zeros((in_features, out_features), dtype=np.float32)
        if bias:
            self.params["b"] = np.zeros(out_features, dtype=np.float32)

    def init(self, rng, dtype=np.float32):
        self.params["W"] = glorot_uniform(rng, self.params["W"].shape, self.in_features,
                                          self.out_features, dtype)
        if self.bias:
            self.params["b"] = np.zeros(self.out_features, dtype=dtype)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise ShapeError(f"Dense expects {self.in_features} inputs, got {in_shape}")
        return (self.out_features,)

    def forward(self, x, train=False):
        self._in_shape = x.shape
        x2 = x.reshape(x.shape[0], -1)
        self._x = x2
        z = x2 @ self.params["W"]
        if self.bias:
            z = z + self.params["b"]
        return self._activate(z)

    def backward(self, grad):
        grad = self._activation_grad(grad)
        self.grads["W"] = self._x.T @ grad
        if self.bias:
            self.grads["b"] = grad.sum(axis=0)
        return (grad @ self.params["W"].T).reshape(self._in_shape)


class BatchNorm(Layer):
    """Per-channel (4-D input) or per-feature (2-D input) normalization.

    Running statistics are updated on every training-mode forward pass.
    """

    kind = "BatchNorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_mean"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_var"] = np.ones(channels, dtype=np.float32)

    def init(self, rng, dtype=np.float32):
        self.params["gamma"] = np.ones(self.channels, dtype=dtype)
        self.params["beta"] = np.zeros(self.channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(self.channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(self.channels, dtype=dtype)

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"BatchNorm over {self.channels} channels got input {in_shape}")
        return in_shape

    def _view(self, a, ndim):
        return a.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, train=False):
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.channels
            mom = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self.buffers["running_mean"] = ((1 - mom) * rm + mom * mu).astype(rm.dtype)
            unbiased = var * (m / max(m - 1, 1))
            self.buffers["running_var"] = ((1 - mom) * rv + mom * unbiased).astype(rv.dtype)
        else:
            mu, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._view(mu, x.ndim)) * self._view(inv_std, x.ndim)
        self._cache = (xhat, inv_std, axes, train)
        return xhat * self._view(self.params["gamma"], x.ndim) + self._view(self.params["beta"], x.ndim)

    def backward(self, grad):
        xhat, inv_std, axes, train = self._cache
        nd = grad.ndim
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * self._view(self.params["gamma"], nd)
        if not train:
            return dxhat * self._view(inv_std, nd)
        m = grad.size // self.channels
        s1 = self._view(dxhat.sum(axis=axes), nd)
        s2 = self._view((dxhat * xhat).sum(axis=axes), nd)
        return self._view(inv_std, nd) / m * (m * dxhat - s1 - xhat * s2)


class Activation(Layer):
    kind = "Activation"
    _labels = {"relu": "Relu", "elu": "Elu", "sigmoid": "Sigmoid", "id": "Id"}

    def __init__(self, fn: str):
        super().__init__()
        if fn not in self._labels:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def label(self):
        return self._labels[self.fn]

    def forward(self, x, train=False):
        self._x = x
        if self.fn == "relu":
            return np.maximum(x, 0)
        if self.fn == "elu":
            self._y = np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
            return self._y
        if self.fn == "sigmoid":
            self._y = sigmoid(x)
            return self._y
        return x

    def backward(self, grad):
        if self.fn == "relu":
            return grad * (self._x > 0)
        if self.fn == "elu":
            return grad * np.where(self._x > 0, 1, self._y + 1)
        if self.fn == "sigmoid":
            return grad * self._y * (1 - self._y)
        return grad


class MaxPool(Layer):
    """Non-overlapping max pooling; trailing rows/columns are dropped (floor)."""

    kind = "MaxPool"

    def __init__(self, pool=(1, 2)):
        super().__init__()
        self.pool = _pair(pool)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        ph, pw = self.pool
        if h < ph or w < pw:
            raise ShapeError(f"MaxPool {self.pool} does not fit input {in_shape}")
        return (c, h // ph, w // pw)

    def dims_suffix(self):
        return f"@{self.pool[0]}x{self.pool[1]}"

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        ph, pw = self.pool
        ho, wo = h // ph, w // pw
        blocks = x[:, :, :ho * ph, :wo * pw].reshape(n, c, ho, ph, wo, pw)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, ph * pw)
        idx = blocks.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        (n, c, h, w), idx = self._cache
        ph, pw = self.pool
        ho, wo = grad.shape[2], grad.shape[3]
        blocks = np.zeros((n, c, ho, wo, ph * pw), dtype=grad.dtype)
        np.put_along_axis(blocks, idx[..., None], grad[..., None], axis=-1)
        blocks = blocks.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros((n, c, h, w), dtype=grad.dtype)
        dx[:, :, :ho * ph, :wo * pw] = blocks.reshape(n, c, ho * ph, wo * pw)
        return dx


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    kind = "Dropout"

    def __init__(self, p: float):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.p = p
        self.rng = np.random.default_rng(0)
        self.active = True

    def label(self):
        return f"Dropout, p={self.p:g}"

    def forward(self, x, train=False):
        if not (train and self.active) or self.p == 0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p).astype(x.dtype) / x.dtype.type(1 - self.p)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Upscale(Layer):
    """Nearest-neighbour upsampling by integer factors."""

    kind = "Upscale"

    def __init__(self, factor=(2, 2)):
        super().__init__()
        self.factor = _pair(factor)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h * self.factor[0], w * self.factor[1])

    def forward(self, x, train=False):
        fh, fw = self.factor
        return x.repeat(fh, axis=2).repeat(fw, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        fh, fw = self.factor
        return grad.reshape(n, c, h // fh, fh, w // fw, fw).sum(axis=(3, 5))


class Concat(Layer):
    """Channel concatenation of several inputs."""

    kind = "Concat"

    def output_shape(self, in_shapes):
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if s[1:] != first[1:]:
                raise ShapeError(f"Concat inputs disagree outside the channel axis: {in_shapes}")
        return (sum(s[0] for s in in_shapes),) + tuple(first[1:])

    def forward(self, xs, train=False):
        self._splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return np.split(grad, self._splits, axis=1)


def bce_with_logits(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of ``sigmoid(z)`` against ``y`` and its z-gradient."""
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean()), (sigmoid(z) - y) / z.size


def bce(p: np.ndarray, y: np.ndarray, eps: float = 1e-7) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on probabilities and its p-gradient."""
    pc = np.clip(p, eps, 1 - eps)
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    return float(loss.mean()), (pc - y) / (pc * (1 - pc)) / p.size
