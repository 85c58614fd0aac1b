"""Dense-tensor layers with hand-written reverse-mode gradients.

Exactly the layer set the embedding pathways need: 3x3 / 1x1
convolution, batch normalization, ELU, 2x2 max pooling, global
average pooling and row-wise L2 normalization. Each layer caches
what its backward pass needs during forward; backward returns the
gradient w.r.t. the input and stores parameter gradients on the
layer (``dw``, ``db``, ``dgamma``, ``dbeta``).

Forward passes are pure functions of (input, parameters, mode) and
are computed per sample, so eval-mode outputs do not depend on batch
composition.
"""

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Input dimensions incompatible with a layer's declared geometry."""


def _as4d(x):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected a (batch, channels, height, width) tensor, got shape {x.shape}")
    return x


def l2_normalize(v):
    """Scale rows of ``v`` (or a single vector) to unit L2 norm.

    Rejects zero vectors: the direction of a zero vector is undefined.
    """
    v = np.asarray(v)
    norms = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if np.any(norms == 0.0):
        raise ValueError("cannot L2-normalize a zero vector")
    return v / norms


def l2_normalize_backward(y, norms, grad):
    # y = v / |v|;  dL/dv = (g - y * <y, g>) / |v|
    dot = np.sum(y * grad, axis=-1, keepdims=True)
    return (grad - y * dot) / norms


class Conv2d:
    """2-D convolution, kernel 3 with pad 1 or kernel 1 with pad 0.

    Both variants preserve the spatial dimensions. Weights have shape
    (out_channels, in_channels, k, k).
    """

    def __init__(self, in_channels, out_channels, kernel=3, bias=True, dtype=np.float32, rng=None):
        if kernel not in (1, 3):
            raise ValueError(f"unsupported kernel size {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = in_channels * kernel * kernel
        limit = np.sqrt(6.0 / fan_in)
        if rng is None:
            rng = np.random.default_rng(0)
        self.w = rng.uniform(-limit, limit, size=(out_channels, in_channels, kernel, kernel)).astype(dtype)
        # a bias feeding straight into batch norm is redundant (the
        # normalization cancels any per-channel shift), so the pathways
        # build their convs without one
        self.b = np.zeros(out_channels, dtype=dtype) if bias else None
        self.dw = None
        self.db = None
        self._cache = None

    def forward(self, x, train=False):
        x = _as4d(x)
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv expects {self.in_channels} input channels, got tensor of shape {x.shape}"
            )
        bias = self.b if self.b is not None else np.zeros(self.out_channels, dtype=x.dtype)
        if self.kernel == 3:
            B, C, H, W = x.shape
            xp = np.zeros((B, C, H + 2, W + 2), dtype=x.dtype)
            xp[:, :, 1:-1, 1:-1] = x
            out = np.empty((B, self.out_channels, H, W), dtype=x.dtype)
            _kernels.conv3x3_forward(xp, self.w.astype(x.dtype, copy=False), bias.astype(x.dtype, copy=False), out)
            self._cache = xp
        else:
            w2 = self.w[:, :, 0, 0].astype(x.dtype, copy=False)
            out = np.tensordot(x, w2, axes=([1], [1])).transpose(0, 3, 1, 2)
            if self.b is not None:
                out += self.b.astype(x.dtype, copy=False).reshape(1, -1, 1, 1)
            out = np.ascontiguousarray(out)
            self._cache = x
        return out

    def backward(self, grad):
        grad = np.ascontiguousarray(grad)
        if self.kernel == 3:
            xp = self._cache
            B = grad.shape[0]
            dxp = np.zeros_like(xp)
            _kernels.conv3x3_backward_input(grad, self.w.astype(grad.dtype, copy=False), dxp)
            dw = np.empty_like(self.w, dtype=grad.dtype)
            db = np.empty(self.out_channels, dtype=grad.dtype)
            _kernels.conv3x3_backward_params(xp, grad, dw, db)
            self.dw = dw
            self.db = db if self.b is not None else None
            return np.ascontiguousarray(dxp[:, :, 1:-1, 1:-1])
        x = self._cache
        w2 = self.w[:, :, 0, 0]
        dx = np.tensordot(grad, w2.astype(grad.dtype, copy=False), axes=([1], [0])).transpose(0, 3, 1, 2)
        # dw[o, c] = sum over batch and space of grad[:, o] * x[:, c]
        dw2 = np.tensordot(grad, x, axes=([0, 2, 3], [0, 2, 3]))
        self.dw = dw2.reshape(self.w.shape)
        self.db = grad.sum(axis=(0, 2, 3)) if self.b is not None else None
        return np.ascontiguousarray(dx)

    def parameters(self):
        if self.b is None:
            return [("w", self.w)]
        return [("w", self.w), ("b", self.b)]

    def gradients(self):
        if self.b is None:
            return [("w", self.dw)]
        return [("w", self.dw), ("b", self.db)]

    def variables(self):
        return self.parameters()


class BatchNorm2d:
    """Per-channel batch normalization over batch and spatial dims.

    Train mode normalizes with batch statistics and updates the running
    mean/variance; eval mode normalizes with the running statistics.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.9, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.dgamma = None
        self.dbeta = None
        self._cache = None

    def forward(self, x, train=False):
        x = _as4d(x)
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm over {self.channels} channels, got tensor of shape {x.shape}")
        B, C, H, W = x.shape
        if train:
            if B * H * W <= 1:
                raise ValueError("batch norm in train mode needs more than one element per channel")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1.0 - m) * mean).astype(self.running_mean.dtype)
            self.running_var = (m * self.running_var + (1.0 - m) * var).astype(self.running_var.dtype)
        else:
            mean = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
        istd = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(1, C, 1, 1)) * istd.reshape(1, C, 1, 1)
        out = self.gamma.astype(x.dtype).reshape(1, C, 1, 1) * xhat + self.beta.astype(x.dtype).reshape(1, C, 1, 1)
        self._cache = (xhat, istd, train, B * H * W)
        return out

    def backward(self, grad):
        xhat, istd, train, n = self._cache
        C = self.channels
        self.dgamma = np.sum(grad * xhat, axis=(0, 2, 3))
        self.dbeta = np.sum(grad, axis=(0, 2, 3))
        g = self.gamma.astype(grad.dtype).reshape(1, C, 1, 1)
        if not train:
            return grad * g * istd.reshape(1, C, 1, 1)
        # gradient through the batch statistics
        dxhat = grad * g
        term = dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True) \
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / n
        return term * istd.reshape(1, C, 1, 1)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def gradients(self):
        return [("gamma", self.dgamma), ("beta", self.dbeta)]

    def variables(self):
        return [("gamma", self.gamma), ("beta", self.beta),
                ("running_mean", self.running_mean), ("running_var", self.running_var)]


class ELU:
    def __init__(self, alpha=1.0):
        self.alpha = alpha
        self._out = None

    def forward(self, x, train=False):
        x = np.ascontiguousarray(np.asarray(x))
        out = np.empty_like(x)
        _kernels.elu_forward(x, x.dtype.type(self.alpha), out)
        self._out = out
        return out

    def backward(self, grad):
        grad = np.ascontiguousarray(grad)
        dx = np.empty_like(grad)
        _kernels.elu_backward(self._out, grad.dtype.type(self.alpha), grad, dx)
        return dx

    def parameters(self):
        return []

    def gradients(self):
        return []

    def variables(self):
        return []


class MaxPool2x2:
    """2x2 max pooling, stride 2, floor semantics on odd dimensions."""

    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        x = _as4d(np.ascontiguousarray(x))
        B, C, H, W = x.shape
        if H < 2 or W < 2:
            raise ShapeError(f"max pooling needs height and width >= 2, got {x.shape}")
        out = np.empty((B, C, H // 2, W // 2), dtype=x.dtype)
        idx = np.empty(out.shape, dtype=np.uint8)
        _kernels.maxpool2x2_forward(x, out, idx)
        self._cache = (idx, x.shape)
        return out

    def backward(self, grad):
        idx, in_shape = self._cache
        dx = np.zeros(in_shape, dtype=grad.dtype)
        _kernels.maxpool2x2_backward(np.ascontiguousarray(grad), idx, dx)
        return dx

    def parameters(self):
        return []

    def gradients(self):
        return []

    def variables(self):
        return []


class GlobalAvgPool:
    """Spatial mean per channel: (B, C, H, W) -> (B, C)."""

    def __init__(self):
        self._spatial = None

    def forward(self, x, train=False):
        x = _as4d(x)
        self._spatial = x.shape[2:]
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        H, W = self._spatial
        scale = 1.0 / (H * W)
        return np.broadcast_to((grad * scale)[:, :, None, None], grad.shape + (H, W)).copy()

    def parameters(self):
        return []

    def gradients(self):
        return []

    def variables(self):
        return []


class L2Normalize:
    """Row-wise L2 normalization of a (B, D) embedding matrix."""

    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        x = np.asarray(x)
        norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        if np.any(norms == 0.0):
            raise ValueError("cannot L2-normalize a zero vector")
        out = x / norms
        self._cache = (out, norms)
        return out

    def backward(self, grad):
        out, norms = self._cache
        return l2_normalize_backward(out, norms, grad)

    def parameters(self):
        return []

    def gradients(self):
        return []

    def variables(self):
        return []
