"""Parameter-holding layers built on the functional kernels."""

from __future__ import annotations

import os

import numpy as np

from . import functional as F

DEBUG = bool(os.environ.get("FIRESCAN_DEBUG"))


class Tensor:
    """Float array with a gradient slot."""

    __slots__ = ("values", "grad")

    def __init__(self, values, grad=None):
        self.values = np.asarray(values)
        self.grad = grad

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype})"


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _check(name, arr):
    if DEBUG and not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {name}")


class Layer:
    def __init__(self):
        self.params = {}
        self.buffers = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, pad=None, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        fan_in = in_ch * kernel * kernel
        self.params["weight"] = Tensor(he_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.params["bias"] = Tensor(np.zeros(out_ch, dtype=dtype))

    def forward(self, x, train=False):
        w, b = self.params["weight"].values, self.params["bias"].values
        if train:
            out, self._cache = F.conv2d_forward(x, w, b, self.stride, self.pad)
        else:
            # inference skips the column cache; backward rebuilds it if asked
            self._cache, self._input = None, x
            out = F.conv2d_infer(x, w, b, self.stride, self.pad)
        _check("conv2d", out)
        return out

    def backward(self, dout):
        if self._cache is None:
            w, b = self.params["weight"].values, self.params["bias"].values
            _, self._cache = F.conv2d_forward(self._input, w, b, self.stride, self.pad)
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.params["weight"].grad = dw
        self.params["bias"].grad = db
        return dx


class ConvTranspose2(Layer):
    def __init__(self, in_ch, out_ch, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = Tensor(he_uniform(rng, (in_ch, out_ch, 2, 2), in_ch, dtype))
        self.params["bias"] = Tensor(np.zeros(out_ch, dtype=dtype))

    def forward(self, x, train=False):
        out, self._cache = F.transposed_conv2_forward(
            x, self.params["weight"].values, self.params["bias"].values
        )
        return out

    def backward(self, dout):
        dx, dw, db = F.transposed_conv2_backward(dout, self._cache)
        self.params["weight"].grad = dw
        self.params["bias"].grad = db
        return dx


class BatchNorm2d(Layer):
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = Tensor(np.ones(channels, dtype=dtype))
        self.params["beta"] = Tensor(np.zeros(channels, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False):
        out, self._cache = F.batch_norm_forward(
            x,
            self.params["gamma"].values,
            self.params["beta"].values,
            self.buffers["running_mean"],
            self.buffers["running_var"],
            eps=self.eps,
            mode="train" if train else "infer",
            momentum=self.momentum,
        )
        return out

    def backward(self, dout):
        dx, dg, db = F.batch_norm_backward(dout, self._cache)
        self.params["gamma"].grad = dg
        self.params["beta"].grad = db
        return dx


class MaxPool2(Layer):
    def forward(self, x, train=False):
        if train:
            out, self._cache = F.max_pool2_forward(x)
            return out
        # argmax routing is only needed for backward; defer it
        self._cache, self._input = None, x
        return F.max_pool2_values(x)

    def backward(self, dout):
        if self._cache is None:
            _, self._cache = F.max_pool2_forward(self._input)
        return F.max_pool2_backward(dout, self._cache)


class GlobalMaxPool(Layer):
    def forward(self, x, train=False):
        out, self._cache = F.global_max_pool_forward(x)
        return out

    def backward(self, dout):
        return F.global_max_pool_backward(dout, self._cache)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = Tensor(he_uniform(rng, (in_features, out_features), in_features, dtype))
        self.params["bias"] = Tensor(np.zeros(out_features, dtype=dtype))

    def forward(self, x, train=False):
        out, self._cache = F.dense_forward(x, self.params["weight"].values, self.params["bias"].values)
        return out

    def backward(self, dout):
        dx, dw, db = F.dense_backward(dout, self._cache)
        self.params["weight"].grad = dw
        self.params["bias"].grad = db
        return dx


class ReLU(Layer):
    def forward(self, x, train=False):
        out, self._mask = F.relu_forward(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._mask)


class Sigmoid(Layer):
    def forward(self, x, train=False):
        out, self._out = F.sigmoid_forward(x)
        return out

    def backward(self, dout):
        return F.sigmoid_backward(dout, self._out)


class Sequential(Layer):
    """Chain of layers; parameters are namespaced ``"<position>.<name>"``."""

    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for name, t in layer.params.items():
                yield f"{prefix}{i}.{name}", t

    def named_buffers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers.items():
                yield f"{prefix}{i}.{name}", b

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
