"""Forward/backward kernels on NCHW arrays.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes ``(dout, cache)``. Kernels compute in the dtype of their inputs, so
the same code runs float32 in production and float64 under gradient checks.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

BCE_EPS = 1e-7


# -- convolution -------------------------------------------------------------

def conv_output_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col_t(x, kh, kw, stride, pad):
    """Columns in channel-major layout ``(C*kh*kw, N*Ho*Wo)``."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, hp, wp = x.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xt = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * kh * kw, n * ho * wo), ho, wo


def conv2d_forward(x, weight, bias, stride=1, pad=0):
    """Cross-correlation with zero padding. ``weight`` is ``(K, C, kh, kw)``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    n, c, h, w = x.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {wc}")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({k},)")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    cols, ho, wo = _im2col_t(x, kh, kw, stride, pad)
    out = weight.reshape(k, -1) @ cols
    if bias is not None:
        out += bias[:, None]
    out = out.reshape(k, n, ho, wo).transpose(1, 0, 2, 3)
    return out, (x.shape, cols, weight, stride, pad, ho, wo, bias is not None)


# im2col elements per chunk in conv2d_infer; keeps the column buffer cache-resident
_INFER_CHUNK = 1 << 19


def conv2d_infer(x, weight, bias, stride=1, pad=0):
    """Forward-only conv2d. Same values as conv2d_forward, built in row blocks."""
    if stride != 1:
        return conv2d_forward(x, weight, bias, stride, pad)[0]
    n, c, h, w = x.shape
    k, wc, kh, kw = weight.shape
    if x.ndim != 4 or wc != c or h + 2 * pad < kh or w + 2 * pad < kw:
        return conv2d_forward(x, weight, bias, stride, pad)[0]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    rows = max(1, _INFER_CHUNK // (c * kh * kw * wo))
    wmat = weight.reshape(k, -1)
    out = np.empty((n, k, ho, wo), dtype=np.result_type(x, weight))
    for i in range(n):
        for r0 in range(0, ho, rows):
            r1 = min(ho, r0 + rows)
            cols, _, _ = _im2col_t(x[i:i + 1, :, r0:r1 + kh - 1], kh, kw, 1, 0)
            block = wmat @ cols
            if bias is not None:
                block += bias[:, None]
            out[i, :, r0:r1] = block.reshape(k, r1 - r0, wo)
    return out


def conv2d_backward(dout, cache):
    x_shape, cols, weight, stride, pad, ho, wo, has_bias = cache
    n, c, h, w = x_shape
    k, _, kh, kw = weight.shape
    d2 = dout.transpose(1, 0, 2, 3).reshape(k, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1) if has_bias else None
    dcols = (weight.reshape(k, -1).T @ d2).reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
    return dx.transpose(1, 0, 2, 3), dweight, dbias


# -- transposed convolution (kernel 2, stride 2) ------------------------------

def transposed_conv2_forward(x, weight, bias=None):
    """Stride-2 transposed convolution with a 2x2 kernel; doubles H and W.

    ``weight`` is ``(C_in, C_out, 2, 2)``. With the same weight array this is
    the adjoint of ``conv2d(., weight, stride=2)`` mapping C_out -> C_in.
    """
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (2, 2):
        raise ShapeError("transposed_conv2 expects 4-D input and a (C_in, C_out, 2, 2) weight")
    n, c, h, w = x.shape
    if weight.shape[0] != c:
        raise ShapeError(f"transposed_conv2: input has {c} channels, weight expects {weight.shape[0]}")
    k = weight.shape[1]
    xcols = x.transpose(0, 2, 3, 1).reshape(-1, c)
    out = (xcols @ weight.reshape(c, k * 4)).reshape(n, h, w, k, 2, 2)
    out = out.transpose(0, 3, 1, 4, 2, 5).reshape(n, k, 2 * h, 2 * w)
    if bias is not None:
        out += bias[None, :, None, None]
    return out, (x.shape, xcols, weight, bias is not None)


def transposed_conv2_backward(dout, cache):
    x_shape, xcols, weight, has_bias = cache
    n, c, h, w = x_shape
    k = weight.shape[1]
    dcols = dout.reshape(n, k, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, k * 4)
    dweight = (xcols.T @ dcols).reshape(weight.shape)
    dx = (dcols @ weight.reshape(c, k * 4).T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
    dbias = dout.sum(axis=(0, 2, 3)) if has_bias else None
    return dx, dweight, dbias


# -- batch normalization -----------------------------------------------------

def batch_norm_forward(x, gamma, beta, running_mean=None, running_var=None, eps=1e-5,
                       mode="train", momentum=0.1):
    """Per-channel normalization over (N, H, W).

    In train mode batch statistics are used and, if running buffers are given,
    they are updated in place (unbiased variance). Infer mode uses the buffers.
    """
    c = x.shape[1]
    g = gamma.reshape(1, c, 1, 1)
    b = beta.reshape(1, c, 1, 1)
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ShapeError("batch_norm in train mode needs at least 2 values per channel")
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if running_mean is not None:
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var * (m / (m - 1))
    elif mode == "infer":
        mu, var = running_mean, running_var
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = xhat * g + b
    return out, (xhat, inv_std.astype(x.dtype), gamma, mode)


def batch_norm_backward(dout, cache):
    xhat, inv_std, gamma, mode = cache
    c = xhat.shape[1]
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(1, c, 1, 1)
    if mode == "infer":
        return dxhat * inv_std.reshape(1, c, 1, 1), dgamma, dbeta
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
    dx = (inv_std.reshape(1, c, 1, 1) / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# -- pooling -----------------------------------------------------------------

def max_pool2_forward(x):
    """2x2 max pool, stride 2. Ties go to the first cell in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def max_pool2_values(x):
    """Forward values only (no argmax bookkeeping), for inference."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {h}x{w}")
    return np.maximum(np.maximum(x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2]),
                      np.maximum(x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]))


def max_pool2_backward(dout, cache):
    (n, c, h, w), idx = cache
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def global_max_pool_forward(x):
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def global_max_pool_backward(dout, cache):
    (n, c, h, w), idx = cache
    dflat = np.zeros((n, c, h * w), dtype=dout.dtype)
    np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
    return dflat.reshape(n, c, h, w)


# -- dense and activations ---------------------------------------------------

def dense_forward(x, weight, bias):
    """``x`` is ``(N, F)``, ``weight`` is ``(F, O)``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot multiply {x.shape} by {weight.shape}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out, (x, weight, bias is not None)


def dense_backward(dout, cache):
    x, weight, has_bias = cache
    return dout @ weight.T, x.T @ dout, (dout.sum(axis=0) if has_bias else None)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_forward(x):
    out = sigmoid(x)
    return out, out


def sigmoid_backward(dout, out):
    return dout * out * (1.0 - out)


def concat_channels_forward(a, b):
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(dout, split):
    return dout[:, :split], dout[:, split:]


# -- loss --------------------------------------------------------------------

def _check_binary(target):
    if not np.isin(target, (0, 1)).all():
        raise ValueError("BCE target must be binary")


def weighted_bce_forward(pred, target, positive_weight=1.0):
    """Mean of ``-(w*y*log p + (1-y)*log(1-p))`` with ``p`` clamped to [1e-7, 1-1e-7]."""
    if pred.shape != target.shape:
        raise ShapeError(f"BCE: pred {pred.shape} vs target {target.shape}")
    _check_binary(target)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    y = target.astype(p.dtype)
    terms = -(positive_weight * y * np.log(p) + (1.0 - y) * np.log1p(-p))
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    return float(terms.mean()), (p, y, positive_weight, inside)


def weighted_bce_backward(cache):
    p, y, w, inside = cache
    grad = (-(w * y) / p + (1.0 - y) / (1.0 - p)) / p.size
    return grad * inside


def weighted_bce_logits_backward(logits_prob, target, positive_weight=1.0):
    """Gradient of the (unclamped) weighted BCE w.r.t. the pre-sigmoid logits.

    ``logits_prob`` is ``sigmoid(z)``; the fused form stays finite where the
    clamp would otherwise zero the gradient.
    """
    y = target.astype(logits_prob.dtype)
    w = positive_weight
    return (logits_prob * (w * y + 1.0 - y) - w * y) / logits_prob.size
