"""Forward/backward pairs for the layers of the grasp CNN.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``.  Feature maps are stored channels-last, (N, H, W, C), because
that makes the im2col gather copy contiguous channel runs; the model converts
(N, C, H, W) inputs once on entry.  The arithmetic runs in whatever float dtype
the inputs carry.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# convolution (stride 1, zero padding)


def conv2d_forward(x, w, b, pad: int = 1):
    """Cross-correlation of ``x`` (N, H, W, C) with ``w`` (kh, kw, C, F), plus bias ``b`` (F,)."""
    _check(x.ndim == 4 and w.ndim == 4, f"conv2d expects 4D input and kernel, got {x.shape} and {w.shape}")
    _check(x.shape[3] == w.shape[2], f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else np.ascontiguousarray(x)
    ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    # a (kw, C) slab of one padded row is contiguous, so im2col is a single strided copy
    s_n, s_h, s_w, s_c = xp.strides
    win = as_strided(xp, (n, ho, wo, kh, kw * c), (s_n, s_h, s_w, s_h, s_c), writeable=False)
    cols = win.reshape(n * ho * wo, kh * kw * c)
    out = cols @ w.reshape(-1, f)
    out += b
    return out.reshape(n, ho, wo, f), (cols, x.shape, w, pad)


def conv2d_backward(dout, cache):
    cols, xshape, w, pad = cache
    n, h, wd, c = xshape
    kh, kw, _, f = w.shape
    ho, wo = dout.shape[1], dout.shape[2]
    dmat = dout.reshape(n * ho * wo, f)
    dw = (cols.T @ dmat).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(-1, f).T).reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pad : pad + h, pad : pad + wd, :] if pad else dxp
    return dx, dw, db


# ---------------------------------------------------------------------------
# batch normalisation over (N, H, W) per channel


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool):
    """Returns ``(out, cache)``; in training mode the running stats arrays are updated in place."""
    _check(x.shape[-1] == gamma.shape[0], f"batchnorm: input {x.shape} vs {gamma.shape[0]} channels")
    if not train:
        scale = gamma / np.sqrt(running_var + BN_EPS)
        shift = beta - running_mean * scale
        return x * scale.astype(x.dtype) + shift.astype(x.dtype), None
    m = x.shape[0] * x.shape[1] * x.shape[2]
    mean = x.mean(axis=(0, 1, 2))
    var = x.var(axis=(0, 1, 2))
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    unbiased = var * m / max(m - 1, 1)
    running_mean *= 1 - BN_MOMENTUM
    running_mean += BN_MOMENTUM * mean
    running_var *= 1 - BN_MOMENTUM
    running_var += BN_MOMENTUM * unbiased
    return xhat * gamma + beta, (xhat, inv, gamma)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma = cache
    m = dout.shape[0] * dout.shape[1] * dout.shape[2]
    dbeta = dout.sum(axis=(0, 1, 2))
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    dx = inv / m * (m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# pointwise


def relu_forward(x, mask=None):
    """ReLU; a given ``mask`` replays a recorded branch pattern instead of recomputing it."""
    if mask is None:
        mask = x > 0
    return x * mask, mask


def relu_backward(dout, cache):
    return dout * cache


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_forward(x):
    s = sigmoid(x)
    return s, s


def sigmoid_backward(dout, cache):
    return dout * cache * (1.0 - cache)


# ---------------------------------------------------------------------------
# pooling


def maxpool2x2_forward(x, train: bool = True, idx=None):
    """2x2 / stride 2 max pooling; ties route the gradient to the first element in row-major order.

    With ``train=False`` no argmax is kept and the cache is ``None``.  A given
    ``idx`` replays recorded window positions.
    """
    n, h, w, c = x.shape
    _check(h % 2 == 0 and w % 2 == 0, f"maxpool2x2 needs even spatial dims, got {x.shape}")
    if not train:
        return np.maximum(np.maximum(x[:, 0::2, 0::2], x[:, 0::2, 1::2]), np.maximum(x[:, 1::2, 0::2], x[:, 1::2, 1::2])), None
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    if idx is None:
        idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2x2_backward(dout, cache):
    idx, shape = cache
    n, h, w, c = shape
    dwin = np.zeros((n, h // 2, w // 2, c, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(shape)


def global_avg_pool_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dout, shape):
    n, h, w, c = shape
    return np.broadcast_to((dout / (h * w))[:, None, None, :], shape).copy()


# ---------------------------------------------------------------------------
# fully connected


def fc_forward(x, w, b):
    """``x`` (N, in) times ``w`` (out, in) transposed, plus ``b``."""
    _check(x.ndim == 2 and x.shape[1] == w.shape[1], f"fc: input {x.shape} vs weight {w.shape}")
    return x @ w.T + b, (x, w)


def fc_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


# ---------------------------------------------------------------------------
# spatial attention


def spatial_attention_forward(x, w, b, arg=None):
    """Gate ``x`` by sigmoid(conv7x7([mean_c(x), max_c(x)])).

    ``w`` is (k, k, 2, 1), ``b`` is (1,).  The channel max sends its gradient to
    the first maximal channel.
    """
    _check(x.ndim == 4 and x.shape[3] >= 1, f"spatial attention needs (N, H, W, C>=1), got {x.shape}")
    _check(w.shape[2:] == (2, 1), f"attention kernel must be (k, k, 2, 1), got {w.shape}")
    avg = x.mean(axis=3, keepdims=True)
    if arg is None:
        arg = x.argmax(axis=3)[..., None]
    mx = np.take_along_axis(x, arg, axis=3)
    s = np.concatenate([avg, mx], axis=3)
    z, conv_cache = conv2d_forward(s, w, b, w.shape[0] // 2)
    a = sigmoid(z)
    return x * a, (x, a, arg, conv_cache)


def spatial_attention_backward(dout, cache):
    x, a, arg, conv_cache = cache
    dx = dout * a
    da = (dout * x).sum(axis=3, keepdims=True)
    dz = da * a * (1.0 - a)
    ds, dw, db = conv2d_backward(dz, conv_cache)
    dx += ds[..., 0:1] / x.shape[3]
    np.put_along_axis(dx, arg, np.take_along_axis(dx, arg, axis=3) + ds[..., 1:2], axis=3)
    return dx, dw, db


# ---------------------------------------------------------------------------
# loss


def log_sigmoid(z):
    """log(sigmoid(z)) without overflow."""
    return -np.logaddexp(0.0, -z)


def weighted_bce(logits, labels, pos_weight: float = 2.0):
    """Mean of ``-(w_p y log p + (1 - y) log(1 - p))`` with ``p = sigmoid(logits)``.

    Returns ``(loss, dloss/dlogits)``.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    _check(z.shape == y.shape, f"loss: {z.shape} logits vs {y.shape} labels")
    n = len(z)
    per = -(pos_weight * y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z))
    p = sigmoid(z)
    grad = (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / n
    return float(per.sum() / n), grad


def weighted_bce_prob(p, y, pos_weight: float = 2.0) -> float:
    """Same loss evaluated directly on probabilities (reference form)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(-(pos_weight * y * np.log(p) + (1 - y) * np.log(1 - p)).mean())
