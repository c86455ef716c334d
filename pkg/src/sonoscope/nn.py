"""Layer kernels with hand-written gradients.

Every layer is a ``*_forward`` / ``*_backward`` pair working on batched
arrays (``N x C x H x W`` for spatial layers). Forward returns
``(out, cache)``; backward takes the upstream gradient and that cache.
The dtype of the inputs is preserved, so the same code serves float32
training and float64 gradient checks.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, FormatError, ShapeError


def _check_4d(x, name="x"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be N x C x H x W, got shape {x.shape}")


def _out_size(size, k, stride, pad=0):
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv2d_forward_nhwc(x, w, b, stride=1, padding=0):
    """Channels-last convolution used by the model.

    x: (N, H, W, Cin); w: (Cout, Cin, kh, kw); output (N, H', W', Cout).
    """
    _check_4d(x)
    if w.ndim != 4 or w.shape[1] != x.shape[3]:
        raise ShapeError(f"weights {w.shape} do not match input channels {x.shape[3]}")
    n, h, wd, c = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{h}x{wd} input too small for {kh}x{kw} kernel with padding {padding}")
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)
    wmat = w.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ wmat.T
    out += b
    return out.reshape(n, ho, wo, cout), (x.shape, cols, wmat, w.shape, stride, padding)


def conv2d_backward_nhwc(dout, cache, need_dx=True):
    x_shape, cols, wmat, w_shape, stride, padding = cache
    n, h, wd, c = x_shape
    cout, _, kh, kw = w_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dflat = dout.reshape(-1, cout)
    dw = (dflat.T @ cols).reshape(cout, kh, kw, c).transpose(0, 3, 1, 2)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, np.ascontiguousarray(dw), db
    dcols = (dflat @ wmat).reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + 2 * padding, wd + 2 * padding, c), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, :, i, j]
    if padding:
        dxp = dxp[:, padding:padding + h, padding:padding + wd]
    return dxp, np.ascontiguousarray(dw), db


def conv2d_forward(x, w, b, stride=1, padding=0):
    """Cross-correlation on channels-first input.

    x: (N, Cin, H, W); w: (Cout, Cin, kh, kw); b: (Cout,). Output height is
    ``(H + 2 * padding - kh) // stride + 1``, likewise for width.
    """
    _check_4d(x)
    out, cache = conv2d_forward_nhwc(x.transpose(0, 2, 3, 1), w, b, stride, padding)
    return out.transpose(0, 3, 1, 2), cache


def conv2d_backward(dout, cache, need_dx=True):
    dx, dw, db = conv2d_backward_nhwc(dout.transpose(0, 2, 3, 1), cache, need_dx)
    return (None if dx is None else dx.transpose(0, 3, 1, 2)), dw, db


# ---------------------------------------------------------------------------
# Elementwise and pooling
# ---------------------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, cache):
    return dout * cache


def maxpool2d_forward_nhwc(x, size=2):
    """Non-overlapping max pooling over axes 1 and 2 of an NHWC array.

    The trailing remainder is dropped. An axis shorter than ``size`` is
    pooled with a window equal to its length, so a 1-wide axis passes
    through unchanged. Gradients go to the first maximal element.
    """
    _check_4d(x)
    n, h, w, c = x.shape
    kh, kw = min(size, h), min(size, w)
    ho, wo = h // kh, w // kw
    blocks = x[:, :ho * kh, :wo * kw].reshape(n, ho, kh, wo, kw, c)
    out = blocks.max(axis=(2, 4))
    hit = blocks == out[:, :, None, :, None, :]
    taken = np.zeros_like(out, dtype=bool)
    for i in range(kh):
        for j in range(kw):
            first = hit[:, :, i, :, j] & ~taken
            hit[:, :, i, :, j] = first
            taken |= first
    return out, (x.shape, hit)


def maxpool2d_backward_nhwc(dout, cache):
    x_shape, hit = cache
    n, ho, kh, wo, kw, c = hit.shape
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :ho * kh, :wo * kw] = (hit * dout[:, :, None, :, None, :]).reshape(n, ho * kh, wo * kw, c)
    return dx


def maxpool2d_forward(x, size=2):
    """Channels-first wrapper of :func:`maxpool2d_forward_nhwc`."""
    _check_4d(x)
    out, cache = maxpool2d_forward_nhwc(x.transpose(0, 2, 3, 1), size)
    return out.transpose(0, 3, 1, 2), cache


def maxpool2d_backward(dout, cache):
    return maxpool2d_backward_nhwc(dout.transpose(0, 2, 3, 1), cache).transpose(0, 3, 1, 2)


def _adaptive_edges(size, out):
    starts = [(i * size) // out for i in range(out)]
    ends = [-((-(i + 1) * size) // out) for i in range(out)]
    return list(zip(starts, ends))


def adaptive_avg_pool_forward(x, out_h=1, out_w=1):
    """Average over an even partition of H x W into ``out_h x out_w`` cells."""
    _check_4d(x)
    n, c, h, w = x.shape
    rows, cols = _adaptive_edges(h, out_h), _adaptive_edges(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return out, (x.shape, rows, cols)


def adaptive_avg_pool_backward(dout, cache):
    x_shape, rows, cols = cache
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            dx[:, :, r0:r1, c0:c1] += (dout[:, :, i, j] / ((r1 - r0) * (c1 - c0)))[:, :, None, None]
    return dx


def _window_mean(e, kh, kw, stride):
    """Mean over kh x kw windows of the last two axes."""
    h, w = e.shape[-2:]
    ho, wo = _out_size(h, kh, stride), _out_size(w, kw, stride)
    win = sliding_window_view(e, (kh, kw), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    return win[..., :ho, :wo, :, :].mean(axis=(-2, -1))


def _window_mean_backward(dout, shape, kh, kw, stride):
    ho, wo = dout.shape[-2:]
    de = np.zeros(shape, dtype=dout.dtype)
    g = dout / (kh * kw)
    for i in range(kh):
        for j in range(kw):
            de[..., i:i + stride * ho:stride, j:j + stride * wo:stride] += g
    return de


# ---------------------------------------------------------------------------
# Histogram layer
# ---------------------------------------------------------------------------

def histogram_forward(x, centers, widths, kernel=(2, 2), stride=2):
    """Soft histogram with radial-basis bins.

    x: (N, D, M, Nw); centers, widths: (B, D). Output has ``D * B`` channels
    ordered ``d * B + b``; each cell is the window mean of
    ``exp(-widths[b, d]**2 * (x - centers[b, d])**2)``.
    """
    _check_4d(x)
    n, d, m, nw = x.shape
    if centers.ndim != 2 or centers.shape[1] != d or widths.shape != centers.shape:
        raise ShapeError(f"bin parameters {centers.shape}/{widths.shape} do not match {d} channels")
    s, t = kernel
    if m < s or nw < t:
        raise ShapeError(f"{m}x{nw} input smaller than {s}x{t} histogram window")
    nb = centers.shape[0]
    z = x[:, :, None, :, :] - centers.T[None, :, :, None, None]
    g2 = (widths.T ** 2)[None, :, :, None, None]
    e = np.exp(-g2 * z * z)
    y = _window_mean(e, s, t, stride)
    return y.reshape(n, d * nb, y.shape[-2], y.shape[-1]), (z, e, centers, widths, kernel, stride)


def histogram_backward(dout, cache):
    """Gradients with respect to input, bin centers and bin widths."""
    z, e, _, widths, (s, t), stride = cache
    n, d, nb = z.shape[:3]
    dy = dout.reshape(n, d, nb, dout.shape[-2], dout.shape[-1])
    de = _window_mean_backward(dy, z.shape, s, t, stride) * e
    gam = widths.T[None, :, :, None, None]
    dz = de * (-2.0 * gam * gam * z)
    dx = dz.sum(axis=2)
    dcenters = -dz.sum(axis=(0, 3, 4)).T
    dwidths = (de * (-2.0 * gam * z * z)).sum(axis=(0, 3, 4)).T
    return dx, dcenters, dwidths


# ---------------------------------------------------------------------------
# Dense, dropout, loss
# ---------------------------------------------------------------------------

def linear_forward(x, w, b):
    """x: (N, Din); w: (Dout, Din); b: (Dout,)"""
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"input {x.shape} incompatible with weights {w.shape}")
    return x @ w.T + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def dropout_forward(x, p, rng=None, train=True):
    """Inverted dropout; identity when ``train`` is false or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability {p} outside [0, 1)")
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def softmax_cross_entropy(logits, y):
    """Mean negative log-likelihood and its gradient with respect to ``logits``."""
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {y.shape} disagree")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    total = expd.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = -log_probs[np.arange(n), y].mean()
    dlogits = expd / total
    dlogits[np.arange(n), y] -= 1
    return float(loss), dlogits / n


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adagrad:
    """``acc += g**2; p -= lr * g / (sqrt(acc) + eps)``, updating in place."""

    def __init__(self, lr=1e-3, eps=1e-10, accumulators=None):
        self.lr = lr
        self.eps = eps
        self.accumulators = accumulators if accumulators is not None else {}

    def step(self, params, grads):
        for name, g in grads.items():
            p = params[name]
            acc = self.accumulators.get(name)
            if acc is None:
                acc = self.accumulators[name] = np.zeros_like(p)
            acc += g * g
            p -= self.lr * g / (np.sqrt(acc) + self.eps)


def adagrad_step(param, grad, acc, lr=1e-3, eps=1e-10):
    """Functional single-tensor Adagrad update; returns ``(param, acc)``."""
    acc = acc + grad * grad
    return param - lr * grad / (np.sqrt(acc) + eps), acc


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"HLTC"
_CKPT_VERSION = 1


def save_checkpoint(path, tensors):
    """Write named float32 tensors in the HLTC little-endian layout."""
    parts = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw_name = name.encode("utf-8")
        if len(raw_name) > 255:
            raise ValueError(f"tensor name too long: {name}")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<B", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not an HLTC checkpoint")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        pos = 12
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<B", raw, pos)
            name = raw[pos + 1:pos + 1 + name_len].decode("utf-8")
            pos += 1 + name_len
            (rank,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(dims)
            tensors[name] = arr.astype(np.float32)
            pos += 4 * size
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    return tensors
