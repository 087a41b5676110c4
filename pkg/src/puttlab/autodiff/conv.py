"""1-D convolution family on ``[B, C, L]`` tensors.

Unbatched ``[C, L]`` inputs are accepted and produce unbatched outputs.
Weights follow the usual layouts: ``[C_out, C_in, K]`` for convolution,
``[C_in, C_out, K]`` for transposed convolution.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise ShapeMismatch(f"expected [C, L] or [B, C, L], got {x.shape}")
    return x, False


def conv_output_length(length, kernel, stride=1, dilation=1, padding=0):
    return (length + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding=0):
    """Cross-correlation ``out[b,o,t] = sum_{c,k} w[o,c,k] x[b,c,t*s + k*d - p] + bias[o]``."""
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    B, C, L = x.shape
    if weight.ndim != 3 or weight.shape[1] != C:
        raise ShapeMismatch(f"weight {weight.shape} does not match input channels {C}")
    O, _, K = weight.shape
    if bias is not None and as_tensor(bias).shape != (O,):
        raise ShapeMismatch(f"bias must have shape ({O},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeMismatch("stride and dilation must be positive, padding non-negative")
    L_out = conv_output_length(L, K, stride, dilation, padding)
    if L_out < 1:
        raise ShapeMismatch(f"input length {L} too short for kernel {K} (dilation {dilation})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    xp = np.ascontiguousarray(xp)
    s0, s1, s2 = xp.strides
    # cols[b, c*K + k, t] = xp[b, c, t*stride + k*dilation]
    cols = as_strided(xp, (B, C, K, L_out), (s0, s1, s2 * dilation, s2 * stride), writeable=False)
    cols = cols.reshape(B, C * K, L_out)
    wmat = weight.data.reshape(O, C * K)
    out = wmat @ cols
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None]
        parents.append(bias)

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(O, C, K)
        dcols = (wmat.T @ g).reshape(B, C, K, L_out)
        dxp = np.zeros((B, C, xp.shape[2]))
        span = stride * (L_out - 1) + 1
        for k in range(K):
            start = k * dilation
            dxp[:, :, start : start + span : stride] += dcols[:, :, k]
        gx = dxp[:, :, padding : padding + L]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    y = Tensor._op(out, parents, back)
    return y.reshape(y.shape[1:]) if squeeze else y


def transposed_conv1d(x, weight, bias=None, stride=1, padding=0):
    """Fractionally strided convolution, the adjoint of :func:`conv1d`.

    Output length is ``(L - 1) * stride - 2 * padding + K``.
    """
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    B, Ci, L = x.shape
    if weight.ndim != 3 or weight.shape[0] != Ci:
        raise ShapeMismatch(f"weight {weight.shape} does not match input channels {Ci}")
    _, Co, K = weight.shape
    if bias is not None and as_tensor(bias).shape != (Co,):
        raise ShapeMismatch(f"bias must have shape ({Co},)")
    full = (L - 1) * stride + K
    L_out = full - 2 * padding
    if stride < 1 or padding < 0 or L_out < 1:
        raise ShapeMismatch("invalid stride/padding for transposed convolution")

    xd = x.data
    wmat = weight.data.reshape(Ci, Co * K)
    contrib = (wmat.T @ xd).reshape(B, Co, K, L)
    buf = np.zeros((B, Co, full))
    span = stride * (L - 1) + 1
    for k in range(K):
        buf[:, :, k : k + span : stride] += contrib[:, :, k]
    out = buf[:, :, padding : padding + L_out]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def back(g):
        gfull = np.zeros((B, Co, full))
        gfull[:, :, padding : padding + L_out] = g
        s0, s1, s2 = gfull.strides
        # gathered[b, o*K + k, t] = gfull[b, o, k + t*stride]
        gathered = as_strided(gfull, (B, Co, K, L), (s0, s1, s2, s2 * stride), writeable=False)
        gathered = gathered.reshape(B, Co * K, L)
        gx = wmat @ gathered
        gw = np.tensordot(xd, gathered, axes=([0, 2], [0, 2])).reshape(Ci, Co, K)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    y = Tensor._op(out, parents, back)
    return y.reshape(y.shape[1:]) if squeeze else y


def pixel_shuffle1d(x, upscale):
    """``[B, r*C, L] -> [B, C, r*L]`` with ``out[c, r*t + j] = in[j*C + c, t]``."""
    x, squeeze = _batched(x)
    B, RC, L = x.shape
    if RC % upscale:
        raise ShapeMismatch(f"{RC} channels not divisible by upscale {upscale}")
    C = RC // upscale
    y = x.reshape(B, upscale, C, L).transpose(0, 2, 3, 1).reshape(B, C, L * upscale)
    return y.reshape(C, L * upscale) if squeeze else y


def subpixel_conv1d(x, weight, bias=None, upscale=2, dilation=1, padding=None):
    """Convolve to ``upscale * C_out`` channels, then interleave them into time.

    ``weight`` has shape ``[upscale * C_out, C_in, K]``. Padding defaults to
    "same" so the output length is exactly ``upscale * L``.
    """
    weight = as_tensor(weight)
    if weight.shape[0] % upscale:
        raise ShapeMismatch(f"{weight.shape[0]} output channels not divisible by {upscale}")
    K = weight.shape[2]
    if padding is None:
        if (K - 1) * dilation % 2:
            raise ShapeMismatch("same padding needs an odd effective kernel")
        padding = (K - 1) * dilation // 2
    y = conv1d(x, weight, bias, stride=1, dilation=dilation, padding=padding)
    return pixel_shuffle1d(y, upscale)
