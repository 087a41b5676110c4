"""Batch normalization, PReLU and LSTM recurrences as graph operations."""

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor, concat

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _channel_view(v, ndim):
    shape = [1] * ndim
    shape[1] = -1
    return v.reshape(shape)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel normalization over every axis except axis 1.

    ``running_mean`` and ``running_var`` are numpy arrays updated in place
    when ``training`` is true. Eval mode normalizes with them instead of
    batch statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim == 2:
        y = batch_norm(x.reshape(1, *x.shape), gamma, beta, running_mean, running_var, training, momentum, eps)
        return y.reshape(y.shape[1:])
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,) or running_mean.shape != (C,) or running_var.shape != (C,):
        raise ShapeMismatch(f"batch norm parameters must have shape ({C},)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    axes = (0,) + tuple(range(2, x.ndim))
    gv = _channel_view(gamma.data, x.ndim)
    bv = _channel_view(beta.data, x.ndim)

    if training:
        n = x.data.size // C
        mean = x.data.mean(axis=axes)
        centered = x.data - _channel_view(mean, x.ndim)
        var = (centered * centered).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * _channel_view(inv_std, x.ndim)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))

        def back(g):
            dxhat = g * gv
            s1 = _channel_view(dxhat.sum(axis=axes), x.ndim)
            s2 = _channel_view((dxhat * xhat).sum(axis=axes), x.ndim)
            gx = _channel_view(inv_std, x.ndim) / n * (n * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - _channel_view(running_mean, x.ndim)) * _channel_view(inv_std, x.ndim)

        def back(g):
            gx = g * gv * _channel_view(inv_std, x.ndim)
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor._op(gv * xhat + bv, (x, gamma, beta), back)


def prelu(x, alpha):
    """``x`` where positive, ``alpha[c] * x`` elsewhere; channel axis is 1."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    if x.ndim < 2 or alpha.shape != (x.shape[1],):
        raise ShapeMismatch(f"alpha {alpha.shape} does not match channels of {x.shape}")
    pos = x.data > 0
    a = _channel_view(alpha.data, x.ndim)
    axes = (0,) + tuple(range(2, x.ndim))

    def back(g):
        gx = np.where(pos, g, g * a)
        ga = np.where(pos, 0.0, g * x.data).sum(axis=axes)
        return gx, ga

    return Tensor._op(np.where(pos, x.data, a * x.data), (x, alpha), back)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm(x, w_ih, w_hh, bias, reverse=False):
    """Single-direction LSTM over ``x`` of shape ``[B, L, F]`` (or ``[L, F]``).

    Gates are stacked in the order (input, forget, cell, output) along the
    first axis of ``w_ih [4H, F]``, ``w_hh [4H, H]`` and ``bias [4H]``.
    Initial hidden and cell states are zero. With ``reverse`` the sequence
    is consumed from the last step to the first and outputs stay aligned
    with their input steps. Backward runs truncation-free BPTT.
    """
    x, w_ih, w_hh, bias = (as_tensor(t) for t in (x, w_ih, w_hh, bias))
    if x.ndim == 2:
        y = lstm(x.reshape(1, *x.shape), w_ih, w_hh, bias, reverse)
        return y.reshape(y.shape[1:])
    B, L, F = x.shape
    H4 = w_ih.shape[0]
    H = H4 // 4
    if w_ih.shape != (4 * H, F) or w_hh.shape != (4 * H, H) or bias.shape != (4 * H,) or H4 % 4:
        raise ShapeMismatch(
            f"LSTM shapes inconsistent: x {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, bias {bias.shape}"
        )
    Wi, Wh = w_ih.data, w_hh.data
    pre = x.data @ Wi.T + bias.data  # [B, L, 4H]
    steps = range(L - 1, -1, -1) if reverse else range(L)

    gates = np.empty((B, L, 4 * H))
    cells = np.empty((B, L, H))
    tanh_c = np.empty((B, L, H))
    hs = np.empty((B, L, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in steps:
        z = pre[:, t] + h @ Wh.T
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        gg = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c + i * gg
        tc = np.tanh(c)
        h = o * tc
        gates[:, t, :H], gates[:, t, H : 2 * H], gates[:, t, 2 * H : 3 * H], gates[:, t, 3 * H :] = i, f, gg, o
        cells[:, t], tanh_c[:, t], hs[:, t] = c, tc, h

    order = list(steps)

    def back(g):
        dpre = np.empty((B, L, 4 * H))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for n in range(L - 1, -1, -1):
            t = order[n]
            prev = order[n - 1] if n > 0 else None
            i = gates[:, t, :H]
            f = gates[:, t, H : 2 * H]
            gg = gates[:, t, 2 * H : 3 * H]
            o = gates[:, t, 3 * H :]
            tc = tanh_c[:, t]
            c_prev = cells[:, prev] if prev is not None else 0.0
            h_prev = hs[:, prev] if prev is not None else None

            dh = g[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dpre[:, t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H :] = do * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ Wh
            if h_prev is not None:
                dWh += dz.T @ h_prev
        flat = dpre.reshape(-1, 4 * H)
        dx = dpre @ Wi
        dWi = flat.T @ x.data.reshape(-1, F)
        return dx, dWi, dWh, flat.sum(axis=0)

    return Tensor._op(hs, (x, w_ih, w_hh, bias), back)


def bilstm(x, forward_params, backward_params):
    """Bidirectional LSTM: ``[B, L, F] -> [B, L, 2H]`` (forward half first).

    Each parameter set is a ``(w_ih, w_hh, bias)`` triple.
    """
    fwd = lstm(x, *forward_params)
    bwd = lstm(x, *backward_params, reverse=True)
    return concat([fwd, bwd], axis=-1)
