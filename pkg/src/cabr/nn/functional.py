"""Differentiable ops on :class:`~cabr.nn.tensor.Tensor`.

Convolutions are 3x3 cross-correlations on NCHW float32 data, lowered to a
batched matmul over an explicit patch matrix. Zero padding equals the
dilation so stride-1 layers keep the spatial size and stride-2 layers give
``ceil(H / 2)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

KERNEL = 3


class ShapeError(ValueError):
    pass


class _BranchTape:
    """Records LeakyReLU sign masks, or replays recorded ones in order.

    Used by the gradient checker: replaying the base-point masks while
    perturbing inputs keeps finite differences on the same linear piece the
    analytic gradient differentiates, so kinks within the step do not
    corrupt the estimate.
    """

    def __init__(self):
        self.masks: list[np.ndarray] = []
        self.replaying = False
        self.cursor = 0

    def mask(self, neg: np.ndarray) -> np.ndarray:
        if not self.replaying:
            self.masks.append(neg)
            return neg
        rec = self.masks[self.cursor]
        self.cursor += 1
        if rec.shape != neg.shape:
            raise RuntimeError("branch replay diverged from the recorded graph")
        return rec


_tape: _BranchTape | None = None


class branch_tape:
    """``with branch_tape() as t:`` records; ``with branch_tape(t):`` replays."""

    def __init__(self, replay: _BranchTape | None = None):
        self.tape = replay if replay is not None else _BranchTape()
        if replay is not None:
            self.tape.replaying = True
            self.tape.cursor = 0

    def __enter__(self) -> _BranchTape:
        global _tape
        self._prev = _tape
        _tape = self.tape
        return self.tape

    def __exit__(self, *exc):
        global _tape
        _tape = self._prev
        return False


def _negative(z: np.ndarray) -> np.ndarray:
    neg = z < 0
    return neg if _tape is None else _tape.mask(neg)


def _out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def _im2col(x: np.ndarray, stride: int, dilation: int) -> np.ndarray:
    """Pixel-major patch matrix (N*Ho*Wo, 9*C), columns ordered (ky, kx, c)."""
    n, c, h, w = x.shape
    p = dilation
    xh = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=np.float32)
    xh[:, p : p + h, p : p + w] = x.transpose(0, 2, 3, 1)
    ext = 2 * dilation + 1
    win = np.lib.stride_tricks.sliding_window_view(xh, (ext, ext), axis=(1, 2))
    win = win[:, ::stride, ::stride, :, ::dilation, ::dilation]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, KERNEL * KERNEL * c)


def _input_grad(gm: np.ndarray, weight: np.ndarray, x_shape, stride: int, dilation: int) -> np.ndarray:
    """Adjoint w.r.t. the input, as a correlation with the flipped kernel.

    For stride 2 the output gradient is first spread back onto the input
    grid with zeros in between.
    """
    n, cin, h, w = x_shape
    cout = weight.shape[0]
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    g = gm.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if stride > 1:
        up = np.zeros((n, cout, h, w), dtype=np.float32)
        up[:, :, ::stride, ::stride] = g
        g = up
    flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    cols = _im2col(g, 1, dilation)
    gx = cols @ _weight_matrix(flipped)
    return np.ascontiguousarray(gx.reshape(n, h, w, cin).transpose(0, 3, 1, 2))


def _weight_matrix(weight: np.ndarray) -> np.ndarray:
    """(C_out, C_in, 3, 3) -> (9*C_in, C_out) matching the patch column order."""
    cout = weight.shape[0]
    return weight.transpose(2, 3, 1, 0).reshape(-1, cout)


def _check_conv(x: np.ndarray, weight: np.ndarray, stride: int, dilation: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError(f"expected (C_out, C_in, 3, 3) weight, got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {weight.shape[1]}")
    if stride not in (1, 2) or dilation not in (1, 2):
        raise ShapeError(f"stride and dilation must be 1 or 2, got {stride}, {dilation}")
    extent = dilation * (KERNEL - 1) + 1
    if x.shape[2] + 2 * dilation < extent or x.shape[3] + 2 * dilation < extent:
        raise ShapeError(f"input {x.shape[2:]} smaller than kernel extent {extent}")


def _conv_matmul(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, dilation: int):
    """Pre-activation as an (N*Ho*Wo, C_out) matrix, plus the patch matrix."""
    cols = _im2col(x, stride, dilation)
    out = cols @ _weight_matrix(weight)
    out += bias
    return out, cols


def _from_rows(z: np.ndarray, n: int, ho: int, wo: int) -> np.ndarray:
    """(N*Ho*Wo, C) pixel rows -> contiguous NCHW."""
    return np.ascontiguousarray(z.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))


def _to_rows(g: np.ndarray) -> np.ndarray:
    """NCHW -> (N*H*W, C) pixel rows."""
    return np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, g.shape[1])


def _conv_grads(gm: np.ndarray, cols: np.ndarray, weight: np.ndarray, x_shape, stride: int, dilation: int):
    """Adjoints of ``_conv_matmul`` for a row-layout output gradient ``gm``."""
    gwm = gm.T @ cols  # (C_out, 9*C_in) in (ky, kx, c) order
    cout, cin = weight.shape[:2]
    gw = gwm.reshape(cout, KERNEL, KERNEL, cin).transpose(0, 3, 1, 2)
    gb = gm.sum(axis=0, dtype=np.float64).astype(np.float32)
    gx = _input_grad(gm, weight, x_shape, stride, dilation)
    return gx, np.ascontiguousarray(gw), gb


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    _check_conv(x.data, weight.data, stride, dilation)
    out, cols = _conv_matmul(x.data, weight.data, bias.data, stride, dilation)
    n, _, h, w = x.shape
    x_shape = x.shape

    def backward(g):
        gx, gw, gb = _conv_grads(_to_rows(g), cols, weight.data, x_shape, stride, dilation)
        return gx if x.requires_grad else None, gw, gb

    return Tensor._from_op(_from_rows(out, n, _out_size(h, stride), _out_size(w, stride)), (x, weight, bias), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    out = np.multiply(z, np.float32(0.5))
    np.tanh(out, out=out)
    out += np.float32(1.0)
    out *= np.float32(0.5)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return Tensor._from_op(s, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    neg = _negative(x.data)
    out = np.where(neg, x.data * np.float32(slope), x.data)

    def backward(g):
        return (np.where(neg, g * np.float32(slope), g),)

    return Tensor._from_op(out, (x,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data

    def backward(g):
        return g * b.data, g * a.data

    return Tensor._from_op(out, (a, b), backward)


def split_channels(x: Tensor, index: int) -> tuple[Tensor, Tensor]:
    """Split along C at ``index``; both halves backpropagate into ``x``."""
    c = x.shape[1]
    if not 0 < index < c:
        raise ShapeError(f"split index {index} outside (0, {c})")
    lo, hi = x.data[:, :index], x.data[:, index:]

    def back_lo(g):
        full = np.zeros_like(x.data)
        full[:, :index] = g
        return (full,)

    def back_hi(g):
        full = np.zeros_like(x.data)
        full[:, index:] = g
        return (full,)

    return Tensor._from_op(lo, (x,), back_lo), Tensor._from_op(hi, (x,), back_hi)


def gated_conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    gate_weight: Tensor | None = None,
    gate_bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    slope: float = 0.2,
) -> Tensor:
    """Fused ``leaky_relu(conv_f(x)) * sigmoid(conv_g(x))``.

    With ``gate_weight`` given, feature and gate come from two separate
    kernels (evaluated in one matmul). Without it, ``weight`` has
    ``2 * C_out`` filters and the first half is the feature branch.
    """
    two_branch = gate_weight is not None
    if two_branch:
        if gate_weight.shape != weight.shape:
            raise ShapeError(f"gate weight {gate_weight.shape} != feature weight {weight.shape}")
        w_all = np.concatenate([weight.data, gate_weight.data], axis=0)
        b_all = np.concatenate([bias.data, gate_bias.data], axis=0)
        params = (x, weight, bias, gate_weight, gate_bias)
    else:
        if weight.shape[0] % 2:
            raise ShapeError(f"shared gated conv needs an even filter count, got {weight.shape[0]}")
        w_all, b_all = weight.data, bias.data
        params = (x, weight, bias)
    _check_conv(x.data, w_all, stride, dilation)
    z, cols = _conv_matmul(x.data, w_all, b_all, stride, dilation)
    cout = w_all.shape[0] // 2
    zf, zg = z[:, :cout], z[:, cout:]
    neg = _negative(zf)
    feat = np.where(neg, zf * np.float32(slope), zf)
    gate = _sigmoid(zg)
    out = feat * gate
    n, _, h, w = x.shape
    x_shape = x.shape

    def backward(g):
        g = _to_rows(g)
        dz = np.empty_like(z)
        np.multiply(np.where(neg, np.float32(slope), np.float32(1.0)) * gate, g, out=dz[:, :cout])
        np.multiply(out * (1.0 - gate), g, out=dz[:, cout:])
        gx, gw, gb = _conv_grads(dz, cols, w_all, x_shape, stride, dilation)
        gx = gx if x.requires_grad else None
        if two_branch:
            return gx, np.ascontiguousarray(gw[:cout]), gb[:cout], np.ascontiguousarray(gw[cout:]), gb[cout:]
        return gx, gw, gb

    return Tensor._from_op(_from_rows(out, n, _out_size(h, stride), _out_size(w, stride)), params, backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._from_op(out, (x,), backward)


def dice_loss(pred: Tensor, target, weight=None, eps: float = 1.0) -> Tensor:
    """Soft Dice loss pooled over every weighted pixel in the batch.

    ``1 - (2 sum(w p t) + eps) / (sum(w p) + sum(w t) + eps)``. Sums are
    reduced in float64.
    """
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float32)
    if weight is None:
        w = np.ones_like(t)
    else:
        w = np.asarray(weight.data if isinstance(weight, Tensor) else weight, dtype=np.float32)
    if pred.shape != t.shape or pred.shape != w.shape:
        raise ShapeError(f"dice_loss shapes differ: pred {pred.shape}, target {t.shape}, weight {w.shape}")
    p = pred.data.astype(np.float64)
    wt = (w * t).astype(np.float64)
    inter = float((p * wt).sum())
    denom = float((w * p).sum() + wt.sum()) + eps
    numer = 2.0 * inter + eps
    loss = 1.0 - numer / denom

    def backward(g):
        # d/dp of -(numer/denom) = -(2 w t denom - numer w) / denom^2
        scale = float(np.asarray(g).reshape(-1)[0])
        grad = -(2.0 * wt * denom - numer * w) / (denom * denom)
        return ((scale * grad).astype(np.float32),)

    # the scalar stays float64 so finite differences on the loss are not swamped by rounding
    return Tensor._from_op(np.array(loss), (pred,), backward, dtype=np.float64)
