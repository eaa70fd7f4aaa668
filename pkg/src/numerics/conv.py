"""
Convolution and nearest-neighbour upsampling for NCHW tensors.

Only square 3x3 or 5x5 kernels with stride 1 or 2 and "same" padding
are supported. Both ops are first-order only.
"""
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.exceptions import ShapeError
from src.numerics.ops import Op
from src.numerics.tape import Var

SUPPORTED_KERNELS = (3, 5)
SUPPORTED_STRIDES = (1, 2)


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """
    Padding that yields ceil(size / stride) outputs.

    Args:
        size: Input extent along one axis
        kernel: Kernel extent
        stride: Stride

    Returns:
        Tuple[int, int, int]: (output size, pad before, pad after)
    """
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _columns(x: np.ndarray, kernel: int, stride: int) -> Tuple[np.ndarray, Tuple[int, int, int, int]]:
    _, _, height, width = x.shape
    out_h, top, bottom = same_padding(height, kernel, stride)
    out_w, left, right = same_padding(width, kernel, stride)
    padded = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    # (N, C, out_h, out_w, k, k)
    cols = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    return cols, (top, bottom, left, right)


class Conv2d(Op):
    name = "conv2d"

    def forward(self, x, w, b, stride):
        cols, _ = _columns(x, w.shape[-1], stride)
        out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2) + b[None, :, None, None]

    def vjp(self, g, xs, out, needs, stride):
        x, w, _ = xs
        kernel = w.shape[-1]
        cols, (top, bottom, left, right) = _columns(x, kernel, stride)
        gx = gw = gb = None
        if needs[1]:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if needs[2]:
            gb = g.sum(axis=(0, 2, 3))
        if needs[0]:
            # (N, out_h, out_w, C, k, k)
            gcols = np.tensordot(g, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            n, c, height, width = x.shape
            out_h, out_w = g.shape[2], g.shape[3]
            padded = np.zeros((n, c, height + top + bottom, width + left + right))
            for i in range(kernel):
                for j in range(kernel):
                    padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += gcols[
                        :, :, :, :, i, j
                    ]
            gx = padded[:, :, top : top + height, left : left + width]
        return (gx, gw, gb)


class Upsample2x(Op):
    name = "upsample2x"

    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(self, g, xs, out, needs):
        n, c, height, width = xs[0].shape
        return (g.reshape(n, c, height, 2, width, 2).sum(axis=(3, 5)),)


CONV2D = Conv2d()
UPSAMPLE2X = Upsample2x()


def conv2d(x: Var, w: Var, b: Var, stride: int = 1) -> Var:
    """
    Record a "same"-padded 2-D convolution.

    Args:
        x: Input of shape (N, C_in, H, W)
        w: Kernel of shape (C_out, C_in, k, k)
        b: Bias of shape (C_out,)
        stride: 1 or 2

    Returns:
        Var: Output of shape (N, C_out, ceil(H/stride), ceil(W/stride))
    """
    if len(x.shape) != 4 or len(w.shape) != 4:
        raise ShapeError("conv2d expects NCHW input and (C_out, C_in, k, k) kernel")
    c_out, c_in, kh, kw = w.shape
    if kh != kw or kh not in SUPPORTED_KERNELS:
        raise ShapeError(f"unsupported kernel {kh}x{kw}")
    if stride not in SUPPORTED_STRIDES:
        raise ShapeError(f"unsupported stride {stride}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"bias shape {b.shape} does not match {c_out} output channels")
    return x.tape.record(CONV2D, (x, w, b), stride=int(stride))


def upsample2x(x: Var) -> Var:
    """Nearest-neighbour 2x upsampling of an NCHW tensor."""
    if len(x.shape) != 4:
        raise ShapeError("upsample2x expects an NCHW tensor")
    return x.tape.record(UPSAMPLE2X, (x,))
