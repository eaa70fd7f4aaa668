"""
The closed op set recorded on a Tape.

Each op knows its forward value and a numeric vector-Jacobian product.
Ops flagged ``second_order`` can also build their adjoint out of tape ops,
which is what lets a gradient be differentiated again.
"""
from typing import Any, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax as _log_softmax

from src.exceptions import SecondOrderError, ShapeError
from src.numerics.tape import Tape, Var

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-12

Grads = Sequence[Optional[np.ndarray]]
GraphGrads = Sequence[Optional[Var]]


class Op:
    """Base class; subclasses override ``forward`` and ``vjp``."""

    name = "op"
    second_order = False

    def forward(self, *xs: np.ndarray, **attrs: Any) -> np.ndarray:
        raise NotImplementedError

    def vjp(
        self, g: np.ndarray, xs: Sequence[np.ndarray], out: np.ndarray, needs: Tuple[bool, ...], **attrs: Any
    ) -> Grads:
        raise NotImplementedError

    def vjp_graph(
        self, tape: Tape, g: Var, xs: Sequence[Var], out: Var, needs: Tuple[bool, ...], **attrs: Any
    ) -> GraphGrads:
        raise SecondOrderError(f"op '{self.name}' has no second-order adjoint")


class MatMul(Op):
    name = "matmul"
    second_order = True

    def forward(self, a, b):
        return a @ b

    def vjp(self, g, xs, out, needs):
        a, b = xs
        return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)

    def vjp_graph(self, tape, g, xs, out, needs):
        a, b = xs
        return (
            matmul(g, transpose(b)) if needs[0] else None,
            matmul(transpose(a), g) if needs[1] else None,
        )


class Add(Op):
    """Same-shape add, row-bias add on 2-D inputs, or scalar broadcast."""

    name = "add"
    second_order = True

    def forward(self, a, b, mode):
        return a + b

    def vjp(self, g, xs, out, needs, mode):
        b = xs[1]
        if mode == "same":
            gb = g
        elif mode == "bias":
            gb = g.sum(axis=0)
        else:
            gb = np.asarray(g.sum()).reshape(b.shape)
        return (g, gb)

    def vjp_graph(self, tape, g, xs, out, needs, mode):
        if mode == "same":
            gb = g
        elif mode == "bias":
            gb = sum_(g, axis=0)
        else:
            gb = sum_(g)
        return (g, gb)


class Scale(Op):
    name = "scale"
    second_order = True

    def forward(self, x, factor):
        return x * factor

    def vjp(self, g, xs, out, needs, factor):
        return (g * factor,)

    def vjp_graph(self, tape, g, xs, out, needs, factor):
        return (scale(g, factor),)


class AddConst(Op):
    name = "add_const"
    second_order = True

    def forward(self, x, c):
        return x + c

    def vjp(self, g, xs, out, needs, c):
        return (g,)

    def vjp_graph(self, tape, g, xs, out, needs, c):
        return (g,)


class MulConst(Op):
    name = "mul_const"
    second_order = True

    def forward(self, x, c):
        return x * c

    def vjp(self, g, xs, out, needs, c):
        return (g * c,)

    def vjp_graph(self, tape, g, xs, out, needs, c):
        return (mul_const(g, c),)


class Mul(Op):
    name = "mul"
    second_order = True

    def forward(self, a, b):
        return a * b

    def vjp(self, g, xs, out, needs):
        a, b = xs
        return (g * b if needs[0] else None, g * a if needs[1] else None)

    def vjp_graph(self, tape, g, xs, out, needs):
        a, b = xs
        return (mul(g, b) if needs[0] else None, mul(g, a) if needs[1] else None)


class Transpose(Op):
    name = "transpose"
    second_order = True

    def forward(self, x):
        return x.T.copy()

    def vjp(self, g, xs, out, needs):
        return (g.T,)

    def vjp_graph(self, tape, g, xs, out, needs):
        return (transpose(g),)


def _axis_key(ndim: int, axis: int, start: int, stop: int) -> Tuple[slice, ...]:
    key = [slice(None)] * ndim
    key[axis] = slice(start, stop)
    return tuple(key)


class Concat(Op):
    name = "concat"
    second_order = True

    def forward(self, *xs, axis):
        return np.concatenate(xs, axis=axis)

    def _keys(self, shapes, axis):
        keys, start = [], 0
        for shape in shapes:
            stop = start + shape[axis]
            keys.append(_axis_key(len(shape), axis, start, stop))
            start = stop
        return keys

    def vjp(self, g, xs, out, needs, axis):
        keys = self._keys([x.shape for x in xs], axis)
        return tuple(g[key] if need else None for key, need in zip(keys, needs))

    def vjp_graph(self, tape, g, xs, out, needs, axis):
        keys = self._keys([x.shape for x in xs], axis)
        return tuple(slice_(g, key) if need else None for key, need in zip(keys, needs))


class Slice(Op):
    """Basic (non-fancy) indexing."""

    name = "slice"
    second_order = True

    def forward(self, x, key):
        return np.array(x[key], dtype=np.float64)

    def vjp(self, g, xs, out, needs, key):
        result = np.zeros_like(xs[0])
        result[key] = g
        return (result,)

    def vjp_graph(self, tape, g, xs, out, needs, key):
        return (pad(g, key, xs[0].shape),)


class Pad(Op):
    """Place a value at ``key`` inside a zero array of ``shape``."""

    name = "pad"
    second_order = True

    def forward(self, x, key, shape):
        result = np.zeros(shape)
        result[key] = x
        return result

    def vjp(self, g, xs, out, needs, key, shape):
        return (np.array(g[key]),)

    def vjp_graph(self, tape, g, xs, out, needs, key, shape):
        return (slice_(g, key),)


class LeakyRelu(Op):
    """Slope fixed at 0.2; second derivative taken as zero everywhere."""

    name = "leaky_relu"
    second_order = True

    def forward(self, x):
        return np.where(x > 0, x, LEAKY_SLOPE * x)

    def vjp(self, g, xs, out, needs):
        return (g * np.where(xs[0] > 0, 1.0, LEAKY_SLOPE),)

    def vjp_graph(self, tape, g, xs, out, needs):
        mask = np.where(xs[0].value > 0, 1.0, LEAKY_SLOPE)
        return (mul_const(g, mask),)


class Tanh(Op):
    name = "tanh"
    second_order = True

    def forward(self, x):
        return np.tanh(x)

    def vjp(self, g, xs, out, needs):
        return (g * (1.0 - out**2),)

    def vjp_graph(self, tape, g, xs, out, needs):
        return (mul(g, add_const(scale(square(out), -1.0), 1.0)),)


class Sigmoid(Op):
    name = "sigmoid"
    second_order = True

    def forward(self, x):
        return expit(x)

    def vjp(self, g, xs, out, needs):
        return (g * out * (1.0 - out),)

    def vjp_graph(self, tape, g, xs, out, needs):
        return (mul(g, mul(out, add_const(scale(out, -1.0), 1.0))),)


class Square(Op):
    name = "square"
    second_order = True

    def forward(self, x):
        return x * x

    def vjp(self, g, xs, out, needs):
        return (2.0 * xs[0] * g,)

    def vjp_graph(self, tape, g, xs, out, needs):
        return (scale(mul(g, xs[0]), 2.0),)


class Sqrt(Op):
    name = "sqrt"
    second_order = True

    def forward(self, x):
        return np.sqrt(x)

    def vjp(self, g, xs, out, needs):
        return (0.5 * g / out,)

    def vjp_graph(self, tape, g, xs, out, needs):
        return (mul(g, scale(reciprocal(out), 0.5)),)


class Reciprocal(Op):
    name = "reciprocal"
    second_order = True

    def forward(self, x):
        return 1.0 / x

    def vjp(self, g, xs, out, needs):
        return (-g * out * out,)

    def vjp_graph(self, tape, g, xs, out, needs):
        return (mul(g, scale(square(out), -1.0)),)


class Sum(Op):
    name = "sum"
    second_order = True

    def forward(self, x, axis):
        return np.sum(x, axis=axis)

    def vjp(self, g, xs, out, needs, axis):
        shape = xs[0].shape
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    def vjp_graph(self, tape, g, xs, out, needs, axis):
        return (expand(g, axis, xs[0].shape),)


class Expand(Op):
    """Broadcast a reduced value back along ``axis`` (all axes when None)."""

    name = "expand"
    second_order = True

    def forward(self, x, axis, shape):
        base = x if axis is None else np.expand_dims(x, axis)
        return np.broadcast_to(base, shape).copy()

    def vjp(self, g, xs, out, needs, axis, shape):
        return (np.asarray(np.sum(g, axis=axis)).reshape(xs[0].shape),)

    def vjp_graph(self, tape, g, xs, out, needs, axis, shape):
        return (sum_(g, axis=axis),)


class Log(Op):
    name = "log"

    def forward(self, x):
        return np.log(x)

    def vjp(self, g, xs, out, needs):
        return (g / xs[0],)


class Exp(Op):
    name = "exp"

    def forward(self, x):
        return np.exp(x)

    def vjp(self, g, xs, out, needs):
        return (g * out,)


class Abs(Op):
    name = "abs"

    def forward(self, x):
        return np.abs(x)

    def vjp(self, g, xs, out, needs):
        return (g * np.sign(xs[0]),)


class Clip(Op):
    """Clamp with subgradient 1 inside the closed range and 0 outside."""

    name = "clip"

    def forward(self, x, lo, hi):
        return np.clip(x, lo, hi)

    def vjp(self, g, xs, out, needs, lo, hi):
        inside = (xs[0] >= lo) & (xs[0] <= hi)
        return (g * inside,)


class LogSigmoid(Op):
    name = "log_sigmoid"

    def forward(self, x):
        return -np.logaddexp(0.0, -x)

    def vjp(self, g, xs, out, needs):
        return (g * expit(-xs[0]),)


class LogSoftmax(Op):
    name = "log_softmax"

    def forward(self, x, axis):
        return _log_softmax(x, axis=axis)

    def vjp(self, g, xs, out, needs, axis):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)


class Reshape(Op):
    name = "reshape"

    def forward(self, x, shape):
        return x.reshape(shape)

    def vjp(self, g, xs, out, needs, shape):
        return (g.reshape(xs[0].shape),)


MATMUL = MatMul()
ADD = Add()
SCALE = Scale()
ADD_CONST = AddConst()
MUL_CONST = MulConst()
MUL = Mul()
TRANSPOSE = Transpose()
CONCAT = Concat()
SLICE = Slice()
PAD = Pad()
LEAKY_RELU = LeakyRelu()
TANH = Tanh()
SIGMOID = Sigmoid()
SQUARE = Square()
SQRT = Sqrt()
RECIPROCAL = Reciprocal()
SUM = Sum()
EXPAND = Expand()
LOG = Log()
EXP = Exp()
ABS = Abs()
CLIP = Clip()
LOG_SIGMOID = LogSigmoid()
LOG_SOFTMAX = LogSoftmax()
RESHAPE = Reshape()


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not agree")
    return a.tape.record(MATMUL, (a, b))


def add(a: Var, b: Var) -> Var:
    """Add two nodes; the smaller one may be a row bias or a scalar."""
    if a.shape == b.shape:
        return a.tape.record(ADD, (a, b), mode="same")
    if len(b.shape) == 1 and len(a.shape) == 2 and a.shape[1] == b.shape[0]:
        return a.tape.record(ADD, (a, b), mode="bias")
    if len(a.shape) == 1 and len(b.shape) == 2 and b.shape[1] == a.shape[0]:
        return a.tape.record(ADD, (b, a), mode="bias")
    if b.value.ndim == 0:
        return a.tape.record(ADD, (a, b), mode="scalar")
    if a.value.ndim == 0:
        return a.tape.record(ADD, (b, a), mode="scalar")
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a: Var, b: Var) -> Var:
    return add(a, scale(b, -1.0))


def scale(x: Var, factor: float) -> Var:
    return x.tape.record(SCALE, (x,), factor=float(factor))


def add_const(x: Var, c: float) -> Var:
    return x.tape.record(ADD_CONST, (x,), c=float(c))


def mul_const(x: Var, c: np.ndarray) -> Var:
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.shape and c.ndim != 0:
        raise ShapeError(f"constant of shape {c.shape} does not match {x.shape}")
    return x.tape.record(MUL_CONST, (x,), c=c)


def mul(a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product needs equal shapes, got {a.shape} and {b.shape}")
    return a.tape.record(MUL, (a, b))


def transpose(x: Var) -> Var:
    if x.value.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return x.tape.record(TRANSPOSE, (x,))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    if not xs:
        raise ShapeError("concat needs at least one input")
    ndim = xs[0].value.ndim
    axis = axis % ndim
    return xs[0].tape.record(CONCAT, tuple(xs), axis=axis)


def slice_(x: Var, key: Any) -> Var:
    if not isinstance(key, tuple):
        key = (key,)
    return x.tape.record(SLICE, (x,), key=key)


def pad(x: Var, key: Any, shape: Tuple[int, ...]) -> Var:
    return x.tape.record(PAD, (x,), key=key, shape=tuple(shape))


def leaky_relu(x: Var) -> Var:
    return x.tape.record(LEAKY_RELU, (x,))


def tanh(x: Var) -> Var:
    return x.tape.record(TANH, (x,))


def sigmoid(x: Var) -> Var:
    return x.tape.record(SIGMOID, (x,))


def square(x: Var) -> Var:
    return x.tape.record(SQUARE, (x,))


def sqrt(x: Var) -> Var:
    return x.tape.record(SQRT, (x,))


def reciprocal(x: Var) -> Var:
    return x.tape.record(RECIPROCAL, (x,))


def sum_(x: Var, axis: Optional[int] = None) -> Var:
    return x.tape.record(SUM, (x,), axis=axis)


def expand(x: Var, axis: Optional[int], shape: Tuple[int, ...]) -> Var:
    return x.tape.record(EXPAND, (x,), axis=axis, shape=tuple(shape))


def mean(x: Var, axis: Optional[int] = None) -> Var:
    count = x.value.size if axis is None else x.shape[axis]
    return scale(sum_(x, axis=axis), 1.0 / count)


def l2_norm(x: Var, axis: Optional[int] = None) -> Var:
    """Euclidean norm, smoothed by a tiny constant so its gradient exists at zero."""
    return sqrt(add_const(sum_(square(x), axis=axis), NORM_EPS))


def log(x: Var) -> Var:
    return x.tape.record(LOG, (x,))


def exp(x: Var) -> Var:
    return x.tape.record(EXP, (x,))


def abs_(x: Var) -> Var:
    return x.tape.record(ABS, (x,))


def clip(x: Var, lo: float, hi: float) -> Var:
    return x.tape.record(CLIP, (x,), lo=float(lo), hi=float(hi))


def log_sigmoid(x: Var) -> Var:
    return x.tape.record(LOG_SIGMOID, (x,))


def log_softmax(x: Var, axis: int = -1) -> Var:
    return x.tape.record(LOG_SOFTMAX, (x,), axis=axis)


def reshape(x: Var, shape: Tuple[int, ...]) -> Var:
    return x.tape.record(RESHAPE, (x,), shape=tuple(shape))
