"""
Parameter containers and layer builders shared by the generators, critics
and classifiers. Parameters are plain dicts of read-only float64 arrays.
"""
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from src.models import frozen
from src.numerics import Tape, Var
from src.numerics import ops

Params = Dict[str, np.ndarray]
Bound = Dict[str, Var]


def freeze_params(params: Mapping[str, np.ndarray]) -> Params:
    """Read-only copies, preserving insertion order."""
    return {name: frozen(value) for name, value in params.items()}


def bind(tape: Tape, params: Mapping[str, np.ndarray], trainable: bool = True) -> Bound:
    """
    Put parameters on a tape.

    Args:
        tape: Target tape
        params: Parameter arrays
        trainable: Leaves receive gradients when True, constants otherwise

    Returns:
        Bound: Name -> tape handle
    """
    if trainable:
        return {name: tape.leaf(value) for name, value in params.items()}
    return {name: tape.constant(value) for name, value in params.items()}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(rng: np.random.Generator, widths: Sequence[int], prefix: str) -> Params:
    """
    Dense layers ``{prefix}w{i}`` / ``{prefix}b{i}`` for consecutive widths.

    Args:
        rng: Random generator
        widths: Layer widths, input first
        prefix: Name prefix

    Returns:
        Params: Weights (Glorot uniform) and zero biases
    """
    params: Params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}w{i}"] = glorot(rng, fan_in, fan_out)
        params[f"{prefix}b{i}"] = np.zeros(fan_out)
    return params


def mlp_layers(params: Mapping[str, object], prefix: str) -> int:
    count = 0
    while f"{prefix}w{count}" in params:
        count += 1
    return count


def mlp_forward(bound: Bound, x: Var, prefix: str, output: str = "linear") -> Var:
    """
    Leaky-ReLU hidden layers followed by a linear, tanh or sigmoid output.

    Args:
        bound: Bound parameters
        x: Input batch (N, width)
        prefix: Name prefix used by ``init_mlp``
        output: Output activation

    Returns:
        Var: Output batch
    """
    layers = mlp_layers(bound, prefix)
    h = x
    for i in range(layers):
        h = ops.add(ops.matmul(h, bound[f"{prefix}w{i}"]), bound[f"{prefix}b{i}"])
        if i < layers - 1:
            h = ops.leaky_relu(h)
    if output == "tanh":
        return ops.tanh(h)
    if output == "sigmoid":
        return ops.sigmoid(h)
    return h


def mlp_numpy(params: Mapping[str, np.ndarray], x: np.ndarray, prefix: str, output: str = "linear") -> np.ndarray:
    """Evaluate ``mlp_forward`` without keeping a tape around."""
    tape = Tape()
    return mlp_forward(bind(tape, params, trainable=False), tape.constant(x), prefix, output).value


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int, prefix: str) -> Params:
    """
    Single LSTM cell with fused gate weights (input, forget, cell, output).

    The forget-gate bias starts at 1.
    """
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0
    return {
        f"{prefix}w": glorot(rng, input_dim + hidden, 4 * hidden),
        f"{prefix}b": bias,
    }


def lstm_step(bound: Bound, prefix: str, x: Var, h: Var, c: Var) -> Tuple[Var, Var]:
    """
    Advance one LSTM step.

    Args:
        bound: Bound parameters
        prefix: Cell name prefix
        x: Input (N, input_dim)
        h: Hidden state (N, H)
        c: Cell state (N, H)

    Returns:
        Tuple[Var, Var]: New hidden and cell states
    """
    hidden = h.shape[1]
    gates = ops.add(ops.matmul(ops.concat([x, h], axis=1), bound[f"{prefix}w"]), bound[f"{prefix}b"])
    i = ops.sigmoid(ops.slice_(gates, (slice(None), slice(0, hidden))))
    f = ops.sigmoid(ops.slice_(gates, (slice(None), slice(hidden, 2 * hidden))))
    g = ops.tanh(ops.slice_(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
    o = ops.sigmoid(ops.slice_(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
    c_next = ops.add(ops.mul(f, c), ops.mul(i, g))
    h_next = ops.mul(o, ops.tanh(c_next))
    return h_next, c_next


def lstm_run(bound: Bound, prefix: str, inputs: List[Var], h: Var, c: Var) -> Var:
    """Run a cell over a list of inputs and return the final hidden state."""
    for x in inputs:
        h, c = lstm_step(bound, prefix, x, h, c)
    return h


def gradients_by_name(grads: Mapping[Var, np.ndarray], bound: Bound) -> Params:
    """Re-key a ``backward`` result by parameter name."""
    return {name: grads[var] for name, var in bound.items()}


def prefixed(params: Mapping[str, np.ndarray], prefix: str) -> Params:
    return {f"{prefix}{name}": value for name, value in params.items()}


def unprefixed(params: Mapping[str, np.ndarray], prefix: str) -> Params:
    return {name[len(prefix):]: value for name, value in params.items() if name.startswith(prefix)}


