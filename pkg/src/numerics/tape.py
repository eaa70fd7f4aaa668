"""
Reverse-mode automatic differentiation on an append-only tape.

Every value is a float64 numpy array. Nodes are appended in evaluation
order, so input ids always precede the node that consumes them.
"""
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Set, Tuple, Union

import numpy as np

from src.exceptions import NonFiniteError, SecondOrderError, ShapeError, TapeError

if TYPE_CHECKING:
    from src.numerics.ops import Op

Operand = Union["Var", float, int]


@dataclass
class Node:
    """One recorded value: the op that produced it, its inputs and the result."""

    op: Optional["Op"]
    inputs: Tuple[int, ...]
    value: np.ndarray
    attrs: Dict[str, Any] = field(default_factory=dict)
    requires_grad: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.op is None


@dataclass(frozen=True)
class Var:
    """Handle to a node on a tape, with arithmetic sugar over the op set."""

    tape: "Tape"
    index: int

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.index]

    @property
    def value(self) -> np.ndarray:
        return self.node.value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.node.value.shape

    def __add__(self, other: Operand) -> "Var":
        from src.numerics import ops

        if isinstance(other, Var):
            return ops.add(self, other)
        return ops.add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Var":
        from src.numerics import ops

        if isinstance(other, Var):
            return ops.add(self, ops.scale(other, -1.0))
        return ops.add_const(self, -float(other))

    def __rsub__(self, other: Operand) -> "Var":
        from src.numerics import ops

        return ops.add_const(ops.scale(self, -1.0), float(other))

    def __neg__(self) -> "Var":
        from src.numerics import ops

        return ops.scale(self, -1.0)

    def __mul__(self, other: Operand) -> "Var":
        from src.numerics import ops

        if isinstance(other, Var):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Var":
        from src.numerics import ops

        return ops.scale(self, 1.0 / float(other))

    def __matmul__(self, other: "Var") -> "Var":
        from src.numerics import ops

        return ops.matmul(self, other)

    def __getitem__(self, key: Any) -> "Var":
        from src.numerics import ops

        return ops.slice_(self, key)


class Tape:
    """Append-only record of a computation."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value: Any, requires_grad: bool = True) -> Var:
        """
        Add an input value.

        Args:
            value: Array-like value, copied as float64
            requires_grad: Whether gradients flow to this leaf

        Returns:
            Var: Handle to the new leaf
        """
        array = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("leaf value contains NaN or Inf")
        return self._append(Node(op=None, inputs=(), value=array, requires_grad=requires_grad))

    def constant(self, value: Any) -> Var:
        """Add a leaf that never receives gradients."""
        return self.leaf(value, requires_grad=False)

    def record(self, op: "Op", inputs: Iterable[Var], **attrs: Any) -> Var:
        """
        Evaluate ``op`` on the inputs and append the result.

        Args:
            op: Operation to apply
            inputs: Input handles, all on this tape
            **attrs: Static attributes forwarded to the op

        Returns:
            Var: Handle to the result node
        """
        inputs = tuple(inputs)
        for var in inputs:
            self.check(var)
        values = [self.nodes[var.index].value for var in inputs]
        value = np.asarray(op.forward(*values, **attrs), dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"op '{op.name}' produced NaN or Inf")
        requires_grad = any(self.nodes[var.index].requires_grad for var in inputs)
        return self._append(
            Node(
                op=op,
                inputs=tuple(var.index for var in inputs),
                value=value,
                attrs=attrs,
                requires_grad=requires_grad,
            )
        )

    def check(self, var: Var) -> None:
        """Raise TapeError unless ``var`` refers to a node on this tape."""
        if not isinstance(var, Var) or var.tape is not self or not 0 <= var.index < len(self.nodes):
            raise TapeError(f"node {getattr(var, 'index', var)!r} is not on this tape")


def _scalar_output(tape: Tape, output: Var) -> None:
    tape.check(output)
    if output.value.size != 1:
        raise ShapeError(f"output must be scalar, got shape {output.shape}")


def backward(tape: Tape, output: Var, wrt: Iterable[Var]) -> Dict[Var, np.ndarray]:
    """
    Numeric reverse pass.

    Args:
        tape: Tape holding the computation
        output: Scalar node to differentiate
        wrt: Nodes whose gradients are requested

    Returns:
        Dict[Var, np.ndarray]: Gradient for each requested node (zeros when unreachable)
    """
    _scalar_output(tape, output)
    wanted = list(wrt)
    for var in wanted:
        tape.check(var)
    wanted_ids = {var.index for var in wanted}

    grads: Dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
    found: Dict[int, np.ndarray] = {}
    for i in range(output.index, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        if i in wanted_ids:
            found[i] = g
        node = tape.nodes[i]
        if node.op is None:
            continue
        needs = tuple(tape.nodes[j].requires_grad for j in node.inputs)
        if not any(needs):
            continue
        inputs = [tape.nodes[j].value for j in node.inputs]
        contributions = node.op.vjp(g, inputs, node.value, needs, **node.attrs)
        for j, need, contribution in zip(node.inputs, needs, contributions):
            if not need or contribution is None:
                continue
            # fan-out: contributions from every consumer add up
            grads[j] = grads[j] + contribution if j in grads else contribution

    return {var: found.get(var.index, np.zeros_like(var.value)) for var in wanted}


def _descendants(tape: Tape, start: int, stop: int) -> Set[int]:
    reached = {start}
    for i in range(start + 1, stop + 1):
        if any(j in reached for j in tape.nodes[i].inputs):
            reached.add(i)
    return reached


def _ancestors(tape: Tape, stop: int) -> Set[int]:
    reached = {stop}
    for i in range(stop, -1, -1):
        if i in reached:
            reached.update(tape.nodes[i].inputs)
    return reached


def gradient_node(tape: Tape, output: Var, wrt: Var) -> Var:
    """
    Build the gradient of ``output`` w.r.t. ``wrt`` as new tape nodes.

    The returned node can itself be differentiated, which is what the
    gradient penalty needs to reach the critic parameters exactly.

    Args:
        tape: Tape holding the computation
        output: Scalar node
        wrt: Node to differentiate against

    Returns:
        Var: Node holding d(output)/d(wrt)

    Raises:
        SecondOrderError: If an op on the path cannot build its adjoint on the tape
    """
    _scalar_output(tape, output)
    tape.check(wrt)
    stop = output.index
    path = _descendants(tape, wrt.index, stop) & _ancestors(tape, stop)
    for i in sorted(path - {wrt.index}):
        op = tape.nodes[i].op
        if op is None or not op.second_order:
            name = "leaf" if op is None else op.name
            raise SecondOrderError(f"op '{name}' has no second-order adjoint")

    from src.numerics import ops

    grads: Dict[int, Var] = {stop: tape.constant(np.ones_like(output.value))}
    for i in range(stop, wrt.index, -1):
        if i not in path:
            continue
        g = grads.pop(i, None)
        if g is None:
            continue
        node = tape.nodes[i]
        in_vars = tuple(Var(tape, j) for j in node.inputs)
        needs = tuple(j in path for j in node.inputs)
        contributions = node.op.vjp_graph(tape, g, in_vars, Var(tape, i), needs, **node.attrs)
        for j, need, contribution in zip(node.inputs, needs, contributions):
            if not need or contribution is None:
                continue
            grads[j] = ops.add(grads[j], contribution) if j in grads else contribution

    if wrt.index in grads:
        return grads[wrt.index]
    return tape.constant(np.zeros_like(wrt.value))
