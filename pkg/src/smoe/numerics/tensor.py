"""Dense float64 tensors and the gradient tape.

A Tensor wraps a row-major float64 ndarray. Operations (see ops.py) record
nodes on the currently active Tape; the tape is rebuilt on every forward
pass, so the recorded graph is exactly the subgraph that was computed.
backward() replays the node list in reverse; because nodes are appended in
execution order the list is already topologically sorted and each node is
visited exactly once.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, ShapeError

GradFn = Callable[[np.ndarray], "list[tuple[Tensor, np.ndarray]]"]


class Tensor:
    """Float64 array with optional gradient storage.

    `grad` stays None until backward() reaches this tensor; tensors off the
    loss path therefore end up with grad None, which the gradient-isolation
    tests rely on.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and min(arr.shape) <= 0:
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    __slots__ = ("output", "grad_fn")

    def __init__(self, output: Tensor, grad_fn: GradFn):
        self.output = output
        self.grad_fn = grad_fn


class Tape:
    """Ordered record of one forward pass, used as a context manager.

    Nodes are appended in execution order, so the list is a topological
    order of the computed subgraph by construction.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def record(self, output: Tensor, grad_fn: GradFn) -> None:
        self.nodes.append(TapeNode(output, grad_fn))

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(out: Tensor, grad_fn: GradFn) -> Tensor:
    """Attach a backward rule to `out` on the active tape, if any."""
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, grad_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. A node output
    has all its consumers later in the tape, so by the time the node is
    visited its gradient is complete. Nodes whose output never received a
    gradient are skipped, leaving off-path tensors with grad None.
    Gradients accumulate into pre-existing .grad buffers, which is what
    gradient accumulation across batches relies on.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        out_grad = grads.get(id(node.output))
        if out_grad is None:
            continue
        for tensor, grad in node.grad_fn(out_grad):
            if not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
                holders[key] = tensor
    for key, grad in grads.items():
        tensor = holders[key]
        if tensor.grad is None:
            tensor.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            tensor.grad = tensor.grad + grad


def parameters_zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()
