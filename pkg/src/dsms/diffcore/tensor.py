"""Dense tensor with reverse-mode differentiation recorded on an explicit tape."""
from __future__ import annotations

import threading

import numpy as np

DEFAULT_DTYPE = np.float32

_local = threading.local()


class TapeError(RuntimeError):
    pass


def _as_float_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return np.asarray(arr, dtype=dtype)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """A float32/float64 array plus an optional gradient.

    Tensors produced by an op while a :class:`Tape` is active (and with at
    least one input requiring grad) are recorded on that tape.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # operators delegate to ops; imported lazily to avoid a cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable ops.

    Use as a context manager; ops executed inside record onto it. A tape
    supports a single :meth:`backward` call until :meth:`reset`.
    Tapes are thread-local, so separate threads can record concurrently.
    """

    def __init__(self):
        self.nodes = []
        self.used = False

    def __enter__(self):
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out, inputs, vjp):
        if self.used:
            raise TapeError("tape already consumed by backward(); call reset() first")
        self.nodes.append(_Node(out, inputs, vjp))

    def reset(self):
        self.nodes = []
        self.used = False

    def backward(self, loss, grad=None):
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every recorded leaf."""
        if self.used:
            raise TapeError("backward() called twice on the same tape")
        if not isinstance(loss, Tensor):
            raise TypeError("loss must be a Tensor")
        if grad is None:
            if loss.data.size != 1:
                raise ValueError(f"loss must be scalar, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        self.used = True

        producers = {id(node.out) for node in self.nodes}
        grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
        seen = set()
        for node in reversed(self.nodes):
            key = id(node.out)
            assert key not in seen, "tape contains a cycle"
            seen.add(key)
            g = grads.pop(key, None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise AssertionError(
                        f"gradient shape {ig.shape} does not match input shape {inp.shape}"
                    )
                k = id(inp)
                if k in producers:
                    prev = grads.get(k)
                    grads[k] = ig if prev is None else prev + ig
                else:
                    inp.grad = ig.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + ig
        if id(loss) not in producers and loss.requires_grad:
            loss.grad = grads.get(id(loss)) if loss.grad is None else loss.grad + grads[id(loss)]


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss, tape):
    tape.backward(loss)


def make(data, inputs, vjp):
    """Wrap an op result; record it on the active tape if any input needs grad."""
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out
