"""Central finite-difference gradient checks."""
import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(fn, inputs, index, eps=1e-6, coords=None):
    """Central differences of scalar fn(*inputs) w.r.t. inputs[index].

    ``coords`` restricts the probe to a list of flat indices; other entries
    of the returned array are nan.
    """
    x = inputs[index]
    flat = x.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    todo = range(flat.size) if coords is None else coords
    for i in todo:
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn(*inputs).data)
        flat[i] = orig - eps
        down = float(fn(*inputs).data)
        flat[i] = orig
        grad[i] = (up - down) / (2 * eps)
    return grad.reshape(x.shape)


def analytic_grads(fn, inputs):
    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = fn(*inputs)
    tape.backward(loss)
    return [None if t.grad is None else np.array(t.grad, dtype=np.float64) for t in inputs]


def relative_error(a, b):
    """max |a - b| / max(|a|, |b|, tiny), elementwise, reduced by max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / scale))


def check_gradients(fn, inputs, eps=1e-6, coords=None, rng=None):
    """Compare analytic and numerical gradients of a scalar function.

    Returns the worst relative error over all inputs with requires_grad.
    If ``coords`` is an int, that many random flat coordinates per input
    are probed (seeded by ``rng``).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    analytic = analytic_grads(fn, inputs)
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        probe = None
        if isinstance(coords, int):
            probe = rng.choice(t.size, size=min(coords, t.size), replace=False).tolist()
        elif coords is not None:
            probe = coords
        num = numerical_grad(fn, inputs, i, eps=eps, coords=probe)
        got = np.zeros(t.shape) if analytic[i] is None else analytic[i]
        mask = ~np.isnan(num)
        worst = max(worst, relative_error(got[mask], num[mask]))
    return worst


def random_tensor(rng, shape, dtype=np.float64, scale=1.0, requires_grad=True):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad, dtype=dtype)
