"""Finite-difference verification of analytic gradients.

Runs a float64 shadow of the graph under test: callers build their inputs
as float64 tensors so central differences at h=1e-3 resolve well below
the acceptance tolerances (1e-4 per operation, 1e-3 end to end).

The error measure is elementwise |analytic - numeric| / max(1, |analytic|,
|numeric|), reported as the maximum over all checked elements.
"""

import numpy as np

from .tensor import Tensor, no_grad


def fd_grad(fn, tensors, index, h=1e-3):
    """Central-difference gradient of scalar ``fn(*tensors)`` wrt one input."""
    target = tensors[index]
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(fn(*tensors).data)
            flat[j] = orig - h
            fm = float(fn(*tensors).data)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(analytic, numeric):
    """max |a - n| / max(1, |a|, |n|) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def gradcheck(fn, tensors, h=1e-3):
    """Worst relative error between backward() and central differences.

    ``fn`` must return a scalar Tensor and be deterministic in its inputs
    (stateful layers need fresh buffers per call). Inputs should be
    float64 with requires_grad on every tensor to check.
    """
    for t in tensors:
        t.zero_grad()
    out = fn(*tensors)
    out.backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        numeric = fd_grad(fn, tensors, i, h)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def make_tensor(rng, shape, scale=1.0, shift=0.0):
    """Float64 leaf tensor with entries from the project RNG."""
    n = int(np.prod(shape)) if shape else 1
    vals = rng.normal(n, mean=shift, std=scale).reshape(shape)
    return Tensor(vals.astype(np.float64), requires_grad=True)
