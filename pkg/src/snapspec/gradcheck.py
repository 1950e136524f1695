"""Central-difference gradient verification.

Compares reverse-mode gradients against symmetric finite differences with a
per-element step scaled by the element magnitude. Inputs must be float64;
in float32 the finite-difference quotient loses too many digits to make the
comparison meaningful.
"""

import numpy as np

from .rng import Xoshiro256
from .tensor import Tensor, no_grad


def grad_check(f, inputs, epsilon=1e-5, sample=None, seed=0):
    """Max relative error between analytic and numeric gradients.

    f: nullary callable rebuilding the scalar-valued graph from the current
       contents of `inputs` on every call.
    inputs: Tensor or list of Tensors whose gradients are checked.
    sample: optionally check only this many elements per tensor (chosen by a
       seeded permutation) instead of every element.

    Raises if f is not deterministic (two evals must agree bit for bit).
    """
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 tensors")
        t.requires_grad = True
        t.grad = None

    with no_grad():
        y0 = f().data.copy()
        y1 = f().data.copy()
    if not np.array_equal(y0, y1):
        raise RuntimeError("grad_check: function is not deterministic between evals")

    out = f()
    if out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar tensor")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    worst = 0.0
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        ana = analytic[ti].reshape(-1)
        n = flat.size
        if sample is not None and n > sample:
            idxs = Xoshiro256(seed).spawn(ti).permutation(n)[:sample]
        else:
            idxs = range(n)
        for i in idxs:
            v = flat[i]
            e = epsilon * max(1.0, abs(v))
            flat[i] = v + e
            with no_grad():
                fp = float(f().data)
            flat[i] = v - e
            with no_grad():
                fm = float(f().data)
            flat[i] = v
            num = (fp - fm) / (2.0 * e)
            rel = abs(ana[i] - num) / max(abs(ana[i]), abs(num), 1e-8)
            if rel > worst:
                worst = rel
    return worst
