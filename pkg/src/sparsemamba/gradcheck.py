"""Finite-difference gradient verification.

The checker re-evaluates a forward function at perturbed inputs (central
differences, step 1e-4 in float64) and compares against the gradients the
tape produced. It never inspects the tape itself, so it stays an independent
oracle for every backward rule.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

FD_STEP = 1e-4


def finite_difference_gradients(fn, arrays, step=FD_STEP):
    """Central-difference gradients of ``fn`` w.r.t. each input array.

    ``fn`` maps float64 numpy arrays to a python float and must be free of
    side effects; each array element is perturbed by ``+-step`` in turn.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for base in arrays:
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn(*arrays)
            flat[i] = orig - step
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    """Max absolute deviation normalised by the numeric gradient's scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(numeric).max() if numeric.size else 0.0, 1.0)
    return float(np.abs(analytic - numeric).max() / denom) if numeric.size else 0.0


def check_gradients(build_loss, arrays, step=FD_STEP):
    """Compare tape gradients of ``build_loss`` against central differences.

    ``build_loss`` takes one Tensor per input array and returns a scalar
    Tensor. Returns the max relative error over all inputs.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def eval_fn(*arrs):
        with_np = [Tensor(a, dtype=np.float64) for a in arrs]
        return build_loss(*with_np).item()

    numeric = finite_difference_gradients(eval_fn, arrays, step=step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
