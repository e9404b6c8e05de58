"""Gradient verification suite covering every differentiable operation.

Each check builds a scalar loss from 64-bit tensors and compares tape
gradients against central finite differences. Composite modules get a looser
threshold than primitive ops. Used by both the CLI and the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import FD_STEP, check_gradients, relative_error
from .losses import dice_loss, pce_loss, total_loss
from .network import DualAttention, NetworkConfig, SparseMambaBlock, SparseMambaNet
from .s6 import s6_gradcheck
from .spobe import LabelMap
from .tensor import Tensor

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float

    @property
    def passed(self):
        return self.error <= self.threshold


def _away_from_kinks(arr, margin=0.05):
    arr = arr.copy()
    arr[np.abs(arr) < margin] = margin
    return arr


def _check_module_gradients(module, x_shape, rng, run=None, input_range=(-1.0, 1.0)):
    """Compare tape and finite-difference gradients for input + all parameters.

    Parameters stay the live tensors of ``module`` (which must be built in
    float64); finite differences perturb their data buffers in place between
    evaluations.
    """
    params = [p for _, p in module.named_parameters()]

    if run is None:
        probe = Tensor(np.zeros(x_shape, dtype=np.float64))
        with T.no_grad():
            out_shape = module(probe).shape
        weight = rng.uniform(-1, 1, out_shape)

        def run(image):
            return T.sum_(T.mul(module(image), Tensor(weight, dtype=np.float64)))

    lo, hi = input_range
    x0 = rng.uniform(lo, hi, x_shape)

    x_t = Tensor(x0.copy(), requires_grad=True, dtype=np.float64)
    loss = run(x_t)
    loss.backward()
    analytic = [x_t.grad.copy()] + [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                                    for p in params]
    for p in params:
        p.zero_grad()

    def evaluate():
        return run(Tensor(x0, dtype=np.float64)).item()

    def numeric_gradient(buffer):
        g = np.zeros_like(buffer)
        flat = buffer.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            hi_v = evaluate()
            flat[i] = orig - FD_STEP
            lo_v = evaluate()
            flat[i] = orig
            gf[i] = (hi_v - lo_v) / (2 * FD_STEP)
        return g

    numeric = [numeric_gradient(x0)] + [numeric_gradient(p.data) for p in params]
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def smb_gradcheck(seed=0):
    """Finite-difference check of the full mixer block at (C=2, 4, 4)."""
    block = SparseMambaBlock(2, 2, np.random.default_rng(seed + 1), skip_step=2,
                             use_sparse=True, dtype=np.float64)
    return _check_module_gradients(block, (2, 4, 4), np.random.default_rng(seed))


def dual_attention_gradcheck(seed=0):
    """Finite-difference check of both attention branches at (C=2, 3, 3)."""
    module = DualAttention(2, np.random.default_rng(seed + 1), dtype=np.float64)
    # zero gains make the module the identity; nudge them so both branches
    # contribute to the loss
    module.gain_pos.data[:] = 0.3
    module.gain_chan.data[:] = -0.2
    return _check_module_gradients(module, (2, 3, 3), np.random.default_rng(seed))


def network_gradcheck(seed=0):
    """Finite-difference check of the whole network at micro scale (16x16)."""
    rng = np.random.default_rng(seed)
    config = NetworkConfig(num_classes=2, widths=(2, 2), input_size=(16, 16),
                           state_size=2, skip_step=2, use_sparse=True, dtype=np.float64)
    net = SparseMambaNet(config, np.random.default_rng(seed + 1))
    weight = rng.uniform(-1, 1, (2, 16, 16))

    def run(image):
        probs, _ = net.forward_with_features(image)
        return T.sum_(T.mul(probs, Tensor(weight, dtype=np.float64)))

    return _check_module_gradients(net, (1, 16, 16), rng, run=run, input_range=(0.0, 1.0))


def run_gradient_suite(full=True):
    """All gradient checks; returns a list of CheckResult."""
    rng = np.random.default_rng(0)
    results = []

    def add(name, build, arrays, tol=PRIMITIVE_TOL):
        results.append(CheckResult(name, check_gradients(build, arrays), tol))

    add("matmul", lambda a, b: T.sum_(T.matmul(a, b)),
        [rng.uniform(-1, 1, (4, 5)), rng.uniform(-1, 1, (5, 3))])
    add("conv2d", lambda x, k, b: T.sum_(T.conv2d(x, k, b, stride=1, padding=1)),
        [rng.uniform(-1, 1, (1, 4, 4)), rng.uniform(-1, 1, (2, 1, 2, 2)),
         rng.uniform(-1, 1, (2,))])
    add("conv2d_stride2", lambda x, k: T.sum_(T.conv2d(x, k, stride=2, padding=1)),
        [rng.uniform(-1, 1, (2, 5, 5)), rng.uniform(-1, 1, (2, 2, 3, 3))])
    add("conv2d_transposed", lambda x, k, b: T.sum_(T.conv2d(x, k, b, stride=2, transposed=True)),
        [rng.uniform(-1, 1, (2, 3, 3)), rng.uniform(-1, 1, (2, 3, 2, 2)),
         rng.uniform(-1, 1, (3,))])
    add("conv1d", lambda x, k, b: T.sum_(T.conv1d(x, k, b, padding=1)),
        [rng.uniform(-1, 1, (2, 6)), rng.uniform(-1, 1, (2, 2, 3)), rng.uniform(-1, 1, (2,))])

    mix = Tensor(rng.uniform(-1, 1, (3, 4)), dtype=np.float64)
    add("relu", lambda x: T.sum_(T.mul(T.relu(x), mix)),
        [_away_from_kinks(rng.uniform(-1, 1, (3, 4)))])
    add("sigmoid", lambda x: T.sum_(T.mul(T.sigmoid(x), mix)), [rng.uniform(-1, 1, (3, 4))])
    add("silu", lambda x: T.sum_(T.mul(T.silu(x), mix)), [rng.uniform(-1, 1, (3, 4))])
    add("softplus", lambda x: T.sum_(T.mul(T.softplus(x), mix)), [rng.uniform(-1, 1, (3, 4))])
    add("exp", lambda x: T.sum_(T.mul(T.exp(x), mix)), [rng.uniform(-1, 1, (3, 4))])
    add("log", lambda x: T.sum_(T.mul(T.log(x), mix)), [rng.uniform(0.2, 2.0, (3, 4))])
    add("softmax", lambda x: T.sum_(T.mul(T.softmax(x, axis=0), mix)),
        [rng.uniform(-1, 1, (3, 4))])

    results.append(CheckResult("s6_forward", s6_gradcheck(8, 2, 2, seed=0), PRIMITIVE_TOL))
    results.append(CheckResult("s6_forward_scalar", s6_gradcheck(1, 1, 1, seed=1), 1e-7))
    results.append(CheckResult("smb_forward", smb_gradcheck(seed=0), COMPOSITE_TOL))
    results.append(CheckResult("dual_attention", dual_attention_gradcheck(seed=0), COMPOSITE_TOL))

    labels = LabelMap(np.array([[0, 255], [1, 0]], dtype=np.uint8), 2)
    k, h, w = 2, 2, 2

    def simplex(x):
        return T.softmax(x, axis=0)

    add("dice_loss", lambda a, b: dice_loss(simplex(a), simplex(b)),
        [rng.uniform(-1, 1, (k, h, w)), rng.uniform(-1, 1, (k, h, w))])
    add("dice_loss_squared",
        lambda a, b: dice_loss(simplex(a), simplex(b), squared_denominator=True),
        [rng.uniform(-1, 1, (k, h, w)), rng.uniform(-1, 1, (k, h, w))])
    add("pce_loss", lambda a: pce_loss(simplex(a), labels), [rng.uniform(-1, 1, (k, h, w))])
    add("total_loss", lambda a, b: total_loss(simplex(a), simplex(b), labels, 0.5),
        [rng.uniform(-1, 1, (k, h, w)), rng.uniform(-1, 1, (k, h, w))])

    if full:
        results.append(CheckResult("micro_network", network_gradcheck(seed=0), COMPOSITE_TOL))
    return results
