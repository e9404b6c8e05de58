"""Selective state-space sequence kernel (S6).

Each channel carries an N-dimensional hidden state evolved by an
input-dependent causal recurrence:

    step      delta_t = softplus(x_t @ W_delta + b_delta)        (per channel)
    discrete  Abar_t  = exp(delta_t * A)          (zero-order hold, A < 0)
              xbar_t  = delta_t * B_t * x_t       (Euler rule for the input)
    state     h_t     = Abar_t * h_{t-1} + xbar_t
    output    y_t     = <C_t, h_t> + D * x_t

B_t and C_t are projected from x_t. The production kernel
(:func:`selective_scan`) runs the time loop once in the forward pass and
replays the exact adjoint recurrence in a hand-written backward, recorded as
a single tape node; :func:`selective_scan_reference` is a deliberately plain
per-element reimplementation used to cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import check_gradients
from .tensor import Tensor, _make


@dataclass
class S6Params:
    """Parameter bundle for one S6 kernel over C channels and N states.

    ``a`` stays strictly negative so |exp(delta*a)| < 1 for positive step
    sizes; ``delta_bias`` is initialised so softplus lands in a small positive
    range at zero input.
    """

    a: Tensor            # (C, N), strictly negative
    skip: Tensor         # (C,) residual gain, the D path
    w_delta: Tensor      # (C, C)
    b_delta: Tensor      # (C,)
    w_b: Tensor          # (C, N)
    b_b: Tensor          # (N,)
    w_c: Tensor          # (C, N)
    b_c: Tensor          # (N,)

    @classmethod
    def create(cls, channels, state_size, rng, dtype=np.float32, delta_init=0.05):
        ramp = -np.arange(1, state_size + 1, dtype=dtype)
        a = np.tile(ramp, (channels, 1))
        scale = 1.0 / np.sqrt(channels)
        bias = np.log(np.expm1(delta_init))    # softplus(bias) == delta_init
        return cls(
            a=Tensor(a, requires_grad=True, dtype=dtype),
            skip=Tensor(np.ones(channels, dtype=dtype), requires_grad=True, dtype=dtype),
            w_delta=Tensor(rng.normal(0, scale, (channels, channels)).astype(dtype), requires_grad=True),
            b_delta=Tensor(np.full(channels, bias, dtype=dtype), requires_grad=True),
            w_b=Tensor(rng.normal(0, scale, (channels, state_size)).astype(dtype), requires_grad=True),
            b_b=Tensor(np.zeros(state_size, dtype=dtype), requires_grad=True),
            w_c=Tensor(rng.normal(0, scale, (channels, state_size)).astype(dtype), requires_grad=True),
            b_c=Tensor(np.zeros(state_size, dtype=dtype), requires_grad=True),
        )

    def tensors(self):
        return [self.a, self.skip, self.w_delta, self.b_delta,
                self.w_b, self.b_b, self.w_c, self.b_c]

    def named_parameters(self, prefix=""):
        for name in ("a", "skip", "w_delta", "b_delta", "w_b", "b_b", "w_c", "b_c"):
            yield f"{prefix}{name}", getattr(self, name)

    def validate(self):
        if np.any(self.a.data >= 0):
            raise ValueError("S6 state matrix must be strictly negative")
        for t in self.tensors():
            if not np.all(np.isfinite(t.data)):
                raise ValueError("S6 parameters contain non-finite values")

    def constrain(self):
        """Re-project the state matrix into the stable (negative) region.

        Called after optimizer steps so gradient updates cannot push ``a``
        across zero.
        """
        np.minimum(self.a.data, -1e-6, out=self.a.data)


def selective_scan(u, delta, a, b_seq, c_seq, skip):
    """Causal selective-scan; one fused tape node with a hand-written adjoint.

    Shapes: u, delta (L, C) or (G, L, C) for G independent lanes scanned in
    lockstep; b_seq, c_seq (L, N) / (G, L, N); a (C, N); skip (C,). Returns y
    shaped like u. The forward stores the state trajectory so the backward can
    replay the recurrence in reverse without recomputation.
    """
    for t_in in (u, delta, a, b_seq, c_seq, skip):
        if not np.all(np.isfinite(t_in.data)):
            raise ValueError("selective_scan: non-finite input values")
    batched = u.data.ndim == 3
    ud, dd, ad, bd, cd, sd = (x.data for x in (u, delta, a, b_seq, c_seq, skip))
    if not batched:
        ud, dd, bd, cd = ud[None], dd[None], bd[None], cd[None]
    lanes, length, channels = ud.shape
    n = ad.shape[1]

    abar = np.exp(dd[..., None] * ad)                       # (G, L, C, N)
    xbar = dd[..., None] * bd[:, :, None, :] * ud[..., None]
    h_all = np.empty((lanes, length, channels, n), dtype=ud.dtype)
    h = np.zeros((lanes, channels, n), dtype=ud.dtype)
    for t in range(length):
        h = abar[:, t] * h + xbar[:, t]
        h_all[:, t] = h
    y = np.einsum("glcn,gln->glc", h_all, cd, optimize=True) + sd * ud
    y_out = y if batched else y[0]

    def bw(g):
        if not batched:
            g = g[None]
        gu = sd * g
        gdelta = np.zeros_like(dd)
        ga = np.zeros_like(ad)
        gb = np.zeros_like(bd)
        gc = np.zeros_like(cd)
        gskip = (g * ud).sum(axis=(0, 1))
        gh = np.zeros((lanes, channels, n), dtype=ud.dtype)
        for t in range(length - 1, -1, -1):
            gh = gh + g[:, t, :, None] * cd[:, t, None, :]
            gc[:, t] = (h_all[:, t] * g[:, t, :, None]).sum(axis=1)
            h_prev = h_all[:, t - 1] if t > 0 else 0.0
            g_abar = gh * h_prev
            gdelta[:, t] += (g_abar * ad * abar[:, t]).sum(axis=2)
            ga += (g_abar * dd[:, t, :, None] * abar[:, t]).sum(axis=0)
            # xbar path: gh is d/d(xbar_t)
            gdelta[:, t] += (gh * bd[:, t, None, :]).sum(axis=2) * ud[:, t]
            gb[:, t] = (gh * dd[:, t, :, None] * ud[:, t, :, None]).sum(axis=1)
            gu[:, t] += (gh * bd[:, t, None, :]).sum(axis=2) * dd[:, t]
            gh = gh * abar[:, t]
        if u.tracked:
            u._accum(gu if batched else gu[0])
        if delta.tracked:
            delta._accum(gdelta if batched else gdelta[0])
        if a.tracked:
            a._accum(ga)
        if b_seq.tracked:
            b_seq._accum(gb if batched else gb[0])
        if c_seq.tracked:
            c_seq._accum(gc if batched else gc[0])
        if skip.tracked:
            skip._accum(gskip)

    return _make(y_out, (u, delta, a, b_seq, c_seq, skip), "selective_scan", bw)


def selective_scan_reference(u, delta, a, b_seq, c_seq, skip):
    """Straight-loop reimplementation on numpy arrays (no tape, no batching).

    Kept intentionally naive: scalar loops over time, channel and state.
    Returns (y, h_all) so stability bounds can inspect the state trajectory.
    """
    u, delta, a, b_seq, c_seq, skip = (np.asarray(x, dtype=np.float64)
                                       for x in (u, delta, a, b_seq, c_seq, skip))
    length, channels = u.shape
    n = a.shape[1]
    y = np.zeros((length, channels))
    h_all = np.zeros((length, channels, n))
    h = np.zeros((channels, n))
    for t in range(length):
        for c in range(channels):
            for k in range(n):
                abar = np.exp(delta[t, c] * a[c, k])
                xbar = delta[t, c] * b_seq[t, k] * u[t, c]
                h[c, k] = abar * h[c, k] + xbar
            acc = 0.0
            for k in range(n):
                acc += c_seq[t, k] * h[c, k]
            y[t, c] = acc + skip[c] * u[t, c]
        h_all[t] = h
    return y, h_all


def _project(seq2d, weight, bias, rows):
    out = T.matmul(seq2d, weight)
    return T.add(out, T.broadcast_to(bias, (rows, weight.shape[1])))


def s6_forward(seq, params):
    """Apply the S6 kernel to an (L, C) sequence tensor.

    Step sizes and the per-step state projections are derived from the input
    itself; the recurrence then runs through :func:`selective_scan`. A
    (G, L, C) tensor runs G lanes of the same kernel in lockstep.
    """
    if seq.data.ndim == 3:
        return s6_forward_grouped(seq, params)
    if seq.data.ndim != 2:
        raise ValueError(f"s6_forward expects an (L, C) sequence, got {seq.shape}")
    params.validate()
    length = seq.shape[0]
    delta = T.softplus(_project(seq, params.w_delta, params.b_delta, length))
    b_seq = _project(seq, params.w_b, params.b_b, length)
    c_seq = _project(seq, params.w_c, params.b_c, length)
    return selective_scan(seq, delta, params.a, b_seq, c_seq, params.skip)


def s6_forward_grouped(seqs, params):
    """S6 over (G, L, C) lanes sharing one parameter set (one fused scan)."""
    if seqs.data.ndim != 3:
        raise ValueError(f"s6_forward_grouped expects (G, L, C), got {seqs.shape}")
    params.validate()
    g, length, channels = seqs.shape
    flat = T.reshape(seqs, (g * length, channels))
    n = params.w_b.shape[1]
    delta = T.reshape(T.softplus(_project(flat, params.w_delta, params.b_delta, g * length)),
                      (g, length, channels))
    b_seq = T.reshape(_project(flat, params.w_b, params.b_b, g * length), (g, length, n))
    c_seq = T.reshape(_project(flat, params.w_c, params.b_c, g * length), (g, length, n))
    return selective_scan(seqs, delta, params.a, b_seq, c_seq, params.skip)


def s6_gradcheck(length, channels, state_size, seed=0):
    """Max relative error of the full S6 gradient against finite differences."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (length, channels))
    params = S6Params.create(channels, state_size, rng, dtype=np.float64)
    arrays = [x] + [p.data.copy() for p in params.tensors()]

    def build(xt, a, skip, w_delta, b_delta, w_b, b_b, w_c, b_c):
        p = S6Params(a=a, skip=skip, w_delta=w_delta, b_delta=b_delta,
                     w_b=w_b, b_b=b_b, w_c=w_c, b_c=b_c)
        return T.sum_(s6_forward(xt, p))

    return check_gradients(build, arrays)
