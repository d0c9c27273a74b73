"""Selective state-space scan kernel.

Recurrence, per token t over a length-L stream of C-channel tokens with
state dimension S:

    h_t = exp(delta_t * A) . h_{t-1} + (delta_t * x_t) outer B_t
    y_t = h_t @ C_t + d_skip * x_t

A = -exp(a_log) is strictly negative so exp(delta*A) in (0,1) and the state
decays. delta is per-token per-channel through softplus; B_t and C_t are
per-token projections of the input shared across channels. The scan is
deliberately sequential (a Python loop over t); the per-token work is
vectorized and the backward pass is a hand-derived adjoint recurrence,
registered as one fused tape op. ``naive_scan_oracle`` is a separate,
transcription-style implementation used to cross-check the kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

# Carried scan state between MLayer iterations: an h matrix of shape (C, S).
ScanState = Tensor


class ScanNumericalError(FloatingPointError):
    """The recurrence produced a non-finite state; message names the step."""


@dataclass
class SsmParams:
    a_log: Tensor  # (C, S); A = -exp(a_log)
    w_delta: Tensor  # (C, C)
    b_delta: Tensor  # (C,)
    w_b: Tensor  # (C, S)
    w_c: Tensor  # (C, S)
    d_skip: Tensor  # (C,)

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]

    def tensors(self) -> dict:
        return {
            "a_log": self.a_log,
            "w_delta": self.w_delta,
            "b_delta": self.b_delta,
            "w_b": self.w_b,
            "w_c": self.w_c,
            "d_skip": self.d_skip,
        }


def init_ssm(rng: np.random.Generator, channels: int, state_dim: int) -> SsmParams:
    """Fresh kernel parameters.

    The output projection w_c and the skip d_skip start at zero so a freshly
    initialized scan contributes nothing (identity-at-init for the blocks
    built on top). delta bias is set so softplus(b_delta) lands in
    [0.01, 0.1].
    """
    a_log = np.log(np.tile(np.arange(1.0, state_dim + 1.0), (channels, 1)))
    dt = np.exp(rng.uniform(np.log(0.01), np.log(0.1), size=channels))
    b_delta = np.log(np.expm1(dt))
    return SsmParams(
        a_log=Tensor(a_log, requires_grad=True),
        w_delta=Tensor(rng.normal(0.0, channels**-0.5, (channels, channels)), requires_grad=True),
        b_delta=Tensor(b_delta, requires_grad=True),
        w_b=Tensor(rng.normal(0.0, channels**-0.5, (channels, state_dim)), requires_grad=True),
        w_c=Tensor(np.zeros((channels, state_dim)), requires_grad=True),
        d_skip=Tensor(np.zeros(channels), requires_grad=True),
    )


def _forward_loop(u, delta, A, B, h0):
    """Run the recurrence; returns stacked states hs (L, C, S)."""
    L = u.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):  # finiteness checked below
        dA = np.exp(delta[:, :, None] * A[None, :, :])
        dBu = (delta * u)[:, :, None] * B[:, None, :]
        hs = np.empty_like(dBu)
        h = h0
        for t in range(L):
            h = dA[t] * h + dBu[t]
            hs[t] = h
    if not np.all(np.isfinite(hs)):
        bad = int(np.argmin(np.isfinite(hs).all(axis=(1, 2))))
        raise ScanNumericalError(f"non-finite scan state at step {bad}")
    return hs, dA


def scan_core(u, delta, A, B, Cm, h0) -> tuple[Tensor, Tensor]:
    """Fused scan op on raw recurrence inputs.

    u, delta: (L, C); A: (C, S); B, Cm: (L, S); h0: (C, S).
    Returns y (L, C) with y_t = h_t @ C_t (no skip term) and h_L (C, S).
    """
    u, delta, A, B, Cm, h0 = map(T.as_tensor, (u, delta, A, B, Cm, h0))
    ud, dd, Ad, Bd, Cd, h0d = (x.data for x in (u, delta, A, B, Cm, h0))
    hs, dA = _forward_loop(ud, dd, Ad, Bd, h0d)
    y = np.einsum("lcs,ls->lc", hs, Cd)
    L = ud.shape[0]

    def bwd(gs):
        gy, ghL = gs
        if gy is None:
            gy = np.zeros_like(y)
        if ghL is None:
            ghL = np.zeros_like(h0d)
        # d y_t / d h_t = C_t; then h_t feeds h_{t+1} through dA_{t+1}
        gyC = gy[:, :, None] * Cd[:, None, :]
        hbs = np.empty_like(hs)
        hb = ghL + gyC[L - 1]
        hbs[L - 1] = hb
        for t in range(L - 2, -1, -1):
            hb = gyC[t] + dA[t + 1] * hb
            hbs[t] = hb
        hprev = np.concatenate([h0d[None], hs[:-1]], axis=0)
        gdA = hbs * hprev
        gA = np.einsum("lcs,lc->cs", gdA * dA, dd)
        gdelta = np.einsum("lcs,cs->lc", gdA * dA, Ad)
        du = dd * ud
        gB = np.einsum("lcs,lc->ls", hbs, du)
        g_du = np.einsum("lcs,ls->lc", hbs, Bd)
        gdelta = gdelta + g_du * ud
        gu = g_du * dd
        gCm = np.einsum("lc,lcs->ls", gy, hs)
        gh0 = dA[0] * hbs[0]
        return gu, gdelta, gA, gB, gCm, gh0

    y_t, h_t = T.custom_op("selective_scan", [u, delta, A, B, Cm, h0], [y, hs[-1]], bwd)
    return y_t, h_t


def selective_scan(x: Tensor, params: SsmParams, h0: ScanState | None = None):
    """Full selective scan of a (L, C) token stream; returns (y, h_last)."""
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.channels:
        raise T.ShapeError(
            f"selective_scan: expected (L, {params.channels}) input, got {x.shape}"
        )
    if h0 is None:
        h0 = Tensor(np.zeros((params.channels, params.state_dim)))
    delta = T.softplus(x @ params.w_delta + params.b_delta)
    B = x @ params.w_b
    Cm = x @ params.w_c
    A = -T.exp(params.a_log)
    y_core, h_last = scan_core(x, delta, A, B, Cm, h0)
    y = y_core + params.d_skip * x
    return y, h_last


def naive_scan_oracle(x, params: SsmParams, h0=None):
    """Independent per-step transcription of the recurrence (numpy only)."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    L, C = xd.shape
    S = params.state_dim
    h = np.zeros((C, S)) if h0 is None else np.array(
        h0.data if isinstance(h0, Tensor) else h0, dtype=np.float64
    )
    A = -np.exp(params.a_log.data)
    d = params.d_skip.data
    y = np.zeros((L, C))
    for t in range(L):
        x_t = xd[t]
        delta_t = np.logaddexp(0.0, x_t @ params.w_delta.data + params.b_delta.data)
        B_t = x_t @ params.w_b.data
        C_t = x_t @ params.w_c.data
        h = np.exp(delta_t[:, None] * A) * h + (delta_t * x_t)[:, None] * B_t[None, :]
        y[t] = h @ C_t + d * x_t
    return y, h
