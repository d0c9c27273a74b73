import time

import numpy as np
import pytest

from fsreg import ssm, tensor as T
from fsreg.ssm import SsmParams, init_ssm, naive_scan_oracle, scan_core, selective_scan
from fsreg.tensor import Tensor, backward, finite_diff_check


def _params(seed, channels=4, state_dim=3, live_output=True):
    p = init_ssm(np.random.default_rng(seed), channels, state_dim)
    if live_output:
        rng = np.random.default_rng(seed + 1)
        p.w_c.data = rng.normal(0.0, channels**-0.5, p.w_c.shape)
        p.d_skip.data = rng.normal(0.0, 0.1, p.d_skip.shape)
    return p


def test_degenerate_prefix_sum():
    # A = 0 (forced), delta = 1, B = C = 1, skip-free: y becomes cumsum(x)
    L, C, S = 16, 3, 1
    rng = np.random.default_rng(0)
    u = rng.normal(size=(L, C))
    y, h = scan_core(
        u,
        np.ones((L, C)),
        np.zeros((C, S)),
        np.ones((L, S)),
        np.ones((L, S)),
        np.zeros((C, S)),
    )
    assert np.allclose(y.data, np.cumsum(u, axis=0), atol=1e-12)
    assert np.allclose(h.data[:, 0], u.sum(axis=0), atol=1e-12)


def test_single_step_unroll():
    p = _params(3)
    x = np.random.default_rng(4).normal(size=(1, 4))
    y, h = selective_scan(Tensor(x), p)
    delta = np.logaddexp(0, x[0] @ p.w_delta.data + p.b_delta.data)
    B = x[0] @ p.w_b.data
    Cv = x[0] @ p.w_c.data
    h_want = (delta * x[0])[:, None] * B[None, :]  # h0 = 0 kills the decay term
    y_want = h_want @ Cv + p.d_skip.data * x[0]
    assert np.allclose(h.data, h_want, atol=1e-12)
    assert np.allclose(y.data[0], y_want, atol=1e-12)


@pytest.mark.parametrize("seed", range(25))
def test_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 40))
    C = int(rng.integers(1, 8))
    S = int(rng.integers(1, 6))
    p = _params(seed + 100, C, S)
    x = rng.normal(size=(L, C))
    h0 = rng.normal(size=(C, S))
    y, h = selective_scan(Tensor(x), p, Tensor(h0))
    y_ref, h_ref = naive_scan_oracle(x, p, h0)
    assert np.max(np.abs(y.data - y_ref)) <= 1e-10
    assert np.max(np.abs(h.data - h_ref)) <= 1e-10


def test_causality_bit_exact():
    p = _params(7)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(20, 4))
    y1, _ = selective_scan(Tensor(x), p)
    x2 = x.copy()
    x2[12:] += rng.normal(size=(8, 4))
    y2, _ = selective_scan(Tensor(x2), p)
    assert np.array_equal(y1.data[:12], y2.data[:12])
    assert not np.array_equal(y1.data[12:], y2.data[12:])


def test_state_decays_with_zero_input():
    p = _params(9)
    h0 = np.random.default_rng(10).normal(size=(4, 3))
    norms = []
    for L in range(1, 12):
        _, h = selective_scan(Tensor(np.zeros((L, 4))), p, Tensor(h0))
        norms.append(np.linalg.norm(h.data))
    assert np.linalg.norm(h0) >= norms[0]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_scan_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    L, C, S = 9, 3, 2
    p = _params(12, C, S)
    x0 = rng.normal(size=(L, C))
    h0 = rng.normal(size=(C, S))

    def wrt_x(t):
        y, h = selective_scan(t, p, Tensor(h0))
        return T.reduce_sum(y * y) + T.reduce_sum(h * h)

    assert finite_diff_check(wrt_x, Tensor(x0)) <= 1e-4

    for name, tens in p.tensors().items():
        def wrt_param(t, _name=name):
            q = SsmParams(**{k: (t if k == _name else v.detach()) for k, v in p.tensors().items()})
            y, h = selective_scan(Tensor(x0), q, Tensor(h0))
            return T.reduce_sum(y * y) + T.reduce_sum(h * h)

        assert finite_diff_check(wrt_param, tens) <= 1e-4, name


def test_grad_flows_through_carry():
    p = _params(21)
    x = Tensor(np.random.default_rng(22).normal(size=(6, 4)), requires_grad=True)
    _, h = selective_scan(x[:3], p)
    y, _ = selective_scan(x[3:], p, h)
    table = backward(T.reduce_sum(y * y))
    g = table[x.tid]
    assert np.any(g[:3] != 0.0)


def test_nonfinite_state_names_step():
    L, C, S = 5, 2, 1
    u = np.zeros((L, C))
    u[3] = 1e308
    with pytest.raises(ssm.ScanNumericalError, match="step 3"):
        scan_core(
            u, np.ones((L, C)), np.zeros((C, S)),
            np.full((L, S), 1e40), np.ones((L, S)), np.zeros((C, S)),
        )


@pytest.mark.slow
def test_linear_time_scaling():
    p = _params(30, 8, 4)

    def best_time(L):
        x = Tensor(np.random.default_rng(0).normal(size=(L, 8)))
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            with T.no_grad():
                selective_scan(x, p)
            best = min(best, time.perf_counter() - t0)
        return best

    t1, t2 = best_time(1024), best_time(2048)
    assert t2 / t1 <= 2.5
