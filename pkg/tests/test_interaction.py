import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsreg import interaction as I, tensor as T
from fsreg.interaction import (
    LevelParams,
    aggregate_points,
    avg_pool2,
    build_pyramid,
    derive_modulation,
    focus,
    init_level,
    init_modulation,
    init_pyramid,
    interleave_hybrid,
    make_layout,
    mlayer_stack,
    reorganize,
    separate_hybrid,
    sweep,
    sweep_split,
)
from fsreg.ssm import naive_scan_oracle
from fsreg.tensor import Tensor, finite_diff_check


def _identity_pyramid(c):
    pp = init_pyramid(np.random.default_rng(0), c)
    for w in pp.mixers:
        w.data = np.eye(c)
    return pp


def _live_level(seed, c, s, t, hidden=8):
    """Level params with non-degenerate scan output and modulation."""
    lp = init_level(np.random.default_rng(seed), c, s, t, hidden)
    rng = np.random.default_rng(seed + 1)
    for p in (lp.focus_ssm, lp.sweep_ssm):
        p.w_c.data = rng.normal(0.0, c**-0.5, p.w_c.shape)
        p.d_skip.data = rng.normal(0.0, 0.1, p.d_skip.shape)
    lp.modulation.w2.data = rng.normal(0.0, 0.1, lp.modulation.w2.shape)
    lp.modulation.b2.data = rng.normal(0.0, 0.1, lp.modulation.b2.shape)
    lp.lambda_raw.data = rng.normal(0.0, 0.5, lp.lambda_raw.shape)
    return lp


# -- pyramid -----------------------------------------------------------------


def test_pyramid_shapes():
    f = Tensor(np.random.default_rng(0).normal(size=(24, 32, 4)))
    a, b, c = build_pyramid(f, _identity_pyramid(4))
    assert a.shape == (24, 32, 4)
    assert b.shape == (12, 16, 4)
    assert c.shape == (6, 8, 4)


def test_avg_pool_example():
    f = Tensor(np.array([[1.0, 3.0], [5.0, 7.0]]).reshape(2, 2, 1))
    out = avg_pool2(f)
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 4.0


# -- modulation ----------------------------------------------------------------


def test_modulation_zero_init_identity_factors():
    mp = init_modulation(np.random.default_rng(0), 4, 8)
    x1, y, x2 = derive_modulation(Tensor(np.random.default_rng(1).normal(size=(6, 4))), mp)
    assert np.array_equal(x1.data, np.ones(4))
    assert np.array_equal(x2.data, np.ones(4))
    assert np.array_equal(y.data, np.zeros(4))


def test_modulation_point_permutation_invariant():
    mp = init_modulation(np.random.default_rng(2), 4, 8)
    mp.w2.data = np.random.default_rng(3).normal(size=mp.w2.shape)
    pts = np.random.default_rng(4).normal(size=(9, 4))
    a = derive_modulation(Tensor(pts), mp)
    b = derive_modulation(Tensor(pts[::-1].copy()), mp)
    for u, v in zip(a, b):
        assert np.allclose(u.data, v.data, atol=1e-12)


def test_modulation_matches_manual_mlp():
    c, hdn = 3, 5
    mp = init_modulation(np.random.default_rng(5), c, hdn)
    rng = np.random.default_rng(6)
    mp.w2.data = rng.normal(size=mp.w2.shape)
    mp.b2.data = rng.normal(size=mp.b2.shape)
    pts = rng.normal(size=(7, c))
    x1, y, x2 = derive_modulation(Tensor(pts), mp)
    pooled = pts.mean(axis=0)
    out = np.maximum(pooled @ mp.w1.data + mp.b1.data, 0.0) @ mp.w2.data + mp.b2.data
    assert np.allclose(x1.data, 1.0 + out[:c], atol=1e-12)
    assert np.allclose(y.data, out[c : 2 * c], atol=1e-12)
    assert np.allclose(x2.data, 1.0 + out[2 * c :], atol=1e-12)


# -- focus ------------------------------------------------------------------------


def test_focus_identity_at_init():
    c = 4
    lp = init_level(np.random.default_rng(7), c, 3, t=4)
    layout = make_layout(4, 4, 2, n_points=5)
    f = Tensor(np.random.default_rng(8).normal(size=(4, 4, c)))
    pts = Tensor(np.random.default_rng(9).normal(size=(5, c)))
    out, _ = focus(f, pts, lp, layout)
    assert np.array_equal(out.data, f.data)


def test_focus_matches_composed_oracle():
    c, s = 4, 3
    layout = make_layout(4, 4, 2, n_points=5)
    lp = _live_level(10, c, s, layout.t)
    f = np.random.default_rng(11).normal(size=(4, 4, c))
    pts = np.random.default_rng(12).normal(size=(5, c))
    out, h_last = focus(Tensor(f), Tensor(pts), lp, layout)

    pooled = pts.mean(axis=0)
    mod = (
        np.maximum(pooled @ lp.modulation.w1.data + lp.modulation.b1.data, 0.0)
        @ lp.modulation.w2.data
        + lp.modulation.b2.data
    )
    x1, y, x2 = 1.0 + mod[:c], mod[c : 2 * c], 1.0 + mod[2 * c :]
    seq = f.reshape(16, c)[layout.perm]
    ys, h_ref = naive_scan_oracle(seq * x1 + y, lp.focus_ssm)
    want = (seq + x2 * ys)[layout.inv_perm].reshape(4, 4, c)
    assert np.max(np.abs(out.data - want)) <= 1e-10
    assert np.max(np.abs(h_last.data - h_ref)) <= 1e-10


# -- layout and sweep sub-ops --------------------------------------------------------


def test_split_counts():
    f = Tensor(np.random.default_rng(13).normal(size=(4, 4, 2)))
    streams = sweep_split(f, make_layout(4, 4, 2, n_points=3))
    assert len(streams) == 4
    assert all(s.shape == (4, 2) for s in streams)
    big = sweep_split(
        Tensor(np.zeros((24, 32, 2))), make_layout(24, 32, 8, n_points=3)
    )
    assert len(big) == 12
    assert all(s.shape == (64, 2) for s in big)


@pytest.mark.parametrize("o", [2, 4, 8])
def test_hybrid_length_formula(o):
    h, w, n = 24, 32, 7
    layout = make_layout(h, w, o, n)
    t = (h * w) // (o * o)
    assert layout.t == t
    assert layout.hybrid_len == h * w + t * n


def test_boundary_enumeration_28_tokens():
    layout = make_layout(4, 4, 2, n_points=3)
    assert layout.hybrid_len == 28
    img = layout.img_positions.tolist()
    pts = layout.pt_positions.tolist()
    assert img == [0, 1, 2, 3, 7, 8, 9, 10, 14, 15, 16, 17, 21, 22, 23, 24]
    assert pts == [4, 5, 6, 11, 12, 13, 18, 19, 20, 25, 26, 27]
    assert sorted(img + pts) == list(range(28))


@pytest.mark.parametrize("ordering", I.ORDERINGS)
@pytest.mark.parametrize("hw_o", [(24, 32, 8), (12, 16, 4), (6, 8, 2)])
def test_roundtrip_bit_exact(ordering, hw_o):
    h, w, o = hw_o
    n = 5
    layout = make_layout(h, w, o, n, ordering)
    rng = np.random.default_rng(14)
    f = Tensor(rng.normal(size=(h, w, 3)))
    pts = Tensor(rng.normal(size=(n, 3)))
    streams = sweep_split(f, layout)
    hybrid = interleave_hybrid(streams, pts, layout)
    assert hybrid.shape == (layout.hybrid_len, 3)
    streams2, instances = separate_hybrid(hybrid, layout)
    back = reorganize(streams2, layout)
    assert np.array_equal(back.data, f.data)
    for inst in instances:
        assert np.array_equal(inst.data, pts.data)


def test_interleave_single_stream_is_concat():
    layout = make_layout(2, 2, 2, n_points=3)
    f = Tensor(np.random.default_rng(15).normal(size=(2, 2, 2)))
    pts = Tensor(np.random.default_rng(16).normal(size=(3, 2)))
    hybrid = interleave_hybrid(sweep_split(f, layout), pts, layout)
    want = np.concatenate([f.data.reshape(4, 2), pts.data], axis=0)
    assert np.array_equal(hybrid.data, want)


# -- aggregation ---------------------------------------------------------------------


def test_aggregate_one_hot_and_uniform():
    inst = np.random.default_rng(17).normal(size=(4, 5, 3))
    lam = np.zeros(4)
    lam[2] = 40.0  # softmax ~ one-hot on instance 2
    got = aggregate_points(Tensor(inst), Tensor(lam))
    assert np.allclose(got.data, inst[2], atol=1e-12)
    uni = aggregate_points(Tensor(inst), Tensor(np.zeros(4)))
    assert np.allclose(uni.data, inst.mean(axis=0), atol=1e-12)


@given(st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_aggregate_is_convex_combination(seed):
    rng = np.random.default_rng(seed)
    inst = rng.normal(size=(3, 4, 2))
    lam = rng.normal(size=3)
    got = aggregate_points(Tensor(inst), Tensor(lam)).data
    assert np.all(got <= inst.max(axis=0) + 1e-12)
    assert np.all(got >= inst.min(axis=0) - 1e-12)
    # loop oracle
    w = np.exp(lam - lam.max())
    w /= w.sum()
    want = sum(w[u] * inst[u] for u in range(3))
    assert np.allclose(got, want, atol=1e-12)


# -- sweep --------------------------------------------------------------------------


def test_sweep_equals_explicit_composition():
    c, s = 4, 3
    layout = make_layout(4, 4, 2, n_points=5)
    lp = _live_level(18, c, s, layout.t)
    f = Tensor(np.random.default_rng(19).normal(size=(4, 4, c)))
    pts = Tensor(np.random.default_rng(20).normal(size=(5, c)))

    d_img, d_pt, h_last = sweep(f, pts, lp, layout)

    hybrid = interleave_hybrid(sweep_split(f, layout), pts, layout)
    ys, h_ref = I.selective_scan(hybrid, lp.sweep_ssm)
    streams, instances = separate_hybrid(ys, layout)
    want_img = reorganize(streams, layout)
    want_pt = aggregate_points(instances, lp.lambda_raw)
    assert np.array_equal(d_img.data, want_img.data)
    assert np.array_equal(d_pt.data, want_pt.data)
    assert np.array_equal(h_last.data, h_ref.data)


# -- mlayer --------------------------------------------------------------------------


def test_mlayer_depth_zero_is_identity():
    layout = make_layout(4, 4, 2, n_points=5)
    lp = _live_level(21, 4, 3, layout.t)
    f = Tensor(np.random.default_rng(22).normal(size=(4, 4, 4)))
    pts = Tensor(np.random.default_rng(23).normal(size=(5, 4)))
    fi, fp, carry = mlayer_stack(f, pts, 0, lp, layout)
    assert fi is f and fp is pts and carry is None


def test_mlayer_single_iteration_unrolls():
    layout = make_layout(4, 4, 2, n_points=5)
    lp = _live_level(24, 4, 3, layout.t)
    f = Tensor(np.random.default_rng(25).normal(size=(4, 4, 4)))
    pts = Tensor(np.random.default_rng(26).normal(size=(5, 4)))
    fi, fp, carry = mlayer_stack(f, pts, 1, lp, layout)

    f1, h = focus(f, pts, lp, layout)
    d_img, d_pt, h2 = sweep(f1, pts, lp, layout, h)
    assert np.array_equal(fi.data, f1.data + d_img.data)
    assert np.array_equal(fp.data, pts.data + d_pt.data)
    assert np.array_equal(carry.data, h2.data)


def test_mlayer_two_iterations_carry_state():
    layout = make_layout(4, 4, 2, n_points=5)
    lp = _live_level(27, 4, 3, layout.t)
    f = Tensor(np.random.default_rng(28).normal(size=(4, 4, 4)))
    pts = Tensor(np.random.default_rng(29).normal(size=(5, 4)))
    fi, fp, carry = mlayer_stack(f, pts, 2, lp, layout)

    ci, cp, cc = f, pts, None
    for _ in range(2):
        ci, h = focus(ci, cp, lp, layout, cc)
        d_img, d_pt, cc = sweep(ci, cp, lp, layout, h)
        ci = ci + d_img
        cp = cp + d_pt
    assert np.array_equal(fi.data, ci.data)
    assert np.array_equal(fp.data, cp.data)
    assert np.array_equal(carry.data, cc.data)

    # dropping the carry between iterations changes the result
    ni, np_, _ = mlayer_stack(f, pts, 1, lp, layout)
    ni2, _, _ = mlayer_stack(ni, np_, 1, lp, layout, carry=None)
    assert not np.array_equal(fi.data, ni2.data)


def test_identity_at_init_full_stack():
    layout = make_layout(8, 8, 4, n_points=6)
    lp = init_level(np.random.default_rng(30), 4, 3, layout.t)
    f = Tensor(np.random.default_rng(31).normal(size=(8, 8, 4)))
    pts = Tensor(np.random.default_rng(32).normal(size=(6, 4)))
    for depth in (1, 2, 3):
        fi, fp, _ = mlayer_stack(f, pts, depth, lp, layout)
        assert np.max(np.abs(fi.data - f.data)) == 0.0
        assert np.max(np.abs(fp.data - pts.data)) == 0.0


# -- ordering ablation hook -----------------------------------------------------------


def test_orderings_differ_on_generic_input():
    outs = []
    for ordering in I.ORDERINGS:
        layout = make_layout(4, 4, 2, n_points=5, ordering=ordering)
        lp = _live_level(33, 4, 3, layout.t)
        f = Tensor(np.random.default_rng(34).normal(size=(4, 4, 4)))
        pts = Tensor(np.random.default_rng(35).normal(size=(5, 4)))
        fi, fp, _ = mlayer_stack(f, pts, 1, lp, layout)
        outs.append((fi.data, fp.data))
    assert not np.allclose(outs[0][0], outs[1][0])
    assert not np.allclose(outs[0][0], outs[2][0])


def test_orderings_agree_on_constant_image():
    # A constant image makes the hybrid stream identical across orderings, so
    # the point branch matches exactly and the image branch carries the same
    # multiset of token values (slots land on different tiles).
    c = 4
    f = Tensor(np.full((4, 4, c), 0.7))
    pts = Tensor(np.random.default_rng(36).normal(size=(5, c)))
    ref_hybrid = None
    ref_pt = None
    ref_sorted_img = None
    for ordering in I.ORDERINGS:
        layout = make_layout(4, 4, 2, n_points=5, ordering=ordering)
        lp = _live_level(37, c, 3, layout.t)
        hybrid = interleave_hybrid(sweep_split(f, layout), pts, layout)
        d_img, d_pt, _ = sweep(f, pts, lp, layout)
        img_sorted = np.sort(d_img.data.reshape(-1, c), axis=0)
        if ref_hybrid is None:
            ref_hybrid, ref_pt, ref_sorted_img = hybrid.data, d_pt.data, img_sorted
        else:
            assert np.array_equal(hybrid.data, ref_hybrid)
            assert np.array_equal(d_pt.data, ref_pt)
            assert np.array_equal(img_sorted, ref_sorted_img)


# -- gradients -------------------------------------------------------------------------


def test_interaction_gradients():
    layout = make_layout(2, 4, 2, n_points=3)
    lp = _live_level(38, 3, 2, layout.t, hidden=4)
    f0 = np.random.default_rng(39).normal(size=(2, 4, 3))
    p0 = np.random.default_rng(40).normal(size=(3, 3))

    def wrt_img(t):
        fi, fp, _ = mlayer_stack(t, Tensor(p0), 2, lp, layout)
        return T.reduce_mean(fi * fi) + T.reduce_mean(fp * fp)

    assert finite_diff_check(wrt_img, Tensor(f0)) <= 1e-4

    def wrt_pts(t):
        fi, fp, _ = mlayer_stack(Tensor(f0), t, 2, lp, layout)
        return T.reduce_mean(fi * fi) + T.reduce_mean(fp * fp)

    assert finite_diff_check(wrt_pts, Tensor(p0)) <= 1e-4

    def wrt_lambda(t):
        saved = lp.lambda_raw
        lp.lambda_raw = t
        try:
            fi, fp, _ = mlayer_stack(Tensor(f0), Tensor(p0), 1, lp, layout)
            return T.reduce_mean(fp * fp)
        finally:
            lp.lambda_raw = saved

    assert finite_diff_check(wrt_lambda, lp.lambda_raw) <= 1e-4
