"""Full-model forward tests: shapes, depth control, determinism, init behavior."""

import numpy as np
import pytest

from fsreg import tensor as T
from fsreg.model import (
    ModelContext,
    forward,
    init_model,
    make_context,
    normalize_point_coords,
    upsample_index,
)
from fsreg.tensor import Tensor

from tiny import tiny_config, tiny_sample


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("model"))
    params = init_model(cfg, np.random.default_rng(0))
    ctx = make_context(cfg)
    sample = tiny_sample(cfg)
    return cfg, params, ctx, sample


def test_forward_shapes(setup):
    cfg, params, ctx, sample = setup
    res = forward(params, ctx, sample, sampled=False)
    shapes = cfg.level_shapes()
    m = sum(h * w for h, w in shapes)
    assert res.unified.data.shape == (m, cfg.channels)
    assert res.fine_img.data.shape == (cfg.grid_h * cfg.grid_w, cfg.channels)
    assert res.fine_pt.data.shape == (cfg.n_points, cfg.channels)
    for (lh, lw), li, lp in zip(shapes, res.level_img, res.level_pt):
        assert li.data.shape == (lh * lw, cfg.channels)
        assert lp.data.shape == (cfg.n_points, cfg.channels)
    assert len(res.decisions) == 3
    assert len(res.coarse) <= cfg.top_k


def test_unified_is_concat_of_levels(setup):
    _, params, ctx, sample = setup
    res = forward(params, ctx, sample, sampled=False)
    stacked = np.concatenate([li.data for li in res.level_img], axis=0)
    assert np.array_equal(res.unified.data, stacked)


def test_depth_invariant_at_init(setup):
    """Zero-initialized output projections make every interaction layer a no-op,
    so at init the forward features cannot depend on the chosen depth."""
    _, params, ctx, sample = setup
    shallow = forward(params, ctx, sample, sampled=False, depth_override=(0, 0, 0))
    deep = forward(params, ctx, sample, sampled=False, depth_override=(3, 3, 3))
    assert np.array_equal(shallow.unified.data, deep.unified.data)
    assert np.array_equal(shallow.fine_img.data, deep.fine_img.data)
    assert np.array_equal(shallow.fine_pt.data, deep.fine_pt.data)
    assert shallow.depths == (0, 0, 0) and deep.depths == (3, 3, 3)


def test_fixed_depth_config_bypasses_policy(tmp_path):
    cfg = tiny_config(tmp_path, fixed_depth=2)
    params = init_model(cfg, np.random.default_rng(0))
    ctx = make_context(cfg)
    res = forward(params, ctx, tiny_sample(cfg), sampled=True,
                  rng=np.random.default_rng(1))
    assert res.depths == (2, 2, 2)
    for dec in res.decisions:
        assert not dec.sampled
        assert dec.log_prob is None
        assert dec.log_prob_value == 0.0


def test_depth_override_wins(setup):
    _, params, ctx, sample = setup
    res = forward(params, ctx, sample, sampled=True,
                  rng=np.random.default_rng(3), depth_override=(1, 0, 2))
    assert res.depths == (1, 0, 2)


def test_greedy_forward_deterministic(setup):
    _, params, ctx, sample = setup
    a = forward(params, ctx, sample, sampled=False)
    b = forward(params, ctx, sample, sampled=False)
    assert a.depths == b.depths
    assert np.array_equal(a.unified.data, b.unified.data)
    assert [(m.py, m.px, m.point) for m in a.fine] == \
           [(m.py, m.px, m.point) for m in b.fine]


def test_sampled_forward_reproducible_with_seed(setup):
    _, params, ctx, sample = setup
    a = forward(params, ctx, sample, sampled=True, rng=np.random.default_rng(7))
    b = forward(params, ctx, sample, sampled=True, rng=np.random.default_rng(7))
    assert a.depths == b.depths
    assert [d.log_prob_value for d in a.decisions] == \
           [d.log_prob_value for d in b.decisions]


def test_sampled_decisions_carry_tape_log_probs(setup):
    _, params, ctx, sample = setup
    res = forward(params, ctx, sample, sampled=True, rng=np.random.default_rng(5))
    for dec in res.decisions:
        assert dec.sampled
        assert isinstance(dec.log_prob, Tensor)
        assert np.isclose(dec.log_prob.data, dec.log_prob_value)


def test_policy_gradients_do_not_reach_backbone(setup):
    """The pooled policy state is built from raw arrays, so log-prob gradients
    must stay inside the policy head."""
    _, params, ctx, sample = setup
    res = forward(params, ctx, sample, sampled=True, rng=np.random.default_rng(9))
    total = res.decisions[0].log_prob
    for dec in res.decisions[1:]:
        total = total + dec.log_prob
    table = T.backward(total)
    named = params.tensors()
    assert any(named[k].tid in table for k in named if k.startswith("policy."))
    for k, t in named.items():
        if not k.startswith("policy."):
            assert t.tid not in table, f"{k} unexpectedly received gradient"


def test_with_matches_false_skips_matching(setup):
    _, params, ctx, sample = setup
    res = forward(params, ctx, sample, sampled=False, with_matches=False)
    assert res.coarse == [] and res.fine == []


def test_ordering_variant_runs(tmp_path):
    cfg = tiny_config(tmp_path, ordering="reverse")
    params = init_model(cfg, np.random.default_rng(0))
    ctx = make_context(cfg)
    res = forward(params, ctx, tiny_sample(cfg), sampled=False)
    m = sum(h * w for h, w in cfg.level_shapes())
    assert res.unified.data.shape == (m, cfg.channels)


def test_tensor_registry_unique_and_learnable(setup):
    _, params, _, _ = setup
    named = params.tensors()
    ids = [id(t) for t in named.values()]
    assert len(ids) == len(set(ids)), "registry lists some tensor twice"
    for k, t in named.items():
        assert t.requires_grad, f"{k} is not marked learnable"


def test_normalize_point_coords_range():
    rng = np.random.default_rng(2)
    pts = rng.normal(0.0, 3.0, (40, 3))
    n = normalize_point_coords(pts)
    assert np.allclose(n.min(axis=0), -1.0)
    assert np.allclose(n.max(axis=0), 1.0)


def test_normalize_point_coords_degenerate_axis():
    pts = np.zeros((5, 3))
    pts[:, 0] = np.arange(5)
    n = normalize_point_coords(pts)  # flat y/z axes must not divide by zero
    assert np.all(np.isfinite(n))
    assert np.allclose(n[:, 1:], -1.0)


def test_upsample_index_oracle():
    idx = upsample_index(4, 4, 2, 2)
    expected = np.array([0, 0, 1, 1,
                         0, 0, 1, 1,
                         2, 2, 3, 3,
                         2, 2, 3, 3])
    assert np.array_equal(idx, expected)


def test_upsample_index_covers_all_cells(setup):
    cfg, _, ctx, _ = setup
    lh, lw = cfg.level_shapes()[0]
    assert ctx.ups_idx.shape == (cfg.grid_h * cfg.grid_w,)
    assert set(np.unique(ctx.ups_idx)) == set(range(lh * lw))
