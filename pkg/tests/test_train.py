"""Training/eval loop tests: CSV contract, determinism, divergence handling."""

import os

import numpy as np
import pytest

from fsreg import tensor as T
from fsreg.checkpoint import load_checkpoint
from fsreg.tensor import Tensor
from fsreg.train import (
    CSV_HEADER,
    EVAL_CSV_HEADER,
    SgdMomentum,
    TrainingDivergedError,
    run_eval,
    run_train,
    substreams,
)

from tiny import tiny_config, tiny_dataset


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny dataset + 3-step training run shared by the read-only tests."""
    tmp = tmp_path_factory.mktemp("train")
    cfg = tiny_config(tmp)
    tiny_dataset(cfg)
    report = run_train(cfg)
    return cfg, report


def test_csv_header_and_row_count(trained):
    cfg, report = trained
    lines = open(report.csv_path).read().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + cfg.steps
    assert len(report.rows) == cfg.steps


def test_final_baseline_matches_last_row(trained):
    _, report = trained
    assert report.final_baseline == report.rows[-1][5]


def test_checkpoint_written_and_labeled(trained):
    cfg, report = trained
    stored = load_checkpoint(report.checkpoint_path)
    assert stored.step == cfg.steps
    assert stored.baseline == report.final_baseline


def test_zero_steps_writes_header_only_csv_and_init_checkpoint(tmp_path):
    cfg = tiny_config(tmp_path, steps=0)
    tiny_dataset(cfg)
    report = run_train(cfg)
    assert open(report.csv_path).read() == CSV_HEADER + "\n"
    stored = load_checkpoint(report.checkpoint_path)
    assert stored.step == 0
    assert report.rows == []


def test_train_deterministic_up_to_wall_time(tmp_path):
    cfg_a = tiny_config(tmp_path, out=str(tmp_path / "out_a"))
    tiny_dataset(cfg_a)
    cfg_b = tiny_config(tmp_path, out=str(tmp_path / "out_b"))
    ra = run_train(cfg_a)
    rb = run_train(cfg_b)

    def strip_wall(path):
        lines = open(path).read().splitlines()
        return [",".join(ln.split(",")[:-1]) for ln in lines]

    assert strip_wall(ra.csv_path) == strip_wall(rb.csv_path)


def test_missing_dataset_is_an_error(tmp_path):
    cfg = tiny_config(tmp_path)  # dataset dir never generated
    with pytest.raises(ValueError, match="no training samples"):
        run_train(cfg)


def test_fixed_depth_training_has_no_rl_terms(tmp_path):
    cfg = tiny_config(tmp_path, fixed_depth=1)
    tiny_dataset(cfg)
    report = run_train(cfg)
    for row in report.rows:
        _, _, _, l_rl, reward, baseline, da, db, dc, _ = row
        assert l_rl == 0.0 and reward == 0.0 and baseline == 0.0
        assert (da, db, dc) == (1, 1, 1)


def test_divergence_names_step_and_term(tmp_path, monkeypatch):
    cfg = tiny_config(tmp_path)
    tiny_dataset(cfg)
    from fsreg import train as train_mod

    real = train_mod.compute_losses
    calls = {"n": 0}

    def poisoned(result, bundle, c):
        l_coarse, l_fine = real(result, bundle, c)
        if calls["n"] == 2:
            l_coarse = Tensor(np.asarray(float("nan")))
        calls["n"] += 1
        return l_coarse, l_fine

    monkeypatch.setattr(train_mod, "compute_losses", poisoned)
    with pytest.raises(TrainingDivergedError, match=r"step 2: loss_coarse"):
        run_train(cfg)


def test_intermediate_checkpoints(tmp_path):
    cfg = tiny_config(tmp_path, steps=4, checkpoint_interval=2)
    tiny_dataset(cfg)
    run_train(cfg)
    assert os.path.exists(os.path.join(cfg.out, "checkpoint_step2.bin"))
    # the final step's snapshot is checkpoint.bin, not an interval file
    assert not os.path.exists(os.path.join(cfg.out, "checkpoint_step4.bin"))
    assert os.path.exists(os.path.join(cfg.out, "checkpoint.bin"))


def test_eval_outputs_and_aggregates(trained):
    cfg, report = trained
    ev = run_eval(cfg, report.checkpoint_path, split="test")
    assert ev.rows, "tiny dataset should have a test split"
    assert np.isclose(ev.mean_ir, np.mean([r.ir for r in ev.rows]))
    assert np.isclose(ev.fmr, np.mean([r.ir > 0.10 for r in ev.rows]))
    assert np.isclose(ev.rr_rate, np.mean([r.rr for r in ev.rows]))
    assert np.isclose(sum(ev.depth_hist.values()), 1.0)
    assert np.isfinite(ev.mmd)

    lines = open(ev.csv_path).read().splitlines()
    assert lines[0] == EVAL_CSV_HEADER
    assert len(lines) == 1 + len(ev.rows)
    summary = open(ev.summary_path).read()
    assert "mean inlier ratio" in summary
    assert "depth histogram" in summary


def test_eval_skips_mmd_when_disabled(trained):
    cfg, report = trained
    ev = run_eval(cfg, report.checkpoint_path, split="test", with_mmd=False)
    assert np.isnan(ev.mmd)


def test_eval_empty_split_is_an_error(tmp_path):
    cfg = tiny_config(tmp_path, n_samples=2, steps=1)  # 1 train, 0 val, 1 test
    tiny_dataset(cfg)
    report = run_train(cfg)
    with pytest.raises(ValueError, match="split 'val'"):
        run_eval(cfg, report.checkpoint_path, split="val")


def test_substreams_fixed_and_independent():
    a = substreams(123)
    b = substreams(123)
    assert set(a) == {"data", "policy", "ransac", "init"}
    for k in a:
        assert a[k].integers(1 << 30) == b[k].integers(1 << 30)
    c = substreams(123)
    draws = [c[k].integers(1 << 30) for k in ("data", "policy", "ransac", "init")]
    assert len(set(draws)) == len(draws), "streams should not mirror each other"


def test_sgd_momentum_matches_hand_rollout():
    p = Tensor(np.asarray(1.0), requires_grad=True)
    opt = SgdMomentum({"p": p}, lr=0.1, momentum=0.9)
    opt.step({p.tid: np.asarray(0.5)})
    assert np.isclose(p.data, 1.0 - 0.1 * 0.5)
    opt.step({p.tid: np.asarray(0.5)})
    # v2 = 0.9*0.5 + 0.5 = 0.95 -> p = 0.95 - 0.095
    assert np.isclose(p.data, 0.95 - 0.1 * 0.95)


def test_sgd_momentum_skips_absent_gradients():
    p = Tensor(np.asarray(2.0), requires_grad=True)
    q = Tensor(np.asarray(3.0), requires_grad=True)
    opt = SgdMomentum({"p": p, "q": q}, lr=0.5)
    opt.step({p.tid: np.asarray(1.0)})
    assert np.isclose(p.data, 1.5)
    assert q.data == 3.0
    assert np.all(opt.velocity["q"] == 0.0)
