"""Tiny stochastic-bandit training loop used to sanity-check the policy stack.

The policy sees one fixed random state; each arm pays a noisy reward with a
distinct mean. REINFORCE with the EMA baseline should concentrate the
categorical distribution on the best arm.
"""

import numpy as np

from fsreg.policy import (
    init_policy,
    policy_forward,
    reinforce_loss,
    select_action,
    update_baseline,
)
from fsreg.tensor import backward

ARM_MEANS = (0.2, 0.5, 1.0, 0.4)
BEST_ARM = 2


def sgd_step(params, table, lr):
    for t in params.tensors().values():
        g = table.get(t.tid)
        if g is not None:
            t.data -= lr * g


def run_bandit(seed, updates=2000, lr=0.2, mu=ARM_MEANS, noise=0.1, eps=0.05,
               state_dim=8, hidden=16):
    """Train on the bandit; returns (params, state, final_probs, baselines)."""
    rng = np.random.default_rng(seed)
    params = init_policy(rng, state_dim, hidden=hidden, n_actions=len(mu))
    state = rng.normal(size=state_dim)
    baseline = 0.0
    baselines = []
    for _ in range(updates):
        probs = policy_forward(state, params)
        dec = select_action(probs, sampled=True, rng=rng, scale=0)
        r = float(mu[dec.action] + noise * rng.normal())
        baseline = update_baseline(baseline, r, eps)
        baselines.append(baseline)
        table = backward(reinforce_loss([dec], r, baseline))
        sgd_step(params, table, lr)
    return params, state, policy_forward(state, params), baselines
