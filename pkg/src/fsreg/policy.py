"""Per-scale interaction-depth policy, trained with REINFORCE.

One shared 2-layer MLP maps a pooled summary of each scale's tokens to a
categorical distribution over literal depths {0..l_max}. Depths are sampled
during training (inverse-CDF, one uniform draw per decision) and chosen
greedily at inference. The reward is the inverse of the per-sample matching
loss, an EMA baseline centers it, and the surrogate loss routes gradients
only into the policy: the state is pooled from raw arrays, never the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class PolicyParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def n_actions(self) -> int:
        return self.w2.shape[1]

    def tensors(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class PolicyDecision:
    scale: int
    action: int
    log_prob_value: float
    sampled: bool
    log_prob: Tensor | None = None  # tape scalar; None for greedy decisions


def init_policy(rng: np.random.Generator, state_dim: int, hidden: int = 64,
                n_actions: int = 4) -> PolicyParams:
    # zero output layer -> exactly uniform action probabilities at start
    return PolicyParams(
        w1=Tensor(rng.normal(0.0, state_dim**-0.5, (state_dim, hidden)), requires_grad=True),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=Tensor(np.zeros((hidden, n_actions)), requires_grad=True),
        b2=Tensor(np.zeros(n_actions), requires_grad=True),
    )


def build_state(img_tokens, pt_tokens) -> np.ndarray:
    """concat(mean, max over image tokens; mean, max over point tokens) -> (4C,).

    Works on raw arrays, so no gradient can flow from the policy into the
    backbone features.
    """
    fi = img_tokens.data if isinstance(img_tokens, Tensor) else np.asarray(img_tokens)
    fp = pt_tokens.data if isinstance(pt_tokens, Tensor) else np.asarray(pt_tokens)
    fi = fi.reshape(-1, fi.shape[-1])
    fp = fp.reshape(-1, fp.shape[-1])
    return np.concatenate([fi.mean(0), fi.max(0), fp.mean(0), fp.max(0)])


def policy_forward(state: np.ndarray, params: PolicyParams) -> Tensor:
    """Action probabilities (A,) for one pooled state."""
    s = Tensor(state)
    hidden = T.relu(s @ params.w1 + params.b1)
    logits = hidden @ params.w2 + params.b2
    return T.softmax(logits, axis=0)


def select_action(probs: Tensor, sampled: bool, rng: np.random.Generator | None,
                  scale: int) -> PolicyDecision:
    """Sample by inverse CDF (one uniform draw) or take the greedy argmax.

    Greedy ties resolve to the lowest action index.
    """
    p = probs.data
    if sampled:
        if rng is None:
            raise ValueError("select_action: sampling requires an rng")
        u = float(rng.random())
        action = int(np.searchsorted(np.cumsum(p), u, side="right"))
        action = min(action, p.size - 1)
    else:
        action = int(np.argmax(p))
    lp = T.log(probs[action])
    return PolicyDecision(
        scale=scale,
        action=action,
        log_prob_value=float(lp.data),
        sampled=sampled,
        log_prob=lp if sampled else None,
    )


def compute_reward(loss_value: float, delta: float) -> float:
    """R = 1 / (L + delta); the matching loss must be non-negative."""
    if loss_value < 0.0:
        raise ValueError(f"compute_reward: loss must be >= 0, got {loss_value}")
    if delta <= 0.0:
        raise ValueError(f"compute_reward: delta must be > 0, got {delta}")
    return 1.0 / (loss_value + delta)


def update_baseline(baseline: float, reward: float, eps: float) -> float:
    """EMA update B <- (1 - eps) * B + eps * R."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"update_baseline: eps must be in (0, 1], got {eps}")
    return (1.0 - eps) * baseline + eps * reward


def reinforce_loss(decisions: list[PolicyDecision], reward: float,
                   baseline: float) -> Tensor:
    """L_r = -(R - B) * sum(log pi(a)); the advantage is a plain constant."""
    if not decisions:
        raise ValueError("reinforce_loss: no decisions")
    if any(not d.sampled or d.log_prob is None for d in decisions):
        raise ValueError("reinforce_loss: all decisions must be sampled-mode")
    total = decisions[0].log_prob
    for d in decisions[1:]:
        total = total + d.log_prob
    return total * (baseline - reward)
