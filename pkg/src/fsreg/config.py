"""Run configuration: a flat dataclass parsed from `key = value` text files.

Unknown keys are hard errors (typo safety), '#' starts a comment, and every
value is validated against the preconditions of the module that consumes it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .interaction import ORDERINGS
from .synthgen import MODES, SceneSpec


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data generation / location
    dataset: str = "data"
    n_samples: int = 50
    n_points: int = 128
    grid_h: int = 96
    grid_w: int = 128
    channels: int = 32
    feature_noise: float = 0.01
    mode: str = "easy"
    repetition_groups: int = 4
    max_rotation_deg: float = 30.0
    max_translation: float = 0.5
    # model
    state_dim: int = 16
    emb_levels: int = 4
    heads: int = 4
    policy_hidden: int = 64
    window_a: int = 8
    window_b: int = 4
    window_c: int = 2
    ordering: str = "raster"
    # matching
    top_k: int = 128
    radius: float = 0.15
    tau: float = 0.6
    # objective
    zeta: float = 10.0
    delta_p: float = 0.1
    delta_n: float = 1.4
    xi1: float = 1.0
    xi2: float = 1.0
    # policy / reinforcement
    reward_delta: float = 1e-6
    baseline_eps: float = 0.1
    n_actions: int = 4
    fixed_depth: int = -1  # -1: policy-driven; >= 0: constant depth everywhere
    # training
    lr: float = 1e-3
    momentum: float = 0.9
    steps: int = 500
    seed: int = 0
    checkpoint_interval: int = 0  # 0: final checkpoint only
    # pose estimation
    ransac_iters: int = 500
    ransac_thresh_px: float = 2.0
    # output
    out: str = "runs/out"

    # -- derived views ---------------------------------------------------------

    def level_shapes(self) -> list[tuple[int, int]]:
        a = (self.grid_h // 4, self.grid_w // 4)
        return [a, (a[0] // 2, a[1] // 2), (a[0] // 4, a[1] // 4)]

    def windows(self) -> list[int]:
        return [self.window_a, self.window_b, self.window_c]

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(
            point_count=self.n_points,
            grid_h=self.grid_h,
            grid_w=self.grid_w,
            channels=self.channels,
            max_rotation=math.radians(self.max_rotation_deg),
            max_translation=self.max_translation,
            feature_noise=self.feature_noise,
            mode=self.mode,
            repetition_groups=self.repetition_groups,
        )

    # -- validation --------------------------------------------------------------

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(f"config: {msg}")

        need(self.grid_h % 16 == 0 and self.grid_w % 16 == 0,
             f"grid must be divisible by 16 for the pyramid, got {self.grid_h}x{self.grid_w}")
        need(self.n_points >= 6, f"n_points must be >= 6, got {self.n_points}")
        need(self.channels >= 1, "channels must be positive")
        need(self.heads >= 1 and self.channels % self.heads == 0,
             f"heads must divide channels, got {self.heads} and {self.channels}")
        need(self.emb_levels >= 1, "emb_levels must be positive")
        need((1 + 2 * self.emb_levels) * 3 <= self.channels,
             f"positional width (1+2*{self.emb_levels})*3 exceeds channels={self.channels}")
        need(self.state_dim >= 1, "state_dim must be positive")
        need(self.policy_hidden >= 1, "policy_hidden must be positive")
        for (lh, lw), o, name in zip(self.level_shapes(), self.windows(), "abc"):
            need(o >= 1 and lh % o == 0 and lw % o == 0,
                 f"window_{name}={o} must divide level shape {lh}x{lw}")
        need(self.ordering in ORDERINGS,
             f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        need(self.mode in MODES, f"mode must be one of {MODES}, got {self.mode!r}")
        need(self.top_k >= 1, f"top_k must be >= 1, got {self.top_k}")
        need(self.radius > 0.0, "radius must be > 0")
        need(self.zeta > 0.0, "zeta must be > 0")
        need(0.0 <= self.delta_p < self.delta_n, "need 0 <= delta_p < delta_n")
        need(self.xi1 >= 0.0 and self.xi2 >= 0.0, "xi weights must be >= 0")
        need(self.reward_delta > 0.0, "reward_delta must be > 0")
        need(0.0 < self.baseline_eps <= 1.0, "baseline_eps must be in (0, 1]")
        need(self.n_actions >= 1, "n_actions must be >= 1")
        need(self.fixed_depth == -1 or 0 <= self.fixed_depth < self.n_actions,
             f"fixed_depth must be -1 or in [0, {self.n_actions}), got {self.fixed_depth}")
        need(self.lr > 0.0, "lr must be > 0")
        need(0.0 <= self.momentum < 1.0, "momentum must be in [0, 1)")
        need(self.steps >= 0, "steps must be >= 0")
        need(self.checkpoint_interval >= 0, "checkpoint_interval must be >= 0")
        need(self.ransac_iters >= 1, "ransac_iters must be >= 1")
        need(self.ransac_thresh_px > 0.0, "ransac_thresh_px must be > 0")
        need(self.n_samples >= 1, "n_samples must be >= 1")
        if self.mode == "hard-repetitive":
            need(2 <= self.repetition_groups <= self.n_points,
                 "repetition_groups must be in [2, n_points]")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    ftype = _FIELDS[key].type
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"config: bad value for {key!r}: {raw!r} ({e})") from e


def parse_config_text(text: str) -> dict:
    """`key = value` lines -> typed dict; '#' comments; unknown keys error."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, raw)
    return out


def load_config(path: Path | None = None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"config: cannot read {p}: {e}") from e
        values.update(parse_config_text(text))
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"config: unknown override key {key!r}")
        values[key] = _convert(key, str(val)) if isinstance(val, str) else val
    return RunConfig(**values).validate()


def config_to_text(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"
