"""Fourier positional features and the pre-interaction attention block.

Positions enter the network once, additively, as fixed sinusoidal features
zero-padded to the channel width. The attention block is one self-attention
per branch followed by one cross-attention per direction, all residual, with
zero-initialized output maps so a fresh block is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class FourierEmbedding:
    levels: int
    input_dim: int

    @property
    def out_dim(self) -> int:
        return self.input_dim * (1 + 2 * self.levels)


def fourier_embed(coords: np.ndarray, emb: FourierEmbedding) -> np.ndarray:
    """phi(x) = [x, sin(2^0 x), cos(2^0 x), ..., sin(2^(L-1) x), cos(2^(L-1) x)].

    coords: (n, input_dim), already normalized to [-1, 1]. Deterministic,
    no parameters; output (n, input_dim * (1 + 2 * levels)).
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != emb.input_dim:
        raise T.ShapeError(
            f"fourier_embed: expected (n, {emb.input_dim}) coords, got {coords.shape}"
        )
    parts = [coords]
    for lv in range(emb.levels):
        w = float(2**lv)
        parts.append(np.sin(w * coords))
        parts.append(np.cos(w * coords))
    return np.concatenate(parts, axis=1)


def positional_padded(coords: np.ndarray, emb: FourierEmbedding, width: int) -> np.ndarray:
    """Fourier features zero-padded on the right to the channel width."""
    phi = fourier_embed(coords, emb)
    if phi.shape[1] > width:
        raise T.ShapeError(
            f"positional_padded: embedding dim {phi.shape[1]} exceeds width {width}"
        )
    out = np.zeros((phi.shape[0], width))
    out[:, : phi.shape[1]] = phi
    return out


def normalized_grid(h: int, w: int) -> np.ndarray:
    """Row-major (h*w, 2) grid coordinates, each axis mapped to [-1, 1]."""
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.reshape(-1), xx.reshape(-1)], axis=1)


# -- attention ---------------------------------------------------------------


@dataclass
class AttentionUnit:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    def tensors(self) -> dict:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}


@dataclass
class AttentionParams:
    heads: int
    img_self: AttentionUnit
    pt_self: AttentionUnit
    img_cross: AttentionUnit
    pt_cross: AttentionUnit

    def units(self) -> dict:
        return {
            "img_self": self.img_self,
            "pt_self": self.pt_self,
            "img_cross": self.img_cross,
            "pt_cross": self.pt_cross,
        }


def init_attention(rng: np.random.Generator, channels: int, heads: int) -> AttentionParams:
    if channels % heads != 0:
        raise T.ShapeError(f"attention: channels {channels} not divisible by heads {heads}")

    def unit():
        s = channels**-0.5
        return AttentionUnit(
            wq=Tensor(rng.normal(0.0, s, (channels, channels)), requires_grad=True),
            wk=Tensor(rng.normal(0.0, s, (channels, channels)), requires_grad=True),
            wv=Tensor(rng.normal(0.0, s, (channels, channels)), requires_grad=True),
            wo=Tensor(np.zeros((channels, channels)), requires_grad=True),
        )

    return AttentionParams(heads, unit(), unit(), unit(), unit())


def mha(queries: Tensor, keys_values: Tensor, unit: AttentionUnit, heads: int,
        return_weights: bool = False):
    """Multi-head scaled dot-product attention (no residual).

    queries (n, C), keys_values (m, C) -> (n, C); softmax over the key axis.
    """
    n, c = queries.shape
    m = keys_values.shape[0]
    dh = c // heads
    q = T.transpose(T.reshape(queries @ unit.wq, (n, heads, dh)), (1, 0, 2))
    k = T.transpose(T.reshape(keys_values @ unit.wk, (m, heads, dh)), (1, 0, 2))
    v = T.transpose(T.reshape(keys_values @ unit.wv, (m, heads, dh)), (1, 0, 2))
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (dh**-0.5)
    w = T.softmax(scores, axis=-1)  # (heads, n, m)
    mixed = T.matmul(w, v)
    out = T.reshape(T.transpose(mixed, (1, 0, 2)), (n, c)) @ unit.wo
    if return_weights:
        return out, w
    return out


def attention_block(f_img: Tensor, f_pt: Tensor, params: AttentionParams):
    """Residual self-attention per branch, then residual cross per direction.

    Cross passes both read the post-self features of the other branch, so the
    two directions are symmetric.
    """
    i1 = f_img + mha(f_img, f_img, params.img_self, params.heads)
    p1 = f_pt + mha(f_pt, f_pt, params.pt_self, params.heads)
    i2 = i1 + mha(i1, p1, params.img_cross, params.heads)
    p2 = p1 + mha(p1, i1, params.pt_cross, params.heads)
    return i2, p2
