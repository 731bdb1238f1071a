"""Attention-gated interaction fusion of functional and structural features.

Functional nodes query structural nodes with single-head scaled dot-product
attention; each functional node then receives a structural summary ``g``.
The gated interaction stage concatenates ``[f, g, f*g, |f-g|, mix]`` where
``mix = gate*f + (1-gate)*g`` and ``gate`` is a sigmoid of a linear map of
``[f; g]``. All functions accept a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import tensor as T
from .numerics.linalg import row_softmax


@dataclass
class CnaParams:
    w_q: T.Tensor
    w_k: T.Tensor
    w_v: T.Tensor

    @property
    def attn_dim(self) -> int:
        return self.w_q.shape[1]

    def tensors(self):
        return {"cna.w_q": self.w_q, "cna.w_k": self.w_k, "cna.w_v": self.w_v}


@dataclass
class GiacParams:
    """Gate parameters. ``w_h``/``b_h`` are set only for a hidden gate layer."""

    w_g: T.Tensor
    b_g: T.Tensor
    w_h: T.Tensor | None = None
    b_h: T.Tensor | None = None

    def tensors(self):
        out = {"giac.w_g": self.w_g, "giac.b_g": self.b_g}
        if self.w_h is not None:
            out.update({"giac.w_h": self.w_h, "giac.b_h": self.b_h})
        return out


@dataclass
class ProductParams:
    """Element-wise product of two linear projections (the no-gating ablation)."""

    w_a: T.Tensor
    w_b: T.Tensor

    def tensors(self):
        return {"prod.w_a": self.w_a, "prod.w_b": self.w_b}


def _uniform(gen, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=shape)


def init_cna(feat_dim: int, attn_dim: int, gen: np.random.Generator) -> CnaParams:
    return CnaParams(
        T.parameter(_uniform(gen, (feat_dim, attn_dim), feat_dim), "cna.w_q"),
        T.parameter(_uniform(gen, (feat_dim, attn_dim), feat_dim), "cna.w_k"),
        T.parameter(_uniform(gen, (feat_dim, feat_dim), feat_dim), "cna.w_v"),
    )


def init_giac(feat_dim: int, gen: np.random.Generator, hidden: int = 0) -> GiacParams:
    if hidden <= 0:
        return GiacParams(T.parameter(_uniform(gen, (1, 2 * feat_dim), feat_dim), "giac.w_g"),
                          T.parameter(np.zeros(1), "giac.b_g"))
    return GiacParams(
        T.parameter(_uniform(gen, (1, hidden), feat_dim), "giac.w_g"),
        T.parameter(np.zeros(1), "giac.b_g"),
        T.parameter(_uniform(gen, (2 * feat_dim, hidden), feat_dim), "giac.w_h"),
        T.parameter(np.zeros(hidden), "giac.b_h"),
    )


def init_product(feat_dim: int, gen: np.random.Generator) -> ProductParams:
    return ProductParams(
        T.parameter(_uniform(gen, (feat_dim, feat_dim), feat_dim), "prod.w_a"),
        T.parameter(_uniform(gen, (feat_dim, feat_dim), feat_dim), "prod.w_b"),
    )


def cross_node_attention(f, s, params: CnaParams):
    """Returns ``(g, attn)``: structural summaries (..., Nf, D) and weights (..., Nf, Ns)."""
    f, s = T.as_tensor(f), T.as_tensor(s)
    if f.shape[-1] != s.shape[-1] or f.shape[-1] != params.w_q.shape[0]:
        raise ShapeError(f"feature widths disagree: F {f.shape}, S {s.shape}, W_q {params.w_q.shape}")
    q = f @ params.w_q
    k = s @ params.w_k
    v = s @ params.w_v
    logits = (q @ T.transpose(k)) * (1.0 / np.sqrt(params.attn_dim))
    attn = row_softmax(logits)
    return attn @ v, attn


def gate_values(f, g, params: GiacParams):
    fg = T.concat([f, g], axis=-1)
    if params.w_h is None:
        pre = fg @ T.transpose(params.w_g) + params.b_g
    else:
        hidden = T.tanh(fg @ params.w_h + params.b_h)
        pre = hidden @ T.transpose(params.w_g) + params.b_g
    return T.sigmoid(pre)


def gated_interaction(f, g, params: GiacParams):
    """Returns ``(z, gate)`` with z = [f, g, f*g, |f-g|, gate*f + (1-gate)*g]."""
    f, g = T.as_tensor(f), T.as_tensor(g)
    if f.shape != g.shape:
        raise ShapeError(f"F {f.shape} and G {g.shape} must match")
    gate = gate_values(f, g, params)
    agree = f * g
    disparity = T.absolute(f - g)
    mix = gate * f + (1.0 - gate) * g
    return T.concat([f, g, agree, disparity, mix], axis=-1), gate


def fuse_subject(f, s, cna: CnaParams, giac: GiacParams):
    """Cross-node attention followed by gated interaction; returns ``(z, attn)``."""
    g, attn = cross_node_attention(f, s, cna)
    z, _ = gated_interaction(f, g, giac)
    return z, attn


def product_fusion(f, s_aligned, params: ProductParams):
    """``(F W_a) * (S W_b)``; ``s_aligned`` must share F's node set."""
    f, s_aligned = T.as_tensor(f), T.as_tensor(s_aligned)
    if f.shape != s_aligned.shape:
        raise ShapeError(f"product fusion needs aligned inputs, got {f.shape} and {s_aligned.shape}")
    return (f @ params.w_a) * (s_aligned @ params.w_b)


def split_blocks(z: np.ndarray, feat_dim: int):
    """The five D-wide column blocks of a fused embedding."""
    if z.shape[-1] != 5 * feat_dim:
        raise ShapeError(f"expected {5 * feat_dim} columns, got {z.shape[-1]}")
    return tuple(z[..., i * feat_dim:(i + 1) * feat_dim] for i in range(5))
