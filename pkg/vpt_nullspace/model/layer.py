# -*- coding: utf-8 -*-

"""
A single prompted transformer layer (VPT-Deep): LayerNorm, multi-head self-attention where only the
image tokens act as queries, residual, LayerNorm, GELU MLP, residual. The output prompts are dropped
because every layer inserts its own fresh prompts.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ContractViolation
from ..numeric import DTYPE, DEFAULT_LN_EPS, RowStats, layer_norm, softmax_rows


def _orthogonal(dim: int, generator: torch.Generator) -> torch.Tensor:
    q, r = torch.linalg.qr(torch.randn(dim, dim, generator=generator, dtype=DTYPE))
    # sign fix keeps the draw uniform over the orthogonal group
    return q * torch.sign(torch.diagonal(r))


class LayerParams(nn.Module):
    """
    Weights of one layer. Matrices are stored as (in, out), tokens are transformed as `x @ W + b`.
    All of them are frozen once the backbone is initialized (or pretrained).
    """

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4, generator: torch.Generator = None) -> None:
        super().__init__()
        if dim % heads != 0:
            raise ContractViolation(f"The token dimension {dim} is not divisible by the number of heads {heads}.")
        self.dim = dim
        self.heads = heads
        hidden = dim * mlp_ratio

        def randn(*shape, std=1.0):
            return torch.randn(*shape, generator=generator, dtype=DTYPE) * std

        self.W_q = nn.Parameter(_orthogonal(dim, generator))
        self.W_k = nn.Parameter(_orthogonal(dim, generator))
        self.W_v = nn.Parameter(_orthogonal(dim, generator))
        self.b_q = nn.Parameter(randn(dim, std=0.02))
        self.b_k = nn.Parameter(randn(dim, std=0.02))
        self.b_v = nn.Parameter(randn(dim, std=0.02))
        self.ln1_alpha = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.ln1_beta = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.ln2_alpha = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.ln2_beta = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.mlp_w1 = nn.Parameter(randn(dim, hidden, std=1.0 / math.sqrt(dim)))
        self.mlp_b1 = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.mlp_w2 = nn.Parameter(randn(hidden, dim, std=0.5 / math.sqrt(hidden)))
        self.mlp_b2 = nn.Parameter(torch.zeros(dim, dtype=DTYPE))

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def key_head_blocks(self) -> torch.Tensor:
        """
        W_k split into its per-head column blocks W_{k,h}, shape (H, D, d).
        """
        return self.W_k.reshape(self.dim, self.heads, self.head_dim).permute(1, 0, 2)


@dataclass
class AttentionTrace:
    """
    Intermediate values of one layer forward. Head-wise tensors have shape (..., H, rows, cols).
    `tokens` is the layer input X; prompt query rows are never part of `q_x` or `a_z`.
    """

    tokens: torch.Tensor
    q_x: torch.Tensor
    k_z: torch.Tensor
    v_z: torch.Tensor
    a_z: torch.Tensor
    s_x: torch.Tensor
    s_p: torch.Tensor
    f_z: torch.Tensor
    prompt_stats: RowStats


def split_heads(t: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, rows, dim = t.shape
    return t.reshape(*lead, rows, heads, dim // heads).transpose(-3, -2)


def merge_heads(t: torch.Tensor) -> torch.Tensor:
    *lead, heads, rows, d = t.shape
    return t.transpose(-3, -2).reshape(*lead, rows, heads * d)


def qkv_transform(
    normed: torch.Tensor, params: LayerParams, num_prompts: int
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Queries of the image tokens only, keys and values of all N+M tokens, split into heads.
    `normed` holds the N image rows first, followed by the `num_prompts` prompt rows.
    """
    if normed.shape[-1] != params.dim:
        raise ContractViolation(f"Expected tokens of width {params.dim}, got {normed.shape[-1]}.")
    n = normed.shape[-2] - num_prompts
    if n < 0:
        raise ContractViolation(f"{num_prompts} prompts do not fit into {normed.shape[-2]} rows.")
    q = normed[..., :n, :] @ params.W_q + params.b_q
    k = normed @ params.W_k + params.b_k
    v = normed @ params.W_v + params.b_v
    return split_heads(q, params.heads), split_heads(k, params.heads), split_heads(v, params.heads)


def affinity(q_x: torch.Tensor, k_z: torch.Tensor) -> torch.Tensor:
    if q_x.shape[-1] != k_z.shape[-1]:
        raise ContractViolation(f"Query width {q_x.shape[-1]} does not match key width {k_z.shape[-1]}.")
    return q_x @ k_z.transpose(-1, -2) / math.sqrt(q_x.shape[-1])


def aggregate(s_z: torch.Tensor, v_z: torch.Tensor) -> torch.Tensor:
    if s_z.shape[-1] != v_z.shape[-2]:
        raise ContractViolation(f"Attention columns {s_z.shape[-1]} do not match value rows {v_z.shape[-2]}.")
    return s_z @ v_z


def mlp(x: torch.Tensor, params: LayerParams) -> torch.Tensor:
    return F.gelu(x @ params.mlp_w1 + params.mlp_b1) @ params.mlp_w2 + params.mlp_b2


def layer_forward(
    X: torch.Tensor,
    P: torch.Tensor,
    params: LayerParams,
    capture: bool = False,
    ln_bypass: bool = False,
    eps: float = DEFAULT_LN_EPS,
) -> Tuple[torch.Tensor, Optional[AttentionTrace]]:
    """
    Forward one layer for image tokens `X` (..., N, D) and prompts `P` (M, D).

    With `ln_bypass` the prompts skip the first LayerNorm; this mode exists only to verify the
    attention consistency conditions at machine precision and is never used for training.
    """
    if X.shape[-1] != params.dim or P.dim() != 2 or P.shape[-1] != params.dim:
        raise ContractViolation(f"Shape mismatch: tokens {tuple(X.shape)}, prompts {tuple(P.shape)}, width {params.dim}.")
    n, m = X.shape[-2], P.shape[0]

    normed_x, _ = layer_norm(X, params.ln1_alpha, params.ln1_beta, eps)
    normed_p, prompt_stats = layer_norm(P, params.ln1_alpha, params.ln1_beta, eps)
    if ln_bypass:
        normed_p = P
    normed = torch.cat([normed_x, normed_p.expand(*X.shape[:-2], m, params.dim)], dim=-2)

    q_x, k_z, v_z = qkv_transform(normed, params, m)
    a_z = affinity(q_x, k_z)
    s_z = softmax_rows(a_z)
    f_z = merge_heads(aggregate(s_z, v_z))

    h = X + f_z
    normed2, _ = layer_norm(h, params.ln2_alpha, params.ln2_beta, eps)
    out = h + mlp(normed2, params)

    trace = None
    if capture:
        trace = AttentionTrace(
            tokens=X,
            q_x=q_x,
            k_z=k_z,
            v_z=v_z,
            a_z=a_z,
            s_x=s_z[..., :n],
            s_p=s_z[..., n:],
            f_z=f_z,
            prompt_stats=prompt_stats,
        )
    return out, trace
