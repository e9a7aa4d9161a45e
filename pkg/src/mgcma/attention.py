"""Scaled dot-product attention and multi-head assembly.

One code path serves both uses: passing the same sequence as query and
key/value source gives self-attention, passing different sequences gives
cross-attention. No masking and no positional encoding — inputs stand in
for contextualized encoder outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as T
from .errors import EmptySequenceError, ShapeError
from .tensor import ParameterStore, Tensor


@dataclass(frozen=True)
class AttentionConfig:
    """Model width and head count; the head width is their exact quotient."""

    model_dim: int
    num_heads: int

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0:
            raise ShapeError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ShapeError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def __getstate__(self):
        return {"model_dim": self.model_dim, "num_heads": self.num_heads}

    def __setstate__(self, state):
        object.__setattr__(self, "model_dim", state["model_dim"])
        object.__setattr__(self, "num_heads", state["num_heads"])


class AttentionParams:
    """One query/key/value projection triple per head plus the output projection.

    Each projection is a separate [D, d] matrix so the per-head wiring is
    directly inspectable; the output projection is [D, D].
    """

    def __init__(self, store: ParameterStore, prefix: str, cfg: AttentionConfig):
        self.cfg = cfg
        d, k = cfg.model_dim, cfg.num_heads
        self.heads = []
        for i in range(k):
            wq = store.uniform(f"{prefix}.head{i}.wq", (d, cfg.head_dim), fan_in=d)
            wk = store.uniform(f"{prefix}.head{i}.wk", (d, cfg.head_dim), fan_in=d)
            wv = store.uniform(f"{prefix}.head{i}.wv", (d, cfg.head_dim), fan_in=d)
            self.heads.append((wq, wk, wv))
        self.out_proj = store.uniform(f"{prefix}.wo", (d, d), fan_in=d)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v for q:[Lq,d], k:[Lk,d], v:[Lk,d]."""
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention operands must be rank-2")
    if k.data.shape[0] == 0:
        raise EmptySequenceError("attention over an empty key/value sequence")
    if q.data.shape[1] != k.data.shape[1]:
        raise ShapeError(
            f"query width {q.data.shape[1]} differs from key width {k.data.shape[1]}"
        )
    if k.data.shape[0] != v.data.shape[0]:
        raise ShapeError("key and value sequence lengths differ")
    scale = 1.0 / math.sqrt(q.data.shape[1])
    weights = T.softmax_rows(T.mul(T.matmul(q, T.transpose(k)), scale))
    return T.matmul(weights, v)


def multi_head(x_q: Tensor, x_kv: Tensor, params: AttentionParams) -> Tensor:
    """Project per head, attend, concatenate head outputs, project back to D."""
    d_model = params.cfg.model_dim
    if x_q.data.ndim != 2 or x_kv.data.ndim != 2:
        raise ShapeError("multi_head operands must be rank-2")
    if x_q.data.shape[1] != d_model or x_kv.data.shape[1] != d_model:
        raise ShapeError(
            f"inputs must have feature width {d_model}, "
            f"got {x_q.data.shape[1]} and {x_kv.data.shape[1]}"
        )
    heads = []
    for wq, wk, wv in params.heads:
        heads.append(
            scaled_dot_attention(T.matmul(x_q, wq), T.matmul(x_kv, wk), T.matmul(x_kv, wv))
        )
    return T.matmul(T.concat(heads, axis=1), params.out_proj)
