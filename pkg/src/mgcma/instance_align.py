"""Instance-level alignment.

Aligned token sequences are pooled to one vector per utterance; the batch
loss is symmetric InfoNCE over pairwise dot products. Vectors are L2
normalized by default so logits stay in [-1/tau, 1/tau] (the
`normalize` / `require_normalized` knobs turn this off together).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .contrastive import ContrastiveResult, symmetric_infonce
from .errors import ContractError, EmptySequenceError, ShapeError
from .tensor import Tensor


@dataclass
class InstanceVector:
    """One pooled utterance vector; `normalized` records whether ||v|| = 1."""

    v: Tensor
    normalized: bool

    @property
    def dim(self) -> int:
        return self.v.data.shape[0]


def pool_instance(x: Tensor, normalize: bool = True) -> InstanceVector:
    """Mean-pool a [L, D] sequence, then optionally L2 normalize."""
    pooled = T.mean_pool(x)
    if normalize:
        return InstanceVector(v=T.l2_normalize(pooled), normalized=True)
    return InstanceVector(v=pooled, normalized=False)


def instance_contrastive_loss(
    speech: list[InstanceVector],
    text: list[InstanceVector],
    tau: float,
    require_normalized: bool = True,
) -> ContrastiveResult:
    """Symmetric InfoNCE over dot-product similarities; pair i is the positive."""
    if len(speech) != len(text):
        raise ShapeError(f"batch size mismatch: {len(speech)} vs {len(text)}")
    if len(speech) == 0:
        raise EmptySequenceError("instance loss over an empty batch")
    dims = {u.dim for u in speech} | {u.dim for u in text}
    if len(dims) != 1:
        raise ShapeError(f"inconsistent instance dimensions: {sorted(dims)}")
    if require_normalized:
        for u in (*speech, *text):
            if not u.normalized:
                raise ContractError("instance vector is not normalized")
            norm = float(np.linalg.norm(u.v.data))
            if abs(norm - 1.0) > 1e-9:
                raise ContractError(f"normalized flag set but ||v|| = {norm}")
    vs = T.stack_rows([u.v for u in speech])
    vt = T.stack_rows([u.v for u in text])
    return symmetric_infonce(T.matmul(vs, T.transpose(vt)), tau)
