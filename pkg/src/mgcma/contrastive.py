"""Symmetric InfoNCE over an in-batch similarity matrix.

Both contrastive losses in the model reduce to the same computation once a
similarity matrix exists: scale by 1/tau, take row-wise and column-wise
log-softmax, read off the diagonal, and average over both directions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, EmptySequenceError, ShapeError
from .tensor import Tensor


@dataclass
class ContrastiveResult:
    """Scalar loss plus the per-pair terms in each direction, kept for tests."""

    loss: Tensor
    s2t: Tensor
    t2s: Tensor


def symmetric_infonce(sim: Tensor, tau: float) -> ContrastiveResult:
    """(1/2N) sum_i of the two cross-entropy terms for an NxN similarity matrix.

    Row i scores pair i's first element against every second element; the
    positive sits on the diagonal. The column direction is the transpose.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    if sim.data.ndim != 2 or sim.data.shape[0] != sim.data.shape[1]:
        raise ShapeError(f"similarity matrix must be square, got {sim.data.shape}")
    n = sim.data.shape[0]
    if n == 0:
        raise EmptySequenceError("contrastive loss over an empty batch")
    scaled = T.mul(sim, 1.0 / tau)
    diag = np.arange(n)
    s2t = T.mul(T.take_per_row(T.log_softmax_rows(scaled), diag), -1.0)
    t2s = T.mul(T.take_per_row(T.log_softmax_rows(T.transpose(scaled)), diag), -1.0)
    loss = T.mul(T.add(T.sum_all(s2t), T.sum_all(t2s)), 1.0 / (2.0 * n))
    return ContrastiveResult(loss=loss, s2t=s2t, t2s=t2s)
