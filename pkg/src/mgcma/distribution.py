"""Distribution-level alignment.

Each utterance in each modality is summarized as a diagonal Gaussian
N(mu, sigma). Similarity between two utterances is an affine map of the
negated squared 2-Wasserstein distance between their Gaussians, and the
batch-level loss is symmetric InfoNCE over those similarities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, AttentionParams, multi_head
from .contrastive import ContrastiveResult, symmetric_infonce
from .errors import ContractError, EmptySequenceError, ShapeError
from .tensor import ParameterStore, Tensor

# additive floor keeping sigma strictly positive after softplus
SIGMA_FLOOR = 1e-6


@dataclass
class GaussianEmbedding:
    """Diagonal Gaussian: mean vector and per-dimension standard deviation."""

    mu: Tensor
    sigma: Tensor

    @property
    def dim(self) -> int:
        return self.mu.data.shape[0]


@dataclass(frozen=True)
class ContrastiveConfig:
    """Similarity scale p, bias q, and softmax temperature tau.

    q provably cancels in the loss and p is redundant with tau, so the
    defaults are the identity; both stay configurable.
    """

    p: float = 1.0
    q: float = 0.0
    tau: float = 0.07

    def __post_init__(self):
        if self.p <= 0:
            raise ContractError(f"scale p must be positive, got {self.p}")
        if self.tau <= 0:
            raise ContractError(f"temperature tau must be positive, got {self.tau}")


class DistributionConstructorParams:
    """Self-attention plus one linear stack per branch (mu and sigma).

    The branch depth is configurable; one linear per branch is the default.
    """

    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        att_cfg: AttentionConfig,
        n_branch_linears: int = 1,
    ):
        if n_branch_linears < 1:
            raise ContractError("each branch needs at least one linear layer")
        d = att_cfg.model_dim
        self.attention = AttentionParams(store, f"{prefix}.att", att_cfg)
        self.mu_layers = [
            (
                store.uniform(f"{prefix}.mu{i}.w", (d, d), fan_in=d),
                store.zeros(f"{prefix}.mu{i}.b", (d,)),
            )
            for i in range(n_branch_linears)
        ]
        self.sigma_layers = [
            (
                store.uniform(f"{prefix}.sigma{i}.w", (d, d), fan_in=d),
                store.zeros(f"{prefix}.sigma{i}.b", (d,)),
            )
            for i in range(n_branch_linears)
        ]


def construct_distribution(
    x: Tensor, params: DistributionConstructorParams
) -> GaussianEmbedding:
    """Summarize a token sequence [L, D] as one utterance-level Gaussian.

    Self-attention with a residual connection, per-token branch linears,
    mean-pooling over tokens, and softplus + floor on the sigma branch.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"expected a rank-2 sequence, got shape {x.data.shape}")
    if x.data.shape[0] == 0:
        raise EmptySequenceError("cannot build a distribution from an empty sequence")
    h = T.add(x, multi_head(x, x, params.attention))
    mu_seq = h
    for w, b in params.mu_layers:
        mu_seq = T.linear(mu_seq, w, b)
    sigma_seq = h
    for w, b in params.sigma_layers:
        sigma_seq = T.linear(sigma_seq, w, b)
    mu = T.mean_pool(mu_seq)
    sigma = T.add(T.softplus(T.mean_pool(sigma_seq)), SIGMA_FLOOR)
    return GaussianEmbedding(mu=mu, sigma=sigma)


def wasserstein2_sq(g1: GaussianEmbedding, g2: GaussianEmbedding) -> Tensor:
    """Squared 2-Wasserstein distance between two diagonal Gaussians.

    For diagonal covariances this is exactly
    ||mu1 - mu2||^2 + ||sigma1 - sigma2||^2.
    """
    if g1.dim != g2.dim:
        raise ShapeError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    dmu = T.sub(g1.mu, g2.mu)
    dsigma = T.sub(g1.sigma, g2.sigma)
    return T.add(T.dot(dmu, dmu), T.dot(dsigma, dsigma))


def similarity(
    g1: GaussianEmbedding, g2: GaussianEmbedding, cfg: ContrastiveConfig
) -> Tensor:
    """-p * W2^2 + q: closer distributions score higher."""
    return T.add(T.mul(wasserstein2_sq(g1, g2), -cfg.p), cfg.q)


def _pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """[N, D] x [M, D] -> [N, M] squared distances via the norm expansion.

    ||a_i - b_j||^2 = ||a_i||^2 + ||b_j||^2 - 2 a_i . b_j, kept in matrix
    form so a batch loss builds O(1) graph nodes instead of O(N^2).
    """
    ones = Tensor(np.ones((a.data.shape[1], 1)))
    row_a = T.matmul(T.mul(a, a), ones)
    row_b = T.transpose(T.matmul(T.mul(b, b), ones))
    cross = T.matmul(a, T.transpose(b))
    return T.sub(T.add(row_a, row_b), T.mul(cross, 2.0))


def similarity_matrix(
    speech: list[GaussianEmbedding],
    text: list[GaussianEmbedding],
    cfg: ContrastiveConfig,
) -> Tensor:
    """[N, N] matrix of similarity(speech[i], text[j], cfg)."""
    mus_s = T.stack_rows([g.mu for g in speech])
    mus_t = T.stack_rows([g.mu for g in text])
    sigmas_s = T.stack_rows([g.sigma for g in speech])
    sigmas_t = T.stack_rows([g.sigma for g in text])
    w2 = T.add(_pairwise_sqdist(mus_s, mus_t), _pairwise_sqdist(sigmas_s, sigmas_t))
    return T.add(T.mul(w2, -cfg.p), cfg.q)


def distribution_contrastive_loss(
    speech: list[GaussianEmbedding],
    text: list[GaussianEmbedding],
    cfg: ContrastiveConfig,
) -> ContrastiveResult:
    """Symmetric InfoNCE where pair i of both lists is the positive."""
    if len(speech) != len(text):
        raise ShapeError(f"batch size mismatch: {len(speech)} vs {len(text)}")
    if len(speech) == 0:
        raise EmptySequenceError("distribution loss over an empty batch")
    dims = {g.dim for g in speech} | {g.dim for g in text}
    if len(dims) != 1:
        raise ShapeError(f"inconsistent embedding dimensions: {sorted(dims)}")
    return symmetric_infonce(similarity_matrix(speech, text, cfg), cfg.tau)
