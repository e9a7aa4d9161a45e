"""Token-level alignment.

A stack of blocks, each running self-attention then cross-attention on both
modality branches with a residual connection around every sublayer. Cross
attention takes queries from the branch's own modality and keys/values from
the other one, producing text-aware speech tokens and speech-aware text
tokens of unchanged length.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .attention import AttentionConfig, AttentionParams, multi_head
from .errors import EmptySequenceError, ShapeError
from .tensor import ParameterStore, Tensor


@dataclass(frozen=True)
class TokenAlignmentConfig:
    """Block count plus attention geometry and two structural switches.

    `layer_norm` adds a parameter-free normalization after each residual;
    `share_branches` makes the two modality branches reuse one weight set.
    Both default off: the minimal structure is one self-attention and one
    cross-attention per branch per block, residuals only.
    """

    model_dim: int
    num_heads: int
    n_blocks: int
    layer_norm: bool = False
    share_branches: bool = False

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ShapeError(f"n_blocks must be >= 1, got {self.n_blocks}")
        AttentionConfig(self.model_dim, self.num_heads)

    @property
    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(self.model_dim, self.num_heads)


@dataclass
class _Block:
    self_speech: AttentionParams
    cross_speech: AttentionParams
    self_text: AttentionParams
    cross_text: AttentionParams


@dataclass
class AlignedPair:
    speech: Tensor
    text: Tensor


class TokenAlignmentParams:
    """n_blocks x 2 branches x (self, cross) attention instances.

    With share_branches the text branch aliases the speech branch's
    parameters, halving the count.
    """

    def __init__(self, store: ParameterStore, prefix: str, cfg: TokenAlignmentConfig):
        self.cfg = cfg
        att = cfg.attention_config
        self.blocks = []
        for i in range(cfg.n_blocks):
            self_s = AttentionParams(store, f"{prefix}.b{i}.self_s", att)
            cross_s = AttentionParams(store, f"{prefix}.b{i}.cross_s", att)
            if cfg.share_branches:
                self_t, cross_t = self_s, cross_s
            else:
                self_t = AttentionParams(store, f"{prefix}.b{i}.self_t", att)
                cross_t = AttentionParams(store, f"{prefix}.b{i}.cross_t", att)
            self.blocks.append(_Block(self_s, cross_s, self_t, cross_t))


def token_align(x_s: Tensor, x_t: Tensor, params: TokenAlignmentParams) -> AlignedPair:
    """Run both branches through every block; sequence lengths are preserved."""
    d = params.cfg.model_dim
    for name, x in (("speech", x_s), ("text", x_t)):
        if x.data.ndim != 2 or x.data.shape[1] != d:
            raise ShapeError(f"{name} input must be [L, {d}], got {x.data.shape}")
        if x.data.shape[0] == 0:
            raise EmptySequenceError(f"{name} sequence is empty")

    def sublayer(x_q, x_kv, att):
        out = T.add(x_q, multi_head(x_q, x_kv, att))
        return T.layer_norm(out) if params.cfg.layer_norm else out

    cur_s, cur_t = x_s, x_t
    for block in params.blocks:
        s_self = sublayer(cur_s, cur_s, block.self_speech)
        t_self = sublayer(cur_t, cur_t, block.self_text)
        cur_s = sublayer(s_self, t_self, block.cross_speech)
        cur_t = sublayer(t_self, s_self, block.cross_text)
    return AlignedPair(speech=cur_s, text=cur_t)
