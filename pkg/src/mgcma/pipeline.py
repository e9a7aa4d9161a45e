"""Model pipeline.

Composes the alignment stages in a configurable order over a batch of
(speech, text) token sequences and finishes with a pooled classifier head.
The distribution and instance stages attach a loss and pass the sequences
through unchanged; the token stage transforms them. The total objective is
the unweighted sum of the two alignment losses and the cross-entropy term.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields
from enum import IntEnum
from typing import TYPE_CHECKING, Optional

import numpy as np

from . import tensor as T
from .attention import AttentionConfig
from .contrastive import ContrastiveResult
from .distribution import (
    ContrastiveConfig,
    DistributionConstructorParams,
    construct_distribution,
    distribution_contrastive_loss,
)
from .errors import (
    ContractError,
    CorruptionError,
    EmptySequenceError,
    FormatError,
    ShapeError,
)
from .instance_align import instance_contrastive_loss, pool_instance
from .tensor import ParameterStore, Tensor, no_grad
from .token_align import TokenAlignmentConfig, TokenAlignmentParams, token_align

if TYPE_CHECKING:
    from .data import PairBatch

STAGE_DAM = "DAM"
STAGE_TAM = "TAM"
STAGE_IAM = "IAM"
_KNOWN_STAGES = (STAGE_DAM, STAGE_TAM, STAGE_IAM)


class EmotionLabel(IntEnum):
    """Four-way label set with stable integer codes."""

    ANGRY = 0
    HAPPY = 1
    SAD = 2
    NEUTRAL = 3

    @classmethod
    def from_name(cls, name: str) -> "EmotionLabel":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ContractError(f"unknown emotion label: {name!r}") from None


EMOTION_NAMES = tuple(label.name.lower() for label in EmotionLabel)


@dataclass(frozen=True)
class PipelineConfig:
    """Stage wiring plus model geometry.

    stage_order lists the enabled stages in execution order; a stage left
    out is disabled entirely (its loss is exactly zero and it creates no
    parameters). An empty order is the bare pooled classifier.
    """

    stage_order: tuple = (STAGE_DAM, STAGE_TAM, STAGE_IAM)
    model_dim: int = 64
    num_heads: int = 4
    n_blocks: int = 2
    tau: float = 0.07
    p: float = 1.0
    q: float = 0.0
    num_classes: int = 4
    normalize_instances: bool = True
    token_layer_norm: bool = False
    share_token_branches: bool = False
    n_branch_linears: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stage_order", tuple(self.stage_order))
        for stage in self.stage_order:
            if stage not in _KNOWN_STAGES:
                raise ContractError(f"unknown stage: {stage!r}")
        if len(set(self.stage_order)) != len(self.stage_order):
            raise ContractError(f"duplicate stage in order: {self.stage_order}")
        if self.num_classes < 2:
            raise ContractError(f"num_classes must be >= 2, got {self.num_classes}")
        # delegates divisibility and positivity checks
        AttentionConfig(self.model_dim, self.num_heads)
        ContrastiveConfig(p=self.p, q=self.q, tau=self.tau)
        if STAGE_TAM in self.stage_order and self.n_blocks < 1:
            raise ContractError(f"n_blocks must be >= 1, got {self.n_blocks}")

    @property
    def enabled_stages(self) -> frozenset:
        return frozenset(self.stage_order)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    """Objective terms; per-direction contrastive terms retained for tests."""

    l_da: Tensor
    l_ia: Tensor
    l_ce: Tensor
    total: Tensor
    da_s2t: Optional[Tensor] = None
    da_t2s: Optional[Tensor] = None
    ia_s2t: Optional[Tensor] = None
    ia_t2s: Optional[Tensor] = None


class MgcmaModel:
    """Parameter bundle plus the forward pass.

    Parameters are created in a fixed order (distribution constructors,
    token stack, classifier) regardless of stage_order, so two models with
    the same seed and the same enabled set share identical initial weights
    even when the execution order differs.
    """

    def __init__(self, cfg: PipelineConfig, rng_seed: int = 0):
        self.cfg = cfg
        self.store = ParameterStore(rng_seed=rng_seed)
        att_cfg = AttentionConfig(cfg.model_dim, cfg.num_heads)
        self.dam_speech = self.dam_text = None
        self.tam = None
        if STAGE_DAM in cfg.enabled_stages:
            self.dam_speech = DistributionConstructorParams(
                self.store, "dam.speech", att_cfg, cfg.n_branch_linears
            )
            self.dam_text = DistributionConstructorParams(
                self.store, "dam.text", att_cfg, cfg.n_branch_linears
            )
        if STAGE_TAM in cfg.enabled_stages:
            self.tam = TokenAlignmentParams(
                self.store,
                "tam",
                TokenAlignmentConfig(
                    model_dim=cfg.model_dim,
                    num_heads=cfg.num_heads,
                    n_blocks=cfg.n_blocks,
                    layer_norm=cfg.token_layer_norm,
                    share_branches=cfg.share_token_branches,
                ),
            )
        d2 = 2 * cfg.model_dim
        self.clf_w = self.store.uniform("clf.w", (d2, cfg.num_classes), fan_in=d2)
        self.clf_b = self.store.zeros("clf.b", (cfg.num_classes,))

    def _check_batch(self, batch: "PairBatch") -> None:
        if len(batch.pairs) == 0:
            raise EmptySequenceError("forward over an empty batch")
        d = self.cfg.model_dim
        for pair in batch.pairs:
            for seq in (pair.speech, pair.text):
                if seq.tokens.data.shape[1] != d:
                    raise ShapeError(
                        f"feature dim {seq.tokens.data.shape[1]} does not match model dim {d}"
                    )

    def _run_stages(self, batch: "PairBatch", with_losses: bool):
        """Stage loop; returns final sequences plus the two loss branches."""
        cur_s = [pair.speech.tokens for pair in batch.pairs]
        cur_t = [pair.text.tokens for pair in batch.pairs]
        da_res: Optional[ContrastiveResult] = None
        ia_res: Optional[ContrastiveResult] = None
        for stage in self.cfg.stage_order:
            if stage == STAGE_TAM:
                aligned = [token_align(s, t, self.tam) for s, t in zip(cur_s, cur_t)]
                cur_s = [a.speech for a in aligned]
                cur_t = [a.text for a in aligned]
            elif not with_losses:
                continue
            elif stage == STAGE_DAM:
                gauss_s = [construct_distribution(x, self.dam_speech) for x in cur_s]
                gauss_t = [construct_distribution(x, self.dam_text) for x in cur_t]
                da_res = distribution_contrastive_loss(
                    gauss_s,
                    gauss_t,
                    ContrastiveConfig(p=self.cfg.p, q=self.cfg.q, tau=self.cfg.tau),
                )
            elif stage == STAGE_IAM:
                inst_s = [pool_instance(x, self.cfg.normalize_instances) for x in cur_s]
                inst_t = [pool_instance(x, self.cfg.normalize_instances) for x in cur_t]
                ia_res = instance_contrastive_loss(
                    inst_s,
                    inst_t,
                    self.cfg.tau,
                    require_normalized=self.cfg.normalize_instances,
                )
        return cur_s, cur_t, da_res, ia_res

    def _logits(self, cur_s, cur_t) -> Tensor:
        pooled = [
            T.concat([T.mean_pool(s), T.mean_pool(t)], axis=0)
            for s, t in zip(cur_s, cur_t)
        ]
        return T.linear(T.stack_rows(pooled), self.clf_w, self.clf_b)

    def forward(self, batch: "PairBatch") -> tuple:
        """Full pass: (logits [N x num_classes], LossBreakdown)."""
        self._check_batch(batch)
        cur_s, cur_t, da_res, ia_res = self._run_stages(batch, with_losses=True)
        logits = self._logits(cur_s, cur_t)
        labels = np.array([int(pair.label) for pair in batch.pairs])
        picked = T.take_per_row(T.log_softmax_rows(logits), labels)
        l_ce = T.mul(T.sum_all(picked), -1.0 / len(batch.pairs))
        l_da = da_res.loss if da_res is not None else Tensor(0.0)
        l_ia = ia_res.loss if ia_res is not None else Tensor(0.0)
        total = T.add(T.add(l_da, l_ia), l_ce)
        breakdown = LossBreakdown(
            l_da=l_da,
            l_ia=l_ia,
            l_ce=l_ce,
            total=total,
            da_s2t=da_res.s2t if da_res is not None else None,
            da_t2s=da_res.t2s if da_res is not None else None,
            ia_s2t=ia_res.s2t if ia_res is not None else None,
            ia_t2s=ia_res.t2s if ia_res is not None else None,
        )
        return logits, breakdown

    def infer_logits(self, batch: "PairBatch") -> np.ndarray:
        """Prediction-only path: loss branches are skipped, no graph is kept."""
        self._check_batch(batch)
        with no_grad():
            cur_s, cur_t, _, _ = self._run_stages(batch, with_losses=False)
            return self._logits(cur_s, cur_t).data

    def embed(self, batch: "PairBatch", tap: str) -> tuple:
        """Per-utterance vectors at a chosen tap point.

        encoder: mean-pooled raw input features; post_alignment: mean-pooled
        sequences after all stages; pooled: instance vectors as the instance
        stage sees them. Returns (speech [N x D], text [N x D]) arrays.
        """
        self._check_batch(batch)
        with no_grad():
            if tap == "encoder":
                cur_s = [pair.speech.tokens for pair in batch.pairs]
                cur_t = [pair.text.tokens for pair in batch.pairs]
                reduce = T.mean_pool
            elif tap == "post_alignment":
                cur_s, cur_t, _, _ = self._run_stages(batch, with_losses=False)
                reduce = T.mean_pool
            elif tap == "pooled":
                cur_s, cur_t, _, _ = self._run_stages(batch, with_losses=False)

                def reduce(x):
                    return pool_instance(x, self.cfg.normalize_instances).v

            else:
                raise ContractError(f"unknown tap point: {tap!r}")
            speech = np.stack([reduce(x).data for x in cur_s])
            text = np.stack([reduce(x).data for x in cur_t])
        return speech, text


def predict(logits) -> np.ndarray:
    """Argmax per row; ties resolve to the lowest class code."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if not np.all(np.isfinite(data)):
        raise ContractError("logits must be finite")
    return np.argmax(data, axis=1)


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, u64-length-prefixed config JSON,
# then every parameter in store order as (u32 name length, name bytes,
# u32 rank, u64 extents, float64 little-endian payload)

CHECKPOINT_MAGIC = b"MGCMAMDL"
CHECKPOINT_VERSION = 1


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptionError(f"expected {n} bytes, got {len(buf)}")
    return buf


def save_checkpoint(model: MgcmaModel, path) -> None:
    cfg_json = json.dumps(
        model.cfg.to_dict(), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(cfg_json)))
        f.write(cfg_json)
        for name, param in model.store.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            arr = param.data
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<Q", extent))
            f.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path) -> MgcmaModel:
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<Q", _read_exact(f, 8))
        cfg = PipelineConfig.from_dict(json.loads(_read_exact(f, cfg_len).decode("utf-8")))
        model = MgcmaModel(cfg, rng_seed=0)
        for expected_name, param in model.store.items():
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            if name != expected_name:
                raise CorruptionError(
                    f"parameter order mismatch: expected {expected_name!r}, found {name!r}"
                )
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            extents = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank)) if rank else ()
            if tuple(extents) != param.data.shape:
                raise CorruptionError(
                    f"shape mismatch for {name!r}: {extents} vs {param.data.shape}"
                )
            count = int(np.prod(extents, dtype=np.int64)) if rank else 1
            payload = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8").reshape(extents)
            if not np.all(np.isfinite(payload)):
                raise CorruptionError(f"non-finite values in parameter {name!r}")
            param.data[...] = payload
        if f.read(1) != b"":
            raise CorruptionError("trailing bytes after last parameter")
    return model
