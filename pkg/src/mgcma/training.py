"""Training harness.

Adam optimization of the pipeline objective, leave-one-session-out cross
validation, the ablation/sequence experiment runner, and embedding export.
Every run is fully determined by its seed: batch order, parameter init,
and fold seeds all derive from it, so repeated runs are bit-identical.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .data import DatasetManifest, FeatureSequence, Pair, PairBatch
from .errors import ContractError, EmptySequenceError, ShapeError
from .metrics import MetricsReport, confusion_matrix, report_from_confusion
from .pipeline import (
    EMOTION_NAMES,
    EmotionLabel,
    MgcmaModel,
    PipelineConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .tensor import Tensor, backward, grad_check

EVAL_BATCH = 64


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings plus the pipeline they train.

    Desk-scale defaults; the published setting (lr 1e-5, batch 4) is
    available through the CLI's paper-scale preset.
    """

    pipeline: PipelineConfig
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ContractError("batch_size and max_epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ContractError("invalid Adam coefficients")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_dict() if f.name == "pipeline" else value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "pipeline" in d and isinstance(d["pipeline"], dict):
            d["pipeline"] = PipelineConfig.from_dict(d["pipeline"])
        return cls(**d)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params) -> AdamState:
    params = list(params)
    return AdamState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params, grads, state: AdamState, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter data."""
    params, grads = list(params), list(grads)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads, and state disagree in length")
    state.t += 1
    correction1 = 1.0 - cfg.beta1**state.t
    correction2 = 1.0 - cfg.beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} vs param shape {p.data.shape}")
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state


@dataclass
class TrainResult:
    model: MgcmaModel
    log: list


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    checkpoint_path=None,
    log_path=None,
) -> TrainResult:
    """Mini-batch training over seeded shuffles; returns model and epoch log.

    Each log record carries the epoch's size-weighted mean loss terms and
    the accuracy of the predictions made during the training pass itself.
    """
    if manifest.dim != cfg.pipeline.model_dim:
        raise ShapeError(
            f"dataset dim {manifest.dim} does not match model dim {cfg.pipeline.model_dim}"
        )
    pairs = manifest.load_all()
    if not pairs:
        raise EmptySequenceError("cannot train on an empty manifest")
    model = MgcmaModel(cfg.pipeline, rng_seed=cfg.seed)
    params = list(model.store.parameters())
    state = adam_init(params)
    num_classes = cfg.pipeline.num_classes
    n = len(pairs)
    log = []
    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = {"l_da": 0.0, "l_ia": 0.0, "l_ce": 0.0, "total": 0.0}
        confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
        for start in range(0, n, cfg.batch_size):
            chunk = [pairs[i] for i in order[start : start + cfg.batch_size]]
            batch = PairBatch(pairs=chunk)
            model.store.zero_grad()
            logits, losses = model.forward(batch)
            backward(losses.total)
            grads = [
                p.grad if p.grad is not None else np.zeros_like(p.data) for p in params
            ]
            adam_step(params, grads, state, cfg)
            for key in sums:
                sums[key] += getattr(losses, key).item() * len(chunk)
            true = [int(pair.label) for pair in chunk]
            confusion += confusion_matrix(true, predict(logits), num_classes)
        epoch_metrics = report_from_confusion(confusion)
        log.append(
            {
                "epoch": epoch,
                "l_da": sums["l_da"] / n,
                "l_ia": sums["l_ia"] / n,
                "l_ce": sums["l_ce"] / n,
                "total": sums["total"] / n,
                "train_wa": epoch_metrics.wa,
                "train_ua": epoch_metrics.ua,
            }
        )
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as f:
            for record in log:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    return TrainResult(model=model, log=log)


def evaluate(model_or_path, manifest: DatasetManifest) -> MetricsReport:
    """Confusion-matrix metrics of a trained model on a manifest."""
    model = (
        model_or_path
        if isinstance(model_or_path, MgcmaModel)
        else load_checkpoint(model_or_path)
    )
    if manifest.dim != model.cfg.model_dim:
        raise ShapeError(
            f"dataset dim {manifest.dim} does not match model dim {model.cfg.model_dim}"
        )
    pairs = manifest.load_all()
    if not pairs:
        raise EmptySequenceError("empty test set")
    num_classes = model.cfg.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for start in range(0, len(pairs), EVAL_BATCH):
        chunk = pairs[start : start + EVAL_BATCH]
        logits = model.infer_logits(PairBatch(pairs=chunk))
        true = [int(pair.label) for pair in chunk]
        confusion += confusion_matrix(true, predict(logits), num_classes)
    return report_from_confusion(confusion)


def _fold_seed(master_seed: int, fold_index: int) -> int:
    # platform-stable derivation of independent per-fold streams
    return int(np.random.SeedSequence([master_seed, fold_index]).generate_state(1)[0])


def _run_fold(args):
    fold_index, train_manifest, test_manifest, cfg = args
    fold_cfg = replace(cfg, seed=_fold_seed(cfg.seed, fold_index))
    result = train(train_manifest, fold_cfg)
    report = evaluate(result.model, test_manifest)
    return report


def cross_validate(manifest: DatasetManifest, cfg: TrainConfig) -> MetricsReport:
    """Leave-one-session-out: train per fold, pool confusions, then score.

    MGCMA_THREADS > 1 runs folds in separate processes; results are merged
    in fold order either way, so the report does not depend on the setting.
    """
    from .data import split_folds

    folds = split_folds(manifest)
    jobs = [
        (i, train_manifest, test_manifest, cfg)
        for i, (train_manifest, test_manifest) in enumerate(folds)
    ]
    threads = int(os.environ.get("MGCMA_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            fold_reports = list(pool.map(_run_fold, jobs))
    else:
        fold_reports = [_run_fold(job) for job in jobs]
    pooled = np.sum([r.confusion for r in fold_reports], axis=0)
    return report_from_confusion(pooled, per_fold=tuple(fold_reports))


# Table rows for the ablation and stage-sequence experiments: S0 is the full
# default order, S1-S3 drop one stage, S4 drops all three, S5-S9 are the
# remaining orderings of the full stage set.
ABLATION_VARIANTS = {
    "S0": ("DAM", "TAM", "IAM"),
    "S1": ("TAM", "IAM"),
    "S2": ("DAM", "IAM"),
    "S3": ("DAM", "TAM"),
    "S4": (),
    "S5": ("DAM", "IAM", "TAM"),
    "S6": ("IAM", "DAM", "TAM"),
    "S7": ("IAM", "TAM", "DAM"),
    "S8": ("TAM", "DAM", "IAM"),
    "S9": ("TAM", "IAM", "DAM"),
}


def describe_variant(system: str) -> str:
    order = ABLATION_VARIANTS[system]
    if system == "S4":
        return "w/o (DAM + TAM + IAM)"
    if len(order) == 2:
        (dropped,) = set(ABLATION_VARIANTS["S0"]) - set(order)
        return f"w/o {dropped}"
    return " + ".join(order)


@dataclass
class AblationRow:
    system: str
    configuration: str
    report: MetricsReport


def run_ablations(manifest: DatasetManifest, cfg: TrainConfig, variants) -> list:
    """Cross-validate each variant with the shared seed; rows in input order."""
    rows = []
    for system in variants:
        if system not in ABLATION_VARIANTS:
            raise ContractError(f"unknown ablation variant: {system!r}")
        variant_cfg = replace(
            cfg, pipeline=replace(cfg.pipeline, stage_order=ABLATION_VARIANTS[system])
        )
        report = cross_validate(manifest, variant_cfg)
        rows.append(
            AblationRow(system=system, configuration=describe_variant(system), report=report)
        )
    return rows


def write_ablation_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["system", "configuration", "wa", "ua"])
        for row in rows:
            writer.writerow(
                [row.system, row.configuration, f"{row.report.wa:.6f}", f"{row.report.ua:.6f}"]
            )


# each audit component pairs a loss term with the smallest stage set that
# exercises it; "total" runs the full objective end to end
AUDIT_COMPONENTS = (
    ("l_da", ("DAM",)),
    ("l_ia", ("TAM", "IAM")),
    ("l_ce", ()),
    ("total", ("DAM", "TAM", "IAM")),
)


def gradient_audit(
    seed: int = 0,
    model_dim: int = 16,
    num_heads: int = 2,
    n_blocks: int = 1,
    batch: int = 3,
    len_speech: int = 5,
    len_text: int = 4,
) -> list:
    """Central-difference check of every loss term; returns (name, max_err) rows."""
    rng = np.random.default_rng(seed)
    results = []
    for name, stages in AUDIT_COMPONENTS:
        cfg = PipelineConfig(
            stage_order=stages,
            model_dim=model_dim,
            num_heads=num_heads,
            n_blocks=n_blocks,
        )
        model = MgcmaModel(cfg, rng_seed=seed)
        pairs = []
        for i in range(batch):
            uid = f"utt{i:04d}"
            session = (i % 5) + 1
            pairs.append(
                Pair(
                    speech=FeatureSequence(
                        uid, "speech", Tensor(rng.normal(size=(len_speech, model_dim))), session
                    ),
                    text=FeatureSequence(
                        uid, "text", Tensor(rng.normal(size=(len_text, model_dim))), session
                    ),
                    label=EmotionLabel(i % 4),
                )
            )
        batch_obj = PairBatch(pairs=pairs)

        def objective():
            _, losses = model.forward(batch_obj)
            return getattr(losses, name)

        results.append((name, grad_check(objective, list(model.store.parameters()))))
    return results


def export_embeddings(model_or_path, manifest: DatasetManifest, tap: str, out_path) -> int:
    """One CSV row per utterance per modality at the chosen tap; returns rows written."""
    model = (
        model_or_path
        if isinstance(model_or_path, MgcmaModel)
        else load_checkpoint(model_or_path)
    )
    pairs = manifest.load_all()
    if not pairs:
        raise EmptySequenceError("nothing to export")
    dim = model.cfg.model_dim
    written = 0
    with open(out_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["utterance_id", "modality", "label", *(f"v{i}" for i in range(dim))])
        for start in range(0, len(pairs), EVAL_BATCH):
            chunk = pairs[start : start + EVAL_BATCH]
            speech, text = model.embed(PairBatch(pairs=chunk), tap)
            for pair, s_vec, t_vec in zip(chunk, speech, text):
                label = EMOTION_NAMES[int(pair.label)]
                writer.writerow(
                    [pair.speech.utterance_id, "speech", label]
                    + [repr(float(v)) for v in s_vec]
                )
                writer.writerow(
                    [pair.text.utterance_id, "text", label]
                    + [repr(float(v)) for v in t_vec]
                )
                written += 2
    return written
