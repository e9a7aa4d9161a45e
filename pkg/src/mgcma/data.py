"""Feature-file ingestion, synthetic dataset generation, and fold splitting.

Feature files are a small binary format (magic "MGCF"): float32 on disk,
widened to float64 in memory. A dataset is a JSON Lines manifest whose
records point at one speech file and one text file per utterance; all
metadata (ids, labels, sessions) lives in the manifest, not in the files.
The synthetic generator is a desk-scale stand-in for pretrained encoders:
each class gets an anchor vector, each modality a fixed random linear map,
and tokens are noisy images of the class anchor.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, CorruptionError, FormatError, ShapeError
from .pipeline import EmotionLabel
from .tensor import Tensor

FEATURE_MAGIC = b"MGCF"
FEATURE_VERSION = 1
MANIFEST_FORMAT = "mgcma-manifest"
MANIFEST_VERSION = 1
SESSIONS = (1, 2, 3, 4, 5)
MODALITIES = ("speech", "text")


@dataclass
class FeatureSequence:
    """One utterance in one modality: [L, D] tokens plus manifest metadata."""

    utterance_id: str
    modality: str
    tokens: Tensor
    session: int

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ContractError(f"unknown modality: {self.modality!r}")
        if self.session not in SESSIONS:
            raise ContractError(f"session must be in 1..5, got {self.session}")
        if self.tokens.data.ndim != 2 or self.tokens.data.shape[0] < 1:
            raise ShapeError(f"tokens must be [L >= 1, D], got {self.tokens.data.shape}")

    @property
    def length(self) -> int:
        return self.tokens.data.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.data.shape[1]


@dataclass
class Pair:
    speech: FeatureSequence
    text: FeatureSequence
    label: EmotionLabel

    def __post_init__(self):
        if self.speech.utterance_id != self.text.utterance_id:
            raise ContractError(
                f"pair mixes utterances {self.speech.utterance_id!r} "
                f"and {self.text.utterance_id!r}"
            )
        if self.speech.session != self.text.session:
            raise ContractError("pair mixes sessions")


@dataclass
class PairBatch:
    pairs: list

    def __post_init__(self):
        for pair in self.pairs:
            if not isinstance(pair, Pair):
                raise ContractError("PairBatch holds Pair objects only")

    def __len__(self) -> int:
        return len(self.pairs)


def write_feature_file(seq: FeatureSequence, path) -> None:
    """Header (magic, u32 version, u32 L, u32 D) then float32 LE rows."""
    arr = seq.tokens.data
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, arr.shape[0], arr.shape[1]))
        f.write(arr.astype("<f4").tobytes(order="C"))


def read_feature_file(path, utterance_id=None, modality="speech", session=1) -> FeatureSequence:
    """Inverse of write_feature_file; metadata comes from the caller."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"bad feature-file magic {magic!r} in {path}")
        header = f.read(12)
        if len(header) != 12:
            raise CorruptionError(f"truncated header in {path}")
        version, length, dim = struct.unpack("<III", header)
        if version != FEATURE_VERSION:
            raise FormatError(f"unsupported feature-file version {version}")
        expected = 4 * length * dim
        payload = f.read(expected)
        if len(payload) != expected:
            raise CorruptionError(
                f"truncated payload in {path}: expected {expected} bytes, got {len(payload)}"
            )
        if f.read(1) != b"":
            raise CorruptionError(f"trailing bytes in {path}")
    tokens = np.frombuffer(payload, dtype="<f4").reshape(length, dim).astype(np.float64)
    return FeatureSequence(
        utterance_id=utterance_id if utterance_id is not None else path.stem,
        modality=modality,
        tokens=Tensor(tokens),
        session=session,
    )


@dataclass
class ManifestRecord:
    utterance_id: str
    label: EmotionLabel
    session: int
    speech_path: str
    text_path: str
    len_speech: int
    len_text: int


@dataclass
class DatasetManifest:
    """Record list plus the declared feature dim; paths are root-relative."""

    dim: int
    records: list
    root: Path

    def load_pair(self, record: ManifestRecord) -> Pair:
        seqs = {}
        for modality, rel_path, expected_len in (
            ("speech", record.speech_path, record.len_speech),
            ("text", record.text_path, record.len_text),
        ):
            seq = read_feature_file(
                self.root / rel_path,
                utterance_id=record.utterance_id,
                modality=modality,
                session=record.session,
            )
            if seq.dim != self.dim:
                raise FormatError(
                    f"{rel_path}: dim {seq.dim} disagrees with manifest dim {self.dim}"
                )
            if seq.length != expected_len:
                raise FormatError(
                    f"{rel_path}: length {seq.length} disagrees with manifest ({expected_len})"
                )
            seqs[modality] = seq
        return Pair(speech=seqs["speech"], text=seqs["text"], label=record.label)

    def load_all(self) -> list:
        return [self.load_pair(r) for r in self.records]

    def sessions_present(self) -> set:
        return {r.session for r in self.records}


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        header = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "dim": manifest.dim}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            record = {
                "utterance_id": r.utterance_id,
                "label": r.label.name.lower(),
                "session": r.session,
                "speech_path": r.speech_path,
                "text_path": r.text_path,
                "len_speech": r.len_speech,
                "len_text": r.len_text,
            }
            f.write(json.dumps(record, sort_keys=True) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise FormatError(f"empty manifest: {path}")
    header = json.loads(lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"not a dataset manifest: {path}")
    if header.get("version") != MANIFEST_VERSION:
        raise FormatError(f"unsupported manifest version {header.get('version')}")
    records = []
    for line in lines[1:]:
        d = json.loads(line)
        records.append(
            ManifestRecord(
                utterance_id=d["utterance_id"],
                label=EmotionLabel.from_name(d["label"]),
                session=int(d["session"]),
                speech_path=d["speech_path"],
                text_path=d["text_path"],
                len_speech=int(d["len_speech"]),
                len_text=int(d["len_text"]),
            )
        )
    return DatasetManifest(dim=int(header["dim"]), records=records, root=path.parent)


def generate_synthetic(
    out_dir,
    n_pairs: int,
    n_classes: int = 4,
    dim: int = 32,
    len_speech: int = 10,
    len_text: int = 8,
    separation: float = 1.0,
    seed: int = 0,
    session_shift: float = 0.0,
) -> DatasetManifest:
    """Write a synthetic paired dataset and its manifest; returns the manifest.

    Class anchors are seed-deterministic normal draws scaled by
    `separation`; each modality applies its own fixed random linear map to
    the anchor and adds unit Gaussian noise per token. Labels cycle through
    the classes and sessions cycle through 1..5, so both are balanced up to
    a remainder. `session_shift` adds a per-session bias vector (off by
    default; the draw happens either way so the stream is knob-invariant).
    """
    if separation < 0:
        raise ContractError(f"separation must be >= 0, got {separation}")
    if n_classes < 2 or n_classes > len(EmotionLabel):
        raise ContractError(f"n_classes must be in 2..{len(EmotionLabel)}, got {n_classes}")
    if n_pairs < n_classes:
        raise ContractError(f"need at least {n_classes} pairs, got {n_pairs}")
    if dim < 1 or len_speech < 1 or len_text < 1:
        raise ContractError("dim and sequence lengths must be >= 1")

    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    anchors = separation * rng.normal(size=(n_classes, dim))
    map_speech = rng.normal(size=(dim, dim)) / math.sqrt(dim)
    map_text = rng.normal(size=(dim, dim)) / math.sqrt(dim)
    session_bias = rng.normal(size=(len(SESSIONS), dim))

    records = []
    for j in range(n_pairs):
        label = EmotionLabel(j % n_classes)
        session = SESSIONS[j % len(SESSIONS)]
        utterance_id = f"utt{j:04d}"
        bias = session_shift * session_bias[session - 1]
        centers = {
            "speech": anchors[int(label)] @ map_speech + bias,
            "text": anchors[int(label)] @ map_text + bias,
        }
        lengths = {"speech": len_speech, "text": len_text}
        rel_paths = {}
        for modality in MODALITIES:
            tokens = centers[modality] + rng.normal(size=(lengths[modality], dim))
            seq = FeatureSequence(
                utterance_id=utterance_id,
                modality=modality,
                tokens=Tensor(tokens),
                session=session,
            )
            rel = f"features/{utterance_id}.{modality}.mgcf"
            write_feature_file(seq, out_dir / rel)
            rel_paths[modality] = rel
        records.append(
            ManifestRecord(
                utterance_id=utterance_id,
                label=label,
                session=session,
                speech_path=rel_paths["speech"],
                text_path=rel_paths["text"],
                len_speech=len_speech,
                len_text=len_text,
            )
        )

    manifest = DatasetManifest(dim=dim, records=records, root=out_dir)
    write_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest


def split_folds(manifest: DatasetManifest) -> list:
    """Leave-one-session-out: fold i holds out session i for testing."""
    present = manifest.sessions_present()
    missing = [s for s in SESSIONS if s not in present]
    if missing:
        raise ContractError(f"sessions missing from manifest: {missing}")
    folds = []
    for session in SESSIONS:
        train = [r for r in manifest.records if r.session != session]
        test = [r for r in manifest.records if r.session == session]
        folds.append(
            (
                DatasetManifest(dim=manifest.dim, records=train, root=manifest.root),
                DatasetManifest(dim=manifest.dim, records=test, root=manifest.root),
            )
        )
    return folds
