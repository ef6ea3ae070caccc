"""Prototype-based training signal for the frame scrutinize head.

Prototypes are per-category centroids of high-confidence recognizer
features. Each frame's guiding saliency score g in [0, 1] comes from a
softmax over negated Euclidean distances to all prototypes, evaluated at
the video's true category; the per-frame pseudo label puts mass g on the
video category and 1 - g on the appended non-salient category, so clearly
off-topic frames act as negative samples instead of noisy positives.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import softmax_values
from .data import VideoRecord, atomic_write_text, read_feature_file, write_feature_file

DEFAULT_EPSILON_PERCENT = 30.0


@dataclass
class PrototypeBank:
    """Per-category prototype vectors in recognizer (guiding) feature space."""

    prototypes: np.ndarray  # (C, D_g)
    epsilon_percent: float = DEFAULT_EPSILON_PERCENT

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2:
            raise ValueError(f"prototypes must be (C, D_g), got {self.prototypes.shape}")
        if not np.all(np.isfinite(self.prototypes)):
            raise ValueError("prototypes contain non-finite values")

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


def _top_confident_frames(record: VideoRecord, epsilon_percent: float) -> np.ndarray:
    """Indices of the frames pooled into this video's guiding feature.

    Confidence is the softmax probability of the true category. Frames whose
    argmax matches the label form the candidate pool; from it the top
    max(1, ceil(eps% * pool size)) by confidence are kept. A video with no
    correctly predicted frame falls back to ranking all frames.
    """
    conf = softmax_values(record.recognizer_logits, axis=1)[:, record.label]
    correct = np.flatnonzero(record.recognizer_logits.argmax(axis=1) == record.label)
    pool = correct if correct.size > 0 else np.arange(record.num_frames)
    keep = max(1, math.ceil(epsilon_percent / 100.0 * pool.size))
    order = pool[np.argsort(-conf[pool], kind="stable")]
    return order[:keep]


def build_prototypes(records: Sequence[VideoRecord], num_classes: int,
                     epsilon_percent: float = DEFAULT_EPSILON_PERCENT) -> PrototypeBank:
    """Average the per-video guiding features into per-category prototypes.

    Videos weigh equally within their category; accumulation runs in
    video_id order so the result is independent of input ordering.
    """
    if not 0 < epsilon_percent <= 100:
        raise ValueError(f"epsilon_percent must be in (0, 100], got {epsilon_percent}")
    sums: dict[int, np.ndarray] = {}
    counts = np.zeros(num_classes, dtype=np.int64)
    for record in sorted(records, key=lambda r: r.video_id):
        if record.label >= num_classes:
            raise ValueError(f"{record.video_id}: label {record.label} >= C={num_classes}")
        chosen = _top_confident_frames(record, epsilon_percent)
        video_feature = record.guiding_features[chosen].mean(axis=0)
        if record.label in sums:
            sums[record.label] += video_feature
        else:
            sums[record.label] = video_feature.copy()
        counts[record.label] += 1
    missing = np.flatnonzero(counts == 0)
    if missing.size > 0:
        raise ValueError(f"no videos for categories {missing.tolist()}; "
                         "cannot build prototypes")
    prototypes = np.stack([sums[c] / counts[c] for c in range(num_classes)])
    return PrototypeBank(prototypes, epsilon_percent)


def scores_from_distances(distances: np.ndarray, label: int) -> np.ndarray:
    """softmax over categories of the negated distances, taken at ``label``.

    Negation makes nearer prototypes score higher; monotonicity in the
    true-category distance holds row by row.
    """
    distances = np.asarray(distances, dtype=np.float64)
    if not 0 <= label < distances.shape[1]:
        raise ValueError(f"label {label} out of range for {distances.shape[1]} categories")
    return softmax_values(-distances, axis=1)[:, label]


def guiding_saliency_scores(record: VideoRecord, bank: PrototypeBank) -> np.ndarray:
    """Per-frame guiding saliency g in [0, 1] from prototype distances."""
    if record.guiding_features.shape[1] != bank.prototypes.shape[1]:
        raise ValueError(
            f"{record.video_id}: guiding width {record.guiding_features.shape[1]} "
            f"does not match prototype width {bank.prototypes.shape[1]}")
    distances = np.linalg.norm(
        record.guiding_features[:, None, :] - bank.prototypes[None, :, :], axis=2)
    return scores_from_distances(distances, record.label)


def guiding_scores_response_variant(record: VideoRecord) -> np.ndarray:
    """Alternate guiding score: the recognizer's softmax response at the
    true category (kept for comparison against the prototype route)."""
    return softmax_values(record.recognizer_logits, axis=1)[:, record.label]


@dataclass
class PseudoLabel:
    """Soft per-frame target over C+1 categories."""

    target: np.ndarray  # (C+1,)
    guiding_score: float

    def validate(self) -> None:
        if self.target.min() < 0:
            raise ValueError(f"pseudo label has negative entry {self.target.min()}")
        if abs(float(self.target.sum()) - 1.0) > 1e-9:
            raise ValueError(f"pseudo label sums to {self.target.sum()}, expected 1")


def ns_pseudo_label_matrix(g: np.ndarray, label: int, num_classes: int) -> np.ndarray:
    """(T, C+1) targets: g at the video category, 1 - g at the non-salient slot."""
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if g.min() < -1e-9 or g.max() > 1.0 + 1e-9:
        raise ValueError(f"guiding scores outside [0, 1]: min {g.min()}, max {g.max()}")
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for C={num_classes}")
    g = np.clip(g, 0.0, 1.0)
    targets = np.zeros((g.shape[0], num_classes + 1))
    targets[:, label] = g
    targets[:, num_classes] = 1.0 - g
    return targets


def ns_pseudo_labels(g: np.ndarray, label: int, num_classes: int) -> list[PseudoLabel]:
    matrix = ns_pseudo_label_matrix(g, label, num_classes)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    return [PseudoLabel(matrix[i], float(np.clip(g[i], 0.0, 1.0)))
            for i in range(matrix.shape[0])]


def hard_label_matrix(label: int, num_classes: int, num_frames: int) -> np.ndarray:
    """Every frame tagged with the plain video category (the no-suppression
    baseline the pseudo labels are compared against)."""
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for C={num_classes}")
    targets = np.zeros((num_frames, num_classes + 1))
    targets[:, label] = 1.0
    return targets


# ---------------------------------------------------------------------------
# Persistence: prototypes as an NSF1 matrix plus a small text sidecar
# ---------------------------------------------------------------------------


def save_prototypes(bank: PrototypeBank, path: str,
                    source_manifest: str | None = None) -> None:
    write_feature_file(path, bank.prototypes)
    lines = [f"epsilon_percent={bank.epsilon_percent!r}"]
    if source_manifest is not None:
        digest = hashlib.sha256(open(source_manifest, "rb").read()).hexdigest()
        lines.append(f"manifest_sha256={digest}")
    atomic_write_text(path + ".meta", "\n".join(lines) + "\n")


def load_prototypes(path: str) -> PrototypeBank:
    prototypes = read_feature_file(path)
    epsilon = DEFAULT_EPSILON_PERCENT
    meta = path + ".meta"
    if os.path.exists(meta):
        for line in open(meta, "r", encoding="utf-8"):
            key, _, value = line.strip().partition("=")
            if key == "epsilon_percent":
                epsilon = float(value)
    return PrototypeBank(prototypes, epsilon)
