"""Metrics, compute accounting and baseline samplers.

The per-video budget is P_rec * K + P_fem + P_vgm + P_fsm: the heavy
recognizer only runs on the K selected frames, while the embedding cost
covers the lightweight extractor on all T observation frames plus the
encoder. Costs are configuration inputs (a ``name=gflops`` text table),
not measurements; the defaults carry published per-network numbers so the
budget arithmetic is reproducible without any real backbone.

mAP is single-label: per category, videos are ranked by that category's
score and AP averages the precision at each positive's rank; categories
without positives are excluded and reported.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import softmax_values
from .data import PresampleConfig, VideoRecord, atomic_write_text, presample
from .fusion import FusionConfig, recognize_video, select_frames
from .model import SamplerModel, fsm_saliency, vgm_saliency

BASELINE_METHODS = ("uniform", "random", "dense", "topk_confidence")

# Published per-network GFLOPs used as the default budget components.
DEFAULT_COST_TABLE = {
    "recognizer_per_frame": 4.109,
    "extractor_per_frame": 0.320,
    "encoder": 0.315,
    "vgm": 0.004,
    "fsm": 0.002,
}


@dataclass
class FlopsBudget:
    recognizer_per_frame: float  # GFLOPs per recognized frame
    frames_recognized: int       # K
    embedding: float             # extractor * T + encoder
    vgm: float
    fsm: float

    def __post_init__(self):
        for name in ("recognizer_per_frame", "embedding", "vgm", "fsm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.frames_recognized < 0:
            raise ValueError("frames_recognized must be >= 0")


def flops_total(budget: FlopsBudget) -> float:
    return (budget.recognizer_per_frame * budget.frames_recognized
            + budget.embedding + budget.vgm + budget.fsm)


def load_cost_table(path: str) -> dict[str, float]:
    costs = dict(DEFAULT_COST_TABLE)
    for lineno, line in enumerate(open(path, "r", encoding="utf-8"), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in DEFAULT_COST_TABLE:
            raise ValueError(f"{path}:{lineno}: unknown cost entry {line!r}; "
                             f"expected one of {', '.join(DEFAULT_COST_TABLE)}")
        costs[key] = float(value)
    return costs


def budget_from_cost_table(costs: dict[str, float], k: int, t: int) -> FlopsBudget:
    return FlopsBudget(
        recognizer_per_frame=costs["recognizer_per_frame"],
        frames_recognized=k,
        embedding=costs["extractor_per_frame"] * t + costs["encoder"],
        vgm=costs["vgm"],
        fsm=costs["fsm"],
    )


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------


@dataclass
class MapResult:
    per_class: np.ndarray       # AP per category, nan where no positives
    mean: float
    skipped_classes: list[int] = field(default_factory=list)


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> MapResult:
    """Single-label mAP over (V, C) scores; ties keep video order."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    v, c = scores.shape
    per_class = np.full(c, np.nan)
    skipped = []
    for cls in range(c):
        positives = labels == cls
        if not positives.any():
            skipped.append(cls)
            continue
        order = np.argsort(-scores[:, cls], kind="stable")
        hits = positives[order]
        ranks = np.flatnonzero(hits) + 1
        precision_at_hits = np.cumsum(hits)[ranks - 1] / ranks
        per_class[cls] = float(precision_at_hits.mean())
    valid = ~np.isnan(per_class)
    if not valid.any():
        raise ValueError("no class has a positive video; mAP undefined")
    return MapResult(per_class, float(per_class[valid].mean()), skipped)


def top1_accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of videos whose argmax score equals the label."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape[0] != labels.shape[0]:
        raise ValueError(f"predictions {predictions.shape} vs labels {labels.shape}")
    return float((predictions.argmax(axis=1) == labels).mean())


def salient_recall(selected: list[int], mask: np.ndarray | None) -> float | None:
    """Fraction of the planted salient frames captured by the selection."""
    if mask is None:
        return None
    planted = np.flatnonzero(np.asarray(mask) > 0.5)
    if planted.size == 0:
        return None
    return len(set(selected) & set(planted.tolist())) / planted.size


# ---------------------------------------------------------------------------
# Hand-crafted baseline samplers
# ---------------------------------------------------------------------------


def baseline_sample(record: VideoRecord, method: str, k: int,
                    seed: int = 0) -> list[int]:
    """uniform: segment centers; random: seeded K-subset (sorted); dense:
    every frame; topk_confidence: K highest max-softmax recognizer rows."""
    t = record.num_frames
    if method == "dense":
        return list(range(t))
    if not 1 <= k <= t:
        raise ValueError(f"k={k} out of range for {t} frames")
    if method == "uniform":
        return [int(math.floor((i + 0.5) * t / k)) for i in range(k)]
    if method == "random":
        rng = np.random.default_rng([seed, zlib.crc32(record.video_id.encode()), k])
        return sorted(int(i) for i in rng.choice(t, size=k, replace=False))
    if method == "topk_confidence":
        confidence = softmax_values(record.recognizer_logits, axis=1).max(axis=1)
        return np.argsort(-confidence, kind="stable")[:k].tolist()
    raise ValueError(f"unknown baseline {method!r}; "
                     f"choose one of {', '.join(BASELINE_METHODS)}")


# ---------------------------------------------------------------------------
# Method x K comparison sweep
# ---------------------------------------------------------------------------


@dataclass
class ComparisonRow:
    method: str
    k: int
    top1: float
    map_score: float
    recall: float | None
    gflops: float


def _nsnet_selection(model: SamplerModel, record: VideoRecord,
                     fusion_cfg: FusionConfig) -> list[int]:
    out = model.forward(record.light_features, train=False)
    s_f = fsm_saliency(out.fsm_logits.value)
    s_v = vgm_saliency(out.attn.value)
    return select_frames(s_f, s_v, fusion_cfg)


def run_comparison(records: list[VideoRecord], model: SamplerModel,
                   fusion_cfg: FusionConfig, k_list: list[int],
                   costs: dict[str, float] | None = None,
                   frames: int | None = None,
                   seed: int = 0) -> list[ComparisonRow]:
    """Evaluate the sampler and every baseline at each K.

    The budget charges the recognizer for the frames it actually sees:
    K for the sampler (plus its embedding/head overhead), K for uniform and
    random, and all T frames for dense and confidence top-K (which must
    score every frame before discarding any).
    """
    costs = dict(DEFAULT_COST_TABLE) if costs is None else costs
    t = frames if frames is not None else model.config.max_frames
    cfg = PresampleConfig(frames=t)
    observed = [r if r.num_frames == t else presample(r, cfg) for r in records]
    labels = np.array([r.label for r in observed])

    rows = []
    for k in k_list:
        if not 1 <= k <= t:
            raise ValueError(f"k={k} out of range for {t} observation frames")
        selectors = {
            "nsnet": lambda r: _nsnet_selection(
                model, r, FusionConfig(fusion_cfg.mode, fusion_cfg.ratio, k)),
            "uniform": lambda r: baseline_sample(r, "uniform", k, seed),
            "random": lambda r: baseline_sample(r, "random", k, seed),
            "dense": lambda r: baseline_sample(r, "dense", k, seed),
            "topk_confidence": lambda r: baseline_sample(r, "topk_confidence", k, seed),
        }
        gflops = {
            "nsnet": flops_total(budget_from_cost_table(costs, k, t)),
            "uniform": costs["recognizer_per_frame"] * k,
            "random": costs["recognizer_per_frame"] * k,
            "dense": costs["recognizer_per_frame"] * t,
            "topk_confidence": costs["recognizer_per_frame"] * t,
        }
        for method, selector in selectors.items():
            scores = np.zeros((len(observed), observed[0].recognizer_logits.shape[1]))
            recalls = []
            for i, record in enumerate(observed):
                selected = selector(record)
                scores[i] = recognize_video(record, selected)
                recall = salient_recall(selected, record.saliency_mask)
                if recall is not None:
                    recalls.append(recall)
            rows.append(ComparisonRow(
                method=method,
                k=k,
                top1=top1_accuracy(scores, labels),
                map_score=mean_average_precision(scores, labels).mean,
                recall=float(np.mean(recalls)) if recalls else None,
                gflops=gflops[method],
            ))
    return rows


def write_comparison_csv(path: str, rows: list[ComparisonRow]) -> None:
    lines = ["method,K,top1,mAP,recall,gflops"]
    for r in rows:
        recall = "" if r.recall is None else repr(float(r.recall))
        lines.append(f"{r.method},{r.k},{float(r.top1)!r},{float(r.map_score)!r},"
                     f"{recall},{float(r.gflops)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
