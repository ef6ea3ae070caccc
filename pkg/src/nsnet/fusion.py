"""Combining the two saliency granularities and picking the K frames.

Score fusion operates on values (convex addition with ratio alpha,
elementwise product, elementwise max); index fusion operates on the two
descending rank lists pi_f (frame head) and pi_v (glimpse head):

* intersect: top-K of both lists intersected, then expanded with elements
  taken alternately from the two lists' tails (frame head first) until K;
* union: top-ceil(K*alpha) of pi_f united with top-ceil(K*(1-alpha)) of
  pi_v; short unions are extended from pi_f, overshoot drops the
  lowest-ranked glimpse-side contributions;
* join: both score lists concatenated into 2T entries and scanned in
  descending order, collecting distinct frames until K.

Tie rules, everywhere: higher score first, then lower frame index; in the
join scan the frame-head copy precedes the glimpse copy. Selections are
returned in a deterministic order (documented per function) so dumps and
checkpoint-independent comparisons are stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import softmax_values
from .data import VideoRecord

SCORE_MODES = ("score_add", "score_mul", "score_max")
INDEX_MODES = ("index_union", "index_intersect", "index_join")
FUSION_MODES = SCORE_MODES + INDEX_MODES


@dataclass
class FusionConfig:
    mode: str = "index_union"
    ratio: float = 0.6          # used by score_add and index_union
    k: int = 1

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}; "
                             f"choose one of {', '.join(FUSION_MODES)}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must be in [0, 1], got {self.ratio}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass
class SaliencyProfile:
    """Both score tracks plus the final selection for one video."""

    s_f: np.ndarray
    s_v: np.ndarray
    selected: list[int]
    fused_scores: np.ndarray | None = None


def rank_descending(scores: np.ndarray) -> np.ndarray:
    """Frame indices by descending score; ties broken by lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.argsort(-scores, kind="stable")


def select_topk(scores: np.ndarray, k: int) -> list[int]:
    scores = np.asarray(scores, dtype=np.float64)
    if k > scores.shape[0]:
        raise ValueError(f"cannot select {k} frames out of {scores.shape[0]}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return rank_descending(scores)[:k].tolist()


def fuse_scores(s_f: np.ndarray, s_v: np.ndarray, mode: str,
                ratio: float = 0.6) -> np.ndarray:
    s_f = np.asarray(s_f, dtype=np.float64)
    s_v = np.asarray(s_v, dtype=np.float64)
    if s_f.shape != s_v.shape:
        raise ValueError(f"score lengths differ: {s_f.shape} vs {s_v.shape}")
    if mode == "score_add":
        return ratio * s_f + (1.0 - ratio) * s_v
    if mode == "score_mul":
        return s_f * s_v
    if mode == "score_max":
        return np.maximum(s_f, s_v)
    raise ValueError(f"unknown score fusion mode {mode!r}")


def _check_index_args(s_f, s_v, k):
    s_f = np.asarray(s_f, dtype=np.float64)
    s_v = np.asarray(s_v, dtype=np.float64)
    if s_f.shape != s_v.shape:
        raise ValueError(f"score lengths differ: {s_f.shape} vs {s_v.shape}")
    t = s_f.shape[0]
    if not 1 <= k <= t:
        raise ValueError(f"k={k} out of range for {t} frames")
    return s_f, s_v, t


def fuse_index_intersect(s_f: np.ndarray, s_v: np.ndarray, k: int) -> list[int]:
    """Intersection of the two top-K sets; expansion alternates between the
    list tails (positions K+1 onward), frame head first, skipping frames
    already chosen. Result order: intersection members by frame-head rank,
    then expansion insertions."""
    s_f, s_v, t = _check_index_args(s_f, s_v, k)
    pi_f = rank_descending(s_f)
    pi_v = rank_descending(s_v)
    top_v = set(pi_v[:k].tolist())
    chosen = [int(i) for i in pi_f[:k] if int(i) in top_v]
    have = set(chosen)
    pointers = {"f": k, "v": k}
    lists = {"f": pi_f, "v": pi_v}
    turn = "f"
    while len(chosen) < k:
        lst = lists[turn]
        pos = pointers[turn]
        while pos < t and int(lst[pos]) in have:
            pos += 1
        if pos < t:
            frame = int(lst[pos])
            chosen.append(frame)
            have.add(frame)
            pointers[turn] = pos + 1
        else:
            pointers[turn] = pos
        turn = "v" if turn == "f" else "f"
    return chosen


def fuse_index_union(s_f: np.ndarray, s_v: np.ndarray, k: int,
                     ratio: float = 0.6) -> list[int]:
    """Union of the top-ceil(K*ratio) frame-head and top-ceil(K*(1-ratio))
    glimpse picks. Short unions extend from the frame-head list; overshoot
    drops glimpse-side-only contributions from the bottom of their ranking.
    Result order: frame-head picks by rank, surviving glimpse-only picks by
    rank, then extensions."""
    s_f, s_v, t = _check_index_args(s_f, s_v, k)
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    pi_f = rank_descending(s_f)
    pi_v = rank_descending(s_v)
    take_f = min(math.ceil(k * ratio), t)
    take_v = min(math.ceil(k * (1.0 - ratio)), t)
    from_f = [int(i) for i in pi_f[:take_f]]
    from_v_only = [int(i) for i in pi_v[:take_v] if int(i) not in set(from_f)]
    while len(from_f) + len(from_v_only) > k and from_v_only:
        from_v_only.pop()
    chosen = from_f + from_v_only
    have = set(chosen)
    pos = take_f
    while len(chosen) < k and pos < t:
        frame = int(pi_f[pos])
        pos += 1
        if frame not in have:
            chosen.append(frame)
            have.add(frame)
    return chosen


def fuse_index_join(s_f: np.ndarray, s_v: np.ndarray, k: int) -> list[int]:
    """Both lists concatenated to 2T (score, frame) entries, scanned by
    descending score (frame-head copy first on ties, then lower index),
    collecting frames not yet taken. Result order: scan order."""
    s_f, s_v, t = _check_index_args(s_f, s_v, k)
    entries = [(float(s_f[i]), 0, i) for i in range(t)]
    entries += [(float(s_v[i]), 1, i) for i in range(t)]
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    chosen: list[int] = []
    have: set[int] = set()
    for _, _, frame in entries:
        if frame not in have:
            chosen.append(frame)
            have.add(frame)
            if len(chosen) == k:
                break
    return chosen


def select_frames(s_f: np.ndarray, s_v: np.ndarray, cfg: FusionConfig) -> list[int]:
    """Dispatch on the fusion mode; always returns exactly cfg.k distinct
    frame indices."""
    if cfg.mode in SCORE_MODES:
        return select_topk(fuse_scores(s_f, s_v, cfg.mode, cfg.ratio), cfg.k)
    if cfg.mode == "index_intersect":
        return fuse_index_intersect(s_f, s_v, cfg.k)
    if cfg.mode == "index_union":
        return fuse_index_union(s_f, s_v, cfg.k, cfg.ratio)
    return fuse_index_join(s_f, s_v, cfg.k)


def saliency_profile(s_f: np.ndarray, s_v: np.ndarray,
                     cfg: FusionConfig) -> SaliencyProfile:
    fused = None
    if cfg.mode in SCORE_MODES:
        fused = fuse_scores(s_f, s_v, cfg.mode, cfg.ratio)
    return SaliencyProfile(
        s_f=np.asarray(s_f, dtype=np.float64),
        s_v=np.asarray(s_v, dtype=np.float64),
        selected=select_frames(s_f, s_v, cfg),
        fused_scores=fused,
    )


def recognize_video(record: VideoRecord, selected: list[int]) -> np.ndarray:
    """Average the recognizer's softmax rows over the selected frames; the
    argmax is the video prediction."""
    if len(selected) == 0:
        raise ValueError("cannot recognize a video from an empty frame selection")
    indices = np.asarray(selected, dtype=np.int64)
    if indices.min() < 0 or indices.max() >= record.num_frames:
        raise ValueError(
            f"{record.video_id}: selected indices out of range [0, {record.num_frames})")
    probs = softmax_values(record.recognizer_logits[indices], axis=1)
    return probs.mean(axis=0)
