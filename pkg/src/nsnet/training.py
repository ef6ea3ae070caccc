"""Deterministic training loop for the sampler.

All randomness flows from one seed through named substreams (init,
shuffle, augment, dropout), so (seed, config, data) fixes the entire
trajectory bit-exactly. Guiding scores depend only on the frozen
prototypes and the recognizer features of the original frames, so they
are computed once per video and gathered through the per-epoch
pre-sampling indices.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import PresampleConfig, VideoRecord, atomic_write_text, gather_record, \
    presample, presample_indices
from .evaluation import salient_recall, top1_accuracy
from .fusion import FusionConfig, recognize_video, select_frames
from .model import LossBreakdown, ModelConfig, SamplerModel, fsm_saliency, \
    save_checkpoint, total_loss, vgm_saliency
from .supervision import PrototypeBank, guiding_saliency_scores, hard_label_matrix, \
    ns_pseudo_label_matrix

METRICS_HEADER = "epoch,lr,loss,loss_f,loss_cls,loss_ns,val_top1,val_recall"


def substream(seed: int, name: str) -> np.random.Generator:
    """A named child generator; crc32 keeps the mapping stable everywhere."""
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 64
    base_lr: float = 0.01
    lr_decay_epochs: tuple[int, ...] = (50, 75)
    decay_factor: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    presample: PresampleConfig = field(
        default_factory=lambda: PresampleConfig(frames=16, shift_augment=True))
    ns_labels: bool = True   # False: plain video labels on the frame head

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        decays = tuple(self.lr_decay_epochs)
        if any(b <= a for a, b in zip(decays, decays[1:])):
            raise ValueError(f"lr_decay_epochs must be strictly increasing: {decays}")
        if any(not 0 <= e < self.epochs for e in decays):
            raise ValueError(
                f"lr_decay_epochs {decays} must lie in [0, {self.epochs})")
        self.lr_decay_epochs = decays


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Piecewise-constant schedule: one decay step at each listed epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {cfg.epochs})")
    drops = sum(1 for e in cfg.lr_decay_epochs if e <= epoch)
    return cfg.base_lr * cfg.decay_factor ** drops


@dataclass
class TrainExample:
    features: np.ndarray       # (T, D_l)
    frame_targets: np.ndarray  # (T, C+1)
    label: int
    video_id: str


def batch_loss(model: SamplerModel, batch: list[TrainExample], train: bool = False,
               rng: np.random.Generator | None = None) -> LossBreakdown:
    """Mean over the batch of the per-video total loss (frame loss summed
    over frames, video losses per head)."""
    if not batch:
        raise ValueError("empty batch")
    parts = []
    for example in batch:
        out = model.forward(example.features, train=train, rng=rng)
        parts.append(total_loss(out, example.frame_targets, example.label,
                                model.config))
    scale = 1.0 / len(batch)

    def mean(tensors):
        acc = tensors[0]
        for t in tensors[1:]:
            acc = acc + t
        return scale * acc

    return LossBreakdown(
        total=mean([p.total for p in parts]),
        frame=mean([p.frame for p in parts]),
        video_cls=mean([p.video_cls for p in parts]),
        video_ns=mean([p.video_ns for p in parts]),
    )


def gradient_check(model: SamplerModel, batch: list[TrainExample],
                   step: float = 1e-5, tolerance: float = 1e-4):
    """Full-model finite-difference check on the training loss (dropout off)."""
    return ad.finite_difference_check(
        model.parameters(),
        lambda: batch_loss(model, batch, train=False).total,
        step=step, tolerance=tolerance)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    loss: float
    loss_f: float
    loss_cls: float
    loss_ns: float
    val_top1: float | None = None
    val_recall: float | None = None

    def csv_row(self) -> str:
        def fmt(x):
            return "" if x is None else repr(float(x))
        return ",".join([str(self.epoch), fmt(self.lr), fmt(self.loss),
                         fmt(self.loss_f), fmt(self.loss_cls), fmt(self.loss_ns),
                         fmt(self.val_top1), fmt(self.val_recall)])


def write_metrics_csv(path: str, metrics: list[EpochMetrics]) -> None:
    atomic_write_text(path, "\n".join([METRICS_HEADER]
                                      + [m.csv_row() for m in metrics]) + "\n")


@dataclass
class TrainResult:
    model: SamplerModel
    metrics: list[EpochMetrics]
    best_epoch: int
    best_checkpoint: str | None = None
    last_checkpoint: str | None = None


def evaluate_epoch(model: SamplerModel, records: list[VideoRecord], k: int,
                   fusion_cfg: FusionConfig | None = None,
                   frames: int | None = None) -> tuple[float, float | None]:
    """Top-1 through the full selection path, plus mean recall of planted
    salient frames when masks exist."""
    if fusion_cfg is None:
        fusion_cfg = FusionConfig(mode="index_union", ratio=0.6, k=k)
    else:
        fusion_cfg = FusionConfig(fusion_cfg.mode, fusion_cfg.ratio, k)
    t = frames if frames is not None else model.config.max_frames
    cfg = PresampleConfig(frames=t)
    scores, labels, recalls = [], [], []
    for record in records:
        observed = record if record.num_frames == t else presample(record, cfg)
        out = model.forward(observed.light_features, train=False)
        selected = select_frames(fsm_saliency(out.fsm_logits.value),
                                 vgm_saliency(out.attn.value), fusion_cfg)
        scores.append(recognize_video(observed, selected))
        labels.append(observed.label)
        recall = salient_recall(selected, observed.saliency_mask)
        if recall is not None:
            recalls.append(recall)
    top1 = top1_accuracy(np.stack(scores), np.array(labels))
    return top1, (float(np.mean(recalls)) if recalls else None)


def _probe_invariants(model: SamplerModel, record: VideoRecord, frames: int,
                      epoch: int) -> None:
    """Attention must stay a valid distribution as parameters move; probed
    once per epoch on a validation video."""
    observed = record if record.num_frames == frames \
        else presample(record, PresampleConfig(frames=frames))
    out = model.forward(observed.light_features, train=False)
    attn = out.attn.value
    if attn.min() < 0.0 or attn.max() > 1.0 or abs(float(attn.sum()) - 1.0) > 1e-9:
        raise RuntimeError(
            f"attention invariant violated at epoch {epoch} on {record.video_id}: "
            f"min {attn.min()}, max {attn.max()}, sum {attn.sum()}")
    if not np.all(np.isfinite(out.fsm_logits.value)):
        raise RuntimeError(
            f"non-finite frame logits at epoch {epoch} on {record.video_id}")


def train(train_records: list[VideoRecord],
          num_classes: int,
          bank: PrototypeBank | None,
          model_cfg: ModelConfig,
          train_cfg: TrainConfig,
          val_records: list[VideoRecord] | None = None,
          eval_k: int | None = None,
          fusion_cfg: FusionConfig | None = None,
          out_dir: str | None = None) -> TrainResult:
    """Run the full schedule and keep the best checkpoint by validation top-1.

    ``bank`` may be None only with ns_labels=False (the hard-label baseline
    needs no prototypes).
    """
    if train_cfg.ns_labels and bank is None:
        raise ValueError("pseudo labels need a prototype bank; pass ns_labels=False "
                         "to train the hard-label baseline")
    records = sorted(train_records, key=lambda r: r.video_id)
    init_rng = substream(train_cfg.seed, "init")
    shuffle_rng = substream(train_cfg.seed, "shuffle")
    augment_rng = substream(train_cfg.seed, "augment")
    dropout_rng = substream(train_cfg.seed, "dropout")
    model = SamplerModel(model_cfg, init_rng)
    optimizer = ad.SgdState(learning_rate=train_cfg.base_lr,
                            momentum=train_cfg.momentum)

    # guiding scores are static per video; cache them on the original frames
    guiding: dict[str, np.ndarray] = {}
    if train_cfg.ns_labels:
        for record in records:
            guiding[record.video_id] = guiding_saliency_scores(record, bank)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    last_path = os.path.join(out_dir, "last.nsc1") if out_dir else None
    best_path = os.path.join(out_dir, "best.nsc1") if out_dir else None

    metrics: list[EpochMetrics] = []
    best_epoch, best_top1 = 0, -1.0
    for epoch in range(train_cfg.epochs):
        optimizer.learning_rate = lr_at_epoch(train_cfg, epoch)
        order = shuffle_rng.permutation(len(records))
        sums = np.zeros(4)
        seen = 0
        for start in range(0, len(records), train_cfg.batch_size):
            batch_ids = order[start:start + train_cfg.batch_size]
            batch = []
            for idx in batch_ids:
                record = records[int(idx)]
                indices = presample_indices(record.num_frames, train_cfg.presample,
                                            augment_rng)
                observed = gather_record(record, indices)
                if train_cfg.ns_labels:
                    g = guiding[record.video_id][indices]
                    targets = ns_pseudo_label_matrix(g, record.label, num_classes)
                else:
                    targets = hard_label_matrix(record.label, num_classes,
                                                observed.num_frames)
                batch.append(TrainExample(observed.light_features, targets,
                                          record.label, record.video_id))
            parts = batch_loss(model, batch, train=True, rng=dropout_rng)
            values = np.array([float(parts.total.value), float(parts.frame.value),
                               float(parts.video_cls.value), float(parts.video_ns.value)])
            if not np.all(np.isfinite(values)):
                raise RuntimeError(
                    f"non-finite loss {values[0]!r} at epoch {epoch}, batch of "
                    f"videos {[b.video_id for b in batch]}")
            ad.backward(parts.total)
            ad.sgd_step(model.parameters(), optimizer)
            sums += values * len(batch)
            seen += len(batch)
        means = [float(x) for x in sums / seen]
        val_top1 = val_recall = None
        if val_records:
            _probe_invariants(model, val_records[0], train_cfg.presample.frames, epoch)
            val_top1, val_recall = evaluate_epoch(
                model, val_records, eval_k or max(1, train_cfg.presample.frames // 4),
                fusion_cfg, frames=train_cfg.presample.frames)
        metrics.append(EpochMetrics(epoch, optimizer.learning_rate, *means,
                                    val_top1, val_recall))
        if last_path is not None:
            try:
                save_checkpoint(model, last_path)
            except OSError as exc:
                raise RuntimeError(f"checkpoint write failed: {last_path}: {exc}") from exc
        criterion = val_top1 if val_top1 is not None else -float(means[0])
        if criterion > best_top1:
            best_top1, best_epoch = criterion, epoch
            if best_path is not None:
                save_checkpoint(model, best_path)
        if out_dir is not None:
            write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
    return TrainResult(model, metrics, best_epoch,
                       best_checkpoint=best_path, last_checkpoint=last_path)
