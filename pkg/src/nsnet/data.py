"""Feature storage and datasets.

Two bit-exact formats:

* NSF1 feature file (little-endian): magic ``NSF1`` | u32 N | u32 D |
  N*D IEEE-754 32-bit values, row-major.
* NSM1 manifest: UTF-8 text, header line ``NSM1 C=<int>``, then one record
  per line, tab-separated: video_id, label, light_path, guiding_path,
  logits_path[, mask_path]. Paths are resolved relative to the manifest's
  directory unless absolute.

Plus temporal pre-sampling to a fixed observation length and a synthetic
generator that plants per-frame saliency ground truth, with an analytic
nearest-centroid recognizer providing per-frame logits.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FEATURE_MAGIC = b"NSF1"
MANIFEST_MAGIC = "NSM1"


class FeatureFormatError(ValueError):
    """Raised when an NSF1/NSM1 file is malformed."""


# ---------------------------------------------------------------------------
# Atomic file helpers (write to temp in the same directory, rename on success)
# ---------------------------------------------------------------------------


def atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# NSF1 feature files
# ---------------------------------------------------------------------------


def write_feature_file(path: str, matrix: np.ndarray) -> None:
    """Write an (N, D) matrix as 32-bit floats; read-back is exact at f32."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValueError(f"feature matrix must be 2-D and non-empty, got shape {matrix.shape}")
    n, d = matrix.shape
    payload = FEATURE_MAGIC + struct.pack("<II", n, d) \
        + matrix.astype("<f4").tobytes(order="C")
    try:
        atomic_write_bytes(path, payload)
    except OSError as exc:
        raise OSError(f"failed writing feature file {path}: {exc}") from exc


def read_feature_file(path: str) -> np.ndarray:
    """Read an NSF1 file back as float64 (exact embedding of the f32 payload)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic, not an NSF1 feature file")
    n, d = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * n * d
    if len(blob) != expected:
        raise FeatureFormatError(
            f"{path}: truncated or oversized payload, expected {expected} bytes, "
            f"got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=12).astype(np.float64)
    return values.reshape(n, d)


def _validate_feature_header(path: str) -> tuple[int, int]:
    """Cheap integrity check: magic, dims, and exact byte length."""
    with open(path, "rb") as fh:
        header = fh.read(12)
    if len(header) < 12 or header[:4] != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic, not an NSF1 feature file")
    n, d = struct.unpack("<II", header[4:12])
    expected = 12 + 4 * n * d
    actual = os.path.getsize(path)
    if actual != expected:
        raise FeatureFormatError(
            f"{path}: truncated or oversized payload, expected {expected} bytes, "
            f"got {actual}")
    return n, d


# ---------------------------------------------------------------------------
# Video records and manifests
# ---------------------------------------------------------------------------


@dataclass
class VideoRecord:
    """One video: identity, label and the per-frame arrays (aligned on axis 0)."""

    video_id: str
    label: int
    light_features: np.ndarray      # (N, D_l) sampler input features
    guiding_features: np.ndarray    # (N, D_g) recognizer penultimate features
    recognizer_logits: np.ndarray   # (N, C)
    saliency_mask: np.ndarray | None = None  # (N,) of {0,1}, synthetic only

    def __post_init__(self):
        n = self.light_features.shape[0]
        for name in ("guiding_features", "recognizer_logits"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(
                    f"{self.video_id}: {name} has {arr.shape[0]} frames, expected {n}")
        if self.saliency_mask is not None:
            mask = np.asarray(self.saliency_mask, dtype=np.float64).reshape(-1)
            if mask.shape[0] != n:
                raise ValueError(
                    f"{self.video_id}: saliency_mask has {mask.shape[0]} frames, expected {n}")
            if not np.all((mask == 0.0) | (mask == 1.0)):
                raise ValueError(f"{self.video_id}: saliency_mask entries must be 0 or 1")
            self.saliency_mask = mask
        if n < 1:
            raise ValueError(f"{self.video_id}: needs at least one frame")
        if self.label < 0:
            raise ValueError(f"{self.video_id}: negative label {self.label}")

    @property
    def num_frames(self) -> int:
        return self.light_features.shape[0]


@dataclass
class ManifestEntry:
    video_id: str
    label: int
    light_path: str
    guiding_path: str
    logits_path: str
    mask_path: str | None = None


@dataclass
class DatasetManifest:
    path: str
    num_classes: int
    entries: list[ManifestEntry] = field(default_factory=list)

    def load_record(self, entry: ManifestEntry) -> VideoRecord:
        mask = None
        if entry.mask_path is not None:
            mask = read_feature_file(entry.mask_path).reshape(-1)
        return VideoRecord(
            video_id=entry.video_id,
            label=entry.label,
            light_features=read_feature_file(entry.light_path),
            guiding_features=read_feature_file(entry.guiding_path),
            recognizer_logits=read_feature_file(entry.logits_path),
            saliency_mask=mask,
        )

    def load_all(self) -> list[VideoRecord]:
        return [self.load_record(e) for e in self.entries]


def write_manifest(path: str, num_classes: int, entries: Sequence[ManifestEntry]) -> None:
    lines = [f"{MANIFEST_MAGIC} C={num_classes}"]
    for e in entries:
        fields = [e.video_id, str(e.label), e.light_path, e.guiding_path, e.logits_path]
        if e.mask_path is not None:
            fields.append(e.mask_path)
        lines.append("\t".join(fields))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path: str) -> DatasetManifest:
    """Parse and validate a manifest: header, unique ids, files exist and
    agree on dimensions (headers of every referenced file are checked)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(MANIFEST_MAGIC + " "):
        raise FeatureFormatError(f"{path}: missing '{MANIFEST_MAGIC} C=<int>' header")
    header = lines[0].split()
    if len(header) != 2 or not header[1].startswith("C="):
        raise FeatureFormatError(f"{path}: malformed header {lines[0]!r}")
    try:
        num_classes = int(header[1][2:])
    except ValueError:
        raise FeatureFormatError(f"{path}: malformed class count in {lines[0]!r}") from None
    if num_classes < 1:
        raise FeatureFormatError(f"{path}: class count must be positive, got {num_classes}")

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    dims: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) not in (5, 6):
            raise FeatureFormatError(f"{path}:{lineno}: expected 5 or 6 tab-separated fields")
        video_id, label_s = fields[0], fields[1]
        if video_id in seen:
            raise FeatureFormatError(f"{path}:{lineno}: duplicate video_id {video_id!r}")
        seen.add(video_id)
        label = int(label_s)
        if not 0 <= label < num_classes:
            raise FeatureFormatError(
                f"{path}:{lineno}: label {label} out of range for C={num_classes}")
        paths = [resolve(p) for p in fields[2:]]
        for kind, p in zip(("light", "guiding", "logits", "mask"), paths):
            if not os.path.exists(p):
                raise FeatureFormatError(f"{path}:{lineno}: missing {kind} file {p}")
            _, d = _validate_feature_header(p)
            key = {"light": "D_l", "guiding": "D_g", "logits": "C"}.get(kind)
            if key is not None:
                if key in dims and dims[key] != d:
                    raise FeatureFormatError(
                        f"{path}:{lineno}: {kind} width {d} disagrees with earlier {dims[key]}")
                dims[key] = d
        if "C" in dims and dims["C"] != num_classes:
            raise FeatureFormatError(
                f"{path}:{lineno}: logits width {dims['C']} != header C={num_classes}")
        entries.append(ManifestEntry(video_id, label, paths[0], paths[1], paths[2],
                                     paths[3] if len(paths) == 4 else None))
    return DatasetManifest(path=os.path.abspath(path), num_classes=num_classes,
                           entries=entries)


# ---------------------------------------------------------------------------
# Temporal pre-sampling
# ---------------------------------------------------------------------------


@dataclass
class PresampleConfig:
    """Observation budget: every video is reduced/extended to exactly
    ``frames`` frames before the sampler sees it."""

    frames: int
    shift_augment: bool = False

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")


def presample_indices(num_frames: int, cfg: PresampleConfig,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Frame indices for uniform pre-sampling.

    For N >= T, segment centers floor((i + 0.5) * N / T); with
    ``shift_augment`` a shared random integer offset in [0, N // T] is added
    (clamped at N - 1). For N < T the sequence is tiled cyclically.
    """
    t = cfg.frames
    if num_frames >= t:
        idx = np.floor((np.arange(t) + 0.5) * num_frames / t).astype(np.int64)
        if cfg.shift_augment:
            if rng is None:
                raise ValueError("shift_augment requires an rng")
            offset = int(rng.integers(0, num_frames // t + 1))
            idx = np.minimum(idx + offset, num_frames - 1)
        return idx
    return np.arange(t, dtype=np.int64) % num_frames


def gather_record(record: VideoRecord, indices: np.ndarray) -> VideoRecord:
    """Gather all per-frame arrays with the same index vector."""
    return VideoRecord(
        video_id=record.video_id,
        label=record.label,
        light_features=record.light_features[indices],
        guiding_features=record.guiding_features[indices],
        recognizer_logits=record.recognizer_logits[indices],
        saliency_mask=None if record.saliency_mask is None
        else record.saliency_mask[indices],
    )


def presample(record: VideoRecord, cfg: PresampleConfig,
              rng: np.random.Generator | None = None) -> VideoRecord:
    return gather_record(record, presample_indices(record.num_frames, cfg, rng))


# ---------------------------------------------------------------------------
# Synthetic dataset with planted saliency
# ---------------------------------------------------------------------------


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / max(float(np.linalg.norm(v)), 1e-12)


def _distinct_unit_vector(rng: np.random.Generator, dim: int,
                          existing: list[np.ndarray], max_cos: float = 0.9) -> np.ndarray:
    for _ in range(1000):
        v = _unit_vector(rng, dim)
        if all(abs(float(v @ e)) <= max_cos for e in existing):
            return v
    raise RuntimeError(f"could not draw a distinct unit vector in dimension {dim}")


def generate_synthetic_dataset(out_dir: str,
                               num_classes: int,
                               videos_per_class: int,
                               num_frames: int,
                               light_dim: int,
                               guiding_dim: int,
                               salient_fraction: float,
                               noise_sigma: float,
                               seed: int,
                               val_videos_per_class: int = 0) -> tuple[str, str | None]:
    """Plant a recoverable saliency structure and write it to disk.

    Per class, unit-norm centroids are drawn in both feature spaces. Each
    video gets ceil(salient_fraction * N) randomly placed salient frames
    whose features are the class centroid plus Gaussian noise; the other
    frames draw from a shared pool of background centroids (kept away from
    every class centroid). Per-frame recognizer logits are the negated
    Euclidean distances to the class centroids in guiding space, so an
    analytic oracle recognizer exists by construction. Returns the train
    manifest path and, when ``val_videos_per_class`` > 0, the val manifest
    path; ``seed`` fixes every byte of the output.
    """
    if not 0.0 < salient_fraction <= 1.0:
        raise ValueError(f"salient_fraction must be in (0, 1], got {salient_fraction}")
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if min(videos_per_class, num_frames, light_dim, guiding_dim) < 1:
        raise ValueError("videos_per_class, num_frames and dims must be >= 1")

    rng = np.random.default_rng(seed)
    class_light = [_unit_vector(rng, light_dim) for _ in range(num_classes)]
    class_guide = [_unit_vector(rng, guiding_dim) for _ in range(num_classes)]
    num_background = max(4, num_classes)
    bg_light: list[np.ndarray] = []
    bg_guide: list[np.ndarray] = []
    for _ in range(num_background):
        bg_light.append(_distinct_unit_vector(rng, light_dim, class_light + bg_light))
        bg_guide.append(_distinct_unit_vector(rng, guiding_dim, class_guide + bg_guide))
    guide_matrix = np.stack(class_guide)

    feat_dir = os.path.join(out_dir, "feats")
    os.makedirs(feat_dir, exist_ok=True)
    num_salient = math.ceil(salient_fraction * num_frames)

    def make_split(split: str, count: int) -> list[ManifestEntry]:
        entries = []
        for c in range(num_classes):
            for v in range(count):
                vid = f"{split}_c{c:03d}_v{v:04d}"
                salient = np.sort(rng.choice(num_frames, size=num_salient, replace=False))
                mask = np.zeros(num_frames)
                mask[salient] = 1.0
                light = np.empty((num_frames, light_dim))
                guide = np.empty((num_frames, guiding_dim))
                for i in range(num_frames):
                    if mask[i] == 1.0:
                        base_l, base_g = class_light[c], class_guide[c]
                    else:
                        pool = int(rng.integers(num_background))
                        base_l, base_g = bg_light[pool], bg_guide[pool]
                    light[i] = base_l + noise_sigma * rng.standard_normal(light_dim)
                    guide[i] = base_g + noise_sigma * rng.standard_normal(guiding_dim)
                logits = -np.linalg.norm(guide[:, None, :] - guide_matrix[None, :, :], axis=2)
                paths = {}
                for kind, arr in (("light", light), ("guide", guide),
                                  ("logits", logits), ("mask", mask.reshape(-1, 1))):
                    rel = os.path.join("feats", f"{vid}.{kind}.nsf")
                    write_feature_file(os.path.join(out_dir, rel), arr)
                    paths[kind] = rel
                entries.append(ManifestEntry(vid, c, paths["light"], paths["guide"],
                                             paths["logits"], paths["mask"]))
        return entries

    train_entries = make_split("train", videos_per_class)
    train_path = os.path.join(out_dir, "train.nsm")
    write_manifest(train_path, num_classes, train_entries)
    val_path = None
    if val_videos_per_class > 0:
        val_entries = make_split("val", val_videos_per_class)
        val_path = os.path.join(out_dir, "val.nsm")
        write_manifest(val_path, num_classes, val_entries)
    return train_path, val_path
