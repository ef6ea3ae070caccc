"""The frame sampler network and its losses.

Three parts share one encoding pass per video:

* feature embedding: learnable positional embedding plus a pre-norm
  transformer encoder over the per-frame lightweight features;
* frame scrutinize head: a (C+1)-way linear classifier per frame, trained
  on non-saliency-suppression pseudo labels; its saliency score is the max
  softmax confidence over the C real categories, softmax-normalized along
  the time axis;
* video glimpse head: sigmoid + L1-normalized temporal attention, whose
  weights pool a salient video representation (attention) and a
  complementary non-salient one ((1 - a_i)/T); both go through a shared
  (C+1)-way classifier with dual targets (video category vs. the
  non-salient category).

Checkpoints use the NSC1 container: magic ``NSC1`` | u32 parameter count |
per parameter u16 name length, name bytes, u32 rank, u32 dims..., IEEE-754
32-bit values row-major; the model configuration rides in a ``.cfg`` text
sidecar.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, softmax_values
from .data import atomic_write_bytes, atomic_write_text

CHECKPOINT_MAGIC = b"NSC1"


@dataclass
class ModelConfig:
    input_dim: int                  # width of the lightweight features
    num_classes: int
    max_frames: int                 # positional-embedding capacity
    encoder_layers: int = 2
    heads: int = 8
    ffn_dim: int | None = None      # defaults to input_dim
    dropout_pos_enc: float = 0.2
    dropout_cls: float = 0.9
    dropout_attn: float = 0.2
    gamma: float = 0.2              # weight of the non-salient video loss

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = self.input_dim
        if self.input_dim % self.heads != 0:
            raise ValueError(
                f"input_dim {self.input_dim} not divisible by heads {self.heads}")
        for name in ("dropout_pos_enc", "dropout_cls", "dropout_attn"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {rate}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if min(self.input_dim, self.num_classes, self.max_frames,
               self.encoder_layers, self.heads, self.ffn_dim) < 1:
            raise ValueError("all size fields must be positive")

    def to_text(self) -> str:
        return "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kwargs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kwargs[key] = eval(value, {"__builtins__": {}})  # literals only
        return cls(**kwargs)


@dataclass
class ForwardOutput:
    """Per-video network outputs, still attached to the gradient graph."""

    encoded: Tensor            # (T, D)
    fsm_logits: Tensor         # (T, C+1)
    attn: Tensor               # (T, 1), nonnegative, sums to 1
    salient_logits: Tensor     # (1, C+1)
    nonsalient_logits: Tensor  # (1, C+1)


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SamplerModel:
    """Parameter container plus the forward passes of all three parts."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        d, f = config.input_dim, config.ffn_dim
        c1 = config.num_classes + 1
        self._params: dict[str, Parameter] = {}

        def param(name, value):
            p = Parameter(name, value)
            self._params[name] = p
            return p

        self.pos_embedding = param(
            "pos_embedding", rng.normal(0.0, 0.02, size=(config.max_frames, d)))
        self.layers = []
        for i in range(config.encoder_layers):
            prefix = f"enc{i}."
            layer = {
                "ln1_gain": param(prefix + "ln1_gain", np.ones(d)),
                "ln1_bias": param(prefix + "ln1_bias", np.zeros(d)),
                "wq": param(prefix + "wq", _uniform_init(rng, d, (d, d))),
                "bq": param(prefix + "bq", np.zeros(d)),
                "wk": param(prefix + "wk", _uniform_init(rng, d, (d, d))),
                "bk": param(prefix + "bk", np.zeros(d)),
                "wv": param(prefix + "wv", _uniform_init(rng, d, (d, d))),
                "bv": param(prefix + "bv", np.zeros(d)),
                "wo": param(prefix + "wo", _uniform_init(rng, d, (d, d))),
                "bo": param(prefix + "bo", np.zeros(d)),
                "ln2_gain": param(prefix + "ln2_gain", np.ones(d)),
                "ln2_bias": param(prefix + "ln2_bias", np.zeros(d)),
                "w1": param(prefix + "w1", _uniform_init(rng, d, (d, f))),
                "b1": param(prefix + "b1", np.zeros(f)),
                "w2": param(prefix + "w2", _uniform_init(rng, f, (f, d))),
                "b2": param(prefix + "b2", np.zeros(d)),
            }
            self.layers.append(layer)
        self.fsm_w = param("fsm.w", _uniform_init(rng, d, (d, c1)))
        self.fsm_b = param("fsm.b", np.zeros(c1))
        self.attn_w = param("vgm.attn_w", _uniform_init(rng, d, (d, 1)))
        self.attn_b = param("vgm.attn_b", np.zeros(1))
        self.cls_w = param("vgm.cls_w", _uniform_init(rng, d, (d, c1)))
        self.cls_b = param("vgm.cls_b", np.zeros(c1))

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self._params.items())

    # -- feature embedding ---------------------------------------------------

    def encode(self, features: np.ndarray, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        """Positional embedding + dropout + pre-norm encoder blocks; the
        output keeps the (T, D) input shape."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ValueError(
                f"expected (T, {self.config.input_dim}) features, got {features.shape}")
        t = features.shape[0]
        if t > self.config.max_frames:
            raise ValueError(
                f"video has {t} frames but positional capacity is {self.config.max_frames}")
        x = ad.constant(features) + self.pos_embedding.rows(0, t)
        x = ad.dropout(x, self.config.dropout_pos_enc, rng, train)
        head_dim = self.config.input_dim // self.config.heads
        scale = 1.0 / math.sqrt(head_dim)
        for layer in self.layers:
            h = ad.layer_norm(x, layer["ln1_gain"], layer["ln1_bias"])
            q = h @ layer["wq"] + layer["bq"]
            k = h @ layer["wk"] + layer["bk"]
            v = h @ layer["wv"] + layer["bv"]
            contexts = []
            for head in range(self.config.heads):
                lo, hi = head * head_dim, (head + 1) * head_dim
                scores = (q.cols(lo, hi) @ k.cols(lo, hi).T) * scale
                weights = ad.softmax(scores, axis=-1)
                contexts.append(weights @ v.cols(lo, hi))
            attn_out = ad.concat_cols(contexts) @ layer["wo"] + layer["bo"]
            x = x + attn_out
            h2 = ad.layer_norm(x, layer["ln2_gain"], layer["ln2_bias"])
            ffn = ad.relu(h2 @ layer["w1"] + layer["b1"]) @ layer["w2"] + layer["b2"]
            x = x + ffn
        return x

    # -- frame scrutinize ------------------------------------------------

    def fsm_forward(self, encoded: Tensor, train: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        h = ad.dropout(encoded, self.config.dropout_cls, rng, train)
        return h @ self.fsm_w + self.fsm_b

    # -- video glimpse -----------------------------------------------------

    def vgm_attention(self, encoded: Tensor, train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """(T, 1) attention: sigmoid activations L1-normalized over time."""
        h = ad.dropout(encoded, self.config.dropout_attn, rng, train)
        raw = ad.sigmoid(h @ self.attn_w + self.attn_b)
        return ad.l1_normalize(raw)

    def vgm_representations(self, encoded: Tensor, attn: Tensor) -> tuple[Tensor, Tensor]:
        """Salient pooling sum(a_i x_i) and its complement with weights
        (1 - a_i)/T; the complementary weights sum to (T-1)/T."""
        t = encoded.shape[0]
        salient = attn.T @ encoded
        complement = (1.0 - attn) * (1.0 / t)
        nonsalient = complement.T @ encoded
        return salient, nonsalient

    def classify_video(self, representation: Tensor, train: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        h = ad.dropout(representation, self.config.dropout_cls, rng, train)
        return h @ self.cls_w + self.cls_b

    # -- whole network -------------------------------------------------------

    def forward(self, features: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> ForwardOutput:
        encoded = self.encode(features, train, rng)
        fsm_logits = self.fsm_forward(encoded, train, rng)
        attn = self.vgm_attention(encoded, train, rng)
        salient, nonsalient = self.vgm_representations(encoded, attn)
        return ForwardOutput(
            encoded=encoded,
            fsm_logits=fsm_logits,
            attn=attn,
            salient_logits=self.classify_video(salient, train, rng),
            nonsalient_logits=self.classify_video(nonsalient, train, rng),
        )


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def video_salient_target(label: int, num_classes: int) -> np.ndarray:
    target = np.zeros(num_classes + 1)
    target[label] = 1.0
    return target


def video_nonsalient_target(num_classes: int) -> np.ndarray:
    target = np.zeros(num_classes + 1)
    target[num_classes] = 1.0
    return target


def fsm_loss(fsm_logits: Tensor, frame_targets: np.ndarray) -> Tensor:
    """Soft cross entropy summed over the video's frames."""
    frame_targets = np.asarray(frame_targets, dtype=np.float64)
    if frame_targets.shape != fsm_logits.shape:
        raise ValueError(
            f"frame targets {frame_targets.shape} vs logits {fsm_logits.shape}")
    return ad.soft_cross_entropy_rows(fsm_logits, frame_targets)


def vgm_loss(salient_logits: Tensor, nonsalient_logits: Tensor, label: int,
             num_classes: int, gamma: float) -> Tensor:
    """Classification loss on the salient representation plus gamma times the
    suppression loss pulling the complement onto the non-salient category."""
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for C={num_classes}")
    l_cls = ad.soft_cross_entropy(salient_logits, video_salient_target(label, num_classes))
    l_ns = ad.soft_cross_entropy(nonsalient_logits, video_nonsalient_target(num_classes))
    return l_cls + gamma * l_ns


@dataclass
class LossBreakdown:
    total: Tensor
    frame: Tensor
    video_cls: Tensor
    video_ns: Tensor


def total_loss(output: ForwardOutput, frame_targets: np.ndarray, label: int,
               config: ModelConfig) -> LossBreakdown:
    """Video-level loss plus the frame-level loss (single shared encoding)."""
    c = config.num_classes
    l_cls = ad.soft_cross_entropy(output.salient_logits, video_salient_target(label, c))
    l_ns = ad.soft_cross_entropy(output.nonsalient_logits, video_nonsalient_target(c))
    l_f = fsm_loss(output.fsm_logits, frame_targets)
    total = l_cls + config.gamma * l_ns + l_f
    return LossBreakdown(total=total, frame=l_f, video_cls=l_cls, video_ns=l_ns)


# ---------------------------------------------------------------------------
# Saliency scores at inference time (plain arrays, no gradients)
# ---------------------------------------------------------------------------


def fsm_saliency(fsm_logits: np.ndarray) -> np.ndarray:
    """Max softmax confidence over the real categories, then a softmax along
    the time axis."""
    logits = np.asarray(fsm_logits, dtype=np.float64)
    probs = softmax_values(logits, axis=1)
    confidence = probs[:, :-1].max(axis=1)
    return softmax_values(confidence)


def vgm_saliency(attn: np.ndarray) -> np.ndarray:
    """The attention weights are the scores; kept as a named step so both
    granularities feed fusion the same way."""
    return np.asarray(attn, dtype=np.float64).reshape(-1).copy()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: SamplerModel, path: str) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(model._params))]
    for name, p in model.named_parameters():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", p.value.ndim))
        chunks.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        chunks.append(p.value.astype("<f4").tobytes(order="C"))
    atomic_write_bytes(path, b"".join(chunks))
    atomic_write_text(path + ".cfg", model.config.to_text())


def load_checkpoint(path: str) -> SamplerModel:
    config = ModelConfig.from_text(open(path + ".cfg", "r", encoding="utf-8").read())
    model = SamplerModel(config, np.random.default_rng(0))
    blob = open(path, "rb").read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic, not an NSC1 checkpoint")
    (count,) = struct.unpack("<I", blob[4:8])
    offset = 8
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", blob[offset:offset + 2])
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack("<I", blob[offset:offset + 4])
        offset += 4
        dims = struct.unpack(f"<{rank}I", blob[offset:offset + 4 * rank])
        offset += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        loaded[name] = values.astype(np.float64).reshape(dims)
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after {count} parameters")
    for name, p in model.named_parameters():
        if name not in loaded:
            raise ValueError(f"{path}: checkpoint is missing parameter {name!r}")
        if loaded[name].shape != p.value.shape:
            raise ValueError(
                f"{path}: parameter {name!r} has shape {loaded[name].shape}, "
                f"expected {p.value.shape}")
        p.value = loaded[name]
    return model
