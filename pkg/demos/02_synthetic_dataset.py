"""Generating a desk-scale dataset with planted saliency.

Each video mixes frames near its class centroid (salient) with frames
drawn from a shared background pool; an analytic nearest-centroid
recognizer provides per-frame logits, and the planted mask is stored so
recall is measurable exactly.
"""

import tempfile

import numpy as np

from nsnet.data import generate_synthetic_dataset, load_manifest, presample, \
    PresampleConfig

workdir = tempfile.mkdtemp(prefix="nsnet_demo_")
train_m, val_m = generate_synthetic_dataset(
    workdir, num_classes=5, videos_per_class=8, num_frames=24,
    light_dim=16, guiding_dim=16, salient_fraction=0.25, noise_sigma=0.2,
    seed=42, val_videos_per_class=2)
print(f"wrote manifests:\n  {train_m}\n  {val_m}")

manifest = load_manifest(train_m)
records = manifest.load_all()
record = records[0]
print(f"\nfirst record: {record.video_id} label={record.label} "
      f"frames={record.num_frames}")
print(f"planted salient frames: {np.flatnonzero(record.saliency_mask).tolist()}")

correct = 0
for r in records:
    salient = r.saliency_mask == 1.0
    correct += int(np.all(r.recognizer_logits[salient].argmax(axis=1) == r.label))
print(f"\noracle recognizer gets every salient frame right in "
      f"{correct}/{len(records)} videos (noise 0.2)")

observed = presample(record, PresampleConfig(frames=8))
print(f"\npre-sampled to 8 observation frames; "
      f"{int(observed.saliency_mask.sum())} planted frames remain in view")
