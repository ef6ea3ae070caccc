"""From recognizer outputs to frame-level training signal.

Prototypes average the most confident correctly-predicted frames per
video, then per category. Each frame's guiding score compares its
distance to the true category's prototype against all others, and the
pseudo label splits its mass between the video category and the appended
non-salient category accordingly.
"""

import tempfile

import numpy as np

from nsnet.data import generate_synthetic_dataset, load_manifest
from nsnet.supervision import build_prototypes, guiding_saliency_scores, \
    guiding_scores_response_variant, ns_pseudo_labels

workdir = tempfile.mkdtemp(prefix="nsnet_demo_")
train_m, _ = generate_synthetic_dataset(
    workdir, num_classes=4, videos_per_class=10, num_frames=20,
    light_dim=16, guiding_dim=16, salient_fraction=0.3, noise_sigma=0.25,
    seed=7)
records = load_manifest(train_m).load_all()
bank = build_prototypes(records, 4, epsilon_percent=30)
print(f"prototype bank: {bank.prototypes.shape} (epsilon {bank.epsilon_percent}%)")

salient_g, background_g = [], []
for record in records:
    g = guiding_saliency_scores(record, bank)
    mask = record.saliency_mask == 1.0
    salient_g.extend(g[mask])
    background_g.extend(g[~mask])
print(f"\nguiding score g, prototype route:")
print(f"  planted salient frames: mean {np.mean(salient_g):.3f}")
print(f"  background frames:      mean {np.mean(background_g):.3f}")

record = records[0]
g_resp = guiding_scores_response_variant(record)
g_proto = guiding_saliency_scores(record, bank)
print(f"\nresponse-based vs prototype-based g on {record.video_id} (first 5 frames):")
for i in range(5):
    tag = "salient" if record.saliency_mask[i] else "background"
    print(f"  frame {i} ({tag:10s}): response {g_resp[i]:.3f}  prototype {g_proto[i]:.3f}")

labels = ns_pseudo_labels(g_proto[:3], record.label, 4)
print(f"\npseudo labels for the first 3 frames (label={record.label}):")
for i, pl in enumerate(labels):
    print(f"  frame {i}: target {np.round(pl.target, 3)}  (g = {pl.guiding_score:.3f})")
