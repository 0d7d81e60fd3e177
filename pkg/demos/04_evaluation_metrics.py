"""Identification, verification, and similarity metrics on synthetic scores.

Shows the CMC curve, the ROC/TAR@FAR machinery (including the streaming
negative path and the Mann-Whitney identity), and the PSNR/SSIM pair.
"""

import numpy as np

from advmask import evaluation

rng = np.random.default_rng(0)

# identification: 15 probes, gallery of mates + distractors
probes = rng.normal(size=(15, 8))
mates = probes + rng.normal(0, 0.35, probes.shape)
distractors = rng.normal(size=(45, 8))
gallery = np.vstack([mates, distractors])
labels = np.array([f"id{i}" for i in range(15)] + [f"dx{i}" for i in range(45)])
cmc = evaluation.cmc_curve(probes, gallery, labels,
                           np.array([f"id{i}" for i in range(15)]), 10)
print("CMC:", {k: round(v, 3) for k, v in cmc.items()})

# verification: distances for same/different identity pairs
positives = rng.normal(0.8, 0.25, 400)
negatives = rng.normal(1.6, 0.35, 5000)
res = evaluation.verification_metrics(
    evaluation.ScoreSet(positives, negatives), far_targets=[1e-3, 1e-2, 1e-1])
print(f"AUC {res.auc:.4f}  TAR@FAR {({f: round(t, 3) for f, t in res.tar_at_far.items()})}")

u = ((positives[:, None] < negatives[None, :]).sum()
     + 0.5 * (positives[:, None] == negatives[None, :]).sum()) / (400 * 5000)
print(f"Mann-Whitney check: |AUC - U| = {abs(res.auc - u):.2e}")

streamed = evaluation.verification_metrics(
    evaluation.ScoreSet(positives, (negatives[i:i + 512] for i in range(0, 5000, 512))),
    far_targets=[1e-2])
print(f"streaming negatives give the same AUC: {abs(streamed.auc - res.auc):.2e}")

# similarity metrics
img = rng.uniform(0.2, 0.8, (64, 64, 3))
for amp in (0.01, 0.03, 0.1):
    noisy = np.clip(img + rng.uniform(-amp, amp, img.shape), 0, 1)
    print(f"noise +-{amp}: psnr {evaluation.psnr(img, noisy):6.2f} dB  "
          f"ssim {evaluation.ssim(img, noisy):.4f}")
