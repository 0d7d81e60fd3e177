"""End-to-end experiment runs over the fixture dataset.

Executes the full protocol (mask/attack every probe, embed, score against
the gallery) for each masking method and prints the headline table:
rank-1 identification, verification AUC, mask-detection rate, and
similarity to the plain faced-mask image.

Expect a few minutes of compute for the filtering attack.
"""

import tempfile
from pathlib import Path

from advmask import fileio, pipeline

REPO = Path(__file__).resolve().parent.parent
FIX = REPO / "fixtures"

rows = []
with tempfile.TemporaryDirectory() as tmp:
    for method in ("solid", "dm", "advnoise_dm", "mf2m"):
        cfg = pipeline.parse_config({
            "method": method,
            "models": {"fr": str(FIX / "models/embedder.json"),
                       "md": str(FIX / "models/detector.json")},
            "data": {"probes": str(FIX / "dataset/probes"),
                     "templates": str(FIX / "dataset/templates"),
                     "gallery": str(FIX / "dataset/gallery")},
            "evaluation": {"max_rank": 5},
            "workers": 2,
            "output": f"{tmp}/{method}",
        })
        manifest = pipeline.run_experiment(cfg)
        metrics = fileio.read_json(manifest["metrics"]["path"])
        rows.append((method, metrics))
        print(f"{method}: done ({manifest['counts']['ok']} probes)")

print(f"\n{'method':<12} {'rank-1':>7} {'auc':>7} {'mask rate':>10} {'psnr':>7} {'ssim':>7}")
for method, m in rows:
    psnr = f"{m['psnr']:.2f}" if m["psnr"] != float("inf") else "inf"
    print(f"{method:<12} {m['cmc']['1']:>7.3f} {m['auc']:>7.4f} "
          f"{m['mask_detection_rate']:>10.2f} {psnr:>7} {m['ssim']:>7.4f}")

print("\nidentification and detection both degrade from solid masking to "
      "faced masks to the adversarial stages, while the filtering attack "
      "stays closest to its faced-mask starting point.")
