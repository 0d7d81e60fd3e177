"""The seven sign-gradient baselines applied to a solid-color mask.

Each variant attacks the same solid-masked probe under the shared joint
objective; the table compares final loss, detector verdict, and image
change against the masked starting point.
"""

from pathlib import Path

from advmask import attacks, baselines, evaluation, fileio, geometry, models

REPO = Path(__file__).resolve().parent.parent
FIX = REPO / "fixtures"


def load(path):
    img = fileio.read_image(path)
    pts, scheme = fileio.read_landmarks(path.with_name(path.stem + ".landmarks.json"))
    return img, geometry.LandmarkSet(pts, scheme)


probe, plm = load(FIX / "dataset/probes/id03_p.png")
fr = models.load_model(FIX / "models/embedder.json")
md = models.load_model(FIX / "models/detector.json")

solid, region = baselines.solid_color_mask(probe, plm)
print(f"solid mask detector verdict: {models.detect_mask(md, solid)}")
cfg = attacks.NoiseAttackConfig()  # eps 0.04, 40 iterations

print(f"\n{'variant':<14} {'loss start':>11} {'loss end':>10} {'masked?':>8} {'psnr':>7}")
for variant in baselines.Variant:
    out, rep = baselines.fgsm_family_attack(
        solid, probe, fr, md, baselines.BaselineVariant(variant), cfg, region, seed=7)
    verdict = models.detect_mask(md, out).is_masked
    print(f"{variant.value:<14} {rep.initial_loss:>11.4f} {rep.final_loss:>10.4f} "
          f"{str(verdict):>8} {evaluation.psnr(out, solid):>7.2f}")
