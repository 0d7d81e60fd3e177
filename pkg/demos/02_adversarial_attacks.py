"""Adversarial masking stages on one fixture pair.

Runs the additive-noise attack and the pixel-wise filtering attack against
the toy recognizer/detector pair, printing the joint-loss trajectory, the
detector verdicts, and how close each result stays to the plain faced-mask
image (PSNR/SSIM).
"""

from pathlib import Path

from advmask import attacks, evaluation, fileio, geometry, models

REPO = Path(__file__).resolve().parent.parent
FIX = REPO / "fixtures"
OUT = Path(__file__).parent / "output" / "attacks"
OUT.mkdir(parents=True, exist_ok=True)


def load(path):
    img = fileio.read_image(path)
    pts, scheme = fileio.read_landmarks(path.with_name(path.stem + ".landmarks.json"))
    return img, geometry.LandmarkSet(pts, scheme)


goldens = fileio.read_json(REPO / "tests/data/goldens.json")
probe, plm = load(FIX / "dataset/probes" / goldens["detected_dm_pair"]["probe"])
template, tlm = load(FIX / "dataset/templates" / goldens["detected_dm_pair"]["template"])
fr = models.load_model(FIX / "models/embedder.json")
md = models.load_model(FIX / "models/detector.json")

i_dm, _, region = geometry.delaunay_mask(probe, plm, template, tlm)
ref = models.embed(fr, probe)
print("faced-mask image (no adversarial stage):")
print(f"  detector: {models.detect_mask(md, i_dm)}")
print(f"  embedding distance to original: "
      f"{models.embedding_distance(models.embed(fr, i_dm), ref):.5f}")

print("\nnoise attack (eps 0.04, 40 sign steps)...")
adv, rep = attacks.pgd_noise_attack(i_dm, probe, fr, md, attacks.NoiseAttackConfig(), region)
print(f"  joint loss {rep.initial_loss:+.4f} -> {rep.final_loss:+.4f} "
      f"in {rep.iterations_completed} iterations")
print(f"  detector now: {models.detect_mask(md, adv)}")
print(f"  perturbation max: {rep.perturbation_linf:.4f}  "
      f"psnr vs faced-mask: {evaluation.psnr(adv, i_dm):.2f} dB")

print("\nfiltering attack (5x5 kernels, 160 raw-gradient steps on a 0.01-noise base)...")
mf, rep2 = attacks.mf2m_attack(probe, plm, template, tlm, fr, md,
                               attacks.NoiseAttackConfig(), attacks.FilterAttackConfig())
print(f"  joint loss {rep2.initial_loss:+.4f} -> {rep2.final_loss:+.4f}")
print(f"  detector now: {models.detect_mask(md, mf)}")
print(f"  psnr vs faced-mask: {evaluation.psnr(mf, i_dm):.2f} dB  "
      f"ssim: {evaluation.ssim(mf, i_dm):.4f}")

for name, img in (("faced_mask.png", i_dm), ("noise_attacked.png", adv),
                  ("filter_attacked.png", mf)):
    fileio.write_image(OUT / name, img)
print(f"\nimages saved to {OUT}")
