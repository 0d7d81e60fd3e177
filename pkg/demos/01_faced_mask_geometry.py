"""Faced-mask geometry walkthrough.

Takes one fixture probe and its most similar template, triangulates the
probe's landmarks, warps the template face onto the probe's geometry, and
composites the lower-face region. Saves every intermediate so you can see
the full masking chain.
"""

from pathlib import Path

import numpy as np

from advmask import evaluation, fileio, geometry, models

REPO = Path(__file__).resolve().parent.parent
FIX = REPO / "fixtures"
OUT = Path(__file__).parent / "output" / "geometry"
OUT.mkdir(parents=True, exist_ok=True)


def load(path):
    img = fileio.read_image(path)
    pts, scheme = fileio.read_landmarks(path.with_name(path.stem + ".landmarks.json"))
    return img, geometry.LandmarkSet(pts, scheme)


probe, probe_lms = load(FIX / "dataset/probes/id00_p.png")
embedder = models.load_model(FIX / "models/embedder.json")

template_paths = sorted((FIX / "dataset/templates").glob("*.png"))
templates = [load(p) for p in template_paths]
pick = evaluation.select_template(probe, [t[0] for t in templates], embedder)
template, template_lms = templates[pick]
print(f"most similar template: {template_paths[pick].name}")

mesh = geometry.delaunay_triangulate(probe_lms)
print(f"triangulated {len(probe_lms)} landmarks into {len(mesh)} triangles")

warped, region = geometry.build_faced_mask(probe, probe_lms, template, template_lms)
masked = geometry.composite(probe, warped, region)
print(f"lower-face region covers {int(region.sum())} px "
      f"({100 * region.mean():.1f}% of the image)")

fileio.write_image(OUT / "probe.png", probe)
fileio.write_image(OUT / "template.png", template)
fileio.write_image(OUT / "warped_full_face.png", warped)
fileio.write_image(OUT / "region.png", np.repeat(region[:, :, None], 3, axis=2))
fileio.write_image(OUT / "masked.png", masked)
print(f"intermediates saved to {OUT}")

# sanity: masking with the probe itself reproduces the probe
self_warped, self_region = geometry.build_faced_mask(probe, probe_lms, probe, probe_lms)
err = np.abs(geometry.composite(probe, self_warped, self_region) - probe).max()
print(f"self-masking round trip error: {err:.2e}")
