#!/usr/bin/env python3
"""Derive the frozen golden values in tests/data/ from the committed fixtures.

Run once after (re)generating fixtures; outputs are reviewed and committed.
Tests compare against these files and never regenerate them.
"""

import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from advmask import baselines, evaluation, fileio, geometry, models  # noqa: E402

FIX = REPO / "fixtures"
OUT = REPO / "tests" / "data"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    emb = models.load_model(FIX / "models/embedder.json")
    det = models.load_model(FIX / "models/detector.json")

    zero = np.zeros((112, 112, 3))
    golden = {"zero_image_embedding": models.embed(emb, zero).tolist()}

    probe = fileio.read_image(FIX / "dataset/probes/id00_p.png")
    pts, scheme = fileio.read_landmarks(FIX / "dataset/probes/id00_p.landmarks.json")
    lm = geometry.LandmarkSet(pts, scheme)
    solid, _ = baselines.solid_color_mask(probe, lm)
    golden["solid_masked_id00_probs"] = list(models.detect_mask(det, solid))

    # solid-mask detection rate over all fixture probes
    probes = sorted((FIX / "dataset/probes").glob("*.png"))
    imgs = []
    for p in probes:
        im = fileio.read_image(p)
        pp, sch = fileio.read_landmarks(p.with_name(p.stem + ".landmarks.json"))
        imgs.append(baselines.solid_color_mask(im, geometry.LandmarkSet(pp, sch))[0])
    golden["solid_mask_detection_rate"] = evaluation.mask_detection_rate(imgs, det)

    # a probe whose faced-mask image the detector flags (for the flip test)
    tpl_files = sorted((FIX / "dataset/templates").glob("*.png"))
    tpls = [fileio.read_image(t) for t in tpl_files]
    tlms = [geometry.LandmarkSet(*fileio.read_landmarks(t.with_name(t.stem + ".landmarks.json")))
            for t in tpl_files]
    detected_pair = None
    for p in probes:
        im = fileio.read_image(p)
        pp, sch = fileio.read_landmarks(p.with_name(p.stem + ".landmarks.json"))
        plm = geometry.LandmarkSet(pp, sch)
        k = evaluation.select_template(im, tpls, emb)
        i_dm, _, _ = geometry.delaunay_mask(im, plm, tpls[k], tlms[k])
        if models.detect_mask(det, i_dm).is_masked:
            detected_pair = {"probe": p.name, "template": tpl_files[k].name}
            break
    assert detected_pair, "no detected faced-mask pair found"
    golden["detected_dm_pair"] = detected_pair

    # golden faced-mask image for the id00 probe with its selected template
    im00 = fileio.read_image(probes[0])
    pp, sch = fileio.read_landmarks(probes[0].with_name(probes[0].stem + ".landmarks.json"))
    plm = geometry.LandmarkSet(pp, sch)
    k = evaluation.select_template(im00, tpls, emb)
    golden["id00_selected_template"] = tpl_files[k].name
    warped, region = geometry.build_faced_mask(im00, plm, tpls[k], tlms[k])
    fileio.write_image(OUT / "golden_faced_mask_id00.png", warped)
    fileio.write_image(OUT / "golden_masked_id00.png", geometry.composite(im00, warped, region))

    fileio.write_json(OUT / "goldens.json", golden)
    print("goldens written to", OUT)
    print("detected faced-mask pair:", detected_pair)


if __name__ == "__main__":
    main()
