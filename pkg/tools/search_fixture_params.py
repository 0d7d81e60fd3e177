#!/usr/bin/env python3
"""Parameter sweep used while choosing the frozen fixture configuration.

Renders the synthetic dataset once per texture setting, then sweeps the model
construction knobs, printing the qualitative orderings each combination
produces. generate_fixtures.py hard-codes the chosen values.
"""

import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))
sys.path.insert(0, str(REPO / "tools"))

import generate_fixtures as GF  # noqa: E402
from advmask import baselines, evaluation, geometry, models  # noqa: E402


def build_dataset():
    probes, lms, gallery = {}, {}, {}
    for i in range(GF.NUM_IDENTITIES):
        pts, (p, g) = GF.make_identity(GF.DATASET_SEED + i)
        probes[f"id{i:02d}"], lms[f"id{i:02d}"], gallery[f"id{i:02d}"] = p, pts, g
    dist = {}
    for i in range(GF.NUM_DISTRACTORS):
        pts, (im,) = GF.make_identity(GF.DATASET_SEED + 1000 + i, n_renders=1)
        dist[f"dist{i:02d}"] = (im, pts)
    tpls, tlms = {}, {}
    for i in range(GF.NUM_TEMPLATES):
        pts, (im,) = GF.make_identity(GF.DATASET_SEED + 2000 + i, n_renders=1,
                                      texture_freq=(8.0, 16.0), skin_shift=(-0.04, 0.0, 0.06))
        tpls[f"t{i:02d}"], tlms[f"t{i:02d}"] = im, pts
    return probes, lms, gallery, dist, tpls, tlms


def main():
    probes, lms, gallery, dist, tpls, tlms = build_dataset()
    names = sorted(probes)
    lmset = {n: geometry.LandmarkSet(lms[n]) for n in names}
    gal_images = dict(gallery)
    gal_images.update({k: v[0] for k, v in dist.items()})
    g_names = sorted(gal_images)

    solid = {n: baselines.solid_color_mask(probes[n], lmset[n])[0] for n in names}
    masked_blue, masked_pal, sources = [], [], []
    items = sorted(probes.items()) + sorted(gallery.items())
    for j, (n, im) in enumerate(items):
        masked_blue.append(baselines.solid_color_mask(im, lmset[n])[0])
        masked_pal.append(baselines.solid_color_mask(
            im, lmset[n], GF.MASK_PALETTE[j % len(GF.MASK_PALETTE)])[0])
        sources.append(im)

    textured = []
    tpl_names = sorted(tpls)
    for j in range(12):
        im, pts = dist[f"dist{j:02d}"]
        tn = tpl_names[j % len(tpl_names)]
        i_dm, _, _ = geometry.delaunay_mask(im, geometry.LandmarkSet(pts),
                                            tpls[tn], geometry.LandmarkSet(tlms[tn]))
        textured.append(i_dm)

    for null_k in (2, 3):
        emb = GF.build_embedder(sources, masked_blue, null_k=null_k)
        tpl_list = sorted(tpls)
        tpl_images = [tpls[n] for n in tpl_list]
        dm = {}
        for n in names:
            k = evaluation.select_template(probes[n], tpl_images, emb)
            tn = tpl_list[k]
            dm[n], _, _ = geometry.delaunay_mask(probes[n], lmset[n], tpls[tn],
                                                 geometry.LandmarkSet(tlms[tn]))
        g_embs = np.array([models.embed(emb, gal_images[n]) for n in g_names])
        g_labels = np.array(g_names)

        def rank1(images):
            p = np.array([models.embed(emb, images[n]) for n in names])
            return evaluation.cmc_curve(p, g_embs, g_labels, np.array(names), 1)[1]

        r = (rank1(probes), rank1(solid), rank1(dm))
        print(f"null_k={null_k}: rank1 clean {r[0]:.3f} solid {r[1]:.3f} dm {r[2]:.3f}"
              f"  ordering {'OK' if r[0] >= r[1] >= r[2] else 'BAD'}")

        for target in (0.5,):
            for tw in (25.0,):
                det = GF.build_detector(sources + [v[0] for v in dist.values()]
                                        + [tpls[n] for n in tpl_names],
                                        masked_pal, textured, textured_target=target,
                                        textured_weight=tw)

                def zs(images):
                    return np.array([det.forward(images[n])[1] - det.forward(images[n])[0]
                                     for n in names])
                z_c, z_s, z_d = zs(probes), zs(solid), zs(dm)
                print(f"   target {target:+.1f} w{tw:>4.0f}: rate clean {(z_c > 0).mean():.2f} "
                      f"solid {(z_s > 0).mean():.2f} dm {(z_d > 0).mean():.2f} "
                      f"(z_dm {z_d.mean():+.2f}±{z_d.std():.2f}, z_clean {z_c.mean():+.2f}±{z_c.std():.2f})")


if __name__ == "__main__":
    main()
