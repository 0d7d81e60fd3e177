#!/usr/bin/env python3
"""Generate the frozen desk-scale fixtures: toy models plus a synthetic face set.

Everything here is deterministic from the seed constants below. The outputs
under fixtures/ are committed and treated as frozen golden data; tests load
them and never regenerate. Rerunning this script reproduces them bit-for-bit
on the same numpy/BLAS stack.

The mask detector's trunk is seeded noise (half color channels, half
edge-energy channels); its final dense layer is solved in closed form
(weighted ridge regression on trunk features) to separate solid-color masked
fixture faces from unmasked ones, with face-textured masks placed near the
decision boundary, mirroring detectors trained only on solid-colored masks.
The embedder is seeded noise shaped by three closed-form calibrations
documented on build_embedder; two renders of the same synthetic identity
embed close together.

Constants were picked so the frozen set passes the qualitative ordering
checks this script prints at the end (identification and detection degrade
from solid masking, to face-textured masking, to the adversarial stages,
while the filtering attack stays closer to its starting image than the
noise attack).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from advmask import attacks, baselines, evaluation, fileio, geometry, models  # noqa: E402

SIZE = 112
NUM_IDENTITIES = 16
NUM_DISTRACTORS = 24
NUM_TEMPLATES = 8

DATASET_SEED = 20240 + 11
EMBEDDER_SEED = 71
DETECTOR_SEED = 402
CALIBRATION_MARGIN = 8.0
CALIBRATION_RIDGE = 1e-3

MASK_PALETTE = [
    geometry.MEDICAL_BLUE,
    (0.92, 0.92, 0.92),
    (0.55, 0.75, 0.60),
    (0.30, 0.32, 0.35),
]

# dominant color axis of the rendered faces; the embedder reads this mix
SKIN_AXIS = np.array([0.65, 0.505, 0.405])
SKIN_AXIS = SKIN_AXIS / np.linalg.norm(SKIN_AXIS)


# --------------------------------------------------------------------------
# synthetic faces
# --------------------------------------------------------------------------

def face_layout(id_rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """68-point landmark layout with per-identity shape jitter, at SIZE px."""
    u = id_rng.uniform
    cx, cy = 0.5 + u(-0.015, 0.015), 0.46 + u(-0.01, 0.01)
    rx = 0.37 * (1 + u(-0.05, 0.05))
    ry = 0.45 * (1 + u(-0.05, 0.05))
    eye_y = 0.40 + u(-0.012, 0.012)
    eye_dx = 0.15 * (1 + u(-0.08, 0.08))
    eye_rx = 0.055 * (1 + u(-0.1, 0.1))
    eye_ry = 0.024 * (1 + u(-0.1, 0.1))
    mouth_y = 0.72 + u(-0.015, 0.015)
    mouth_rx = 0.13 * (1 + u(-0.15, 0.15))
    mouth_ry = 0.045 * (1 + u(-0.15, 0.15))
    nose_tip_y = 0.555 + u(-0.01, 0.01)

    pts = np.zeros((68, 2))
    # jaw 0-16 along the lower face ellipse, left temple to right temple
    theta = np.deg2rad(np.linspace(170.0, 10.0, 17))
    pts[0:17, 0] = cx + rx * np.cos(theta)
    pts[0:17, 1] = cy + ry * np.sin(theta)
    # brows 17-21 / 22-26
    bx = np.linspace(cx - eye_dx - eye_rx - 0.02, cx - eye_dx + eye_rx + 0.02, 5)
    arch = 0.012 * np.sin(np.linspace(0, np.pi, 5))
    pts[17:22, 0] = bx
    pts[17:22, 1] = eye_y - 0.065 - arch
    pts[22:27, 0] = 2 * cx - bx[::-1]
    pts[22:27, 1] = eye_y - 0.065 - arch[::-1]
    # nose bridge 27-30 (30 = tip) and base 31-35
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(0.38, nose_tip_y, 4)
    pts[31:36, 0] = np.linspace(cx - 0.045, cx + 0.045, 5)
    pts[31:36, 1] = nose_tip_y + 0.045
    # eyes 36-41 (left), 42-47 (right): hexagons
    hexa = np.deg2rad(np.array([180.0, 120.0, 60.0, 0.0, 300.0, 240.0]))
    for base, ex in ((36, cx - eye_dx), (42, cx + eye_dx)):
        pts[base:base + 6, 0] = ex + eye_rx * np.cos(hexa)
        pts[base:base + 6, 1] = eye_y - eye_ry * np.sin(hexa)
    # mouth: outer 48-59, inner 60-67
    ang12 = np.deg2rad(np.linspace(180.0, -180.0, 13)[:-1])
    pts[48:60, 0] = cx + mouth_rx * np.cos(ang12)
    pts[48:60, 1] = mouth_y - mouth_ry * np.sin(ang12)
    ang8 = np.deg2rad(np.linspace(180.0, -180.0, 9)[:-1])
    pts[60:68, 0] = cx + 0.6 * mouth_rx * np.cos(ang8)
    pts[60:68, 1] = mouth_y - 0.5 * mouth_ry * np.sin(ang8)

    pts += id_rng.normal(0.0, 0.003, pts.shape)
    pts = np.clip(pts * SIZE, 2.0, SIZE - 2.0)
    head = {"cx": cx * SIZE, "cy": (cy - 0.04) * SIZE,
            "rx": rx * 1.06 * SIZE, "ry": ry * 1.18 * SIZE}
    return pts, head


def _ellipse_mask(h, w, cx, cy, rx, ry):
    yy, xx = np.mgrid[0:h, 0:w]
    return (((xx + 0.5 - cx) / rx) ** 2 + ((yy + 0.5 - cy) / ry) ** 2) <= 1.0


def _wave_field(rng, h, w, n_waves, amplitude, freq=(0.5, 3.0)):
    yy, xx = np.mgrid[0:h, 0:w]
    field = np.zeros((h, w))
    for _ in range(n_waves):
        fx, fy = rng.uniform(freq[0], freq[1], 2) / SIZE
        phase = rng.uniform(0, 2 * np.pi)
        field += 0.75 * np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
    return amplitude * field / max(n_waves, 1)


def render_face(pts: np.ndarray, head: dict, id_rng: np.random.Generator,
                app_rng: np.random.Generator,
                texture_freq: tuple = (3.0, 10.0),
                skin_shift: tuple = (0.0, 0.0, 0.0),
                texture_amp: float = 0.24) -> np.ndarray:
    h = w = SIZE
    img = np.zeros((h, w, 3))
    ramp = (np.arange(h) + 0.5)[:, None] / h
    bg = np.array([0.16, 0.17, 0.19])  # shared neutral backdrop, as a face crop would have
    for c in range(3):
        img[:, :, c] = bg[c] * (0.7 + 0.6 * ramp)

    # narrow tone range: face crops arrive white-balanced, identity lives in texture
    skin = np.array([id_rng.uniform(0.62, 0.68), id_rng.uniform(0.48, 0.53),
                     id_rng.uniform(0.38, 0.43)]) + np.asarray(skin_shift)
    texture = np.stack([_wave_field(id_rng, h, w, 9, texture_amp, freq=texture_freq) for _ in range(3)], axis=-1)
    face = _ellipse_mask(h, w, head["cx"], head["cy"], head["rx"], head["ry"])
    yy, xx = np.mgrid[0:h, 0:w]
    shade = 1.0 - 0.25 * (((xx + 0.5 - head["cx"]) / head["rx"]) ** 2
                          + ((yy + 0.5 - head["cy"]) / head["ry"]) ** 2)
    # identity-specific periocular pattern: the upper face carries most identity signal
    brow_y = pts[17:27, 1].mean()
    nose_y = pts[30, 1]
    upper = face & (yy + 0.5 < nose_y) & (yy + 0.5 > brow_y - 18.0)
    periocular = _wave_field(id_rng, h, w, 8, 0.32, freq=(4.0, 12.0))
    for c in range(3):
        img[:, :, c] = np.where(face, (skin[c] + texture[:, :, c]) * shade, img[:, :, c])
        img[:, :, c] = np.where(upper, img[:, :, c] + periocular, img[:, :, c])

    def paint_polygon(vertices, color, alpha=1.0):
        m = geometry.rasterize_polygon(vertices, h, w)[:, :, None] * alpha
        img[:] = m * np.asarray(color) + (1 - m) * img

    def paint_ellipse(cx, cy, rx, ry, color, alpha=1.0):
        m = _ellipse_mask(h, w, cx, cy, rx, ry)[:, :, None] * alpha
        img[:] = m * np.asarray(color) + (1 - m) * img

    # brows: strip below the brow points
    for sl in (slice(17, 22), slice(22, 27)):
        strip = np.vstack([pts[sl], pts[sl][::-1] + [0.0, 3.0]])
        paint_polygon(strip, skin * 0.35)
    # eyes: sclera polygon + iris
    for base in (36, 42):
        eye = pts[base:base + 6]
        paint_polygon(eye, (0.86, 0.86, 0.84))
        center = eye.mean(axis=0)
        paint_ellipse(center[0], center[1], 2.3, 2.3, (0.15, 0.12, 0.10))
    # nose: bridge shading + nostrils
    bridge = np.vstack([pts[27:31] - [1.4, 0.0], (pts[27:31] + [1.4, 0.0])[::-1]])
    paint_polygon(bridge, skin * 0.88, alpha=0.7)
    paint_ellipse(pts[31][0], pts[31][1], 1.6, 1.2, skin * 0.45)
    paint_ellipse(pts[35][0], pts[35][1], 1.6, 1.2, skin * 0.45)
    # mouth
    paint_polygon(pts[48:60], (0.62, 0.30, 0.32))
    paint_polygon(pts[60:68], (0.42, 0.18, 0.20))

    img += _wave_field(app_rng, h, w, 2, 0.005)[:, :, None]
    img += app_rng.normal(0.0, 0.004, img.shape)
    img += app_rng.uniform(-0.006, 0.006)
    return np.clip(img, 0.0, 1.0)


def make_identity(seed: int, n_renders: int = 2, texture_freq: tuple = (3.0, 10.0),
                  skin_shift: tuple = (0.0, 0.0, 0.0), texture_amp: float = 0.24):
    """Landmarks + n appearance-varied renders of one synthetic identity."""
    id_rng = np.random.default_rng(seed)
    pts, head = face_layout(id_rng)
    renders = []
    for k in range(n_renders):
        app_rng = np.random.default_rng((seed, 1000 + k))
        paint_rng = np.random.default_rng(seed)  # identity texture must match across renders
        renders.append(render_face(pts, head, paint_rng, app_rng, texture_freq,
                                   skin_shift, texture_amp))
    return pts, renders


# --------------------------------------------------------------------------
# toy models
# --------------------------------------------------------------------------

def trunk_layers():
    return [
        {"type": "conv", "name": "conv1", "out_channels": 6, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "leaky_relu", "slope": 0.1},
        {"type": "conv", "name": "conv2", "out_channels": 8, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "leaky_relu", "slope": 0.1},
        {"type": "global_average_pool"},
    ]


def trunk_weights(rng):
    return {
        "conv1.weight": rng.normal(0, np.sqrt(2.0 / 27), (6, 3, 3, 3)),
        "conv1.bias": rng.normal(0, 0.05, 6),
        "conv2.weight": rng.normal(0, np.sqrt(2.0 / 54), (8, 6, 3, 3)),
        "conv2.bias": rng.normal(0, 0.05, 8),
    }


def build_embedder(unmasked: list[np.ndarray],
                   masked: list[np.ndarray],
                   null_k: int = 2,
                   cone_beta: float = 3000.0) -> models.ToyModel:
    """Seeded embedder with three deliberate properties of real recognizers.

    1. Zero-mean conv filters reading one brightness axis: flat color patches
       carry almost no identity signal, textures carry a lot, and the model
       keys on luminance-like structure rather than chroma.
    2. The dense layer projects out the dominant trunk-feature directions a
       solid occluder excites, so a mask does not dominate the embedding
       space (recognizers keep most of their accuracy under solid masks).
    3. Embeddings concentrate in a narrow cone of the unit sphere (large
       constant before normalization), so natural distances are small and
       input gradients are gentle, as with a heavily trained network.
    """
    rng = np.random.default_rng(EMBEDDER_SEED)
    layers = trunk_layers() + [
        {"type": "dense", "name": "fc", "out_features": 8},
        {"type": "l2_normalize"},
    ]
    weights = trunk_weights(rng)
    spatial = rng.normal(0, 1.0, (6, 3, 3))
    spatial -= spatial.mean(axis=(1, 2), keepdims=True)
    w1 = spatial[:, None, :, :] * SKIN_AXIS[None, :, None, None]
    weights["conv1.weight"] = w1 * (np.sqrt(2.0 / 27) / w1.std())
    w2 = weights["conv2.weight"]
    w2 = w2 - w2.mean(axis=(2, 3), keepdims=True)
    weights["conv2.weight"] = w2 * (np.sqrt(2.0 / 54) / w2.std())
    weights["conv1.bias"] = np.zeros(6)
    weights["conv2.bias"] = np.zeros(8)
    weights["fc.weight"] = rng.normal(0, 1.0, (8, 8))
    weights["fc.bias"] = np.zeros(8)
    model = models.ToyModel("embedder", (SIZE, SIZE), layers, weights)

    f0 = np.array([trunk_features(model, im) for im in unmasked])
    f1 = np.array([trunk_features(model, im) for im in masked])
    # null the dominant occluder-response directions
    _, _, vt = np.linalg.svd(f1 - f0, full_matrices=False)
    proj = np.eye(f0.shape[1])
    for v in vt[:null_k]:
        proj = proj @ (np.eye(len(v)) - np.outer(v, v))
    weights["fc.weight"] = weights["fc.weight"] @ proj
    # cone concentration sized from the natural feature spread
    pre = np.array([weights["fc.weight"] @ f for f in f0])
    scale = np.median(np.linalg.norm(pre - pre.mean(axis=0), axis=1))
    weights["fc.bias"] = cone_beta * scale * np.ones(8) / np.sqrt(8.0)
    return models.ToyModel("embedder", (SIZE, SIZE), layers, weights)


def trunk_features(model: models.ToyModel, image: np.ndarray) -> np.ndarray:
    for layer, x in model.forward_trace(image):
        if layer["type"] == "dense":
            return x
    raise AssertionError("no dense layer")


def build_detector(unmasked: list[np.ndarray], masked: list[np.ndarray],
                   textured_masked: list[np.ndarray],
                   textured_target: float = 1.0,
                   textured_weight: float = 25.0) -> models.ToyModel:
    rng = np.random.default_rng(DETECTOR_SEED)
    layers = trunk_layers() + [{"type": "dense", "name": "fc", "out_features": 2}]
    weights = trunk_weights(rng)
    # half the first-layer channels are zero-mean (edge-energy) filters so the
    # trunk can sense texture smoothing, not just mask color
    w1 = weights["conv1.weight"]
    w1[3:] -= w1[3:].mean(axis=(2, 3), keepdims=True)
    w1[3:] *= np.sqrt(2.0 / 27) / w1[3:].std()
    # placeholder head so the trunk can run
    weights["fc.weight"] = np.zeros((2, 8))
    weights["fc.bias"] = np.zeros(2)
    det = models.ToyModel("detector", (SIZE, SIZE), layers, weights)

    samples = unmasked + masked + textured_masked
    feats = np.array([trunk_features(det, im) for im in samples])
    # textured masks get a low margin: they sit near the decision boundary,
    # like face-patterned masks confusing a detector tuned to solid masks
    targets = np.concatenate([np.full(len(unmasked), -CALIBRATION_MARGIN),
                              np.full(len(masked), CALIBRATION_MARGIN),
                              np.full(len(textured_masked), textured_target)])
    row_w = np.concatenate([np.ones(len(unmasked)), np.ones(len(masked)),
                            np.full(len(textured_masked), textured_weight)])
    x = np.column_stack([feats, np.ones(len(feats))]) * np.sqrt(row_w)[:, None]
    targets = targets * np.sqrt(row_w)
    sol = np.linalg.solve(x.T @ x + CALIBRATION_RIDGE * np.eye(x.shape[1]), x.T @ targets)
    w_vec, bias = sol[:-1], sol[-1]
    # logits (not_masked, masked) = (-z/2, +z/2) so p_masked = sigmoid(z)
    weights["fc.weight"] = np.vstack([-w_vec / 2.0, w_vec / 2.0])
    weights["fc.bias"] = np.array([-bias / 2.0, bias / 2.0])
    return models.ToyModel("detector", (SIZE, SIZE), layers, weights)


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------

def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(REPO / "fixtures"))
    parser.add_argument("--check", action="store_true",
                        help="run the full ordering verification (slow)")
    args = parser.parse_args()
    out = Path(args.out)
    for sub in ("models", "dataset/probes", "dataset/gallery", "dataset/templates"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    print("rendering identities ...")
    probe_images, probe_lms, gallery = {}, {}, {}
    for i in range(NUM_IDENTITIES):
        pts, (im_probe, im_gallery) = make_identity(DATASET_SEED + i)
        name = f"id{i:02d}"
        probe_images[name], probe_lms[name] = im_probe, pts
        gallery[name] = im_gallery
        _write(out / "dataset/probes" / f"{name}_p.png", im_probe, pts)
        _write(out / "dataset/gallery" / f"{name}_g.png", im_gallery, pts)
    for i in range(NUM_DISTRACTORS):
        pts, (im,) = make_identity(DATASET_SEED + 1000 + i, n_renders=1)
        _write(out / "dataset/gallery" / f"dist{i:02d}_g.png", im, pts)
        gallery[f"dist{i:02d}"] = im
    templates, template_lms = {}, {}
    for i in range(NUM_TEMPLATES):
        pts, (im,) = make_identity(DATASET_SEED + 2000 + i, n_renders=1,
                                   texture_freq=(8.0, 16.0),
                                   skin_shift=(-0.04, 0.0, 0.06),
                                   texture_amp=0.34)
        name = f"t{i:02d}"
        templates[name], template_lms[name] = im, pts
        _write(out / "dataset/templates" / f"{name}.png", im, pts)

    print("building solid-masked calibration set ...")
    calib_sources = []
    masked = []
    masked_blue = []
    for j, (name, im) in enumerate(sorted(probe_images.items()) + sorted(gallery.items())):
        lms = probe_lms.get(name)
        if lms is None:
            continue
        lmset = geometry.LandmarkSet(lms)
        color = MASK_PALETTE[j % len(MASK_PALETTE)]
        masked.append(baselines.solid_color_mask(im, lmset, color)[0])
        masked_blue.append(baselines.solid_color_mask(im, lmset)[0])
        calib_sources.append(im)

    print("building embedder ...")
    emb = build_embedder(calib_sources, masked_blue)
    models.save_model(emb, out / "models/embedder.json")

    print("calibrating detector on solid-masked faces ...")
    unmasked = list(probe_images.values()) + list(gallery.values()) + list(templates.values())
    # face-textured masks on distractor identities, low calibration margin
    tpl_names = sorted(templates)
    textured = []
    for j in range(12):
        pts, (im,) = make_identity(DATASET_SEED + 1000 + j, n_renders=1)
        tname = tpl_names[j % len(tpl_names)]
        i_dm, _, _ = geometry.delaunay_mask(
            im, geometry.LandmarkSet(pts), templates[tname],
            geometry.LandmarkSet(template_lms[tname]))
        textured.append(i_dm)
    det = build_detector(unmasked, masked, textured)
    models.save_model(det, out / "models/detector.json")

    print("sanity: detection rates")
    lmsets = {n: geometry.LandmarkSet(p) for n, p in probe_lms.items()}
    solid = {n: baselines.solid_color_mask(probe_images[n], lmsets[n])[0] for n in probe_images}
    rate_unmasked = evaluation.mask_detection_rate(list(probe_images.values()), det)
    rate_solid = evaluation.mask_detection_rate(list(solid.values()), det)
    print(f"  unmasked: {rate_unmasked:.3f}  solid: {rate_solid:.3f}")

    tpl_list = sorted(templates)
    tpl_images = [templates[n] for n in tpl_list]
    dm = {}
    for n in sorted(probe_images):
        k = evaluation.select_template(probe_images[n], tpl_images, emb)
        tname = tpl_list[k]
        i_dm, _, _ = geometry.delaunay_mask(
            probe_images[n], lmsets[n], templates[tname],
            geometry.LandmarkSet(template_lms[tname]))
        dm[n] = i_dm
    rate_dm = evaluation.mask_detection_rate(list(dm.values()), det)
    print(f"  dm: {rate_dm:.3f}")

    print("sanity: rank-1 orderings")
    g_names = sorted(gallery)
    g_embs = np.array([models.embed(emb, gallery[n]) for n in g_names])
    g_labels = np.array(g_names)

    def rank1(images: dict) -> float:
        names = sorted(images)
        p_embs = np.array([models.embed(emb, images[n]) for n in names])
        cmc = evaluation.cmc_curve(p_embs, g_embs, g_labels, np.array(names), 1)
        return cmc[1]

    r1_clean = rank1(probe_images)
    r1_solid = rank1(solid)
    r1_dm = rank1(dm)
    print(f"  rank1 clean {r1_clean:.3f}  solid {r1_solid:.3f}  dm {r1_dm:.3f}")

    if args.check:
        print("running adversarial stages on every probe (slow) ...")
        ncfg = attacks.NoiseAttackConfig()
        fcfg = attacks.FilterAttackConfig()
        adv, mf2m = {}, {}
        psnr_adv, psnr_mf = [], []
        for n in sorted(probe_images):
            k = evaluation.select_template(probe_images[n], tpl_images, emb)
            tname = tpl_list[k]
            tlms = geometry.LandmarkSet(template_lms[tname])
            i_dm, _, region = geometry.delaunay_mask(probe_images[n], lmsets[n],
                                                     templates[tname], tlms)
            a, _ = attacks.pgd_noise_attack(i_dm, probe_images[n], emb, det, ncfg, region)
            m, _ = attacks.mf2m_attack(probe_images[n], lmsets[n], templates[tname], tlms,
                                       emb, det, ncfg, fcfg)
            adv[n], mf2m[n] = a, m
            psnr_adv.append(evaluation.psnr(a, i_dm))
            psnr_mf.append(evaluation.psnr(m, i_dm))
        r1_adv, r1_mf = rank1(adv), rank1(mf2m)
        rate_adv = evaluation.mask_detection_rate(list(adv.values()), det)
        rate_mf = evaluation.mask_detection_rate(list(mf2m.values()), det)
        print(f"  rank1 advnoise {r1_adv:.4f}  mf2m {r1_mf:.4f}")
        print(f"  mask rate advnoise {rate_adv:.3f}  mf2m {rate_mf:.3f}")
        print(f"  mean psnr advnoise {np.mean(psnr_adv):.2f}  mf2m {np.mean(psnr_mf):.2f}")
        ok = (r1_clean >= r1_solid >= r1_dm >= r1_mf
              and rate_solid >= rate_dm >= rate_mf
              and np.mean(psnr_mf) >= np.mean(psnr_adv))
        print("ORDERING CHECKS:", "PASS" if ok else "FAIL")

    print("fixtures written to", out)


def _write(png_path: Path, image: np.ndarray, pts: np.ndarray) -> None:
    fileio.write_image(png_path, image)
    fileio.write_landmarks(png_path.with_name(png_path.stem + fileio.LANDMARK_SUFFIX),
                           pts, "ibug68")


if __name__ == "__main__":
    main()
