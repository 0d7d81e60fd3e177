"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines live.
Criteria 1-4 also enforce their wall-clock budgets.
"""

import time

import numpy as np
import pytest

from advmask import attacks, baselines, evaluation, fileio, geometry, models, pipeline
from advmask.attacks import FilterAttackConfig, NoiseAttackConfig
from advmask.baselines import BaselineVariant, Variant

from conftest import FIXTURES, fd_check, load_face

RESULTS = []


def record(num, name, ok, detail=""):
    line = f"ACCEPTANCE {num} {name}: {'PASS' if ok else 'FAIL'}" + (
        f" ({detail})" if detail else "")
    RESULTS.append(line)
    print("\n" + line)
    assert ok, line


# -- 1. geometry suite --------------------------------------------------------------

def _incircle_max_violation(points, mesh):
    worst = -np.inf
    for tri in mesh:
        a, b, c = points[tri]
        orient = np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        others = np.delete(np.arange(len(points)), tri)
        d = points[others]
        ax, ay = a[0] - d[:, 0], a[1] - d[:, 1]
        bx, by = b[0] - d[:, 0], b[1] - d[:, 1]
        cx, cy = c[0] - d[:, 0], c[1] - d[:, 1]
        det = (ax * (by * (cx ** 2 + cy ** 2) - cy * (bx ** 2 + by ** 2))
               - ay * (bx * (cx ** 2 + cy ** 2) - cx * (bx ** 2 + by ** 2))
               + (ax * ax + ay * ay) * (bx * cy - by * cx)) * orient
        worst = max(worst, det.max())
    return worst


def test_criterion_1_geometry_suite():
    t0 = time.perf_counter()
    worst_incircle = -np.inf
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 51))
        pts = rng.uniform(0.0, 1.0, (n, 2))
        mesh = geometry.delaunay_triangulate(geometry.LandmarkSet(pts, "any"))
        worst_incircle = max(worst_incircle, _incircle_max_violation(pts, mesh))

    rng = np.random.default_rng(123)
    img = rng.uniform(0, 1, (48, 48, 3))
    pts = np.array([[5, 5], [43, 6], [44, 42], [6, 43], [24, 3], [24, 45],
                    [3, 24], [45, 24]], dtype=float)
    lm = geometry.LandmarkSet(pts, "any")
    mesh = geometry.delaunay_triangulate(lm)
    warped = geometry.warp_mesh(img, lm, lm, mesh)
    coverage = geometry.warp_mesh(np.ones_like(img), lm, lm, mesh) > 0.5
    warp_err = np.abs(warped - img)[coverage].max()

    affine_err = 0.0
    for seed in range(50):
        r = np.random.default_rng(1000 + seed)
        src = r.uniform(0, 100, (3, 2))
        dst = r.uniform(0, 100, (3, 2))
        if geometry.triangle_area(src) < 1 or geometry.triangle_area(dst) < 1:
            continue
        m = geometry.fit_affine(src, dst)
        affine_err = max(affine_err, np.abs(geometry.apply_affine(m, src) - dst).max())

    elapsed = time.perf_counter() - t0
    ok = worst_incircle <= 1e-9 and warp_err <= 1e-6 and affine_err <= 1e-9 and elapsed < 30
    record(1, "geometry-suite", ok,
           f"incircle {worst_incircle:.2e}, warp {warp_err:.2e}, "
           f"affine {affine_err:.2e}, {elapsed:.1f}s")


# -- 2. filtering identity ------------------------------------------------------------

def test_criterion_2_filtering_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(16, 64)), int(rng.integers(16, 64))
        img = rng.uniform(0, 1, (h, w, 3))
        kernels = attacks.init_delta_kernels(h, w, 5)
        out = attacks.pixelwise_filter(img, kernels)
        worst = max(worst, float(np.abs(out - img).max()))
    elapsed = time.perf_counter() - t0
    ok = worst == 0.0 and elapsed < 5
    record(2, "filtering-identity", ok, f"max abs diff {worst}, {elapsed:.1f}s")


# -- 3. gradient oracle ----------------------------------------------------------------

def test_criterion_3_gradient_oracle(embedder, detector):
    t0 = time.perf_counter()
    img, _ = load_face(FIXTURES / "dataset/probes/id05_p.png")
    ref = models.embed(embedder, np.roll(img, 9, axis=0))
    rng = np.random.default_rng(7)
    coords = [(int(r), int(c), int(ch)) for r, c, ch in
              zip(rng.integers(0, 112, 160), rng.integers(0, 112, 160),
                  rng.integers(0, 3, 160))]
    n_emb, err_emb = fd_check(embedder, models.EmbeddingDistanceLoss(ref), img,
                              coords, h=1e-4)
    n_det, err_det = fd_check(detector, models.CrossEntropyLoss(0), img,
                              coords, h=1e-4)

    # kernel chain rule, end to end through filter + embedder; probes that
    # cross a leaky-rectifier kink are skipped like the input-gradient check
    k0 = attacks.init_delta_kernels(112, 112, 5)
    loss = models.EmbeddingDistanceLoss(ref)
    g_img = embedder.input_gradient(loss, attacks.pixelwise_filter(img, k0))
    g_k = attacks.kernel_gradient(g_img, img, 5)
    worst_k = 0.0
    checked_k = 0
    attempts = 0
    h = 1e-4
    while checked_k < 100 and attempts < 2000:
        attempts += 1
        r, c, j = rng.integers(112), rng.integers(112), rng.integers(25)
        if abs(g_k[r, c, j]) <= 1e-8:
            continue
        kp = k0.copy()
        kp[r, c, j] += h
        km = k0.copy()
        km[r, c, j] -= h
        x_hi = attacks.pixelwise_filter(img, kp)
        x_lo = attacks.pixelwise_filter(img, km)
        signs_hi = [np.sign(p) for p in embedder.preactivations(x_hi)]
        signs_lo = [np.sign(p) for p in embedder.preactivations(x_lo)]
        if any((a != b).any() for a, b in zip(signs_hi, signs_lo)):
            continue
        fd = (embedder.loss_value(loss, x_hi) - embedder.loss_value(loss, x_lo)) / (2 * h)
        worst_k = max(worst_k, abs(fd - g_k[r, c, j]) / max(abs(fd), abs(g_k[r, c, j])))
        checked_k += 1

    elapsed = time.perf_counter() - t0
    ok = (n_emb >= 100 and n_det >= 100 and checked_k >= 100
          and err_emb < 1e-4 and err_det < 1e-4 and worst_k < 1e-4 and elapsed < 60)
    record(3, "gradient-oracle", ok,
           f"emb {err_emb:.1e}/{n_emb}, det {err_det:.1e}/{n_det}, "
           f"kernel {worst_k:.1e}/{checked_k}, {elapsed:.1f}s")


# -- 4. attack contracts -----------------------------------------------------------------

def _contract_violations(out, base, region, eps, report):
    bad = []
    if np.abs(out - base).max() > eps + 1e-9:
        bad.append("linf")
    if not np.array_equal(out[region == 0], base[region == 0]):
        bad.append("locality")
    if not report.final_loss >= report.initial_loss:
        bad.append("loss")
    return bad


def test_criterion_4_attack_contracts(embedder, detector, detected_pair):
    t0 = time.perf_counter()
    (probe, plm), (tpl, tlm) = detected_pair
    i_dm, _, region = geometry.delaunay_mask(probe, plm, tpl, tlm)
    failures = []

    cfg = NoiseAttackConfig()
    out, rep = attacks.pgd_noise_attack(i_dm, probe, embedder, detector, cfg, region)
    failures += [f"pgd:{v}" for v in _contract_violations(out, i_dm, region, cfg.epsilon, rep)]

    solid, s_region = baselines.solid_color_mask(probe, plm)
    for variant in Variant:
        out, rep = baselines.fgsm_family_attack(
            solid, probe, embedder, detector, BaselineVariant(variant), cfg,
            s_region, seed=11)
        failures += [f"{variant.value}:{v}"
                     for v in _contract_violations(out, solid, s_region, cfg.epsilon, rep)]

    out, rep = attacks.mf2m_attack(probe, plm, tpl, tlm, embedder, detector,
                                   NoiseAttackConfig(), FilterAttackConfig())
    if not np.array_equal(out[region == 0], i_dm[region == 0]):
        failures.append("mf2m:locality")
    if not rep.final_loss >= rep.initial_loss:
        failures.append("mf2m:loss")
    if rep.noise_stage is not None and rep.noise_stage.perturbation_linf > 0.01 + 1e-9:
        failures.append("mf2m:noise-linf")

    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120
    record(4, "attack-contracts", ok, f"{failures or 'all hold'}, {elapsed:.1f}s")


# -- 5. reduction identities ---------------------------------------------------------------

def test_criterion_5_reduction_identities(embedder, detector, probe_id00):
    probe, plm = probe_id00
    solid, region = baselines.solid_color_mask(probe, plm)
    cfg = NoiseAttackConfig(iterations=10)

    def run(variant):
        out, _ = baselines.fgsm_family_attack(solid, probe, embedder, detector,
                                              variant, cfg, region, seed=3)
        return out

    checks = {
        "mi(mu=0)==i": np.array_equal(run(BaselineVariant(Variant.MI_FGSM, momentum_mu=0.0)),
                                      run(BaselineVariant(Variant.I_FGSM))),
        "di(p=0)==i": np.array_equal(run(BaselineVariant(Variant.DI2_FGSM, di_probability=0.0)),
                                     run(BaselineVariant(Variant.I_FGSM))),
        "ti1x1-mi==mi": np.array_equal(run(BaselineVariant(Variant.TI_MI_FGSM, ti_kernel_size=1)),
                                       run(BaselineVariant(Variant.MI_FGSM))),
        "ti1x1-fgsm==fgsm": np.array_equal(run(BaselineVariant(Variant.TI_FGSM, ti_kernel_size=1)),
                                           run(BaselineVariant(Variant.FGSM))),
    }
    ok = all(checks.values())
    record(5, "reduction-identities", ok,
           ", ".join(k for k, v in checks.items() if not v) or "bitwise equal")


# -- 6. metric oracles -----------------------------------------------------------------------

def test_criterion_6_metric_oracles():
    rng = np.random.default_rng(42)
    pos = rng.normal(0.7, 0.25, 1000)
    neg = rng.normal(1.4, 0.35, 1000)
    res = evaluation.verification_metrics(evaluation.ScoreSet(pos, neg), [0.01])
    u = ((pos[:, None] < neg[None, :]).sum()
         + 0.5 * (pos[:, None] == neg[None, :]).sum()) / (1000 * 1000)
    auc_ok = abs(res.auc - u) < 1e-12

    probes = rng.normal(size=(20, 6))
    gallery = rng.normal(size=(100, 6))
    g_labels = rng.integers(0, 20, 100)
    g_labels[:20] = np.arange(20)
    cmc = evaluation.cmc_curve(probes, gallery, g_labels, np.arange(20), 100)
    cmc_ok = True
    for k in range(1, 101):
        hits = 0
        for i in range(20):
            order = sorted(range(100),
                           key=lambda j: (np.linalg.norm(probes[i] - gallery[j]), j))
            hits += any(g_labels[j] == i for j in order[:k])
        if cmc[k] != hits / 20.0:
            cmc_ok = False
            break

    a = rng.uniform(0, 1, (32, 32, 3))
    ssim_ok = evaluation.ssim(a, a) == 1.0
    flat = np.full((16, 16, 3), 0.3)
    psnr_ok = evaluation.psnr(flat, flat + 0.1) == pytest.approx(20.0, abs=1e-12)

    ok = auc_ok and cmc_ok and ssim_ok and psnr_ok
    record(6, "metric-oracles", ok,
           f"auc-U {abs(res.auc - u):.1e}, cmc exact: {cmc_ok}, "
           f"ssim(a,a)=1: {ssim_ok}, psnr 20dB: {psnr_ok}")


# -- 7. ordering reproduction -------------------------------------------------------------------

def _run_method(method, out_dir, workers=2):
    cfg = pipeline.parse_config({
        "method": method,
        "models": {"fr": str(FIXTURES / "models/embedder.json"),
                   "md": str(FIXTURES / "models/detector.json")},
        "data": {"probes": str(FIXTURES / "dataset/probes"),
                 "templates": str(FIXTURES / "dataset/templates"),
                 "gallery": str(FIXTURES / "dataset/gallery")},
        "evaluation": {"max_rank": 5},
        "workers": workers,
        "output": str(out_dir),
    })
    manifest = pipeline.run_experiment(cfg)
    assert manifest["counts"]["failed"] == 0
    return fileio.read_json(out_dir / "metrics.json")


def test_criterion_7_ordering_reproduction(tmp_path, embedder):
    metrics = {m: _run_method(m, tmp_path / m)
               for m in ("solid", "dm", "advnoise_dm", "mf2m")}

    # no-mask rank-1 on the raw probes against the same gallery
    g_paths = sorted((FIXTURES / "dataset/gallery").glob("*.png"))
    g_embs = np.array([models.embed(embedder, fileio.read_image(p)) for p in g_paths])
    g_labels = np.array([pipeline.identity_of(p.stem) for p in g_paths])
    p_paths = sorted((FIXTURES / "dataset/probes").glob("*.png"))
    p_embs = np.array([models.embed(embedder, fileio.read_image(p)) for p in p_paths])
    p_labels = np.array([pipeline.identity_of(p.stem) for p in p_paths])
    rank1_clean = evaluation.cmc_curve(p_embs, g_embs, g_labels, p_labels, 1)[1]

    r1 = {m: metrics[m]["cmc"]["1"] for m in metrics}
    rate = {m: metrics[m]["mask_detection_rate"] for m in metrics}
    psnr = {m: metrics[m]["psnr"] for m in metrics}

    ident_ok = rank1_clean >= r1["solid"] >= r1["dm"] >= r1["mf2m"]
    rate_ok = rate["solid"] >= rate["dm"] >= rate["mf2m"]
    # attack strengths are matched on identification impact, as in the
    # source protocol; both adversarial methods must land within one probe
    strength_ok = abs(r1["advnoise_dm"] - r1["mf2m"]) <= 1 / 16 + 1e-12
    psnr_ok = psnr["mf2m"] >= psnr["advnoise_dm"]

    ok = ident_ok and rate_ok and strength_ok and psnr_ok
    record(7, "ordering-reproduction", ok,
           f"rank1 clean {rank1_clean:.3f} >= solid {r1['solid']:.3f} >= "
           f"dm {r1['dm']:.3f} >= mf2m {r1['mf2m']:.3f}; "
           f"rate {rate['solid']:.2f} >= {rate['dm']:.2f} >= {rate['mf2m']:.2f}; "
           f"psnr mf2m {psnr['mf2m']:.2f} >= advnoise {psnr['advnoise_dm']:.2f}")


# -- 8. determinism -------------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    import shutil
    root = tmp_path / "mini"
    (root / "probes").mkdir(parents=True)
    for name in ("id00_p", "id01_p", "id02_p"):
        for ext in (".png", ".landmarks.json"):
            shutil.copy(FIXTURES / "dataset/probes" / f"{name}{ext}",
                        root / "probes" / f"{name}{ext}")
    obj = {
        "method": "advnoise_dm",
        "models": {"fr": str(FIXTURES / "models/embedder.json"),
                   "md": str(FIXTURES / "models/detector.json")},
        "data": {"probes": str(root / "probes"),
                 "templates": str(FIXTURES / "dataset/templates"),
                 "gallery": str(FIXTURES / "dataset/gallery")},
        "workers": 2,
        "output": str(tmp_path / "out"),
    }

    def snapshot():
        out = tmp_path / "out"
        return {str(p.relative_to(out)): p.read_bytes()
                for p in sorted(out.rglob("*")) if p.is_file()}

    pipeline.run_experiment(pipeline.parse_config(obj))
    first = snapshot()
    pipeline.run_experiment(pipeline.parse_config(obj))
    second = snapshot()

    same_keys = set(first) == set(second)
    diffs = [k for k in first if same_keys and first[k] != second[k]]
    ok = same_keys and not diffs
    record(8, "determinism", ok,
           f"{len(first)} files byte-identical across reruns (workers=2)"
           if ok else f"differs: {diffs[:3]}")


# -- 9. ablation ----------------------------------------------------------------------------------

def test_criterion_9_noise_assists_filtering(embedder, detector):
    """Equal kernel-iteration counts: noise+filter vs filter-only joint loss.

    Known red on the frozen toy fixtures: the unbounded raw-gradient kernel
    updates recover the detector term in a few large steps whose incidental
    embedding displacement exceeds what the small-ball noise stage
    contributes, so filtering-only ends slightly ahead. See the decisions
    ledger for the blocking analysis; the assertion is kept as specified.
    """
    full_cfg = FilterAttackConfig()
    ablation_cfg = FilterAttackConfig(filter_only=True)
    assert full_cfg.kernel_iterations == ablation_cfg.kernel_iterations

    full_losses, ablation_losses = [], []
    tpl_files = sorted((FIXTURES / "dataset/templates").glob("*.png"))
    templates = [load_face(p) for p in tpl_files]
    for name in ("id00_p", "id02_p", "id05_p"):
        probe, plm = load_face(FIXTURES / f"dataset/probes/{name}.png")
        k = evaluation.select_template(probe, [t[0] for t in templates], embedder)
        tpl, tlm = templates[k]
        _, rep_full = attacks.mf2m_attack(probe, plm, tpl, tlm, embedder, detector,
                                          NoiseAttackConfig(), full_cfg)
        _, rep_ablation = attacks.mf2m_attack(probe, plm, tpl, tlm, embedder, detector,
                                              NoiseAttackConfig(), ablation_cfg)
        full_losses.append(rep_full.final_loss)
        ablation_losses.append(rep_ablation.final_loss)
    mean_full = float(np.mean(full_losses))
    mean_ablation = float(np.mean(ablation_losses))
    ok = mean_full >= mean_ablation
    record(9, "noise-assists-filtering", ok,
           f"mean joint loss {mean_full:.5f} vs filter-only {mean_ablation:.5f} "
           f"at T={full_cfg.kernel_iterations}; known fixture limitation, "
           f"see decisions ledger")


@pytest.fixture(scope="session", autouse=True)
def summary():
    yield
    if RESULTS:
        print("\n" + "\n".join(RESULTS))
