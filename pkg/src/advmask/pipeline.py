"""Experiment orchestration: config, dataset ingestion, per-image runs, metrics.

A run applies one masking/attack method to every probe image, writes each
result as PNG plus a float32 sidecar, computes the aggregate metric report
against the gallery, and records everything in a manifest whose digests make
the run verifiable. Identical configs and inputs produce byte-identical
outputs; set SOURCE_DATE_EPOCH to also pin the manifest timestamp.

Dataset directory contract: probes/, templates/, gallery/ each hold
``<name>.png`` plus ``<name>.landmarks.json`` (templates and gallery
landmarks optional where unused). The identity of ``<name>`` is everything
before the final underscore, so ``id07_p.png`` and ``id07_g.png`` match.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import datetime
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, attacks, baselines, evaluation, fileio, geometry, models
from .errors import ConfigError, ConfigTypeError, UnknownKey

logger = logging.getLogger(__name__)

METHODS = ("solid", "dm", "advnoise_dm", "mf2m")
BASELINE_PREFIX = "baseline:"


@dataclass
class ExperimentConfig:
    method: str
    fr_model: str
    md_model: str
    probes: str
    output: str
    templates: str | None = None
    gallery: str | None = None
    noise: attacks.NoiseAttackConfig = field(default_factory=attacks.NoiseAttackConfig)
    filter: attacks.FilterAttackConfig = field(default_factory=attacks.FilterAttackConfig)
    baseline: baselines.BaselineVariant | None = None
    far_targets: tuple[float, ...] = (1e-2,)
    max_rank: int = 10
    mask_color: tuple[float, float, float] = geometry.MEDICAL_BLUE
    seed: int | None = None
    workers: int = 1
    feather: float = 0.0

    @property
    def needs_templates(self) -> bool:
        return self.method in ("dm", "advnoise_dm", "mf2m")

    @property
    def is_baseline(self) -> bool:
        return self.method.startswith(BASELINE_PREFIX)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "models": {"fr": self.fr_model, "md": self.md_model},
            "data": {"probes": self.probes, "templates": self.templates,
                     "gallery": self.gallery},
            "attack": {
                "noise": dataclasses.asdict(self.noise),
                "filter": dataclasses.asdict(self.filter),
            },
            "evaluation": {"far_targets": list(self.far_targets), "max_rank": self.max_rank},
            "mask_color": list(self.mask_color),
            "seed": self.seed,
            "workers": self.workers,
            "output": self.output,
            "feather": self.feather,
        }
        if self.baseline is not None:
            b = dataclasses.asdict(self.baseline)
            b["variant"] = self.baseline.variant.value
            d["attack"]["baseline"] = b
        return d


def _expect(obj, path, types, type_name):
    allowed = types if isinstance(types, tuple) else (types,)
    if isinstance(obj, bool) and bool not in allowed:
        raise ConfigTypeError(path, type_name, obj)
    if not isinstance(obj, types):
        raise ConfigTypeError(path, type_name, obj)
    return obj


def _walk_strict(obj: dict, allowed: dict, prefix: str = "") -> None:
    for key in obj:
        path = f"{prefix}{key}"
        if key not in allowed:
            raise UnknownKey(path)
        sub = allowed[key]
        if isinstance(sub, dict):
            if obj[key] is not None:
                _expect(obj[key], path, dict, "object")
                _walk_strict(obj[key], sub, path + ".")


_SCHEMA = {
    "method": None,
    "models": {"fr": None, "md": None},
    "data": {"probes": None, "templates": None, "gallery": None},
    "attack": {
        "noise": {"epsilon": None, "step_size": None, "iterations": None,
                  "ratio": None, "target_label": None},
        "filter": {"noise_epsilon": None, "kernel_size": None, "kernel_step": None,
                   "kernel_iterations": None, "ratio": None, "filter_only": None},
        "baseline": {"variant": None, "momentum_mu": None, "ti_kernel_size": None,
                     "di_probability": None, "di_min_scale": None},
    },
    "evaluation": {"far_targets": None, "max_rank": None},
    "mask_color": None,
    "seed": None,
    "workers": None,
    "output": None,
    "feather": None,
}


def parse_config(source) -> ExperimentConfig:
    """Parse and validate an experiment config (path or dict). Strict keys.

    Attack fields left out fall back to the standard defaults: the noise
    attack uses epsilon 0.04, step 0.001, 40 iterations, ratio 1; the
    filtering attack uses noise epsilon 0.01, kernel size 5, step 0.1,
    160 iterations, ratio 1.
    """
    obj = fileio.read_json(source) if not isinstance(source, dict) else source
    _expect(obj, "<config>", dict, "object")
    _walk_strict(obj, _SCHEMA)

    for required in ("method", "models", "data", "output"):
        if required not in obj:
            raise ConfigError(f"missing required config key: {required}")
    method = _expect(obj["method"], "method", str, "string")
    if method not in METHODS and not method.startswith(BASELINE_PREFIX):
        raise ConfigError(f"unknown method {method!r}")

    modelsec = obj["models"]
    for k in ("fr", "md"):
        if k not in modelsec:
            raise ConfigError(f"missing required config key: models.{k}")
        _expect(modelsec[k], f"models.{k}", str, "string")
    datasec = obj["data"]
    if "probes" not in datasec:
        raise ConfigError("missing required config key: data.probes")
    _expect(datasec["probes"], "data.probes", str, "string")

    attack = obj.get("attack") or {}
    noise_kwargs = dict(attack.get("noise") or {})
    for k, typ in (("epsilon", float), ("step_size", float), ("ratio", float)):
        if k in noise_kwargs:
            noise_kwargs[k] = float(_expect(noise_kwargs[k], f"attack.noise.{k}",
                                            (int, float), "number"))
    for k in ("iterations", "target_label"):
        if k in noise_kwargs:
            noise_kwargs[k] = int(_expect(noise_kwargs[k], f"attack.noise.{k}", int, "integer"))
    noise = attacks.NoiseAttackConfig(**noise_kwargs)

    filter_kwargs = dict(attack.get("filter") or {})
    for k in ("noise_epsilon", "kernel_step", "ratio"):
        if k in filter_kwargs:
            filter_kwargs[k] = float(_expect(filter_kwargs[k], f"attack.filter.{k}",
                                             (int, float), "number"))
    for k in ("kernel_size", "kernel_iterations"):
        if k in filter_kwargs:
            filter_kwargs[k] = int(_expect(filter_kwargs[k], f"attack.filter.{k}",
                                           int, "integer"))
    if "filter_only" in filter_kwargs:
        filter_kwargs["filter_only"] = _expect(filter_kwargs["filter_only"],
                                               "attack.filter.filter_only", bool, "boolean")
    filt = attacks.FilterAttackConfig(**filter_kwargs)

    variant = None
    if method.startswith(BASELINE_PREFIX):
        bsec = dict(attack.get("baseline") or {})
        name = method[len(BASELINE_PREFIX):]
        bsec.pop("variant", None)
        try:
            var = baselines.Variant(name)
        except ValueError:
            raise ConfigError(f"unknown baseline variant {name!r}") from None
        variant = baselines.BaselineVariant(var, **{
            k: (int(v) if k == "ti_kernel_size" else float(v)) for k, v in bsec.items()})
        variant.validate()

    evalsec = obj.get("evaluation") or {}
    far_targets = tuple(float(f) for f in evalsec.get("far_targets", [1e-2]))
    max_rank = int(evalsec.get("max_rank", 10))
    if max_rank < 1:
        raise ConfigError("evaluation.max_rank must be >= 1")

    mask_color = tuple(float(c) for c in obj.get("mask_color", geometry.MEDICAL_BLUE))
    if len(mask_color) != 3 or not all(0.0 <= c <= 1.0 for c in mask_color):
        raise ConfigError("mask_color must be three values in [0, 1]")

    seed = obj.get("seed")
    if seed is not None:
        seed = int(_expect(seed, "seed", int, "integer"))
    workers = int(obj.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    feather = float(obj.get("feather", 0.0))

    cfg = ExperimentConfig(
        method=method, fr_model=modelsec["fr"], md_model=modelsec["md"],
        probes=datasec["probes"], templates=datasec.get("templates"),
        gallery=datasec.get("gallery"), output=obj["output"],
        noise=noise, filter=filt, baseline=variant,
        far_targets=far_targets, max_rank=max_rank, mask_color=mask_color,
        seed=seed, workers=workers, feather=feather,
    )
    try:
        noise.validate()
        filt.validate()
    except Exception as exc:
        raise ConfigError(f"invalid attack config: {exc}") from exc
    if variant is not None and variant.stochastic and seed is None:
        raise ConfigError(f"method {method!r} is stochastic; config must set a seed")
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Check referenced paths before touching any image."""
    for label, path in (("models.fr", cfg.fr_model), ("models.md", cfg.md_model),
                        ("data.probes", cfg.probes)):
        if not Path(path).exists():
            raise ConfigError(f"{label} path does not exist: {path}")
    if cfg.needs_templates:
        if not cfg.templates or not Path(cfg.templates).exists():
            raise ConfigError(f"method {cfg.method!r} needs data.templates")
    if cfg.gallery and not Path(cfg.gallery).exists():
        raise ConfigError(f"data.gallery path does not exist: {cfg.gallery}")


# -- dataset helpers ---------------------------------------------------------

def identity_of(name: str) -> str:
    stem = Path(name).stem
    return stem.rsplit("_", 1)[0] if "_" in stem else stem


def list_images(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))


def load_landmarks_for(png_path: Path) -> geometry.LandmarkSet:
    lm_path = png_path.with_name(png_path.stem + fileio.LANDMARK_SUFFIX)
    pts, scheme = fileio.read_landmarks(lm_path)
    return geometry.LandmarkSet(pts, scheme)


def _check_bounds(lms: geometry.LandmarkSet, image: np.ndarray, name: str) -> None:
    h, w = image.shape[:2]
    x, y = lms.points[:, 0], lms.points[:, 1]
    if (x < 0).any() or (y < 0).any() or (x > w).any() or (y > h).any():
        raise ConfigError(f"landmarks out of image bounds for {name}")


# -- per-image work ----------------------------------------------------------

def _probe_seed(base: int | None, index: int) -> int | None:
    return None if base is None else base * 100003 + index


def _process_probe(task: dict) -> dict:
    """Mask/attack one probe and write its outputs. Runs in a worker."""
    cfg: ExperimentConfig = task["cfg"]
    probe_path = Path(task["probe"])
    out_dir = Path(cfg.output)
    name = probe_path.stem
    entry = {"name": name, "identity": identity_of(name),
             "probe": str(probe_path), "probe_sha256": fileio.sha256_file(probe_path),
             "error": None}
    try:
        fr = models.load_model(cfg.fr_model)
        md = models.load_model(cfg.md_model)
        image = fileio.read_image(probe_path)
        lms = load_landmarks_for(probe_path)
        _check_bounds(lms, image, name)

        template_name = None
        if cfg.needs_templates:
            tpl_paths = list_images(cfg.templates)
            if not tpl_paths:
                raise ConfigError(f"no templates in {cfg.templates}")
            tpl_images = [fileio.read_image(p) for p in tpl_paths]
            k = evaluation.select_template(image, tpl_images, fr)
            template_name = tpl_paths[k].stem
            tpl_image = tpl_images[k]
            tpl_lms = load_landmarks_for(tpl_paths[k])

        report = None
        if cfg.method == "solid" or cfg.is_baseline:
            base, region = baselines.solid_color_mask(image, lms, cfg.mask_color)
        else:
            base, _, region = geometry.delaunay_mask(image, lms, tpl_image, tpl_lms)

        if cfg.method in ("solid", "dm"):
            final = base
        elif cfg.method == "advnoise_dm":
            final, report = attacks.pgd_noise_attack(base, image, fr, md, cfg.noise, region)
        elif cfg.method == "mf2m":
            final, report = attacks.mf2m_attack(image, lms, tpl_image, tpl_lms,
                                                fr, md, cfg.noise, cfg.filter)
        else:
            final, report = baselines.fgsm_family_attack(
                base, image, fr, md, cfg.baseline, cfg.noise, region,
                seed=_probe_seed(cfg.seed, task["index"]))

        paths = {}
        for kind, arr in (("base", base), ("image", final)):
            sub = out_dir / ("bases" if kind == "base" else "images")
            png = sub / f"{name}.png"
            raw = sub / f"{name}{fileio.FLOAT_SIDECAR_SUFFIX}"
            fileio.write_image(png, arr)
            fileio.write_float_sidecar(raw, arr)
            paths[kind] = {"png": str(png), "png_sha256": fileio.sha256_file(png),
                           "raw": str(raw), "raw_sha256": fileio.sha256_file(raw)}
        entry.update(base_output=paths["base"], final_output=paths["image"],
                     template=template_name)
        if report is not None:
            rp = out_dir / "reports" / f"{name}.json"
            fileio.write_json(rp, report.to_dict(include_timing=False))
            entry["report"] = str(rp)
            entry["report_sha256"] = fileio.sha256_file(rp)
        else:
            entry["report"] = None
    except Exception as exc:  # recorded per image; the run continues
        logger.exception("probe %s failed", name)
        entry["error"] = f"{type(exc).__name__}: {exc}"
    return entry


# -- gallery embedding cache ---------------------------------------------------

def _gallery_embeddings(cfg: ExperimentConfig, fr, fr_digest: str,
                        out_dir: Path) -> tuple[np.ndarray, np.ndarray]:
    cache_dir = out_dir / "cache" / "embeddings" / fr_digest[:16]
    cache_dir.mkdir(parents=True, exist_ok=True)
    paths = list_images(cfg.gallery)
    embs, labels = [], []
    for p in paths:
        digest = fileio.sha256_file(p)
        cache_file = cache_dir / f"{digest[:32]}.npy"
        if cache_file.exists():
            embs.append(np.load(cache_file))
        else:
            e = models.embed(fr, fileio.read_image(p))
            np.save(cache_file, e)
            embs.append(e)
        labels.append(identity_of(p.stem))
    return np.array(embs), np.array(labels)


# -- run ----------------------------------------------------------------------

def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return datetime.datetime.fromtimestamp(int(t), datetime.timezone.utc).isoformat()


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute the configured run end to end; returns the manifest dict.

    Per-image failures are recorded in the manifest and do not abort the
    run. Config and model errors raise before any image is processed.
    """
    validate_config(cfg)
    fr = models.load_model(cfg.fr_model)
    md = models.load_model(cfg.md_model)
    if fr.kind != "embedder" or md.kind != "detector":
        raise ConfigError("models.fr must be an embedder and models.md a detector")
    fr_digest = fileio.sha256_file(cfg.fr_model)

    out_dir = Path(cfg.output)
    for sub in ("images", "bases", "reports"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    probe_paths = list_images(cfg.probes)
    if not probe_paths:
        raise ConfigError(f"no probe images in {cfg.probes}")
    tasks = [{"cfg": cfg, "probe": str(p), "index": i} for i, p in enumerate(probe_paths)]

    if cfg.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            entries = list(pool.map(_process_probe, tasks))
    else:
        entries = [_process_probe(t) for t in tasks]
    entries.sort(key=lambda e: e["name"])

    ok = [e for e in entries if e["error"] is None]
    metrics = compute_metrics(cfg, ok, fr, md, fr_digest, out_dir) if ok else None
    metrics_path = None
    if metrics is not None:
        metrics_path = out_dir / "metrics.json"
        fileio.write_json(metrics_path, metrics.to_dict())

    manifest = {
        "tool_version": __version__,
        "created": _timestamp(),
        "config": cfg.to_dict(),
        "model_digests": {"fr": fr_digest, "md": fileio.sha256_file(cfg.md_model)},
        "entries": entries,
        "metrics": None if metrics_path is None else
        {"path": str(metrics_path), "sha256": fileio.sha256_file(metrics_path)},
        "counts": {"ok": len(ok), "failed": len(entries) - len(ok)},
    }
    fileio.write_json(out_dir / "manifest.json", manifest)
    return manifest


def compute_metrics(cfg: ExperimentConfig, entries: list[dict], fr, md,
                    fr_digest: str, out_dir: Path) -> evaluation.MetricReport:
    """Aggregate MetricReport over completed entries, from the f32 sidecars."""
    finals, bases, labels = [], [], []
    for e in entries:
        png = fileio.read_image(e["final_output"]["png"])
        h, w = png.shape[:2]
        finals.append(fileio.read_float_sidecar(e["final_output"]["raw"], h, w))
        bases.append(fileio.read_float_sidecar(e["base_output"]["raw"], h, w))
        labels.append(e["identity"])

    rate = evaluation.mask_detection_rate(finals, md)
    psnrs = [evaluation.psnr(f, b) for f, b in zip(finals, bases)]
    ssims = [evaluation.ssim(f, b) for f, b in zip(finals, bases)]
    mean_psnr = float(np.mean(psnrs))
    mean_ssim = float(np.mean(ssims))

    cmc = tar = auc = roc = unreachable = None
    if cfg.gallery:
        g_embs, g_labels = _gallery_embeddings(cfg, fr, fr_digest, out_dir)
        p_embs = np.array([models.embed(fr, f) for f in finals])
        p_labels = np.array(labels)
        max_rank = min(cfg.max_rank, len(g_labels))
        cmc = evaluation.cmc_curve(p_embs, g_embs, g_labels, p_labels, max_rank)
        dists = np.linalg.norm(p_embs[:, None, :] - g_embs[None, :, :], axis=2)
        same = p_labels[:, None] == g_labels[None, :]
        scores = evaluation.ScoreSet(positives=dists[same], negatives=dists[~same])
        ver = evaluation.verification_metrics(scores, cfg.far_targets)
        tar, auc = ver.tar_at_far, ver.auc
        roc = [[float(a), float(b)] for a, b in ver.roc]
        unreachable = list(ver.unreachable_fars)

    return evaluation.MetricReport(
        mask_detection_rate=rate, cmc=cmc, tar_at_far=tar, auc=auc,
        psnr=mean_psnr, ssim=mean_ssim, roc=roc, unreachable_fars=unreachable)


def verify_manifest(manifest_path) -> list[str]:
    """Return a list of digest mismatches / missing files (empty = intact)."""
    manifest = fileio.read_json(manifest_path)
    problems = []

    def check(path, digest):
        if not Path(path).exists():
            problems.append(f"missing: {path}")
        elif fileio.sha256_file(path) != digest:
            problems.append(f"digest mismatch: {path}")

    for e in manifest["entries"]:
        if e["error"] is not None:
            continue
        for key in ("base_output", "final_output"):
            check(e[key]["png"], e[key]["png_sha256"])
            check(e[key]["raw"], e[key]["raw_sha256"])
        if e.get("report"):
            check(e["report"], e["report_sha256"])
    if manifest.get("metrics"):
        check(manifest["metrics"]["path"], manifest["metrics"]["sha256"])
    return problems


def evaluate_manifest(manifest_path, metrics_out=None) -> evaluation.MetricReport:
    """Recompute the MetricReport for an existing run from its on-disk outputs."""
    manifest = fileio.read_json(manifest_path)
    problems = verify_manifest(manifest_path)
    if problems:
        raise ConfigError("manifest failed verification: " + "; ".join(problems[:5]))
    cfg = parse_config(manifest["config"])
    validate_config(cfg)
    fr = models.load_model(cfg.fr_model)
    md = models.load_model(cfg.md_model)
    ok = [e for e in manifest["entries"] if e["error"] is None]
    report = compute_metrics(cfg, ok, fr, md, manifest["model_digests"]["fr"],
                             Path(cfg.output))
    if metrics_out is not None:
        fileio.write_json(metrics_out, report.to_dict())
    return report
