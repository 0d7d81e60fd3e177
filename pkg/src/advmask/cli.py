"""Command-line interface.

Subcommands: ``mask`` (solid / faced-mask generation), ``attack`` (the
adversarial methods), ``evaluate`` (metrics over an existing manifest), and
``report`` (CSV/JSON plot data from a metrics file). Flags mirror config
keys; ``--config`` supplies a JSON file that flags override.

Exit codes: 0 success, 2 config error, 3 run finished with per-image
failures recorded in the manifest.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import fileio, pipeline
from .errors import AdvMaskError, ConfigError

MASK_METHODS = ("solid", "dm")
ATTACK_METHODS = ("advnoise_dm", "mf2m")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--probes", help="directory of probe PNGs + landmark sidecars")
    p.add_argument("--templates", help="directory of template faces")
    p.add_argument("--gallery", help="directory of gallery faces (enables CMC/ROC)")
    p.add_argument("--fr", help="face recognizer model JSON")
    p.add_argument("--md", help="mask detector model JSON")
    p.add_argument("--output", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--mask-color", help="r,g,b in [0,1] for solid masking")
    p.add_argument("--epsilon", type=float, help="noise attack L-inf bound")
    p.add_argument("--step-size", type=float, help="noise attack step size")
    p.add_argument("--iterations", type=int, help="noise attack iterations")
    p.add_argument("--ratio", type=float, help="detector-term weight in the joint loss")
    p.add_argument("--noise-epsilon", type=float, help="filtering stage noise bound")
    p.add_argument("--kernel-size", type=int)
    p.add_argument("--kernel-step", type=float)
    p.add_argument("--kernel-iterations", type=int)
    p.add_argument("--filter-only", action="store_true", default=None)
    p.add_argument("--far", type=float, action="append", dest="far_targets",
                   help="FAR target (repeatable)")
    p.add_argument("--max-rank", type=int)


def _build_config(args, method: str) -> pipeline.ExperimentConfig:
    obj = fileio.read_json(args.config) if args.config else {}
    obj["method"] = method
    models_sec = obj.setdefault("models", {})
    data_sec = obj.setdefault("data", {})
    attack_sec = obj.setdefault("attack", {})
    if args.fr:
        models_sec["fr"] = args.fr
    if args.md:
        models_sec["md"] = args.md
    if args.probes:
        data_sec["probes"] = args.probes
    if args.templates:
        data_sec["templates"] = args.templates
    if args.gallery:
        data_sec["gallery"] = args.gallery
    if args.output:
        obj["output"] = args.output
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.workers is not None:
        obj["workers"] = args.workers
    if args.mask_color:
        obj["mask_color"] = [float(v) for v in args.mask_color.split(",")]

    noise = attack_sec.setdefault("noise", {})
    for flag, key in (("epsilon", "epsilon"), ("step_size", "step_size"),
                      ("iterations", "iterations"), ("ratio", "ratio")):
        val = getattr(args, flag)
        if val is not None:
            noise[key] = val
    filt = attack_sec.setdefault("filter", {})
    for flag, key in (("noise_epsilon", "noise_epsilon"), ("kernel_size", "kernel_size"),
                      ("kernel_step", "kernel_step"),
                      ("kernel_iterations", "kernel_iterations"),
                      ("filter_only", "filter_only")):
        val = getattr(args, flag)
        if val is not None:
            filt[key] = val
    evalsec = obj.setdefault("evaluation", {})
    if args.far_targets:
        evalsec["far_targets"] = args.far_targets
    if args.max_rank is not None:
        evalsec["max_rank"] = args.max_rank
    return pipeline.parse_config(obj)


def _run(cfg: pipeline.ExperimentConfig) -> int:
    manifest = pipeline.run_experiment(cfg)
    failed = manifest["counts"]["failed"]
    print(f"run complete: {manifest['counts']['ok']} ok, {failed} failed; "
          f"manifest at {Path(cfg.output) / 'manifest.json'}")
    return 3 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="advmask", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_mask = sub.add_parser("mask", help="generate solid or faced-mask images")
    p_mask.add_argument("--method", choices=MASK_METHODS, required=True)
    _add_run_flags(p_mask)

    p_attack = sub.add_parser("attack", help="run an adversarial masking method")
    p_attack.add_argument("--method", required=True,
                          help="advnoise_dm | mf2m | baseline:<variant>")
    _add_run_flags(p_attack)

    p_eval = sub.add_parser("evaluate", help="recompute metrics over a manifest")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--output", help="where to write metrics JSON "
                                         "(default: alongside the manifest)")

    p_rep = sub.add_parser("report", help="emit CSV/JSON plot data from metrics")
    p_rep.add_argument("--metrics", required=True)
    p_rep.add_argument("--output", required=True, help="output directory")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "mask":
            return _run(_build_config(args, args.method))
        if args.command == "attack":
            method = args.method
            if method not in ATTACK_METHODS and not method.startswith("baseline:"):
                raise ConfigError(f"unknown attack method {method!r}")
            return _run(_build_config(args, method))
        if args.command == "evaluate":
            out = args.output or str(Path(args.manifest).parent / "metrics.recomputed.json")
            report = pipeline.evaluate_manifest(args.manifest, metrics_out=out)
            print(f"metrics written to {out}")
            print(json.dumps({"mask_detection_rate": report.mask_detection_rate,
                              "auc": report.auc, "psnr": report.psnr,
                              "ssim": report.ssim}, indent=1))
            return 0
        if args.command == "report":
            return _report(args.metrics, args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AdvMaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _report(metrics_path: str, out_dir: str) -> int:
    metrics = fileio.read_json(metrics_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if metrics.get("cmc"):
        with open(out / "cmc.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["rank", "rate"])
            for rank in sorted(metrics["cmc"], key=int):
                w.writerow([rank, metrics["cmc"][rank]])
    if metrics.get("roc"):
        with open(out / "roc.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["fpr", "tpr"])
            for fpr, tpr in metrics["roc"]:
                w.writerow([fpr, tpr])
    fileio.write_json(out / "plot_data.json", {
        "cmc": metrics.get("cmc"), "roc": metrics.get("roc"),
        "tar_at_far": metrics.get("tar_at_far"), "auc": metrics.get("auc")})
    print(f"plot data written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
