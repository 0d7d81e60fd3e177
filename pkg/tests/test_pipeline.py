import json
import shutil

import pytest

from advmask import cli, fileio, pipeline
from advmask.errors import ConfigError, ConfigTypeError, UnknownKey

from conftest import FIXTURES


def mini_dataset(tmp_path, probes=3, gallery=6, templates=2):
    """Copy a small slice of the fixture dataset for fast runs."""
    root = tmp_path / "data"
    for sub, names in (
        ("probes", [f"id{i:02d}_p" for i in range(probes)]),
        ("gallery", [f"id{i:02d}_g" for i in range(probes)]
         + [f"dist{i:02d}_g" for i in range(gallery - probes)]),
        ("templates", [f"t{i:02d}" for i in range(templates)]),
    ):
        (root / sub).mkdir(parents=True)
        for name in names:
            for ext in (".png", ".landmarks.json"):
                src = FIXTURES / "dataset" / sub / f"{name}{ext}"
                shutil.copy(src, root / sub / f"{name}{ext}")
    return root


def base_config(root, out, method="dm", **overrides):
    obj = {
        "method": method,
        "models": {"fr": str(FIXTURES / "models/embedder.json"),
                   "md": str(FIXTURES / "models/detector.json")},
        "data": {"probes": str(root / "probes"), "templates": str(root / "templates"),
                 "gallery": str(root / "gallery")},
        "output": str(out),
    }
    obj.update(overrides)
    return obj


# -- parse_config -----------------------------------------------------------------

def test_defaults_advnoise():
    cfg = pipeline.parse_config({
        "method": "advnoise_dm", "models": {"fr": "a", "md": "b"},
        "data": {"probes": "p"}, "output": "o"})
    assert (cfg.noise.epsilon, cfg.noise.step_size,
            cfg.noise.iterations, cfg.noise.ratio) == (0.04, 0.001, 40, 1.0)
    assert cfg.noise.target_label == 0


def test_defaults_mf2m():
    cfg = pipeline.parse_config({
        "method": "mf2m", "models": {"fr": "a", "md": "b"},
        "data": {"probes": "p"}, "output": "o"})
    f = cfg.filter
    assert (f.noise_epsilon, f.kernel_size, f.kernel_step,
            f.kernel_iterations, f.ratio) == (0.01, 5, 0.1, 160, 1.0)
    assert f.filter_only is False


def test_even_kernel_size_rejected():
    with pytest.raises(ConfigError):
        pipeline.parse_config({
            "method": "mf2m", "models": {"fr": "a", "md": "b"},
            "data": {"probes": "p"}, "output": "o",
            "attack": {"filter": {"kernel_size": 4}}})


def test_unknown_key_rejected_with_path():
    with pytest.raises(UnknownKey) as err:
        pipeline.parse_config({
            "method": "dm", "models": {"fr": "a", "md": "b"},
            "data": {"probes": "p"}, "output": "o",
            "attack": {"noise": {"epsilonn": 0.1}}})
    assert err.value.path == "attack.noise.epsilonn"


def test_wrong_type_rejected_with_path():
    with pytest.raises(ConfigTypeError) as err:
        pipeline.parse_config({
            "method": "dm", "models": {"fr": "a", "md": "b"},
            "data": {"probes": "p"}, "output": "o",
            "attack": {"noise": {"iterations": "forty"}}})
    assert err.value.path == "attack.noise.iterations"


def test_missing_required_key():
    with pytest.raises(ConfigError):
        pipeline.parse_config({"method": "dm", "models": {"fr": "a", "md": "b"},
                               "output": "o"})


def test_unknown_method():
    with pytest.raises(ConfigError):
        pipeline.parse_config({"method": "nope", "models": {"fr": "a", "md": "b"},
                               "data": {"probes": "p"}, "output": "o"})


def test_stochastic_baseline_needs_seed():
    obj = {"method": "baseline:di2_fgsm", "models": {"fr": "a", "md": "b"},
           "data": {"probes": "p"}, "output": "o"}
    with pytest.raises(ConfigError):
        pipeline.parse_config(obj)
    obj["seed"] = 1
    cfg = pipeline.parse_config(obj)
    assert cfg.baseline.variant.value == "di2_fgsm"


def test_identity_of():
    assert pipeline.identity_of("id07_p.png") == "id07"
    assert pipeline.identity_of("t03.png") == "t03"
    assert pipeline.identity_of("a_b_c.png") == "a_b"


# -- run_experiment ------------------------------------------------------------------

def test_dm_smoke_run(tmp_path):
    root = mini_dataset(tmp_path)
    cfg = pipeline.parse_config(base_config(root, tmp_path / "out"))
    manifest = pipeline.run_experiment(cfg)
    assert manifest["counts"] == {"ok": 3, "failed": 0}
    metrics = fileio.read_json(tmp_path / "out/metrics.json")
    assert metrics["psnr"] == float("inf")  # reference is the DM image itself
    assert 0.0 <= metrics["mask_detection_rate"] <= 1.0
    assert metrics["cmc"]["1"] >= 0.0
    assert pipeline.verify_manifest(tmp_path / "out/manifest.json") == []
    for entry in manifest["entries"]:
        assert entry["template"] is not None


def test_missing_model_fails_before_any_output(tmp_path):
    root = mini_dataset(tmp_path)
    obj = base_config(root, tmp_path / "out")
    obj["models"]["fr"] = str(tmp_path / "missing.json")
    cfg = pipeline.parse_config(obj)
    with pytest.raises(ConfigError):
        pipeline.run_experiment(cfg)
    assert not (tmp_path / "out" / "images").exists()


def test_gallery_optional(tmp_path):
    root = mini_dataset(tmp_path)
    obj = base_config(root, tmp_path / "out", method="solid")
    obj["data"]["gallery"] = None
    cfg = pipeline.parse_config(obj)
    manifest = pipeline.run_experiment(cfg)
    metrics = fileio.read_json(manifest["metrics"]["path"])
    assert metrics["cmc"] is None and metrics["auc"] is None
    assert metrics["mask_detection_rate"] == 1.0


def test_determinism_across_runs_and_workers(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    root = mini_dataset(tmp_path, probes=2)
    outs = []
    for i, workers in enumerate((1, 2)):
        obj = base_config(root, tmp_path / f"out{i}", method="advnoise_dm",
                          workers=workers)
        pipeline.run_experiment(pipeline.parse_config(obj))
        outs.append(tmp_path / f"out{i}")
    m0 = (outs[0] / "manifest.json").read_bytes()
    m1 = (outs[1] / "manifest.json").read_bytes()
    # manifests differ only in recorded paths/workers; outputs must be identical
    for rel in ("images/id00_p.png", "images/id00_p.f32", "images/id01_p.f32",
                "metrics.json", "reports/id00_p.json"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
    j0, j1 = json.loads(m0), json.loads(m1)
    assert j0["entries"] == [
        {**e, "probe": e["probe"], "base_output": e["base_output"],
         "final_output": e["final_output"], "report": e["report"]}
        for e in j0["entries"]]
    digests0 = [(e["final_output"]["png_sha256"], e["final_output"]["raw_sha256"])
                for e in j0["entries"]]
    digests1 = [(e["final_output"]["png_sha256"], e["final_output"]["raw_sha256"])
                for e in j1["entries"]]
    assert digests0 == digests1


def test_identical_reruns_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    root = mini_dataset(tmp_path, probes=2)
    manifests = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        obj = base_config(root, out, method="solid")
        obj["output"] = str(out)
        pipeline.run_experiment(pipeline.parse_config(obj))
        # normalize the differing output path for comparison
        text = (out / "manifest.json").read_text().replace(str(out), "OUT")
        manifests.append(text)
    assert manifests[0] == manifests[1]


def test_evaluate_manifest_reproduces_metrics(tmp_path):
    root = mini_dataset(tmp_path)
    out = tmp_path / "out"
    cfg = pipeline.parse_config(base_config(root, out, method="solid"))
    pipeline.run_experiment(cfg)
    again = tmp_path / "metrics2.json"
    pipeline.evaluate_manifest(out / "manifest.json", metrics_out=again)
    assert again.read_bytes() == (out / "metrics.json").read_bytes()


def test_verify_manifest_detects_tampering(tmp_path):
    root = mini_dataset(tmp_path, probes=2)
    out = tmp_path / "out"
    pipeline.run_experiment(pipeline.parse_config(base_config(root, out, method="solid")))
    target = next((out / "images").glob("*.f32"))
    data = bytearray(target.read_bytes())
    data[0] ^= 0xFF
    target.write_bytes(bytes(data))
    problems = pipeline.verify_manifest(out / "manifest.json")
    assert any("mismatch" in p for p in problems)
    with pytest.raises(ConfigError):
        pipeline.evaluate_manifest(out / "manifest.json")


def test_per_image_failure_recorded(tmp_path):
    root = mini_dataset(tmp_path, probes=2)
    # corrupt one probe's landmarks so only that image fails
    bad = root / "probes/id01_p.landmarks.json"
    bad.write_text(json.dumps({"scheme": "ibug68",
                               "points": [[5000.0, 5000.0]] * 68}))
    out = tmp_path / "out"
    manifest = pipeline.run_experiment(
        pipeline.parse_config(base_config(root, out, method="solid")))
    assert manifest["counts"] == {"ok": 1, "failed": 1}
    failed = [e for e in manifest["entries"] if e["error"]]
    assert len(failed) == 1 and "id01" in failed[0]["name"]


# -- CLI ---------------------------------------------------------------------------

def test_cli_mask_evaluate_report(tmp_path, capsys):
    root = mini_dataset(tmp_path)
    out = tmp_path / "out"
    rc = cli.main([
        "mask", "--method", "solid",
        "--probes", str(root / "probes"), "--gallery", str(root / "gallery"),
        "--fr", str(FIXTURES / "models/embedder.json"),
        "--md", str(FIXTURES / "models/detector.json"),
        "--output", str(out)])
    assert rc == 0
    assert (out / "manifest.json").exists()

    rc = cli.main(["evaluate", "--manifest", str(out / "manifest.json"),
                   "--output", str(tmp_path / "m.json")])
    assert rc == 0
    assert (tmp_path / "m.json").read_bytes() == (out / "metrics.json").read_bytes()

    rc = cli.main(["report", "--metrics", str(out / "metrics.json"),
                   "--output", str(tmp_path / "plots")])
    assert rc == 0
    cmc_lines = (tmp_path / "plots/cmc.csv").read_text().strip().splitlines()
    assert cmc_lines[0] == "rank,rate"
    assert (tmp_path / "plots/roc.csv").exists()
    capsys.readouterr()


def test_cli_config_error_exit_code(tmp_path, capsys):
    rc = cli.main(["attack", "--method", "mf2m", "--probes", str(tmp_path / "none"),
                   "--fr", "x", "--md", "y", "--output", str(tmp_path / "o")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_cli_partial_failure_exit_code(tmp_path, capsys):
    root = mini_dataset(tmp_path, probes=2)
    bad = root / "probes/id01_p.landmarks.json"
    bad.write_text(json.dumps({"scheme": "ibug68",
                               "points": [[5000.0, 5000.0]] * 68}))
    rc = cli.main([
        "mask", "--method", "solid",
        "--probes", str(root / "probes"),
        "--fr", str(FIXTURES / "models/embedder.json"),
        "--md", str(FIXTURES / "models/detector.json"),
        "--output", str(tmp_path / "out")])
    assert rc == 3
    capsys.readouterr()
