import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from advmask import fileio, geometry, models  # noqa: E402

FIXTURES = REPO / "fixtures"
DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def embedder():
    return models.load_model(FIXTURES / "models/embedder.json")


@pytest.fixture(scope="session")
def detector():
    return models.load_model(FIXTURES / "models/detector.json")


@pytest.fixture(scope="session")
def goldens():
    return fileio.read_json(DATA / "goldens.json")


def load_face(path: Path):
    image = fileio.read_image(path)
    pts, scheme = fileio.read_landmarks(path.with_name(path.stem + fileio.LANDMARK_SUFFIX))
    return image, geometry.LandmarkSet(pts, scheme)


@pytest.fixture(scope="session")
def probe_id00():
    return load_face(FIXTURES / "dataset/probes/id00_p.png")


@pytest.fixture(scope="session")
def detected_pair(goldens):
    """Probe/template pair whose faced-mask image the detector flags."""
    probe = load_face(FIXTURES / "dataset/probes" / goldens["detected_dm_pair"]["probe"])
    tpl = load_face(FIXTURES / "dataset/templates" / goldens["detected_dm_pair"]["template"])
    return probe, tpl


def tiny_model(kind: str, hw: int = 8, seed: int = 0, out: int = 8):
    """Small seeded stack for fast gradient tests."""
    rng = np.random.default_rng(seed)
    c1, c2 = 4, 6
    layers = [
        {"type": "conv", "name": "conv1", "out_channels": c1, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "leaky_relu", "slope": 0.1},
        {"type": "conv", "name": "conv2", "out_channels": c2, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "leaky_relu", "slope": 0.1},
        {"type": "global_average_pool"},
        {"type": "dense", "name": "fc", "out_features": out},
    ]
    if kind == "embedder":
        layers.append({"type": "l2_normalize"})
    weights = {
        "conv1.weight": rng.normal(0, np.sqrt(2 / 27), (c1, 3, 3, 3)),
        "conv1.bias": rng.normal(0, 0.1, c1),
        "conv2.weight": rng.normal(0, np.sqrt(2 / (9 * c1)), (c2, c1, 3, 3)),
        "conv2.bias": rng.normal(0, 0.1, c2),
        "fc.weight": rng.normal(0, 0.5, (out, c2)),
        "fc.bias": rng.normal(0, 0.1, out),
    }
    return models.ToyModel(kind, (hw, hw), layers, weights)


def zero_model(kind: str, hw: int = 8, out: int = 8, fc_bias=None):
    """All-zero weights; forward is constant, gradients vanish."""
    m = tiny_model(kind, hw=hw, out=out)
    weights = {k: np.zeros_like(v) for k, v in m.weights.items()}
    if fc_bias is not None:
        weights["fc.bias"] = np.asarray(fc_bias, dtype=np.float64)
    return models.ToyModel(kind, (hw, hw), m.layers, weights)


def fd_check(model, loss, image, coords, h=1e-5, rel_tol=1e-4):
    """Compare the analytic input gradient with central differences.

    Coordinates whose probe crosses a leaky-rectifier kink (any
    pre-activation sign change between x-h and x+h) are skipped, as are
    coordinates with negligible gradient.
    """
    analytic = model.input_gradient(loss, image)
    fd = models.finite_difference_gradient(model, loss, image, h, coords=coords)
    checked = 0
    worst = 0.0
    for r, c, ch in coords:
        a = analytic[r, c, ch]
        if abs(a) <= 1e-8:
            continue
        bump = np.zeros_like(image)
        bump[r, c, ch] = h
        signs_hi = [np.sign(p) for p in model.preactivations(image + bump)]
        signs_lo = [np.sign(p) for p in model.preactivations(image - bump)]
        if any((shi != slo).any() for shi, slo in zip(signs_hi, signs_lo)):
            continue
        rel = abs(a - fd[r, c, ch]) / max(abs(a), abs(fd[r, c, ch]))
        worst = max(worst, rel)
        checked += 1
    assert checked > 0
    assert worst < rel_tol, f"max rel error {worst} over {checked} coords"
    return checked, worst
