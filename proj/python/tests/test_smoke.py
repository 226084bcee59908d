"""End-to-end smoke tests for the python bindings.

Runs against the CMake-built module on PYTHONPATH (ctest) or an installed
wheel; either way `import voxelquant` must resolve.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

import voxelquant as vq


def test_quant_params_known_range():
    p = vq.quant_params(-1.0, 2.0, bits=8)
    assert p["scale"] == pytest.approx(3.0 / 255.0, rel=1e-15)
    assert p["zero_point"] == 85
    assert vq.quantize(0.0, p["scale"], p["zero_point"]) == 85
    assert vq.quantize(-2.0, p["scale"], p["zero_point"]) == 0
    assert vq.quantize(2.0, p["scale"], p["zero_point"]) == 255
    assert vq.dequantize(85, p["scale"], p["zero_point"]) == pytest.approx(0.0, abs=1e-15)


def test_error_type():
    with pytest.raises(vq.VoxelQuantError):
        vq.quant_params(0.0, 1.0, bits=99)


@pytest.fixture(scope="module")
def pipeline_dir():
    with tempfile.TemporaryDirectory() as td:
        root = Path(td)
        data = root / "data"
        model = root / "model"
        vq.gen_dataset(str(data), count=2, classes=3, dim=24, sigma=0.01, seed=11)
        vq.gen_model(str(model), arch="centroid", classes=3, dim=24)
        vq.run_pipeline(str(model), str(data))
        yield root


def test_pipeline_artifacts(pipeline_dir):
    model = pipeline_dir / "model"
    for name in ("calib.json", "fake.model.json", "fake.model.bin", "engine.vqe",
                 "manifest.json"):
        assert (model / name).exists(), name
    info = vq.model_info(str(model / "model.json"))
    assert info["name"] == "centroid-net"
    summary = vq.engine_summary(str(model / "engine.vqe"))
    assert "ConvInt8" in summary


def test_engine_matches_fp32_labels(pipeline_dir):
    model = pipeline_dir / "model"
    data = pipeline_dir / "data"
    x = vq.load_volume(str(data / "img_000.bin"))
    gt = vq.load_labels(str(data / "lbl_000.bin"))

    ref = vq.run_model(str(model / "model.json"), x)["labels"]
    out = vq.run_engine(str(model / "engine.vqe"), x)["labels"]
    assert ref.shape == (1, 1, 24, 24, 24)
    assert ref.dtype == np.uint16
    # INT8 may flip near-boundary voxels, but on a structured volume the two
    # paths should agree almost everywhere
    agreement = float((ref == out).mean())
    assert agreement > 0.995
    assert vq.mean_dice(out, gt, classes=3) > 0.85
