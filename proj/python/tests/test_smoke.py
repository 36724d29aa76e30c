# Copyright (c) 2026, The neuroalign authors
# SPDX-License-Identifier: Apache-2.0

import hashlib
import json
import pathlib

import jsonschema
import numpy as np
import pytest
from PIL import Image

import neuroalign

ROOT = pathlib.Path(__file__).resolve().parents[2]
SMOKE = (ROOT / "configs" / "smoke.ini").read_text()
SCHEMA = json.loads((ROOT / "schemas" / "report.schema.json").read_text())


def test_config_hash_is_sha256_of_canonical_form():
    canonical = neuroalign.canonical_config(SMOKE)
    assert "train.epochs=3" in canonical.splitlines()
    assert neuroalign.config_hash(SMOKE) == hashlib.sha256(canonical.encode()).hexdigest()


def test_bad_config_raises_config_error():
    with pytest.raises(neuroalign.ConfigError):
        neuroalign.config_hash("[train]\nepochs = -1\n")
    with pytest.raises(neuroalign.ConfigError):
        neuroalign.config_hash("[nosuch]\nkey = 1\n")


def test_synth_images_open_in_pillow(tmp_path):
    neuroalign.synth(SMOKE, tmp_path)
    images = sorted((tmp_path / "images").glob("*.p?m"))
    assert images
    with Image.open(images[0]) as im:
        assert im.size == (16, 16)
        pixels = np.asarray(im, dtype=np.float64) / 255.0
    ours = neuroalign.read_pnm(images[0])
    assert ours.shape[:2] == pixels.shape[:2]
    np.testing.assert_allclose(ours, pixels, atol=1e-6)


def test_pnm_round_trip_against_pillow(tmp_path):
    rng = np.random.default_rng(3)
    rgb = rng.random((5, 7, 3), dtype=np.float32)
    path = tmp_path / "x.ppm"
    neuroalign.write_pnm(path, rgb)
    with Image.open(path) as im:
        assert im.mode == "RGB"
        ref = np.asarray(im)
    np.testing.assert_array_equal(ref, np.rint(rgb * 255).astype(np.uint8))


def test_train_writes_schema_valid_report(tmp_path):
    out = neuroalign.train(SMOKE, tmp_path)
    assert pathlib.Path(out["checkpoint"]).is_file()
    text = pathlib.Path(out["report"]).read_text()
    doc = json.loads(text)
    jsonschema.validate(doc, SCHEMA)
    neuroalign.validate_report(text)
    assert [r["modality"] for r in doc["reports"]] == ["image", "text", "depth", "edge", "fusion"]
    assert doc["config_hash"] == neuroalign.config_hash(SMOKE)
    again = neuroalign.train(SMOKE, tmp_path / "again")
    assert pathlib.Path(again["report"]).read_bytes() == text.encode()


def test_validate_report_rejects_tampering(tmp_path):
    out = neuroalign.train(SMOKE, tmp_path)
    doc = json.loads(pathlib.Path(out["report"]).read_text())
    doc["reports"][0]["top1"] = 2.0
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(doc, SCHEMA)
    with pytest.raises(neuroalign.NeuroalignError):
        neuroalign.validate_report(json.dumps(doc))


def test_topk_retrieval_identity_gallery():
    gallery = np.eye(8, dtype=np.float32)
    report = neuroalign.topk_retrieval(gallery, gallery, list(range(8)))
    assert report["top1"] == 1.0
    assert report["ranks"] == [1] * 8


def test_image_metrics_and_mask():
    rng = np.random.default_rng(5)
    a = rng.random((24, 20), dtype=np.float32)
    assert neuroalign.pixcorr(a, a) == pytest.approx(1.0, abs=1e-9)
    assert neuroalign.ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    mask = neuroalign.fovea_mask(9, 9, 0.9, 0.2, 3.0)
    assert mask[4, 4] == 0.9
    assert mask[0, 0] == pytest.approx(0.2 + 0.7 * np.exp(-3.0), abs=1e-12)
