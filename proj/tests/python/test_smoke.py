import json
import os

import numpy as np
import pytest

import casnet_lab as cl


def test_generate_and_manifest(tmp_path):
    n = cl.generate_dataset(tmp_path / "x", n_per_class=3, domain="X", seed=4, image_size=32)
    assert n == 6
    entries = cl.load_manifest(tmp_path / "x" / "manifest.json")
    assert len(entries) == 6
    assert sorted(e["label"] for e in entries) == [0, 0, 0, 1, 1, 1]
    assert all(os.path.exists(e["path"]) for e in entries)
    assert all(1 <= e["camera_index"] <= 4 for e in entries)


def test_generate_rejects_small_images(tmp_path):
    with pytest.raises(cl._core.CasnetError):
        cl.generate_dataset(tmp_path / "x", n_per_class=1, image_size=16)


def test_config_roundtrip_and_hash():
    values = cl.config_get("desk", 3, ["casnet.steps=7"])
    assert values["casnet.steps"] == "7"
    assert values["general.seed"] == "3"
    assert set(values) == set(cl.config_keys())
    assert cl.config_hash("desk", 3) != cl.config_hash("desk", 4)
    with pytest.raises(cl._core.CasnetError):
        cl.config_get("desk", 0, ["nope.key=1"])


def test_content_similarity_hand_example():
    cx = np.array([[1.0, 0.0], [0.0, 1.0]])
    h_row, h_col = cl.content_similarity(cx, cx)
    assert h_row[0, 0] == pytest.approx(0.7311, abs=1e-4)
    assert h_row[0, 1] == pytest.approx(0.2689, abs=1e-4)
    np.testing.assert_allclose(h_row.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(h_col.sum(axis=1), 1.0, atol=1e-12)


def test_plain_swap_and_singleton_cadt():
    rng = np.random.default_rng(0)
    cx, sx, cy, sy = (rng.normal(size=(1, 5)) for _ in range(4))
    on = cl.transfer_styles(cx, sx, cy, sy, True)
    off = cl.transfer_styles(cx, sx, cy, sy, False)
    np.testing.assert_allclose(off[0], cx + sy)
    np.testing.assert_allclose(on[0], off[0])


def test_metrics_against_counting():
    rng = np.random.default_rng(1)
    probs = rng.uniform(size=50)
    labels = rng.integers(0, 2, size=50)
    r = cl.metrics_from_predictions(list(probs), list(labels), 0.5)
    pred = probs >= 0.5
    assert r["tp"] == int(np.sum(pred & (labels == 1)))
    assert r["tn"] == int(np.sum(~pred & (labels == 0)))
    assert r["accuracy"] == pytest.approx(np.mean(pred == (labels == 1)))


def test_pca_and_gap():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(200, 3))
    feats = np.vstack([a, a + np.array([5.0, 0.0, 0.0])])
    tags = ["s"] * 200 + ["r"] * 200
    p = cl.pca(feats, tags, 2)
    comps = p["components"]
    np.testing.assert_allclose(comps @ comps.T, np.eye(2), atol=1e-8)
    assert cl.domain_gap_score(feats, tags, "s", "r", 2) > 3.0
    assert cl.domain_gap_score(np.vstack([a, a]), tags, "s", "r", 2) == pytest.approx(0.0, abs=1e-9)


def test_tiny_pipeline(tmp_path):
    overrides = [
        "general.image_size=32",
        "data.x_train_per_class=3",
        "data.x_test_per_class=2",
        "data.y_unlabeled_per_class=2",
        "data.y_eval_per_class=2",
        "casnet.steps=1",
        "classifier.epochs=1",
        "classifier.width_divisor=16",
        "pipeline.run_cyclegan=false",
    ]
    r = cl.run_pipeline(tmp_path / "run", "desk", 1, overrides)
    assert set(r["reports"]) == {
        "synthetic_dataset/raw",
        "synthetic_dataset/converted",
        "sim_to_real/raw",
        "sim_to_real/converted",
    }
    header = open(r["table_csv"]).readline().strip()
    assert header.startswith("metric,")
    with open(tmp_path / "run" / "pipeline.json") as f:
        assert "stages" in json.load(f)
