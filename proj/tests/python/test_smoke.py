import os
import tempfile

import pytest

import adod


def test_iou_and_nms():
    a = adod.BBox(0.0, 0.0, 0.2, 0.2)
    b = adod.BBox(0.1, 0.1, 0.3, 0.3)
    assert adod.iou(a, a) == 1.0
    assert adod.iou(a, b) == pytest.approx(1.0 / 7.0, rel=1e-12)
    hi = adod.Detection(a, 0, 0.9)
    lo = adod.Detection(adod.BBox(0.0, 0.0, 0.2, 0.19), 0, 0.8)
    other = adod.Detection(adod.BBox(0.0, 0.0, 0.2, 0.19), 1, 0.8)
    kept = adod.nms([lo, hi, other], 0.5)
    assert kept == [hi, other]
    with pytest.raises(ValueError):
        adod.nms([hi], 0.0)


def test_metrics():
    assert adod.average_precision([0.9, 0.8, 0.7], [True, False, True], 2) == pytest.approx(5 / 6)
    assert adod.mean_ap([0.8367, 0.7187, 0.5132, 0.6454, 0.0]) == 54.28
    assert adod.default_class_names()[0] == "echinus"


def test_topology():
    assert adod.grid_sizes(416) == [13, 26, 52]
    base = adod.parameter_count(64, [4, 8, 16, 32, 64])
    full = adod.parameter_count(64, [4, 8, 16, 32, 64], residual=True, attention=True, domain=True)
    assert full > base > 0
    assert len(adod.ablation_rows()) == 8


def test_gradcheck_blocks():
    cases = adod.gradcheck(seed=1)
    assert {"channel_attention", "residual_block", "domain_head"} <= {c["category"] for c in cases}
    assert all(c["passed"] for c in cases)


def test_cli_round_trip():
    with tempfile.TemporaryDirectory() as tmp:
        code, _, _ = adod.run_cli(["gen-data", "--out", tmp, "--n", "3", "--seed", "5"])
        assert code == 0
        with open(os.path.join(tmp, "manifest.tsv")) as f:
            assert len(f.read().splitlines()) == 3
        code, _, err = adod.run_cli(["gen-data", "--out", tmp, "--domains", "0"])
        assert code == 2
        assert "domains" in err
