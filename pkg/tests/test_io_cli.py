import json

import numpy as np
import pytest

from dlv.cli import main
from dlv.errors import ImageFormatError, WeightFormatError
from dlv.images_io import load_images_csv, load_pgm, save_images_csv, save_pgm
from dlv.manifest import strip_timings
from dlv.network import LayerSpec, Network, classify_batch, forward
from dlv.weights_io import load_network, network_to_dict, save_network

from conftest import fixture_path


# ---- weight files ----

def test_weight_roundtrip_bit_exact(curve2d, tmp_path):
    path = tmp_path / "again.json"
    save_network(path, curve2d)
    again = load_network(path)
    assert again.stages == curve2d.stages
    for a, b in zip(again.layers, curve2d.layers):
        assert a.kind == b.kind
        if a.weights is not None:
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
    assert np.array_equal(again.input_low, curve2d.input_low)
    # and the whole document is byte-identical on a second save
    path2 = tmp_path / "twice.json"
    save_network(path2, again)
    assert path.read_bytes() == path2.read_bytes()


def test_weight_file_version_check(tmp_path):
    doc = network_to_dict(
        Network(layers=(LayerSpec("dense", np.eye(2), np.zeros(2)),), input_shape=(2,), class_count=2)
    )
    doc["version"] = "dlv-weights-0"
    path = tmp_path / "w.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(WeightFormatError):
        load_network(path)


def test_truncated_weight_file_reports_offset(tmp_path):
    path = tmp_path / "trunc.json"
    full = fixture_path("curve2d.json").read_text()
    path.write_text(full[: len(full) // 2])
    with pytest.raises(WeightFormatError) as err:
        load_network(path)
    assert "byte offset" in str(err.value)


def test_weight_file_rejects_nan(tmp_path):
    doc = network_to_dict(
        Network(layers=(LayerSpec("dense", np.eye(2), np.zeros(2)),), input_shape=(2,), class_count=2)
    )
    doc["layers"][0]["weights"]["values"][0] = float("nan")
    path = tmp_path / "nan.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(WeightFormatError):
        load_network(path)


def test_weight_file_rejects_shape_mismatch(tmp_path):
    doc = network_to_dict(
        Network(layers=(LayerSpec("dense", np.eye(2), np.zeros(2)),), input_shape=(2,), class_count=2)
    )
    doc["class_count"] = 3
    path = tmp_path / "shape.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(WeightFormatError):
        load_network(path)


# ---- image files ----

def test_csv_roundtrip_exact(tmp_path):
    imgs = np.array([[0.0, 0.25, 1.0], [0.1, 0.2, 0.3]])
    path = tmp_path / "imgs.csv"
    save_images_csv(path, imgs)
    again = load_images_csv(path)
    assert np.array_equal(again, imgs)
    zero = np.zeros((1, 4))
    save_images_csv(tmp_path / "zero.csv", zero)
    assert np.array_equal(load_images_csv(tmp_path / "zero.csv"), zero)


def test_csv_rejects_out_of_range(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.2,1.5\n")
    with pytest.raises(ImageFormatError) as err:
        load_images_csv(path)
    assert "1.5" in str(err.value)
    # wider declared range accepts the same file
    assert load_images_csv(path, low=0.0, high=2.0).shape == (1, 2)


def test_csv_rejects_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0.2,abc\n")
    with pytest.raises(ImageFormatError):
        load_images_csv(path)
    path.write_text("")
    with pytest.raises(ImageFormatError):
        load_images_csv(path)


def test_pgm_quantization_documented(tmp_path):
    path = tmp_path / "img.pgm"
    save_pgm(path, np.array([0.5, 0.0, 1.0, 0.25]), shape=(2, 2))
    again = load_pgm(path)
    assert again.shape == (2, 2)
    assert again.reshape(-1)[0] == 128 / 255  # 0.5 -> byte 128 -> 128/255
    assert again.reshape(-1)[1] == 0.0
    assert again.reshape(-1)[2] == 1.0


def test_pgm_scales_by_declared_range(tmp_path):
    path = tmp_path / "wide.pgm"
    save_pgm(path, np.array([0.0, 5.0]), shape=(1, 2), low=np.array([0.0, 0.0]), high=np.array([10.0, 10.0]))
    again = load_pgm(path)
    assert again.reshape(-1)[1] == 128 / 255


def test_pgm_truncated_payload(tmp_path):
    path = tmp_path / "trunc.pgm"
    path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ImageFormatError):
        load_pgm(path)


# ---- CLI ----

def run_cli(*argv):
    return main(list(argv))


def test_verify_2d_preset_exit_and_artifacts(tmp_path):
    out = tmp_path / "run"
    code = run_cli(
        "verify", "--model", str(fixture_path("curve2d.json")),
        "--point", "3.59,1.11", "--preset", "2d", "--out-dir", str(out),
    )
    assert code == 1  # adversarial found
    for name in ("manifest.json", "outcome.json", "witness.csv", "witness.pgm", "original.csv", "original.pgm"):
        assert (out / name).exists()
    outcome = json.loads((out / "outcome.json").read_text())
    assert outcome["verdict"] == "adversarial"
    assert outcome["layers"][0]["verdict"] == "safe"
    assert outcome["layers"][0]["explored"] == 9
    assert outcome["layers"][1]["l1"] is not None
    # the witness CSV reloads and classifies differently
    witness = load_images_csv(out / "witness.csv", low=-100, high=100)[0]
    (orig,) = load_images_csv(out / "original.csv", low=-100, high=100)
    from dlv.weights_io import load_network as ln

    net = ln(fixture_path("curve2d.json"))
    assert classify_batch(net, witness[None])[0] != classify_batch(net, orig[None])[0]


def test_verify_safe_region_exit_zero(tmp_path):
    # a tiny region well inside one class is safe through every layer
    out = tmp_path / "run"
    code = run_cli(
        "verify", "--model", str(fixture_path("curve2d.json")),
        "--point", "1.0,0.3", "--dims", "2", "--span", "0.01", "--epsilon", "0.5",
        "--feature-dims", "2", "--out-dir", str(out),
    )
    assert code == 0
    outcome = json.loads((out / "outcome.json").read_text())
    assert outcome["verdict"] == "safe"
    assert not (out / "witness.csv").exists()


def test_unknown_flag_exit_3(tmp_path):
    code = run_cli("verify", "--model", "x", "--point", "1,2", "--out-dir", str(tmp_path), "--bogus")
    assert code == 3


def test_missing_file_exit_3(tmp_path):
    code = run_cli(
        "verify", "--model", str(tmp_path / "nope.json"),
        "--point", "1,2", "--out-dir", str(tmp_path / "o"),
    )
    assert code == 3


def test_attack_jsma_cli(tmp_path):
    out = tmp_path / "atk"
    code = run_cli(
        "attack", "jsma", "--model", str(fixture_path("minidigits.json")),
        "--image", str(fixture_path("digits_test_images.csv")), "--row", "1",
        "--theta", "1.0", "--out-dir", str(out),
    )
    assert code == 0
    result = json.loads((out / "result.json").read_text())
    assert set(result) >= {"success", "l1", "l2", "steps"}
    assert (out / "perturbed.pgm").exists()


def test_compare_cli_smoke(tmp_path):
    out = tmp_path / "cmp"
    code = run_cli(
        "compare", "--model", str(fixture_path("minidigits.json")),
        "--images", str(fixture_path("digits_test_images.csv")), "--limit", "10",
        "--methods", "fgsm:0.1,fgsm:0.4,jsma:1.0,verify", "--dims", "12",
        "--feature-dims", "4", "--out-dir", str(out),
    )
    assert code == 0
    for name in ("raw_log.csv", "summary.json", "summary.txt", "manifest.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["rows"]) == 4
    raw = (out / "raw_log.csv").read_text().strip().split("\n")
    assert len(raw) == 1 + 4 * 10


def test_export_smt_cli(tmp_path):
    out = tmp_path / "smt"
    code = run_cli(
        "export-smt", "--model", str(fixture_path("curve2d.json")),
        "--point", "3.59,1.11", "--preset", "2d", "--layer", "1", "--which", "eq8",
        "--out-dir", str(out),
    )
    assert code == 0
    text = (out / "eq8_layer1.smt2").read_text()
    assert "(set-logic LRA)" in text and "(check-sat)" in text


def test_manifest_determinism_and_hashes(tmp_path):
    out = tmp_path / "m"
    argv = (
        "verify", "--model", str(fixture_path("curve2d.json")),
        "--point", "3.59,1.11", "--preset", "2d", "--mode", "mcts", "--seed", "7",
        "--out-dir", str(out),
    )
    assert run_cli(*argv) in (1, 2)
    first = json.loads((out / "manifest.json").read_text())
    assert run_cli(*argv) in (1, 2)
    second = json.loads((out / "manifest.json").read_text())
    assert strip_timings(first) == strip_timings(second)
    assert "model" in first["fixture_hashes"]
    assert len(first["fixture_hashes"]["model"]) == 64


def test_dlv_seed_env_var(tmp_path, monkeypatch):
    out = tmp_path / "env"
    monkeypatch.setenv("DLV_SEED", "123")
    run_cli(
        "verify", "--model", str(fixture_path("curve2d.json")),
        "--point", "3.59,1.11", "--preset", "2d", "--out-dir", str(out),
    )
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["seed"] == 123
