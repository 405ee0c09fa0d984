import json
import time

import numpy as np
import pytest
from PIL import Image

from sglanet import checkpoint, synthetic
from sglanet.cli import main
from sglanet.config import preset
from sglanet.network import SGLANet

MICRO = "preset = micro\nresolution = 16\nepochs = 2\n"


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    synthetic.main([str(root / "data"), "--per-class", "10", "--size", "20"])
    (root / "micro.txt").write_text(MICRO)
    return root


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(corpus / "micro.txt"), "--data", str(corpus / "data"),
                 "--out", str(out)]) == 0
    return out


def test_train_writes_artifacts(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"best.sgla", "epoch-1.sgla", "epoch-2.sgla", "metrics.jsonl", "config.txt", "curves.png"} <= names
    recs = records((trained / "metrics.jsonl").read_text())
    assert [(r["epoch"], r["split"]) for r in recs] == [(1, "train"), (1, "val"), (2, "train"), (2, "val")]
    assert all(0 <= r["top1"] <= r["top5"] <= 1 for r in recs)
    assert recs[0]["lr"] == 1e-2


def test_train_echoes_metric_lines(corpus, tmp_path, capsys):
    assert main(["train", "--config", str(corpus / "micro.txt"), "--data", str(corpus / "data"),
                 "--out", str(tmp_path), "--gamma1", "0", "--gamma2", "0"]) == 0
    recs = records(capsys.readouterr().out)
    assert len(recs) == 4
    assert all(r["loss"] == r["loss_joint"] for r in recs)


def test_train_is_byte_reproducible(corpus, trained, tmp_path):
    assert main(["train", "--config", str(corpus / "micro.txt"), "--data", str(corpus / "data"),
                 "--out", str(tmp_path)]) == 0
    for name in ("metrics.jsonl", "best.sgla", "epoch-2.sgla", "config.txt"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_seed_flag_changes_the_run(corpus, trained, tmp_path):
    assert main(["train", "--config", str(corpus / "micro.txt"), "--data", str(corpus / "data"),
                 "--out", str(tmp_path), "--seed", "7"]) == 0
    assert (tmp_path / "epoch-1.sgla").read_bytes() != (trained / "epoch-1.sgla").read_bytes()
    assert "seed = 7" in (tmp_path / "config.txt").read_text()


def test_missing_data_root_exits_3(tmp_path, capsys):
    missing = tmp_path / "no-such-root"
    assert main(["train", "--data", str(missing), "--out", str(tmp_path / "o")]) == 3
    assert str(missing) in capsys.readouterr().err


def test_bad_config_and_flags_exit_2(corpus, tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("T = many\n")
    assert main(["train", "--config", str(bad), "--data", str(corpus / "data"), "--out", str(tmp_path)]) == 2
    assert main(["train", "--out", str(tmp_path), "--frobnicate"]) == 2
    assert main(["launch"]) == 2


def test_eval_reproduces_validation_top1(corpus, trained, capsys):
    recs = records((trained / "metrics.jsonl").read_text())
    val = [r for r in recs if r["split"] == "val"]
    best = max(val, key=lambda r: r["top1"])     # first maximum, as written to best.sgla
    assert main(["eval", str(trained / "best.sgla"), "--data", str(corpus / "data"), "--split", "val"]) == 0
    report = records(capsys.readouterr().out)[-1]
    assert report["top1"] == best["top1"]
    assert report["top5"] >= report["top1"] and report["n"] == 4


def test_eval_truncated_checkpoint_exits_4(corpus, trained, tmp_path):
    cut = tmp_path / "cut.sgla"
    cut.write_bytes((trained / "best.sgla").read_bytes()[:100])
    assert main(["eval", str(cut), "--data", str(corpus / "data"),
                 "--config", str(trained / "config.txt")]) == 4


def test_eval_incompatible_checkpoint_names_tensor(corpus, tmp_path, capsys):
    other = tmp_path / "other.txt"
    other.write_text(MICRO + "classes = 4\nT = 3\n")
    model = SGLANet(preset("micro").model)      # T = 2, K = 3
    checkpoint.save(tmp_path / "m.sgla", model.state())
    assert main(["eval", str(tmp_path / "m.sgla"), "--data", str(corpus / "data"), "--config", str(other)]) == 4
    assert "st.2.loc.weight" in capsys.readouterr().err


def test_gradcheck_scopes(capsys):
    for scope in ("sca", "st"):
        assert main(["gradcheck", "--scope", scope]) == 0
    recs = records(capsys.readouterr().out)
    assert {r["scope"] for r in recs} == {"sca", "st"}
    assert all(r["pass"] and r["max_rel_error"] <= 1e-4 for r in recs)


def test_gradcheck_failure_exits_1(monkeypatch, capsys):
    from sglanet import verification
    monkeypatch.setattr(verification, "TOLERANCE", -1.0)
    assert main(["gradcheck", "--scope", "sca"]) == 1
    assert "sca/channel_attention" in capsys.readouterr().err


def test_visualize_writes_two_files_per_stage(corpus, trained, tmp_path):
    image = next((corpus / "data" / "disk").iterdir())
    assert main(["visualize", str(trained / "best.sgla"), str(image), "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "sca-stage2.png", "sca-stage3.png", "st-stage2.png", "st-stage3.png"]


def test_visualize_zero_init_regions_are_centered(corpus, tmp_path, capsys):
    (tmp_path / "config.txt").write_text(MICRO + "classes = 4\n")
    cfg = preset("micro").model
    cfg.resolution, cfg.classes = 16, 4
    checkpoint.save(tmp_path / "init.sgla", SGLANet(cfg).state())
    image = next((corpus / "data" / "cross").iterdir())
    assert main(["visualize", str(tmp_path / "init.sgla"), str(image), "--out", str(tmp_path / "vis")]) == 0
    for rec in records(capsys.readouterr().out):
        assert rec["regions"] == [[0.5, 0.5, 0.0, 0.0]] * 2


def test_visualize_constant_image_gives_flat_heatmap(tmp_path):
    (tmp_path / "config.txt").write_text(MICRO + "classes = 4\n")
    cfg = preset("micro").model
    cfg.resolution, cfg.classes = 16, 4
    model = SGLANet(cfg)
    for p in model.parameters():
        p.data[...] = 0
    checkpoint.save(tmp_path / "zero.sgla", model.state())
    img = tmp_path / "flat.png"
    Image.fromarray(np.full((16, 16, 3), 90, np.uint8)).save(img)
    assert main(["visualize", str(tmp_path / "zero.sgla"), str(img), "--out", str(tmp_path / "vis")]) == 0
    for s in (2, 3):
        pixels = np.asarray(Image.open(tmp_path / "vis" / f"sca-stage{s}.png").convert("RGB"))
        assert len(np.unique(pixels.reshape(-1, 3), axis=0)) == 1
        expected = round(255 * (0.5 * 90 / 255 + 0.25))
        assert abs(int(pixels[0, 0, 0]) - expected) <= 1


def test_visualize_undecodable_image_exits_3(trained, tmp_path):
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"definitely not a png")
    assert main(["visualize", str(trained / "best.sgla"), str(junk), "--out", str(tmp_path)]) == 3


def test_inspect_checkpoint(trained, capsys):
    assert main(["inspect-checkpoint", str(trained / "best.sgla")]) == 0
    recs = records(capsys.readouterr().out)
    assert recs[-1]["tensors"] == len(recs) - 1
    assert any(r["name"] == "sca.3.m2" for r in recs)


def test_module_entry_point():
    import subprocess
    import sys
    done = subprocess.run([sys.executable, "-m", "sglanet", "inspect-checkpoint", "/nonexistent.sgla"],
                          capture_output=True, text=True)
    assert done.returncode == 4
