import json
import math
import re

import numpy as np
import pytest

from deep_galaxy.checkpoint import save_checkpoint
from deep_galaxy.cli import main
from deep_galaxy.data import decode_netpbm
from deep_galaxy.network import PROFILES, build_network


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _config(path, **over):
    cfg = {"profile": "fast32", "learning_rate": 0.01, "momentum": 0.9, "batch_size": 8, "epochs": 2, "seed": 3}
    cfg.update(over)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "data"
    assert main(["generate", "--out", str(data), "--counts", "5,5,5", "--size", "32", "--seed", "1"]) == 0
    assert main(["split", "--data", str(data), "--seed", "0", "--out", str(tmp_path / "m.csv")]) == 0
    return tmp_path


@pytest.fixture
def model(workspace, capsys):
    args = ["train", "--config", str(_config(workspace / "cfg.json")), "--data", str(workspace / "data"),
            "--manifest", str(workspace / "m.csv"), "--out", str(workspace / "model.dgn")]
    assert main(args) == 0
    capsys.readouterr()
    return workspace / "model.dgn"


# generate -----------------------------------------------------------------

def test_generate_counts_and_determinism(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "a"), "--counts", "1,1,1", "--size", "16"]) == 0
    assert len(_tree(tmp_path / "a")) == 3
    assert "total: 3" in capsys.readouterr().out
    main(["generate", "--out", str(tmp_path / "b"), "--counts", "2,1,3", "--size", "16", "--seed", "4"])
    main(["generate", "--out", str(tmp_path / "c"), "--counts", "2,1,3", "--size", "16", "--seed", "4"])
    tb, tc = _tree(tmp_path / "b"), _tree(tmp_path / "c")
    assert tb == tc and len(tb) == 6
    assert sorted({k.split("/")[0] for k in tb}) == ["elliptical", "irregular", "spiral"]


@pytest.mark.parametrize("counts", ["1,2", "a,b,c", "1,-1,2", ""])
def test_generate_bad_counts_exit_1(tmp_path, counts, capsys):
    assert main(["generate", "--out", str(tmp_path / "x"), "--counts", counts]) == 1


def test_generate_too_small_exit_1(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "x"), "--counts", "1,1,1", "--size", "8"]) == 1


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--config", "x"]) == 1


def test_generate_unwritable_exit_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate", "--out", str(blocker / "sub"), "--counts", "1,1,1", "--size", "16"]) == 2


# split --------------------------------------------------------------------

def test_split_table_and_determinism(workspace, capsys):
    out = workspace / "m2.csv"
    assert main(["split", "--data", str(workspace / "data"), "--seed", "0", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert re.search(r"elliptical\s+5\s+3\s+1\s+1", text)
    assert re.search(r"total\s+15\s+9\s+3\s+3", text)
    assert out.read_bytes() == (workspace / "m.csv").read_bytes()


def test_split_three_samples_warns(tmp_path, capsys):
    main(["generate", "--out", str(tmp_path / "d"), "--counts", "1,1,1", "--size", "16"])
    capsys.readouterr()
    assert main(["split", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m.csv")]) == 0
    captured = capsys.readouterr()
    assert re.search(r"spiral\s+1\s+1\s+0\s+0", captured.out)
    assert "warning" in captured.err
    rows = (tmp_path / "m.csv").read_text().splitlines()[1:]
    assert all(r.endswith(",train") for r in rows)


def test_split_empty_class_exit_2(tmp_path, capsys):
    main(["generate", "--out", str(tmp_path / "d"), "--counts", "2,0,2", "--size", "16"])
    assert main(["split", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m.csv")]) == 2
    assert main(["split", "--data", str(tmp_path / "nodir"), "--out", str(tmp_path / "m.csv")]) == 2


# train --------------------------------------------------------------------

def test_train_outputs(model):
    root = model.parent
    assert (root / "model_curve.csv").exists()
    assert (root / "model_curve_val.csv").exists()
    assert (root / "model_eval.csv").read_text().startswith("true\\pred,")
    curve = (root / "model_curve.csv").read_text().splitlines()
    assert len(curve) == 1 + 2 * math.ceil(9 / 8)


def test_train_rerun_identical(model, capsys):
    root = model.parent
    before = {n: (root / n).read_bytes() for n in ("model.dgn", "model_curve.csv", "model_curve_val.csv", "model_eval.csv")}
    args = ["train", "--config", str(root / "cfg.json"), "--data", str(root / "data"),
            "--manifest", str(root / "m.csv"), "--out", str(root / "again.dgn")]
    assert main(args) == 0
    after = {n.replace("again", "model"): (root / n).read_bytes()
             for n in ("again.dgn", "again_curve.csv", "again_curve_val.csv", "again_eval.csv")}
    assert before == after


def test_train_missing_learning_rate(workspace, capsys):
    cfg = workspace / "bad.json"
    cfg.write_text(json.dumps({"profile": "fast32", "momentum": 0.9, "batch_size": 8, "epochs": 1, "seed": 0}))
    rc = main(["train", "--config", str(cfg), "--data", str(workspace / "data"),
               "--manifest", str(workspace / "m.csv"), "--out", str(workspace / "x.dgn")])
    assert rc == 1
    assert "learning_rate" in capsys.readouterr().err


@pytest.mark.parametrize("over", [
    {"learning_rate": 0.0},
    {"momentum": 1.5},
    {"profile": "huge"},
    {"input_height": 64},
    {"bogus_key": 1},
    {"epochs": "ten"},
])
def test_train_bad_config_exit_1(workspace, over, capsys):
    rc = main(["train", "--config", str(_config(workspace / "c.json", **over)), "--data", str(workspace / "data"),
               "--manifest", str(workspace / "m.csv"), "--out", str(workspace / "x.dgn")])
    assert rc == 1


def test_train_flag_overrides_file(workspace, capsys):
    cfg = _config(workspace / "c.json")
    rc = main(["train", "--config", str(cfg), "--data", str(workspace / "data"), "--manifest", str(workspace / "m.csv"),
               "--out", str(workspace / "x.dgn"), "--epochs", "1", "--batch-size", "9"])
    assert rc == 0
    assert len((workspace / "x_curve.csv").read_text().splitlines()) == 2


def test_train_missing_data_exit_2(workspace, capsys):
    cfg = _config(workspace / "c.json")
    assert main(["train", "--config", str(cfg), "--data", str(workspace / "nope"),
                 "--manifest", str(workspace / "m.csv"), "--out", str(workspace / "x.dgn")]) == 2
    assert main(["train", "--config", str(cfg), "--data", str(workspace / "data"),
                 "--manifest", str(workspace / "nope.csv"), "--out", str(workspace / "x.dgn")]) == 2
    assert main(["train", "--config", str(workspace / "nope.json"), "--data", str(workspace / "data"),
                 "--manifest", str(workspace / "m.csv"), "--out", str(workspace / "x.dgn")]) == 1


def test_train_divergence_exit_3(workspace, capsys):
    cfg = _config(workspace / "c.json", learning_rate=1e200, epochs=5)
    rc = main(["train", "--config", str(cfg), "--data", str(workspace / "data"),
               "--manifest", str(workspace / "m.csv"), "--out", str(workspace / "x.dgn")])
    assert rc == 3
    assert "iteration" in capsys.readouterr().err


# eval ---------------------------------------------------------------------

def test_eval_report_and_comparison(model, capsys):
    root = model.parent
    args = ["eval", "--model", str(model), "--data", str(root / "data"), "--manifest", str(root / "m.csv"),
            "--split", "test"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert "samples: 3" in first and "97.272%" in first and "this run:" in first
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_eval_bad_split_exit_1(model, capsys):
    root = model.parent
    assert main(["eval", "--model", str(model), "--data", str(root / "data"), "--manifest", str(root / "m.csv"),
                 "--split", "nosuch"]) == 1


def test_eval_bad_model_exit_2(model, capsys):
    root = model.parent
    broken = root / "broken.dgn"
    broken.write_bytes(model.read_bytes()[:100])
    assert main(["eval", "--model", str(broken), "--data", str(root / "data"), "--manifest", str(root / "m.csv")]) == 2


def test_eval_protocol(workspace, capsys):
    cfg = _config(workspace / "c.json", epochs=1, batch_size=9)
    rc = main(["eval", "--protocol", "median5", "--config", str(cfg), "--data", str(workspace / "data"),
               "--manifest", str(workspace / "m.csv"), "--split", "test"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.count("run ") == 5 and "median accuracy over 5 runs" in out
    assert main(["eval", "--protocol", "median5", "--data", str(workspace / "data"),
                 "--manifest", str(workspace / "m.csv")]) == 1


# predict ------------------------------------------------------------------

def test_predict(model, capsys):
    image = model.parent / "data" / "spiral" / "spiral_0.ppm"
    assert main(["predict", "--model", str(model), "--image", str(image)]) == 0
    out = capsys.readouterr().out
    assert main(["predict", "--model", str(model), "--image", str(image)]) == 0
    assert capsys.readouterr().out == out
    lines = out.splitlines()
    probs = {k: float(v) for k, v in (line.split(": ") for line in lines[1:])}
    assert abs(sum(probs.values()) - 1) <= 1e-9
    assert lines[0] == "class: " + max(probs, key=probs.get)


def test_predict_grayscale_input(model, tmp_path, capsys):
    img = tmp_path / "g.pgm"
    img.write_bytes(b"P5\n40 24\n255\n" + bytes(range(240)) * 4)
    assert main(["predict", "--model", str(model), "--image", str(img)]) == 0


def test_predict_undecodable_exit_2(model, tmp_path, capsys):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n4 4\n255\n" + bytes(5))
    assert main(["predict", "--model", str(model), "--image", str(bad)]) == 2
    assert main(["predict", "--model", str(model), "--image", str(tmp_path / "none.ppm")]) == 2


# viz ----------------------------------------------------------------------

def test_viz_without_curves(tmp_path, capsys):
    cfg = PROFILES["fast32"]
    path = tmp_path / "fresh.dgn"
    save_checkpoint(build_network(cfg, 0), path)
    img = tmp_path / "x.pgm"
    img.write_bytes(b"P5\n32 32\n255\n" + bytes(np.arange(1024) % 256))
    out = tmp_path / "viz"
    assert main(["viz", "--model", str(path), "--image", str(img), "--out", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert files == ["conv_maps.pgm", "fc1_strip.pgm", "relu_maps.pgm"]
    conv = decode_netpbm((out / "conv_maps.pgm").read_bytes())
    assert conv.shape == (1, 8 * 29 - 1, 12 * 29 - 1)
    assert decode_netpbm((out / "fc1_strip.pgm").read_bytes()).shape == (1, 16, 407)
    first = _tree(out)
    assert main(["viz", "--model", str(path), "--image", str(img), "--out", str(out)]) == 0
    assert _tree(out) == first


def test_viz_copies_curves(model, capsys):
    out = model.parent / "viz"
    image = model.parent / "data" / "elliptical" / "elliptical_0.ppm"
    assert main(["viz", "--model", str(model), "--image", str(image), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "model_curve.csv" in names and "model_curve_val.csv" in names
    assert (out / "model_curve.csv").read_bytes() == (model.parent / "model_curve.csv").read_bytes()


def test_viz_corrupt_curve_exit_1(model, capsys):
    (model.parent / "model_curve.csv").write_text("garbage\n")
    image = model.parent / "data" / "elliptical" / "elliptical_0.ppm"
    assert main(["viz", "--model", str(model), "--image", str(image), "--out", str(model.parent / "v")]) == 1


def test_train_overfit_set_reaches_full_train_accuracy(tmp_path, capsys):
    # 12 samples, all in the train split; lr 0.001 keeps full-batch steps stable
    data = tmp_path / "data"
    main(["generate", "--out", str(data), "--counts", "4,4,4", "--size", "32", "--seed", "0"])
    rows = ["id,class,split"] + [f"{c}_{i},{c},train" for c in ("elliptical", "spiral", "irregular") for i in range(4)]
    (tmp_path / "all.csv").write_text("\n".join(rows) + "\n")
    cfg = _config(tmp_path / "c.json", learning_rate=0.001, batch_size=12, epochs=60, seed=0)
    capsys.readouterr()
    rc = main(["train", "--config", str(cfg), "--data", str(data), "--manifest", str(tmp_path / "all.csv"),
               "--out", str(tmp_path / "o.dgn")])
    assert rc == 0
    assert "train accuracy: 1.000000" in capsys.readouterr().out
