import csv
import io
import json

import numpy as np
import pytest

import cabr.checks
from cabr.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from cabr.imaging import RowLabels, load_mask, load_pgm, write_labels

TINY = {
    "phantom": {"height": 48, "width": 48, "vessel_count": [3, 6], "thickness": [1, 4]},
    "train": {"patch_h": 16, "patch_w": 16, "width_max": 5, "batch_size": 2, "steps_per_epoch": 2,
              "val_patches": 4, "epochs": 1, "lr": 1e-3},
    "model": {"base_channels": 4},
    "eval": {"window_height": 16},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["phantom", "--count", "3", "--out", str(root / "corpus"), "--seed", "1", "--config", str(cfg)]) == 0
    assert main(["train", "--corpus", str(root / "corpus"), "--out-checkpoint", str(root / "net.ckpt"),
                 "--config", str(cfg)]) == 0
    return root


def _striped_corpus(root):
    # same phantoms with a stripe in every label file
    out = root / "striped"
    out.mkdir(exist_ok=True)
    manifest = json.loads((root / "corpus" / "manifest.json").read_text())
    for i, entry in enumerate(manifest):
        for key in ("image_path", "mask_path"):
            (out / entry[key]).write_bytes((root / "corpus" / entry[key]).read_bytes())
        write_labels(RowLabels.from_rows(48, 10, 12 + i), out / entry["label_path"])
    (out / "manifest.json").write_text(json.dumps(manifest))
    return out


def test_params_prints_one_integer(capsys):
    assert main(["params", "--channels", "16"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.strip().isdigit() and out.count("\n") == 1
    counts = []
    for c in ("8", "16", "32"):
        main(["params", "--channels", c, "--variant", "light"])
        counts.append(int(capsys.readouterr().out))
    assert counts == [27653, 109449, 435473]


def test_phantom_corpus_written(workspace):
    manifest = json.loads((workspace / "corpus" / "manifest.json").read_text())
    assert len(manifest) == 3
    assert load_pgm(workspace / "corpus" / manifest[0]["image_path"]).shape == (48, 48)


def test_train_writes_log_and_config(workspace):
    run = workspace / "net_run"
    assert (run / "train_log.csv").read_text().count("\n") == 2
    assert json.loads((run / "config.json").read_text())["model"]["base_channels"] == 4


def test_infer_all_clear_is_identity(workspace, tmp_path):
    c = workspace / "corpus"
    out = tmp_path / "pred.pgm"
    rc = main(["infer", "--image", str(c / "image_0000.pgm"), "--mask", str(c / "mask_0000.pgm"),
               "--labels", str(c / "labels_0000.txt"), "--checkpoint", str(workspace / "net.ckpt"),
               "--out-mask", str(out), "--config", str(workspace / "tiny.json")])
    assert rc == EXIT_OK
    assert out.read_bytes() == (c / "mask_0000.pgm").read_bytes()


def test_infer_overlay(workspace, tmp_path):
    c = _striped_corpus(workspace)
    out, ov = tmp_path / "pred.pgm", tmp_path / "ov.ppm"
    rc = main(["infer", "--image", str(c / "image_0001.pgm"), "--mask", str(c / "mask_0001.pgm"),
               "--labels", str(c / "labels_0001.txt"), "--checkpoint", str(workspace / "net.ckpt"),
               "--out-mask", str(out), "--overlay", str(ov), "--config", str(workspace / "tiny.json")])
    assert rc == EXIT_OK
    pred, orig = load_mask(out).data, load_mask(c / "mask_0001.pgm").data
    keep = np.ones(48, bool)
    keep[10:13] = False
    assert np.array_equal(pred[keep], orig[keep])
    raw = ov.read_bytes()
    assert raw.startswith(b"P6\n48 48\n255\n")
    rgb = np.frombuffer(raw[len(b"P6\n48 48\n255\n"):], np.uint8).reshape(48, 48, 3)
    assert (rgb[11, :, 0] >= 127).all() and np.array_equal(rgb[0, :, 0], rgb[0, :, 1])


def test_eval_three_images(workspace, tmp_path, capsys):
    c = _striped_corpus(workspace)
    report = tmp_path / "r.csv"
    rc = main(["eval", "--corpus", str(c), "--checkpoint", str(workspace / "net.ckpt"), "--report", str(report),
               "--config", str(workspace / "tiny.json")])
    assert rc == EXIT_OK
    rows = list(csv.reader(io.StringIO(report.read_text())))
    assert rows[0] == ["id", "noise_level", "subset", "dice"] and len(rows) == 4
    summary = (tmp_path / "r.csv.summary.txt").read_text()
    assert summary.splitlines()[-1].split()[:2] == ["All", "3"]
    assert capsys.readouterr().out == summary


def test_eval_threads_identical(workspace, tmp_path):
    c = _striped_corpus(workspace)
    for name, threads in (("a.csv", "1"), ("b.csv", "3")):
        main(["--threads", threads, "eval", "--corpus", str(c), "--checkpoint", str(workspace / "net.ckpt"),
              "--report", str(tmp_path / name), "--config", str(workspace / "tiny.json")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synth_and_row_csv(workspace, tmp_path):
    img = workspace / "corpus" / "image_0002.pgm"
    args = ["synth", "--image", str(img), "--rows", "20:23", "--seed", "4", "--row-csv", str(tmp_path / "row.csv"),
            "--labels-out", str(tmp_path / "lab.txt")]
    assert main(args + ["--out", str(tmp_path / "a.pgm")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b.pgm")]) == EXIT_OK
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    a, src = load_pgm(tmp_path / "a.pgm").data, load_pgm(img).data
    assert np.array_equal(a[:20], src[:20]) and np.array_equal(a[23:], src[23:])
    rows = list(csv.reader(open(tmp_path / "row.csv")))
    assert rows[0] == ["column", "original", "synthesized"] and len(rows) == 49
    assert [int(r[1]) for r in rows[1:]] == src[20].tolist()
    assert [int(r[2]) for r in rows[1:]] == a[20].tolist()
    g = main(["synth", "--image", str(img), "--rows", "5:6", "--mode", "gauss", "--offset", "0",
              "--out", str(tmp_path / "g.pgm")])
    assert g == EXIT_OK


def test_enhance(workspace, tmp_path):
    c = workspace / "corpus"
    assert main(["enhance", "--image", str(c / "image_0000.pgm"), "--mask", str(c / "mask_0000.pgm"),
                 "--out", str(tmp_path / "e.pgm")]) == EXIT_OK
    e, img, m = load_pgm(tmp_path / "e.pgm").data, load_pgm(c / "image_0000.pgm").data, load_mask(c / "mask_0000.pgm").data
    assert np.array_equal(e, img * m)


def test_config_dump_round_trip(workspace, tmp_path, capsys):
    assert main(["config", "--config", str(workspace / "tiny.json")]) == EXIT_OK
    dumped = tmp_path / "dumped.json"
    dumped.write_text(capsys.readouterr().out)
    main(["config", "--config", str(dumped)])
    assert capsys.readouterr().out == dumped.read_text()
    # re-running from the dumped config reproduces the checkpoint
    rc = main(["train", "--corpus", str(workspace / "corpus"), "--out-checkpoint", str(tmp_path / "net.ckpt"),
               "--config", str(dumped)])
    assert rc == EXIT_OK
    assert (tmp_path / "net.ckpt").read_bytes() == (workspace / "net.ckpt").read_bytes()


def test_gradcheck_exit_codes(monkeypatch, capsys):
    class R:
        def __init__(self, ok):
            self.passed = ok

        def __str__(self):
            return "stub"

    monkeypatch.setattr(cabr.checks, "full_suite", lambda seed: [R(True)])
    assert main(["gradcheck"]) == EXIT_OK
    monkeypatch.setattr(cabr.checks, "full_suite", lambda seed: [R(True), R(False)])
    assert main(["gradcheck"]) == EXIT_NUMERIC


def test_gradcheck_real():
    assert main(["gradcheck"]) == EXIT_OK


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["params", "--channels", "x"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE
    img = tmp_path / "i.pgm"
    img.write_bytes(b"P5\n4 4\n255\n" + bytes(16))
    assert main(["synth", "--image", str(img), "--out", str(tmp_path / "o.pgm")]) == EXIT_USAGE
    assert main(["synth", "--image", str(img), "--rows", "3:9", "--out", str(tmp_path / "o.pgm")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "--rows" in err


def test_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P2\n1 1\n255\n0")
    assert main(["enhance", "--image", str(bad), "--mask", str(bad), "--out", str(tmp_path / "o.pgm")]) == EXIT_DATA
    assert main(["eval", "--corpus", str(tmp_path / "missing"), "--checkpoint", "x", "--report", "r"]) == EXIT_DATA
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"bogus": 1}}))
    assert main(["config", "--config", str(cfg)]) == EXIT_DATA
    lines = [l for l in capsys.readouterr().err.splitlines() if l]
    assert len(lines) == 3 and all(l.startswith("cabr ") for l in lines)


def test_numeric_failure_exit(workspace, tmp_path, monkeypatch):
    import cabr.trainer
    from cabr.trainer import NonFiniteLossError

    def boom(*a, **k):
        raise NonFiniteLossError("loss is nan")

    monkeypatch.setattr(cabr.trainer, "fit", boom)
    rc = main(["train", "--corpus", str(workspace / "corpus"), "--out-checkpoint", str(tmp_path / "n.ckpt"),
               "--config", str(workspace / "tiny.json")])
    assert rc == EXIT_NUMERIC
