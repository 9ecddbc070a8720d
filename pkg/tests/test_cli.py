import json
import subprocess
import sys

import numpy as np
import pytest

from cmrmeta import experiments, pgm
from cmrmeta.cli import main
from cmrmeta.config import parse_config

TINY = """
[run]
budgets = [4, 6, 8]
seeds = [0]

[corpus]
per_class_count = 16
image_size = 32
cine_frames = 4

[model]
conv_channels = [4, 8]
head_widths = [16, 8]

[meta]
epochs = 2
batch = 8
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def read_jsonl(path):
    return [json.loads(x) for x in path.read_text().splitlines()]


def test_run_enumerates_every_cell(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(tiny), "--out", str(out)]) == 0
    records = read_jsonl(out / "records.jsonl")
    assert len(records) == 3 * 3 * 1
    assert {(r["mode"], r["budget"]) for r in records} == {(m, b) for m in ("M1", "M2", "M3") for b in (4, 6, 8)}
    spec_hash = parse_config(TINY).spec_hash()
    for r in records:
        assert r["status"] == "ok" and r["spec_hash"] == spec_hash
        assert 0 <= r["accuracy"] <= 1 and r["wall_seconds"] >= 0
        assert (out / r["checkpoint"]).is_file()
    assert len((out / "runs.csv").read_text().splitlines()) == 10
    assert (out / "histories").is_dir()
    assert "9/9 cells succeeded" in capsys.readouterr().out


def test_repeated_seed_gives_identical_reports(tiny, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(tiny), "--seed", "7", "--out", str(out)]) == 0
        outs.append(out)
    for report in ("runs.csv", "table1.csv", "runs_macro.csv", "table1_macro.csv"):
        assert (outs[0] / report).read_bytes() == (outs[1] / report).read_bytes()
    assert {r["seed"] for r in read_jsonl(outs[0] / "records.jsonl")} == {7}


def test_parallel_cells_match_sequential(tiny, tmp_path):
    main(["run", "--config", str(tiny), "--out", str(tmp_path / "seq")])
    main(["run", "--config", str(tiny), "--out", str(tmp_path / "par"), "--threads", "2"])
    assert (tmp_path / "seq" / "runs.csv").read_bytes() == (tmp_path / "par" / "runs.csv").read_bytes()


def test_cells_are_independent(tiny):
    cfg = parse_config(TINY)
    cells = experiments.enumerate_cells(cfg)
    full = experiments.run_experiments(cfg, cells=cells)
    subset = experiments.run_experiments(cfg, cells=cells[3:5])
    assert [r["accuracy"] for r in subset] == [r["accuracy"] for r in full[3:5]]


def test_failed_cell_gives_exit_2(tiny, tmp_path, monkeypatch):
    real = experiments.run_mode

    def flaky(mode, splits, spec, cfg):
        if mode.value == "M2":
            raise RuntimeError("boom")
        return real(mode, splits, spec, cfg)

    monkeypatch.setattr(experiments, "run_mode", flaky)
    out = tmp_path / "out"
    assert main(["run", "--config", str(tiny), "--out", str(out)]) == 2
    rows = (out / "runs.csv").read_text().splitlines()[1:]
    failed = [r for r in rows if r.endswith("failed,failed,failed,failed")]
    assert len(failed) == 3 and all(",M2," in r for r in failed)
    records = read_jsonl(out / "records.jsonl")
    assert all("boom" in r["error"] for r in records if r["status"] == "failed")


def test_config_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[meta]\nbatch = 8\nbogus = 1\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "bad.toml:3" in err and "meta.bogus" in err
    assert main(["run", "--out", str(tmp_path / "o"), "--threads", "0"]) == 1


def test_print_config(tiny, capsys):
    assert main(["run", "--config", str(tiny), "--out", "unused", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert parse_config(text) == parse_config(TINY)


def test_eval_reproduces_run_metrics(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", str(tiny), "--out", str(out), "--save-corpora"])
    capsys.readouterr()
    for r in read_jsonl(out / "records.jsonl"):
        corpus = out / "corpora" / f"{r['experiment']}_b{r['budget']}_s{r['seed']}"
        assert main(["eval", "--checkpoint", str(out / r["checkpoint"]), "--corpus", str(corpus)]) == 0
        got = json.loads(capsys.readouterr().out)
        assert got["weighted"] == {k: r[k] for k in ("accuracy", "precision", "recall", "f_measure")}
        assert got["macro"] == r["macro"]


def test_eval_empty_test_split(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", str(tiny), "--out", str(out)])
    corpus = tmp_path / "full"
    assert main(["synth", "--config", str(tiny), "--out", str(corpus), "--experiment", "experiment1",
                 "--budget", "16"]) == 0
    ckpt = read_jsonl(out / "records.jsonl")[0]["checkpoint"]
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / ckpt), "--corpus", str(corpus)]) == 1
    assert "no test samples" in capsys.readouterr().err


def test_eval_size_mismatch(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", str(tiny), "--out", str(out)])
    ckpt = out / read_jsonl(out / "records.jsonl")[0]["checkpoint"]
    big = tmp_path / "big.toml"
    big.write_text(TINY.replace("image_size = 32", "image_size = 64"))
    main(["synth", "--config", str(big), "--out", str(tmp_path / "c64"), "--experiment", "experiment1"])
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--corpus", str(tmp_path / "c64")]) == 1
    assert "32px" in capsys.readouterr().err


def test_synth_default_config(tmp_path, capsys):
    out = tmp_path / "corpus"
    assert main(["synth", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == [f"{c}\t512" for c in ("RespiratoryMotion", "CardiacMotion", "Gibbs", "Aliasing", "ArtefactFree")]
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == ["Aliasing", "ArtefactFree", "CardiacMotion", "Gibbs", "RespiratoryMotion"]
    assert all(len(list((out / d).iterdir())) == 512 for d in dirs)
    assert len((out / "manifest.jsonl").read_text().splitlines()) == 2560


def test_synth_is_byte_identical(tiny, tmp_path):
    for name in ("a", "b"):
        main(["synth", "--config", str(tiny), "--out", str(tmp_path / name)])
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)


def test_synth_split_layout(tiny, tmp_path, capsys):
    out = tmp_path / "split"
    assert main(["synth", "--config", str(tiny), "--out", str(out), "--experiment", "experiment1"]) == 0
    counts = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert set(counts.values()) == {"16"} and len(counts) == 5
    assert (out / "eval" / "hidden.jsonl").is_file() and (out / "images").is_dir()
    assert main(["synth", "--config", str(tiny), "--out", str(out), "--experiment", "nope"]) == 1


def ghost_fraction(clean, degraded):
    """Energy of the best-correlated non-zero row shift of ``clean`` inside ``degraded``."""
    h = clean.shape[0]
    scores = [float(np.sum(degraded * np.roll(clean, s, axis=0))) for s in range(h)]
    best = max(range(1, h), key=lambda s: scores[s])
    basis = np.stack([clean.ravel(), np.roll(clean, best, axis=0).ravel()], axis=1)
    coef, *_ = np.linalg.lstsq(basis, degraded.ravel(), rcond=None)
    ghost = coef[1] * np.roll(clean, best, axis=0)
    return best, float(np.sum(ghost**2) / np.sum(degraded**2))


def test_gallery(tmp_path, capsys):
    out = tmp_path / "gallery"
    assert main(["gallery", "--out", str(out)]) == 0
    pairs = [line.split("\t") for line in capsys.readouterr().out.splitlines()]
    assert len(pairs) == 5
    images = {p.name: pgm.read_pgm(p) for p in out.iterdir()}
    assert len(images) == 10
    assert np.array_equal(images["ArtefactFree_clean.pgm"], images["ArtefactFree_degraded.pgm"])
    clean, degraded = images["Aliasing_clean.pgm"], images["Aliasing_degraded.pgm"]
    assert not np.array_equal(clean, degraded)
    shift, fraction = ghost_fraction(clean, degraded)
    assert shift == clean.shape[0] // 2
    assert fraction > 0.05


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "cmrmeta.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("synth", "run", "eval", "gallery"):
        assert cmd in res.stdout
