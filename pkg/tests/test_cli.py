import hashlib
import json
from pathlib import Path

import pytest

from camtamper.cli import main
from camtamper.config import ConfigError, derive_seed, load_config, parse_override
from camtamper.features import FEATURE_IDS, read_residual_csv

SMALL = """
[run]
seed = 11
fps = 3.0

[toy]
frames = 450
width = 64
height = 64

[frame]
width = 64
height = 64

[synth]
period_s = 50.0
dur_min_s = 10.0
dur_max_s = 12.0

[tsa]
p_max = 1
q_max = 1
segment_frames = 200
window = 100

[eval]
warmup_frames = 60
"""

COMMANDS = ("toy", "synth", "extract", "stationarity", "fit", "evaluate")


def run(cmd, cfg, out, *extra):
    return main([cmd, "--config", str(cfg), "--out-dir", str(out), *extra])


def run_all(cfg, out):
    for cmd in COMMANDS:
        assert run(cmd, cfg, out) == 0, cmd


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.toml"
    p.write_text(SMALL)
    return p


@pytest.fixture(scope="module")
def pipeline(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run_all(small_cfg, out)
    return out


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- config --------------------------------------------------------------------------------


def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config(None, ["features.alpha=0.9", "run.seed=3"])
    assert cfg.features.alpha == 0.9 and cfg.run.seed == 3
    assert cfg.tsa.window == 1000 and cfg.tsa.segment_frames == 10800
    with pytest.raises(ConfigError):
        load_config(None, ["features.nope=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["features.alpha=1.0"])
    with pytest.raises(ConfigError):
        parse_override("alpha=0.3")
    bad = tmp_path / "bad.toml"
    bad.write_text("[mystery]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_derive_seed_stable():
    assert derive_seed(7, "toy") == derive_seed(7, "toy")
    assert derive_seed(7, "toy") != derive_seed(7, "synth")
    assert derive_seed(7, "toy") != derive_seed(8, "toy")


def test_default_schedule_quarter_tampered():
    cfg = load_config(None)
    share = (cfg.synth.dur_min_s + cfg.synth.dur_max_s) / 2 / cfg.synth.period_s
    assert share == pytest.approx(0.25)


# -- exit codes ----------------------------------------------------------------------------------


def test_frames_zero_is_usage_error(tmp_path, capsys):
    assert main(["toy", "--frames", "0", "--out-dir", str(tmp_path)]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"]["exit_code"] == 2


def test_unknown_subcommand_and_flag(tmp_path):
    assert main(["frobnicate"]) == 2
    assert main(["toy", "--bogus"]) == 2


def test_missing_inputs_is_data_error(tmp_path, capsys):
    assert main(["extract", "--out-dir", str(tmp_path)]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["kind"] == "data"


def test_unknown_feature_is_usage_error(pipeline, small_cfg):
    assert run("evaluate", small_cfg, pipeline, "--feature", "zz") == 2


# -- pipeline outputs --------------------------------------------------------------------------------


def test_pipeline_layout(pipeline):
    for rel in ("toy/manifest.txt", "normal/manifest.txt", "tampered/manifest.txt", "schedule.json",
                "annotations.csv", "residuals/normal.csv", "residuals/tampered.csv", "stationarity.json",
                "fits.json", "predictions.csv", "report.json", "logs/evaluate.log"):
        assert (pipeline / rel).exists(), rel
    assert len((pipeline / "toy" / "manifest.txt").read_text().split()) == 450


def test_extract_rows_flagged_not_dropped(pipeline):
    idx, values, mask = read_residual_csv(pipeline / "residuals" / "normal.csv")
    assert len(idx) == 450 and set(values) == set(FEATURE_IDS)
    b3_valid = (mask >> 2) & 1
    assert b3_valid[:30].sum() == 0 and b3_valid[30:].all()


def test_stationarity_rows(pipeline):
    doc = json.loads((pipeline / "stationarity.json").read_text())
    stages = {(r["feature"], r["stage"]) for r in doc["rows"]}
    assert stages == {(f, s) for f in FEATURE_IDS for s in ("raw", "transformed")}
    assert doc["critical_values"] == {"adf": -2.861, "kpss": 0.463}


def test_fits_within_grid(pipeline):
    doc = json.loads((pipeline / "fits.json").read_text())
    assert doc["root_seed"] == 11
    segs = {(r["feature"], r["segment"]) for r in doc["fits"]}
    assert len(segs) == len(doc["fits"]) == 20  # 10 features x 2 segments
    for rec in doc["fits"]:
        if rec["fit"]:
            p, d, q = rec["fit"]["order"]
            assert p <= 1 and q <= 1 and d == 1


def test_report_covers_features_and_classes(pipeline):
    rep = json.loads((pipeline / "report.json").read_text())
    assert set(rep["features"]) == set(FEATURE_IDS)
    for f in FEATURE_IDS:
        assert set(rep["features"][f]["classes"]) == {"covered", "defocussed", "moved", "unified"}
    assert rep["meta"]["root_seed"] == 11
    assert len(list((pipeline / "roc").glob("*.csv"))) == 40


def test_evaluate_single_feature(pipeline, small_cfg, tmp_path):
    import shutil
    out = tmp_path / "one"
    shutil.copytree(pipeline, out)
    assert run("evaluate", small_cfg, out, "--feature", "b2") == 0
    rep = json.loads((out / "report.json").read_text())
    assert list(rep["features"]) == ["b2"]


def test_no_tamper_equals_normal(small_cfg, tmp_path):
    out = tmp_path / "clean"
    assert run("toy", small_cfg, out) == 0
    assert run("synth", small_cfg, out, "--no-tamper") == 0
    assert (out / "normal" / "manifest.txt").read_text() == (out / "tampered" / "manifest.txt").read_text()
    labels = (out / "annotations.csv").read_text().splitlines()[1:]
    assert all(l.endswith(",normal") for l in labels)


def test_toy_rerun_identical(small_cfg, pipeline, tmp_path):
    out = tmp_path / "again"
    assert run("toy", small_cfg, out) == 0
    assert digest(out / "toy" / "manifest.txt") == digest(pipeline / "toy" / "manifest.txt")
    frames = sorted((out / "toy" / "frames").glob("*.pgm"))
    ref = sorted((pipeline / "toy" / "frames").glob("*.pgm"))
    assert [digest(p) for p in frames[::50]] == [digest(p) for p in ref[::50]]


def test_seed_changes_outputs(small_cfg, pipeline, tmp_path):
    out = tmp_path / "seed"
    assert run("toy", small_cfg, out, "--seed", "12") == 0
    a = (out / "toy" / "frames" / "000000.pgm").read_bytes()
    b = (pipeline / "toy" / "frames" / "000000.pgm").read_bytes()
    assert a != b


def test_full_pipeline_deterministic(small_cfg, pipeline, tmp_path):
    out = tmp_path / "second"
    run_all(small_cfg, out)
    for rel in ("residuals/normal.csv", "residuals/tampered.csv", "report.json", "fits.json",
                "stationarity.json", "schedule.json", "annotations.csv", "predictions.csv"):
        assert digest(out / rel) == digest(pipeline / rel), rel
