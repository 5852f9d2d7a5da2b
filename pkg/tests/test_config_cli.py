import json
import subprocess
import sys

import pandas as pd
import pytest

from congestcast.cli import main
from congestcast.config import PipelineConfig, parse_assignment
from congestcast.errors import ConfigError

SMALL = "synth={H: 30, D: 24, K_true: 3, n_segments: 2, tt_noise_sd: 0.05}"


def small_args(outdir, *extra):
    return ["--output-dir", str(outdir), "--set", SMALL, "--set", "k=3", "--set", "arma_coverage_cutoffs=[]",
            "--set", "sweep_ends=['03:00', '06:00']", *extra]


def test_config_roundtrip_and_hash(tmp_path):
    cfg = PipelineConfig(k=7, cst_kinds=["aggregate"], synth={"H": 10}, sweep_ends=["02:00"])
    cfg.save(tmp_path / "c.yaml")
    again = PipelineConfig.load(tmp_path / "c.yaml")
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.override(threads=4).hash() == cfg.hash()
    assert cfg.override(k=8).hash() != cfg.hash()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"kk": 3})
    with pytest.raises(ConfigError):
        PipelineConfig(eval_mode="loo")
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "bad.yaml")
    assert parse_assignment("cst_kinds=[aggregate, mixed]") == ("cst_kinds", ["aggregate", "mixed"])
    with pytest.raises(ConfigError):
        parse_assignment("k")


def test_exit_codes(tmp_path, capsys):
    assert main(["config", "--set", "nonsense=1"]) == 2
    assert main(["cluster", "--output-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "ingest" in err and "profiles.csv" in err
    assert main(["features", "--output-dir", str(tmp_path)]) == 2
    assert "cluster" in capsys.readouterr().err
    assert main(["ingest", "--output-dir", str(tmp_path), "--set", f"electricity_csv={tmp_path / 'no.csv'}"]) == 2
    (tmp_path / "e.csv").write_text("household_id,timestamp,kwh\nh1,2014-06-03T00:00,-1\n")
    assert main(["ingest", "--output-dir", str(tmp_path), "--set", f"electricity_csv={tmp_path / 'e.csv'}"]) == 3


def test_config_command_prints_effective_config(capsys):
    assert main(["config", "--k", "5", "--seed", "9"]) == 0
    cfg = PipelineConfig.from_dict(__import__("yaml").safe_load(capsys.readouterr().out))
    assert cfg.k == 5 and cfg.cluster_seed == cfg.cv_seed == 9 and cfg.synth["seed"] == 9


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["all", *small_args(out)]) == 0
    return out


def test_all_stages_write_artifacts_and_manifests(pipeline_run):
    out = pipeline_run
    for stage in ("synth", "ingest", "cluster", "extract", "features", "evaluate", "compare", "similarity", "sweep"):
        manifest = json.loads((out / stage / "run.json").read_text())
        cfg = PipelineConfig.load(out / stage / "config.yaml")
        assert manifest["config_hash"] == cfg.hash()
        assert manifest["seeds"]["cluster_seed"] == 0 and manifest["versions"]["congestcast"]
        for rel, digest in manifest["outputs"].items():
            assert len(digest) == 64 and (out / rel).exists()
    summary = json.loads((out / "evaluate" / "summary.json").read_text())
    assert {(r["target"], r["kind"]) for r in summary["results"]} == {
        ("cst", "aggregate"), ("cst", "disaggregate"), ("cst", "mixed"),
        ("duration", "aggregate"), ("duration", "disaggregate"), ("duration", "aggregate+cst")}
    assert summary["config_hash"] == manifest["config_hash"]


def test_compare_table_shape(pipeline_run):
    cst = pd.read_csv(pipeline_run / "compare" / "cst.csv")
    assert list(cst.columns) == ["segment_id", "method", "n_days", "rmse", "mae", "arma_coverage"]
    arma = cst[cst.method == "arma"]
    # ARMA errors are never reported without the coverage fraction
    assert len(arma) == 2 and arma.arma_coverage.notna().all()
    assert {"aggregate", "disaggregate", "mixed", "historical_mean"} <= set(cst.method)
    base = pd.read_csv(pipeline_run / "compare" / "baselines.csv")
    assert list(base.columns) == ["segment_id", "day", "method", "predicted_cst_hours"]


def test_similarity_and_sweep_outputs(pipeline_run):
    jac = pd.read_csv(pipeline_run / "similarity" / "jaccard.csv", index_col=0)
    assert list(jac.index) == list(jac.columns) == ["seg01", "seg02"]
    assert (jac.values == jac.values.T).all()
    sweep = pd.read_csv(pipeline_run / "sweep" / "sweep.csv")
    assert sorted(set(sweep.window_end)) == ["03:00", "06:00"]


def test_evaluate_rerun_is_byte_identical(pipeline_run):
    before = {p.name: p.read_bytes() for p in (pipeline_run / "evaluate").iterdir()}
    assert main(["evaluate", *small_args(pipeline_run)]) == 0
    after = {p.name: p.read_bytes() for p in (pipeline_run / "evaluate").iterdir()}
    assert before == after


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "congestcast.cli", "config", "--k", "4"],
                         capture_output=True, text=True, check=True)
    assert "k: 4" in res.stdout


def test_compare_mixed_beats_aggregate_with_visible_trend(tmp_path):
    # a build-up before congestion lets ARMA see the onset coming from the 06:00 cutoff
    out = tmp_path / "ramp"
    synth = "synth={H: 40, D: 30, K_true: 3, n_segments: 1, tt_noise_sd: 0.02, ramp_hours: 2.0, cst_noise_sd: 0.3}"
    for stage in ("synth", "ingest", "cluster", "extract", "features", "evaluate", "compare"):
        assert main([stage, "--output-dir", str(out), "--set", synth, "--set", "k=3",
                     "--set", "arma_coverage_cutoffs=[]", "--set", "targets=[cst]"]) == 0
    cst = pd.read_csv(out / "compare" / "cst.csv").set_index("method")
    assert cst.loc["mixed", "rmse"] <= cst.loc["aggregate", "rmse"]
    assert cst.loc["arma", "arma_coverage"] > 0.5
