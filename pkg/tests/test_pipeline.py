import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from lurk.cli import main as cli_main
from lurk.covariates import CovariateMatrix
from lurk.errors import DatasetMismatchError, StageError
from lurk.evaluation import kfold_plan, run_cv
from lurk.monitors import MonitorTable
from lurk.pipeline import PipelineConfig, compare_models, format_comparison, run
from lurk.synth import SyntheticScenario, generate_synthetic, write_scenario
from lurk._util import stage_seed


def scenario(seed=1, **kw):
    kw.setdefault("n_sites", 40)
    kw.setdefault("n_clusters", 5)
    kw.setdefault("prediction_cols", 12)
    kw.setdefault("prediction_rows", 12)
    kw.setdefault("grf_partial_sill", 9.0)
    kw.setdefault("noise_sd", 1.0)
    return SyntheticScenario(seed=seed, **kw)


def write(tmp_path, sc, recipe=None, name="scn"):
    data = generate_synthetic(sc)
    return write_scenario(data, tmp_path / name, recipe=recipe), data


def test_run_smoke_and_artifacts(tmp_path):
    config_path, data = write(tmp_path, scenario(),
                              recipe={"selection": "stepwise", "kriging": False})
    cfg = PipelineConfig.from_json(config_path)
    report = run(cfg)
    assert report.status == "ok"
    out = Path(cfg.out_dir)
    for artifact in ("monitors.csv", "matrix.csv", "model.json", "cv_kfold.csv",
                     "cv_logo.csv", "cv_summary.json", "prediction.asc",
                     "exposure.csv", "exposure_summary.json", "manifest.json",
                     "report.json", "run.log"):
        assert (out / artifact).exists(), artifact
    assert "kfold_r2" in report.metrics
    assert report.metrics["pop_weighted_mean"] > 0
    model = json.loads((out / "model.json").read_text())
    assert model["recipe"]["selection"] == "stepwise"


def test_run_deterministic_across_directories(tmp_path):
    sc = scenario(seed=4)
    config_path, _ = write(tmp_path, sc, name="a")
    config_path2, _ = write(tmp_path, sc, name="b")
    cfg1 = PipelineConfig.from_json(config_path)
    cfg2 = PipelineConfig.from_json(config_path2)
    r1 = run(cfg1)
    r2 = run(cfg2)
    h1 = {s: e["outputs"] for s, e in r1.stages.items()}
    h2 = {s: e["outputs"] for s, e in r2.stages.items()}
    assert h1 == h2


def test_rerun_uses_cache_and_invalidation_cascades(tmp_path):
    config_path, _ = write(tmp_path, scenario(seed=5))
    cfg = PipelineConfig.from_json(config_path)
    r1 = run(cfg)
    log_before = (Path(cfg.out_dir) / "run.log").read_text()
    r2 = run(PipelineConfig.from_json(config_path))
    log_after = (Path(cfg.out_dir) / "run.log").read_text()
    new_lines = log_after[len(log_before):].strip().splitlines()
    assert all("status=cached" in line for line in new_lines)
    assert {s: e["outputs"] for s, e in r1.stages.items()} == \
        {s: e["outputs"] for s, e in r2.stages.items()}

    # corrupt one daily value: every downstream stage must recompute
    daily = config_path.parent / "inputs" / "daily.csv"
    text = daily.read_text().splitlines()
    parts = text[1].split(",")
    parts[2] = str(float(parts[2]) + 1.0)
    text[1] = ",".join(parts)
    daily.write_text("\n".join(text) + "\n")
    log_before = (Path(cfg.out_dir) / "run.log").read_text()
    run(PipelineConfig.from_json(config_path))
    recomputed = (Path(cfg.out_dir) / "run.log").read_text()[len(log_before):]
    for stage in ("annualize", "covariates", "fit", "cv", "predict", "exposure"):
        assert f"stage={stage} status=ok" in recomputed, stage


def test_stage_failure_reported_with_partial_artifacts(tmp_path):
    sc = scenario(seed=6, n_sites=1, n_clusters=1)
    config_path, _ = write(tmp_path, sc, recipe={"selection": "mean", "kriging": True})
    cfg = PipelineConfig.from_json(config_path)
    with pytest.raises(StageError):
        run(cfg)
    report = json.loads((Path(cfg.out_dir) / "report.json").read_text())
    assert report["status"] == "failed"
    assert report["failed_stage"] == "fit"
    assert report["error"]
    assert (Path(cfg.out_dir) / "monitors.csv").exists()
    assert (Path(cfg.out_dir) / "matrix.csv").exists()


def test_missing_input_rejected(tmp_path):
    config_path, _ = write(tmp_path, scenario(seed=7))
    cfg = PipelineConfig.from_json(config_path)
    cfg.daily_csv = Path(tmp_path / "nope.csv")
    with pytest.raises(Exception, match="missing input"):
        run(cfg)


def test_cv_metrics_match_direct_evaluation(tmp_path):
    config_path, _ = write(tmp_path, scenario(seed=8),
                           recipe={"selection": "stepwise", "kriging": False})
    cfg = PipelineConfig.from_json(config_path)
    report = run(cfg)
    out = Path(cfg.out_dir)
    sites = MonitorTable.from_csv(out / "monitors.csv")
    matrix = CovariateMatrix.from_csv(out / "matrix.csv")
    plan = kfold_plan(sites.site_ids, cfg.cv_k, seed=stage_seed(cfg.seed, "cv-folds"))
    res = run_cv(cfg.recipe, sites, matrix, plan, seed=stage_seed(cfg.seed, "cv-kfold"))
    assert report.metrics["kfold_r2"] == pytest.approx(res.r2_mse, rel=1e-12)
    assert report.metrics["kfold_rmse"] == pytest.approx(res.rmse, rel=1e-12)


def test_compare_models_table(tmp_path):
    sc = scenario(seed=9, n_sites=70, n_clusters=9)
    reports = []
    for i, recipe in enumerate([
        {"selection": "stepwise", "kriging": False},
        {"selection": "stepwise", "kriging": True},
    ]):
        config_path, _ = write(tmp_path, sc, recipe=recipe, name=f"m{i}")
        cfg = PipelineConfig.from_json(config_path)
        reports.append(run(cfg).to_dict())
    rows = compare_models(reports)
    assert len(rows) == 2
    assert rows[0]["kriging"] is False and rows[1]["kriging"] is True
    assert format_comparison(rows).count("\n") == 2

    single = compare_models(reports[:1])
    assert len(single) == 1

    bad = dict(reports[0])
    bad["dataset_hash"] = "different"
    with pytest.raises(DatasetMismatchError):
        compare_models([reports[0], bad])


def test_identical_recipes_identical_metrics(tmp_path):
    sc = scenario(seed=10)
    r = []
    for name in ("x", "y"):
        config_path, _ = write(tmp_path, sc,
                               recipe={"selection": "stepwise", "kriging": False},
                               name=name)
        cfg = PipelineConfig.from_json(config_path)
        r.append(run(cfg).to_dict())
    rows = compare_models(r)
    assert rows[0]["kfold_r2"] == rows[1]["kfold_r2"]
    assert rows[0]["logo_rmse"] == rows[1]["logo_rmse"]


def test_cli_synth_run_compare(tmp_path):
    runner = CliRunner()
    out = tmp_path / "scn"
    res = runner.invoke(cli_main, ["--seed", "3", "--out", str(out), "synth"])
    assert res.exit_code == 0, res.output
    config = out / "config.json"
    assert config.exists()
    res = runner.invoke(cli_main, ["--config", str(config), "run"])
    assert res.exit_code == 0, res.output
    report = out / "run" / "report.json"
    assert report.exists()
    res = runner.invoke(cli_main, ["compare", str(report)])
    assert res.exit_code == 0, res.output
    assert "kfold_r2" in res.output


def test_cli_montecarlo(tmp_path):
    runner = CliRunner()
    out = tmp_path / "scn"
    res = runner.invoke(cli_main, ["--seed", "11", "--out", str(out), "synth"])
    assert res.exit_code == 0, res.output
    res = runner.invoke(cli_main, [
        "--config", str(out / "config.json"), "--out", str(out / "mc"),
        "montecarlo", "--n-grid", "20,30", "--iterations", "2",
    ])
    assert res.exit_code == 0, res.output
    assert (out / "mc" / "montecarlo.csv").exists()
