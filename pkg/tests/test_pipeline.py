import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bimetal.cli import main
from bimetal.errors import DataError, ValidationError
from bimetal.pipeline import (
    AnalysisBundle,
    RunConfig,
    load_bundle,
    run_analyze,
    run_ingest,
    run_report,
    run_simulate,
)

from conftest import make_csv, synthetic_rows


def fast_config(**overrides) -> RunConfig:
    base = dict(
        som_epochs=10,
        som_rows=3,
        som_cols=3,
        n_classes=3,
        ms_families=("linear", "linear"),
        ms_restarts=2,
        ms_max_iter=40,
        ms_tol=1e-5,
        cpd_k_max=6,
        sim_T=150,
        sim_seed=3,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def sim_dataset(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("sim")
    config = fast_config(outdir=str(outdir))
    summary = run_simulate(config)
    return Path(summary["dataset"])


@pytest.fixture(scope="module")
def analyzed(tmp_path_factory, sim_dataset):
    outdir = tmp_path_factory.mktemp("run")
    config = fast_config(input=str(sim_dataset), outdir=str(outdir))
    bundle = run_analyze(config)
    return config, bundle


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def test_config_defaults_match_reference_setup():
    cfg = RunConfig()
    assert (cfg.som_rows * cfg.som_cols, cfg.n_classes) == (25, 6)
    assert cfg.ms_regimes == 2
    assert cfg.ms_families == ("mlp", "linear")
    assert cfg.run_cpd and cfg.run_som and cfg.run_ms
    assert cfg.cpd_threshold == 0.75
    assert (cfg.sim_p, cfg.sim_q) == (0.844298, 0.746643)


def test_config_roundtrip_and_unknown_keys(tmp_path):
    cfg = RunConfig(som_seed=7, ms_families=("linear", "linear"))
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.from_file(path) == cfg
    with pytest.raises(ValidationError, match="unknown config keys"):
        RunConfig.from_dict({"som_seeed": 1})


def test_config_hash_sensitivity():
    a = RunConfig()
    b = RunConfig(som_seed=1)
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == RunConfig().config_hash()
    assert a.config_hash(b"data1") != a.config_hash(b"data2")


def test_config_merged_precedence():
    cfg = RunConfig(som_seed=4).merged({"som_seed": 9, "ms_seed": None})
    assert cfg.som_seed == 9
    assert cfg.ms_seed == 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_regimes_dataset(tmp_path):
    config = fast_config(outdir=str(tmp_path))
    summary = run_simulate(config)
    assert summary["rows"] == 150
    truth = json.loads((tmp_path / "dataset_truth.json").read_text())
    assert truth["kind"] == "regimes"
    assert len(truth["true_states"]) == 150
    # the dataset round-trips through ingestion with the intended spread
    ingest = run_ingest(fast_config(input=summary["dataset"],
                                    outdir=str(tmp_path / "ing")))
    assert ingest["n_weeks"] == 150
    assert ingest["n_imputed"] == 0


def test_simulate_steps_sidecar_matches_seams(tmp_path):
    config = fast_config(outdir=str(tmp_path), sim_kind="steps",
                         sim_tau=(50, 100), sim_levels=(0.1, 0.6, 0.2),
                         sim_stds=(0.02, 0.05, 0.02), sim_T=150)
    summary = run_simulate(config)
    truth = json.loads((tmp_path / "dataset_truth.json").read_text())
    assert truth["true_tau"] == [50, 100]
    # spread recovered from the dataset shows the constructed levels
    from bimetal.data import compute_spread, parse_dataset

    weeks = parse_dataset(summary["dataset"])
    spread = compute_spread(weeks)
    assert np.mean(spread.values[50:100]) == pytest.approx(0.6, abs=0.05)


def test_simulate_deterministic(tmp_path):
    c1 = fast_config(outdir=str(tmp_path / "a"))
    c2 = fast_config(outdir=str(tmp_path / "b"))
    run_simulate(c1)
    run_simulate(c2)
    assert (tmp_path / "a/dataset.csv").read_bytes() == \
        (tmp_path / "b/dataset.csv").read_bytes()
    assert (tmp_path / "a/dataset_truth.json").read_bytes() == \
        (tmp_path / "b/dataset_truth.json").read_bytes()


def test_simulate_bad_steps_config(tmp_path):
    config = fast_config(outdir=str(tmp_path), sim_kind="steps",
                         sim_tau=(100, 50))
    with pytest.raises(ValidationError, match="sim_tau"):
        run_simulate(config)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def test_analyze_manifest_lists_seven_artifacts(analyzed):
    _, bundle = analyzed
    assert bundle.manifest["status"] == "ok"
    assert bundle.artifact_names == [
        "features", "spread", "som_grid", "periodization",
        "ms_model", "segmentation_mean", "segmentation_meanvar",
    ]
    assert len(bundle.artifact_names) == 7
    for entry in bundle.manifest["artifacts"]:
        assert (bundle.outdir / entry["path"]).exists()


def test_analyze_rerun_byte_identical(sim_dataset, tmp_path):
    conf_a = fast_config(input=str(sim_dataset), outdir=str(tmp_path / "a"))
    conf_b = fast_config(input=str(sim_dataset), outdir=str(tmp_path / "b"))
    run_analyze(conf_a)
    run_analyze(conf_b)
    files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
    files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert files_a == files_b
    for name in files_a:
        if name == "manifest.json":
            # differs only in the configured outdir path
            ma = json.loads((tmp_path / "a" / name).read_text())
            mb = json.loads((tmp_path / "b" / name).read_text())
            ma["config"].pop("outdir")
            mb["config"].pop("outdir")
            assert ma["artifacts"] == mb["artifacts"]
            continue
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name


def test_analyze_stage_toggle(sim_dataset, tmp_path):
    config = fast_config(input=str(sim_dataset), outdir=str(tmp_path),
                         run_cpd=False)
    bundle = run_analyze(config)
    assert "segmentation_mean" not in bundle.artifact_names
    assert "segmentation_meanvar" not in bundle.artifact_names
    assert "ms_model" in bundle.artifact_names
    assert not (tmp_path / "segmentation_mean.json").exists()


def test_analyze_failed_stage_recorded(tmp_path, sim_dataset):
    # an infeasible change-point setting aborts in the cpd stage
    config = fast_config(input=str(sim_dataset), outdir=str(tmp_path),
                         cpd_k_max=10_000)
    with pytest.raises(ValidationError):
        run_analyze(config)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["failed_stage"] == "cpd"
    # earlier artifacts were still persisted
    assert any(a["name"] == "ms_model" for a in manifest["artifacts"])


def test_load_bundle_roundtrip(analyzed):
    config, bundle = analyzed
    loaded = load_bundle(config.outdir)
    assert loaded.artifact_names == bundle.artifact_names
    assert_allclose(loaded.spread.values, bundle.spread.values)
    assert_allclose(
        loaded.em.params.transition, bundle.em.params.transition
    )
    assert loaded.segmentations["mean"].tau == bundle.segmentations["mean"].tau
    assert_allclose(
        loaded.classification.week_to_class, bundle.classification.week_to_class
    )


def test_load_bundle_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_bundle(tmp_path)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def test_report_files(analyzed):
    config, bundle = analyzed
    paths = run_report(bundle)
    table = Path(paths["class_table"]).read_text().splitlines()
    assert table[0] == "class,n_obs,pct_regime1,spread_std"
    assert len(table) == bundle.classification.k + 1
    # rows like "1,483,0.733,0.053": int, int, 3-decimal floats
    first = table[1].split(",")
    assert len(first) == 4
    int(first[0]), int(first[1])
    assert len(first[2].split(".")[1]) == 3

    means = Path(paths["class_means"]).read_text().splitlines()
    assert means[0].startswith("class,n_weeks,poa_t,")
    assert len(means) == bundle.classification.k + 1

    aligned = Path(paths["aligned_series"]).read_text().splitlines()
    assert aligned[0] == "week,spread,p_regime1,cp_mean,cp_meanvar"
    assert len(aligned) == len(bundle.spread) + 1
    rows = [line.split(",") for line in aligned[1:]]
    assert all(len(r) == 5 for r in rows)
    # indicator columns contain exactly the detected change-point counts
    assert sum(int(r[3]) for r in rows) == bundle.segmentations["mean"].n_change_points
    assert sum(int(r[4]) for r in rows) == bundle.segmentations["meanvar"].n_change_points
    # probability blank during the conditioning lag, filled afterwards
    offset = bundle.em.probabilities.offset
    assert all(r[2] == "" for r in rows[:offset])
    assert all(r[2] != "" for r in rows[offset:])


def test_report_missing_artifact_names_stage(analyzed, tmp_path):
    config, bundle = analyzed
    partial = AnalysisBundle(
        outdir=tmp_path, manifest={"artifacts": []},
        features=bundle.features, spread=bundle.spread,
        classification=bundle.classification, em=None,
        segmentations=bundle.segmentations,
    )
    with pytest.raises(DataError, match="ms"):
        run_report(partial)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_ingest_ok(tmp_path, capsys):
    data = tmp_path / "data.csv"
    data.write_text(make_csv(synthetic_rows(10, seed=1)))
    code = main(["ingest", "--input", str(data), "--outdir", str(tmp_path / "out")])
    assert code == 0
    assert "10 weeks ingested" in capsys.readouterr().out


def test_cli_ingest_duplicate_week(tmp_path, capsys):
    rows = synthetic_rows(3, seed=2)
    rows[2][0], rows[2][1] = rows[1][0], rows[1][1]
    data = tmp_path / "dup.csv"
    data.write_text(make_csv(rows))
    code = main(["ingest", "--input", str(data), "--outdir", str(tmp_path / "out")])
    assert code == 2
    assert "duplicate week 1821/2" in capsys.readouterr().err


def test_cli_ingest_empty_file(tmp_path, capsys):
    data = tmp_path / "empty.csv"
    data.write_text(make_csv([]))
    code = main(["ingest", "--input", str(data), "--outdir", str(tmp_path / "out")])
    assert code == 2
    assert "no data rows" in capsys.readouterr().err


def test_cli_usage_error_exit_code(capsys):
    assert main(["analyze", "--stages", "som,bogus"]) == 1
    assert "unknown stages" in capsys.readouterr().err


def test_cli_full_workflow(tmp_path, capsys, monkeypatch):
    out = tmp_path / "work"
    assert main(["simulate", "--outdir", str(out), "--sim-T", "140",
                 "--sim-seed", "5"]) == 0
    config = {
        "input": str(out / "dataset.csv"),
        "som_epochs": 8, "som_rows": 3, "som_cols": 3, "n_classes": 3,
        "ms_families": ["linear", "linear"], "ms_restarts": 2,
        "ms_max_iter": 30, "ms_tol": 1e-5, "cpd_k_max": 6,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    # outdir comes from the environment when the flag is absent
    monkeypatch.setenv("BIMETAL_OUTPUT_DIR", str(out))
    assert main(["analyze", "--config", str(cfg_path)]) == 0
    captured = capsys.readouterr().out
    assert "7 artifacts" in captured
    assert main(["report", "--outdir", str(out)]) == 0
    assert (out / "aligned_series.csv").exists()


def test_cli_flag_overrides_config_file(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text(make_csv(synthetic_rows(12, seed=4)))
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"input": "nonexistent.csv", "max_gap": 1}))
    out = tmp_path / "out"
    code = main(["ingest", "--config", str(cfg_path), "--input", str(data),
                 "--outdir", str(out)])
    assert code == 0
    assert (out / "features.csv").exists()
