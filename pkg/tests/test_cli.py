import argparse
import json

import pytest

from tdcae import cli


def run_cli(*argv):
    return cli.main(list(argv))


def namespace(**kw):
    return argparse.Namespace(**kw)


# --- seeding / config plumbing -------------------------------------------------------

def test_component_seed_deterministic_and_distinct():
    a = cli.component_seed(0, "training")
    assert a == cli.component_seed(0, "training")
    assert a != cli.component_seed(1, "training")
    assert a != cli.component_seed(0, "engine-split")
    assert 0 <= a < 2**32


def test_training_config_ini_and_flag_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[training]\nepochs = 7\nalpha = 5.0\nstop_gradient = true\n")
    cp = cli.load_config(str(ini))
    args = namespace(epochs=None, alpha=2.5, latent_dim=None, stop_gradient=False)
    cfg = cli.training_config(cp, args)
    assert cfg.epochs == 7          # file value
    assert cfg.alpha == 2.5         # flag beats file
    assert cfg.stop_gradient is True
    assert cfg.batch_size == 32     # untouched default


def test_detector_config_from_ini(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[detector]\nupper_percentile = 90\nvote_threshold = 3\n")
    cfg = cli.detector_config(cli.load_config(str(ini)), namespace(latent_dim=None))
    assert cfg.upper_percentile == 90.0 and cfg.vote_threshold == 3
    assert cfg.lower_percentile == 9.0


def test_seed_list_sources(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseeds = 4, 5 6\n")
    cp = cli.load_config(str(ini))
    assert cli.seed_list(cp, namespace(seeds=None, seed=None)) == [4, 5, 6]
    assert cli.seed_list(cp, namespace(seeds="1,2", seed=None)) == [1, 2]
    empty = cli.load_config(None)
    assert cli.seed_list(empty, namespace(seeds=None, seed=9)) == [9]
    assert cli.seed_list(empty, namespace(seeds=None, seed=None)) == [0]


def test_missing_config_file_fails(tmp_path, capsys):
    assert run_cli("simulate", "--config", str(tmp_path / "nope.ini")) == 1
    assert "config file not found" in capsys.readouterr().err


# --- simulate -------------------------------------------------------------------------

def simulate_ini(tmp_path, extra=""):
    ini = tmp_path / "sim.ini"
    ini.write_text(f"[pendulum]\nt_end = 30.0\n{extra}")
    return str(ini)


def test_simulate_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli("simulate", "--config", simulate_ini(tmp_path), "--out", str(out))
    assert code == 0
    assert (out / "trajectory.csv").is_file()
    payload = json.loads((out / "box_counting.json").read_text())
    assert set(payload) >= {"slope", "fit_residual", "counts", "epsilons", "window_steps"}
    assert payload["slope"] > 0
    assert "slope" in capsys.readouterr().out


def test_simulate_reruns_byte_identical(tmp_path):
    ini = simulate_ini(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("simulate", "--config", ini, "--out", str(a)) == 0
    assert run_cli("simulate", "--config", ini, "--out", str(b)) == 0
    for name in ("trajectory.csv", "box_counting.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_no_drift_changes_trajectory(tmp_path):
    ini = simulate_ini(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("simulate", "--config", ini, "--out", str(a)) == 0
    assert run_cli("simulate", "--config", ini, "--out", str(b), "--no-drift") == 0
    assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()


def test_simulate_invalid_config_fails_cleanly(tmp_path, capsys):
    ini = simulate_ini(tmp_path, extra="dt = -0.5\n")
    assert run_cli("simulate", "--config", ini, "--out", str(tmp_path / "o")) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_flag_exits_with_usage_error():
    with pytest.raises(SystemExit) as exc:
        run_cli("simulate", "--frobnicate")
    assert exc.value.code == 2


# --- train / detect / diagnose / report on the synthetic dataset ------------------------

@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One tiny end-to-end CLI run shared by the artifact tests."""
    out = tmp_path_factory.mktemp("pipeline")
    code = run_cli("train", "--out", str(out), "--seed", "0",
                   "--seeds", "0", "--epochs", "2")
    assert code == 0
    return out


def test_train_writes_artifacts(pipeline_dir):
    assert (pipeline_dir / "checkpoint_seed0.json").is_file()
    loss_lines = (pipeline_dir / "loss_seed0.csv").read_text().splitlines()
    assert loss_lines[0] == "epoch,rec_loss,tdc_loss,val_rec_loss,val_tdc_loss"
    assert len(loss_lines) == 3  # header + 2 epochs
    summary = json.loads((pipeline_dir / "train_summary.json").read_text())
    assert summary["runs"][0]["seed"] == 0
    assert summary["n_engines_train"] + summary["n_engines_test"] == 12


def test_train_reruns_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("train", "--out", str(out), "--seed", "3",
                       "--seeds", "3", "--epochs", "2") == 0
    for name in ("checkpoint_seed3.json", "loss_seed3.csv", "train_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_detect_scores_test_engines(pipeline_dir, tmp_path, capsys):
    out = tmp_path / "det"
    code = run_cli("detect", "--out", str(out), "--seed", "0",
                   "--checkpoint", str(pipeline_dir / "checkpoint_seed0.json"))
    assert code == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["engines"] == "test"
    metrics = payload["metrics"]
    assert metrics["tp"] + metrics["fp"] + metrics["tn"] + metrics["fn"] > 0
    assert payload["mac"]["weight_macs"] == 2688
    assert len(payload["thresholds"]["upper"]) == 8
    assert (out / "detections.csv").read_text().startswith("unit,cycle,votes,label,truth")
    assert "f1" in capsys.readouterr().out


def test_detect_on_training_engines(pipeline_dir, tmp_path):
    out = tmp_path / "det"
    code = run_cli("detect", "--out", str(out), "--seed", "0", "--engines", "train",
                   "--checkpoint", str(pipeline_dir / "checkpoint_seed0.json"))
    assert code == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["engines"] == "train"
    assert payload["metrics"]["n_engines"] == 10


def test_detect_latent_dim_mismatch_fails(pipeline_dir, tmp_path, capsys):
    code = run_cli("detect", "--out", str(tmp_path / "o"), "--seed", "0",
                   "--checkpoint", str(pipeline_dir / "checkpoint_seed0.json"),
                   "--latent-dim", "4")
    assert code == 1
    assert "latent dim" in capsys.readouterr().err


def test_detect_missing_checkpoint_fails(tmp_path, capsys):
    code = run_cli("detect", "--out", str(tmp_path / "o"),
                   "--checkpoint", str(tmp_path / "missing.json"))
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_train_named_subset_needs_dataset_path(tmp_path, capsys):
    code = run_cli("train", "--out", str(tmp_path / "o"), "--subset", "FD001",
                   "--epochs", "1")
    assert code == 1
    assert "dataset" in capsys.readouterr().err


def test_diagnose_writes_report(pipeline_dir, tmp_path, capsys):
    out = tmp_path / "diag"
    code = run_cli("diagnose", "--out", str(out), "--seed", "0",
                   "--checkpoint", str(pipeline_dir / "checkpoint_seed0.json"))
    assert code == 0
    payload = json.loads((out / "diagnostics.json").read_text())
    assert set(payload) == {"two_nn", "recommended_latent_dim", "jacobian_rank",
                            "injectivity", "eta_train", "rho_test"}
    assert payload["two_nn"]["value"] > 0
    assert 0.0 <= payload["jacobian_rank"]["full_rank_fraction"] <= 1.0
    assert len(payload["eta_train"]) == 4
    assert "two-NN" in capsys.readouterr().out


def test_report_aggregates_metrics(tmp_path, capsys):
    base = {"accuracy": 0.9, "precision": 0.8, "recall": 0.7,
            "specificity": 0.95, "f1": 0.75, "cdr": 1.0}
    other = {k: v - 0.1 for k, v in base.items()}
    for name, metrics in (("m1.json", base), ("m2.json", other)):
        (tmp_path / name).write_text(json.dumps({"metrics": metrics}))
    out = tmp_path / "rep"
    code = run_cli("report", "--out", str(out),
                   str(tmp_path / "m1.json"), str(tmp_path / "m2.json"))
    assert code == 0
    table = json.loads((out / "report.json").read_text())
    assert table["n_runs"] == 2
    assert table["metrics"]["accuracy"]["mean"] == pytest.approx(0.85)
    assert table["metrics"]["f1"]["values"] == [0.75, 0.65]
    assert "accuracy" in capsys.readouterr().out
