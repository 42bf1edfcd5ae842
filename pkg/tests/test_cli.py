import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mno import config, io, training
from mno.cli import main
from mno.operator import load_checkpoint

TINY = {"data": {"n_ic": 8, "n_ens": 4, "n_x": 16, "test_n_ic": 4},
        "model": {"width": 8, "modes": 4, "layers": 1, "rank": 2},
        "train": {"epochs": 3, "warmup_epochs": 1, "batch": 4}}


def write_config(tmp_path, name="c.json", **sections):
    doc = json.loads(json.dumps(TINY))
    for key, val in sections.items():
        if isinstance(val, dict) and key in doc:
            doc[key].update(val)
        else:
            doc[key] = val
    doc.setdefault("out", str(tmp_path / "run"))
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path), doc["out"]


def run(*argv):
    return main([str(a) for a in argv])


# ------------------------------------------------------------------ config

def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(config.ConfigError, match="widht"):
        config.resolve({"model": {"widht": 4}})
    with pytest.raises(config.ConfigError, match="top-level"):
        config.resolve({"modle": {}})
    with pytest.raises(config.ConfigError, match="profile"):
        config.resolve({"profile": "gpu"})
    with pytest.raises(config.ConfigError, match="n_x"):
        config.resolve({"data": {"n_x": 4}})
    with pytest.raises(config.ConfigError, match="metric"):
        config.resolve({"evaluate": {"metrics": ["crps"]}})


def test_profiles_carry_documented_defaults():
    paper = config.resolve({"profile": "paper"})
    assert (paper["model"]["width"], paper["model"]["modes"], paper["train"]["epochs"]) == (48, 16, 120)
    assert paper["train"]["lr"] == 1e-3 and paper["data"]["n_ens"] == 192
    desk = config.resolve({})
    assert desk["data"]["n_ic"] == 64 and desk["data"]["n_ens"] == 32 and desk["data"]["n_x"] == 32


def test_bad_config_file_exits_1(tmp_path):
    path, _ = write_config(tmp_path, model={"widht": 3})
    assert run("generate", "--config", path) == 1
    assert run("generate", "--config", tmp_path / "missing.json") == 1
    assert run("frobnicate") == 1


# ---------------------------------------------------------------- generate

def test_generate_is_deterministic_and_guarded(tmp_path, capsys):
    path, out = write_config(tmp_path)
    assert run("generate", "--config", path) == 0
    first = capsys.readouterr().out
    h = io.file_hash(f"{out}/train.mnods")
    assert h in first
    assert run("generate", "--config", path) == 1
    assert run("generate", "--config", path, "--force") == 0
    assert io.file_hash(f"{out}/train.mnods") == h
    assert io.read_dataset(f"{out}/train.mnods").n_ic == 8
    resolved = json.loads((tmp_path / "run" / "config.resolved.json").read_text())
    assert resolved["model"]["width"] == 8 and resolved["profile"] == "desk"


def test_seed_flag_changes_data(tmp_path):
    path, out = write_config(tmp_path)
    run("generate", "--config", path)
    run("generate", "--config", path, "--seed", 5, "--out", tmp_path / "other")
    assert io.file_hash(f"{out}/train.mnods") != io.file_hash(tmp_path / "other" / "train.mnods")


# ------------------------------------------------------------------- train

def test_zero_epochs_checkpoint_is_initialization(tmp_path):
    path, out = write_config(tmp_path, train={"epochs": 0, "warmup_epochs": 0})
    run("generate", "--config", path)
    assert run("train", "--config", path) == 0
    ck = load_checkpoint(f"{out}/model.mnock")
    init = config.model_settings(config.load(path)).build(1, 0.5, 0)
    assert all(np.array_equal(ck.model.params[k], init.params[k]) for k in init.params)


def test_resume_restores_optimizer_and_matches_full_run(tmp_path):
    full, out_full = write_config(tmp_path, "full.json", out=str(tmp_path / "full"), train={"epochs": 4})
    half, out_half = write_config(tmp_path, "half.json", out=str(tmp_path / "half"), train={"epochs": 2})
    rest, _ = write_config(tmp_path, "rest.json", out=str(tmp_path / "half"), train={"epochs": 4})
    run("generate", "--config", full)
    data = f"{out_full}/train.mnods"
    assert run("train", "--config", full) == 0
    assert run("train", "--config", half, "--dataset", data) == 0
    step_half = load_checkpoint(f"{out_half}/model.mnock").optimizer.step_count
    assert run("train", "--config", rest, "--dataset", data, "--resume", f"{out_half}/model.mnock") == 0
    a, b = load_checkpoint(f"{out_full}/model.mnock"), load_checkpoint(f"{out_half}/model.mnock")
    assert b.optimizer.step_count == a.optimizer.step_count == 2 * step_half
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)
    epochs = [json.loads(s)["epoch"] for s in open(f"{out_half}/train_log.jsonl")]
    assert epochs == [0, 1, 2, 3]


def test_divergence_exits_2_and_keeps_last_good(tmp_path, monkeypatch):
    path, out = write_config(tmp_path)
    run("generate", "--config", path)
    monkeypatch.setattr(training, "DIVERGENCE_LIMIT", -1.0)
    assert run("train", "--config", path) == 2
    assert load_checkpoint(f"{out}/last_good.mnock").model.rank == 2


def test_train_rejects_modes_beyond_grid(tmp_path):
    path, _ = write_config(tmp_path, model={"modes": 12})
    run("generate", "--config", path)
    assert run("train", "--config", path) == 1


# ---------------------------------------------------------------- evaluate

def test_evaluate_roles_and_zero_shot(tmp_path):
    path, out = write_config(tmp_path)
    fine, fine_out = write_config(tmp_path, "fine.json", out=str(tmp_path / "fine"), data={"n_x": 32})
    run("generate", "--config", path)
    run("generate", "--config", fine)
    run("train", "--config", path)
    assert run("evaluate", "--config", path, "--role", "test") == 0
    assert run("evaluate", "--config", path, "--role", "train", "--dataset", f"{out}/train.mnods") == 0
    assert run("evaluate", "--config", path, "--role", "fine", "--dataset", f"{fine_out}/test.mnods",
               "--metrics", "mean_rmse,variance_rmse,exceedance,cov_frobenius_rel,inference_ms") == 0
    test = json.loads((tmp_path / "run" / "eval_test.json").read_text())
    fine_doc = json.loads((tmp_path / "run" / "eval_fine.json").read_text())
    assert test["provenance"]["role"] == "test" and not test["provenance"]["zero_shot"]
    assert fine_doc["provenance"]["zero_shot"] and fine_doc["provenance"]["n_x"] == 32
    assert "inference_ms_per_condition" in fine_doc["timings"]
    names = {m["name"] for m in test["metrics"]}
    assert {"mean_rmse", "variance_rmse", "empirical_w2", "zero_variance_w2"} <= names
    rows = list(csv.DictReader(open(tmp_path / "run" / "eval_fine_metrics.csv")))
    assert {"exceedance_union_bound", "exceedance_max_point", "cov_frobenius_rel"} <= {r["name"] for r in rows}


def test_evaluate_unknown_metric_lists_valid_names(tmp_path, capsys):
    path, _ = write_config(tmp_path)
    run("generate", "--config", path)
    run("train", "--config", path)
    assert run("evaluate", "--config", path, "--metrics", "crps") == 1
    assert "mean_rmse" in capsys.readouterr().err


def test_evaluate_bundle_hash_is_reproducible(tmp_path):
    path, out = write_config(tmp_path)
    run("generate", "--config", path)
    run("train", "--config", path)
    run("evaluate", "--config", path)
    a = json.loads((tmp_path / "run" / "eval_test.json").read_text())
    run("evaluate", "--config", path, "--force")
    b = json.loads((tmp_path / "run" / "eval_test.json").read_text())
    assert a["content_hash"] == b["content_hash"] and a["metrics"] == b["metrics"]


def test_logvol_variance_slope_matches_2h(tmp_path):
    path, out = write_config(tmp_path, data={"kind": "logvol", "n_ic": 4, "n_ens": 64, "test_n_ic": 64,
                                             "n_x": 32, "hurst": 0.1, "n_t": 32})
    run("generate", "--config", path)
    run("train", "--config", path)
    assert run("evaluate", "--config", path, "--metrics", "variance_slope") == 0
    doc = json.loads((tmp_path / "run" / "eval_test.json").read_text())
    data = next(m for m in doc["metrics"] if m["name"] == "variance_slope_data")
    assert abs(data["value"] - 0.2) < 0.03


# --------------------------------------------------------- diagnose/ablate

def test_diagnose_residual_centering_on_pure_noise(tmp_path):
    path, out = write_config(tmp_path, data={"kind": "ou", "n_ic": 64, "n_ens": 16, "test_n_ic": 16,
                                             "spec": {"drift": False, "sigma": 0.5}},
                             model={"width": 8, "modes": 4, "layers": 2, "rank": 4},
                             train={"epochs": 60, "warmup_epochs": 10, "batch": 16})
    assert run("diagnose", "residual_centering", "--config", path) == 0
    report = json.loads((tmp_path / "run" / "diagnose_residual_centering.json").read_text())["reports"][0]
    assert report["passed"] and abs(report["evidence"]["variance_slope"] - 1) < 0.2


def test_diagnose_mirror_reports_hurst_fields(tmp_path):
    path, out = write_config(tmp_path, diagnose={"mirror_n_ic": 32, "mirror_n_ens": 8, "n_paths": 20,
                                                 "n_ar_steps": 16})
    code = run("diagnose", "martingale_mirror", "--H", 0.1, "--config", path)
    assert code in (0, 3)
    ev = json.loads((tmp_path / "run" / "diagnose_martingale_mirror.json").read_text())["reports"][0]["evidence"]
    assert {"hurst_ar", "hurst_data", "w2_oneshot"} <= set(ev) and ev["hurst_true"] == 0.1
    assert (tmp_path / "run" / "diagnose_martingale_mirror_evidence.csv").exists()


def test_diagnose_unknown_name_exits_1(tmp_path):
    path, _ = write_config(tmp_path)
    assert run("diagnose", "nonsense", "--config", path) == 1


def test_ablate_rank_grid_writes_nine_rows(tmp_path):
    path, out = write_config(tmp_path, train={"epochs": 2, "warmup_epochs": 1})
    assert run("ablate", "rank", "--grid", "1,4,16", "--seeds", 3, "--config", path) == 0
    rows = list(csv.DictReader(open(tmp_path / "run" / "ablate_rank_cells.csv")))
    assert len(rows) == 9 and {r["cell"] for r in rows} == {"1", "4", "16"}
    assert run("ablate", "loss", "--grid", "full,no_gate", "--config", path, "--force") == 1


def test_threads_env_caps_blas():
    env = {k: v for k, v in os.environ.items() if not k.endswith("_NUM_THREADS")}
    env["MNO_THREADS"] = "3"
    out = subprocess.run([sys.executable, "-c", "import os, mno.cli; print(os.environ['OPENBLAS_NUM_THREADS'])"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "3"
