import json
from pathlib import Path

import pytest

from drop_bottleneck.api.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TINY = [
    "--override", "env.synthetic={\"n_train\": 200, \"n_test\": 50, \"d\": 6, \"k_relevant\": 2}",
    "--override", "train.rounds=1",
    "--override", "train.epochs=1",
    "--override", "train.discriminator_epochs=0",
    "--override", "model.n_dup=2",
    "--override", "output.plots=false",
]


def stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_train_eval_plot(tmp_path, capsys):
    out = tmp_path / "fi"
    code = main(["train", "--config", str(CONFIGS / "feature_identification.json"), "--seed", "3",
                 "--out", str(out)] + TINY)
    assert code == EXIT_OK
    payload = stdout_json(capsys)
    assert payload["out"] == str(out)
    assert "relevance_accuracy" in payload["summary"]
    assert json.loads((out / "config.json").read_text())["experiment"]["seed"] == 3

    assert main(["eval", "--out", str(out)]) == EXIT_OK
    evaluated = stdout_json(capsys)
    assert "drop_probabilities" not in evaluated["model.params"]
    assert evaluated["model.params"]["retained_dims"] == payload["summary"]["retained_dims"]

    assert main(["plot", "--out", str(out)]) == EXIT_OK
    assert (out / "p_histogram.png").exists()


def test_sweep(tmp_path, capsys):
    code = main(["sweep", "--config", str(CONFIGS / "feature_identification.json"), "--out", str(tmp_path)]
                + TINY + ["--override", "experiment.beta_grid=[0.01, 0.1]", "--override", "experiment.seeds=[0]"])
    assert code == EXIT_OK
    assert stdout_json(capsys)["summary"]["runs"] == 2
    assert (tmp_path / "beta=0.1" / "seed=0" / "report.json").exists()


@pytest.mark.parametrize("args", [
    ["--config", "missing.json"],
    ["--config", str(CONFIGS / "feature_identification.json"), "--override", "model.temperature=0"],
    ["--config", str(CONFIGS / "feature_identification.json"), "--override", "no_equals_sign"],
])
def test_config_errors_exit_2(tmp_path, capsys, args):
    assert main(["train", "--out", str(tmp_path)] + args) == EXIT_CONFIG
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "ConfigError"
    assert error["message"]


def test_missing_run_exit_1(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path)]) == EXIT_FAILURE
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "MissingRunError"


def test_nothing_to_plot_exit_1(tmp_path, capsys):
    assert main(["plot", "--out", str(tmp_path)]) == EXIT_FAILURE
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "MissingMetricsError"


def test_verb_required():
    with pytest.raises(SystemExit):
        main([])
