import os

import pytest

from contrastive_variational_ssl.cli import build_parser, main, parse_seeds
from contrastive_variational_ssl.config import load_config
from contrastive_variational_ssl.errors import InvalidValue
from contrastive_variational_ssl.gradcheck import GradCheckResult, GradientReport


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "out")


def test_parse_seeds():
    assert parse_seeds("0,1, 2") == [0, 1, 2]
    with pytest.raises(InvalidValue):
        parse_seeds("0,x")
    with pytest.raises(InvalidValue):
        parse_seeds(" , ")


def test_parser_defaults():
    args = build_parser().parse_args(["sweep", "--axis", "lr", "experiment.conf"])
    assert args.out == "results"
    assert args.jobs == 1
    assert args.seeds is None
    assert args.values is None


def test_missing_command_exits_one(capsys):
    assert main([]) == 1
    assert "a command is required" in capsys.readouterr().err


def test_pretrain_then_probe(capsys, tiny_config_file, out_dir):
    assert main(["pretrain", tiny_config_file, "--out", out_dir]) == 0
    assert sorted(os.listdir(out_dir)) == ["config.resolved", "loss_curve.csv", "model.npz"]
    assert "checkpoint:" in capsys.readouterr().out

    assert main(["probe", tiny_config_file, "--out", out_dir]) == 0
    output = capsys.readouterr().out
    assert output.splitlines()[0].split() == ["setting", "acc", "f1", "recall", "precision"]
    assert output.splitlines()[2].startswith("probe")
    assert "metrics.json" in os.listdir(out_dir)


def test_probe_untrained(capsys, tiny_config_file, out_dir):
    assert main(["probe", tiny_config_file, "--untrained", "--out", out_dir]) == 0
    assert capsys.readouterr().out.splitlines()[2].startswith("untrained")


def test_probe_without_checkpoint_fails(capsys, tiny_config_file, out_dir):
    assert main(["probe", tiny_config_file, "--out", out_dir]) == 1
    assert "Error: cannot read checkpoint" in capsys.readouterr().err


def test_missing_config_exits_one(capsys, tmp_path):
    assert main(["pretrain", str(tmp_path / "missing.conf")]) == 1
    assert "config file not found" in capsys.readouterr().err


def test_invalid_config_exits_one(capsys, tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("optimzer.lr = 1\n", encoding="utf-8")
    assert main(["pretrain", str(path)]) == 1
    assert "optimzer.lr" in capsys.readouterr().err


def test_unexpected_error_exits_two(mocker, capsys, tiny_config_file, out_dir):
    mocker.patch("contrastive_variational_ssl.cli.prepare_data", side_effect=RuntimeError("boom"))
    assert main(["pretrain", tiny_config_file, "--out", out_dir]) == 2
    assert "boom" in capsys.readouterr().err


def test_sweep_then_report(capsys, tiny_config_file, out_dir):
    argv = ["sweep", "--axis", "lr", "--values", "0.002,0.001", tiny_config_file, "--seeds", "0,1", "--out", out_dir]
    assert main(argv) == 0
    table = capsys.readouterr().out
    assert table.startswith("Seed means")
    assert sorted(os.listdir(out_dir)) == ["cells", "config.resolved", "results.csv", "results.txt", "runs.csv"]
    assert len(os.listdir(os.path.join(out_dir, "cells"))) == 4
    with open(os.path.join(out_dir, "config.resolved"), encoding="utf-8") as f:
        assert f.read() == load_config(tiny_config_file).to_text()

    assert main(["report", out_dir]) == 0
    assert capsys.readouterr().out == table


def test_sweep_rejects_non_numeric_rates(capsys, tiny_config_file, out_dir):
    assert main(["sweep", "--axis", "lr", "--values", "fast", tiny_config_file, "--out", out_dir]) == 1


def test_ablate_uses_seed_flag(mocker, capsys, tiny_config_file, out_dir):
    run_ablation = mocker.patch("contrastive_variational_ssl.cli.run_ablation")
    emit_table = mocker.patch("contrastive_variational_ssl.cli.emit_table")
    table_path = os.path.join(str(os.path.dirname(tiny_config_file)), "table.txt")
    with open(table_path, "w", encoding="utf-8") as f:
        f.write("table\n")
    emit_table.return_value = {"table": table_path}

    assert main(["ablate", tiny_config_file, "--seed", "3", "--jobs", "2", "--out", out_dir]) == 0
    config, seeds, out, jobs = run_ablation.call_args.args
    assert config.run.seed == 3
    assert seeds == [3]
    assert (out, jobs) == (out_dir, 2)
    assert capsys.readouterr().out == "table\n"


def test_gradcheck_exit_codes(mocker, capsys):
    assert main(["gradcheck"]) == 0
    assert "passed" in capsys.readouterr().out

    failing = GradientReport([GradCheckResult("broken", 0.5, 1e-4)], 1e-4)
    mocker.patch("contrastive_variational_ssl.cli.run_gradient_suite", return_value=failing)
    assert main(["gradcheck"]) == 1
    assert "FAIL" in capsys.readouterr().out
