import json

import pytest

from fedsim import cli
from fedsim.report import read_csv_table


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert cli.main(["generate", "--out", str(out), "--max-samples", "400", "--seed", "3"]) == 0
    return out


def _status(capsys):
    out, err = capsys.readouterr()
    lines = [ln for ln in (out + err).splitlines() if ln.startswith("{")]
    return json.loads(lines[-1])


def test_generate_writes_csvs_and_manifest(dataset):
    files = sorted(p.name for p in dataset.glob("*.csv"))
    assert len(files) == 13
    assert (dataset / "manifest.json").exists()


def test_generate_needs_out(capsys):
    assert cli.main(["generate"]) == cli.EXIT_USAGE
    assert "--out is required" in _status(capsys)["error"]


def test_generate_unknown_preset(tmp_path, capsys):
    assert cli.main(["generate", "--out", str(tmp_path / "x"), "--preset", "nope"]) == cli.EXIT_USAGE
    assert _status(capsys)["status"] == "error"


def test_run_and_report(dataset, tmp_path, capsys):
    code = cli.main(["run", "--strategy", "fedavg", "--data", str(dataset), "--rounds", "2",
                     "--out", str(tmp_path / "r"), "--local-lr", "0.05"])
    assert code == 0
    status = _status(capsys)
    assert status["rounds"] == 2 and status["stop_reason"] == "round_cap"
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["config"]["local_lr"] == 0.05
    assert cli.main(["report", "--run", str(tmp_path / "r"), "--format", "json"]) == 0
    report_dir = _status(capsys)["report"]
    assert json.loads(open(f"{report_dir}/selection.json").read())[-1]["client"] == "mean"


def test_global_flags_after_subcommand(dataset, tmp_path, capsys):
    code = cli.main(["--seed", "4", "run", "--strategy", "fedprox", "--data", str(dataset),
                     "--rounds", "1", "--out", str(tmp_path / "a"), "--threads", "2"])
    assert code == 0
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 4


def test_run_usage_errors(dataset, tmp_path, capsys):
    assert cli.main(["run", "--strategy", "fedavg", "--data", str(dataset)]) == cli.EXIT_USAGE
    assert "--rounds is required" in _status(capsys)["error"]
    assert cli.main(["run", "--strategy", "fedavg", "--data", str(tmp_path / "none"),
                     "--rounds", "1"]) == cli.EXIT_USAGE
    assert "cannot load dataset" in _status(capsys)["error"]
    assert cli.main(["run", "--strategy", "fedavg", "--data", str(dataset), "--rounds", "1",
                     "--selection-ratio", "2"]) == cli.EXIT_USAGE
    assert "invalid config" in _status(capsys)["error"]
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--strategy", "fedfoo", "--data", str(dataset), "--rounds", "1"])
    assert exc.value.code == cli.EXIT_USAGE


def test_config_file_is_overridden_by_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"local_lr": 0.3, "batch_size": 64}))
    args = cli.build_parser().parse_args(["run", "--strategy", "fedavg", "--data", "d", "--rounds", "1",
                                          "--config", str(cfg), "--batch-size", "32"])
    config = cli.build_config(args)
    assert config.local_lr == 0.3 and config.batch_size == 32


def test_parse_seeds():
    assert cli.parse_seeds("1..3,7") == [1, 2, 3, 7]
    with pytest.raises(Exception):
        cli.parse_seeds("5..1")


def test_threads_env(monkeypatch, dataset, tmp_path, capsys):
    monkeypatch.setenv("FEDSIM_THREADS", "zero")
    assert cli.main(["run", "--strategy", "fedavg", "--data", str(dataset), "--rounds", "1",
                     "--out", str(tmp_path / "t")]) == cli.EXIT_USAGE
    assert "FEDSIM_THREADS" in _status(capsys)["error"]


def test_compare_small(dataset, tmp_path, capsys):
    code = cli.main(["compare", "--data", str(dataset), "--seeds", "1", "--flad-cap", "3",
                     "--flad-patience", "2", "--out", str(tmp_path / "cmp")])
    assert code == 0
    summary = read_csv_table(tmp_path / "cmp" / "summary.csv")
    assert summary.column("strategy") == list(cli.COMPARE_ORDER)
    assert len(set(summary.column("rounds"))) == 1
    assert (tmp_path / "cmp" / "seed1" / "scaffold" / "bandwidth.csv").exists()
    merged = read_csv_table(tmp_path / "cmp" / "bandwidth.csv")
    assert merged.columns[:2] == ["seed", "strategy"]
