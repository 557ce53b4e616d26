from __future__ import annotations

import json

import pytest

from cotanneal import (
    AdapterError,
    AnnealSchedule,
    FixtureError,
    InputError,
    ModelSpec,
    PipelineConfig,
    ProviderError,
    StageError,
    TransportError,
    ValidationError,
)
from cotanneal import cli
from cotanneal.jsonio import read_json
from cotanneal.pipeline import (
    STAGE_HUBO,
    STAGE_POOL,
    STAGE_RESULT,
    STAGE_SAMPLES,
    STAGE_STABILITY,
    STAGE_TRACES,
)

STUB_CHAT = ModelSpec(provider_id="stub", model_name="stub-chat")
STUB_ANSWER = ModelSpec(provider_id="stub", model_name="stub-answer")
REMOTE_CHAT = ModelSpec(
    provider_id="openai-compat",
    model_name="remote-chat",
    endpoint="https://api.example.test/v1",
    credential_ref="EXAMPLE_API_KEY",
)


def make_config(tmp_path, **overrides):
    fields = dict(
        sampling_plan=((STUB_CHAT, 4),),
        answer_model=STUB_ANSWER,
        n_samples=4,
        solver_choice="brute-force",
        schedule=AnnealSchedule(sweeps=100, restarts=4),
        seed=11,
        energy_table=(("stub-chat", 3.0e-4), ("stub-answer", 3.0e-4),
                      ("remote-chat", 3.0e-4)),
    )
    fields.update(overrides)
    config = PipelineConfig(**fields)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config.to_dict()), encoding="utf-8")
    return path


def make_dataset(tmp_path, n=2):
    rows = [
        {
            "id": f"q{i}",
            "question": f"Does claim {i} follow from the stated premise?",
            "options": [["Yes", "it follows"], ["No", "it does not follow"]],
            "target": "Yes",
        }
        for i in range(n)
    ]
    path = tmp_path / "dataset.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def run_dirs(out_dir, stage_file):
    return sorted(p for p in out_dir.iterdir()
                  if p.is_dir() and (p / stage_file).exists())


# -- stagewise flow --------------------------------------------------------


def test_stagewise_flow(tmp_path, capsys):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path)
    out = tmp_path / "out"

    assert cli.main(["sample", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(out)]) == 0
    assert "sampled 2 questions" in capsys.readouterr().out
    assert len(run_dirs(out, STAGE_TRACES)) == 2

    assert cli.main(["build", "--config", str(config), "--out", str(out)]) == 0
    assert len(run_dirs(out, STAGE_POOL)) == 2
    assert len(run_dirs(out, STAGE_HUBO)) == 2

    assert cli.main(["solve", "--config", str(config), "--out", str(out)]) == 0
    assert "brute-force" in capsys.readouterr().out
    assert len(run_dirs(out, STAGE_SAMPLES)) == 2

    assert cli.main(["rank", "--config", str(config), "--out", str(out)]) == 0
    for run_dir in run_dirs(out, STAGE_STABILITY):
        report = read_json(run_dir / STAGE_STABILITY)
        assert report["selected"], "expected at least one stable reason"


def test_solver_override_recorded_in_artifact(tmp_path):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path, n=1)
    out = tmp_path / "out"
    cli.main(["sample", "--config", str(config), "--dataset", str(dataset),
              "--out", str(out)])
    cli.main(["build", "--config", str(config), "--out", str(out)])
    assert cli.main(["solve", "--config", str(config), "--out", str(out),
                     "--solver", "sa-qubo"]) == 0
    (run_dir,) = run_dirs(out, STAGE_SAMPLES)
    assert read_json(run_dir / STAGE_SAMPLES)["solver_id"] == "sa-qubo"


def test_tau_and_quantile_overrides(tmp_path):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path, n=1)
    out = tmp_path / "out"
    cli.main(["sample", "--config", str(config), "--dataset", str(dataset),
              "--out", str(out)])
    cli.main(["build", "--config", str(config), "--out", str(out)])
    cli.main(["solve", "--config", str(config), "--out", str(out)])
    assert cli.main(["rank", "--config", str(config), "--out", str(out),
                     "--tau", "0.9", "--quantile", "0.5"]) == 0
    (run_dir,) = run_dirs(out, STAGE_STABILITY)
    report = read_json(run_dir / STAGE_STABILITY)
    assert report["tau"] == 0.9
    assert report["quantile"] == 0.5


def test_seed_override_changes_run_directory(tmp_path):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path, n=1)
    out = tmp_path / "out"
    cli.main(["sample", "--config", str(config), "--dataset", str(dataset),
              "--out", str(out)])
    cli.main(["sample", "--config", str(config), "--dataset", str(dataset),
              "--out", str(out), "--seed", "999"])
    # run directory names embed the effective config hash
    assert len(run_dirs(out, STAGE_TRACES)) == 2


# -- one-shot commands -----------------------------------------------------


def test_run_command(tmp_path, capsys):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(out)]) == 0
    assert "accuracy" in capsys.readouterr().out
    assert (out / "summary.json").exists()
    assert len(run_dirs(out, STAGE_RESULT)) == 2


def test_bench_command_writes_report(tmp_path, capsys):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["bench", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(out), "--workers", "2"]) == 0
    stdout = capsys.readouterr().out
    assert "accuracy" in stdout and "Wh" in stdout
    report_dir = out / "report"
    assert (report_dir / "summary.json").exists()
    assert (report_dir / "results.csv").exists()
    assert len(list(report_dir.glob("*_frequencies.svg"))) == 2


def test_report_command_from_run_artifacts(tmp_path, capsys):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path, n=1)
    out = tmp_path / "out"
    cli.main(["run", "--config", str(config), "--dataset", str(dataset),
              "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["report", "--out", str(out), "--tau", "0.5"]) == 0
    assert "report" in capsys.readouterr().out
    assert (out / "report" / "results.csv").exists()


# -- exit codes ------------------------------------------------------------


def test_usage_errors_exit_validation(tmp_path):
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["sample"]) == 1  # missing required arguments
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path)
    assert cli.main(["run", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(tmp_path / "o"), "--solver", "bogus"]) == 1


def test_bad_config_exits_validation(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"n_samples": 4}), encoding="utf-8")
    dataset = make_dataset(tmp_path)
    code = cli.main(["run", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_bad_dataset_exits_validation(tmp_path):
    config = make_config(tmp_path)
    dataset = tmp_path / "dataset.jsonl"
    dataset.write_text("{not json\n", encoding="utf-8")
    assert cli.main(["run", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(tmp_path / "o")]) == 1


def test_missing_out_dir_exits_validation(tmp_path):
    config = make_config(tmp_path)
    assert cli.main(["solve", "--config", str(config),
                     "--out", str(tmp_path / "missing")]) == 1


def test_empty_out_dir_is_not_an_error(tmp_path, capsys):
    config = make_config(tmp_path)
    out = tmp_path / "out"
    out.mkdir()
    assert cli.main(["solve", "--config", str(config), "--out", str(out)]) == 0
    assert "solved 0 questions" in capsys.readouterr().out


def test_missing_cassette_dir_exits_fixture(tmp_path):
    config = make_config(tmp_path)
    dataset = make_dataset(tmp_path)
    assert cli.main(["sample", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(tmp_path / "o"),
                     "--replay", str(tmp_path / "no-cassettes")]) == 2


def test_replay_miss_exits_fixture(tmp_path, capsys):
    # remote model plus an empty cassette store: strict replay must fail
    # before any transport is attempted
    config = make_config(tmp_path, sampling_plan=((REMOTE_CHAT, 4),))
    dataset = make_dataset(tmp_path, n=1)
    cassettes = tmp_path / "cassettes"
    cassettes.mkdir()
    code = cli.main(["sample", "--config", str(config), "--dataset", str(dataset),
                     "--out", str(tmp_path / "o"), "--replay", str(cassettes)])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_internal_error_exits_four(tmp_path, monkeypatch, capsys):
    def boom(args):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli._COMMANDS, "rank", boom)
    config = make_config(tmp_path)
    code = cli.main(["rank", "--config", str(config), "--out", str(tmp_path)])
    assert code == 4
    assert "internal error" in capsys.readouterr().err


@pytest.mark.parametrize("exc,code", [
    (FixtureError("miss"), 2),
    (TransportError("down", attempts=3), 3),
    (ProviderError("bad payload"), 3),
    (AdapterError("bad response"), 3),
    (InputError("bad shape"), 1),
    (ValidationError("bad record"), 1),
    (RuntimeError("bug"), 4),
])
def test_exit_code_mapping(exc, code):
    assert cli._exit_code_for(exc) == code


def test_exit_code_follows_cause_chain():
    assert cli._exit_code_for(StageError("sample", FixtureError("miss"))) == 2
    assert cli._exit_code_for(StageError("solve", ProviderError("err"))) == 3
    assert cli._exit_code_for(StageError("build", RuntimeError("bug"))) == 4
