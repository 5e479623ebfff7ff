import json
import shutil
import warnings
from pathlib import Path

import pytest

from hybridsched.cli import build_parser, main
from hybridsched.errors import ConfigError
from hybridsched.experiments import apply_overrides, load_config, parse_config, run_experiment

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "golden"


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def table_config(tmp_path, **extra):
    shutil.copy(CONFIGS / "table_8x3.txt", tmp_path / "table_8x3.txt")
    data = {"experiment": "solve", "system": {"system": "table", "horizon": 12, "table_file": "table_8x3.txt"}}
    data.update(extra)
    return data


# ---------------------------------------------------------------- parsing


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_parse_cleanly(path):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        cfg = load_config(path)
    assert cfg.repetitions >= 1


def test_negative_dt_message(tmp_path):
    path = write_config(tmp_path, {"experiment": "solve", "system": {"dt": -0.1}})
    with pytest.raises(ConfigError, match="dt must be positive") as err:
        load_config(path)
    assert err.value.location == "system.dt"


def test_unknown_key_named(tmp_path):
    data = {"experiment": "compare", "baselines": [{"method": "mppi", "temperture": 0.1}]}
    with pytest.raises(ConfigError, match="temperture"):
        load_config(write_config(tmp_path, data))


def test_mode_count_one_in_compare(tmp_path):
    data = {"experiment": "compare", "system": {"mode_count": 1}, "baselines": [{"method": "cem"}]}
    with pytest.raises(ConfigError) as err:
        load_config(write_config(tmp_path, data))
    assert err.value.location == "system.mode_count"


def test_syntax_error_has_line_and_column(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "experiment": solve\n}')
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.location.endswith(":2:17")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")


@pytest.mark.parametrize(
    "data,where",
    [
        ({}, "experiment"),
        ({"experiment": "fly"}, "experiment"),
        ({"experiment": "solve", "repetitions": 0}, "repetitions"),
        ({"experiment": "solve", "solver": {"batch_size": 0}}, "solver.batch_size"),
        ({"experiment": "solve", "solver": {"policy": "greedy"}}, "solver.policy"),
        ({"experiment": "solve", "system": {"u_min": 5, "u_max": 1}}, "system.u_min"),
        ({"experiment": "solve", "system": {"system": "table"}}, "system.table_file"),
        ({"experiment": "solve", "system": {"pole_mas": 1.0}}, "system.pole_mas"),
        ({"experiment": "solve", "sweep": {"horizons": []}}, "sweep.horizons"),
        ({"experiment": "compare", "baselines": []}, "baselines"),
        ({"experiment": "compare", "baselines": [{"method": "cem", "elite_fraction": 2}]}, "baselines[0].elite_fraction"),
    ],
)
def test_out_of_range_fields(data, where):
    with pytest.raises(ConfigError) as err:
        parse_config(data)
    assert err.value.location == where


def test_overrides_enter_hash(tmp_path):
    cfg = load_config(write_config(tmp_path, table_config(tmp_path)))
    assert apply_overrides(cfg, seed=1).config_hash() != cfg.config_hash()
    assert apply_overrides(cfg, budget=10).solver.max_evaluations == 10
    assert apply_overrides(cfg).config_hash() == cfg.config_hash()


def test_help_documents_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    for text in ("batch_size=25", "max_iterations=1000", "budget=25000", "horizons=(10, 20, 40, 80)", "exit codes"):
        assert text in out


# ---------------------------------------------------------------- solve


def test_table_solve_matches_golden_files(tmp_path):
    path = write_config(tmp_path, table_config(tmp_path, repetitions=2, solver={"batch_size": 5}))
    directory, manifest = run_experiment(load_config(path), tmp_path / "out")
    golden = sorted(p.name for p in (GOLDEN / "solve_table").iterdir())
    for name in golden:
        assert (directory / name).read_bytes() == (GOLDEN / "solve_table" / name).read_bytes(), name
    assert set(golden) <= set(manifest.files)


def test_manifest_lists_every_file(tmp_path):
    path = write_config(tmp_path, table_config(tmp_path))
    directory, manifest = run_experiment(load_config(path), tmp_path / "out")
    assert sorted(p.name for p in directory.iterdir()) == sorted(manifest.files)
    data = json.loads((directory / "manifest.json").read_text())
    assert data["config_hash"].startswith(directory.name)
    assert data["version"] and len(data["seeds"]) == 1
    rows = {f["name"]: f["rows"] for f in data["files"]}
    assert rows["trajectory.csv"] == 13


def test_output_layout(tmp_path):
    cfg = load_config(write_config(tmp_path, table_config(tmp_path)))
    directory, _ = run_experiment(cfg, tmp_path / "out")
    assert directory == tmp_path / "out" / "solve" / cfg.config_hash()[:12]


def test_cartpole_trajectory_shape(tmp_path):
    data = {"experiment": "solve", "solver": {"max_evaluations": 500}}
    directory, _ = run_experiment(load_config(write_config(tmp_path, data)), tmp_path / "out")
    lines = (directory / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "k,theta,p,theta_dot,p_dot,mode,stage_cost"
    body = [line.split(",") for line in lines[1:]]
    assert len(body) == 101
    assert sum(1 for row in body if row[5] != "") == 100
    assert body[-1][0] == "100" and body[-1][5] == ""


# ---------------------------------------------------------------- compare / sweep / mpc


def small_compare(tmp_path, oracle=True, **extra):
    data = {
        "experiment": "compare",
        "repetitions": 5,
        "system": {"system": "cartpole", "horizon": 8},
        "solver": {"batch_size": 20, "policy": "best-of-batch"},
        "baselines": [{"method": "hybrid"}, {"method": "random-shooting"}, {"method": "mppi"}],
        "oracle": {"enabled": oracle, "restarts": 1},
        "compare": {"budget": 300},
    }
    data.update(extra)
    return load_config(write_config(tmp_path, data))


def test_compare_rows(tmp_path):
    directory, _ = run_experiment(small_compare(tmp_path), tmp_path / "out")
    lines = (directory / "compare.csv").read_text().splitlines()
    assert lines[0] == "method,horizon,budget,seed,final_cost,oracle_cost,normalized_gap"
    for method in ("hybrid", "random-shooting", "mppi"):
        rows = [line.split(",") for line in lines[1:] if line.startswith(method + ",")]
        assert len(rows) == 6 and rows[-1][3] == "mean"
        assert all(r[2] == "300" and r[6] != "" for r in rows)
    summary = (directory / "compare_summary.csv").read_text().splitlines()
    assert summary[0] == "method,horizon,budget,n,mean_cost,std_cost,mean_gap,std_gap"
    assert len(summary) == 4


def test_compare_without_oracle_leaves_gap_empty(tmp_path):
    directory, _ = run_experiment(small_compare(tmp_path, oracle=False), tmp_path / "out")
    rows = [line.split(",") for line in (directory / "compare.csv").read_text().splitlines()[1:]]
    assert all(r[5] == "" and r[6] == "" and r[4] != "" for r in rows)


def test_compare_is_deterministic_across_threads(tmp_path):
    cfg = small_compare(tmp_path)
    a, _ = run_experiment(cfg, tmp_path / "a", threads=1)
    b, _ = run_experiment(cfg, tmp_path / "b", threads=3)
    for name in ("compare.csv", "compare_summary.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_table_compare_rejects_continuous_methods(tmp_path):
    data = table_config(tmp_path, experiment="compare", baselines=[{"method": "mppi"}], oracle={"enabled": False})
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, data))


def test_sweep_outputs(tmp_path):
    data = {
        "experiment": "sweep-horizon",
        "repetitions": 2,
        "system": {"system": "cartpole"},
        "sweep": {"horizons": [3, 6], "episode_length": 12, "max_rollouts_per_step": 40},
    }
    directory, manifest = run_experiment(load_config(write_config(tmp_path, data)), tmp_path / "out")
    rows = (directory / "sweep.csv").read_text().splitlines()
    assert rows[0] == "method,H,seed,cumulative_cost"
    assert len(rows) == 1 + 2 * 2 * 2
    trends = (directory / "sweep_trends.csv").read_text().splitlines()
    assert trends[0] == "method,trend,flag"
    assert manifest.flags["flagged_steps"] == 0


def test_mpc_episode_has_exact_step_count(tmp_path):
    data = table_config(tmp_path, experiment="mpc", mpc={"horizon": 5, "episode_length": 100, "max_rollouts_per_step": 30})
    directory, _ = run_experiment(load_config(write_config(tmp_path, data)), tmp_path / "out")
    steps = (directory / "mpc_steps.csv").read_text().splitlines()
    assert steps[0] == "k,mode,flagged,evaluations" and len(steps) == 101
    assert len((directory / "mpc_trajectory.csv").read_text().splitlines()) == 102


# ---------------------------------------------------------------- entry point


def test_main_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path, table_config(tmp_path))
    assert main(["validate-config", "--config", str(good)]) == 0
    assert main(["solve", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    assert main(["compare", "--config", str(good)]) == 2  # subcommand disagrees with the config
    bad = write_config(tmp_path, {"experiment": "solve", "system": {"dt": -0.1}}, "bad.json")
    assert main(["solve", "--config", str(bad)]) == 2
    assert "dt must be positive" in capsys.readouterr().err
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["solve", "--config", str(good), "--out", str(blocker / "sub")]) == 3
    assert main(["solve", "--config", str(good), "--threads", "0"]) == 2


def test_cli_runs_are_byte_identical(tmp_path):
    good = write_config(tmp_path, table_config(tmp_path, repetitions=3))
    main(["solve", "--config", str(good), "--out", str(tmp_path / "a"), "--seed", "7"])
    main(["solve", "--config", str(good), "--out", str(tmp_path / "b"), "--seed", "7", "--threads", "3"])
    a = sorted((tmp_path / "a").rglob("*.*"))
    b = sorted((tmp_path / "b").rglob("*.*"))
    assert [p.name for p in a] == [p.name for p in b]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
