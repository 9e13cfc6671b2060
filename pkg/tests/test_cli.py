import json
import subprocess
import sys

import numpy as np
import pytest
import tomli

from msol.cli import main
from msol.config import RunConfig
from msol.envs.layout import load_layout
from msol.plotting import collect_series, taxi_option_map
from msol.policy import build_policy, load_policy, save_policy
from msol.trainer import net_spec

TINY = ["--preset", "taxi-desk", "--set", "policy.hidden=[8]", "--set", "policy.option_embed=4",
        "--set", "env.tasks=[0, 1]", "--set", "env.envs_per_task=2", "--set", "trainer.frames_per_task=200",
        "--set", "trainer.log_interval=2", "--set", "transfer.frames_per_task=100", "--set", "transfer.tasks=[3]"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", *TINY, "--out", str(out)]) == 0
    return out


def test_train_writes_outputs(trained):
    for name in ("final.npz", "metrics.jsonl", "config.toml"):
        assert (trained / name).exists()
    records = [json.loads(line) for line in (trained / "metrics.jsonl").read_text().splitlines()]
    assert records[-1]["frames"] == 200


def test_train_is_deterministic(trained, tmp_path):
    assert main(["train", *TINY, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.jsonl").read_bytes() == (trained / "metrics.jsonl").read_bytes()


def test_config_file_roundtrip(trained, tmp_path):
    assert main(["train", str(trained / "config.toml"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.jsonl").read_bytes() == (trained / "metrics.jsonl").read_bytes()


def test_print_config(capsys):
    assert main(["train", *TINY, "--print-config"]) == 0
    data = tomli.loads(capsys.readouterr().out)
    assert data["policy"]["hidden"] == [8] and data["env"]["tasks"] == [0, 1]


@pytest.mark.parametrize("bad", ["nosection.x=1", "policy.nokey=1", "policy=1", "env.family=\"pong\""])
def test_bad_overrides_exit_2(bad):
    assert main(["train", "--preset", "taxi-desk", "--set", bad, "--print-config"]) == 2


def test_missing_config_file_exits_4(tmp_path):
    assert main(["train", str(tmp_path / "none.toml"), "--print-config"]) == 4


@pytest.mark.parametrize("variant", ["msol", "msol-frozen", "flat"])
def test_transfer(trained, tmp_path, variant):
    args = ["transfer", *TINY, "--set", f'transfer.variant="{variant}"', "--out", str(tmp_path)]
    if variant != "flat":
        args += ["--prior", str(trained / "final.npz")]
    assert main(args) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["variant"] == variant and len(summary["curve"]) >= 1


def test_transfer_needs_prior(tmp_path):
    assert main(["transfer", *TINY, "--out", str(tmp_path)]) == 2


def test_eval(trained, capsys):
    assert main(["eval", str(trained / "final.npz"), "--task", "1", "--episodes", "4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["task"].startswith("taxi/taxi30/") and 0.0 <= out["success_rate"] <= 1.0
    assert main(["eval", str(trained / "final.npz"), "--task", "5"]) == 2


def test_plot_two_identical_logs(trained, tmp_path):
    log = str(trained / "metrics.jsonl")
    out = tmp_path / "c.svg"
    assert main(["plot", log, log, "--label", "a", "--label", "b", "--out", str(out)]) == 0
    assert out.read_text().startswith("<?xml")
    series = collect_series([("a", log), ("b", log)])
    assert [s["label"] for s in series] == ["a", "b"]
    np.testing.assert_array_equal(series[0]["median"], series[1]["median"])
    assert main(["plot", log, "--label", "a", "--label", "b", "--out", str(out)]) == 2


def test_plot_is_reproducible(trained, tmp_path):
    log = str(trained / "metrics.jsonl")
    main(["plot", log, "--out", str(tmp_path / "1.svg")])
    main(["plot", log, "--out", str(tmp_path / "2.svg")])
    assert (tmp_path / "1.svg").read_bytes() == (tmp_path / "2.svg").read_bytes()


def test_inspect_taxi_uniform_prior(tmp_path):
    cfg = RunConfig()
    cfg.policy.hidden = [8]
    cfg.policy.option_embed = 4
    prior, post = build_policy(net_spec(cfg, 60, 6, 2), 1, np.random.default_rng(0))
    for store in (prior.store, prior.encoder.store):
        for key in store:
            store[key][...] = 0.0
    save_policy(tmp_path / "u.npz", prior, post, {"layout": "taxi30"})
    out = tmp_path / "o.svg"
    assert main(["inspect-taxi", str(tmp_path / "u.npz"), "--out", str(out)]) == 0
    assert out.stat().st_size > 0
    info = taxi_option_map(load_policy(tmp_path / "u.npz")[0], load_layout("taxi30"))
    assert info["prob"].shape == (2, 2, 30)
    np.testing.assert_allclose(info["prob"], 1 / 6)
    np.testing.assert_allclose(info["termination"], 0.05)  # untrained: the fixed 1 - alpha


def test_run_experiment(tmp_path, capsys):
    args = ["run-experiment", "bandits-transfer", "--preset", "bandits-desk", "--set", "policy.hidden=[8]",
            "--set", "trainer.frames_per_task=100", "--set", "transfer.frames_per_task=100",
            "--set", "env.tasks=[0, 1]", "--seeds", "1", "--out", str(tmp_path)]
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == ["msol", "msol-frozen", "flat"]
    assert (tmp_path / "bandits-transfer.json").exists()


def test_unknown_protocol_exits_2(tmp_path):
    assert main(["run-experiment", "nope", "--seeds", "1"]) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "msol.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "run-experiment" in out.stdout


@pytest.mark.parametrize("name", ["bandits-desk", "taxi-desk", "dir-taxi", "taxi"])
def test_shipped_configs_match_presets(name):
    from pathlib import Path

    from msol.config import load, preset, to_dict

    path = Path(__file__).resolve().parent.parent / "configs" / f"{name}.toml"
    assert to_dict(load(path)) == to_dict(preset(name))
