import json
import math

import numpy as np
import pytest

from optit import experiment
from optit.cli import main
from optit.config import PRESETS, config_from_dict, parse_config, preset, serialize_config
from optit.experiment import aggregate_curves, final_window_return, plot_curves, read_metrics, run_experiment

TINY = ["train.total_env_steps=120", "train.hidden_layers=1", "train.hidden_units=8", "train.workers=2",
        "train.batch_size=8", "train.training_start=10", "train.log_interval=40",
        "train.grad_updates_per_env_step=0.5", "search.simulation_budget=16", "search.rollout_length=4",
        "train.K=4", "env.width=7", "env.timeout=10"]


def _tiny_args(*extra):
    out = ["--preset", "compass"]
    for s in TINY:
        out += ["--set", s]
    return out + list(extra)


def test_preset_defaults():
    epm = preset("electric_procmaze7")
    assert (epm.search.simulation_budget, epm.search.rollout_length, epm.train.K, epm.train.N) == (1000, 5, 5, 5)
    assert (epm.train.batch_size, epm.train.buffer_capacity, epm.train.workers) == (250, 100_000, 16)
    assert epm.search.sims_per_pair(4, epm.train.N) == 50
    c = preset("compass")
    assert (c.env.width, c.search.simulation_budget, c.train.K, c.train.N, c.search.beta) == (15, 50, 20, 4, 0.01)
    h = preset("hier")
    assert (h.train.K, h.train.hidden_units, h.search.beta, h.env.controller_width) == (8, 800, 0.01, 8)
    with pytest.raises(ValueError):
        preset("nope")


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_config_round_trip(name):
    cfg = preset(name)
    assert parse_config(serialize_config(cfg)) == cfg


def test_config_overrides_and_errors():
    cfg = parse_config('preset = "compass"\nname = "mine"\n[train]\nstep_size = 1\n[sweep]\nbetas = [0.1]\n')
    assert cfg.name == "mine" and cfg.train.step_size == 1.0 and cfg.env.env == "compass"
    assert cfg.sweep.betas == [0.1] and len(cfg.sweep.alphas) == 5
    for bad in ('[train]\nbogus = 1\n', 'extra = 2\n', '[env]\nenv = "nowhere"\n', '[env]\nwidth = 6\n',
                '[search]\ndiscount = 0.5\n', 'seeds = []\n', '[train]\nN = 2\nloss_variant = "exit_exact_indep"\n'):
        with pytest.raises(ValueError):
            parse_config(bad)


def test_show_config_applies_set(capsys):
    assert main(["show-config", "--preset", "compass", "--set", "train.N=2", "--set", "search.beta=0.5"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.train.N == 2 and cfg.search.beta == 0.5


def _write_metrics(path, steps, values):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["total_env_steps,windowed_return_mean,windowed_return_ci95,loss_policy,loss_value,sigma_bar"]
    lines += [f"{s},{v},0,0,0,1" for s, v in zip(steps, values)]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_aggregate_matches_hand_computed_ci(tmp_path):
    files = [_write_metrics(tmp_path / f"s{i}" / "metrics.csv", [10, 20], v)
             for i, v in enumerate([[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]])]
    agg = aggregate_curves(files)
    assert np.allclose(agg["mean"], [3.0, 2.0])
    assert agg["ci"][0] == pytest.approx(1.96 * 2.0 / math.sqrt(3))
    assert agg["ci"][1] == 0.0  # identical seeds
    single = aggregate_curves(files[:1])
    assert single["n"] == 1 and np.all(single["ci"] == 0)


def test_aggregate_rejects_mismatched_grids(tmp_path):
    a = _write_metrics(tmp_path / "a.csv", [10, 20], [1, 2])
    b = _write_metrics(tmp_path / "b.csv", [10, 30], [1, 2])
    with pytest.raises(ValueError):
        aggregate_curves([a, b])
    with pytest.raises(ValueError):
        aggregate_curves([])


def test_plot_writes_svg_with_sources(tmp_path):
    files = [_write_metrics(tmp_path / "optit" / f"seed_{i}" / "metrics.csv", [10, 20], [i, i]) for i in range(2)]
    lone = _write_metrics(tmp_path / "exit" / "seed_0" / "metrics.csv", [10, 20], [-5, 0])
    out = tmp_path / "p.svg"
    assert main(["plot", *map(str, files), str(lone), "--out", str(out), "--y-floor", "-1"]) == 0
    text = out.read_text()
    assert "<svg" in text and "manifest.json" in text
    plot_curves({"x": [lone]}, tmp_path / "q.svg")


def test_final_window_return():
    m = {"total_env_steps": np.array([100.0, 200, 300, 400, 500]),
         "windowed_return_mean": np.array([0.0, 0, 0, 1, 3])}
    assert final_window_return(m, 0.2) == 3.0
    assert final_window_return(m, 0.4) == 2.0


def test_cli_run_is_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["run", *_tiny_args("--seed", "5", "--out", str(tmp_path / d), "--quiet")]) == 0
    a = (tmp_path / "a" / "seed_5" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "seed_5" / "metrics.csv").read_bytes()
    manifest = json.loads((tmp_path / "a" / "seed_5" / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seed"] == 5 and manifest["total_env_steps"] >= 120
    assert (tmp_path / "a" / "seed_5" / "checkpoint.bin").exists()
    assert parse_config((tmp_path / "a" / "seed_5" / "config.toml").read_text()).train.hidden_units == 8
    capsys.readouterr()
    assert main(["checkpoint-dump", str(tmp_path / "a" / "seed_5" / "checkpoint.bin")]) == 0
    assert '"num_options": 4' in capsys.readouterr().out


def test_failing_seed_does_not_stop_others(tmp_path, monkeypatch):
    real = experiment.training_loop

    def flaky(env, search_cfg, cfg, seed=0, **kw):
        if seed == 1:
            raise RuntimeError("boom")
        return real(env, search_cfg, cfg, seed=seed, **kw)

    monkeypatch.setattr(experiment, "training_loop", flaky)
    cfg = config_from_dict({**preset("compass").to_dict()})
    from optit.cli import apply_overrides
    cfg = config_from_dict(apply_overrides(cfg.to_dict(), TINY))
    ms = run_experiment(cfg, [0, 1, 2], tmp_path)
    assert [m.status for m in ms] == ["ok", "failed", "ok"]
    assert "boom" in ms[1].error
    assert json.loads((tmp_path / "seed_1" / "manifest.json").read_text())["status"] == "failed"
    read_metrics(tmp_path / "seed_2" / "metrics.csv")


def test_sweep_picks_best_cell(tmp_path):
    args = _tiny_args("--seed", "0", "--out", str(tmp_path), "--set", "sweep.alphas=[1e-3, 1e-4]",
                      "--set", "sweep.betas=[0.1]")
    assert main(["sweep", *args]) == 0
    best = json.loads((tmp_path / "best.json").read_text())
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3 and best["beta"] == 0.1 and best["alpha"] in (1e-3, 1e-4)


def test_analyze_commands(tmp_path, capsys):
    assert main(["analyze", "bellman", "--width", "5", "--seed", "2", "--out", str(tmp_path / "b.json")]) == 0
    b = json.loads((tmp_path / "b.json").read_text())
    assert b["random_residual"] < 1e-8 and b["optimal_enters_wall"] is False
    assert main(["analyze", "ce", "--K", "5"]) == 0
    assert main(["run", *_tiny_args("--seed", "0", "--out", str(tmp_path / "r"), "--quiet")]) == 0
    ck = str(tmp_path / "r" / "seed_0" / "checkpoint.bin")
    assert main(["analyze", "grids", "--checkpoint", ck, "--out", str(tmp_path / "g.svg")]) == 0
    assert (tmp_path / "g.svg").read_text().startswith("<svg")
    with pytest.raises(SystemExit):
        main(["analyze", "diversity"])


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 8 and "FAIL" not in out
