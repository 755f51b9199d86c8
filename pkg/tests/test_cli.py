import json

import numpy as np
import pytest
import yaml

from dexlab import bench, config
from dexlab.cli import EXIT_NUMERIC, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main
from dexlab.plots import bootstrap_mean_ci, curve_band, read_metrics

TINY = ["--set", "hidden=[16,16]", "--set", "updates_per_episode=4", "--set", "eval_episodes=4", "--set", "batch_size=32"]


def train_args(out, *extra):
    return ["train", "--env", "point_reach", "--total-steps", "200", "--eval-every", "100",
            "--demo-episodes", "5", "--out", str(out), *TINY, *extra]


def test_gen_demos_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["gen-demos", "--env", "point_reach", "--episodes", "100", "--seed", "1", "--out", str(a)]) == EXIT_OK
    assert main(["--seed", "1", "gen-demos", "--env", "point_reach", "--episodes", "100", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text().splitlines()[0])["episodes"] == 100


def test_gen_demos_rejects_zero(tmp_path, capsys):
    out = tmp_path / "x.jsonl"
    assert main(["gen-demos", "--env", "point_reach", "--episodes", "0", "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()
    assert "episodes" in capsys.readouterr().err


def test_unknown_command_and_env(tmp_path):
    assert main(["fly"]) == EXIT_USAGE
    assert main(["gen-demos", "--env", "cartpole", "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_four_layer_precedence(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text(yaml.safe_dump({"alpha": 1.0, "k_neighbors": 3, "noise_scale": 0.3, "gamma": 0.9}))
    file_layer = config.load_file(cfg_file)
    suite_layer = {"alpha": 2.0, "k_neighbors": 4, "noise_scale": 0.4}
    cli_layer = {"alpha": 3.0}
    cfg = config.resolve(file_layer, suite_layer, cli_layer)
    assert cfg.agent.alpha == 3.0  # flag
    assert cfg.agent.k_neighbors == 4  # suite
    assert cfg.agent.noise_scale == 0.4  # suite over file
    assert cfg.agent.gamma == 0.9  # file
    assert cfg.agent.polyak == 0.95  # default


def test_precedence_through_bench(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("alpha: 1.0\nk_neighbors: 3\ngamma: 0.9\ntotal_steps: 999\n")
    suite = tmp_path / "s.yaml"
    suite.write_text(yaml.safe_dump({
        "name": "p", "seeds": 1, "envs": ["point_reach"],
        "base": {"hidden": [8], "eval_every": 0, "demo_episodes": 2, "updates_per_episode": 1, "batch_size": 8,
                 "eval_episodes": 1, "total_steps": 50},
        "conditions": [{"variant": "dex", "alpha": 2.0, "k_neighbors": 4}],
    }))
    rc = main(["bench", "--suite", str(suite), "--config", str(cfg_file), "--set", "alpha=3.0",
               "--out", str(tmp_path / "res")])
    assert rc == EXIT_OK
    snap = yaml.safe_load((tmp_path / "res/point_reach/dex/seed_0/config.yaml").read_text())
    assert (snap["alpha"], snap["k_neighbors"], snap["gamma"], snap["total_steps"], snap["polyak"]) == (3.0, 4, 0.9, 50, 0.95)


def test_unknown_config_key(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("alhpa: 3\n")
    assert main(["train", "--config", str(f), "--out", str(tmp_path / "r")]) == EXIT_USAGE


def test_default_snapshot_records_method_constants(tmp_path):
    out = tmp_path / "r"
    assert main(train_args(out, "--variant", "dex")) == EXIT_OK
    snap = yaml.safe_load((out / "config.yaml").read_text())
    assert (snap["alpha"], snap["k_neighbors"], snap["noise_scale"], snap["relabel_prob"]) == (5.0, 5, 0.1, 0.8)
    for name in ("metrics.csv", "timing.csv", "final.json", "seeds.json", "checkpoints/actor_00000200.ckpt"):
        assert (out / name).exists()


def test_run_directory_reproduces_from_snapshot(tmp_path):
    first = tmp_path / "first"
    assert main(train_args(first, "--variant", "dex", "--seed", "4")) == EXIT_OK
    again = tmp_path / "again"
    assert main(["train", "--config", str(first / "config.yaml"), "--out", str(again)]) == EXIT_OK
    assert (first / "metrics.csv").read_bytes() == (again / "metrics.csv").read_bytes()
    assert json.loads((first / "seeds.json").read_text()) == json.loads((again / "seeds.json").read_text())


def test_completed_run_is_immutable(tmp_path):
    out = tmp_path / "r"
    assert main(train_args(out, "--variant", "ddpg")) == EXIT_OK
    before = (out / "metrics.csv").read_bytes()
    assert main(train_args(out, "--variant", "ddpg")) == EXIT_USAGE
    assert (out / "metrics.csv").read_bytes() == before


def test_alpha_zero_matches_ddpg_metrics(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(train_args(a, "--variant", "dex", "--alpha", "0", "--seed", "2")) == EXIT_OK
    assert main(train_args(b, "--variant", "ddpg", "--seed", "2")) == EXIT_OK
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_zero_steps_gives_initial_checkpoint(tmp_path):
    out = tmp_path / "r"
    assert main(["train", "--env", "point_reach", "--total-steps", "0", "--demo-episodes", "2", "--out", str(out), *TINY]) == EXIT_OK
    assert (out / "metrics.csv").read_text() == "step,critic_loss,actor_objective,eval_success\n"
    assert (out / "checkpoints/actor_00000000.ckpt").exists()


def test_missing_demo_file(tmp_path, capsys):
    rc = main(["train", "--variant", "dex", "--demos", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "r"), *TINY])
    assert rc == EXIT_USAGE
    rc = main(["train", "--variant", "dex", "--demo-episodes", "0", "--out", str(tmp_path / "q"), *TINY])
    assert rc == EXIT_USAGE
    assert "dex" in capsys.readouterr().err


def test_train_from_demo_file(tmp_path):
    demo = tmp_path / "d.jsonl"
    main(["gen-demos", "--env", "point_reach", "--episodes", "3", "--out", str(demo)])
    assert main(train_args(tmp_path / "r", "--demos", str(demo))) == EXIT_OK
    manifest = json.loads((tmp_path / "r/seeds.json").read_text())
    assert len(manifest["demo_sha256"]) == 64


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    rc = main(train_args(tmp_path / "r", "--variant", "ddpg", "--set", "critic_lr=1e300", "--set", "actor_lr=1e300"))
    assert rc == EXIT_NUMERIC
    assert "non-finite" in capsys.readouterr().err


def test_eval_command(tmp_path):
    out = tmp_path / "r"
    main(train_args(out, "--variant", "ddpg"))
    ckpt = out / "checkpoints/actor_00000000.ckpt"
    e1, e2 = tmp_path / "e1.json", tmp_path / "e2.json"
    assert main(["eval", "--checkpoint", str(ckpt), "--env", "point_reach", "--seed", "5", "--out", str(e1)]) == EXIT_OK
    assert main(["eval", "--checkpoint", str(ckpt), "--env", "point_reach", "--seed", "5", "--out", str(e2)]) == EXIT_OK
    assert e1.read_bytes() == e2.read_bytes()
    assert json.loads(e1.read_text())["episodes"] == 20
    assert main(["eval", "--checkpoint", str(ckpt), "--env", "point_pickplace", "--out", str(e1)]) == EXIT_USAGE


def test_random_checkpoint_fails_pickplace(tmp_path):
    out = tmp_path / "r"
    main(["train", "--env", "point_pickplace", "--variant", "ddpg", "--total-steps", "0", "--out", str(out), *TINY])
    e = tmp_path / "e.json"
    main(["eval", "--checkpoint", str(out / "checkpoints/actor_00000000.ckpt"), "--env", "point_pickplace", "--out", str(e)])
    assert json.loads(e.read_text())["success"] <= 0.05


def tiny_suite(tmp_path, conditions, seeds=2, envs=("point_reach",)):
    path = tmp_path / "suite.yaml"
    path.write_text(yaml.safe_dump({
        "name": "tiny", "seeds": seeds, "envs": list(envs),
        "base": {"hidden": [8, 8], "total_steps": 100, "eval_every": 50, "demo_episodes": 3,
                 "updates_per_episode": 2, "batch_size": 16, "eval_episodes": 2, "bc_epochs": 1},
        "conditions": conditions,
    }))
    return path


def test_bench_rerun_is_identical(tmp_path):
    suite = tiny_suite(tmp_path, [{"variant": "dex"}, {"label": "ddpg", "variant": "ddpg", "demo_fraction": 0.0}])
    root = tmp_path / "res"
    assert main(["bench", "--suite", str(suite), "--out", str(root)]) == EXIT_OK
    first = (root / "report.csv").read_bytes()
    assert len(bench.completed_runs(root)) == 4
    seeds = sorted(json.loads((d / "final.json").read_text())["seed"] for d in bench.completed_runs(root))
    assert seeds == [0, 1, 2, 3]
    assert main(["bench", "--suite", str(suite), "--out", str(root)]) == EXIT_OK
    assert (root / "report.csv").read_bytes() == first


def test_bench_single_run_matches_train(tmp_path):
    suite = tiny_suite(tmp_path, [{"variant": "dex"}], seeds=1)
    root = tmp_path / "res"
    assert main(["bench", "--suite", str(suite), "--out", str(root)]) == EXIT_OK
    run = root / "point_reach/dex/seed_0"
    solo = tmp_path / "solo"
    assert main(["train", "--config", str(run / "config.yaml"), "--out", str(solo)]) == EXIT_OK
    assert (run / "metrics.csv").read_bytes() == (solo / "metrics.csv").read_bytes()
    report = bench.aggregate_tree(root, "per-task")
    assert report.task_stats[("dex", "point_reach")][0] == json.loads((solo / "final.json").read_text())["success"]


def test_bench_partial_failure(tmp_path):
    suite = tiny_suite(tmp_path, [{"variant": "ddpg"}, {"label": "broken", "variant": "ddpg", "critic_lr": 1e300, "actor_lr": 1e300}], seeds=1)
    root = tmp_path / "res"
    with pytest.warns(RuntimeWarning):
        rc = main(["bench", "--suite", str(suite), "--out", str(root)])
    assert rc == EXIT_PARTIAL
    assert (root / "point_reach/broken/seed_1/error.txt").exists()
    assert "broken" not in (root / "report.csv").read_text()


def test_bench_rejects_env_override(tmp_path):
    suite = tiny_suite(tmp_path, [{"variant": "dex"}])
    assert main(["bench", "--suite", str(suite), "--set", "env=point_track", "--out", str(tmp_path / "r")]) == EXIT_USAGE


def test_builtin_suites():
    demo = bench.expand_suite(bench.load_suite("ablation-demo"), only_envs=["point_pickplace"])
    levels = sorted({r.layer["demo_episodes"] for r in demo})
    assert levels == [10, 25, 50, 75, 100]
    alpha = bench.load_suite("ablation-alpha")
    assert [c["alpha"] for c in alpha["conditions"]] == [0, 1, 5, 10, 20]
    k = bench.load_suite("ablation-k")
    assert [c["k_neighbors"] for c in k["conditions"]] == [1, 3, 5, 7, 9]
    t1 = bench.expand_suite(bench.load_suite("table1-mini"))
    assert len(t1) == 4 * 5 * 5
    assert [r.layer["seed"] for r in t1] == list(range(100))
    variants = bench.load_suite("ablation-variant")
    assert [c["variant"] for c in variants["conditions"]] == ["dex", "dex_ra", "dex_ac", "dex_bc"]
    with pytest.raises(Exception):
        bench.load_suite("no-such-suite")


def test_aggregate_command(tmp_path, capsys):
    suite = tiny_suite(tmp_path, [{"variant": "vinn"}, {"variant": "bc"}], envs=("point_reach", "point_pickplace"))
    root = tmp_path / "res"
    main(["bench", "--suite", str(suite), "--out", str(root)])
    capsys.readouterr()
    assert main(["aggregate", str(root), "--grouping", "per-domain", "--out", str(tmp_path / "agg")]) == EXIT_OK
    text = (tmp_path / "agg/report.txt").read_text()
    header = text.splitlines()[0]
    assert "[reach]" in header and "[single_arm]" in header
    assert main(["aggregate", str(root), "--out", str(tmp_path / "agg2")]) == EXIT_OK
    assert (tmp_path / "agg2/report.txt").read_text() == text
    assert main(["aggregate", str(tmp_path / "empty")]) == EXIT_USAGE


def test_plot_single_run_is_verbatim(tmp_path):
    out = tmp_path / "res" / "r"
    main(train_args(out, "--variant", "ddpg"))
    plots = tmp_path / "plots"
    assert main(["plot", str(tmp_path / "res"), "--out", str(plots)]) == EXIT_OK
    rows = (plots / "point_reach__ddpg.csv").read_text().splitlines()[1:]
    metrics = (out / "metrics.csv").read_text().splitlines()[1:]
    for row, m in zip(rows, metrics):
        step, mean, lo, hi, n = row.split(",")
        assert step == m.split(",")[0] and mean == m.split(",")[3] == lo == hi and n == "1"
    svg = (plots / "point_reach.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg


def test_plot_band_equals_recomputed_bootstrap(tmp_path):
    rng = np.random.default_rng(0)
    series = [[(s, float(rng.integers(0, 21)) / 20) for s in (100, 200, 300)] for _ in range(5)]
    rows = curve_band(series, n_resamples=2000, seed=0)
    for i, (step, mean, lo, hi, n) in enumerate(rows):
        vals = np.array([s[i][1] for s in series])
        boot = np.random.default_rng(0)
        idx = boot.integers(5, size=(2000, 5))
        means = vals[idx].mean(axis=1)
        assert mean == pytest.approx(vals.mean(), abs=1e-15)
        assert (lo, hi) == tuple(np.percentile(means, [2.5, 97.5]))
        assert n == 5
    assert bootstrap_mean_ci([0.5]) == (0.5, 0.5)


def test_plot_output_is_deterministic(tmp_path):
    suite = tiny_suite(tmp_path, [{"variant": "dex"}])
    root = tmp_path / "res"
    main(["bench", "--suite", str(suite), "--out", str(root)])
    main(["plot", str(root), "--out", str(tmp_path / "p1")])
    main(["plot", str(root), "--out", str(tmp_path / "p2")])
    for f in sorted((tmp_path / "p1").iterdir()):
        assert f.read_bytes() == (tmp_path / "p2" / f.name).read_bytes()
    assert read_metrics(root / "point_reach/dex/seed_0/metrics.csv")[0][0] == 50
