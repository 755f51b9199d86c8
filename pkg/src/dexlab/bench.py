"""Run directories, benchmark suites and result collection."""

from __future__ import annotations

import hashlib
import json
import os
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .agents import NEEDS_DEMOS, seed_streams, train
from .config import RunConfig, check_keys, resolve
from .envs import generate_demonstrations, load_demonstrations, make_env
from .errors import ConfigurationError, UsageError
from .nn import save_checkpoint
from .stats import RunRecord, aggregate

CONFIG_FILE = "config.yaml"
METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
FINAL_FILE = "final.json"
SEEDS_FILE = "seeds.json"
CKPT_DIR = "checkpoints"


# single runs -------------------------------------------------------------------


def run_dir_for(root, cfg: RunConfig) -> Path:
    return Path(root) / cfg.env / cfg.agent_label / f"seed_{cfg.seed}"


def demos_for(cfg: RunConfig):
    """Demonstrations a run consumes, or None when it uses none."""
    env = make_env(cfg.env)
    if cfg.variant == "ddpg" and cfg.agent.demo_fraction == 0:
        return None
    if cfg.demo_path:
        demos = load_demonstrations(cfg.demo_path)
        if demos.env_name != cfg.env:
            raise ConfigurationError(f"demo file {cfg.demo_path} is for {demos.env_name}, run is for {cfg.env}")
        return demos
    if cfg.demo_episodes > 0:
        return generate_demonstrations(env, cfg.demo_episodes, cfg.demo_seed)
    if cfg.variant in NEEDS_DEMOS:
        raise ConfigurationError(
            f"variant {cfg.variant} learns from demonstrations: pass demo_path or a positive demo_episodes"
        )
    return None


def seed_manifest(cfg: RunConfig) -> dict:
    streams = {
        name: {"entropy": str(ss.entropy), "spawn_key": list(ss.spawn_key)}
        for name, ss in seed_streams(cfg.seed).items()
    }
    manifest = {"seed": cfg.seed, "demo_seed": cfg.demo_seed, "streams": streams}
    if cfg.demo_path:
        manifest["demo_sha256"] = hashlib.sha256(Path(cfg.demo_path).read_bytes()).hexdigest()
    return manifest


def execute_run(cfg: RunConfig, run_dir) -> dict:
    """Train one configuration into ``run_dir`` and return its final record."""
    run_dir = Path(run_dir)
    if (run_dir / FINAL_FILE).exists():
        raise UsageError(f"{run_dir} already holds a completed run; refusing to overwrite it")
    ckpt = run_dir / CKPT_DIR
    ckpt.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_FILE).write_text(cfg.dump())
    (run_dir / SEEDS_FILE).write_text(json.dumps(seed_manifest(cfg), indent=2, sort_keys=True) + "\n")

    env = make_env(cfg.env)
    demos = demos_for(cfg)

    def on_checkpoint(step, ac):
        save_checkpoint(ckpt / f"actor_{step:08d}.ckpt", ac.actor_spec, ac.actor)
        save_checkpoint(ckpt / f"critic_{step:08d}.ckpt", ac.critic_spec, ac.critic)

    result = train(env, demos, cfg.total_steps, cfg.eval_every, cfg.seed, cfg.agent, on_checkpoint=on_checkpoint)
    (run_dir / METRICS_FILE).write_text(result.log.to_csv())
    (run_dir / TIMING_FILE).write_text(result.log.timing_csv())
    if cfg.variant == "bc":
        save_checkpoint(ckpt / f"actor_{cfg.total_steps:08d}.ckpt", result.policy.spec, result.policy.params)

    rows = result.log.rows
    final = {
        "env": cfg.env,
        "agent": cfg.agent_label,
        "variant": cfg.variant,
        "seed": cfg.seed,
        "step_budget": cfg.total_steps,
        "eval_episodes": cfg.agent.eval_episodes,
        "success": rows[-1][3] if rows else None,
        "seconds": round(result.log.seconds[-1], 3) if rows else 0.0,
    }
    (run_dir / FINAL_FILE).write_text(json.dumps(final, indent=2, sort_keys=True) + "\n")
    return final


def read_config(run_dir) -> RunConfig:
    path = Path(run_dir) / CONFIG_FILE
    if not path.exists():
        raise UsageError(f"{run_dir} has no {CONFIG_FILE}")
    return resolve(yaml.safe_load(path.read_text()))


# suites ------------------------------------------------------------------------

ALL_ENVS = ["point_reach", "point_pickplace", "bipoint_transfer", "point_track"]
ABLATION_ENVS = ["point_pickplace", "bipoint_transfer"]
DESK_BASE = {"hidden": [64, 64, 64]}
PURE_DDPG = {"label": "ddpg", "variant": "ddpg", "demo_fraction": 0.0}

BUILTIN_SUITES = {
    "table1-mini": {
        "envs": ALL_ENVS,
        "conditions": [
            {"variant": "dex"},
            PURE_DDPG,
            {"variant": "bc"},
            {"variant": "ddpgbc"},
            {"variant": "vinn"},
        ],
    },
    "ablation-alpha": {
        "envs": ABLATION_ENVS,
        "conditions": [{"label": f"dex[alpha={a}]", "variant": "dex", "alpha": a} for a in (0, 1, 5, 10, 20)],
    },
    "ablation-k": {
        "envs": ABLATION_ENVS,
        "conditions": [{"label": f"dex[k={k}]", "variant": "dex", "k_neighbors": k} for k in (1, 3, 5, 7, 9)],
    },
    "ablation-demo": {
        "envs": ABLATION_ENVS,
        "conditions": [
            {"label": f"{v}[demos={n}]", "variant": v, "demo_episodes": n}
            for v in ("dex", "ddpgbc")
            for n in (10, 25, 50, 75, 100)
        ],
    },
    "ablation-variant": {
        "envs": ABLATION_ENVS,
        "conditions": [{"variant": v} for v in ("dex", "dex_ra", "dex_ac", "dex_bc")],
    },
    # the grid behind the pick-and-place exit criteria
    "acceptance-pickplace": {
        "envs": ["point_pickplace"],
        "conditions": [
            {"variant": "dex"},
            {"variant": "dex_ra"},
            {"variant": "dex_ac"},
            PURE_DDPG,
            {"variant": "ddpgbc"},
            {"label": "dex[alpha=0]", "variant": "dex", "alpha": 0.0},
            {"label": "dex[alpha=20]", "variant": "dex", "alpha": 20.0},
            {"label": "dex[demos=10]", "variant": "dex", "demo_episodes": 10},
            {"label": "dex[demos=25]", "variant": "dex", "demo_episodes": 25},
            {"label": "dex[demos=50]", "variant": "dex", "demo_episodes": 50},
        ],
    },
}
for _name, _suite in BUILTIN_SUITES.items():
    _suite.setdefault("name", _name)
    _suite.setdefault("seeds", 5)
    _suite.setdefault("seed_base", 0)
    _suite.setdefault("base", dict(DESK_BASE))


@dataclass
class SuiteRun:
    index: int
    env: str
    label: str
    replicate: int
    layer: dict = field(default_factory=dict)  # suite override layer


def load_suite(name_or_path) -> dict:
    if name_or_path in BUILTIN_SUITES:
        return json.loads(json.dumps(BUILTIN_SUITES[name_or_path]))
    p = Path(name_or_path)
    if not p.exists():
        raise UsageError(f"unknown suite {name_or_path!r}; built-ins are {sorted(BUILTIN_SUITES)}")
    suite = yaml.safe_load(p.read_text()) or {}
    missing = {"envs", "conditions"} - set(suite)
    if missing:
        raise UsageError(f"suite file {p} lacks {sorted(missing)}")
    suite.setdefault("name", p.stem)
    suite.setdefault("seeds", 5)
    suite.setdefault("seed_base", 0)
    suite.setdefault("base", {})
    return suite


def expand_suite(suite: dict, only_envs=None) -> list[SuiteRun]:
    """One entry per (env, condition, replicate); seed = seed_base + run index."""
    check_keys(suite.get("base", {}), f"suite {suite['name']} base")
    runs = []
    index = 0
    for env in suite["envs"]:
        for cond in suite["conditions"]:
            check_keys(cond, f"suite {suite['name']} condition")
            label = cond.get("label") or cond.get("variant", "dex")
            for rep in range(int(suite["seeds"])):
                layer = {**suite.get("base", {}), **cond, "env": env, "label": label,
                         "seed": int(suite["seed_base"]) + index}
                if only_envs is None or env in only_envs:
                    runs.append(SuiteRun(index, env, label, rep, layer))
                index += 1
    return runs


@dataclass
class RunOutcome:
    run_dir: str
    status: str  # done | skipped | failed
    error: str = ""


def _run_one(args) -> RunOutcome:
    cfg, run_dir = args
    run_dir = Path(run_dir)
    try:
        if (run_dir / FINAL_FILE).exists():
            if (run_dir / CONFIG_FILE).read_text() != cfg.dump():
                raise UsageError(f"{run_dir} was completed with a different configuration")
            return RunOutcome(str(run_dir), "skipped")
        execute_run(cfg, run_dir)
        return RunOutcome(str(run_dir), "done")
    except Exception as exc:  # recorded per run; the suite carries on
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "error.txt").write_text(traceback.format_exc())
        return RunOutcome(str(run_dir), "failed", f"{type(exc).__name__}: {exc}")


def default_jobs(n_runs: int) -> int:
    cap = os.environ.get("DEXLAB_THREADS")
    jobs = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(jobs, n_runs))


def run_suite(suite: dict, root, file_layer=None, cli_layer=None, jobs=None, only_envs=None, progress=None):
    """Execute every run of ``suite`` below ``root``; returns the list of outcomes."""
    runs = expand_suite(suite, only_envs)
    tasks = []
    for r in runs:
        cfg = resolve(file_layer or {}, r.layer, cli_layer or {})
        tasks.append((cfg, str(run_dir_for(root, cfg))))
    jobs = default_jobs(len(tasks)) if jobs is None else max(1, min(jobs, len(tasks) or 1))
    outcomes = []
    if jobs == 1:
        for t in tasks:
            outcomes.append(_run_one(t))
            if progress:
                progress(outcomes[-1])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_run_one, tasks):
                outcomes.append(out)
                if progress:
                    progress(out)
    return outcomes


# collection --------------------------------------------------------------------


def completed_runs(root) -> list[Path]:
    return sorted(p.parent for p in Path(root).rglob(FINAL_FILE))


def collect_records(root) -> list[RunRecord]:
    records = []
    for run_dir in completed_runs(root):
        final = json.loads((run_dir / FINAL_FILE).read_text())
        if final["success"] is None:
            continue
        records.append(RunRecord(final["env"], final["seed"], final["agent"], final["success"], final["step_budget"]))
    return records


def aggregate_tree(root, grouping="per-domain", n_resamples=2000, seed=0):
    records = collect_records(root)
    if not records:
        raise UsageError(f"no completed runs under {root}")
    return aggregate(records, grouping, n_resamples, 0.95, seed)


def write_report(report, out_dir, stem="report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.txt"
    csv_path.write_text(report.to_csv())
    txt_path.write_text(report.to_text())
    return csv_path, txt_path


def warn_partial(outcomes) -> int:
    failed = [o for o in outcomes if o.status == "failed"]
    for o in failed:
        warnings.warn(f"run {o.run_dir} failed: {o.error}", RuntimeWarning)
    return len(failed)
