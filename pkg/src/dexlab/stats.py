"""Success rates, interquartile means and stratified bootstrap intervals."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

TASK_ORDER = ("point_reach", "point_pickplace", "bipoint_transfer", "point_track")
DOMAINS = {
    "reach": ("point_reach",),
    "single_arm": ("point_pickplace",),
    "bimanual": ("bipoint_transfer",),
    "tracking": ("point_track",),
}


def success_rate(outcomes) -> float:
    outcomes = list(outcomes)
    if not outcomes:
        raise UsageError("success_rate of an empty outcome list")
    return sum(bool(o) for o in outcomes) / len(outcomes)


def _iqm_weights(n: int) -> np.ndarray:
    """Share of each order statistic in the middle half of the empirical distribution."""
    edges = np.arange(n + 1) / n
    lo = np.clip(edges[:-1], 0.25, 0.75)
    hi = np.clip(edges[1:], 0.25, 0.75)
    return (hi - lo) / 0.5


def iqm(scores, axis: int = -1):
    """Interquartile mean with fractional weights for scores straddling the quartiles."""
    x = np.asarray(scores, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise UsageError("iqm of an empty score list")
    x = np.sort(x, axis=axis)
    w = _iqm_weights(x.shape[axis])
    return np.tensordot(np.moveaxis(x, axis, -1), w, axes=([-1], [0]))


def stratified_bootstrap_ci(columns, n_resamples: int = 2000, level: float = 0.95, rng=None):
    """Percentile interval of the pooled IQM, resampling runs within each task column.

    ``columns`` is a runs x tasks matrix or a list of per-task score lists
    (tasks may have different run counts).
    """
    if not 0.0 < level < 1.0:
        raise UsageError("level must lie in (0, 1)")
    cols = _as_columns(columns)
    point = float(iqm(np.concatenate(cols)))
    if min(len(c) for c in cols) < 2:
        warnings.warn("fewer than two runs per task: bootstrap interval is degenerate", RuntimeWarning)
        return point, point
    stats = bootstrap_iqms(cols, n_resamples, rng)
    lo, hi = np.percentile(stats, [50 * (1 - level), 50 * (1 + level)])
    return float(lo), float(hi)


def stratified_resample(cols, n_resamples: int, rng) -> list[np.ndarray]:
    """Per task column, an (n_resamples, runs) array drawn with replacement from that column only."""
    rng = np.random.default_rng() if rng is None else rng
    return [c[rng.integers(len(c), size=(n_resamples, len(c)))] for c in _as_columns(cols)]


def bootstrap_iqms(cols, n_resamples: int, rng) -> np.ndarray:
    """IQM of the pooled scores for each stratified resample."""
    return iqm(np.concatenate(stratified_resample(cols, n_resamples, rng), axis=1), axis=1)


def _as_columns(columns) -> list[np.ndarray]:
    if isinstance(columns, np.ndarray):
        if columns.ndim == 1:
            columns = columns[:, None]
        cols = [columns[:, j].astype(np.float64) for j in range(columns.shape[1])]
    else:
        cols = [np.asarray(c, dtype=np.float64) for c in columns]
    if not cols or any(len(c) == 0 for c in cols):
        raise UsageError("every task column needs at least one run")
    return cols


@dataclass
class RunRecord:
    task: str
    seed: int
    agent: str
    score: float
    step_budget: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise UsageError(f"score {self.score} outside [0, 1]")


@dataclass
class AggregateReport:
    agents: list
    tasks: list
    groups: list
    task_stats: dict  # (agent, task) -> (mean, std, n)
    group_stats: dict  # (agent, group) -> (iqm, lower, upper)
    n_resamples: int
    level: float = 0.95
    step_budget: int | None = None
    meta: dict = field(default_factory=lambda: {"std_denominator": "n"})

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("agent,kind,name,value,std_or_lower,upper,n\n")
        for a in self.agents:
            for t in self.tasks:
                if (a, t) in self.task_stats:
                    m, s, n = self.task_stats[(a, t)]
                    out.write(f"{a},task,{t},{m:.6f},{s:.6f},,{n}\n")
            for g in self.groups:
                if (a, g) in self.group_stats:
                    v, lo, hi = self.group_stats[(a, g)]
                    out.write(f"{a},group,{g},{v:.6f},{lo:.6f},{hi:.6f},\n")
        return out.getvalue()

    def to_text(self) -> str:
        """Fixed-width table: one row per agent, tasks then groups as columns."""
        col = 22
        names = [*self.tasks, *(f"[{g}]" for g in self.groups)]
        lines = [f"{'agent':<16}" + "".join(f"{n:>{col}}" for n in names)]
        for a in self.agents:
            cells = []
            for t in self.tasks:
                if (a, t) in self.task_stats:
                    m, s, _ = self.task_stats[(a, t)]
                    cells.append(f"{m:.2f}±{s:.2f}")
                else:
                    cells.append("-")
            for g in self.groups:
                if (a, g) in self.group_stats:
                    v, lo, hi = self.group_stats[(a, g)]
                    cells.append(f"{v:.2f} [{lo:.2f},{hi:.2f}]")
                else:
                    cells.append("-")
            lines.append(f"{a:<16}" + "".join(f"{c:>{col}}" for c in cells))
        lines.append(
            f"# IQM with {int(self.level * 100)}% stratified bootstrap CI, "
            f"{self.n_resamples} resamples; std denominator n; step budget {self.step_budget}"
        )
        return "\n".join(lines) + "\n"


def aggregate(records, grouping: str = "per-domain", n_resamples: int = 2000, level: float = 0.95, seed: int = 0):
    """Per-task mean/std plus IQM and bootstrap CI per group, for every agent."""
    records = list(records)
    if not records:
        raise UsageError("no run records to aggregate")
    budgets = sorted({r.step_budget for r in records})
    if len(budgets) > 1:
        raise UsageError(f"refusing to aggregate runs with mixed step budgets {budgets}")
    agents = list(dict.fromkeys(r.agent for r in records))
    present = {r.task for r in records}
    tasks = [t for t in TASK_ORDER if t in present] + sorted(present - set(TASK_ORDER))

    if grouping == "per-task":
        groups = {t: (t,) for t in tasks}
    elif grouping == "per-domain":
        groups = {d: ts for d, ts in DOMAINS.items() if set(ts) & present}
    elif grouping == "overall":
        groups = {"overall": tuple(tasks)}
    else:
        raise UsageError(f"unknown grouping {grouping!r}")

    scores = {}
    for r in records:
        scores.setdefault((r.agent, r.task), []).append(r.score)
    task_stats = {
        key: (float(np.mean(v)), float(np.std(v)), len(v)) for key, v in scores.items()
    }
    group_stats = {}
    rng = np.random.default_rng(seed)
    for a in agents:
        for g, ts in groups.items():
            cols = [scores[(a, t)] for t in ts if (a, t) in scores]
            if not cols:
                continue
            point = float(iqm(np.concatenate(cols)))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                lo, hi = stratified_bootstrap_ci(cols, n_resamples, level, rng)
            group_stats[(a, g)] = (point, lo, hi)
    return AggregateReport(agents, tasks, list(groups), task_stats, group_stats, n_resamples, level, budgets[0])
