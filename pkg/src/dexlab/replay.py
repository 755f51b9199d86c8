"""Episode replay buffers with hindsight relabelling (future strategy).

Relabelling happens at sample time; stored episodes are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Episodes, GoalObservation
from .errors import UsageError


@dataclass
class Transition:
    state: GoalObservation
    action: np.ndarray
    reward: float
    next_state: GoalObservation
    episode_id: int
    step_index: int


def episode_from_transitions(transitions: list[Transition]) -> dict:
    steps = [tr.step_index for tr in transitions]
    if steps != list(range(len(transitions))):
        raise UsageError("episode step indices must be contiguous from 0")
    return {
        "obs": np.array([tr.state.observation for tr in transitions] + [transitions[-1].next_state.observation]),
        "ag": np.array([tr.state.achieved_goal for tr in transitions] + [transitions[-1].next_state.achieved_goal]),
        "g": np.array([tr.state.desired_goal for tr in transitions]),
        "u": np.array([tr.action for tr in transitions]),
        "r": np.array([tr.reward for tr in transitions]),
    }


@dataclass
class SampledBatch:
    obs: np.ndarray
    next_obs: np.ndarray
    goals: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_achieved: np.ndarray
    from_demo: np.ndarray  # bool per item
    relabeled: np.ndarray  # bool per item

    def __len__(self):
        return len(self.rewards)

    @property
    def states(self) -> np.ndarray:
        return np.concatenate([self.obs, self.goals], axis=1)

    @property
    def next_states(self) -> np.ndarray:
        return np.concatenate([self.next_obs, self.goals], axis=1)

    @staticmethod
    def concat(a: "SampledBatch", b: "SampledBatch") -> "SampledBatch":
        return SampledBatch(*(np.concatenate([x, y]) for x, y in zip(a.__dict__.values(), b.__dict__.values())))


class EpisodeBuffer:
    """Ring buffer of fixed-horizon episodes.

    ``capacity`` counts transitions; whole episodes are evicted oldest first.
    A ``demo`` buffer is frozen once loaded.
    """

    def __init__(self, obs_dim, goal_dim, action_dim, horizon, capacity=1_000_000, role="agent", reward_fn=None):
        if role not in ("agent", "demo"):
            raise UsageError(f"unknown buffer role {role!r}")
        self.T = horizon
        self.role = role
        self.reward_fn = reward_fn
        self.max_episodes = max(1, capacity // horizon)
        self.obs = np.zeros((self.max_episodes, horizon + 1, obs_dim))
        self.ag = np.zeros((self.max_episodes, horizon + 1, goal_dim))
        self.g = np.zeros((self.max_episodes, horizon, goal_dim))
        self.u = np.zeros((self.max_episodes, horizon, action_dim))
        self.r = np.zeros((self.max_episodes, horizon))
        self.episode_ids = np.full(self.max_episodes, -1)
        self.n_episodes = 0
        self._next = 0
        self._count = 0
        self.frozen = False

    @classmethod
    def from_demonstrations(cls, demos: Episodes, reward_fn) -> "EpisodeBuffer":
        E, T = demos.n_episodes, demos.horizon
        buf = cls(demos.obs.shape[-1], demos.g.shape[-1], demos.u.shape[-1], T, E * T, "demo", reward_fn)
        for e in range(E):
            buf.store_episode({"obs": demos.obs[e], "ag": demos.ag[e], "g": demos.g[e], "u": demos.u[e], "r": demos.r[e]})
        buf.frozen = True
        return buf

    def __len__(self):
        """Number of stored transitions."""
        return self.n_episodes * self.T

    def store_episode(self, episode) -> None:
        if self.frozen:
            raise UsageError("demonstration buffer is immutable after loading")
        if isinstance(episode, list):
            episode = episode_from_transitions(episode)
        if len(episode["u"]) != self.T:
            raise UsageError(f"episode length {len(episode['u'])} != horizon {self.T}")
        i = self._next
        self.obs[i] = episode["obs"]
        self.ag[i] = episode["ag"]
        self.g[i] = episode["g"]
        self.u[i] = episode["u"]
        self.r[i] = episode["r"]
        self.episode_ids[i] = self._count
        self._count += 1
        self._next = (i + 1) % self.max_episodes
        self.n_episodes = min(self.n_episodes + 1, self.max_episodes)

    def stored_episode_ids(self) -> list[int]:
        return sorted(int(x) for x in self.episode_ids[: self.n_episodes])

    def sample_with_her(self, batch_size: int, relabel_prob: float, rng: np.random.Generator) -> SampledBatch:
        if self.n_episodes == 0:
            raise UsageError("cannot sample from an empty buffer")
        if not 0.0 <= relabel_prob <= 1.0:
            raise UsageError("relabel_prob must lie in [0, 1]")
        T = self.T
        ep = rng.integers(self.n_episodes, size=batch_size)
        t = rng.integers(T, size=batch_size)
        relabel = rng.random(batch_size) < relabel_prob
        # future index uniform over t+1 .. T (achieved goals carry T+1 entries)
        future = t + 1 + np.floor(rng.random(batch_size) * (T - t)).astype(np.int64)
        goals = self.g[ep, t].copy()
        goals[relabel] = self.ag[ep[relabel], future[relabel]]
        next_ag = self.ag[ep, t + 1]
        rewards = self.r[ep, t].copy()
        if relabel.any():
            rewards[relabel] = self.reward_fn(next_ag[relabel], goals[relabel])
        return SampledBatch(
            obs=self.obs[ep, t],
            next_obs=self.obs[ep, t + 1],
            goals=goals,
            actions=self.u[ep, t],
            rewards=rewards,
            next_achieved=next_ag,
            from_demo=np.full(batch_size, self.role == "demo"),
            relabeled=relabel,
        )


def n_demo_items(batch_size: int, demo_fraction: float) -> int:
    return int(np.floor(demo_fraction * batch_size + 0.5))


def sample_mixed(agent_buf, demo_buf, batch_size, demo_fraction, relabel_prob, rng) -> SampledBatch:
    """Demo items first, then agent items. Falls back to one side if the other is empty."""
    has_agent = agent_buf is not None and agent_buf.n_episodes > 0
    has_demo = demo_buf is not None and demo_buf.n_episodes > 0
    if not (has_agent or has_demo):
        raise UsageError("both replay buffers are empty")
    n_demo = n_demo_items(batch_size, demo_fraction) if has_demo else 0
    if not has_agent:
        n_demo = batch_size
    n_agent = batch_size - n_demo
    if n_demo == 0:
        return agent_buf.sample_with_her(n_agent, relabel_prob, rng)
    if n_agent == 0:
        return demo_buf.sample_with_her(n_demo, relabel_prob, rng)
    d = demo_buf.sample_with_her(n_demo, relabel_prob, rng)
    a = agent_buf.sample_with_her(n_agent, relabel_prob, rng)
    return SampledBatch.concat(d, a)
