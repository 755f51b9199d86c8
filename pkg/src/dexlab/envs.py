"""Goal-conditioned 2-D point-mass tasks with scripted experts.

Four tasks share one kinematic model: positions move by ``step_scale`` times
the clipped action and are clamped to the workspace.

* ``point_reach``      move the agent onto the goal (sparse reward)
* ``point_pickplace``  grasp an object and carry it to the goal (sparse)
* ``bipoint_transfer`` two agents hand an object over mid-workspace (sparse)
* ``point_track``      follow a moving target (dense reward)

Sparse rewards are -1 per step and 0 once the achieved goal is strictly
within ``success_threshold`` of the desired goal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, UsageError

DEMO_FORMAT = "dexlab-demos"
DEMO_VERSION = 1


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    goal_dim: int
    action_dim: int
    horizon: int = 50
    success_threshold: float = 0.05
    workspace: tuple[float, float] = (-1.0, 1.0)
    step_scale: float = 0.08
    dense: bool = False


@dataclass
class GoalObservation:
    observation: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray

    def flat(self) -> np.ndarray:
        """Observation concatenated with the desired goal (policy input)."""
        return np.concatenate([self.observation, self.desired_goal])


@dataclass
class StepResult:
    next_observation: GoalObservation
    reward: float
    done: bool
    success: bool


class GoalEnv:
    """Base class; subclasses fill in sampling, dynamics and the expert."""

    spec: EnvSpec

    def __init__(self, **overrides):
        if overrides:
            self.spec = EnvSpec(**{**self.spec.__dict__, **overrides})
        self.t = 0
        self.goal = np.zeros(self.spec.goal_dim)

    # -- public API ------------------------------------------------------
    def reset(self, seed: int) -> GoalObservation:
        rng = np.random.default_rng(seed)
        self.t = 0
        for _ in range(10_000):
            self._sample(rng)
            if np.linalg.norm(self._achieved() - self.goal) >= 2 * self.spec.success_threshold:
                break
        return self.observe()

    def step(self, action) -> StepResult:
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.spec.action_dim,):
            raise UsageError(f"action of shape {a.shape}, expected ({self.spec.action_dim},)")
        a = np.clip(a, -1.0, 1.0)
        # scored against the goal the transition was taken under (the tracking target moves)
        goal = self.goal.copy()
        self._advance(a)
        self.t += 1
        obs = self.observe()
        reward = float(self.compute_reward(obs.achieved_goal, goal))
        success = bool(self.is_success(obs.achieved_goal, goal))
        return StepResult(obs, reward, self.t >= self.spec.horizon, success)

    def compute_reward(self, achieved_goal, desired_goal):
        """Vectorised over leading axes."""
        d = np.linalg.norm(np.asarray(achieved_goal) - np.asarray(desired_goal), axis=-1)
        if self.spec.dense:
            return -d
        return -(d >= self.spec.success_threshold).astype(np.float64)

    def is_success(self, achieved_goal, desired_goal):
        d = np.linalg.norm(np.asarray(achieved_goal) - np.asarray(desired_goal), axis=-1)
        return d < self.spec.success_threshold

    def observe(self) -> GoalObservation:
        return GoalObservation(self._obs(), self._achieved().copy(), self.goal.copy())

    def expert_action(self) -> np.ndarray:
        return np.clip(self._expert(), -1.0, 1.0)

    # -- helpers ---------------------------------------------------------
    def _clamp(self, p, lo=None, hi=None):
        lo = self.spec.workspace[0] if lo is None else lo
        hi = self.spec.workspace[1] if hi is None else hi
        return np.clip(p, lo, hi)

    def _toward(self, pos, waypoint):
        return np.clip((waypoint - pos) / self.spec.step_scale, -1.0, 1.0)

    def _sample(self, rng):
        raise NotImplementedError

    def _advance(self, a):
        raise NotImplementedError

    def _obs(self):
        raise NotImplementedError

    def _achieved(self):
        raise NotImplementedError

    def _expert(self):
        raise NotImplementedError


class PointReach(GoalEnv):
    spec = EnvSpec("point_reach", obs_dim=2, goal_dim=2, action_dim=2)

    def _sample(self, rng):
        self.agent = rng.uniform(-0.8, 0.8, 2)
        self.goal = rng.uniform(-0.8, 0.8, 2)

    def _advance(self, a):
        self.agent = self._clamp(self.agent + self.spec.step_scale * a)

    def _obs(self):
        return self.agent.copy()

    def _achieved(self):
        return self.agent

    def _expert(self):
        return self._toward(self.agent, self.goal)


class PointPickPlace(GoalEnv):
    """Observation: agent xy, object xy, grasp flag. Action: dx, dy, grip.

    The object attaches when grip < 0 and the agent is strictly within the
    success threshold of it; it is released as soon as grip >= 0.
    """

    spec = EnvSpec("point_pickplace", obs_dim=5, goal_dim=2, action_dim=3)

    def _sample(self, rng):
        self.agent = rng.uniform(-0.8, 0.8, 2)
        self.obj = rng.uniform(-0.8, 0.8, 2)
        self.goal = rng.uniform(-0.8, 0.8, 2)
        self.held = False

    def _advance(self, a):
        grip = a[2]
        if self.held and grip >= 0:
            self.held = False
        self.agent = self._clamp(self.agent + self.spec.step_scale * a[:2])
        if self.held:
            self.obj = self.agent.copy()
        elif grip < 0 and np.linalg.norm(self.agent - self.obj) < self.spec.success_threshold:
            self.held = True
            self.obj = self.agent.copy()

    def _obs(self):
        return np.concatenate([self.agent, self.obj, [float(self.held)]])

    def _achieved(self):
        return self.obj

    def _expert(self):
        thr = self.spec.success_threshold
        if self.held:
            if np.linalg.norm(self.agent - self.goal) < 0.25 * thr:
                return np.array([0.0, 0.0, 1.0])  # release
            return np.concatenate([self._toward(self.agent, self.goal), [-1.0]])
        if np.linalg.norm(self.obj - self.goal) < thr:
            return np.array([0.0, 0.0, 1.0])  # placed, idle
        grip = -1.0 if np.linalg.norm(self.agent - self.obj) < thr else 1.0
        return np.concatenate([self._toward(self.agent, self.obj), [grip]])


class BiPointTransfer(GoalEnv):
    """Two agents; A is confined to the left, B to the right of the workspace.

    Observation: A xy, B xy, object xy, A-holds flag, B-holds flag.
    Action: (dx, dy, grip) for A followed by the same for B.
    """

    spec = EnvSpec("bipoint_transfer", obs_dim=8, goal_dim=2, action_dim=6)
    overlap = 0.15

    def _sample(self, rng):
        self.a = np.array([rng.uniform(-0.8, -0.3), rng.uniform(-0.6, 0.6)])
        self.b = np.array([rng.uniform(0.3, 0.8), rng.uniform(-0.6, 0.6)])
        self.obj = np.array([rng.uniform(-0.7, -0.2), rng.uniform(-0.6, 0.6)])
        self.goal = np.array([rng.uniform(0.2, 0.7), rng.uniform(-0.6, 0.6)])
        self.holder = 0  # 0 nobody, 1 agent A, 2 agent B

    def _advance(self, act):
        lo, hi = self.spec.workspace
        ga, gb = act[2], act[5]
        if self.holder == 1 and ga >= 0 or self.holder == 2 and gb >= 0:
            self.holder = 0
        s = self.spec.step_scale
        self.a = self._clamp(self.a + s * act[0:2], lo, [self.overlap, hi])
        self.b = self._clamp(self.b + s * act[3:5], [-self.overlap, lo], hi)
        thr = self.spec.success_threshold
        if self.holder == 0:
            if ga < 0 and np.linalg.norm(self.a - self.obj) < thr:
                self.holder = 1
            elif gb < 0 and np.linalg.norm(self.b - self.obj) < thr:
                self.holder = 2
        if self.holder == 1:
            self.obj = self.a.copy()
        elif self.holder == 2:
            self.obj = self.b.copy()

    def _obs(self):
        return np.concatenate([self.a, self.b, self.obj, [float(self.holder == 1), float(self.holder == 2)]])

    def _achieved(self):
        return self.obj

    def _expert(self):
        thr = self.spec.success_threshold
        tight = 0.25 * thr
        idle = np.array([0.0, 0.0, 1.0])
        h = np.array([0.0, self.goal[1]])  # handover point: goal height, centre line
        if self.holder == 1:
            if np.linalg.norm(self.a - h) < tight and np.linalg.norm(self.b - h) < tight:
                return np.concatenate([idle, [0.0, 0.0, -1.0]])  # A lets go, B takes
            return np.concatenate([self._toward(self.a, h), [-1.0], self._toward(self.b, h), [1.0]])
        if self.holder == 2:
            if np.linalg.norm(self.b - self.goal) < tight:
                return np.concatenate([idle, idle])
            return np.concatenate([idle, self._toward(self.b, self.goal), [-1.0]])
        if np.linalg.norm(self.obj - self.goal) < thr:
            return np.concatenate([idle, idle])
        if self.obj[0] > -self.overlap:
            # free object in B's reach: B picks it up
            grip = -1.0 if np.linalg.norm(self.b - self.obj) < thr else 1.0
            return np.concatenate([idle, self._toward(self.b, self.obj), [grip]])
        grip = -1.0 if np.linalg.norm(self.a - self.obj) < thr else 1.0
        return np.concatenate([self._toward(self.a, self.obj), [grip], self._toward(self.b, h), [1.0]])


class PointTrack(GoalEnv):
    """Follow a target moving at constant speed that bounces inside [-0.8, 0.8]^2.

    Observation: agent xy and target velocity. Dense reward, scored against
    the target position at the start of the step.
    """

    spec = EnvSpec("point_track", obs_dim=4, goal_dim=2, action_dim=2, dense=True)
    bound = 0.8

    def _sample(self, rng):
        self.agent = rng.uniform(-0.8, 0.8, 2)
        self.goal = rng.uniform(-0.6, 0.6, 2)
        angle = rng.uniform(0, 2 * np.pi)
        self.vel = rng.uniform(0.01, 0.03) * np.array([np.cos(angle), np.sin(angle)])

    def _move_target(self, pos, vel):
        pos = pos + vel
        vel = vel.copy()
        for i in range(2):
            if abs(pos[i]) > self.bound:
                pos[i] = np.sign(pos[i]) * (2 * self.bound - abs(pos[i]))
                vel[i] = -vel[i]
        return pos, vel

    def _advance(self, a):
        self.agent = self._clamp(self.agent + self.spec.step_scale * a)
        self.goal, self.vel = self._move_target(self.goal, self.vel)

    def _obs(self):
        return np.concatenate([self.agent, self.vel])

    def _achieved(self):
        return self.agent

    def _expert(self):
        return self._toward(self.agent, self.goal)


ENV_REGISTRY = {
    "point_reach": PointReach,
    "point_pickplace": PointPickPlace,
    "bipoint_transfer": BiPointTransfer,
    "point_track": PointTrack,
}


def make_env(name: str, **overrides) -> GoalEnv:
    try:
        cls = ENV_REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown env {name!r}; choose from {sorted(ENV_REGISTRY)}") from None
    return cls(**overrides)


# demonstrations ------------------------------------------------------------


@dataclass
class Episodes:
    """Fixed-horizon episodes stored as stacked arrays.

    ``obs`` and ``ag`` carry horizon + 1 entries per episode, ``g``, ``u``
    and ``r`` carry horizon entries.
    """

    env_name: str
    obs: np.ndarray  # (E, T+1, obs_dim)
    ag: np.ndarray  # (E, T+1, goal_dim)
    g: np.ndarray  # (E, T, goal_dim)
    u: np.ndarray  # (E, T, action_dim)
    r: np.ndarray  # (E, T)
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_episodes(self) -> int:
        return self.obs.shape[0]

    @property
    def horizon(self) -> int:
        return self.u.shape[1]

    def subset(self, n: int) -> "Episodes":
        return Episodes(self.env_name, self.obs[:n], self.ag[:n], self.g[:n], self.u[:n], self.r[:n], self.seed)

    def states(self) -> np.ndarray:
        """Per-transition policy inputs (observation ++ desired goal), flattened."""
        s = np.concatenate([self.obs[:, :-1], self.g], axis=-1)
        return s.reshape(-1, s.shape[-1])

    def actions(self) -> np.ndarray:
        return self.u.reshape(-1, self.u.shape[-1])

    def final_success(self, env: GoalEnv) -> np.ndarray:
        return env.is_success(self.ag[:, -1], self.g[:, -1])


def rollout(env: GoalEnv, seed: int, policy=None) -> tuple[dict, bool]:
    """Run one episode; ``policy`` maps a flat state to an action, default expert."""
    o = env.reset(seed)
    T = env.spec.horizon
    ep = {
        "obs": [o.observation],
        "ag": [o.achieved_goal],
        "g": [],
        "u": [],
        "r": [],
    }
    success = False
    for _ in range(T):
        a = env.expert_action() if policy is None else np.clip(policy(o.flat()), -1.0, 1.0)
        ep["g"].append(o.desired_goal)
        res = env.step(a)
        o = res.next_observation
        ep["u"].append(a)
        ep["r"].append(res.reward)
        ep["obs"].append(o.observation)
        ep["ag"].append(o.achieved_goal)
        success = res.success
    return {k: np.asarray(v, dtype=np.float64) for k, v in ep.items()}, success


def generate_demonstrations(env: GoalEnv, episodes: int, seed: int, window: int = 50) -> Episodes:
    """Roll out the scripted expert and keep ``episodes`` successful episodes."""
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    kept, attempts, recent = [], 0, []
    while len(kept) < episodes:
        ep, ok = rollout(env, int(rng.integers(2**31)))
        attempts += 1
        recent = (recent + [ok])[-window:]
        if len(recent) == window and recent.count(False) > window // 2:
            raise RuntimeError(
                f"scripted expert on {env.spec.name} failed {recent.count(False)}/{window} recent episodes"
            )
        if ok:
            kept.append(ep)
    stacked = {k: np.stack([e[k] for e in kept]) for k in kept[0]}
    return Episodes(env.spec.name, seed=seed, meta={"attempts": attempts}, **stacked)


def save_demonstrations(path, demos: Episodes, env: GoalEnv) -> None:
    s = env.spec
    lines = [
        json.dumps(
            {
                "format": DEMO_FORMAT,
                "version": DEMO_VERSION,
                "env": demos.env_name,
                "obs_dim": s.obs_dim,
                "goal_dim": s.goal_dim,
                "action_dim": s.action_dim,
                "horizon": demos.horizon,
                "episodes": demos.n_episodes,
                "seed": demos.seed,
            }
        )
    ]
    for e in range(demos.n_episodes):
        for t in range(demos.horizon):
            rec = {
                "episode": e,
                "step": t,
                "state": demos.obs[e, t].tolist(),
                "action": demos.u[e, t].tolist(),
                "reward": float(demos.r[e, t]),
                "next_state": demos.obs[e, t + 1].tolist(),
                "achieved_goal": demos.ag[e, t].tolist(),
                "next_achieved_goal": demos.ag[e, t + 1].tolist(),
                "desired_goal": demos.g[e, t].tolist(),
            }
            lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def load_demonstrations(path) -> Episodes:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DEMO_FORMAT:
            raise ConfigurationError(f"{path}: not a demonstration file")
        if header.get("version") != DEMO_VERSION:
            raise ConfigurationError(f"{path}: unsupported demo format version {header.get('version')}")
        E, T = header["episodes"], header["horizon"]
        od, gd, ad = header["obs_dim"], header["goal_dim"], header["action_dim"]
        obs = np.zeros((E, T + 1, od))
        ag = np.zeros((E, T + 1, gd))
        g = np.zeros((E, T, gd))
        u = np.zeros((E, T, ad))
        r = np.zeros((E, T))
        n = 0
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            e, t = rec["episode"], rec["step"]
            obs[e, t] = rec["state"]
            obs[e, t + 1] = rec["next_state"]
            ag[e, t] = rec["achieved_goal"]
            ag[e, t + 1] = rec["next_achieved_goal"]
            g[e, t] = rec["desired_goal"]
            u[e, t] = rec["action"]
            r[e, t] = rec["reward"]
            n += 1
    if n != E * T:
        raise ConfigurationError(f"{path}: expected {E * T} transitions, found {n}")
    return Episodes(header["env"], obs, ag, g, u, r, header.get("seed"))
