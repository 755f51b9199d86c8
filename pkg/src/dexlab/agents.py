"""Expert-guided actor-critic (DEX), its ablations, and the baseline agents.

Variants
--------
dex      actor and critic regularised by alpha * ||pi(s) - a_e||, LWR guidance
dex_ra   actor regularised only
dex_ac   no regularisation, demonstrations in the replay mix
dex_bc   as dex, guidance from a pretrained behaviour-cloning network
ddpg     plain DDPG + HER (demonstrations only if demo_fraction > 0 and given)
ddpgbc   DDPG with a Q-filtered behaviour-cloning actor penalty on demo items
bc       supervised behaviour cloning, no environment interaction
vinn     LWR estimate used directly as the policy
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .envs import Episodes, GoalEnv, make_env
from .errors import ConfigurationError, NumericError
from .guidance import DemoDataset, Propagator, fit_bc_propagator, propagate
from .nn import (
    AdamState,
    MlpSpec,
    Network,
    adam_step,
    init_params,
    mlp_backward,
    mlp_forward,
    polyak_update,
)
from .replay import EpisodeBuffer, SampledBatch, sample_mixed

VARIANTS = ("dex", "dex_ra", "dex_ac", "dex_bc", "ddpg", "ddpgbc", "bc", "vinn")
CRITIC_REGULARISED = {"dex", "dex_bc"}
ACTOR_REGULARISED = {"dex", "dex_ra", "dex_bc"}
NEEDS_DEMOS = {"dex", "dex_ra", "dex_ac", "dex_bc", "ddpgbc", "bc", "vinn"}
OFFLINE = {"bc", "vinn"}


def coerce_numeric_fields(obj) -> None:
    """Cast values of float/int-defaulted dataclass fields (e.g. YAML '1e-3' strings)."""
    for f in fields(obj):
        value = getattr(obj, f.name)
        kind = type(f.default)
        if kind not in (float, int) or isinstance(value, bool) or value is None:
            continue
        try:
            cast = kind(float(value)) if kind is int else float(value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{f.name} must be a number, got {value!r}") from None
        if kind is int and cast != float(value):
            raise ConfigurationError(f"{f.name} must be an integer, got {value!r}")
        setattr(obj, f.name, cast)


@dataclass
class AgentConfig:
    variant: str = "dex"
    gamma: float = 0.98
    alpha: float = 5.0
    k_neighbors: int = 5
    candidate_pool: int | None = None
    noise_scale: float = 0.1
    random_action_prob: float = 0.2
    batch_size: int = 256
    demo_fraction: float = 0.25
    polyak: float = 0.95
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    relabel_prob: float = 0.8
    hidden: tuple[int, ...] = (256, 256, 256)
    updates_per_episode: int = 40
    buffer_capacity: int = 1_000_000
    clip_target: bool = True
    bc_epochs: int = 200
    eval_episodes: int = 20

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        coerce_numeric_fields(self)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        for name in ("random_action_prob", "demo_fraction", "polyak", "relabel_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class ActorCritic:
    actor_spec: MlpSpec
    critic_spec: MlpSpec
    actor: np.ndarray = field(repr=False)
    critic: np.ndarray = field(repr=False)
    target_actor: np.ndarray = field(repr=False)
    target_critic: np.ndarray = field(repr=False)
    actor_opt: AdamState = field(repr=False)
    critic_opt: AdamState = field(repr=False)

    @classmethod
    def create(cls, state_dim, action_dim, cfg: AgentConfig, rng) -> "ActorCritic":
        a_spec = MlpSpec.actor(state_dim, action_dim, cfg.hidden)
        c_spec = MlpSpec.critic(state_dim + action_dim, cfg.hidden)
        actor = init_params(a_spec, rng)
        critic = init_params(c_spec, rng)
        return cls(
            a_spec,
            c_spec,
            actor,
            critic,
            actor.copy(),
            critic.copy(),
            AdamState.zeros(a_spec.n_params, cfg.actor_lr),
            AdamState.zeros(c_spec.n_params, cfg.critic_lr),
        )

    @property
    def action_dim(self):
        return self.actor_spec.out_dim

    def policy(self, states) -> np.ndarray:
        return mlp_forward(self.actor_spec, self.actor, states)[0]

    def q(self, states, actions, target=False) -> np.ndarray:
        params = self.target_critic if target else self.critic
        return mlp_forward(self.critic_spec, params, np.concatenate([states, actions], axis=-1))[0][..., 0]


def distance(a, a_e) -> np.ndarray:
    """L2 distance between actions along the last axis."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(a_e, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def distance_grad(a, a_e) -> np.ndarray:
    """Gradient of the L2 distance w.r.t. ``a``; subgradient 0 where a == a_e."""
    diff = np.asarray(a) - np.asarray(a_e)
    d = np.sqrt(np.sum(diff * diff, axis=-1, keepdims=True))
    safe = np.where(d > 0, d, 1.0)
    return np.where(d > 0, diff / safe, 0.0)


def select_action(ac: ActorCritic, state, explore: bool, rng, cfg: AgentConfig) -> np.ndarray:
    a = ac.policy(state)
    if not explore:
        return np.clip(a, -1.0, 1.0)
    a = a + cfg.noise_scale * rng.standard_normal(a.shape)
    a = np.clip(a, -1.0, 1.0)
    random_a = rng.uniform(-1.0, 1.0, a.shape)
    use_random = rng.random(a.shape[:-1] + (1,)) < cfg.random_action_prob
    return np.where(use_random, random_a, a)


def target_bounds(cfg: AgentConfig, action_dim: int) -> tuple[float, float]:
    """Range of regularised returns for -1/0 sparse rewards."""
    d_max = 2.0 * np.sqrt(action_dim)
    reg = cfg.gamma * cfg.alpha * d_max if cfg.variant in CRITIC_REGULARISED else 0.0
    if cfg.gamma >= 1.0:
        return -np.inf, 0.0
    return -(1.0 + reg) / (1.0 - cfg.gamma), 0.0


def critic_target(ac: ActorCritic, batch: SampledBatch, cfg: AgentConfig, propagator=None, rng=None, sparse=True):
    s2 = batch.next_states
    a2 = ac_policy_target(ac, s2)
    q2 = ac.q(s2, a2, target=True)
    if cfg.variant in CRITIC_REGULARISED:
        if propagator is None:
            raise ConfigurationError(f"variant {cfg.variant} needs a guidance propagator")
        a2_e = propagate(propagator, s2, rng)
        v2 = q2 - cfg.alpha * distance(a2, a2_e)
    else:
        v2 = q2
    y = batch.rewards + cfg.gamma * v2
    if cfg.clip_target and sparse:
        lo, hi = target_bounds(cfg, ac.action_dim)
        y = np.clip(y, lo, hi)
    return y


def ac_policy_target(ac: ActorCritic, states) -> np.ndarray:
    return mlp_forward(ac.actor_spec, ac.target_actor, states)[0]


def critic_loss_and_grad(ac: ActorCritic, critic_params, states, actions, y):
    x = np.concatenate([states, actions], axis=1)
    q, cache = mlp_forward(ac.critic_spec, critic_params, x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    grads, _ = mlp_backward(ac.critic_spec, cache, (2.0 / len(y)) * err[:, None])
    return loss, grads


def critic_update(ac: ActorCritic, batch: SampledBatch, cfg: AgentConfig, propagator=None, rng=None, sparse=True):
    """One Adam step on the critic; returns the pre-step loss."""
    y = critic_target(ac, batch, cfg, propagator, rng, sparse)
    loss, grads = critic_loss_and_grad(ac, ac.critic, batch.states, batch.actions, y)
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite critic loss at optimiser step {ac.critic_opt.step_count}; "
            f"batch has {int(batch.from_demo.sum())} demo / {int((~batch.from_demo).sum())} agent items"
        )
    ac.critic, ac.critic_opt = adam_step(ac.critic, grads, ac.critic_opt)
    return loss


def expert_actions_for_actor(batch: SampledBatch, cfg: AgentConfig, propagator, rng) -> np.ndarray:
    """Stored actions for demo items, propagated estimates for agent items."""
    a_e = batch.actions.copy()
    agent_items = ~batch.from_demo
    if agent_items.any():
        if propagator is None:
            raise ConfigurationError(f"variant {cfg.variant} needs a guidance propagator")
        a_e[agent_items] = propagate(propagator, batch.states[agent_items], rng)
    return a_e


def actor_objective_and_grad(ac: ActorCritic, actor_params, states, a_e, cfg: AgentConfig, demo_mask=None):
    """Mean objective to maximise and the gradient of its negation w.r.t. actor params."""
    B = len(states)
    a, a_cache = mlp_forward(ac.actor_spec, actor_params, states)
    q, q_cache = mlp_forward(ac.critic_spec, ac.critic, np.concatenate([states, a], axis=1))
    _, dq_dx = mlp_backward(ac.critic_spec, q_cache, np.full((B, 1), 1.0 / B))
    dq_da = dq_dx[:, states.shape[1] :]
    objective = float(np.mean(q))
    g = -dq_da  # d(-objective)/da
    if cfg.variant in ACTOR_REGULARISED:
        objective -= cfg.alpha * float(np.mean(distance(a, a_e)))
        g = g + (cfg.alpha / B) * distance_grad(a, a_e)
    elif cfg.variant == "ddpgbc" and demo_mask is not None and demo_mask.any():
        q_e = ac.q(states, a_e)
        keep = demo_mask & (q_e > q[:, 0])
        diff = np.where(keep[:, None], a - a_e, 0.0)
        objective -= cfg.alpha * float(np.sum(diff * diff)) / B
        g = g + (2.0 * cfg.alpha / B) * diff
    grads, _ = mlp_backward(ac.actor_spec, a_cache, g)
    return objective, grads


def actor_update(ac: ActorCritic, batch: SampledBatch, cfg: AgentConfig, propagator=None, rng=None):
    """One Adam ascent step on the actor; returns the pre-step objective."""
    states = batch.states
    if cfg.variant in ACTOR_REGULARISED:
        a_e = expert_actions_for_actor(batch, cfg, propagator, rng)
    else:
        a_e = batch.actions
    objective, grads = actor_objective_and_grad(ac, ac.actor, states, a_e, cfg, batch.from_demo)
    if not np.isfinite(objective):
        raise NumericError(f"non-finite actor objective at optimiser step {ac.actor_opt.step_count}")
    ac.actor, ac.actor_opt = adam_step(ac.actor, grads, ac.actor_opt)
    return objective


def update_targets(ac: ActorCritic, rate: float) -> None:
    ac.target_critic = polyak_update(ac.target_critic, ac.critic, rate)
    ac.target_actor = polyak_update(ac.target_actor, ac.actor, rate)


# evaluation ------------------------------------------------------------------


def evaluate(policy, env_name: str, episodes: int, seed: int, env_kwargs=None) -> np.ndarray:
    """Run ``episodes`` deterministic episodes in lock-step; success at final step."""
    env_kwargs = env_kwargs or {}
    envs = [make_env(env_name, **env_kwargs) for _ in range(episodes)]
    seeds = np.random.SeedSequence(seed).generate_state(episodes)
    states = np.stack([env.reset(int(s)).flat() for env, s in zip(envs, seeds)])
    success = np.zeros(episodes, dtype=bool)
    for _ in range(envs[0].spec.horizon):
        actions = np.clip(policy(states), -1.0, 1.0)
        for i, env in enumerate(envs):
            res = env.step(actions[i])
            states[i] = res.next_observation.flat()
            success[i] = res.success
    return success


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (step, critic_loss, actor_objective, eval_success)
    seconds: list = field(default_factory=list)

    HEADER = ("step", "critic_loss", "actor_objective", "eval_success")

    def append(self, step, critic_loss, actor_objective, eval_success, seconds):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError("log steps must increase")
        self.rows.append((int(step), float(critic_loss), float(actor_objective), float(eval_success)))
        self.seconds.append(float(seconds))

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)]
        lines += [f"{s},{c!r},{a!r},{e!r}" for s, c, a, e in self.rows]
        return "\n".join(lines) + "\n"

    def timing_csv(self) -> str:
        """Wall-clock per row, kept apart from the metrics so those stay reproducible."""
        lines = ["step,seconds"] + [f"{r[0]},{t:.3f}" for r, t in zip(self.rows, self.seconds)]
        return "\n".join(lines) + "\n"


def build_propagator(cfg: AgentConfig, demos: Episodes, rng) -> Propagator | None:
    if cfg.variant in ("dex", "dex_ra", "vinn"):
        return Propagator.lwr(DemoDataset.from_episodes(demos), cfg.k_neighbors, cfg.candidate_pool)
    if cfg.variant == "dex_bc":
        return fit_bc_propagator(DemoDataset.from_episodes(demos), cfg.bc_epochs, rng, cfg.hidden)
    return None


def bc_fit(demos: Episodes, epochs: int, rng, hidden=(256, 256, 256)) -> Network:
    prop = fit_bc_propagator(DemoDataset.from_episodes(demos), epochs, rng, hidden)
    return Network(prop.bc_spec, prop.bc_params)


def vinn_policy(demos: Episodes, k: int = 5):
    prop = Propagator.lwr(DemoDataset.from_episodes(demos), k)
    return lambda states: propagate(prop, states)


def seed_streams(seed: int) -> dict:
    """Independent generator seeds for initialisation, exploration, sampling and evaluation."""
    names = ("init", "explore", "sample", "eval")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


@dataclass
class TrainResult:
    agent: ActorCritic | None
    policy: object
    log: TrainLog
    checkpoints: list = field(default_factory=list)  # (step, ActorCritic snapshot)


def _snapshot(ac: ActorCritic) -> ActorCritic:
    return ActorCritic(
        ac.actor_spec, ac.critic_spec, ac.actor.copy(), ac.critic.copy(),
        ac.target_actor.copy(), ac.target_critic.copy(), ac.actor_opt, ac.critic_opt,
    )


def train(
    env: GoalEnv,
    demos: Episodes | None,
    total_steps: int,
    eval_every: int,
    seed: int,
    cfg: AgentConfig,
    on_eval=None,
    keep_checkpoints: bool = False,
    on_checkpoint=None,
) -> TrainResult:
    """Train one agent.

    ``on_eval(step, row)`` is called after every evaluation and
    ``on_checkpoint(step, agent)`` at initialisation and after every evaluation.
    """
    spec = env.spec
    if cfg.variant in NEEDS_DEMOS and demos is None:
        raise ConfigurationError(f"variant {cfg.variant} requires demonstrations")
    if demos is not None and demos.env_name != spec.name:
        raise ConfigurationError(f"demonstrations are for {demos.env_name}, environment is {spec.name}")
    use_demos = demos is not None and (cfg.variant != "ddpg" or cfg.demo_fraction > 0)

    init_seed, explore_seed, sample_seed, eval_seed = seed_streams(seed).values()
    rng_init = np.random.default_rng(init_seed)
    rng_explore = np.random.default_rng(explore_seed)
    rng_sample = np.random.default_rng(sample_seed)
    eval_base = int(eval_seed.generate_state(1)[0])

    log = TrainLog()
    t0 = time.perf_counter()
    state_dim = spec.obs_dim + spec.goal_dim

    if cfg.variant in OFFLINE:
        if cfg.variant == "bc":
            net = bc_fit(demos, cfg.bc_epochs, rng_init, cfg.hidden)
            policy = net
        else:
            policy = vinn_policy(demos, cfg.k_neighbors)
            net = None
        if total_steps > 0:
            succ = evaluate(policy, spec.name, cfg.eval_episodes, eval_base)
            log.append(total_steps, float("nan"), float("nan"), succ.mean(), time.perf_counter() - t0)
        return TrainResult(None, policy, log)

    ac = ActorCritic.create(state_dim, spec.action_dim, cfg, rng_init)
    result = TrainResult(ac, ac.policy, log)
    if on_checkpoint is not None:
        on_checkpoint(0, ac)
    if total_steps <= 0:
        return result

    propagator = build_propagator(cfg, demos, rng_init) if demos is not None else None
    demo_buf = EpisodeBuffer.from_demonstrations(demos, env.compute_reward) if use_demos else None
    agent_buf = EpisodeBuffer(
        spec.obs_dim, spec.goal_dim, spec.action_dim, spec.horizon, cfg.buffer_capacity, "agent", env.compute_reward
    )
    demo_fraction = cfg.demo_fraction if use_demos else 0.0
    sparse = not spec.dense

    steps = 0
    next_eval = eval_every
    losses, objectives = [], []
    while steps < total_steps:
        o = env.reset(int(rng_explore.integers(2**31)))
        ep = {"obs": [o.observation], "ag": [o.achieved_goal], "g": [], "u": [], "r": []}
        for _ in range(spec.horizon):
            a = select_action(ac, o.flat(), True, rng_explore, cfg)
            ep["g"].append(o.desired_goal)
            res = env.step(a)
            o = res.next_observation
            ep["u"].append(a)
            ep["r"].append(res.reward)
            ep["obs"].append(o.observation)
            ep["ag"].append(o.achieved_goal)
        agent_buf.store_episode({k: np.asarray(v) for k, v in ep.items()})
        steps += spec.horizon

        for _ in range(cfg.updates_per_episode):
            batch = sample_mixed(agent_buf, demo_buf, cfg.batch_size, demo_fraction, cfg.relabel_prob, rng_sample)
            losses.append(critic_update(ac, batch, cfg, propagator, rng_sample, sparse))
            objectives.append(actor_update(ac, batch, cfg, propagator, rng_sample))
            update_targets(ac, cfg.polyak)

        if (eval_every > 0 and steps >= next_eval) or steps >= total_steps:
            succ = evaluate(ac.policy, spec.name, cfg.eval_episodes, eval_base)
            log.append(steps, np.mean(losses), np.mean(objectives), succ.mean(), time.perf_counter() - t0)
            losses, objectives = [], []
            while eval_every > 0 and next_eval <= steps:
                next_eval += eval_every
            if keep_checkpoints:
                result.checkpoints.append((steps, _snapshot(ac)))
            if on_checkpoint is not None:
                on_checkpoint(steps, ac)
            if on_eval is not None:
                on_eval(steps, log.rows[-1])
    result.policy = ac.policy
    return result
