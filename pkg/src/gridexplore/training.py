"""Asynchronous rollout collection and PPO training for the goal policy.

Each agent owns a cache of macro-level transitions; decision points close the
previous transition with the rewards accumulated since, caches flush into a
buffer between batches, and advantages bridge variable-length macros with
gamma raised to the macro's atomic step count.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .engine import (
    DecisionContext,
    DelayModel,
    EngineConfig,
    EpisodeResult,
    run_episode,
)
from .geometry import Cell
from .metrics import RewardConfig, acs, time_to_coverage
from .policy import (
    PolicyConfig,
    PolicyParams,
    actor_forward,
    critic_forward,
    actor_backward,
    critic_backward,
    d_logits_entropy,
    d_logits_log_prob,
    entropy,
    goal_cell_for_index,
    grads_to_vector,
    init_params,
    load_checkpoint,
    log_prob,
    sample_goal_index,
    save_checkpoint,
)
from .sources import BaseSource, gather_critic_inputs, gather_policy_inputs
from .worldgen import MapSpec, generate_map, spawn_agents


class NonFiniteLoss(RuntimeError):
    """A loss or gradient went non-finite; the update was aborted."""


class IncompleteTransition(RuntimeError):
    """A cache's last entry cannot be closed or bootstrapped."""


@dataclass
class MacroTransition:
    agent_id: int
    episode_id: int
    macro_index: int
    obs_own: np.ndarray
    obs_peers: list[np.ndarray]
    critic_own: np.ndarray
    critic_peers: list[np.ndarray]
    action_index: int
    goal: Cell
    log_prob_old: float
    value_old: float
    r_tau: float
    delta_steps: int
    next_critic_own: np.ndarray | None = None
    next_critic_peers: list[np.ndarray] | None = None
    terminal: bool = False
    bootstrap_value: float | None = None
    incomplete: bool = False


@dataclass
class TransitionCache:
    agent_id: int
    entries: list[MacroTransition] = field(default_factory=list)


def cache_push(cache: TransitionCache, transition: MacroTransition) -> None:
    cache.entries.append(transition)


@dataclass
class TransitionSequence:
    agent_id: int
    episode_id: int
    transitions: list[MacroTransition]


@dataclass
class ReplayBuffer:
    sequences: list[TransitionSequence] = field(default_factory=list)

    def __len__(self) -> int:
        return sum(len(s.transitions) for s in self.sequences)

    def flat_transitions(self) -> list[MacroTransition]:
        return [t for s in self.sequences for t in s.transitions]


def flush_caches(caches: list[TransitionCache]) -> ReplayBuffer:
    """Move every cached transition into a buffer, split into per-episode
    sequences with the per-agent order preserved; caches are emptied."""
    buffer = ReplayBuffer()
    for cache in caches:
        current: list[MacroTransition] = []
        for tr in cache.entries:
            if current and tr.episode_id != current[-1].episode_id:
                buffer.sequences.append(
                    TransitionSequence(cache.agent_id, current[-1].episode_id, current)
                )
                current = []
            current.append(tr)
        if current:
            buffer.sequences.append(
                TransitionSequence(cache.agent_id, current[-1].episode_id, current)
            )
        cache.entries = []
    for seq in buffer.sequences:
        last = seq.transitions[-1]
        if not last.terminal and last.bootstrap_value is None:
            if last.next_critic_own is None:
                raise IncompleteTransition(
                    f"agent {seq.agent_id} episode {seq.episode_id}: last "
                    "transition has no successor observation to bootstrap from"
                )
            last.incomplete = True
    return buffer


def accumulate_macro_reward(atomic_rewards: list[tuple[int, float]],
                            gamma: float) -> float:
    """Discounted sum of rewards collected during one macro, offsets counted
    in the receiving agent's own atomic steps."""
    return float(sum(r * gamma ** t for t, r in atomic_rewards))


def compute_gae(transitions: list[MacroTransition], gamma: float, lam: float,
                bootstrap_value: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns for one agent's episode sequence.

    delta_b = R_b + gamma^{steps_b} * V(s_b) - V(s_{b-1}); the backward
    accumulation decays by (gamma * lam)^{steps_b}.
    """
    n = len(transitions)
    adv = np.zeros(n)
    values = np.array([t.value_old for t in transitions])
    next_values = np.empty(n)
    next_values[:-1] = values[1:]
    next_values[-1] = 0.0 if transitions[-1].terminal else bootstrap_value
    if any(t.terminal for t in transitions[:-1]):
        raise ValueError("terminal transition before the end of a sequence")
    carry = 0.0
    for i in range(n - 1, -1, -1):
        t = transitions[i]
        delta = t.r_tau + gamma ** t.delta_steps * next_values[i] - values[i]
        carry = delta + (gamma * lam) ** t.delta_steps * carry
        adv[i] = carry
    return adv, adv + values


@dataclass
class TrainHyper:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    grad_clip_norm: float = 10.0
    huber_delta: float = 10.0
    adam_eps: float = 1e-5
    weight_decay: float = 0.0
    lr: float = 2.5e-5
    clip_eps: float = 0.2
    ppo_epochs: int = 3
    minibatches: int = 1
    entropy_coeff: float = 0.01
    value_coeff: float = 1.0
    reward_normalization: bool = True
    feature_normalization: bool = True
    macro_discounting: bool = True  # False forces delta_steps == 1 in GAE


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: PolicyParams) -> "AdamState":
        return cls(
            m={n: np.zeros_like(params[n]) for n in params.param_names()},
            v={n: np.zeros_like(params[n]) for n in params.param_names()},
        )


@dataclass
class UpdateReport:
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    clip_fraction: float


def _huber(err: float, delta: float) -> tuple[float, float]:
    """Value and derivative of the Huber loss at err."""
    if abs(err) <= delta:
        return 0.5 * err * err, err
    return delta * (abs(err) - 0.5 * delta), delta * math.copysign(1.0, err)


def ppo_update(buffer: ReplayBuffer, params: PolicyParams, cfg: PolicyConfig,
               hyper: TrainHyper, adam: AdamState, rng: np.random.Generator,
               advantages: np.ndarray, returns: np.ndarray) -> UpdateReport:
    """Clipped-surrogate PPO over the flattened buffer; mutates params and
    adam in place. Raises NonFiniteLoss (restoring params) on numerical
    blowup."""
    transitions = buffer.flat_transitions()
    n = len(transitions)
    if n == 0:
        raise ValueError("empty buffer")
    if advantages.shape != (n,) or returns.shape != (n,):
        raise ValueError("advantage/return arrays must match the buffer")
    backup = params.copy()
    adam_backup = AdamState(
        m={k: v.copy() for k, v in adam.m.items()},
        v={k: v.copy() for k, v in adam.v.items()},
        t=adam.t,
    )
    policy_losses: list[float] = []
    value_losses: list[float] = []
    entropies: list[float] = []
    grad_norms: list[float] = []
    clipped = 0
    try:
        for _ in range(hyper.ppo_epochs):
            perm = rng.permutation(n)
            chunks = np.array_split(perm, hyper.minibatches)
            for chunk in chunks:
                if chunk.size == 0:
                    continue
                grads = params.grad_zeros()
                scale = 1.0 / chunk.size
                for idx in chunk:
                    tr = transitions[idx]
                    a = advantages[idx]
                    fwd = actor_forward(tr.obs_own, tr.obs_peers, params, cfg)
                    lp = log_prob(fwd.dist, tr.action_index)
                    ratio = math.exp(lp - tr.log_prob_old)
                    surr1 = ratio * a
                    surr2 = float(np.clip(ratio, 1 - hyper.clip_eps,
                                          1 + hyper.clip_eps)) * a
                    policy_losses.append(-min(surr1, surr2))
                    ent = entropy(fwd.dist)
                    entropies.append(ent)
                    if surr1 <= surr2:
                        d_lp = -a * ratio
                    else:
                        d_lp = 0.0
                        clipped += 1
                    d_logits = scale * (
                        d_lp * d_logits_log_prob(fwd.dist.probs, tr.action_index)
                        - hyper.entropy_coeff * d_logits_entropy(fwd.dist.probs)
                    )
                    actor_backward(fwd, d_logits, params, grads)
                    cfwd = critic_forward(tr.critic_own, tr.critic_peers,
                                          params, cfg)
                    vloss, dverr = _huber(cfwd.value - returns[idx],
                                          hyper.huber_delta)
                    value_losses.append(vloss)
                    critic_backward(cfwd, scale * hyper.value_coeff * dverr,
                                    params, grads)
                flat = grads_to_vector(params, grads)
                if not np.all(np.isfinite(flat)):
                    raise NonFiniteLoss("non-finite gradient")
                norm = float(np.linalg.norm(flat))
                grad_norms.append(norm)
                if norm > hyper.grad_clip_norm:
                    factor = hyper.grad_clip_norm / norm
                    for g in grads.values():
                        g *= factor
                _adam_step(params, grads, adam, hyper)
        losses = policy_losses + value_losses
        if not all(math.isfinite(v) for v in losses):
            raise NonFiniteLoss("non-finite loss")
    except NonFiniteLoss:
        params.values = backup.values
        adam.m, adam.v, adam.t = adam_backup.m, adam_backup.v, adam_backup.t
        raise
    return UpdateReport(
        policy_loss=float(np.mean(policy_losses)),
        value_loss=float(np.mean(value_losses)),
        entropy=float(np.mean(entropies)),
        grad_norm=float(np.mean(grad_norms)),
        clip_fraction=clipped / max(1, len(policy_losses)),
    )


def _adam_step(params: PolicyParams, grads: dict[str, np.ndarray],
               adam: AdamState, hyper: TrainHyper,
               beta1: float = 0.9, beta2: float = 0.999) -> None:
    adam.t += 1
    for name in params.param_names():
        g = grads[name]
        if hyper.weight_decay > 0.0:
            g = g + hyper.weight_decay * params[name]
        adam.m[name] = beta1 * adam.m[name] + (1 - beta1) * g
        adam.v[name] = beta2 * adam.v[name] + (1 - beta2) * g * g
        m_hat = adam.m[name] / (1 - beta1 ** adam.t)
        v_hat = adam.v[name] / (1 - beta2 ** adam.t)
        params.values[name] = params[name] - hyper.lr * m_hat / (
            np.sqrt(v_hat) + hyper.adam_eps
        )


# ---- running statistics ----


@dataclass
class RunningStat:
    count: float = 0.0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, value: float) -> None:
        self.count += 1
        d = value - self.mean
        self.mean += d / self.count
        self.m2 += d * (value - self.mean)

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return math.sqrt(self.m2 / self.count)


@dataclass
class RunningChannelStat:
    """Per-channel Welford statistics over pooled observation cells."""

    count: float = 0.0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(7))
    m2: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def update(self, pooled: np.ndarray) -> None:
        flat = pooled.reshape(pooled.shape[0], -1)
        n_b = flat.shape[1]
        mean_b = flat.mean(axis=1)
        m2_b = ((flat - mean_b[:, None]) ** 2).sum(axis=1)
        if self.count == 0:
            self.count = n_b
            self.mean = mean_b
            self.m2 = m2_b
            return
        total = self.count + n_b
        d = mean_b - self.mean
        self.mean = self.mean + d * (n_b / total)
        self.m2 = self.m2 + m2_b + d * d * (self.count * n_b / total)
        self.count = total

    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return self.m2 / self.count


# ---- collection source ----


@dataclass
class _Pending:
    obs_own: np.ndarray
    obs_peers: list[np.ndarray]
    critic_own: np.ndarray
    critic_peers: list[np.ndarray]
    action_index: int
    goal: Cell
    log_prob: float
    value: float
    macro_index: int


class PolicyTrainSource(BaseSource):
    """Samples goals from the current policy and records macro transitions
    into per-agent caches."""

    def __init__(self, params: PolicyParams, cfg: PolicyConfig,
                 hyper: TrainHyper, n_agents: int):
        self.params = params
        self.cfg = cfg
        self.hyper = hyper
        self.caches = [TransitionCache(i) for i in range(n_agents)]
        self.pending: dict[int, _Pending] = {}
        self.episode_id = -1
        self.decisions = 0
        self.reward_stat = RunningStat()
        self.feature_stat = RunningChannelStat()

    def begin_episode(self, grid, n_agents, rng) -> None:
        self.episode_id += 1
        self.pending = {}

    def _close(self, ctx: DecisionContext, agent_id: int,
               next_critic: tuple[np.ndarray, list[np.ndarray]] | None,
               terminal: bool, bootstrap: float | None) -> None:
        pend = self.pending.pop(agent_id, None)
        if pend is None:
            return
        r_tau = accumulate_macro_reward(ctx.rewards_since_last, self.hyper.gamma)
        self.reward_stat.update(r_tau)
        tr = MacroTransition(
            agent_id=agent_id,
            episode_id=self.episode_id,
            macro_index=pend.macro_index,
            obs_own=pend.obs_own,
            obs_peers=pend.obs_peers,
            critic_own=pend.critic_own,
            critic_peers=pend.critic_peers,
            action_index=pend.action_index,
            goal=pend.goal,
            log_prob_old=pend.log_prob,
            value_old=pend.value,
            r_tau=r_tau,
            delta_steps=ctx.steps_since_last,
            next_critic_own=None if next_critic is None else next_critic[0],
            next_critic_peers=None if next_critic is None else next_critic[1],
            terminal=terminal,
            bootstrap_value=bootstrap,
        )
        cache_push(self.caches[agent_id], tr)

    def choose_goal(self, ctx: DecisionContext) -> Cell:
        own, peers = gather_policy_inputs(ctx, self.cfg)
        critic_own, critic_peers = gather_critic_inputs(ctx, ctx.agent_id, self.cfg)
        self._close(ctx, ctx.agent_id, (critic_own, critic_peers),
                    terminal=False, bootstrap=None)
        if self.hyper.feature_normalization:
            self.feature_stat.update(own)
        fwd = actor_forward(own, peers, self.params, self.cfg)
        cfwd = critic_forward(critic_own, critic_peers, self.params, self.cfg)
        index = sample_goal_index(fwd.dist, ctx.rng)
        goal = goal_cell_for_index(index, self.cfg.g,
                                   (ctx.grid.width, ctx.grid.height))
        self.pending[ctx.agent_id] = _Pending(
            obs_own=own, obs_peers=peers,
            critic_own=critic_own, critic_peers=critic_peers,
            action_index=index, goal=goal,
            log_prob=log_prob(fwd.dist, index), value=cfwd.value,
            macro_index=ctx.decision_index,
        )
        self.decisions += 1
        return goal

    def agent_lost(self, ctx: DecisionContext) -> None:
        self._close(ctx, ctx.agent_id, None, terminal=True, bootstrap=0.0)

    def end_episode(self, contexts: list[DecisionContext]) -> None:
        for ctx in contexts:
            if ctx.agent_id not in self.pending:
                continue
            if ctx.terminal:
                self._close(ctx, ctx.agent_id, None, terminal=True, bootstrap=0.0)
            else:
                critic = gather_critic_inputs(ctx, ctx.agent_id, self.cfg)
                boot = critic_forward(critic[0], critic[1], self.params,
                                      self.cfg).value
                self._close(ctx, ctx.agent_id, critic, terminal=False,
                            bootstrap=boot)

    def sync_feature_stats(self) -> None:
        if not self.hyper.feature_normalization or self.feature_stat.count < 2:
            return
        self.params.values["feat_mean"] = self.feature_stat.mean.copy()
        self.params.values["feat_var"] = self.feature_stat.variance().copy()
        self.params.values["feat_count"] = np.array([self.feature_stat.count])


# ---- the training loop ----


@dataclass
class TrainConfig:
    map_spec: MapSpec = field(default_factory=MapSpec)
    n_agents: int = 2
    policy: PolicyConfig | None = None  # default: built from map size
    hyper: TrainHyper = field(default_factory=TrainHyper)
    step_max: int = 200_000
    batch_episodes: int = 16
    eval_every: int = 10  # batches; 0 disables
    eval_episodes: int = 20
    seed: int = 0
    t_max: float = 100.0
    reward: RewardConfig = field(default_factory=RewardConfig)
    delay: DelayModel = field(default_factory=lambda: DelayModel(3, 5, True))
    out_dir: str | None = None
    resume_from: str | None = None  # checkpoint path; continues step count

    def resolved_policy(self) -> PolicyConfig:
        if self.policy is not None:
            return self.policy
        size = max(self.map_spec.width, self.map_spec.height)
        return PolicyConfig(s=size)


CURVE_COLUMNS = ["batch", "steps", "mean_time", "mean_acs", "policy_loss",
                 "value_loss", "entropy", "grad_norm"]
EVAL_COLUMNS = ["batch", "steps", "eval_time", "eval_acs"]


@dataclass
class TrainResult:
    params: PolicyParams
    cfg: PolicyConfig
    curves: list[dict]
    eval_rows: list[dict]
    total_steps: int


def train(config: TrainConfig) -> TrainResult:
    """Alternate batches of asynchronous delay-randomized episodes with PPO
    updates until step_max macro decisions have been collected."""
    pcfg = config.resolved_policy()
    root = np.random.SeedSequence(config.seed)
    init_seq, episode_seq, update_seq, eval_seq = root.spawn(4)
    if config.resume_from:
        params, pcfg = load_checkpoint(config.resume_from)
    else:
        params = init_params(pcfg, np.random.default_rng(init_seq))
    adam = AdamState.zeros(params)
    update_rng = np.random.default_rng(update_seq)
    source = PolicyTrainSource(params, pcfg, config.hyper, config.n_agents)
    curves: list[dict] = []
    eval_rows: list[dict] = []
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    batch = 0
    episode_counter = 0
    if config.resume_from:
        batch, eval_rows = _resume_state(config.resume_from, params, source,
                                         curves)
        episode_counter = batch * config.batch_episodes
    while source.decisions < config.step_max:
        batch += 1
        times: list[float] = []
        scores: list[float] = []
        for _ in range(config.batch_episodes):
            result = _run_train_episode(config, pcfg, source, episode_seq,
                                        episode_counter)
            episode_counter += 1
            t = time_to_coverage(result.log.events,
                                 config.reward.success_threshold)
            times.append(min(t, config.t_max))
            scores.append(acs(result.log.events, config.t_max))
            if source.decisions >= config.step_max:
                break
        buffer = flush_caches(source.caches)
        if len(buffer) == 0:
            continue
        advantages, returns = _prepare_batch(buffer, config.hyper, source)
        report = ppo_update(buffer, params, pcfg, config.hyper, adam,
                            update_rng, advantages, returns)
        source.sync_feature_stats()
        curves.append({
            "batch": batch,
            "steps": source.decisions,
            "mean_time": float(np.mean(times)) if times else math.nan,
            "mean_acs": float(np.mean(scores)) if scores else math.nan,
            "policy_loss": report.policy_loss,
            "value_loss": report.value_loss,
            "entropy": report.entropy,
            "grad_norm": report.grad_norm,
        })
        if config.eval_every and batch % config.eval_every == 0:
            eval_time, eval_acs = evaluate_policy(
                params, pcfg, config, eval_seq, config.eval_episodes
            )
            eval_rows.append({
                "batch": batch, "steps": source.decisions,
                "eval_time": eval_time, "eval_acs": eval_acs,
            })
            if out_dir:
                save_checkpoint(params, pcfg,
                                out_dir / f"checkpoint_{batch:05d}.bin")
                _write_curves(out_dir / "curves.csv", curves)
                _write_rows(out_dir / "eval.csv", EVAL_COLUMNS, eval_rows)
    if out_dir:
        save_checkpoint(params, pcfg, out_dir / "checkpoint_final.bin")
        _write_curves(out_dir / "curves.csv", curves)
        _write_rows(out_dir / "eval.csv", EVAL_COLUMNS, eval_rows)
    return TrainResult(params=params, cfg=pcfg, curves=curves,
                       eval_rows=eval_rows, total_steps=source.decisions)


def evaluate_policy(params: PolicyParams, pcfg: PolicyConfig,
                    config: TrainConfig, eval_seq: np.random.SeedSequence,
                    episodes: int) -> tuple[float, float]:
    """Mean time-to-threshold and ACS of the deterministic policy over fresh
    maps, without action delays."""
    from .sources import PolicySource

    source = PolicySource(params=params, cfg=pcfg, deterministic=True)
    times = []
    scores = []
    for i in range(episodes):
        child = np.random.SeedSequence(
            entropy=eval_seq.entropy,
            spawn_key=tuple(eval_seq.spawn_key) + (i,),
        )
        map_seed, spawn_seed, engine_seed = child.generate_state(3)
        grid = generate_map(replace(config.map_spec, seed=int(map_seed)))
        spawns = spawn_agents(grid, config.n_agents, int(spawn_seed))
        engine_cfg = EngineConfig(
            mode="async", reward=config.reward, t_max=config.t_max,
            seed=int(engine_seed),
        )
        result = run_episode(grid, spawns, source, engine_cfg)
        t = time_to_coverage(result.log.events, config.reward.success_threshold)
        times.append(min(t, config.t_max))
        scores.append(acs(result.log.events, config.t_max))
    return float(np.mean(times)), float(np.mean(scores))


def _resume_state(checkpoint_path: str, params: PolicyParams,
                  source: PolicyTrainSource,
                  curves: list[dict]) -> tuple[int, list[dict]]:
    """Restore batch/step counters, curve history, and feature statistics
    from a previous run's output directory. Optimizer moments restart."""
    resume_dir = Path(checkpoint_path).parent
    batch = 0
    eval_rows: list[dict] = []
    curves_path = resume_dir / "curves.csv"
    if curves_path.exists():
        with open(curves_path, newline="") as fh:
            for row in csv.DictReader(fh):
                curves.append({
                    "batch": int(row["batch"]),
                    "steps": int(row["steps"]),
                    **{k: float(row[k]) for k in CURVE_COLUMNS[2:]},
                })
        if curves:
            batch = curves[-1]["batch"]
            source.decisions = curves[-1]["steps"]
    eval_path = resume_dir / "eval.csv"
    if eval_path.exists():
        with open(eval_path, newline="") as fh:
            for row in csv.DictReader(fh):
                eval_rows.append({
                    "batch": int(row["batch"]),
                    "steps": int(row["steps"]),
                    "eval_time": float(row["eval_time"]),
                    "eval_acs": float(row["eval_acs"]),
                })
    count = float(params.values["feat_count"][0])
    if count >= 2:
        source.feature_stat.count = count
        source.feature_stat.mean = params.values["feat_mean"].copy()
        source.feature_stat.m2 = params.values["feat_var"] * count
    return batch, eval_rows


def _run_train_episode(config: TrainConfig, pcfg: PolicyConfig,
                       source: PolicyTrainSource,
                       episode_seq: np.random.SeedSequence,
                       index: int) -> EpisodeResult:
    child = np.random.SeedSequence(
        entropy=episode_seq.entropy,
        spawn_key=tuple(episode_seq.spawn_key) + (index,),
    )
    map_seed, spawn_seed, engine_seed = child.generate_state(3)
    grid = generate_map(replace(config.map_spec, seed=int(map_seed)))
    spawns = spawn_agents(grid, config.n_agents, int(spawn_seed))
    engine_cfg = EngineConfig(
        mode="async",
        delay=config.delay,
        reward=config.reward,
        t_max=config.t_max,
        seed=int(engine_seed),
    )
    return run_episode(grid, spawns, source, engine_cfg)


def _prepare_batch(buffer: ReplayBuffer, hyper: TrainHyper,
                   source: PolicyTrainSource) -> tuple[np.ndarray, np.ndarray]:
    """Per-sequence GAE (with optional reward normalization), then global
    advantage normalization."""
    adv_parts = []
    ret_parts = []
    scale = 1.0
    if hyper.reward_normalization:
        scale = 1.0 / max(source.reward_stat.std, 1e-6)
    for seq in buffer.sequences:
        trs = seq.transitions
        if hyper.reward_normalization or not hyper.macro_discounting:
            trs = [replace(
                t,
                r_tau=t.r_tau * scale,
                delta_steps=t.delta_steps if hyper.macro_discounting else 1,
            ) for t in trs]
        last = trs[-1]
        if last.bootstrap_value is not None:
            bootstrap = last.bootstrap_value
        elif not last.terminal and last.next_critic_own is not None:
            bootstrap = critic_forward(
                last.next_critic_own, last.next_critic_peers or [],
                source.params, source.cfg,
            ).value
        else:
            bootstrap = 0.0
        a, r = compute_gae(trs, hyper.gamma, hyper.gae_lambda, bootstrap)
        adv_parts.append(a)
        ret_parts.append(r)
    advantages = np.concatenate(adv_parts)
    returns = np.concatenate(ret_parts)
    std = advantages.std()
    if std > 1e-8:
        advantages = (advantages - advantages.mean()) / std
    else:
        advantages = advantages - advantages.mean()
    return advantages, returns


def _write_curves(path: Path, curves: list[dict]) -> None:
    _write_rows(path, CURVE_COLUMNS, curves)


def _write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
