"""Asynchronous advantage actor-critic on top of :mod:`obslearn.neuralnet`.

Workers share one :class:`ParameterStore`. Each segment a worker copies the
parameters, rolls its own environment forward for up to ``segment_length``
steps, computes n-step returns and the entropy-regularised actor-critic
loss, and pushes the gradient through a shared RMSProp under the store lock.
With ``workers == 1`` training runs inline and is bit-for-bit reproducible.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import neuralnet as nn
from .gridmap import GridMap
from .gridworld import EPISODE_CAP, GridWorld, ObservationSpec, World
from .metrics import EpisodeStats, MetricsSink

log = logging.getLogger(__name__)


class EmptySegment(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.99
    segment_length: int = 20
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 7e-4
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 0.1
    workers: int = 8
    total_steps: int = 200_000
    grad_clip_norm: float = 40.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.segment_length < 1 or self.workers < 1:
            raise ValueError("segment_length and workers must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        for name in ("entropy_coef", "value_coef", "learning_rate", "rmsprop_decay",
                     "rmsprop_epsilon", "grad_clip_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    value_estimate: float
    policy_prob: float
    done: bool


def nstep_returns(segment: list[Transition], gamma: float,
                  bootstrap_value: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward recursion ``R_t = r_t + gamma * R_{t+1}`` seeded with the bootstrap."""
    if not segment:
        raise EmptySegment("cannot compute returns of an empty segment")
    returns = np.empty(len(segment))
    running = float(bootstrap_value)
    for i in range(len(segment) - 1, -1, -1):
        running = segment[i].reward + gamma * running
        returns[i] = running
    values = np.array([tr.value_estimate for tr in segment])
    return returns, returns - values


def actor_critic_loss(actions: np.ndarray, returns: np.ndarray, advantages: np.ndarray,
                      trace: nn.ForwardTrace, entropy_coef: float,
                      value_coef: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed loss ``-log pi(a) A - beta H(pi) + c_v (R - V)^2`` and its head gradients.

    Advantages are constants here: nothing flows through them into the policy.
    """
    actions = np.asarray(actions, dtype=np.int64)
    t = len(actions)
    probs = trace.policy
    z = trace.logits - trace.logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    entropy = -(probs * logp).sum(axis=1)
    rows = np.arange(t)
    td = returns - trace.value
    loss = float(np.sum(-logp[rows, actions] * advantages - entropy_coef * entropy
                        + value_coef * td ** 2))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    dlogits = (probs - onehot) * advantages[:, None]
    dlogits += entropy_coef * probs * (logp + entropy[:, None])
    dvalue = -2.0 * value_coef * td
    return loss, dlogits, dvalue


@dataclass
class RMSPropState:
    mean_square: np.ndarray


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.dot(grad, grad)))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


def apply_update(params: np.ndarray, grad: np.ndarray, state: RMSPropState,
                 config: TrainConfig) -> float:
    """In-place clipped RMSProp step on the flat parameter vector; returns the raw grad norm."""
    if grad.shape != params.shape or state.mean_square.shape != params.shape:
        raise nn.ShapeMismatch(f"gradient {grad.shape} vs parameters {params.shape}")
    grad, norm = clip_by_global_norm(grad, config.grad_clip_norm)
    ms = state.mean_square
    ms *= config.rmsprop_decay
    ms += (1.0 - config.rmsprop_decay) * grad * grad
    params -= config.learning_rate * grad / np.sqrt(ms + config.rmsprop_epsilon)
    return norm


class BudgetExhausted(Exception):
    pass


class ParameterStore:
    """Shared parameters, shared RMSProp statistics and the global step counter."""

    def __init__(self, params: nn.NetworkParams, config: TrainConfig, budget: int):
        self.params = params
        self.config = config
        self.opt = RMSPropState(np.zeros_like(params.flat))
        self.budget = budget
        self.global_step = 0
        self.updates = 0
        self._lock = threading.Lock()
        self._step_lock = threading.Lock()

    def snapshot(self) -> nn.NetworkParams:
        with self._lock:
            return self.params.copy()

    def apply(self, grad: np.ndarray) -> float:
        with self._lock:
            norm = apply_update(self.params.flat, grad, self.opt, self.config)
            self.params.version += 1
            self.updates += 1
            return norm

    def reserve_step(self) -> int:
        """Claim one environment step; returns its 1-based global index."""
        with self._step_lock:
            if self.global_step >= self.budget:
                raise BudgetExhausted
            self.global_step += 1
            return self.global_step


MaskSchedule = Callable[[int], float]


@dataclass
class WorkerContext:
    level: str = ""
    variant: str = ""
    lstm: int = 0
    seed: int = 0
    step_offset: int = 0  # added to reported global steps (curriculum phases)


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(a, len(probs) - 1)


def worker_loop(worker_id: int, store: ParameterStore, env_factory: Callable[[int], GridWorld],
                config: TrainConfig, sink: MetricsSink, mask_schedule: MaskSchedule | None = None,
                context: WorkerContext | None = None, stop: threading.Event | None = None) -> int:
    """Run one worker until the shared step budget is spent; returns its step count."""
    context = context or WorkerContext()
    rng = np.random.default_rng([config.seed, worker_id, 1])
    env = env_factory(worker_id)
    mask_at = mask_schedule or (lambda _: 0.0)
    gamma = config.gamma

    obs = env.reset(mask_at(context.step_offset + store.global_step))
    params = store.snapshot()
    state = params.zero_state()
    ep_steps = 0
    my_steps = 0
    finished = False
    while not finished:
        if stop is not None and stop.is_set():
            break
        params = store.snapshot()
        seg_state = state
        observations, actions, rewards, values, probs = [], [], [], [], []
        done = False
        for _ in range(config.segment_length):
            try:
                gstep = store.reserve_step()
            except BudgetExhausted:
                finished = True
                break
            tr = nn.forward(params, obs, state)
            p = tr.policy[0]
            a = _sample(p, rng)
            state = tr.state
            next_obs, reward, done, info = env.step(a)
            observations.append(obs)
            actions.append(a)
            rewards.append(reward)
            values.append(tr.value[0])
            probs.append(p[a])
            my_steps += 1
            ep_steps += 1
            obs = next_obs
            if done:
                success = bool(info["reached_goal"])
                sink.append(EpisodeStats(
                    global_step=context.step_offset + gstep,
                    episode_index=sink.next_episode_index(),
                    steps_to_goal=ep_steps if success else EPISODE_CAP,
                    success=success,
                    discounted_return=gamma ** (ep_steps - 1) if success else 0.0,
                    level=context.level, variant=context.variant,
                    lstm=context.lstm, seed=context.seed))
                ep_steps = 0
                obs = env.reset(mask_at(context.step_offset + gstep))
                break
        if not observations:
            break
        segment = [Transition(o, a, r, v, p, False) for o, a, r, v, p in
                   zip(observations, actions, rewards, values, probs)]
        segment[-1].done = done
        if done:
            bootstrap = 0.0
            state = params.zero_state()
        else:
            bootstrap = float(nn.forward(params, obs, state).value[0])
        returns, advantages = nstep_returns(segment, gamma, bootstrap)
        trace = nn.forward(params, np.stack(observations), seg_state)
        _, dlogits, dvalue = actor_critic_loss(np.array(actions), returns, advantages, trace,
                                               config.entropy_coef, config.value_coef)
        grad = nn.backward(trace, params, dlogits, dvalue)
        store.apply(grad)
    return my_steps


def network_specs(spec: ObservationSpec, lstm: int = 0, conv_channels: int = 16,
                  dense_units: int = 128) -> list[nn.LayerSpec]:
    if spec.view == "local":
        return nn.local_view_specs(lstm, conv_channels, dense_units)
    return nn.global_view_specs(lstm, conv_channels, dense_units)


@dataclass
class TrainResult:
    params: nn.NetworkParams
    stats: list[EpisodeStats]
    global_step: int
    worker_steps: list[int] = field(default_factory=list)
    updates: int = 0


def train(config: TrainConfig, level: GridMap, spec: ObservationSpec,
          mask_schedule: MaskSchedule | float | None = None, *, lstm: int = 0,
          with_teacher: bool = True, init_params: nn.NetworkParams | None = None,
          conv_channels: int = 16, dense_units: int = 128, sink: MetricsSink | None = None,
          step_offset: int = 0, env_factory: Callable[[int], object] | None = None) -> TrainResult:
    """Train a fresh (or warm-started) network on one level."""
    if isinstance(mask_schedule, (int, float)):
        prob = float(mask_schedule)
        mask_schedule = lambda _step: prob  # noqa: E731
    world = World.make(level, spec, with_teacher=with_teacher)
    shape = spec.shape(level)
    if init_params is None:
        init_rng = np.random.default_rng([config.seed, 0])
        params = nn.build_network(network_specs(spec, lstm, conv_channels, dense_units), shape, init_rng)
    else:
        if tuple(init_params.input_shape) != tuple(shape):
            raise nn.ShapeMismatch(f"warm start expects input {init_params.input_shape}, level gives {shape}")
        params = init_params.copy()
    lstm = params.recurrent_units
    store = ParameterStore(params, config, config.total_steps)
    own_sink = sink is None
    sink = sink or MetricsSink()
    if env_factory is None:
        def env_factory(worker_id: int):
            return GridWorld(world, seed=[config.seed, worker_id, 2])
    context = WorkerContext(level.name, spec.variant, lstm, config.seed, step_offset)

    if config.workers == 1:
        worker_steps = [worker_loop(0, store, env_factory, config, sink, mask_schedule, context)]
    else:
        worker_steps = [0] * config.workers
        errors: list[BaseException] = []
        stop = threading.Event()

        def run(wid: int):
            try:
                worker_steps[wid] = worker_loop(wid, store, env_factory, config, sink,
                                                mask_schedule, context, stop)
            except BaseException as exc:  # surfaced below
                log.exception("worker %d failed", wid)
                errors.append(exc)
                stop.set()

        threads = [threading.Thread(target=run, args=(w,), name=f"a3c-worker-{w}")
                   for w in range(config.workers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        if errors:
            raise RuntimeError(f"training aborted: {len(errors)} worker(s) failed") from errors[0]
    if own_sink:
        sink.close()
    return TrainResult(store.params, list(sink.stats), store.global_step, worker_steps, store.updates)


@dataclass
class EvalSummary:
    episodes: int
    mean_steps: float
    success_rate: float
    steps: list[int]


def evaluate(params: nn.NetworkParams, world: World, episodes: int, rng: np.random.Generator,
             *, greedy: bool = True, mask_prob: float = 0.0) -> EvalSummary:
    """Roll out the policy without learning; ``params`` is never modified."""
    env = GridWorld(world, seed=rng.integers(2**63))
    steps = []
    successes = 0
    for _ in range(episodes):
        obs = env.reset(mask_prob)
        state = params.zero_state()
        done = False
        n = 0
        info = {"reached_goal": False}
        while not done:
            tr = nn.forward(params, obs, state)
            state = tr.state
            p = tr.policy[0]
            a = int(np.argmax(p)) if greedy else _sample(p, rng)
            obs, _, done, info = env.step(a)
            n += 1
        successes += bool(info["reached_goal"])
        steps.append(n if info["reached_goal"] else EPISODE_CAP)
    return EvalSummary(episodes, float(np.mean(steps)), successes / episodes, steps)
