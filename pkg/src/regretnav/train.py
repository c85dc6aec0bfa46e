"""Rollouts, the composite loss, Adam, and the epoch loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .agent.config import ModelConfig
from .agent.network import initial_state, step
from .agent.params import init_params
from .autodiff import Tape
from .env.episodes import ground_truth_action, progress_target
from .env.observe import DESK, FeatureConfig, observe
from .metrics import TrajectoryResult, summarize

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5
    beta: float = 0.01
    lr: float = 1e-3
    epochs: int = 15
    batch_size: int = 8
    seed: int = 0
    patience: int = 10
    clip: float = 5.0
    train_split: str = "train"
    eval_splits: tuple = ("seen", "unseen")
    select_split: str = "unseen"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "eval_splits" in d:
            d["eval_splits"] = tuple(d["eval_splits"])
        return cls(**d)


# -- rollout ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    probs: object          # Tensor (B_t, S)
    log_probs: object      # Tensor (B_t, S)
    progress: object       # Tensor (B_t, 1)
    target_action: np.ndarray
    action_weight: np.ndarray   # 0 where the expert slot was masked
    target_progress: np.ndarray
    episodes: np.ndarray
    chosen: np.ndarray
    mask: np.ndarray


@dataclass
class RolloutBuffer:
    n_episodes: int
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def episode_length(self, i):
        return sum(int((s.episodes == i).any()) for s in self.steps)


def rollout(params, episodes, mode="greedy", rng=None, train=False, features=DESK,
            block_rollback=False, forced_actions=None, frozen_progress=None, keep_trace=False):
    """Roll every episode until it stops or hits ``max_steps``.

    ``mode`` is ``"sample"``, ``"greedy"`` or ``"teacher"`` (follow the
    expert).  ``forced_actions[i][t]`` and ``frozen_progress[i][t]`` replay a
    recorded trajectory.  Returns ``(buffer, results)``.
    """
    cfg = params.cfg
    n = len(episodes)
    state = initial_state(params, [e.instruction for e in episodes], [e.start for e in episodes],
                          train, rng)
    active = np.arange(n)
    buffer = RolloutBuffer(n_episodes=n)
    visited = [[e.start] for e in episodes]
    progress = [[] for _ in episodes]
    chosen = [[] for _ in episodes]
    traces = [[] for _ in episodes]
    results = [None] * n

    for t in range(cfg.max_steps):
        eps = [episodes[i] for i in active]
        obs = [observe(e.graph, w.viewpoint, features) for e, w in zip(eps, state.walkers)]
        y_nv = np.array([ground_truth_action(e, w.viewpoint, o) for e, w, o in zip(eps, state.walkers, obs)])
        y_pm = np.array([progress_target(e, w.viewpoint) for e, w in zip(eps, state.walkers)])
        actions = None
        if mode == "teacher":
            actions = y_nv
        elif forced_actions is not None:
            actions = np.array([forced_actions[i][t] for i in active])
        frozen = None if frozen_progress is None else [frozen_progress[i][t] for i in active]
        decision, state = step(params, state, obs, mode if mode != "teacher" else "greedy", rng, train,
                               block_rollback, actions, frozen)
        weight = decision.mask[np.arange(len(active)), y_nv].astype(float)
        buffer.steps.append(StepRecord(
            probs=decision.probs, log_probs=decision.log_probs, progress=decision.progress,
            target_action=y_nv, action_weight=weight, target_progress=y_pm, episodes=active.copy(),
            chosen=decision.chosen, mask=decision.mask))
        for j, i in enumerate(active):
            progress[i].append(float(decision.extras["progress_const"][j]))
            chosen[i].append(int(decision.chosen[j]))
            if decision.chosen[j] != 0:
                visited[i].append(state.walkers[j].viewpoint)
            if keep_trace:
                traces[i].append({
                    "viewpoint": int(obs[j].viewpoint), "probs": decision.probs.value[j].copy(),
                    "chosen": int(decision.chosen[j]), "progress": float(decision.extras["progress_const"][j]),
                    "alpha_fr": decision.alpha_fr[j].copy(), "mask": decision.mask[j].copy(),
                    "marker_deltas": decision.marker_deltas[j].copy(),
                    "rollback": bool(decision.rollback[j]), "target": int(y_nv[j])})
        stopped = decision.chosen == 0
        for j in np.flatnonzero(stopped):
            i = active[j]
            results[i] = _result(episodes[i], visited[i], progress[i], chosen[i], state.walkers[j], t + 1)
        keep = np.flatnonzero(~stopped)
        if keep.size == 0:
            active = keep
            break
        if keep.size < len(active):
            state = state.select(keep)
            active = active[keep]
    for j, i in enumerate(active):
        results[i] = _result(episodes[i], visited[i], progress[i], chosen[i], state.walkers[j], cfg.max_steps)
    if keep_trace:
        for r, tr in zip(results, traces):
            r.trace = tr
    return buffer, results


def _result(episode, visited, progress, actions, walker, steps):
    return TrajectoryResult(episode=episode, viewpoints=list(visited), progress=list(progress),
                            rollback_steps=walker.rollbacks, steps=steps, actions=list(actions))


def replay_loss_fn(params, episodes, results, lam=0.5, beta=0.01, features=DESK):
    """Deterministic loss of a recorded trajectory, for gradient checking.

    Actions and the detached progress values are replayed from ``results``
    so that finite differences see the same constants as the analytic
    graph.  Dropout must be disabled in ``params.cfg``.
    """
    actions = [r.actions for r in results]
    frozen = [r.progress for r in results]

    def f():
        buffer, _ = rollout(params, episodes, train=True, features=features,
                            forced_actions=actions, frozen_progress=frozen)
        return loss(buffer, lam, beta)[0]
    return f


# -- loss ------------------------------------------------------------------------------------

def loss(buffer, lam=0.5, beta=0.01):
    """lam * CE + (1 - lam) * squared progress error - beta * entropy,
    summed over steps and averaged over episodes.  Returns ``(loss, parts)``."""
    if not buffer.steps:
        raise ValueError("empty rollout buffer")
    ce = mse = neg_ent = None
    for s in buffer.steps:
        picked = ad.pick(s.log_probs, s.target_action)
        c = ad.scale(ad.total(ad.mul(picked, s.action_weight)), -1.0)
        m = ad.total(ad.square(ad.sub(s.progress, s.target_progress[:, None])))
        e = ad.total(ad.mul(s.probs, s.log_probs))
        ce = c if ce is None else ad.add(ce, c)
        mse = m if mse is None else ad.add(mse, m)
        neg_ent = e if neg_ent is None else ad.add(neg_ent, e)
    total = ad.add(ad.add(ad.scale(ce, lam), ad.scale(mse, 1.0 - lam)), ad.scale(neg_ent, beta))
    total = ad.scale(total, 1.0 / buffer.n_episodes)
    k = 1.0 / buffer.n_episodes
    parts = {"ce": float(ce.value) * k, "mse": float(mse.value) * k, "entropy": -float(neg_ent.value) * k}
    return total, parts


# -- optimiser --------------------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=5.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.clip = lr, beta1, beta2, eps, clip
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.t = 0
        self.skipped = 0

    def step(self):
        """Apply one update from the populated grads; False if skipped."""
        grads = {k: t.grad for k, t in self.params.items()}
        sq = sum(float((g * g).sum()) for g in grads.values())
        if not np.isfinite(sq):
            self.skipped += 1
            log.warning("non-finite gradient; update skipped")
            return False
        norm = np.sqrt(sq)
        factor = self.clip / norm if self.clip and norm > self.clip else 1.0
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = grads[k] * factor
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return True


def optimize(params, optimizer):
    return optimizer.step()


# -- training ------------------------------------------------------------------------------------

def seed_streams(seed):
    """Independent generators for initialisation and rollouts."""
    init_ss, roll_ss = np.random.SeedSequence(seed, spawn_key=(3,)).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(roll_ss)


def train_step(params, optimizer, episodes, cfg, rng, features=DESK):
    params.zero_grad()
    with Tape() as tape:
        buffer, results = rollout(params, episodes, "sample", rng, train=True, features=features)
        total, parts = loss(buffer, cfg.lam, cfg.beta)
    if not np.isfinite(total.value):
        raise NumericalError(f"non-finite loss {float(total.value)}")
    tape.backward(total)
    optimizer.step()
    parts["loss"] = float(total.value)
    return parts, results


def evaluate(params, episodes, features=DESK, block_rollback=False, chunk=256, keep_trace=False):
    results = []
    for i in range(0, len(episodes), chunk):
        _, res = rollout(params, episodes[i:i + chunk], "greedy", None, train=False, features=features,
                         block_rollback=block_rollback, keep_trace=keep_trace)
        results.extend(res)
    return results


def train(model_cfg, cfg, splits, features=DESK, on_record=None, init=None):
    """Train and keep the parameters with the best SR on ``cfg.select_split``.

    ``splits`` maps split names to episode lists.  Every curve record is a
    dict ``{epoch, split, metric, value}``; ``on_record`` receives each one.
    Returns ``(best_params, records, final_params)``.
    """
    init_rng, roll_rng = seed_streams(cfg.seed)
    params = init if init is not None else init_params(model_cfg, init_rng)
    optimizer = Adam(params, lr=cfg.lr, clip=cfg.clip)
    records = []

    def emit(epoch, split, metric, value):
        rec = {"epoch": epoch, "split": split, "metric": metric, "value": float(value)}
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    def run_eval(epoch):
        out = {}
        for split in cfg.eval_splits:
            if split not in splits:
                continue
            summary = summarize(evaluate(params, splits[split], features))
            out[split] = summary
            for metric in ("NE", "SR", "OSR", "SPL", "ONE"):
                emit(epoch, split, metric, summary[metric])
        return out

    scores = run_eval(0)
    best = params.copy()
    best_score = scores.get(cfg.select_split, {}).get("SR", -1.0)
    best_epoch, stale = 0, 0
    train_eps = list(splits[cfg.train_split])
    for epoch in range(1, cfg.epochs + 1):
        order = roll_rng.permutation(len(train_eps))
        sums = {"loss": 0.0, "ce": 0.0, "mse": 0.0, "entropy": 0.0}
        n_batches = 0
        for b in range(0, len(order), cfg.batch_size):
            batch = [train_eps[i] for i in order[b:b + cfg.batch_size]]
            parts, _ = train_step(params, optimizer, batch, cfg, roll_rng, features)
            for k in sums:
                sums[k] += parts[k]
            n_batches += 1
        for k, v in sums.items():
            emit(epoch, cfg.train_split, k, v / max(n_batches, 1))
        scores = run_eval(epoch)
        score = scores.get(cfg.select_split, {}).get("SR", -1.0)
        log.info("epoch %d loss %.4f %s", epoch, sums["loss"] / max(n_batches, 1),
                 " ".join(f"{s}:SR={v['SR']:.3f}" for s, v in scores.items()))
        if score > best_score:
            best, best_score, best_epoch, stale = params.copy(), score, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    emit(best_epoch, cfg.select_split, "best_SR", best_score)
    return best, records, params
