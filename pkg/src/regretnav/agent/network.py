"""Policy network: encoder, co-grounding, decoder, progress monitor,
regret module, progress marker and masked action selection.

All functions work on a batch of episodes.  Candidate slots are padded to
``k_max + 1`` (slot 0 is stop) and instructions to the longest in the
batch; masks keep padding out of every softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

FORWARD_ONLY = np.array([1.0, 0.0])


# -- encoder ---------------------------------------------------------------------

@dataclass
class EncodedInstruction:
    context: Tensor        # (B, L, H)
    mask: np.ndarray       # (B, L) real-token positions
    lengths: np.ndarray    # (B,)


def pad_tokens(instructions, max_len):
    lengths = np.array([len(t) for t in instructions])
    if (lengths == 0).any():
        raise ValueError("empty instruction")
    if lengths.max() > max_len:
        raise ValueError(f"instruction of {lengths.max()} tokens exceeds max length {max_len}")
    ids = np.zeros((len(instructions), lengths.max()), dtype=np.intp)
    for i, toks in enumerate(instructions):
        ids[i, :len(toks)] = toks
    return ids, lengths


def encode_instruction(params, instructions, train=False, rng=None):
    """Embed -> dropout -> unidirectional LSTM; one context vector per token."""
    cfg = params.cfg
    ids, lengths = pad_tokens(instructions, cfg.max_instruction_len)
    B, L = ids.shape
    emb = ad.embedding(params["embedding"], ids)
    emb = ad.dropout(emb, cfg.dropout, rng, train)
    h = Tensor(np.zeros((B, cfg.hidden)))
    c = Tensor(np.zeros((B, cfg.hidden)))
    steps = []
    for l in range(L):
        x = ad.index(emb, (slice(None), l))
        h, c = ad.lstm_cell(x, h, c, params["enc_W"], params["enc_b"])
        steps.append(ad.reshape(h, (B, 1, cfg.hidden)))
    context = ad.concat(steps, axis=1)
    mask = np.arange(L)[None, :] < lengths[:, None]
    return EncodedInstruction(context=context, mask=mask, lengths=lengths)


def select_rows(encoded, rows):
    return EncodedInstruction(context=ad.index(encoded.context, rows),
                              mask=encoded.mask[rows], lengths=encoded.lengths[rows])


# -- visual projection g -------------------------------------------------------------

def project_features(params, features, valid, train=False, rng=None):
    """g(v): BN -> FC -> BN -> Dropout -> ReLU over (B, S, D) candidate features."""
    B, S, D = features.shape
    rows = valid.reshape(-1)
    x = Tensor(features.reshape(B * S, D))
    x = ad.batch_standardize(x, params["g_bn1_gamma"], params["g_bn1_beta"],
                             params.stats["g_bn1"], train, rows)
    x = ad.add(ad.matmul(x, params["g_fc_W"]), params["g_fc_b"])
    x = ad.batch_standardize(x, params["g_bn2_gamma"], params["g_bn2_beta"],
                             params.stats["g_bn2"], train, rows)
    x = ad.dropout(x, params.cfg.dropout, rng, train)
    x = ad.relu(x)
    return ad.reshape(x, (B, S, params.cfg.proj_dim))


# -- per-step modules ------------------------------------------------------------------

def co_ground(params, h_prev, encoded, projected, valid):
    """Soft attention over instruction words and over candidate directions."""
    if not np.asarray(valid).any(axis=-1).all():
        raise ValueError("co_ground: an observation has no valid slot")
    z = ad.inner(encoded.context, ad.matmul(h_prev, params["W_x"]))
    alpha = ad.softmax(z, encoded.mask)
    x_hat = ad.weighted_sum(alpha, encoded.context)
    s = ad.inner(projected, ad.matmul(h_prev, params["W_v"]))
    beta = ad.softmax(s, valid)
    v_hat = ad.weighted_sum(beta, projected)
    return x_hat, v_hat, alpha


def decode_step(params, x_hat, v_hat, a_prev, h_prev, c_prev):
    inp = ad.concat([x_hat, v_hat, a_prev], axis=1)
    return ad.lstm_cell(inp, h_prev, c_prev, params["dec_W"], params["dec_b"])


def pad_attention(alpha, max_len):
    B, L = alpha.shape
    if L == max_len:
        return alpha
    return ad.concat([alpha, Tensor(np.zeros((B, max_len - L)))], axis=1)


def progress_monitor(params, h_prev, v_hat, c_t, alpha):
    """sigmoid(W_h[h_{t-1}, v_hat]) * tanh(c_t), then tanh(W_pm[alpha, h_pm])."""
    gate = ad.sigmoid(ad.add(ad.matmul(ad.concat([h_prev, v_hat], axis=1), params["W_h"]),
                             params["b_h"]))
    h_pm = ad.mul(gate, ad.tanh(c_t))
    a = pad_attention(alpha, params.cfg.max_instruction_len)
    return ad.tanh(ad.add(ad.matmul(ad.concat([a, h_pm], axis=1), params["W_pm"]), params["b_pm"]))


def forward_embedding(params, h_t, x_hat):
    return ad.matmul(ad.concat([h_t, x_hat], axis=1), params["W_a"])


def regret_module(params, m_f, m_r, delta_progress, has_prev):
    """Blend forward and rollback embeddings by softmax(W_r * dp + b_r).

    ``delta_progress`` (B,) must be a constant (detached) array.  Rows with
    no previous viewpoint are forced to pure forward.
    """
    dp = Tensor(np.asarray(delta_progress, dtype=float).reshape(-1, 1))
    logits = ad.add(ad.matmul(dp, params["W_r"]), params["b_r"])
    alpha = ad.softmax(logits)
    hp = np.asarray(has_prev, dtype=float)[:, None]
    if not hp.all():
        alpha = ad.add(ad.mul(alpha, hp), (1.0 - hp) * FORWARD_ONLY)
    w_f = ad.index(alpha, (slice(None), slice(0, 1)))
    w_r = ad.index(alpha, (slice(None), slice(1, 2)))
    m_fr = ad.add(ad.mul(w_f, m_f), ad.mul(w_r, m_r))
    return m_fr, alpha


def marker_update(markers, viewpoint, progress):
    markers[viewpoint] = float(progress)
    return markers


def marker_lookup(markers, target):
    """Stop slot -> 0, visited viewpoint -> stored progress, unvisited -> 1."""
    if target is None:
        return 0.0
    return markers.get(target, 1.0)


def marker_deltas(progress, markers, targets, valid):
    out = np.zeros(len(targets))
    for k, (tgt, ok) in enumerate(zip(targets, valid)):
        if ok:
            out[k] = progress - marker_lookup(markers, tgt)
    return out


def action_logits(params, m_fr, m_f, projected, deltas=None):
    """Inner-product scores of every candidate against the movement vector."""
    cfg = params.cfg
    if not cfg.uses_w_fr:
        return ad.inner(projected, m_f)
    q = ad.matmul(m_fr if cfg.regret else m_f, params["W_fr"])
    cand = projected
    if cfg.marker:
        tiled = np.repeat(np.asarray(deltas)[:, :, None], cfg.marker_tile, axis=2)
        cand = ad.concat([projected, Tensor(tiled)], axis=2)
    return ad.inner(cand, q)


def action_select(logits, mask):
    """Masked distribution and log-distribution over candidate slots."""
    mask = np.array(mask, dtype=bool)
    empty = ~mask.any(axis=1)
    mask[empty, 0] = True  # nothing selectable: forced stop
    return ad.softmax(logits, mask), ad.log_softmax(logits, mask), mask


# -- composed step -------------------------------------------------------------------------

@dataclass
class Walker:
    """Discrete per-episode part of the agent state."""

    viewpoint: int
    prev_viewpoint: int = None
    markers: dict = field(default_factory=dict)
    last_progress: float = None
    blocked: int = None          # viewpoint whose direction is masked this step
    rollbacks: int = 0


@dataclass
class AgentState:
    h: Tensor
    c: Tensor
    a_prev: Tensor
    encoded: EncodedInstruction
    walkers: list
    t: int = 0

    def select(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        return AgentState(h=ad.index(self.h, rows), c=ad.index(self.c, rows),
                          a_prev=ad.index(self.a_prev, rows), encoded=select_rows(self.encoded, rows),
                          walkers=[self.walkers[i] for i in rows], t=self.t)


def initial_state(params, instructions, starts, train=False, rng=None):
    cfg = params.cfg
    enc = encode_instruction(params, instructions, train, rng)
    B = len(starts)
    zeros = np.zeros((B, cfg.hidden))
    return AgentState(h=Tensor(zeros), c=Tensor(zeros.copy()), a_prev=Tensor(np.zeros((B, cfg.proj_dim))),
                      encoded=enc, walkers=[Walker(viewpoint=int(s)) for s in starts])


@dataclass
class StepDecision:
    probs: Tensor              # (B, S) p_t
    log_probs: Tensor          # (B, S)
    progress: Tensor           # (B, 1) p^pm_t
    alpha_fr: np.ndarray       # (B, 2)
    text_attention: np.ndarray  # (B, L)
    mask: np.ndarray           # (B, S) slots allowed this step
    valid: np.ndarray          # (B, S) slots that exist
    marker_deltas: np.ndarray  # (B, S)
    chosen: np.ndarray = None  # (B,)
    rollback: np.ndarray = None  # (B,) chosen action returns to prev viewpoint
    extras: dict = field(default_factory=dict)


def choose_actions(probs, mask, mode, rng):
    if mode == "greedy":
        return np.argmax(np.where(mask, probs, -1.0), axis=1)
    if mode == "sample":
        cum = np.cumsum(probs, axis=1)
        u = rng.random(len(probs)) * cum[:, -1]
        idx = (cum <= u[:, None]).sum(axis=1)
        idx = np.minimum(idx, probs.shape[1] - 1)
        # never land on a zero-probability slot through rounding
        bad = ~mask[np.arange(len(idx)), idx]
        idx[bad] = np.argmax(np.where(mask[bad], probs[bad], -1.0), axis=1)
        return idx
    raise ValueError(f"unknown action mode {mode!r}")


def step(params, state, observations, mode="greedy", rng=None, train=False,
         block_rollback=False, actions=None, frozen_progress=None):
    """Run one decision step for every walker in ``state``.

    ``actions`` forces the chosen slots; ``frozen_progress`` replaces the
    detached progress values (used to replay a trajectory exactly).
    Returns ``(decision, next_state)``; walkers are updated in place.
    """
    cfg = params.cfg
    B = len(state.walkers)
    features = np.stack([o.features for o in observations])
    valid = np.stack([o.mask for o in observations])

    projected = project_features(params, features, valid, train, rng)
    x_hat, v_hat, alpha = co_ground(params, state.h, state.encoded, projected, valid)
    h_t, c_t = decode_step(params, x_hat, v_hat, state.a_prev, state.h, state.c)
    p_pm = progress_monitor(params, state.h, v_hat, c_t, alpha)
    m_f = forward_embedding(params, h_t, x_hat)

    pm_const = p_pm.value[:, 0].copy() if frozen_progress is None else np.asarray(frozen_progress, float)
    has_prev = np.array([w.prev_viewpoint is not None for w in state.walkers])
    alpha_fr = np.tile(FORWARD_ONLY, (B, 1))
    m_fr = m_f
    if cfg.regret:
        last = np.array([w.last_progress if w.last_progress is not None else 0.0 for w in state.walkers])
        r_idx = np.array([o.slot_of(w.prev_viewpoint) if w.prev_viewpoint is not None else 0
                          for o, w in zip(observations, state.walkers)])
        m_r = ad.index(projected, (np.arange(B), r_idx))
        m_fr, a_fr = regret_module(params, m_f, m_r, np.where(has_prev, pm_const - last, 0.0), has_prev)
        alpha_fr = a_fr.value

    deltas = np.zeros(valid.shape)
    for b, (w, o) in enumerate(zip(state.walkers, observations)):
        marker_update(w.markers, w.viewpoint, pm_const[b])
        deltas[b] = marker_deltas(pm_const[b], w.markers, o.targets, o.mask)

    mask = valid.copy()
    for b, (w, o) in enumerate(zip(state.walkers, observations)):
        if cfg.oscillation_block and w.blocked is not None:
            k = o.slot_of(w.blocked)
            if k is not None:
                mask[b, k] = False
        if block_rollback and w.prev_viewpoint is not None and o.n_valid - 1 > 1:
            k = o.slot_of(w.prev_viewpoint)
            if k is not None:
                mask[b, k] = False

    logits = action_logits(params, m_fr, m_f, projected, deltas)
    probs, log_probs, mask = action_select(logits, mask)

    if actions is None:
        chosen = choose_actions(probs.value, mask, mode, rng)
    else:
        chosen = np.asarray(actions, dtype=np.intp)

    rollback = np.zeros(B, dtype=bool)
    for b, (w, o) in enumerate(zip(state.walkers, observations)):
        target = o.targets[chosen[b]]
        w.blocked = None
        if target is not None and target == w.prev_viewpoint:
            rollback[b] = True
            w.rollbacks += 1
            w.blocked = w.viewpoint
        w.last_progress = float(pm_const[b])
        if target is not None:
            w.prev_viewpoint, w.viewpoint = w.viewpoint, target

    moving = Tensor((chosen != 0).astype(float)[:, None])
    a_next = ad.mul(ad.index(projected, (np.arange(B), chosen)), moving)
    decision = StepDecision(
        probs=probs, log_probs=log_probs, progress=p_pm, alpha_fr=alpha_fr,
        text_attention=alpha.value, mask=mask, valid=valid, marker_deltas=deltas,
        chosen=chosen, rollback=rollback,
        extras={"h": h_t.value, "x_hat": x_hat.value, "projected": projected.value,
                "progress_const": pm_const, "logits": logits.value})
    nxt = AgentState(h=h_t, c=c_t, a_prev=a_next, encoded=state.encoded,
                     walkers=state.walkers, t=state.t + 1)
    return decision, nxt
