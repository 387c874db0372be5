"""Next-representation forecasting and the policies built on top of it.

The neural forecaster couples the token embedding table, the observation
mapper, and a sequence model (causal attention stack or gated recurrent
network). Its training objective sums, over every maskable position, a
cross-entropy term at action-token rows (logits are dot products against
the embedding table) and a scaled mean-squared error at observation rows.
Targets for the observation term are the encoded rows themselves with
gradients stopped, so the mapper cannot collapse to zero to please the
loss.

Non-neural policies (frequency-count transition tables and uniform-random
choice, each with an optional goal restriction) expose the same
extension-scoring interface, so one beam search serves every policy.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .corpus import VideoAnnotation, Vocabulary
from .encoding import (
    CONDITIONS,
    Condition,
    HistoryEncoding,
    build_history,
    extend_with_actions,
    extend_with_plan,
    init_embedding_table,
    init_mapper,
)
from .errors import ConfigError, DivergenceError
from .segments import ObservationModel, SegmentHistory, segment_history

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "Forecaster",
    "LossResult",
    "TrainResult",
    "train",
    "build_training_items",
    "encode_train_item",
    "TrainItem",
    "rollout_observation",
    "TransitionTable",
    "fit_markov",
    "NeuralScorer",
    "MarkovScorer",
    "RandomScorer",
    "save_checkpoint",
    "load_checkpoint",
    "config_hash",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1


def config_hash(obj) -> str:
    """Stable hash of any JSON-serializable configuration object."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "attention"  # "attention" | "recurrent"
    d: int = 32
    layers: int = 2
    heads: int = 2
    obs_dim: int = 16
    max_len: int = 256
    mapper_hidden: bool = False
    delta: int = 2
    condition: str = "full"
    seed: int = 0

    def validate(self) -> None:
        if self.architecture not in ("attention", "recurrent"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.condition not in CONDITIONS:
            raise ConfigError(f"unknown condition {self.condition!r}")
        if self.d <= 0 or self.obs_dim <= 0 or self.delta < 0:
            raise ConfigError("dimensions must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 3e-3
    batch_size: int = 8
    epochs: int = 15
    grad_clip: float = 5.0
    seed: int = 0
    lambda_act: float = 1.0
    lambda_obs: float = 1.0

    def validate(self) -> None:
        if self.optimizer != "adam":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning rate must be >= 0, epochs and batch size >= 1")


@dataclass
class LossResult:
    total: float
    act: float
    obs: float
    n_act: int
    n_obs: int
    per_position: np.ndarray


@dataclass
class TrainResult:
    curve: list
    train_state: dict
    diverged: bool = False


class Forecaster:
    """Embeddings + mapper + sequence model under one parameter dictionary."""

    kind = "neural"

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.condition: Condition = CONDITIONS[cfg.condition]
        rng = np.random.default_rng([cfg.seed, 314159])
        self.table = init_embedding_table(vocab.n_tokens, cfg.d, rng)
        self.mapper = init_mapper(cfg.obs_dim, cfg.d, cfg.mapper_hidden, rng)
        if cfg.architecture == "attention":
            self.seq = nn.TransformerSeq(cfg.d, cfg.layers, cfg.heads, cfg.max_len, rng)
        else:
            self.seq = nn.RecurrentSeq(cfg.d, rng, cfg.max_len)
        self.params = {"table": self.table}
        self.params.update(self.mapper.param_dict())
        for key, val in self.seq.params.items():
            self.params[f"seq.{key}"] = val

    # -- encoding -------------------------------------------------------

    def encode(self, goal_id: int, history: SegmentHistory) -> HistoryEncoding:
        return build_history(goal_id, history, self.table, self.mapper, self.vocab, self.condition)

    # -- sequence stepping ----------------------------------------------

    def step(self, h_prefix: np.ndarray) -> np.ndarray:
        """One next-representation prediction from an explicit row prefix."""
        if h_prefix.ndim != 2 or h_prefix.shape[0] < 1:
            raise ValueError("prefix must be a nonempty (j, d) matrix")
        outs, _ = self.seq.forward(h_prefix)
        return outs[-1]

    # -- loss -------------------------------------------------------------

    def loss(
        self,
        enc: HistoryEncoding,
        lambda_act: float = 1.0,
        lambda_obs: float = 1.0,
        frozen_obs_targets: np.ndarray | None = None,
    ) -> LossResult:
        """Joint loss over one encoding: token cross-entropy at action rows
        plus dimension-scaled squared error at observation rows.

        The squared-error targets are the encoded rows themselves with
        gradients stopped (otherwise shrinking the mapper to zero would
        trivially please the observation term). ``frozen_obs_targets``
        makes that frozen copy explicit: pass the row matrix of an
        unperturbed encoding to evaluate the same objective the analytic
        gradients differentiate, as finite-difference checks must.
        """
        res, _ = self._loss_impl(enc, lambda_act, lambda_obs, False, frozen_obs_targets)
        return res

    def loss_and_grads(self, enc: HistoryEncoding, lambda_act: float = 1.0, lambda_obs: float = 1.0):
        return self._loss_impl(enc, lambda_act, lambda_obs, True, None)

    def _loss_impl(
        self,
        enc: HistoryEncoding,
        lambda_act: float,
        lambda_obs: float,
        want_grads: bool,
        frozen_obs_targets: np.ndarray | None = None,
    ):
        n, d = enc.n, enc.d
        if n < 2:
            raise ValueError("loss needs an encoding of length >= 2")
        outs, cache = self.seq.forward(enc.h)
        targets = np.arange(1, n)
        live = enc.target_mask[targets] == 1
        tpos = targets[live]
        is_act = enc.mask[tpos] == 1
        act_pos = tpos[is_act]
        obs_pos = tpos[~is_act]
        per_position = np.zeros(n)

        act_sum = 0.0
        d_logits = None
        if act_pos.size:
            preds = outs[act_pos - 1]
            logits = preds @ self.table.T
            logits -= logits.max(axis=1, keepdims=True)
            logz = np.log(np.exp(logits).sum(axis=1))
            tok = enc.token_ids[act_pos]
            ce = logz - logits[np.arange(act_pos.size), tok]
            per_position[act_pos] = lambda_act * ce
            act_sum = float(ce.sum())
            if want_grads:
                d_logits = np.exp(logits - logz[:, None])
                d_logits[np.arange(act_pos.size), tok] -= 1.0
                d_logits *= lambda_act

        obs_sum = 0.0
        diff = None
        if obs_pos.size:
            target_rows = enc.h if frozen_obs_targets is None else frozen_obs_targets
            diff = outs[obs_pos - 1] - target_rows[obs_pos]
            mse = (diff * diff).sum(axis=1) / d
            per_position[obs_pos] = lambda_obs * mse
            obs_sum = float(mse.sum())

        total = lambda_act * act_sum + lambda_obs * obs_sum
        result = LossResult(
            total=total,
            act=act_sum,
            obs=obs_sum,
            n_act=int(act_pos.size),
            n_obs=int(obs_pos.size),
            per_position=per_position,
        )
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite loss {total}")
        if not want_grads:
            return result, None

        d_outs = np.zeros_like(outs)
        if act_pos.size:
            np.add.at(d_outs, act_pos - 1, d_logits @ self.table)
        if obs_pos.size:
            np.add.at(d_outs, obs_pos - 1, lambda_obs * 2.0 * diff / d)
        d_h, seq_grads = self.seq.backward(d_outs, cache)

        d_table = np.zeros_like(self.table)
        grads = {"table": d_table}
        if act_pos.size:
            # logits = preds @ table.T : route the cross-entropy into the table
            d_table += d_logits.T @ outs[act_pos - 1]
        emb_rows = np.flatnonzero(enc.embed_ids >= 0)
        if emb_rows.size:
            np.add.at(d_table, enc.embed_ids[emb_rows], d_h[emb_rows])
        if enc.obs_rows.size:
            for key, val in self.mapper.backward(enc.obs_raw, d_h[enc.obs_rows]).items():
                grads[key] = val
        else:
            for key, val in self.mapper.param_dict().items():
                grads[key] = np.zeros_like(val)
        for key, val in seq_grads.items():
            grads[f"seq.{key}"] = val
        return result, grads


def batch_loss_and_grads(
    forecaster: Forecaster,
    encs: list[HistoryEncoding],
    lambda_act: float = 1.0,
    lambda_obs: float = 1.0,
):
    """Summed loss and parameter gradients over a padded batch of encodings.

    Numerically equivalent (up to reduction order) to summing
    :meth:`Forecaster.loss_and_grads` over the batch; one padded forward
    and backward pass instead of many small ones.
    """
    B = len(encs)
    d = forecaster.cfg.d
    n_max = max(enc.n for enc in encs)
    X = np.zeros((B, n_max, d))
    lengths = np.zeros(B, dtype=int)
    for b, enc in enumerate(encs):
        X[b, : enc.n] = enc.h
        lengths[b] = enc.n
    outs, cache = forecaster.seq.forward_batch(X, lengths)

    act_idx_b, act_idx_p, act_tok = [], [], []
    obs_idx_b, obs_idx_p = [], []
    for b, enc in enumerate(encs):
        targets = np.arange(1, enc.n)
        live = targets[enc.target_mask[targets] == 1]
        acts = live[enc.mask[live] == 1]
        obs = live[enc.mask[live] == 0]
        act_idx_b.extend([b] * len(acts))
        act_idx_p.extend(acts)
        act_tok.extend(enc.token_ids[acts])
        obs_idx_b.extend([b] * len(obs))
        obs_idx_p.extend(obs)
    act_idx_b = np.array(act_idx_b, dtype=int)
    act_idx_p = np.array(act_idx_p, dtype=int)
    act_tok = np.array(act_tok, dtype=int)
    obs_idx_b = np.array(obs_idx_b, dtype=int)
    obs_idx_p = np.array(obs_idx_p, dtype=int)

    d_outs = np.zeros_like(outs)
    table = forecaster.table
    totals = np.zeros(B)
    act_sums = np.zeros(B)
    obs_sums = np.zeros(B)
    d_table = np.zeros_like(table)
    if act_idx_b.size:
        preds = outs[act_idx_b, act_idx_p - 1]
        logits = preds @ table.T
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1))
        ce = logz - logits[np.arange(act_tok.size), act_tok]
        np.add.at(act_sums, act_idx_b, ce)
        d_logits = np.exp(logits - logz[:, None])
        d_logits[np.arange(act_tok.size), act_tok] -= 1.0
        d_logits *= lambda_act
        np.add.at(d_outs, (act_idx_b, act_idx_p - 1), d_logits @ table)
        d_table += d_logits.T @ preds
    if obs_idx_b.size:
        diff = outs[obs_idx_b, obs_idx_p - 1] - X[obs_idx_b, obs_idx_p]
        mse = (diff * diff).sum(axis=1) / d
        np.add.at(obs_sums, obs_idx_b, mse)
        np.add.at(d_outs, (obs_idx_b, obs_idx_p - 1), lambda_obs * 2.0 * diff / d)
    totals = lambda_act * act_sums + lambda_obs * obs_sums
    if not np.isfinite(totals).all():
        raise DivergenceError("non-finite loss in batch")

    dX, seq_grads = forecaster.seq.backward_batch(d_outs, cache)
    grads = {"table": d_table}
    raws, drows = [], []
    for b, enc in enumerate(encs):
        emb_rows = np.flatnonzero(enc.embed_ids >= 0)
        if emb_rows.size:
            np.add.at(d_table, enc.embed_ids[emb_rows], dX[b, emb_rows])
        if enc.obs_rows.size:
            raws.append(enc.obs_raw)
            drows.append(dX[b, enc.obs_rows])
    if raws:
        for key, val in forecaster.mapper.backward(np.vstack(raws), np.vstack(drows)).items():
            grads[key] = val
    else:
        for key, val in forecaster.mapper.param_dict().items():
            grads[key] = np.zeros_like(val)
    for key, val in seq_grads.items():
        grads[f"seq.{key}"] = val
    return totals, act_sums, obs_sums, grads


def rollout_observation(model, h_prefix: np.ndarray, delta: int) -> np.ndarray:
    """Append ``delta`` self-predicted rows to a prefix, returning the new rows.

    Reference implementation via repeated full forward passes; only defined
    for the neural forecaster.
    """
    if not isinstance(model, Forecaster):
        kind = getattr(model, "kind", type(model).__name__)
        raise TypeError(f"observation rollout requires a neural model, got {kind!r}")
    rows = []
    prefix = h_prefix
    for _ in range(delta):
        nxt = model.step(prefix)
        rows.append(nxt)
        prefix = np.vstack([prefix, nxt])
    return np.array(rows).reshape(len(rows), h_prefix.shape[1]) if rows else np.zeros((0, h_prefix.shape[1]))


# ── Training ─────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TrainItem:
    """One teacher-forced sequence: a history plus an optional plan region."""

    goal: int
    history: SegmentHistory
    plan_segments: tuple = ()
    plan_actions: tuple[int, ...] = ()


def build_training_items(
    videos,
    vocab: Vocabulary,
    obs_model: ObservationModel,
    delta: int,
    condition: Condition,
    horizon: int = 4,
) -> list[TrainItem]:
    """Teacher-forcing material from clean (zero-corruption) segments.

    Full-observation models train on per-example windows shaped exactly
    like decoded sequences: the encoded history, then the target steps with
    their observations interleaved (minus the unobservable boundary
    window). Action-history-only models train on one whole-video sequence
    each, every prefix of which is a valid history. Last-observation models
    train on windows whose plan region is action tokens only. Items hold
    raw segment histories; encodings are built at loss time from the
    current parameters.
    """
    items: list[TrainItem] = []
    for vid_idx, video in enumerate(videos):
        gid = vocab.goal_id(video.goal)
        hist = segment_history(
            video, int(np.ceil(video.duration)), delta, obs_model, 0.0, vid_idx, vocab
        )
        if condition.observations == "all":
            # One window per prediction point; windows beyond the evaluated
            # range still teach the decoded-sequence grammar, so every
            # history length with at least one following step is used.
            for k in range(1, hist.k):
                items.append(
                    TrainItem(
                        goal=gid,
                        history=SegmentHistory(hist.segments[:k]),
                        plan_segments=tuple(hist.segments[k : k + horizon]),
                    )
                )
        elif condition.observations == "none":
            if hist.k >= 1:
                items.append(TrainItem(goal=gid, history=hist))
        else:  # "last"
            for k in range(1, hist.k):
                prefix = SegmentHistory(hist.segments[:k])
                targets = tuple(s.action for s in hist.segments[k : k + horizon])
                items.append(TrainItem(goal=gid, history=prefix, plan_actions=targets))
    return items


def encode_train_item(forecaster: Forecaster, item: TrainItem) -> HistoryEncoding:
    enc = forecaster.encode(item.goal, item.history)
    if item.plan_segments:
        enc = extend_with_plan(
            enc, item.plan_segments, forecaster.table, forecaster.mapper, forecaster.vocab
        )
    elif item.plan_actions:
        enc = extend_with_actions(enc, item.plan_actions, forecaster.table, forecaster.vocab)
    return enc


def train(
    forecaster: Forecaster,
    train_videos,
    vocab: Vocabulary,
    obs_model: ObservationModel,
    cfg: TrainConfig,
    horizon: int = 4,
    resume_state: dict | None = None,
) -> TrainResult:
    """Teacher-forced training; deterministic given config and seed.

    Gradients are averaged over each batch, clipped by global norm, and
    applied with adaptive moments. A non-finite epoch aborts with the last
    finite parameters restored and :class:`DivergenceError` raised.
    """
    cfg.validate()
    adam = nn.Adam(forecaster.params, cfg.lr)
    rng = np.random.default_rng([cfg.seed, 271828])
    start_epoch = 0
    curve: list[dict] = []
    if resume_state is not None:
        adam.load_state_dict(resume_state["adam"])
        rng.bit_generator.state = resume_state["rng"]
        start_epoch = int(resume_state["epoch"])
        curve = [dict(row) for row in resume_state.get("curve", [])]

    items = build_training_items(
        train_videos, vocab, obs_model, forecaster.cfg.delta, forecaster.condition, horizon
    )
    items = [
        it for it in items if encode_train_item(forecaster, it).n >= 2
    ]
    if not items:
        raise ValueError("training split produced no usable sequences")
    last_good = {k: v.copy() for k, v in forecaster.params.items()}
    for epoch in range(start_epoch, cfg.epochs):
        order = rng.permutation(len(items))
        sums = {"loss": 0.0, "act": 0.0, "obs": 0.0}
        try:
            for lo in range(0, len(order), cfg.batch_size):
                chunk = order[lo : lo + cfg.batch_size]
                encs = [encode_train_item(forecaster, items[idx]) for idx in chunk]
                totals, act_sums, obs_sums, grads = batch_loss_and_grads(
                    forecaster, encs, cfg.lambda_act, cfg.lambda_obs
                )
                sums["loss"] += float(totals.sum())
                sums["act"] += float(act_sums.sum())
                sums["obs"] += float(obs_sums.sum())
                _apply_batch(adam, grads, len(chunk), cfg.grad_clip)
        except (DivergenceError, FloatingPointError) as exc:
            for key, val in last_good.items():
                forecaster.params[key][...] = val
            raise DivergenceError(f"training diverged in epoch {epoch}: {exc}") from exc
        mean_loss = sums["loss"] / len(items)
        if not np.isfinite(mean_loss) or not all(
            np.isfinite(v).all() for v in forecaster.params.values()
        ):
            for key, val in last_good.items():
                forecaster.params[key][...] = val
            raise DivergenceError(f"training diverged in epoch {epoch}")
        last_good = {k: v.copy() for k, v in forecaster.params.items()}
        curve.append(
            {
                "epoch": epoch,
                "loss": mean_loss,
                "act": sums["act"] / len(items),
                "obs": sums["obs"] / len(items),
            }
        )
    train_state = {
        "epoch": cfg.epochs,
        "adam": adam.state_dict(),
        "rng": rng.bit_generator.state,
        "curve": [dict(row) for row in curve],
    }
    return TrainResult(curve=curve, train_state=train_state)


def _apply_batch(adam: nn.Adam, accum: dict, count: int, clip: float) -> None:
    for key in accum:
        accum[key] /= count
    nn.clip_global_norm(accum, clip)
    adam.step(accum)


# ── Transition-table policy ──────────────────────────────────────────


@dataclass
class TransitionTable:
    """First-order next-action statistics from frequency counts.

    Rows with no observations fall back to the marginal next-action
    distribution unless ``backoff`` is disabled. Scores can be renormalized
    over a goal's applicable actions.
    """

    counts: np.ndarray
    initial_counts: np.ndarray
    goal_restricted: bool = False
    backoff: bool = True

    @property
    def n_actions(self) -> int:
        return self.counts.shape[0]

    def probabilities(self) -> np.ndarray:
        rows = self.counts.astype(float)
        sums = rows.sum(axis=1, keepdims=True)
        marginal = self.counts.sum(axis=0).astype(float)
        marginal_total = marginal.sum()
        out = np.zeros_like(rows)
        for i in range(rows.shape[0]):
            if sums[i, 0] > 0:
                out[i] = rows[i] / sums[i, 0]
            elif self.backoff and marginal_total > 0:
                out[i] = marginal / marginal_total
        return out

    def initial_probabilities(self) -> np.ndarray:
        tot = self.initial_counts.sum()
        if tot == 0:
            return np.full(self.n_actions, 1.0 / self.n_actions)
        return self.initial_counts / tot

    def next_distribution(self, prev: int | None, allowed=None) -> np.ndarray:
        """P(next | prev), optionally renormalized over an allowed id set."""
        dist = self.initial_probabilities() if prev is None else self.probabilities()[prev]
        if allowed is None:
            return dist
        masked = np.zeros_like(dist)
        idx = np.asarray(sorted(allowed), dtype=int)
        masked[idx] = dist[idx]
        z = masked.sum()
        if z > 0:
            return masked / z
        if self.backoff:
            masked[idx] = 1.0 / len(idx)
        return masked

    def to_json(self, vocab: Vocabulary) -> dict:
        rows = {}
        for i in range(self.n_actions):
            entries = {
                vocab.actions[j]: float(p)
                for j, p in enumerate(self.probabilities()[i])
                if p > 0
            }
            if entries:
                rows[vocab.actions[i]] = entries
        initial = {
            vocab.actions[i]: float(p)
            for i, p in enumerate(self.initial_probabilities())
            if p > 0
        }
        return {
            "actions": list(vocab.actions),
            "rows": rows,
            "initial": initial,
            "goal_restricted": self.goal_restricted,
        }


def fit_markov(annotations, vocab: Vocabulary, goal_restricted: bool = False) -> TransitionTable:
    """Count consecutive action pairs (and first actions) across videos."""
    if not annotations:
        raise ValueError("cannot fit a transition table on zero annotations")
    a = vocab.n_actions
    counts = np.zeros((a, a))
    initial = np.zeros(a)
    for video in annotations:
        ids = [vocab.action_id(s.action) for s in video.steps]
        initial[ids[0]] += 1
        for prev, nxt in zip(ids, ids[1:]):
            counts[prev, nxt] += 1
    return TransitionTable(counts=counts, initial_counts=initial, goal_restricted=goal_restricted)


# ── Scorers ──────────────────────────────────────────────────────────


@dataclass
class NeuralState:
    cache: object
    length: int
    last_out: np.ndarray


class NeuralScorer:
    """Extension scoring and observation rollout for a trained forecaster.

    The score of appending an action sums, over its tokens, the dot product
    between the token's embedding and the model's prediction for that
    position given everything before it. With ``normalize_scores`` each
    term is shifted by the log-sum-exp of all vocabulary dots, turning the
    sum into the log-probability of the action's token sequence; raw dots
    let large-norm token rows dominate regardless of context fit, so the
    normalized form is the recommended operating mode and the raw form is
    kept for the literal scoring-function contract.
    """

    kind = "neural"

    def __init__(self, forecaster: Forecaster, vocab: Vocabulary, normalize_scores: bool = False):
        self.model = forecaster
        self.vocab = vocab
        self.normalize_scores = normalize_scores

    def _lse(self, preds: np.ndarray) -> np.ndarray:
        """log-sum-exp over vocabulary logits for predictions (..., d)."""
        logits = preds @ self.model.table.T
        peak = logits.max(axis=-1)
        return peak + np.log(np.exp(logits - peak[..., None]).sum(axis=-1))

    def init_state(self, goal_id: int, history: SegmentHistory) -> NeuralState:
        enc = self.model.encode(goal_id, history)
        if enc.n < 1:
            raise ValueError("cannot score from an empty encoded history")
        outs, cache = self.model.seq.forward_incremental(
            self.model.seq.empty_cache(), enc.h, 0
        )
        return NeuralState(cache=cache, length=enc.n, last_out=outs[-1])

    def score_extensions(self, state: NeuralState, candidates) -> np.ndarray:
        return self.score_extensions_multi([state], candidates)[0]

    def score_extensions_multi(self, states, candidates) -> np.ndarray:
        """(B, C) extension scores for B states and C candidate actions."""
        candidates = np.asarray(candidates, dtype=int)
        table = self.model.table
        vocab = self.vocab
        seq = self.model.seq
        stacked, lens = seq.stack_caches([s.cache for s in states])
        offsets = np.array([s.length for s in states], dtype=int)
        last = np.stack([s.last_out for s in states])  # (B, d)
        scores = np.zeros((len(states), len(candidates)))
        by_r: dict[int, list[int]] = {}
        for pos, aid in enumerate(candidates):
            by_r.setdefault(vocab.r(int(aid)), []).append(pos)
        lse_last = self._lse(last) if self.normalize_scores else None
        for r, positions in sorted(by_r.items()):
            alphas = np.stack(
                [table[list(vocab.action_token_ids[int(candidates[p])])] for p in positions]
            )  # (C, r, d)
            phi = last @ alphas[:, 0, :].T  # (B, C)
            if self.normalize_scores:
                phi = phi - lse_last[:, None]
            if r > 1:
                x_new = np.broadcast_to(
                    alphas[None, :, : r - 1, :], (len(states), len(positions), r - 1, alphas.shape[2])
                )
                outs = seq.forward_candidates_batch(stacked, offsets, x_new, offsets)
                phi = phi + np.einsum("cjd,bcjd->bc", alphas[:, 1:, :], outs)
                if self.normalize_scores:
                    phi = phi - self._lse(outs).sum(axis=-1)
            scores[:, positions] = phi
        return scores

    def extend(self, state: NeuralState, action: int) -> NeuralState:
        return self.extend_multi([state], [action])[0]

    def extend_multi(self, states, actions) -> list:
        """Append one chosen action per state; actions may differ in length."""
        vocab = self.vocab
        seq = self.model.seq
        out_states: list[NeuralState | None] = [None] * len(states)
        by_r: dict[int, list[int]] = {}
        for i, aid in enumerate(actions):
            by_r.setdefault(vocab.r(int(aid)), []).append(i)
        for r, group in sorted(by_r.items()):
            rows = np.stack(
                [self.model.table[list(vocab.action_token_ids[int(actions[i])])] for i in group]
            )
            stacked, lens = seq.stack_caches([states[i].cache for i in group])
            offsets = np.array([states[i].length for i in group], dtype=int)
            outs, new_stacked, new_lens = seq.forward_incremental_batch(stacked, lens, rows, offsets)
            caches = seq.unstack_caches(new_stacked, new_lens)
            for slot, i in enumerate(group):
                out_states[i] = NeuralState(
                    cache=caches[slot], length=states[i].length + r, last_out=outs[slot, -1]
                )
        return out_states

    def rollout_observations(self, state: NeuralState, delta: int) -> NeuralState:
        return self.rollout_multi([state], delta)[0]

    def rollout_multi(self, states, delta: int) -> list:
        """Append ``delta`` self-predicted rows to each state (a no-op for
        conditions that never feed observations to the model)."""
        if self.model.condition.observations != "all" or delta <= 0:
            return list(states)
        seq = self.model.seq
        stacked, lens = seq.stack_caches([s.cache for s in states])
        offsets = np.array([s.length for s in states], dtype=int)
        last = np.stack([s.last_out for s in states])
        for _ in range(delta):
            outs, stacked, lens = seq.forward_incremental_batch(stacked, lens, last[:, None, :], offsets)
            offsets = offsets + 1
            last = outs[:, -1, :]
        caches = seq.unstack_caches(stacked, lens)
        return [
            NeuralState(cache=caches[b], length=int(offsets[b]), last_out=last[b])
            for b in range(len(states))
        ]


class MarkovScorer:
    """Log-probability extension scoring from a transition table."""

    kind = "markov"

    def __init__(self, table: TransitionTable, vocab: Vocabulary):
        self.table = table
        self.vocab = vocab

    def _allowed(self, goal_id: int):
        if not self.table.goal_restricted:
            return None
        return self.vocab.goal_actions[goal_id]

    def init_state(self, goal_id: int, history: SegmentHistory):
        last = history.segments[-1].action if history.k else None
        return (goal_id, last)

    def score_extensions(self, state, candidates) -> np.ndarray:
        goal_id, prev = state
        dist = self.table.next_distribution(prev, self._allowed(goal_id))
        with np.errstate(divide="ignore"):
            logs = np.log(dist)
        return logs[np.asarray(candidates, dtype=int)]

    def extend(self, state, action: int):
        return (state[0], int(action))

    def rollout_observations(self, state, delta: int):
        return state


class RandomScorer:
    """Uniform policy over the full or goal-restricted action set."""

    kind = "random"

    def __init__(self, vocab: Vocabulary, goal_restricted: bool = False):
        self.vocab = vocab
        self.goal_restricted = goal_restricted

    def _support(self, goal_id: int) -> np.ndarray:
        if self.goal_restricted:
            return np.asarray(self.vocab.goal_actions[goal_id], dtype=int)
        return np.arange(self.vocab.n_actions)

    def init_state(self, goal_id: int, history: SegmentHistory):
        return goal_id

    def score_extensions(self, state, candidates) -> np.ndarray:
        support = self._support(state)
        inside = np.isin(np.asarray(candidates, dtype=int), support)
        scores = np.full(len(candidates), -np.inf)
        scores[inside] = -np.log(len(support))
        return scores

    def extend(self, state, action: int):
        return state

    def rollout_observations(self, state, delta: int):
        return state

    def sample_plan(self, goal_id: int, length: int, rng: np.random.Generator) -> list[int]:
        support = self._support(goal_id)
        return [int(a) for a in rng.choice(support, size=length, replace=True)]


# ── Checkpoints ──────────────────────────────────────────────────────


def _vocab_fingerprint(vocab: Vocabulary) -> str:
    return config_hash(vocab.to_json())


def save_checkpoint(path, forecaster: Forecaster, extra: dict | None = None, train_state: dict | None = None) -> None:
    """Persist parameters and configuration as deterministic JSON."""
    state = dict(train_state) if train_state is not None else None
    if state is not None:
        state = copy.deepcopy(state)
        state["rng"] = _encode_rng(state["rng"])
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": forecaster.cfg.to_json(),
        "config_hash": config_hash(forecaster.cfg.to_json()),
        "vocab_hash": _vocab_fingerprint(forecaster.vocab),
        "params": {k: v.tolist() for k, v in forecaster.params.items()},
        "train_state": state,
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path, vocab: Vocabulary):
    """Rebuild a forecaster from a checkpoint written for this vocabulary."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    if payload["vocab_hash"] != _vocab_fingerprint(vocab):
        raise ConfigError("checkpoint was trained against a different vocabulary")
    cfg = ModelConfig.from_json(payload["config"])
    model = Forecaster(cfg, vocab)
    for key, val in payload["params"].items():
        model.params[key][...] = np.array(val, dtype=float).reshape(model.params[key].shape)
    state = payload.get("train_state")
    if state is not None:
        state = copy.deepcopy(state)
        state["rng"] = _decode_rng(state["rng"])
    return model, {"extra": payload.get("extra", {}), "train_state": state, "config_hash": payload["config_hash"]}


def _encode_rng(state: dict) -> dict:
    # PCG64 state holds 128-bit integers; JSON keeps them as strings.
    enc = copy.deepcopy(state)
    enc["state"] = {k: str(v) for k, v in state["state"].items()}
    return enc


def _decode_rng(state: dict) -> dict:
    dec = copy.deepcopy(state)
    dec["state"] = {k: int(v) for k, v in state["state"].items()}
    return dec
