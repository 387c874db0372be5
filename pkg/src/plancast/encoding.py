"""Interleaved history encoding: goal tokens, observation rows, action tokens.

One history becomes a single matrix ``H`` of d-dimensional rows laid out
as ``[goal tokens][obs_1][act_1]...[obs_k][act_k]`` together with a binary
mask ``M`` marking action-token rows, a target mask marking rows that may
contribute training loss, and the word-token id at every action row.

With goal tokens of length g, k segments of ``delta`` observation vectors
each, and action phrases of r_1..r_k tokens, the length is always
``n = g + k*delta + sum(r_i)``.

Ablation variants drop parts of the layout: no goal prefix, no action
tokens, or only the most recent observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary
from .segments import ObservationWindow, SegmentHistory

__all__ = [
    "KIND_GOAL",
    "KIND_OBS",
    "KIND_ACTION",
    "NO_TOKEN",
    "Condition",
    "FULL",
    "NO_OBS",
    "LAST_OBS",
    "LAST_OBS_NOGOAL",
    "CONDITIONS",
    "Mapper",
    "init_embedding_table",
    "init_mapper",
    "encode_action",
    "encode_observation",
    "build_history",
    "extend_with_plan",
    "extend_with_actions",
]

KIND_GOAL, KIND_OBS, KIND_ACTION = 0, 1, 2
NO_TOKEN = -1


@dataclass(frozen=True)
class Condition:
    """Which inputs the encoded history exposes to the sequence model."""

    use_goal: bool = True
    use_actions: bool = True
    observations: str = "all"  # "all" | "last" | "none"

    def __post_init__(self):
        if self.observations not in ("all", "last", "none"):
            raise ValueError(f"unknown observation mode {self.observations!r}")

    @property
    def name(self) -> str:
        for key, cond in CONDITIONS.items():
            if cond == self:
                return key
        return f"goal={self.use_goal},actions={self.use_actions},obs={self.observations}"


FULL = Condition(True, True, "all")
NO_OBS = Condition(True, True, "none")
LAST_OBS = Condition(True, False, "last")
LAST_OBS_NOGOAL = Condition(False, False, "last")

CONDITIONS = {
    "full": FULL,
    "no_obs": NO_OBS,
    "last_obs": LAST_OBS,
    "last_obs_nogoal": LAST_OBS_NOGOAL,
}


@dataclass
class Mapper:
    """Trainable map from observation features to the model dimension.

    Affine by default; with a hidden layer it is w2·tanh(w1·x + b1) + b2.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray | None = None
    b2: np.ndarray | None = None

    @property
    def hidden(self) -> bool:
        return self.w2 is not None

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.w1 + self.b1
        if self.hidden:
            y = np.tanh(y) @ self.w2 + self.b2
        return y

    def backward(self, x: np.ndarray, dy: np.ndarray) -> dict:
        """Parameter gradients for a batch ``x`` given output grads ``dy``."""
        if not self.hidden:
            return {"mapper.w1": x.T @ dy, "mapper.b1": dy.sum(axis=0)}
        pre = x @ self.w1 + self.b1
        a = np.tanh(pre)
        d_a = dy @ self.w2.T
        d_pre = d_a * (1.0 - a * a)
        return {
            "mapper.w1": x.T @ d_pre,
            "mapper.b1": d_pre.sum(axis=0),
            "mapper.w2": a.T @ dy,
            "mapper.b2": dy.sum(axis=0),
        }

    def param_dict(self) -> dict:
        out = {"mapper.w1": self.w1, "mapper.b1": self.b1}
        if self.hidden:
            out["mapper.w2"] = self.w2
            out["mapper.b2"] = self.b2
        return out


def init_embedding_table(n_tokens: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(n_tokens, d))


def init_mapper(obs_dim: int, d: int, hidden: bool, rng: np.random.Generator) -> Mapper:
    if hidden:
        return Mapper(
            w1=rng.normal(0.0, 0.02, size=(obs_dim, d)),
            b1=np.zeros(d),
            w2=rng.normal(0.0, 0.02, size=(d, d)),
            b2=np.zeros(d),
        )
    return Mapper(w1=rng.normal(0.0, 0.02, size=(obs_dim, d)), b1=np.zeros(d))


@dataclass
class HistoryEncoding:
    """The encoded sequence plus the bookkeeping needed for training.

    ``token_ids[j]`` is a real word-token id exactly where ``mask[j] == 1``
    (action rows); goal and observation rows carry the ``NO_TOKEN``
    sentinel. ``embed_ids`` additionally records which embedding row built
    each goal/action position so gradients can be routed back; ``obs_raw``
    and ``obs_rows`` do the same for the mapper.
    """

    h: np.ndarray
    mask: np.ndarray
    target_mask: np.ndarray
    token_ids: np.ndarray
    kind: np.ndarray
    embed_ids: np.ndarray
    obs_raw: np.ndarray
    obs_rows: np.ndarray
    goal_len: int

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def d(self) -> int:
        return self.h.shape[1]


def encode_action(action_id: int, table: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Embedding rows of one action phrase: an (r, d) matrix."""
    ids = vocab.action_token_ids[action_id]
    return table[list(ids)]


def encode_observation(window: ObservationWindow, mapper: Mapper) -> np.ndarray:
    """Mapped observation window: a (delta, d) matrix."""
    return mapper.apply(window.vectors)


def _assemble(parts, d: int) -> HistoryEncoding:
    """Stack (rows, kind, token_id_list, embed_id_list, raw|None) parts."""
    rows, kinds, tok, emb, raw_chunks, obs_rows = [], [], [], [], [], []
    offset = 0
    for part_rows, part_kind, part_tok, part_emb, part_raw in parts:
        n_part = part_rows.shape[0]
        rows.append(part_rows)
        kinds.extend([part_kind] * n_part)
        tok.extend(part_tok)
        emb.extend(part_emb)
        if part_raw is not None:
            raw_chunks.append(part_raw)
            obs_rows.extend(range(offset, offset + n_part))
        offset += n_part
    h = np.vstack(rows) if rows else np.zeros((0, d))
    kind = np.array(kinds, dtype=np.int8)
    token_ids = np.array(tok, dtype=int)
    embed_ids = np.array(emb, dtype=int)
    mask = (kind == KIND_ACTION).astype(np.int8)
    n = h.shape[0]
    goal_len = int(np.sum(kind == KIND_GOAL))
    target_mask = np.ones(n, dtype=np.int8)
    target_mask[:goal_len] = 0
    if n > 0:
        target_mask[0] = 0  # nothing predicts the first row
    obs_raw = np.vstack(raw_chunks) if raw_chunks else np.zeros((0, 0))
    return HistoryEncoding(
        h=h,
        mask=mask,
        target_mask=target_mask,
        token_ids=token_ids,
        kind=kind,
        embed_ids=embed_ids,
        obs_raw=obs_raw,
        obs_rows=np.array(obs_rows, dtype=int),
        goal_len=goal_len,
    )


def _action_part(action_id: int, table: np.ndarray, vocab: Vocabulary):
    ids = list(vocab.action_token_ids[action_id])
    return (table[ids], KIND_ACTION, ids, ids, None)


def _obs_part(window: ObservationWindow, mapper: Mapper):
    delta = window.delta
    rows = encode_observation(window, mapper)
    return (rows, KIND_OBS, [NO_TOKEN] * delta, [NO_TOKEN] * delta, window.vectors)


def build_history(
    goal_id: int,
    history: SegmentHistory,
    table: np.ndarray,
    mapper: Mapper,
    vocab: Vocabulary,
    condition: Condition = FULL,
) -> HistoryEncoding:
    """Encode a segment history under an input condition.

    Full layout per segment is observation rows then action-token rows,
    prefixed by the goal prompt's tokens. ``condition`` drops the goal
    prefix, the action tokens, or all but the last observation. When only
    the last observation is kept, its rows are input-only (target mask 0):
    predicting a lone context observation from the goal prompt carries no
    usable signal.
    """
    d = table.shape[1]
    parts = []
    if condition.use_goal:
        gids = list(vocab.goal_token_ids[goal_id])
        parts.append((table[gids], KIND_GOAL, [NO_TOKEN] * len(gids), gids, None))
    segments = history.segments
    if condition.observations == "last":
        for seg in segments[-1:]:
            parts.append(_obs_part(seg.observation, mapper))
        if condition.use_actions:
            for seg in segments:
                parts.append(_action_part(seg.action, table, vocab))
    else:
        for seg in segments:
            if condition.observations == "all":
                parts.append(_obs_part(seg.observation, mapper))
            if condition.use_actions:
                parts.append(_action_part(seg.action, table, vocab))
    enc = _assemble(parts, d)
    if condition.observations == "last":
        enc.target_mask[enc.kind == KIND_OBS] = 0
    return enc


def extend_with_plan(
    enc: HistoryEncoding,
    segments,
    table: np.ndarray,
    mapper: Mapper,
    vocab: Vocabulary,
) -> HistoryEncoding:
    """Append a teacher-forced plan region to an encoded history.

    The region holds the target steps' action tokens with each later step's
    observation rows in front of it; the first step's observation is
    omitted because its window is not observable at prediction time. This
    is exactly the row layout the decoder produces when it extends a
    history, with ground-truth rows standing in for predicted ones.
    """
    rows = [enc.h]
    kinds = [enc.kind]
    toks = [enc.token_ids]
    embs = [enc.embed_ids]
    raw = [enc.obs_raw] if enc.obs_raw.size else []
    obs_rows = list(enc.obs_rows)
    offset = enc.n
    for j, seg in enumerate(segments):
        if j > 0:
            win = seg.observation
            rows.append(encode_observation(win, mapper))
            kinds.append(np.full(win.delta, KIND_OBS, dtype=np.int8))
            toks.append(np.full(win.delta, NO_TOKEN, dtype=int))
            embs.append(np.full(win.delta, NO_TOKEN, dtype=int))
            raw.append(win.vectors)
            obs_rows.extend(range(offset, offset + win.delta))
            offset += win.delta
        ids = list(vocab.action_token_ids[seg.action])
        rows.append(table[ids])
        kinds.append(np.full(len(ids), KIND_ACTION, dtype=np.int8))
        toks.append(np.array(ids, dtype=int))
        embs.append(np.array(ids, dtype=int))
        offset += len(ids)
    h = np.vstack(rows)
    kind = np.concatenate(kinds)
    token_ids = np.concatenate(toks)
    embed_ids = np.concatenate(embs)
    mask = (kind == KIND_ACTION).astype(np.int8)
    n = h.shape[0]
    target_mask = np.ones(n, dtype=np.int8)
    target_mask[: enc.n] = enc.target_mask
    obs_raw = np.vstack(raw) if raw else np.zeros((0, 0))
    return HistoryEncoding(
        h=h,
        mask=mask,
        target_mask=target_mask,
        token_ids=token_ids,
        kind=kind,
        embed_ids=embed_ids,
        obs_raw=obs_raw,
        obs_rows=np.array(obs_rows, dtype=int),
        goal_len=enc.goal_len,
    )


def extend_with_actions(
    enc: HistoryEncoding,
    action_ids,
    table: np.ndarray,
    vocab: Vocabulary,
) -> HistoryEncoding:
    """Append action-token blocks to an encoding (used to build teacher-forced
    training sequences whose plan region contains only action tokens)."""
    rows = [enc.h]
    kinds = [enc.kind]
    toks = [enc.token_ids]
    embs = [enc.embed_ids]
    for aid in action_ids:
        ids = list(vocab.action_token_ids[aid])
        rows.append(table[ids])
        kinds.append(np.full(len(ids), KIND_ACTION, dtype=np.int8))
        toks.append(np.array(ids, dtype=int))
        embs.append(np.array(ids, dtype=int))
    h = np.vstack(rows)
    kind = np.concatenate(kinds)
    token_ids = np.concatenate(toks)
    embed_ids = np.concatenate(embs)
    mask = (kind == KIND_ACTION).astype(np.int8)
    n = h.shape[0]
    target_mask = np.ones(n, dtype=np.int8)
    target_mask[: enc.n] = enc.target_mask
    return HistoryEncoding(
        h=h,
        mask=mask,
        target_mask=target_mask,
        token_ids=token_ids,
        kind=kind,
        embed_ids=embed_ids,
        obs_raw=enc.obs_raw,
        obs_rows=enc.obs_rows,
        goal_len=enc.goal_len,
    )
