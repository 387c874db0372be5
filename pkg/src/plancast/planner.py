"""Plan search: scored beam decoding and closed-set retrieval planning.

Beam decoding extends every live trajectory by every candidate action,
keeps the highest-scoring ``B`` trajectories subject to a per-parent cap
of ``b`` survivors, then (for scorers that model observations) rolls out
``delta`` predicted observation rows per survivor before the next step.
Scores are cumulative extension scores; ties are broken by a fixed total
order (score desc, action id asc, parent index asc) so decoding is fully
deterministic.

The retrieval planner drives an external free-form text generator one
action at a time and snaps each generated phrase onto the closed action
set by cosine similarity.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary, tokenize
from .errors import GeneratorError, SearchDeadEnd
from .segments import SegmentHistory

__all__ = [
    "BeamConfig",
    "Beam",
    "candidate_actions",
    "phi",
    "beam_search",
    "BagOfWordsEmbedder",
    "retrieve_closest_action",
    "plan_with_generator",
    "TextGeneratorClient",
    "MockTextGenerator",
]


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 10
    per_node: int = 3
    plan_length: int = 4
    delta: int = 2
    restrict_to_goal: bool = False
    length_normalize: bool = False

    def validate(self) -> None:
        if not (1 <= self.per_node <= self.beam_size):
            raise ValueError("need 1 <= per_node <= beam_size")
        if self.plan_length < 1:
            raise ValueError("plan length must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")


@dataclass
class Beam:
    """One live trajectory: scorer state, appended actions, cumulative score."""

    state: object
    actions: tuple[int, ...]
    score: float
    parent: int


def candidate_actions(vocab: Vocabulary, goal_id: int, restrict_to_goal: bool) -> np.ndarray:
    if restrict_to_goal:
        ids = np.asarray(vocab.goal_actions[goal_id], dtype=int)
        if ids.size == 0:
            raise ValueError(f"goal {goal_id} has no applicable actions")
        return ids
    return np.arange(vocab.n_actions)


def phi(scorer, state, action: int, length_normalize: bool = False, vocab: Vocabulary | None = None) -> float:
    """Extension score of one action from one scorer state."""
    score = float(scorer.score_extensions(state, np.array([action]))[0])
    if length_normalize:
        vocab = vocab if vocab is not None else getattr(scorer, "vocab")
        score /= vocab.r(action)
    return score


def beam_search(
    scorer,
    goal_id: int,
    history: SegmentHistory,
    cfg: BeamConfig,
    vocab: Vocabulary,
):
    """Decode a plan of ``cfg.plan_length`` actions; returns (plan, beams).

    The returned beams are the final survivors in rank order; the plan is
    the top beam's appended actions.
    """
    cfg.validate()
    cands = candidate_actions(vocab, goal_id, cfg.restrict_to_goal)
    beams = [Beam(state=scorer.init_state(goal_id, history), actions=(), score=0.0, parent=0)]
    r_norm = np.array([vocab.r(int(a)) for a in cands], dtype=float)
    batched = hasattr(scorer, "score_extensions_multi")
    for _ in range(cfg.plan_length):
        if batched:
            ext_matrix = scorer.score_extensions_multi([b.state for b in beams], cands)
        else:
            ext_matrix = np.stack([scorer.score_extensions(b.state, cands) for b in beams])
        if cfg.length_normalize:
            ext_matrix = ext_matrix / r_norm
        pool = []  # (cumulative score, action id, parent index)
        for parent_idx, beam in enumerate(beams):
            for aid, score in zip(cands, ext_matrix[parent_idx]):
                total = beam.score + float(score)
                if np.isfinite(total):
                    pool.append((total, int(aid), parent_idx))
        if not pool:
            best = max(beams, key=lambda b: b.score)
            raise SearchDeadEnd(best.actions)
        pool.sort(key=lambda item: (-item[0], item[1], item[2]))
        survivors = []
        per_parent: dict[int, int] = {}
        for total, aid, parent_idx in pool:
            if per_parent.get(parent_idx, 0) >= cfg.per_node:
                continue
            per_parent[parent_idx] = per_parent.get(parent_idx, 0) + 1
            survivors.append((total, aid, parent_idx))
            if len(survivors) == cfg.beam_size:
                break
        if batched:
            states = scorer.extend_multi(
                [beams[p].state for _, _, p in survivors], [a for _, a, _ in survivors]
            )
            states = scorer.rollout_multi(states, cfg.delta)
        else:
            states = [scorer.extend(beams[p].state, a) for _, a, p in survivors]
            states = [scorer.rollout_observations(s, cfg.delta) for s in states]
        beams = [
            Beam(state=state, actions=beams[p].actions + (a,), score=total, parent=p)
            for state, (total, a, p) in zip(states, survivors)
        ]
    return list(beams[0].actions), beams


# ── Closed-set retrieval planning ────────────────────────────────────


class BagOfWordsEmbedder:
    """Counts of corpus word tokens; words outside the vocabulary are dropped."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.vocab.n_tokens)
        for word in tokenize(text):
            idx = self.vocab.token_index.get(word)
            if idx is not None:
                vec[idx] += 1.0
        return vec


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def retrieve_closest_action(text: str, vocab: Vocabulary, embedder) -> int:
    """Snap free-form text onto the closed action set by cosine similarity.

    Ties (including the all-zero embedding) resolve to the lowest action id.
    """
    query = embedder.embed(text)
    best_id, best_sim = 0, -np.inf
    for aid, phrase in enumerate(vocab.actions):
        sim = _cosine(query, embedder.embed(phrase))
        if sim > best_sim:
            best_id, best_sim = aid, sim
    return best_id


def _compose_prompt(goal: str, history_phrases, generated_phrases) -> str:
    lines = [f"Goal: {goal}", "Steps so far:"]
    for phrase in list(history_phrases) + list(generated_phrases):
        lines.append(f"- {phrase}")
    lines.append("Next step:")
    return "\n".join(lines)


def plan_with_generator(
    client,
    goal_id: int,
    history_actions,
    plan_length: int,
    vocab: Vocabulary,
    embedder=None,
) -> list[int]:
    """Plan by alternating free-form generation with closed-set retrieval.

    Each round prompts the client with the goal, the given history, and the
    actions retrieved so far; the generated text is mapped to the most
    similar action, which is appended to the next prompt. A client failure
    raises :class:`GeneratorError` carrying the partial plan.
    """
    embedder = embedder if embedder is not None else BagOfWordsEmbedder(vocab)
    history_phrases = [vocab.actions[a] for a in history_actions]
    plan: list[int] = []
    for _ in range(plan_length):
        prompt = _compose_prompt(
            vocab.goals[goal_id], history_phrases, [vocab.actions[a] for a in plan]
        )
        try:
            text = client.generate(prompt)
        except GeneratorError as exc:
            raise GeneratorError(str(exc), partial_plan=plan) from exc
        plan.append(retrieve_closest_action(text, vocab, embedder))
    return plan


@dataclass
class TextGeneratorClient:
    """Minimal HTTP client for an external text-generation endpoint.

    POSTs ``{"model", "prompt"}`` as JSON and expects ``{"text": ...}``
    back. Configuration comes from the harness config file; tests use the
    in-tree mock instead.
    """

    endpoint: str
    model: str = "default"
    timeout_s: float = 10.0
    max_retries: int = 2

    def generate(self, prompt: str) -> str:
        payload = json.dumps({"model": self.model, "prompt": prompt}).encode()
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                req = urllib.request.Request(
                    self.endpoint, data=payload, headers={"Content-Type": "application/json"}
                )
                with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                    body = json.loads(resp.read().decode())
                return str(body["text"])
            except (urllib.error.URLError, OSError, KeyError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(min(0.2 * (attempt + 1), 1.0))
        raise GeneratorError(f"text generator failed after {self.max_retries + 1} attempts: {last_error}")


class MockTextGenerator:
    """Deterministic stand-in for the external generator.

    Either replays a scripted list of responses, applies a callable to the
    prompt, or (given a vocabulary) emits a seeded random action phrase.
    """

    def __init__(self, responses=None, fn=None, vocab: Vocabulary | None = None, seed: int = 0):
        if sum(x is not None for x in (responses, fn, vocab)) != 1:
            raise ValueError("provide exactly one of responses, fn, vocab")
        self._responses = list(responses) if responses is not None else None
        self._fn = fn
        self._vocab = vocab
        self._rng = np.random.default_rng([seed, 424243])
        self._cursor = 0

    def generate(self, prompt: str) -> str:
        if self._fn is not None:
            return self._fn(prompt)
        if self._responses is not None:
            if self._cursor >= len(self._responses):
                raise GeneratorError("mock generator ran out of scripted responses")
            out = self._responses[self._cursor]
            self._cursor += 1
            return out
        return self._vocab.actions[int(self._rng.integers(0, self._vocab.n_actions))]
