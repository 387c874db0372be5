"""Plan-quality metrics and test-set aggregation.

Per-example metrics compare a predicted action sequence against the
ground-truth continuation over a horizon ``l``, in decreasing order of
strictness: exact-sequence success, per-step accuracy, order-free set
overlap, and first-step accuracy. Edit distance is included as an
auxiliary sequence metric. Aggregation averages per-seed means and
reports the standard error across seeds, plus history-length and
per-goal breakdowns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NO_ACTION",
    "success_rate",
    "mean_accuracy",
    "miou",
    "next_accuracy",
    "edit_distance",
    "normalized_edit_distance",
    "EvalRecord",
    "SummaryRow",
    "Summary",
    "aggregate",
    "spearman_rank_correlation",
]

# Reserved pad value for predictions shorter than the horizon; it matches
# nothing, including another pad.
NO_ACTION = -1


def _check_horizon(pred, gt, l: int) -> None:
    if l < 1:
        raise ValueError(f"horizon must be >= 1, got {l}")
    if len(pred) < l or len(gt) < l:
        raise ValueError(
            f"horizon {l} exceeds a sequence (lengths {len(pred)}, {len(gt)})"
        )


def _hit(a, b) -> bool:
    return a == b and a != NO_ACTION


def success_rate(pred, gt, l: int) -> int:
    """1 iff the first ``l`` actions match the ground truth exactly, in order."""
    _check_horizon(pred, gt, l)
    return int(all(_hit(p, g) for p, g in zip(pred[:l], gt[:l])))


def mean_accuracy(pred, gt, l: int) -> float:
    """Fraction of the first ``l`` positions whose actions match."""
    _check_horizon(pred, gt, l)
    return sum(_hit(p, g) for p, g in zip(pred[:l], gt[:l])) / l


def miou(pred, gt, l: int) -> float:
    """Order-free overlap: |set(pred) ∩ set(gt)| / |set(pred) ∪ set(gt)|.

    Duplicates collapse under set semantics; pad values stay in the union
    (they can only hurt) but never intersect.
    """
    _check_horizon(pred, gt, l)
    ps, gs = set(pred[:l]), set(gt[:l])
    inter = {a for a in ps & gs if a != NO_ACTION}
    union = ps | gs
    return len(inter) / len(union)


def next_accuracy(pred, gt) -> int:
    """1 iff the immediate next action is correct (success at horizon 1)."""
    return success_rate(pred, gt, 1)


def edit_distance(pred, gt) -> int:
    """Levenshtein distance over whole action sequences, unit costs."""
    m, n = len(pred), len(gt)
    if m == 0:
        return n
    if n == 0:
        return m
    prev = list(range(n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        for j in range(1, n + 1):
            if _hit(pred[i - 1], gt[j - 1]):
                cur[j] = prev[j - 1]
            else:
                cur[j] = 1 + min(prev[j - 1], prev[j], cur[j - 1])
        prev = cur
    return prev[n]


def normalized_edit_distance(pred, gt) -> float:
    longest = max(len(pred), len(gt))
    return edit_distance(pred, gt) / longest if longest else 0.0


# ── Aggregation ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class EvalRecord:
    """Metric bundle of one (example, seed, horizon) evaluation."""

    example_id: str
    goal: int
    k: int
    l: int
    sr: int
    macc: float
    miou: float
    nacc: int
    condition: str
    seed: int
    ed: int | None = None
    ed_norm: float | None = None

    def validate(self) -> None:
        if not (self.sr <= self.macc + 1e-12):
            raise ValueError("success rate cannot exceed mean accuracy")
        for name in ("macc", "miou"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise ValueError(f"{name} out of [0, 1]: {val}")

    def to_json(self) -> dict:
        out = {
            "example_id": self.example_id,
            "goal": self.goal,
            "k": self.k,
            "l": self.l,
            "sr": self.sr,
            "macc": self.macc,
            "miou": self.miou,
            "nacc": self.nacc,
            "condition": self.condition,
            "seed": self.seed,
        }
        if self.ed is not None:
            out["ed"] = self.ed
            out["ed_norm"] = self.ed_norm
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EvalRecord":
        return cls(
            example_id=obj["example_id"],
            goal=int(obj["goal"]),
            k=int(obj["k"]),
            l=int(obj["l"]),
            sr=int(obj["sr"]),
            macc=float(obj["macc"]),
            miou=float(obj["miou"]),
            nacc=int(obj["nacc"]),
            condition=obj["condition"],
            seed=int(obj["seed"]),
            ed=int(obj["ed"]) if "ed" in obj else None,
            ed_norm=float(obj["ed_norm"]) if "ed_norm" in obj else None,
        )


_METRICS = ("sr", "macc", "miou", "nacc", "ed", "ed_norm")


@dataclass(frozen=True)
class SummaryRow:
    condition: str
    l: int
    metric: str
    mean: float
    ste: float
    n_seeds: int


@dataclass(frozen=True)
class Summary:
    """Across-seed means with per-k and per-goal breakdowns."""

    rows: tuple[SummaryRow, ...]
    k_curves: tuple[tuple, ...] = field(default_factory=tuple)
    # (condition, l, k, macc_mean, n)
    goal_tables: tuple[tuple, ...] = field(default_factory=tuple)
    # (condition, l, goal, macc_mean, n)

    def value(self, condition: str, l: int, metric: str) -> float:
        for row in self.rows:
            if (row.condition, row.l, row.metric) == (condition, l, metric):
                return row.mean
        raise KeyError((condition, l, metric))

    def ste(self, condition: str, l: int, metric: str) -> float:
        for row in self.rows:
            if (row.condition, row.l, row.metric) == (condition, l, metric):
                return row.ste
        raise KeyError((condition, l, metric))


def aggregate(records) -> Summary:
    """Fold evaluation records into a summary.

    Within each (condition, horizon) group the mean of every metric is
    computed per seed first; the reported mean and standard error are then
    taken across those seed means (a single seed reports ste 0).
    """
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate zero records")
    groups: dict[tuple, list[EvalRecord]] = {}
    for rec in records:
        groups.setdefault((rec.condition, rec.l), []).append(rec)
    rows: list[SummaryRow] = []
    k_curves: list[tuple] = []
    goal_tables: list[tuple] = []
    for (condition, l), recs in sorted(groups.items()):
        seeds = sorted({r.seed for r in recs})
        for metric in _METRICS:
            seed_means = []
            for seed in seeds:
                vals = [
                    getattr(r, metric)
                    for r in recs
                    if r.seed == seed and getattr(r, metric) is not None
                ]
                if vals:
                    seed_means.append(float(np.mean(vals)))
            if not seed_means:
                continue
            mean = float(np.mean(seed_means))
            if len(seed_means) > 1:
                ste = float(np.std(seed_means, ddof=1) / np.sqrt(len(seed_means)))
            else:
                ste = 0.0
            rows.append(SummaryRow(condition, l, metric, mean, ste, len(seed_means)))
        for k in sorted({r.k for r in recs}):
            vals = [r.macc for r in recs if r.k == k]
            k_curves.append((condition, l, k, float(np.mean(vals)), len(vals)))
        for goal in sorted({r.goal for r in recs}):
            vals = [r.macc for r in recs if r.goal == goal]
            goal_tables.append((condition, l, goal, float(np.mean(vals)), len(vals)))
    return Summary(rows=tuple(rows), k_curves=tuple(k_curves), goal_tables=tuple(goal_tables))


def spearman_rank_correlation(x, y) -> float:
    """Rank correlation with average ranks on ties; 0.0 for constant input."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length 1-d arrays of size >= 2")
    rx, ry = _average_ranks(x), _average_ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks
