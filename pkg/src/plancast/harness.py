"""End-to-end run orchestration: generate, train, evaluate, sweep, report.

A run directory accumulates a corpus, checkpoints, and result files, all
derived from one declarative JSON config plus explicit seeds. Every
command writes its manifest entry before producing results; result files
are plain JSONL/CSV whose bytes depend only on (config, seeds), so two
identical runs produce identical files.

Per-example randomness (label corruption, observation noise, random
baselines) is derived from a counter-based seed sequence over (seed,
example index): evaluation order never affects results.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    GoalChain,
    PlanningExample,
    SynthCorpusSpec,
    Vocabulary,
    build_vocabulary,
    coin_like,
    crosstask_like,
    desk_default,
    deterministic_chain,
    generate_synthetic_corpus,
    load_annotations,
    make_examples,
    save_annotations,
)
from .encoding import CONDITIONS
from .errors import AnnotationError, ConfigError
from .forecaster import (
    Forecaster,
    MarkovScorer,
    ModelConfig,
    NeuralScorer,
    RandomScorer,
    TrainConfig,
    config_hash,
    fit_markov,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .metrics import (
    EvalRecord,
    NO_ACTION,
    Summary,
    aggregate,
    edit_distance,
    mean_accuracy,
    miou,
    next_accuracy,
    normalized_edit_distance,
    spearman_rank_correlation,
    success_rate,
)
from .planner import BeamConfig, beam_search
from .segments import ObservationModel, segment_history

__all__ = [
    "DEFAULT_CONFIG",
    "load_config",
    "CorpusBundle",
    "cmd_gen",
    "cmd_train",
    "cmd_eval",
    "cmd_sweep_noise",
    "cmd_ablate",
    "cmd_report",
    "load_corpus",
    "build_scorer",
    "evaluate_scorer",
    "ensure_checkpoint",
    "test_examples",
    "ABLATION_CONDITIONS",
    "BASELINES",
]

DEFAULT_CONFIG: dict = {
    "corpus": {"preset": "default", "spec": {}, "path": None},
    "observation": {"noise_std": 0.25, "seed": 1},
    "model": {
        "architecture": "attention",
        "d": 32,
        "layers": 2,
        "heads": 2,
        "max_len": 256,
        "mapper_hidden": False,
        "delta": 2,
        "condition": "full",
        "init_checkpoint": None,
    },
    "train": {
        "lr": 3e-3,
        "batch_size": 8,
        "epochs": 15,
        "grad_clip": 5.0,
        "lambda_act": 1.0,
        "lambda_obs": 1.0,
    },
    "beam": {
        "beam_size": 10,
        "per_node": 3,
        "plan_length": 4,
        "restrict_to_goal": False,
        "length_normalize": False,
        "score_normalize": True,
    },
    "eval": {
        "horizons": [1, 3, 4],
        "noise": 0.2,
        "seeds": [0, 1, 2, 3, 4],
        "max_examples": None,
        "noise_grid": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        "conditions": ["full", "markov_goal", "random_goal"],
        "edit_distance": True,
    },
    "generator": {"endpoint": None, "model": "default", "timeout_s": 10.0, "max_retries": 2},
}

_PRESETS = {
    "default": desk_default,
    "crosstask": crosstask_like,
    "coin": coin_like,
    "det1": lambda seed, **kw: deterministic_chain(seed, order=1, **kw),
    "det2": lambda seed, **kw: deterministic_chain(seed, order=2, **kw),
}

BASELINES = ("random", "random_goal", "markov", "markov_goal")
ABLATION_CONDITIONS = ("last_obs_nogoal", "last_obs", "no_obs", "full")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Merge a JSON config file and programmatic overrides onto the defaults."""
    cfg = DEFAULT_CONFIG
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        cfg = _merge(cfg, overrides)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict) -> None:
    if cfg["corpus"]["preset"] is not None and cfg["corpus"]["preset"] not in _PRESETS:
        raise ConfigError(f"unknown corpus preset {cfg['corpus']['preset']!r}")
    if cfg["corpus"]["preset"] is None and cfg["corpus"]["path"] is None:
        raise ConfigError("corpus needs either a preset or a path")
    if cfg["model"]["condition"] not in CONDITIONS:
        raise ConfigError(f"unknown model condition {cfg['model']['condition']!r}")
    if not cfg["eval"]["horizons"] or min(cfg["eval"]["horizons"]) < 1:
        raise ConfigError("horizons must be >= 1")
    if not cfg["eval"]["seeds"]:
        raise ConfigError("need at least one evaluation seed")
    if not cfg["eval"]["conditions"]:
        raise ConfigError("need at least one evaluation condition")
    for p in cfg["eval"]["noise_grid"] + [cfg["eval"]["noise"]]:
        if not (0.0 <= p <= 1.0):
            raise ConfigError(f"noise rate {p} outside [0, 1]")


# ── Corpus files ─────────────────────────────────────────────────────


@dataclass
class CorpusBundle:
    train: tuple
    test: tuple
    vocab: Vocabulary
    chains: tuple[GoalChain, ...] | None
    obs_model: ObservationModel
    corpus_hash: str
    spec: SynthCorpusSpec | None = None


def _corpus_dir(out) -> Path:
    return Path(out) / "corpus"


def _hash_files(paths) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


def cmd_gen(cfg: dict, seed: int, out) -> CorpusBundle:
    """Generate (or import) the corpus files of a run directory."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _stage_start(out, "gen", cfg, seed)
    t0 = time.perf_counter()
    cdir = _corpus_dir(out)
    cdir.mkdir(parents=True, exist_ok=True)
    if cfg["corpus"]["path"] is not None:
        videos = load_annotations(cfg["corpus"]["path"])
        split = max(1, int(round(len(videos) * 0.75)))
        train_videos, test_videos = tuple(videos[:split]), tuple(videos[split:])
        if not test_videos:
            raise AnnotationError("imported corpus too small to hold out a test split")
        vocab = build_vocabulary(videos)
        chains = None
        spec = None
        obs_dim = 16
    else:
        preset = _PRESETS[cfg["corpus"]["preset"]]
        spec = preset(seed, **{k: v for k, v in cfg["corpus"]["spec"].items()})
        synth = generate_synthetic_corpus(spec)
        train_videos, test_videos = synth.train, synth.test
        vocab, chains = synth.vocab, synth.chains
        obs_dim = spec.obs_dim
    save_annotations(train_videos, cdir / "train.jsonl")
    save_annotations(test_videos, cdir / "test.jsonl")
    vocab.save(cdir / "vocab.json")
    if chains is not None:
        with open(cdir / "chains.json", "w", encoding="utf-8") as fh:
            json.dump([c.to_json() for c in chains], fh)
            fh.write("\n")
    obs_model = ObservationModel(
        n_actions=vocab.n_actions,
        obs_dim=obs_dim,
        noise_std=cfg["observation"]["noise_std"],
        seed=cfg["observation"]["seed"],
    )
    with open(cdir / "obs_model.json", "w", encoding="utf-8") as fh:
        json.dump(obs_model.to_json(), fh)
        fh.write("\n")
    if spec is not None:
        with open(cdir / "spec.json", "w", encoding="utf-8") as fh:
            json.dump(spec.__dict__, fh, sort_keys=True)
            fh.write("\n")
    bundle = load_corpus(out)
    _stage_end(
        manifest,
        out,
        "gen",
        time.perf_counter() - t0,
        files=["corpus/train.jsonl", "corpus/test.jsonl", "corpus/vocab.json"],
        corpus_hash=bundle.corpus_hash,
    )
    return bundle


def load_corpus(out) -> CorpusBundle:
    cdir = _corpus_dir(out)
    needed = [cdir / "train.jsonl", cdir / "test.jsonl", cdir / "vocab.json"]
    for p in needed:
        if not p.exists():
            raise AnnotationError(f"missing corpus file {p}; run the gen command first")
    train_videos = tuple(load_annotations(cdir / "train.jsonl"))
    test_videos = tuple(load_annotations(cdir / "test.jsonl"))
    vocab = Vocabulary.load(cdir / "vocab.json")
    chains = None
    if (cdir / "chains.json").exists():
        with open(cdir / "chains.json", encoding="utf-8") as fh:
            chains = tuple(GoalChain.from_json(obj) for obj in json.load(fh))
    with open(cdir / "obs_model.json", encoding="utf-8") as fh:
        obs_model = ObservationModel.from_json(json.load(fh))
    spec = None
    if (cdir / "spec.json").exists():
        with open(cdir / "spec.json", encoding="utf-8") as fh:
            spec = SynthCorpusSpec(**json.load(fh))
    return CorpusBundle(
        train=train_videos,
        test=test_videos,
        vocab=vocab,
        chains=chains,
        obs_model=obs_model,
        corpus_hash=_hash_files(needed),
        spec=spec,
    )


# ── Training ─────────────────────────────────────────────────────────


def _model_config(cfg: dict, corpus: CorpusBundle, condition: str, seed: int) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(
        architecture=m["architecture"],
        d=m["d"],
        layers=m["layers"],
        heads=m["heads"],
        obs_dim=corpus.obs_model.obs_dim,
        max_len=m["max_len"],
        mapper_hidden=m["mapper_hidden"],
        delta=m["delta"],
        condition=condition,
        seed=seed,
    )


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        lr=t["lr"],
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        grad_clip=t["grad_clip"],
        seed=seed,
        lambda_act=t["lambda_act"],
        lambda_obs=t["lambda_obs"],
    )


def checkpoint_path(out, condition: str, seed: int) -> Path:
    return Path(out) / "checkpoints" / f"{condition}_s{seed}.json"


def cmd_train(cfg: dict, seed: int, out, condition: str | None = None, resume=None) -> Path:
    """Train one forecaster; writes a checkpoint and its loss curve."""
    out = Path(out)
    corpus = load_corpus(out)
    condition = condition or cfg["model"]["condition"]
    if condition not in CONDITIONS:
        raise ConfigError(f"unknown condition {condition!r}")
    manifest = _stage_start(out, f"train_{condition}_s{seed}", cfg, seed)
    t0 = time.perf_counter()
    model_cfg = _model_config(cfg, corpus, condition, seed)
    model = Forecaster(model_cfg, corpus.vocab)
    resume_state = None
    if resume is not None:
        model, meta = load_checkpoint(resume, corpus.vocab)
        if meta["extra"].get("corpus_hash") not in (None, corpus.corpus_hash):
            raise ConfigError("resume checkpoint was trained on a different corpus")
        resume_state = meta["train_state"]
    elif cfg["model"]["init_checkpoint"]:
        warm, _ = load_checkpoint(cfg["model"]["init_checkpoint"], corpus.vocab)
        for key, val in warm.params.items():
            model.params[key][...] = val
    horizon = max(cfg["eval"]["horizons"])
    result = train(
        model, corpus.train, corpus.vocab, corpus.obs_model, _train_config(cfg, seed), horizon,
        resume_state=resume_state,
    )
    ckpt = checkpoint_path(out, condition, seed)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        ckpt,
        model,
        extra={"corpus_hash": corpus.corpus_hash, "run_config_hash": config_hash(cfg)},
        train_state=result.train_state,
    )
    curve_path = out / f"loss_curve_{condition}_s{seed}.csv"
    _write_csv(
        curve_path,
        ["epoch", "loss", "act", "obs"],
        [[row["epoch"], row["loss"], row["act"], row["obs"]] for row in result.curve],
    )
    _stage_end(
        manifest,
        out,
        f"train_{condition}_s{seed}",
        time.perf_counter() - t0,
        files=[str(ckpt.relative_to(out)), curve_path.name],
    )
    return ckpt


def ensure_checkpoint(cfg: dict, out, condition: str, seed: int) -> Path:
    """Train the (condition, seed) model unless a matching checkpoint exists."""
    out = Path(out)
    path = checkpoint_path(out, condition, seed)
    if path.exists():
        corpus = load_corpus(out)
        try:
            _, meta = load_checkpoint(path, corpus.vocab)
            if meta["extra"].get("corpus_hash") == corpus.corpus_hash:
                return path
        except ConfigError:
            pass
    return cmd_train(cfg, seed, out, condition=condition)


# ── Evaluation ───────────────────────────────────────────────────────


def test_examples(corpus: CorpusBundle, plan_length: int, max_examples=None) -> list[PlanningExample]:
    examples: list[PlanningExample] = []
    for video in corpus.test:
        examples.extend(make_examples(video, plan_length, corpus.vocab))
    if max_examples is not None:
        examples = examples[: int(max_examples)]
    return examples


def build_scorer(name: str, corpus: CorpusBundle, checkpoint=None, score_normalize: bool = True):
    """Instantiate a policy by condition name."""
    if name in CONDITIONS:
        if checkpoint is None:
            raise ConfigError(f"neural condition {name!r} needs a checkpoint")
        model, meta = load_checkpoint(checkpoint, corpus.vocab)
        if meta["extra"].get("corpus_hash") not in (None, corpus.corpus_hash):
            raise ConfigError("checkpoint/corpus hash mismatch")
        if model.cfg.condition != name:
            raise ConfigError(
                f"checkpoint holds condition {model.cfg.condition!r}, wanted {name!r}"
            )
        return NeuralScorer(model, corpus.vocab, normalize_scores=score_normalize)
    if name == "markov":
        return MarkovScorer(fit_markov(corpus.train, corpus.vocab, goal_restricted=False), corpus.vocab)
    if name == "markov_goal":
        return MarkovScorer(fit_markov(corpus.train, corpus.vocab, goal_restricted=True), corpus.vocab)
    if name == "random":
        return RandomScorer(corpus.vocab, goal_restricted=False)
    if name == "random_goal":
        return RandomScorer(corpus.vocab, goal_restricted=True)
    raise ConfigError(f"unknown evaluation condition {name!r}")


def _example_seed(seed: int, idx: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(idx)]).generate_state(1)[0])


def _beam_config(cfg: dict) -> BeamConfig:
    b = cfg["beam"]
    return BeamConfig(
        beam_size=b["beam_size"],
        per_node=b["per_node"],
        plan_length=b["plan_length"],
        delta=cfg["model"]["delta"],
        restrict_to_goal=b["restrict_to_goal"],
        length_normalize=b["length_normalize"],
    )


def evaluate_scorer(
    scorer,
    condition: str,
    corpus: CorpusBundle,
    cfg: dict,
    seeds,
    noise: float,
    max_examples=None,
):
    """Plan and score every (example, seed); returns (records, plan_rows).

    One plan of the longest horizon serves every reported horizon via
    prefix evaluation. The planner sees only the goal and the segment
    history; targets are consulted afterwards for metrics.
    """
    horizons = sorted(cfg["eval"]["horizons"])
    l_max = max(max(horizons), cfg["beam"]["plan_length"])
    beam_cfg = replace(_beam_config(cfg), plan_length=l_max)
    want_ed = bool(cfg["eval"]["edit_distance"])
    examples = test_examples(corpus, l_max, max_examples)
    if not examples:
        raise AnnotationError("test split produced no planning examples")
    records: list[EvalRecord] = []
    plan_rows: list[dict] = []
    for seed in seeds:
        for idx, ex in enumerate(examples):
            ex_seed = _example_seed(seed, idx)
            t = int(ex.video.steps[ex.k].start)
            history = segment_history(
                ex.video,
                t,
                cfg["model"]["delta"],
                corpus.obs_model,
                noise,
                ex_seed,
                corpus.vocab,
                corrupt_after_consolidation=True,
            )
            if isinstance(scorer, RandomScorer):
                rng = np.random.default_rng([int(seed), int(idx), 99991])
                plan = scorer.sample_plan(ex.goal, l_max, rng)
                beam_scores = [float(-np.log(len(scorer._support(ex.goal)))) * l_max]
            else:
                plan, beams = beam_search(scorer, ex.goal, history, beam_cfg, corpus.vocab)
                beam_scores = [b.score for b in beams]
            padded = list(plan) + [NO_ACTION] * max(0, l_max - len(plan))
            gt = list(ex.target)
            ed = edit_distance(padded[: len(gt)], gt) if want_ed else None
            for l in horizons:
                records.append(
                    EvalRecord(
                        example_id=ex.example_id,
                        goal=ex.goal,
                        k=ex.k,
                        l=l,
                        sr=success_rate(padded, gt, l),
                        macc=mean_accuracy(padded, gt, l),
                        miou=miou(padded, gt, l),
                        nacc=next_accuracy(padded, gt),
                        condition=condition,
                        seed=int(seed),
                        ed=ed,
                        ed_norm=normalized_edit_distance(padded[: len(gt)], gt) if want_ed else None,
                    )
                )
            plan_rows.append(
                {
                    "example_id": ex.example_id,
                    "goal": corpus.vocab.goals[ex.goal],
                    "k": ex.k,
                    "pred": [corpus.vocab.actions[a] if a != NO_ACTION else "" for a in padded],
                    "gt": [corpus.vocab.actions[a] for a in gt],
                    "scores": [float(s) for s in beam_scores],
                    "condition": condition,
                    "seed": int(seed),
                }
            )
    return records, plan_rows


def _summary_rows(summary: Summary):
    return [
        [r.condition, r.l, r.metric, r.mean, r.ste, r.n_seeds] for r in summary.rows
    ]


def _write_summary_files(dest: Path, summary: Summary) -> None:
    _write_csv(dest / "summary.csv", ["condition", "l", "metric", "mean", "ste", "n_seeds"], _summary_rows(summary))
    _write_csv(
        dest / "k_curves.csv",
        ["condition", "l", "k", "macc_mean", "n"],
        [list(row) for row in summary.k_curves],
    )
    _write_csv(
        dest / "goal_table.csv",
        ["condition", "l", "goal", "macc_mean", "n"],
        [list(row) for row in summary.goal_tables],
    )


def cmd_eval(
    cfg: dict,
    seed: int,
    out,
    model=None,
    baseline: str | None = None,
    noise: float | None = None,
) -> Path:
    """Evaluate one checkpoint or baseline at one seed; writes records/summary."""
    out = Path(out)
    corpus = load_corpus(out)
    if (model is None) == (baseline is None):
        raise ConfigError("pass exactly one of a checkpoint path or a baseline name")
    noise = cfg["eval"]["noise"] if noise is None else float(noise)
    if baseline is not None:
        condition = baseline
        scorer = build_scorer(baseline, corpus)
    else:
        loaded, _ = load_checkpoint(model, corpus.vocab)
        condition = loaded.cfg.condition
        scorer = build_scorer(
            condition, corpus, checkpoint=model, score_normalize=cfg["beam"]["score_normalize"]
        )
    stage = f"eval_{condition}_p{noise:g}_s{seed}"
    manifest = _stage_start(out, stage, cfg, seed)
    t0 = time.perf_counter()
    records, plan_rows = evaluate_scorer(
        scorer, condition, corpus, cfg, [seed], noise, cfg["eval"]["max_examples"]
    )
    dest = out / stage
    dest.mkdir(parents=True, exist_ok=True)
    _write_jsonl(dest / "records.jsonl", [r.to_json() for r in records])
    _write_jsonl(dest / "plans.jsonl", plan_rows)
    _write_summary_files(dest, aggregate(records))
    _stage_end(manifest, out, stage, time.perf_counter() - t0, files=[f"{stage}/records.jsonl"])
    return dest


def cmd_sweep_noise(cfg: dict, seed: int, out) -> Path:
    """Corruption sweep comparing the full model against the no-observation one.

    Emits per-(rate, condition, seed, horizon) means, the gap between the
    two conditions, and rank-correlation trend statistics.
    """
    out = Path(out)
    corpus = load_corpus(out)
    stage = f"sweep_noise_s{seed}"
    manifest = _stage_start(out, stage, cfg, seed)
    t0 = time.perf_counter()
    seeds = [int(s) for s in cfg["eval"]["seeds"]]
    grid = [float(p) for p in cfg["eval"]["noise_grid"]]
    horizons = sorted(cfg["eval"]["horizons"])
    conditions = ("full", "no_obs")
    scorers = {}
    for cond in conditions:
        scorers[cond] = {
            s: build_scorer(
                cond,
                corpus,
                checkpoint=ensure_checkpoint(cfg, out, cond, s),
                score_normalize=cfg["beam"]["score_normalize"],
            )
            for s in seeds
        }
    long_rows = []
    means: dict[tuple, dict] = {}
    for p in grid:
        for cond in conditions:
            for s in seeds:
                records, _ = evaluate_scorer(
                    scorers[cond][s], cond, corpus, cfg, [s], p, cfg["eval"]["max_examples"]
                )
                for l in horizons:
                    vals = [r.macc for r in records if r.l == l]
                    macc = float(np.mean(vals))
                    long_rows.append([p, cond, s, l, macc])
                    means[(p, cond, s, l)] = macc
    gap_rows = []
    for p in grid:
        for l in horizons:
            full = float(np.mean([means[(p, "full", s, l)] for s in seeds]))
            noobs = float(np.mean([means[(p, "no_obs", s, l)] for s in seeds]))
            gap_rows.append([p, l, full, noobs, full - noobs])
    trend_rows = []
    for l in horizons:
        sp_gap, sp_full, sp_noobs = [], [], []
        for s in seeds:
            fulls = [means[(p, "full", s, l)] for p in grid]
            noobs = [means[(p, "no_obs", s, l)] for p in grid]
            gaps = [f - n for f, n in zip(fulls, noobs)]
            sp_gap.append(spearman_rank_correlation(grid, gaps))
            sp_full.append(spearman_rank_correlation(grid, fulls))
            sp_noobs.append(spearman_rank_correlation(grid, noobs))
        trend_rows.append(
            [l, float(np.mean(sp_gap)), float(np.mean(sp_full)), float(np.mean(sp_noobs))]
        )
    dest = out / stage
    dest.mkdir(parents=True, exist_ok=True)
    _write_csv(dest / "sweep_macc.csv", ["p", "condition", "seed", "l", "macc"], long_rows)
    _write_csv(dest / "sweep_gap.csv", ["p", "l", "macc_full", "macc_no_obs", "gap"], gap_rows)
    _write_csv(
        dest / "sweep_trend.csv",
        ["l", "spearman_gap_vs_p", "spearman_full_vs_p", "spearman_no_obs_vs_p"],
        trend_rows,
    )
    _stage_end(manifest, out, stage, time.perf_counter() - t0, files=[f"{stage}/sweep_gap.csv"])
    return dest


def cmd_ablate(cfg: dict, seed: int, out) -> Path:
    """Input-condition ablation on clean (zero-corruption) segments.

    Four nested input conditions are trained and evaluated with one shared
    seed list so comparisons are paired. A warm-start row is added when the
    config names an initial checkpoint.
    """
    out = Path(out)
    corpus = load_corpus(out)
    stage = f"ablate_s{seed}"
    manifest = _stage_start(out, stage, cfg, seed)
    t0 = time.perf_counter()
    seeds = [int(s) for s in cfg["eval"]["seeds"]]
    all_records = []
    per_seed_rows = []
    for cond in ABLATION_CONDITIONS:
        for s in seeds:
            scorer = build_scorer(
                cond,
                corpus,
                checkpoint=ensure_checkpoint(cfg, out, cond, s),
                score_normalize=cfg["beam"]["score_normalize"],
            )
            records, _ = evaluate_scorer(
                scorer, cond, corpus, cfg, [s], 0.0, cfg["eval"]["max_examples"]
            )
            all_records.extend(records)
            for l in sorted(cfg["eval"]["horizons"]):
                vals = [r.macc for r in records if r.l == l]
                per_seed_rows.append([cond, s, l, float(np.mean(vals))])
    summary = aggregate(all_records)
    dest = out / stage
    dest.mkdir(parents=True, exist_ok=True)
    _write_csv(
        dest / "ablation.csv",
        ["condition", "l", "metric", "mean", "ste", "n_seeds"],
        _summary_rows(summary),
    )
    _write_csv(dest / "ablation_per_seed.csv", ["condition", "seed", "l", "macc"], per_seed_rows)
    _write_jsonl(dest / "records.jsonl", [r.to_json() for r in all_records])
    _stage_end(manifest, out, stage, time.perf_counter() - t0, files=[f"{stage}/ablation.csv"])
    return dest


def cmd_report(out) -> Path:
    """Consolidate a run directory into a markdown report.

    Aggregates are recomputed from the raw JSONL records; directories with
    missing records are listed with explicit gap markers. Re-running on an
    unchanged directory reproduces the same bytes.
    """
    out = Path(out)
    manifest_path = out / "manifest.json"
    lines = ["# Run report", ""]
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        lines.append(f"- config hash: `{manifest.get('config_hash', '-')}`")
        lines.append(f"- corpus hash: `{manifest.get('corpus_hash', '-')}`")
        lines.append(f"- code version: `{manifest.get('code_version', '-')}`")
    else:
        lines.append("- manifest: (missing)")
    lines.append("")
    record_files = sorted(out.glob("*/records.jsonl"))
    if not record_files:
        lines.append("No evaluation records found.")
    for path in record_files:
        rel = path.relative_to(out)
        rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        lines.append(f"## {rel.parent}")
        lines.append("")
        if not rows:
            lines.append("(records file empty: no results)")
            lines.append("")
            continue
        records = [EvalRecord.from_json(obj) for obj in rows]
        summary = aggregate(records)
        lines.append("| condition | l | SR | mAcc | mIOU | nAcc |")
        lines.append("|---|---|---|---|---|---|")
        seen = sorted({(r.condition, r.l) for r in records})
        for condition, l in seen:
            def cell(metric):
                try:
                    return f"{summary.value(condition, l, metric):.4f} ± {summary.ste(condition, l, metric):.4f}"
                except KeyError:
                    return "—"

            lines.append(
                f"| {condition} | {l} | {cell('sr')} | {cell('macc')} | {cell('miou')} | {cell('nacc')} |"
            )
        lines.append("")
    for extra in ("sweep_gap.csv", "sweep_trend.csv", "ablation.csv"):
        for path in sorted(out.glob(f"*/{extra}")):
            lines.append(f"## {path.relative_to(out)}")
            lines.append("")
            lines.append("```")
            lines.append(path.read_text().rstrip("\n"))
            lines.append("```")
            lines.append("")
    report = out / "report.md"
    report.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


# ── Manifest and file helpers ────────────────────────────────────────


def _read_manifest(out: Path) -> dict:
    path = out / "manifest.json"
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {"stages": {}}


def _write_manifest(out: Path, manifest: dict) -> None:
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _stage_start(out: Path, stage: str, cfg: dict, seed: int) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(out)
    manifest["config_hash"] = config_hash(cfg)
    manifest["code_version"] = __version__
    cdir = _corpus_dir(out)
    if (cdir / "train.jsonl").exists():
        manifest["corpus_hash"] = _hash_files(
            [cdir / "train.jsonl", cdir / "test.jsonl", cdir / "vocab.json"]
        )
    manifest["stages"][stage] = {"completed": False, "seed": int(seed)}
    _write_manifest(out, manifest)
    return manifest


def _stage_end(manifest: dict, out: Path, stage: str, elapsed: float, files=None, **extra) -> None:
    manifest = _read_manifest(out)
    entry = manifest["stages"].setdefault(stage, {})
    entry["completed"] = True
    entry["timing_s"] = round(elapsed, 3)
    if files:
        entry["files"] = list(files)
    entry.update(extra)
    _write_manifest(out, manifest)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
