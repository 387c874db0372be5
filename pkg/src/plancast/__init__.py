"""Goal-conditioned next-step forecasting and plan search over activity traces.

The package turns timed, goal-labeled step annotations into planning
benchmarks: it simulates a per-second segmenter with a controllable label
corruption channel, encodes goal/observation/action histories into one
interleaved sequence, trains small next-representation forecasters from
scratch, searches plans with a diversity-capped beam, and scores plans
with the standard strictness ladder of sequence metrics.

Typical flow:

    corpus   = generate_synthetic_corpus(desk_default(seed=0))
    model    = Forecaster(ModelConfig(), corpus.vocab)
    train(model, corpus.train, corpus.vocab, obs_model, TrainConfig())
    plan, _  = beam_search(NeuralScorer(model, corpus.vocab), goal, history,
                           BeamConfig(), corpus.vocab)

The `harness` module wraps the same steps behind reproducible run
directories and the `plancast` command-line tool.
"""

__version__ = "0.1.0"

from .corpus import (
    GoalChain,
    PlanningExample,
    Step,
    SynthCorpusSpec,
    SyntheticCorpus,
    VideoAnnotation,
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
    tokenize,
)
from .encoding import (
    CONDITIONS,
    FULL,
    LAST_OBS,
    LAST_OBS_NOGOAL,
    NO_OBS,
    Condition,
    HistoryEncoding,
    Mapper,
    build_history,
    encode_action,
    encode_observation,
    extend_with_actions,
    extend_with_plan,
)
from .errors import (
    AnnotationError,
    ConfigError,
    DivergenceError,
    GeneratorError,
    SearchDeadEnd,
)
from .forecaster import (
    Forecaster,
    MarkovScorer,
    ModelConfig,
    NeuralScorer,
    RandomScorer,
    TrainConfig,
    TransitionTable,
    fit_markov,
    load_checkpoint,
    rollout_observation,
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
from .planner import (
    BagOfWordsEmbedder,
    Beam,
    BeamConfig,
    MockTextGenerator,
    TextGeneratorClient,
    beam_search,
    candidate_actions,
    phi,
    plan_with_generator,
    retrieve_closest_action,
)
from .segments import (
    BACKGROUND,
    ObservationModel,
    ObservationWindow,
    Segment,
    SegmentHistory,
    consolidate,
    corrupt,
    label_per_second,
    observe,
    segment_history,
)
