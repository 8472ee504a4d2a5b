"""Uncertainty-aware triage of natural-language robot commands.

Commands are classified as clear, ambiguous, or infeasible by sampling an
LLM under shuffled few-shot contexts, scoring the spread of its answers in a
word-embedding space, running a zero-shot feasibility check on uncertain
goals, and asking the user a generated clarifying question when the goal is
ambiguous but doable.
"""

from .embedding import EmbeddingTable, extract_keywords, load_table
from .evaluation import (
    MetricsReport,
    SagcRecord,
    accuracy3,
    auroc,
    load_sagc,
    stratify,
    success_gap,
    timing_metric,
)
from .gateway import (
    GenerationSample,
    HttpBackend,
    MockBackend,
    PromptRequest,
    ScriptedRule,
    generate,
    generate_h,
)
from .prompts import ContextExemplar, GoalCommand, SceneDescription
from .simulator import EpisodeResult, TaskSpec, TabletopState, init_scene, run_episode
from .triage import (
    DialogueState,
    TriageConfig,
    TriageEngine,
    TriageResult,
    parse_feasibility_answer,
)
from .uncertainty import (
    SampleSet,
    UncertaintyScore,
    context_sampling_uncertainty,
    lexical_similarity,
    normalized_entropy,
    predictive_entropy,
    semantic_entropy,
)

__version__ = "0.1.0"
