"""The triage cascade: score uncertainty, gate on a threshold, check
feasibility, and drive the clarifying-question dialogue.

A goal first gets H context-sampled generations; their spread (sigma) decides
Clear vs uncertain. Uncertain goals face the zero-shot capability question,
whose parsed answer splits Infeasible from Ambiguous; ambiguous goals earn a
generated reason and a clarifying question whose answer feeds the next round.
"""

from __future__ import annotations

import copy
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import prompts as P
from .embedding import EmbeddingTable, EmptyKeywordsError, embed, extract_keywords
from .gateway import Backend, GenerationSample, PromptRequest, generate, generate_h
from .uncertainty import (
    CONTEXT_SAMPLING,
    ESTIMATORS,
    LEXICAL_SIMILARITY,
    NORMALIZED_ENTROPY,
    PREDICTIVE_ENTROPY,
    SEMANTIC_ENTROPY,
    SampleSet,
    UncertaintyScore,
    context_sampling_uncertainty,
    lexical_similarity,
    make_keyword_equivalence,
    normalized_entropy,
    predictive_entropy,
    semantic_entropy,
)

logger = logging.getLogger(__name__)

CLEAR = "clear"
AMBIGUOUS = "ambiguous"
INFEASIBLE = "infeasible"

OPEN = "open"
RESOLVED = "resolved"
ABANDONED = "abandoned"

DEFAULT_SKILL_TEMPLATE = "robot.pick_and_place(<object>, <target>)"

DEFAULT_NEGATION_KEYWORDS = (
    "no",
    "not",
    "cannot",
    "can't",
    "unable",
    "not able",
    "impossible",
    "infeasible",
    "outside",
    "beyond",
)
DEFAULT_AFFIRMATION_KEYWORDS = ("yes", "i can", "sure", "certainly")

_SENTENCE_END_RE = re.compile(r"[.!?]")

AnswerSource = Callable[[str], str]

_ENTROPY_ESTIMATORS = (PREDICTIVE_ENTROPY, NORMALIZED_ENTROPY, SEMANTIC_ENTROPY)


class TriageError(Exception):
    """Pipeline misconfiguration or precondition violation."""


class AnswerSourceError(TriageError):
    """The answer source failed; the dialogue state was left untouched."""


@dataclass
class TriageConfig:
    epsilon: float
    h: int = 4
    k: int = 2
    estimator: str = CONTEXT_SAMPLING
    max_question_rounds: int = 1
    seed: int = 0
    action_temperature: float = 0.7
    followup_temperature: float = 0.0
    max_tokens: int = 64
    skill_template: str = DEFAULT_SKILL_TEMPLATE
    negation_keywords: tuple[str, ...] = DEFAULT_NEGATION_KEYWORDS
    affirmation_keywords: tuple[str, ...] = DEFAULT_AFFIRMATION_KEYWORDS

    def __post_init__(self) -> None:
        if self.h < 2:
            raise TriageError(f"h must be >= 2, got {self.h}")
        if self.k < 1:
            raise TriageError(f"k must be >= 1, got {self.k}")
        if self.epsilon < 0:
            raise TriageError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_question_rounds < 0:
            raise TriageError(
                f"max_question_rounds must be >= 0, got {self.max_question_rounds}"
            )
        if self.estimator not in ESTIMATORS:
            raise TriageError(
                f"unknown estimator {self.estimator!r}, expected one of {ESTIMATORS}"
            )


@dataclass(frozen=True)
class FeasibilityVerdict:
    feasible: bool
    raw_answer: str
    matched_keyword: str


@dataclass
class TriageResult:
    """Outcome of one classification pass.

    Field presence tracks the label: clear results carry the chosen skill and
    no question, ambiguous results carry a question, infeasible results carry
    an explanation.
    """

    label: str
    sigma: UncertaintyScore
    skill: str | None = None
    skill_lines: tuple[str, ...] | None = None
    explanation: str | None = None
    question: str | None = None
    transcript: str = ""

    def __post_init__(self) -> None:
        if self.label == CLEAR:
            if self.skill is None or self.question is not None:
                raise TriageError("clear results carry a skill and no question")
        elif self.label == AMBIGUOUS:
            if self.question is None:
                raise TriageError("ambiguous results carry a question")
        elif self.label == INFEASIBLE:
            if self.explanation is None:
                raise TriageError("infeasible results carry an explanation")
        else:
            raise TriageError(f"unknown label {self.label!r}")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "sigma": {
                "value": self.sigma.value,
                "estimator": self.sigma.estimator,
                "h": self.sigma.h,
            },
            "skill": self.skill,
            "skill_lines": list(self.skill_lines) if self.skill_lines else None,
            "explanation": self.explanation,
            "question": self.question,
            "transcript": self.transcript,
        }


@dataclass
class DialogueState:
    goal: P.GoalCommand
    scene: P.SceneDescription
    rounds_used: int = 0
    history: list[tuple[str, str]] = field(default_factory=list)
    status: str = OPEN
    last_result: TriageResult | None = None


def parse_feasibility_answer(
    answer_text: str,
    negation_keywords: Sequence[str] = DEFAULT_NEGATION_KEYWORDS,
    affirmation_keywords: Sequence[str] = DEFAULT_AFFIRMATION_KEYWORDS,
) -> FeasibilityVerdict:
    """Heuristic keyword parse of the capability answer.

    Infeasible iff a negation keyword occurs in the first sentence before any
    affirmation keyword. An empty answer is conservatively infeasible.
    """
    if not answer_text.strip():
        return FeasibilityVerdict(
            feasible=False, raw_answer=answer_text, matched_keyword="default-empty"
        )
    first_sentence = _SENTENCE_END_RE.split(answer_text, maxsplit=1)[0].lower()

    def earliest(keywords: Sequence[str]) -> tuple[int, str] | None:
        best: tuple[int, str] | None = None
        for kw in keywords:
            # Apostrophes count as word characters here so that "i can"
            # does not swallow the start of "i can't".
            pattern = r"(?<![\w'])" + re.escape(kw) + r"(?![\w'])"
            m = re.search(pattern, first_sentence)
            if m and (best is None or m.start() < best[0]):
                best = (m.start(), kw)
        return best

    neg = earliest(negation_keywords)
    aff = earliest(affirmation_keywords)
    if neg is not None and (aff is None or neg[0] < aff[0]):
        return FeasibilityVerdict(
            feasible=False, raw_answer=answer_text, matched_keyword=neg[1]
        )
    if aff is not None:
        return FeasibilityVerdict(
            feasible=True, raw_answer=answer_text, matched_keyword=aff[1]
        )
    return FeasibilityVerdict(feasible=True, raw_answer=answer_text, matched_keyword="default")


def _template_to_pattern(template: str) -> re.Pattern[str]:
    segments = []
    last = 0
    for m in re.finditer(r"<[^<>]*>", template):
        segments.append(re.escape(template[last : m.start()]))
        segments.append("(.*?)")
        last = m.end()
    segments.append(re.escape(template[last:]))
    return re.compile("".join(segments))


def parse_skill_lines(text: str, templates: Sequence[str]) -> list[str]:
    """All lines of a generation that match one of the skill templates."""
    patterns = [_template_to_pattern(t) for t in templates]
    matched = []
    for line in text.splitlines():
        line = line.strip()
        if line and any(p.fullmatch(line) for p in patterns):
            matched.append(line)
    return matched


def youden_threshold(scores: Sequence[float], is_uncertain: Sequence[bool]) -> float:
    """Smallest threshold maximizing J = TPR - FPR for the gate sigma > eps.

    Candidates are 0.0 plus every observed score (epsilon must be >= 0).
    """
    if len(scores) != len(is_uncertain):
        raise TriageError(f"{len(scores)} scores vs {len(is_uncertain)} labels")
    scores = [float(s) for s in scores]
    flags = [bool(u) for u in is_uncertain]
    n_unc = sum(flags)
    n_cer = len(flags) - n_unc
    if n_unc == 0 or n_cer == 0:
        raise TriageError("calibration needs both certain and uncertain rows")
    best_eps = 0.0
    best_j = -2.0
    for eps in sorted({0.0, *scores}):
        tpr = sum(1 for s, u in zip(scores, flags) if u and s > eps) / n_unc
        fpr = sum(1 for s, u in zip(scores, flags) if not u and s > eps) / n_cer
        j = tpr - fpr
        if j > best_j + 1e-12:
            best_j = j
            best_eps = eps
    return best_eps


class TriageEngine:
    """Binds a backend, a context set, and an embedding table to the cascade."""

    def __init__(
        self,
        config: TriageConfig,
        backend: Backend,
        context_set: Sequence[P.ContextExemplar],
        table: EmbeddingTable,
    ):
        if len(context_set) < config.k:
            raise TriageError(
                f"context set has {len(context_set)} exemplars, config needs k={config.k}"
            )
        self.config = config
        self.backend = backend
        self.context_set = list(context_set)
        self.table = table
        self._equivalence = make_keyword_equivalence(config.skill_template)

    # -- sampling ---------------------------------------------------------

    def _needs_token_probs(self) -> bool:
        return self.config.estimator in _ENTROPY_ESTIMATORS

    def _sample(
        self, goal: P.GoalCommand, scene: P.SceneDescription, want_token_probs: bool
    ) -> tuple[list[P.AssembledPrompt], list[GenerationSample], list[np.ndarray | None]]:
        cfg = self.config
        rng = random.Random(cfg.seed)
        variants = []
        assembled = []
        for _ in range(cfg.h):
            ctx_seed = rng.randrange(2**32)
            shuffle_seed = rng.randrange(2**32)
            indices = P.sample_context_indices(len(self.context_set), cfg.k, ctx_seed)
            contexts = [self.context_set[i] for i in indices]
            shuffled = P.shuffle_scene(scene, shuffle_seed)
            prompt = P.assemble_action_prompt(
                goal, shuffled, contexts, uncertainty_aware=True, context_indices=indices
            )
            assembled.append(prompt)
            variants.append(
                PromptRequest(
                    text=prompt.text,
                    temperature=cfg.action_temperature,
                    max_tokens=cfg.max_tokens,
                    want_token_probs=want_token_probs,
                )
            )
        samples = generate_h(variants, self.backend)
        embeddings: list[np.ndarray | None] = []
        for sample in samples:
            try:
                keywords = extract_keywords(sample.text, cfg.skill_template)
                embeddings.append(embed(keywords, self.table))
            except EmptyKeywordsError:
                logger.warning("unembeddable generation %r", sample.text)
                embeddings.append(None)
        return assembled, samples, embeddings

    def score_samples(self, sample_set: SampleSet, estimator: str | None = None) -> UncertaintyScore:
        """Score a sample set with the configured (or named) estimator.

        Per-sample entropy estimators are averaged over the H generations.
        """
        name = estimator or self.config.estimator
        if name == CONTEXT_SAMPLING:
            return context_sampling_uncertainty(
                sample_set, sentinel_distance=self.table.sentinel_distance
            )
        if name == LEXICAL_SIMILARITY:
            return lexical_similarity(sample_set)
        if name == PREDICTIVE_ENTROPY:
            mean = float(np.mean([predictive_entropy(s).value for s in sample_set.samples]))
            return UncertaintyScore(value=mean, estimator=name, h=sample_set.h)
        if name == NORMALIZED_ENTROPY:
            mean = float(np.mean([normalized_entropy(s).value for s in sample_set.samples]))
            return UncertaintyScore(value=mean, estimator=name, h=sample_set.h)
        if name == SEMANTIC_ENTROPY:
            return semantic_entropy(sample_set, self._equivalence)
        raise TriageError(f"unknown estimator {name!r}")

    def estimate_sigma(
        self, goal: P.GoalCommand, scene: P.SceneDescription
    ) -> tuple[UncertaintyScore, SampleSet]:
        """H context-sampled generations scored with the configured estimator."""
        _, samples, embeddings = self._sample(goal, scene, self._needs_token_probs())
        sample_set = SampleSet(samples=samples, embeddings=embeddings)
        if all(e is None for e in embeddings) and not self._needs_token_probs():
            logger.warning("no generation was embeddable; sigma pinned to the sentinel")
            return (
                UncertaintyScore(
                    value=self.table.sentinel_distance,
                    estimator=self.config.estimator,
                    h=sample_set.h,
                ),
                sample_set,
            )
        return self.score_samples(sample_set), sample_set

    # -- classification ---------------------------------------------------

    def _followup(self, prompt: P.AssembledPrompt) -> GenerationSample:
        request = PromptRequest(
            text=prompt.text,
            temperature=self.config.followup_temperature,
            max_tokens=self.config.max_tokens,
        )
        return generate(request, self.backend)

    def _skill_templates(self, scene: P.SceneDescription) -> list[str]:
        return [self.config.skill_template, *scene.action_set]

    def _majority_sample(self, samples: Sequence[GenerationSample]) -> GenerationSample:
        votes = Counter(s.text.strip() for s in samples)
        top_count = max(votes.values())
        winners = {text for text, count in votes.items() if count == top_count}
        for sample in samples:  # tie -> lowest variant index
            if sample.text.strip() in winners:
                return sample
        raise TriageError("unreachable: no majority sample")

    def classify(self, goal: P.GoalCommand, scene: P.SceneDescription) -> TriageResult:
        """One full pass of the cascade for one goal."""
        cfg = self.config
        prompts_used, samples, embeddings = self._sample(
            goal, scene, self._needs_token_probs()
        )
        sample_set = SampleSet(samples=samples, embeddings=embeddings)
        if all(e is None for e in embeddings) and not self._needs_token_probs():
            sigma = UncertaintyScore(
                value=self.table.sentinel_distance, estimator=cfg.estimator, h=sample_set.h
            )
        else:
            sigma = self.score_samples(sample_set)

        log: list[str] = []
        for i, (prompt, sample) in enumerate(zip(prompts_used, samples)):
            log.append(f"--- action prompt {i} ---\n{prompt.text}\n--- response {i} ---\n{sample.text}")

        winner = self._majority_sample(samples)
        skill_lines = parse_skill_lines(winner.text, self._skill_templates(scene))

        context_lines = [
            f"scene: {P.render_scene(scene)}",
            f"goal: {P.goal_line(goal)}",
            f"{P.COMPLETION_CUE} {winner.text}",
        ]

        if sigma.value <= cfg.epsilon:
            if skill_lines:
                return TriageResult(
                    label=CLEAR,
                    sigma=sigma,
                    skill=skill_lines[0],
                    skill_lines=tuple(skill_lines),
                    transcript="\n\n".join(log),
                )
            logger.warning(
                "gate passed but no parseable skill in %r; downgrading to ambiguous",
                winner.text,
            )
            return self._ambiguate(sigma, context_lines, log, cause="unparseable skill")

        feas_prompt = P.assemble_feasibility_prompt(goal, scene)
        feas_sample = self._followup(feas_prompt)
        verdict = parse_feasibility_answer(
            feas_sample.text, cfg.negation_keywords, cfg.affirmation_keywords
        )
        log.append(
            f"--- feasibility prompt ---\n{feas_prompt.text}\n--- answer ---\n{feas_sample.text}"
        )
        context_lines.append(feas_prompt.text.splitlines()[-1] + " " + feas_sample.text)

        if not verdict.feasible:
            reason_prompt = P.assemble_reason_prompt("\n".join(context_lines))
            reason_sample = self._followup(reason_prompt)
            explanation = (P.REASON_CUE + reason_sample.text).strip()
            log.append(
                f"--- reason prompt ---\n{reason_prompt.text}\n--- reason ---\n{reason_sample.text}"
            )
            return TriageResult(
                label=INFEASIBLE,
                sigma=sigma,
                explanation=explanation,
                transcript="\n\n".join(log),
            )
        return self._ambiguate(sigma, context_lines, log, cause=None)

    def _ambiguate(
        self,
        sigma: UncertaintyScore,
        context_lines: list[str],
        log: list[str],
        cause: str | None,
    ) -> TriageResult:
        reason_prompt = P.assemble_reason_prompt("\n".join(context_lines))
        reason_sample = self._followup(reason_prompt)
        explanation = (P.REASON_CUE + reason_sample.text).strip()
        log.append(
            f"--- reason prompt ---\n{reason_prompt.text}\n--- reason ---\n{reason_sample.text}"
        )
        context_lines.append(P.REASON_CUE + reason_sample.text)
        question_prompt = P.assemble_question_prompt("\n".join(context_lines))
        question_sample = self._followup(question_prompt)
        question = question_sample.text.strip()
        if not question:
            logger.warning("question generation returned nothing; using a fallback")
            question = "Could you clarify what exactly you want me to do?"
        log.append(
            f"--- question prompt ---\n{question_prompt.text}\n--- question ---\n{question_sample.text}"
        )
        if cause:
            log.append(f"--- note ---\ndowngraded to ambiguous: {cause}")
        return TriageResult(
            label=AMBIGUOUS,
            sigma=sigma,
            explanation=explanation,
            question=question,
            transcript="\n\n".join(log),
        )

    # -- dialogue ---------------------------------------------------------

    def run_dialogue(
        self,
        state: DialogueState,
        answer_source: AnswerSource,
        max_question_rounds: int | None = None,
    ) -> DialogueState:
        """Classify-ask-reclassify loop; returns a new state, input untouched.

        Terminates within max_question_rounds + 1 classifications: Clear
        resolves, Infeasible abandons, Ambiguous consumes a round (or abandons
        once the budget is spent).
        """
        if state.status != OPEN:
            raise TriageError(f"dialogue is {state.status}, expected {OPEN}")
        budget = (
            self.config.max_question_rounds
            if max_question_rounds is None
            else max_question_rounds
        )
        state = copy.deepcopy(state)
        while True:
            result = self.classify(state.goal, state.scene)
            state.last_result = result
            if result.label == CLEAR:
                state.status = RESOLVED
                return state
            if result.label == INFEASIBLE:
                state.status = ABANDONED
                return state
            if state.rounds_used >= budget:
                state.status = ABANDONED
                return state
            try:
                answer = answer_source(result.question)
            except Exception as exc:
                raise AnswerSourceError(f"answer source failed: {exc}") from exc
            answer = answer.strip()
            state.goal.augmented_facts.append(answer)
            state.history.append((result.question, answer))
            state.rounds_used += 1

    def calibrate_epsilon(
        self,
        validation: Sequence[tuple[P.GoalCommand, P.SceneDescription, bool]],
    ) -> float:
        """Threshold maximizing Youden's J over validation sigma scores.

        Rows are (goal, scene, is_certain); ties resolve to the smallest
        maximizing threshold.
        """
        scores = []
        uncertain = []
        for goal, scene, is_certain in validation:
            sigma, _ = self.estimate_sigma(goal, scene)
            scores.append(sigma.value)
            uncertain.append(not is_certain)
        return youden_threshold(scores, uncertain)
