"""Uncertainty estimators over sampled generations.

The primary score is the mean pairwise embedding distance across context
shuffled generations; the token-entropy, semantic-class, and lexical
similarity estimators serve as baselines. All estimators share the
orientation "larger value = more uncertain".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .embedding import EmptyKeywordsError, distance, extract_keywords
from .gateway import GenerationSample

CONTEXT_SAMPLING = "context_sampling"
PREDICTIVE_ENTROPY = "predictive_entropy"
NORMALIZED_ENTROPY = "normalized_entropy"
SEMANTIC_ENTROPY = "semantic_entropy"
LEXICAL_SIMILARITY = "lexical_similarity"

ESTIMATORS = (
    CONTEXT_SAMPLING,
    PREDICTIVE_ENTROPY,
    NORMALIZED_ENTROPY,
    SEMANTIC_ENTROPY,
    LEXICAL_SIMILARITY,
)

EquivalenceFn = Callable[[GenerationSample, GenerationSample], bool]

_PROB_SUM_TOL = 1e-6


class UncertaintyError(Exception):
    """Estimator precondition violated."""


class MissingTokenProbsError(UncertaintyError):
    """The estimator needs token probabilities the sample does not carry."""


@dataclass(frozen=True)
class UncertaintyScore:
    """Scalar uncertainty, tagged with its estimator and sample count.

    Entropy estimators report nats; the context-sampling score is in
    embedding-space distance units.
    """

    value: float
    estimator: str
    h: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise UncertaintyError(f"score must be finite, got {self.value}")
        if self.value < 0:
            raise UncertaintyError(f"score must be >= 0, got {self.value}")


@dataclass
class SampleSet:
    """H generations with their (possibly missing) keyword embeddings."""

    samples: list[GenerationSample]
    embeddings: list[np.ndarray | None]

    def __post_init__(self) -> None:
        if len(self.samples) != len(self.embeddings):
            raise UncertaintyError(
                f"{len(self.samples)} samples vs {len(self.embeddings)} embeddings"
            )
        if len(self.samples) < 2:
            raise UncertaintyError("a sample set needs at least 2 samples")

    @property
    def h(self) -> int:
        return len(self.samples)


def _clip_rounding(value: float) -> float:
    return 0.0 if -1e-9 < value < 0.0 else value


def context_sampling_uncertainty(
    sample_set: SampleSet, sentinel_distance: float | None = None
) -> UncertaintyScore:
    """Mean Euclidean distance over all unordered pairs of embeddings.

    A missing embedding (unembeddable generation) is charged
    ``sentinel_distance`` against every partner so that degenerate outputs
    raise the score rather than hide.
    """
    h = sample_set.h
    total = 0.0
    for i in range(h):
        for j in range(i + 1, h):
            a, b = sample_set.embeddings[i], sample_set.embeddings[j]
            if a is None or b is None:
                if sentinel_distance is None:
                    raise UncertaintyError(
                        f"embedding missing at pair ({i}, {j}) and no sentinel given"
                    )
                total += sentinel_distance
            else:
                total += distance(a, b)
    value = total / (h * (h - 1) / 2)
    return UncertaintyScore(value=value, estimator=CONTEXT_SAMPLING, h=h)


def _position_entropy(top: Sequence[tuple[str, float]]) -> float:
    probs = np.array([p for _, p in top], dtype=float)
    probs = probs / probs.sum()
    return float(-(probs * np.log(probs)).sum())


def predictive_entropy(sample: GenerationSample) -> UncertaintyScore:
    """Sum over positions of the top-K token entropy, renormalized per position."""
    if sample.token_probs is None:
        raise MissingTokenProbsError("sample carries no token probabilities")
    if len(sample.token_probs) == 0:
        raise UncertaintyError("sample has zero emitted positions")
    value = sum(_position_entropy(tp.top) for tp in sample.token_probs)
    return UncertaintyScore(value=_clip_rounding(value), estimator=PREDICTIVE_ENTROPY, h=1)


def normalized_entropy(sample: GenerationSample) -> UncertaintyScore:
    """Predictive entropy divided by the emitted sequence length."""
    base = predictive_entropy(sample)
    t = len(sample.token_probs)
    return UncertaintyScore(value=base.value / t, estimator=NORMALIZED_ENTROPY, h=1)


def sequence_probability(sample: GenerationSample) -> float:
    """Product of the emitted tokens' probabilities (via log-sum for stability)."""
    if sample.token_probs is None:
        raise MissingTokenProbsError("sample carries no token probabilities")
    if len(sample.token_probs) == 0:
        raise UncertaintyError("sample has zero emitted positions")
    return math.exp(sum(math.log(tp.chosen_prob()) for tp in sample.token_probs))


def cluster_samples(
    samples: Sequence[GenerationSample], equivalence: EquivalenceFn
) -> list[list[int]]:
    """Greedy partition of sample indices into equivalence classes."""
    classes: list[list[int]] = []
    for i, sample in enumerate(samples):
        for members in classes:
            if equivalence(samples[members[0]], sample):
                members.append(i)
                break
        else:
            classes.append([i])
    return classes


def class_probabilities(
    sample_set: SampleSet, equivalence: EquivalenceFn
) -> list[float]:
    """Per-class mass: normalized sequence probabilities summed within classes."""
    seq_probs = [sequence_probability(s) for s in sample_set.samples]
    total = sum(seq_probs)
    classes = cluster_samples(sample_set.samples, equivalence)
    return [sum(seq_probs[i] for i in members) / total for members in classes]


def semantic_entropy(
    sample_set: SampleSet | None = None,
    equivalence: EquivalenceFn | None = None,
    class_probs: Sequence[float] | None = None,
) -> UncertaintyScore:
    """Negative mean log-probability over semantic equivalence classes.

    Either pass precomputed ``class_probs`` or a sample set plus an
    equivalence function (default: keyword-set equality) from which they are
    derived by summing normalized sequence probabilities per class.
    """
    if class_probs is None:
        if sample_set is None:
            raise UncertaintyError("need a sample set or explicit class_probs")
        class_probs = class_probabilities(sample_set, equivalence or default_equivalence)
    class_probs = list(class_probs)
    if not class_probs:
        raise UncertaintyError("empty equivalence class set")
    for p in class_probs:
        if not (0.0 < p <= 1.0 + _PROB_SUM_TOL):
            raise UncertaintyError(f"class probability outside (0, 1]: {p}")
    if sum(class_probs) > 1.0 + _PROB_SUM_TOL:
        raise UncertaintyError(f"class probabilities sum to {sum(class_probs)} > 1")
    value = -sum(math.log(min(p, 1.0)) for p in class_probs) / len(class_probs)
    h = sample_set.h if sample_set is not None else len(class_probs)
    return UncertaintyScore(
        value=_clip_rounding(value), estimator=SEMANTIC_ENTROPY, h=h
    )


def _cosine(a: np.ndarray | None, b: np.ndarray | None) -> float:
    if a is None or b is None:
        return 0.0
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def lexical_similarity(sample_set: SampleSet) -> UncertaintyScore:
    """1 minus the mean pairwise cosine similarity of the answer embeddings.

    The raw similarity A is large for agreeing answers; returning 1 - A keeps
    the shared orientation where larger means more uncertain.
    """
    h = sample_set.h
    total = 0.0
    for i in range(h):
        for j in range(i + 1, h):
            total += _cosine(sample_set.embeddings[i], sample_set.embeddings[j])
    mean_similarity = total / (h * (h - 1) / 2)
    return UncertaintyScore(
        value=_clip_rounding(1.0 - mean_similarity), estimator=LEXICAL_SIMILARITY, h=h
    )


def make_keyword_equivalence(skill_template: str | None) -> EquivalenceFn:
    """Equivalence by equality of extracted keyword sets (lowercased)."""

    def _keywords(sample: GenerationSample) -> frozenset[str]:
        try:
            return frozenset(extract_keywords(sample.text, skill_template))
        except EmptyKeywordsError:
            return frozenset()

    def equivalent(a: GenerationSample, b: GenerationSample) -> bool:
        return _keywords(a) == _keywords(b)

    return equivalent


default_equivalence: EquivalenceFn = make_keyword_equivalence(None)
