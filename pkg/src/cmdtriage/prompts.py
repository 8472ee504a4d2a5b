"""Prompt assembly: context-sampled action prompts plus the zero-shot
feasibility, reason, and question prompts.

All functions here are pure; identical inputs (including seeds) produce
identical text, which is what makes the whole pipeline replayable.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

UNCERTAINTY_PREFIX = "Considering ambiguity of a goal, "
REASON_CUE = "This code is uncertain because"
QUESTION_CUE = "What can I ask the user? Please "
COMPLETION_CUE = "robot:"


class PromptError(Exception):
    """Invalid prompt-assembly input."""


@dataclass
class GoalCommand:
    """User utterance plus facts accumulated from disambiguation answers."""

    text: str
    augmented_facts: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise PromptError("goal text must be non-empty")


@dataclass
class Entity:
    name: str
    attributes: dict[str, str] = field(default_factory=dict)

    def render(self) -> str:
        if not self.attributes:
            return self.name
        attrs = ", ".join(f"{k}: {v}" for k, v in self.attributes.items())
        return f"{self.name} ({attrs})"


@dataclass
class SceneDescription:
    robot_type: str
    objects: list[Entity] = field(default_factory=list)
    people: list[Entity] = field(default_factory=list)
    action_set: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.action_set:
            raise PromptError("a scene needs a non-empty action set")
        for group, entities in (("objects", self.objects), ("people", self.people)):
            names = [e.name for e in entities]
            if len(names) != len(set(names)):
                raise PromptError(f"duplicate entity names in {group}: {names}")


@dataclass(frozen=True)
class ContextExemplar:
    scene_snippet: str
    goal_text: str
    skill_text: str

    def __post_init__(self) -> None:
        if not (self.scene_snippet and self.goal_text and self.skill_text):
            raise PromptError("exemplar fields must all be non-empty")


@dataclass(frozen=True)
class AssembledPrompt:
    text: str
    provenance: dict


def sample_context_indices(n: int, k: int, seed: int) -> list[int]:
    """k distinct indices into a pool of n, in randomized order."""
    if not 1 <= k <= n:
        raise PromptError(f"k must satisfy 1 <= k <= {n}, got {k}")
    return random.Random(seed).sample(range(n), k)


def sample_contexts(
    context_set: Sequence[ContextExemplar], k: int, seed: int
) -> list[ContextExemplar]:
    """Draw k distinct exemplars in randomized order, deterministic per seed."""
    indices = sample_context_indices(len(context_set), k, seed)
    return [context_set[i] for i in indices]


def shuffle_scene(scene: SceneDescription, seed: int) -> SceneDescription:
    """Permute object and people order; robot type and action set untouched."""
    rng = random.Random(seed)
    objects = list(scene.objects)
    people = list(scene.people)
    rng.shuffle(objects)
    rng.shuffle(people)
    return SceneDescription(
        robot_type=scene.robot_type,
        objects=objects,
        people=people,
        action_set=list(scene.action_set),
    )


def normalize_goal_text(text: str) -> str:
    """Strip surrounding whitespace and one terminal '.' or '?'."""
    text = text.strip()
    if text and text[-1] in ".?":
        text = text[:-1].rstrip()
    return text


def goal_line(goal: GoalCommand) -> str:
    """Goal text with disambiguation facts spliced in."""
    base = normalize_goal_text(goal.text)
    facts = [f.strip() for f in goal.augmented_facts if f.strip()]
    if facts:
        return f"{base}, given that: {'; '.join(facts)}"
    return base


def wrap_uncertainty_aware(goal: GoalCommand) -> str:
    return UNCERTAINTY_PREFIX + goal_line(goal)


def render_scene(scene: SceneDescription) -> str:
    parts = [f"objects: {', '.join(e.render() for e in scene.objects)}"]
    if scene.people:
        parts.append(f"people: {', '.join(e.render() for e in scene.people)}")
    return "; ".join(parts)


def render_exemplar(exemplar: ContextExemplar) -> str:
    return (
        f"scene: {exemplar.scene_snippet}\n"
        f"goal: {exemplar.goal_text}\n"
        f"{COMPLETION_CUE} {exemplar.skill_text}"
    )


def assemble_action_prompt(
    goal: GoalCommand,
    scene: SceneDescription,
    contexts: Sequence[ContextExemplar],
    uncertainty_aware: bool = True,
    context_indices: Sequence[int] | None = None,
) -> AssembledPrompt:
    """Few-shot exemplars, the rendered scene, the goal line, and the skill cue."""
    if not contexts:
        raise PromptError("at least one few-shot context is required")
    goal_text = wrap_uncertainty_aware(goal) if uncertainty_aware else goal_line(goal)
    blocks = [render_exemplar(c) for c in contexts]
    blocks.append(
        f"scene: {render_scene(scene)}\ngoal: {goal_text}\n{COMPLETION_CUE}"
    )
    provenance = {
        "kind": "action",
        "uncertainty_aware": uncertainty_aware,
        "context_indices": list(context_indices) if context_indices is not None else None,
        "scene_permutation": {
            "objects": [e.name for e in scene.objects],
            "people": [e.name for e in scene.people],
        },
    }
    return AssembledPrompt(text="\n\n".join(blocks), provenance=provenance)


def assemble_feasibility_prompt(
    goal: GoalCommand, scene: SceneDescription
) -> AssembledPrompt:
    """Scene and action set, then the capability question as the last line."""
    question = (
        f"I am a {scene.robot_type} robot. "
        f"Considering the action set, can I {goal_line(goal)}?"
    )
    text = (
        f"scene: {render_scene(scene)}\n"
        f"action set: {', '.join(scene.action_set)}\n"
        f"{question}"
    )
    return AssembledPrompt(text=text, provenance={"kind": "feasibility"})


def assemble_reason_prompt(transcript: str) -> AssembledPrompt:
    if not transcript.strip():
        raise PromptError("reason prompt needs a non-empty transcript")
    text = transcript.rstrip("\n") + "\n" + REASON_CUE
    return AssembledPrompt(text=text, provenance={"kind": "reason"})


def assemble_question_prompt(transcript: str) -> AssembledPrompt:
    if not transcript.strip():
        raise PromptError("question prompt needs a non-empty transcript")
    text = transcript.rstrip("\n") + "\n" + QUESTION_CUE
    return AssembledPrompt(text=text, provenance={"kind": "question"})


def parse_entity(raw: str | dict) -> Entity:
    if isinstance(raw, str):
        return Entity(name=raw)
    data = dict(raw)
    name = data.pop("name")
    return Entity(name=name, attributes={k: str(v) for k, v in data.items()})


def parse_scene(data: dict) -> SceneDescription:
    return SceneDescription(
        robot_type=data["robot_type"],
        objects=[parse_entity(o) for o in data.get("objects", [])],
        people=[parse_entity(p) for p in data.get("people", [])],
        action_set=list(data["action_set"]),
    )


def load_scene(path: str | Path) -> SceneDescription:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scene(json.load(fh))


def load_context_set(path: str | Path) -> list[ContextExemplar]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        ContextExemplar(
            scene_snippet=e["scene_snippet"],
            goal_text=e["goal_text"],
            skill_text=e["skill_text"],
        )
        for e in raw
    ]
