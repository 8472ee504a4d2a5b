"""Symbolic tabletop world: pick-and-place task templates, a hidden-intent
user oracle, and episode execution under a question budget.

No physics, no vision: entities live in a name -> location map, stacking is a
support chain, and success is a declarative predicate per task template.
Hand-over templates (and deliberately unsupported chores) extend the taxonomy
so the feasibility path is exercisable offline.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from . import prompts as P
from .triage import ABANDONED, INFEASIBLE, RESOLVED, DialogueState, TriageEngine

logger = logging.getLogger(__name__)

CORNERS = (
    "front left corner",
    "front right corner",
    "back left corner",
    "back right corner",
)
PALETTE = ("red", "blue", "green", "yellow", "orange", "purple")

PICK_AND_PLACE_SIG = "robot.pick_and_place(<object>, <target>)"
HANDOVER_SIG = "robot.handover(<object>, <person>)"

_ACTION_RE = re.compile(r"robot\.(pick_and_place|handover)\(([^,()]+),([^,()]+)\)")


class SimulatorError(Exception):
    """Invalid world state, task, or action."""


@dataclass
class TabletopState:
    """Entity -> location maps; a location is a corner, a spot, or an entity.

    A block sitting on another block (or in a bowl) names that entity as its
    location, which is how stacks are represented: the chain of supports.
    """

    blocks: dict[str, str] = field(default_factory=dict)
    bowls: dict[str, str] = field(default_factory=dict)
    items: dict[str, str] = field(default_factory=dict)
    people: dict[str, str] = field(default_factory=dict)
    colors: dict[str, str] = field(default_factory=dict)
    delivered: dict[str, str] = field(default_factory=dict)
    corners: tuple[str, ...] = CORNERS

    def location_of(self, name: str) -> str:
        for group in (self.blocks, self.bowls, self.items, self.people):
            if name in group:
                return group[name]
        raise SimulatorError(f"unknown entity {name!r}")

    def is_entity(self, name: str) -> bool:
        return any(
            name in group for group in (self.blocks, self.bowls, self.items, self.people)
        )

    def movable(self) -> dict[str, str]:
        return {**self.blocks, **self.items}

    def supported_by(self, name: str) -> list[str]:
        """Entities located directly on/in ``name``."""
        return [e for e, loc in self.movable().items() if loc == name]

    def base_location(self, name: str) -> str:
        """Follow the support chain down to a corner or spot."""
        seen = set()
        current = name
        while self.is_entity(current):
            if current in seen:
                raise SimulatorError(f"support cycle at {current!r}")
            seen.add(current)
            current = self.location_of(current)
        return current

    def containing_bowl(self, block: str) -> str | None:
        """The bowl a block (possibly stacked on others) sits in, if any."""
        seen = set()
        current = self.location_of(block)
        while self.is_entity(current) and current not in seen:
            if current in self.bowls:
                return current
            seen.add(current)
            current = self.location_of(current)
        return current if current in self.bowls else None

    def entity_count(self) -> int:
        return (
            len(self.blocks) + len(self.bowls) + len(self.items) + len(self.people)
        )


def init_scene(seed: int, n_blocks: int, n_bowls: int) -> TabletopState:
    """Deterministic scene: colored blocks and bowls on distinct spots."""
    if n_blocks < 1 or n_bowls < 1:
        raise SimulatorError("need at least one block and one bowl")
    total = n_blocks + n_bowls
    if total > len(PALETTE):
        raise SimulatorError(
            f"palette has {len(PALETTE)} colors, cannot color {total} entities"
        )
    rng = random.Random(seed)
    colors = rng.sample(PALETTE, total)
    spots = [f"spot {i + 1}" for i in range(total)]
    rng.shuffle(spots)
    state = TabletopState()
    for i in range(n_blocks):
        name = f"{colors[i]} block"
        state.blocks[name] = spots[i]
        state.colors[name] = colors[i]
    for j in range(n_bowls):
        name = f"{colors[n_blocks + j]} bowl"
        state.bowls[name] = spots[n_blocks + j]
        state.colors[name] = colors[n_blocks + j]
    return state


def place_entities(
    state: TabletopState,
    items: Sequence[str] = (),
    people: Sequence[str] = (),
) -> TabletopState:
    """Extend a scene with hand-over items and people on fresh spots."""
    state = _copy_state(state)
    next_spot = state.entity_count() + 1
    for name in items:
        state.items[name] = f"spot {next_spot}"
        next_spot += 1
    for name in people:
        state.people[name] = f"spot {next_spot}"
        next_spot += 1
    return state


def _copy_state(state: TabletopState) -> TabletopState:
    return replace(
        state,
        blocks=dict(state.blocks),
        bowls=dict(state.bowls),
        items=dict(state.items),
        people=dict(state.people),
        colors=dict(state.colors),
        delivered=dict(state.delivered),
    )


@dataclass(frozen=True)
class Action:
    primitive: str
    args: tuple[str, ...]

    def render(self) -> str:
        return f"robot.{self.primitive}({', '.join(self.args)})"


def pick_and_place(src: str, dst: str) -> Action:
    return Action("pick_and_place", (src, dst))


def handover(obj: str, person: str) -> Action:
    return Action("handover", (obj, person))


def parse_action(line: str) -> Action | None:
    m = _ACTION_RE.fullmatch(line.strip())
    if not m:
        return None
    return Action(m.group(1), (m.group(2).strip(), m.group(3).strip()))


def apply_action(state: TabletopState, action: Action) -> TabletopState:
    """Execute one primitive, returning a new state.

    pick_and_place requires the source to exist and be topmost, and the
    destination (bowl, corner, or block) to be unoccupied on top.
    """
    new = _copy_state(state)
    if action.primitive == "pick_and_place":
        src, dst = action.args
        movable = new.movable()
        if src not in movable:
            raise SimulatorError(f"unknown or immovable entity {src!r}")
        if new.supported_by(src):
            raise SimulatorError(f"{src!r} is buried under another entity")
        if src == dst:
            raise SimulatorError(f"cannot place {src!r} onto itself")
        if dst in new.blocks:
            if new.supported_by(dst):
                raise SimulatorError(f"{dst!r} already carries an entity")
        elif dst not in new.bowls and dst not in new.corners:
            raise SimulatorError(f"unknown destination {dst!r}")
        if src in new.blocks:
            new.blocks[src] = dst
        else:
            new.items[src] = dst
        new.delivered.pop(src, None)
        return new
    if action.primitive == "handover":
        obj, person = action.args
        if obj not in new.movable():
            raise SimulatorError(f"unknown or immovable entity {obj!r}")
        if person not in new.people:
            raise SimulatorError(f"unknown person {person!r}")
        if obj in new.blocks:
            new.blocks[obj] = person
        else:
            new.items[obj] = person
        new.delivered[obj] = person
        return new
    raise SimulatorError(f"unknown primitive {action.primitive!r}")


@dataclass(frozen=True)
class TaskTemplate:
    template_id: str
    pattern: str
    required_slots: tuple[str, ...]
    kind: str  # "manipulation" | "handover" | "infeasible"

    def text_slots(self) -> set[str]:
        return set(re.findall(r"\{(\w+)\}", self.pattern))


TEMPLATES: dict[str, TaskTemplate] = {
    t.template_id: t
    for t in (
        # Clear tabletop tasks
        TaskTemplate("pick_and_place", "pick {block} and put on {bowl}", ("block", "bowl"), "manipulation"),
        TaskTemplate("all_blocks_corner", "place all blocks on {corner}", ("corner",), "manipulation"),
        TaskTemplate("all_blocks_bowl", "place all blocks on {bowl}", ("bowl",), "manipulation"),
        TaskTemplate("different_corners", "put all blocks on different corners", (), "manipulation"),
        TaskTemplate("matching_color", "place blocks on matching color", (), "manipulation"),
        TaskTemplate("mismatching_color", "place blocks on mismatching color", (), "manipulation"),
        TaskTemplate("stack_corner", "stack all blocks on {corner}", ("corner",), "manipulation"),
        # Ambiguous tabletop tasks (a slot the text does not bind)
        TaskTemplate("pick_user_block", "pick block that user wants and place on {bowl}", ("block", "bowl"), "manipulation"),
        TaskTemplate("place_user_bowl", "pick {block} and put on the bowl that the user wants", ("block", "bowl"), "manipulation"),
        TaskTemplate("pick_place_unspecified", "pick the block and put in the bowl", ("block", "bowl"), "manipulation"),
        TaskTemplate("stack_unspecified", "stack all blocks", ("corner",), "manipulation"),
        # Hand-over tasks
        TaskTemplate("handover", "give {item} to {person}", ("item", "person"), "handover"),
        TaskTemplate("handover_someone", "give {item} to someone", ("item", "person"), "handover"),
        TaskTemplate("drink_person", "give something to drink to {person}", ("item", "person"), "handover"),
        TaskTemplate("drink_someone", "give something to drink to someone", ("item", "person"), "handover"),
        # Infeasible chores: no primitive exists for these
        TaskTemplate("wipe_desk", "wipe the desk", (), "infeasible"),
        TaskTemplate("smash", "smash the {item}", ("item",), "infeasible"),
        TaskTemplate("put_ground", "put {item} on the ground", ("item",), "infeasible"),
    )
}


@dataclass
class TaskSpec:
    template_id: str
    bindings: dict[str, str]
    gold_ambiguous: bool
    hidden_intent: dict[str, str] | None = None

    @property
    def template(self) -> TaskTemplate:
        return TEMPLATES[self.template_id]

    def unbound_slots(self) -> set[str]:
        return set(self.template.required_slots) - set(self.bindings)

    def resolved_bindings(self) -> dict[str, str]:
        if self.gold_ambiguous and self.hidden_intent is None:
            raise SimulatorError(f"task {self.template_id} is ambiguous but unresolved")
        return {**self.bindings, **(self.hidden_intent or {})}

    def goal_text(self) -> str:
        text_bindings = {s: self.bindings[s] for s in self.template.text_slots()}
        return self.template.pattern.format(**text_bindings)


def make_task(
    template_id: str,
    bindings: dict[str, str] | None = None,
    hidden_intent: dict[str, str] | None = None,
) -> TaskSpec:
    """Build and validate a task: ambiguous iff a required slot is unbound."""
    if template_id not in TEMPLATES:
        raise SimulatorError(f"unknown template {template_id!r}")
    template = TEMPLATES[template_id]
    bindings = dict(bindings or {})
    missing_text = template.text_slots() - set(bindings)
    if missing_text:
        raise SimulatorError(f"{template_id} needs text bindings for {sorted(missing_text)}")
    unbound = set(template.required_slots) - set(bindings)
    ambiguous = bool(unbound) and template.kind != "infeasible"
    if ambiguous:
        if hidden_intent is None or set(hidden_intent) != unbound:
            raise SimulatorError(
                f"{template_id}: hidden intent must bind exactly {sorted(unbound)}"
            )
    elif hidden_intent:
        raise SimulatorError(f"{template_id} is fully specified; no hidden intent allowed")
    return TaskSpec(
        template_id=template_id,
        bindings=bindings,
        gold_ambiguous=ambiguous,
        hidden_intent=hidden_intent,
    )


def check_success(task: TaskSpec, state: TabletopState) -> bool:
    """Declarative success predicate over the resolved task."""
    resolved = task.resolved_bindings()
    tid = task.template_id
    blocks = list(state.blocks)

    if tid in ("pick_and_place", "pick_user_block", "place_user_bowl", "pick_place_unspecified"):
        return state.containing_bowl(resolved["block"]) == resolved["bowl"]
    if tid == "all_blocks_corner":
        return all(state.base_location(b) == resolved["corner"] for b in blocks)
    if tid == "all_blocks_bowl":
        return all(state.containing_bowl(b) == resolved["bowl"] for b in blocks)
    if tid == "different_corners":
        bases = [state.base_location(b) for b in blocks]
        direct = all(state.location_of(b) in state.corners for b in blocks)
        return direct and len(set(bases)) == len(bases)
    if tid == "matching_color":
        return all(
            (bowl := state.containing_bowl(b)) is not None
            and state.colors[bowl] == state.colors[b]
            for b in blocks
        )
    if tid == "mismatching_color":
        return all(
            (bowl := state.containing_bowl(b)) is not None
            and state.colors[bowl] != state.colors[b]
            for b in blocks
        )
    if tid in ("stack_corner", "stack_unspecified"):
        corner = resolved["corner"]
        base = [b for b in blocks if state.location_of(b) == corner]
        if len(base) != 1:
            return False
        count, current = 1, base[0]
        while True:
            above = [b for b in blocks if state.location_of(b) == current]
            if len(above) > 1:
                return False
            if not above:
                break
            current = above[0]
            count += 1
        return count == len(blocks)
    if task.template.kind == "handover":
        return state.delivered.get(resolved["item"]) == resolved["person"]
    if task.template.kind == "infeasible":
        return False
    raise SimulatorError(f"no success predicate for template {tid!r}")


_SLOT_TRIGGERS: dict[str, tuple[str, ...]] = {
    "block": ("which block", "what block"),
    "bowl": ("which bowl", "what bowl"),
    "corner": ("which corner", "what corner", "where"),
    "person": ("who", "whom", "which person"),
    "item": ("which item", "what item", "which drink", "what drink", "which object", "what would"),
}

UNINFORMATIVE_ANSWER = "I'm not sure what you mean"


def oracle_answer(question_text: str, hidden_intent: dict[str, str] | None) -> str:
    """Scripted user: reveal the slots the question actually asks about."""
    if not hidden_intent:
        raise SimulatorError("oracle requires an ambiguous task with a hidden intent")
    q = question_text.lower()
    reveals = []
    for slot, value in hidden_intent.items():
        triggers = _SLOT_TRIGGERS.get(slot, ())
        if any(re.search(r"(?<!\w)" + re.escape(t) + r"(?!\w)", q) for t in triggers):
            reveals.append(value if slot == "person" else f"the {value}")
    if not reveals:
        return UNINFORMATIVE_ANSWER
    return "; ".join(reveals)


@dataclass
class EpisodeResult:
    success: bool
    asked_question: bool
    actions: list[str]
    transcript: str
    label: str | None = None
    status: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "asked_question": self.asked_question,
            "actions": self.actions,
            "label": self.label,
            "status": self.status,
            "error": self.error,
        }


def scene_from_state(state: TabletopState, robot_type: str = "tabletop") -> P.SceneDescription:
    objects = [P.Entity(name) for name in (*state.blocks, *state.bowls, *state.items)]
    people = [P.Entity(name) for name in state.people]
    return P.SceneDescription(
        robot_type=robot_type,
        objects=objects,
        people=people,
        action_set=[PICK_AND_PLACE_SIG, HANDOVER_SIG],
    )


def run_episode(
    task: TaskSpec,
    state: TabletopState,
    engine: TriageEngine,
    budget: int = 1,
) -> EpisodeResult:
    """Triage the goal with the oracle as the user, then execute the skill.

    Pipeline failures are recorded as unsuccessful episodes, never raised.
    Infeasible-template episodes succeed by correctly refusing (abandoning
    with an infeasible label).
    """
    scene = scene_from_state(state)
    goal = P.GoalCommand(text=task.goal_text())
    dialogue = DialogueState(goal=goal, scene=scene)
    if task.gold_ambiguous:
        answer_source: Callable[[str], str] = lambda q: oracle_answer(q, task.hidden_intent)
    else:
        answer_source = lambda q: UNINFORMATIVE_ANSWER

    try:
        final = engine.run_dialogue(dialogue, answer_source, max_question_rounds=budget)
    except Exception as exc:
        logger.warning("pipeline failure on %s: %s", task.template_id, exc)
        return EpisodeResult(
            success=False,
            asked_question=False,
            actions=[],
            transcript="",
            error=str(exc),
        )

    asked = len(final.history) > 0
    result = final.last_result
    transcript = result.transcript if result else ""
    label = result.label if result else None

    if task.template.kind == "infeasible":
        success = final.status == ABANDONED and label == INFEASIBLE
        return EpisodeResult(
            success=success,
            asked_question=asked,
            actions=[],
            transcript=transcript,
            label=label,
            status=final.status,
        )

    if final.status != RESOLVED or not result or not result.skill_lines:
        return EpisodeResult(
            success=False,
            asked_question=asked,
            actions=[],
            transcript=transcript,
            label=label,
            status=final.status,
        )

    executed: list[str] = []
    current = state
    for line in result.skill_lines:
        action = parse_action(line)
        if action is None:
            return EpisodeResult(
                success=False,
                asked_question=asked,
                actions=executed,
                transcript=transcript,
                label=label,
                status=final.status,
                error=f"unparseable skill line {line!r}",
            )
        try:
            current = apply_action(current, action)
        except SimulatorError as exc:
            return EpisodeResult(
                success=False,
                asked_question=asked,
                actions=executed,
                transcript=transcript,
                label=label,
                status=final.status,
                error=str(exc),
            )
        executed.append(action.render())

    return EpisodeResult(
        success=check_success(task, current),
        asked_question=asked,
        actions=executed,
        transcript=transcript,
        label=label,
        status=final.status,
    )


@dataclass
class EpisodeSpec:
    """One row of a batch file."""

    template_id: str
    bindings: dict[str, str]
    hidden_intent: dict[str, str] | None
    seed: int
    budget: int
    n_blocks: int = 3
    n_bowls: int = 3
    items: tuple[str, ...] = ()
    people: tuple[str, ...] = ()

    def build(self) -> tuple[TaskSpec, TabletopState]:
        task = make_task(self.template_id, self.bindings, self.hidden_intent)
        state = init_scene(self.seed, self.n_blocks, self.n_bowls)
        if self.items or self.people:
            state = place_entities(state, self.items, self.people)
        return task, state


def load_batch(path: str | Path) -> list[EpisodeSpec]:
    """Batch spec file: JSON list of {template_id, bindings, seed, budget, ...}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    episodes = []
    for entry in raw:
        episodes.append(
            EpisodeSpec(
                template_id=entry["template_id"],
                bindings=dict(entry.get("bindings", {})),
                hidden_intent=entry.get("hidden_intent"),
                seed=int(entry["seed"]),
                budget=int(entry.get("budget", 1)),
                n_blocks=int(entry.get("n_blocks", 3)),
                n_bowls=int(entry.get("n_bowls", 3)),
                items=tuple(entry.get("items", ())),
                people=tuple(entry.get("people", ())),
            )
        )
    return episodes


def run_batch(
    episodes: Sequence[EpisodeSpec],
    engine: TriageEngine,
    replay_budget0: bool = True,
) -> tuple[list[dict], dict]:
    """Run a batch; ambiguous episodes are replayed at budget 0 for the gap.

    Returns per-episode dicts (NDJSON-ready) and a summary with the timing
    metric and the interaction success gap.
    """
    from .evaluation import success_gap, timing_metric

    rows = []
    asked_flags: list[bool] = []
    ambiguous_flags: list[bool] = []
    before: list[bool] = []
    after: list[bool] = []
    for i, spec in enumerate(episodes):
        task, state = spec.build()
        result = run_episode(task, state, engine, budget=spec.budget)
        row = {
            "episode": i,
            "template_id": spec.template_id,
            "seed": spec.seed,
            "budget": spec.budget,
            "gold_ambiguous": task.gold_ambiguous,
            **result.to_dict(),
        }
        if task.gold_ambiguous and replay_budget0:
            baseline = run_episode(task, state, engine, budget=0)
            row["success_before"] = baseline.success
            before.append(baseline.success)
            after.append(result.success)
        rows.append(row)
        asked_flags.append(result.asked_question)
        ambiguous_flags.append(task.gold_ambiguous)

    summary: dict = {"episodes": len(rows)}
    if any(ambiguous_flags) and not all(ambiguous_flags):
        summary["timing"] = timing_metric(asked_flags, ambiguous_flags)
    if before:
        summary["success_gap"] = success_gap(before, after)
    summary["success_rate"] = (
        sum(1 for r in rows if r["success"]) / len(rows) if rows else 0.0
    )
    return rows, summary
