"""Operator entry points: triage, eval, simulate, calibrate, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, build_engine, load_config
from .evaluation import (
    DatasetError,
    MetricError,
    MetricsReport,
    accuracy3,
    auroc,
    class_counts,
    load_sagc,
)
from .gateway import GatewayError
from .prompts import GoalCommand, PromptError, load_scene
from .simulator import SimulatorError, load_batch, run_batch
from .triage import (
    AMBIGUOUS,
    CLEAR,
    INFEASIBLE,
    TriageEngine,
    TriageError,
    youden_threshold,
)
from .uncertainty import (
    CONTEXT_SAMPLING,
    LEXICAL_SIMILARITY,
    NORMALIZED_ENTROPY,
    PREDICTIVE_ENTROPY,
    SEMANTIC_ENTROPY,
    MissingTokenProbsError,
    SampleSet,
    UncertaintyError,
)

_CLI_ERRORS = (
    ConfigError,
    DatasetError,
    GatewayError,
    MetricError,
    PromptError,
    SimulatorError,
    TriageError,
    OSError,
    ValueError,
)

EXIT_CLEAR = 0
EXIT_ERROR = 1
EXIT_AMBIGUOUS = 10
EXIT_INFEASIBLE = 11

_LABEL_EXIT_CODES = {CLEAR: EXIT_CLEAR, AMBIGUOUS: EXIT_AMBIGUOUS, INFEASIBLE: EXIT_INFEASIBLE}

SCHEMA_VERSION = "1"


def _dump(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _fail(message: str, code: str = "error") -> int:
    print(json.dumps({"code": code, "message": message}), file=sys.stderr)
    return EXIT_ERROR


def cmd_triage(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        if args.epsilon is not None:
            config.triage.epsilon = args.epsilon
        if args.seed is not None:
            config.triage.seed = args.seed
        engine = build_engine(config)
        scene = load_scene(args.scene)
        goal = GoalCommand(text=args.goal)
        result = engine.classify(goal, scene)
    except _CLI_ERRORS as exc:
        return _fail(str(exc))
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": config.effective(),
        "result": result.to_dict(),
    }
    _dump(payload)
    return _LABEL_EXIT_CODES[result.label]


_BASELINES = (
    CONTEXT_SAMPLING,
    LEXICAL_SIMILARITY,
    PREDICTIVE_ENTROPY,
    NORMALIZED_ENTROPY,
    SEMANTIC_ENTROPY,
)


def eval_uq(engine: TriageEngine, records) -> MetricsReport:
    """AUROC of every computable estimator over certain-vs-uncertain rows."""
    want_probs = engine.backend.supports_token_probs
    scores: dict[str, list[float]] = {name: [] for name in _BASELINES}
    unsupported: set[str] = set()
    if not want_probs:
        unsupported.update((PREDICTIVE_ENTROPY, NORMALIZED_ENTROPY, SEMANTIC_ENTROPY))
    labels: list[bool] = []
    for record in records:
        goal = GoalCommand(text=record.goal_text)
        _, samples, embeddings = engine._sample(goal, record.scene, want_probs)
        sample_set = SampleSet(samples=samples, embeddings=embeddings)
        labels.append(record.is_uncertain)
        for name in _BASELINES:
            if name in unsupported:
                continue
            try:
                scores[name].append(engine.score_samples(sample_set, name).value)
            except (MissingTokenProbsError, UncertaintyError):
                unsupported.add(name)
    report = MetricsReport(schema_version=SCHEMA_VERSION)
    report.n = dict(class_counts(records))
    for name in _BASELINES:
        if name in unsupported or len(scores[name]) != len(labels):
            report.auroc[name] = "unsupported"
        else:
            report.auroc[name] = auroc(scores[name], labels)
    return report


def eval_cls(engine: TriageEngine, records) -> MetricsReport:
    """3-way accuracy of the full cascade against gold labels."""
    predictions = []
    gold = []
    for record in records:
        goal = GoalCommand(text=record.goal_text)
        result = engine.classify(goal, record.scene)
        predictions.append(result.label)
        gold.append(record.label)
    accuracy, confusion = accuracy3(predictions, gold)
    report = MetricsReport(schema_version=SCHEMA_VERSION)
    report.n = dict(class_counts(records))
    report.accuracy3 = accuracy
    report.confusion = confusion.tolist()
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        engine = build_engine(config)
        dataset_path = args.dataset or config.paths.get("dataset")
        if dataset_path is None:
            return _fail("no dataset given (flag --dataset or config paths.dataset)")
        records = load_sagc(dataset_path)
        if not records:
            return _fail(f"dataset {dataset_path} is empty")
        report = eval_uq(engine, records) if args.metric == "uq" else eval_cls(engine, records)
    except _CLI_ERRORS as exc:
        return _fail(str(exc))
    payload = {
        "config": config.effective(),
        "metric": args.metric,
        "report": report.to_dict(),
    }
    _dump(payload)
    print(report.to_table(), file=sys.stderr)
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_CLEAR


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        engine = build_engine(config)
        episodes = load_batch(args.batch)
        rows, summary = run_batch(episodes, engine)
    except (*_CLI_ERRORS, KeyError) as exc:
        return _fail(str(exc))
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    for line in lines:
        print(line)
    summary_payload = {
        "schema_version": SCHEMA_VERSION,
        "config": config.effective(),
        "summary": summary,
    }
    print(json.dumps(summary_payload, sort_keys=True))
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_CLEAR


def cmd_calibrate(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        engine = build_engine(config)
        dataset_path = args.dataset or config.paths.get("dataset")
        if dataset_path is None:
            return _fail("no dataset given (flag --dataset or config paths.dataset)")
        records = load_sagc(dataset_path)
        scores = []
        uncertain = []
        for record in records:
            sigma, _ = engine.estimate_sigma(GoalCommand(text=record.goal_text), record.scene)
            scores.append(sigma.value)
            uncertain.append(record.is_uncertain)
        epsilon = youden_threshold(scores, uncertain)
    except _CLI_ERRORS as exc:
        return _fail(str(exc))
    _dump(
        {
            "schema_version": SCHEMA_VERSION,
            "config": config.effective(),
            "epsilon": epsilon,
            "n": len(records),
        }
    )
    return EXIT_CLEAR


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc))
    serve(config, host=args.host, port=args.port)
    return EXIT_CLEAR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmdtriage",
        description="Classify robot commands as clear, ambiguous, or infeasible.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("triage", help="triage one goal against a scene")
    p.add_argument("--config", required=True)
    p.add_argument("--goal", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("eval", help="evaluate on a labeled dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--metric", choices=("uq", "cls"), default="uq")
    p.add_argument("--out", default="metrics_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run a tabletop episode batch")
    p.add_argument("--config", required=True)
    p.add_argument("--batch", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="pick the sigma threshold from labeled rows")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve", help="run the HTTP session API")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
