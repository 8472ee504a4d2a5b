from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmdtriage.evaluation import (
    DatasetError,
    LABELS,
    MetricError,
    MetricsReport,
    accuracy3,
    auroc,
    class_counts,
    load_sagc,
    stratify,
    success_gap,
    timing_metric,
)

SCENE = {
    "robot_type": "cooking",
    "objects": ["kettle"],
    "people": [],
    "action_set": ["robot.serve(<item>)"],
}


def row(goal, label, robot="cook", scene_id="s1"):
    return {
        "goal_text": goal,
        "robot_type": robot,
        "scene": SCENE,
        "label": label,
        "scene_id": scene_id,
    }


def write_ndjson(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")


# -- load_sagc ---------------------------------------------------------------


def test_load_six_row_fixture(tmp_path):
    rows = [
        row("a", "certain"),
        row("b", "certain"),
        row("c", "ambiguous"),
        row("d", "ambiguous"),
        row("e", "infeasible"),
        row("f", "infeasible"),
    ]
    path = tmp_path / "data.ndjson"
    write_ndjson(path, rows)
    records = load_sagc(path)
    assert dict(class_counts(records)) == {"certain": 2, "ambiguous": 2, "infeasible": 2}


def test_unknown_label_names_line(tmp_path):
    path = tmp_path / "data.ndjson"
    write_ndjson(path, [row("a", "certain"), row("b", "maybe")])
    with pytest.raises(DatasetError, match="line 2"):
        load_sagc(path)


def test_empty_file_is_empty_list(tmp_path):
    path = tmp_path / "data.ndjson"
    path.write_text("")
    records = load_sagc(path)
    assert records == []
    assert dict(class_counts(records)) == {}


def test_malformed_json_names_line(tmp_path):
    path = tmp_path / "data.ndjson"
    path.write_text(json.dumps(row("a", "certain")) + "\n{not json\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_sagc(path)


def test_unknown_robot_type_rejected(tmp_path):
    path = tmp_path / "data.ndjson"
    write_ndjson(path, [row("a", "certain", robot="barista")])
    with pytest.raises(DatasetError, match="robot_type"):
        load_sagc(path)


def test_bundled_fixture_loads(data_dir):
    records = load_sagc(data_dir / "sagc_fixture.ndjson")
    assert len(records) == 60
    counts = class_counts(records)
    assert counts["certain"] == counts["ambiguous"] == counts["infeasible"] == 20


# -- auroc --------------------------------------------------------------------


def test_perfect_separation():
    assert auroc([0.1, 0.2, 0.8, 0.9], [False, False, True, True]) == 1.0


def test_all_ties_give_half():
    assert auroc([0.5] * 6, [True, False, True, False, True, False]) == pytest.approx(0.5)


def test_single_class_rejected():
    with pytest.raises(MetricError):
        auroc([0.1, 0.2], [True, True])


def pair_counting_auroc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1 for p in pos for n in neg if p > n)
    ties = sum(1 for p in pos for n in neg if p == n)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def test_matches_pair_counting_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(4, 40))
        scores = rng.integers(0, 6, size=n).astype(float)  # injected ties
        labels = rng.integers(0, 2, size=n).astype(bool)
        if labels.all() or not labels.any():
            continue
        assert auroc(scores, labels) == pytest.approx(
            pair_counting_auroc(scores, labels), abs=1e-12
        )


def test_negation_identity():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=30)
    labels = rng.integers(0, 2, size=30).astype(bool)
    labels[0], labels[1] = True, False
    assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(min_value=-40, max_value=40), min_size=4, max_size=20),
    st.data(),
)
def test_monotone_transform_invariance(scores, data):
    labels = data.draw(
        st.lists(st.booleans(), min_size=len(scores), max_size=len(scores))
    )
    if all(labels) or not any(labels):
        labels[0] = True
        labels[-1] = False
    scores = [float(s) for s in scores]
    affine = [3.0 * s + 1.0 for s in scores]
    assert auroc(scores, labels) == pytest.approx(auroc(affine, labels), abs=1e-12)
    # integer grid keeps ties intact under exp, so this stays exact
    exp = [float(np.exp(s / 10.0)) for s in scores]
    assert auroc(scores, labels) == pytest.approx(auroc(exp, labels), abs=1e-12)


# -- accuracy3 -------------------------------------------------------------------


def test_all_correct_diagonal():
    gold = ["certain", "ambiguous", "infeasible"] * 2
    acc, confusion = accuracy3(gold, gold)
    assert acc == 1.0
    assert np.trace(confusion) == 6
    assert confusion.sum() == 6


def test_uniform_prediction_on_balanced_gold():
    gold = ["certain", "ambiguous", "infeasible"] * 3
    predictions = ["certain"] * 9
    acc, _ = accuracy3(predictions, gold)
    assert acc == pytest.approx(1 / 3)


def test_empty_rejected():
    with pytest.raises(MetricError):
        accuracy3([], [])


def test_length_mismatch_rejected():
    with pytest.raises(MetricError):
        accuracy3(["certain"], ["certain", "ambiguous"])


def test_clear_is_an_alias_for_certain():
    acc, confusion = accuracy3(["clear"], ["certain"])
    assert acc == 1.0
    assert confusion[0, 0] == 1


def test_accuracy_equals_trace_over_n():
    rng = np.random.default_rng(11)
    gold = [LABELS[i] for i in rng.integers(0, 3, size=30)]
    predictions = [LABELS[i] for i in rng.integers(0, 3, size=30)]
    acc, confusion = accuracy3(predictions, gold)
    assert acc == pytest.approx(np.trace(confusion) / 30)
    for i, label in enumerate(LABELS):
        assert confusion[i].sum() == gold.count(label)


# -- timing_metric --------------------------------------------------------------


def test_timing_spec_example():
    questioned = [True] * 4 + [False] * 2 + [True] + [False] * 5
    is_ambiguous = [True] * 6 + [False] * 6
    assert timing_metric(questioned, is_ambiguous) == pytest.approx(0.5)


def test_timing_cancels_when_always_questioning():
    assert timing_metric([True] * 4, [True, True, False, False]) == 0.0


def test_timing_maximum():
    assert timing_metric([True, True, False], [True, True, False]) == 1.0


def test_timing_needs_both_classes():
    with pytest.raises(MetricError):
        timing_metric([True, False], [True, True])


def test_timing_antisymmetry():
    questioned = [True, False, True, False, True, False]
    ambiguous = [True, True, True, False, False, False]
    flipped = [not a for a in ambiguous]
    assert timing_metric(questioned, ambiguous) == pytest.approx(
        -timing_metric(questioned, flipped)
    )


def test_timing_question_share_variant():
    questioned = [True, True, True, False]
    ambiguous = [True, True, False, False]
    assert timing_metric(questioned, ambiguous, variant="question_share") == pytest.approx(
        2 / 3 - 1 / 3
    )
    assert timing_metric([False, False], [True, False], variant="question_share") == 0.0


# -- success_gap -----------------------------------------------------------------


def test_gap_forty_points():
    before = [True, False, False, False, False]
    after = [True, True, True, False, False]
    assert success_gap(before, after) == pytest.approx(40.0)


def test_gap_identity_zero():
    flags = [True, False, True]
    assert success_gap(flags, flags) == 0.0


def test_gap_extremes():
    assert success_gap([False] * 4, [True] * 4) == pytest.approx(100.0)


def test_gap_empty_rejected():
    with pytest.raises(MetricError):
        success_gap([], [])


# -- stratify ---------------------------------------------------------------------


def test_stratify_by_label(tmp_path):
    rows = [
        row("a", "certain"),
        row("b", "ambiguous"),
        row("c", "infeasible"),
        row("d", "certain"),
        row("e", "ambiguous"),
        row("f", "infeasible"),
    ]
    path = tmp_path / "d.ndjson"
    write_ndjson(path, rows)
    records = load_sagc(path)
    groups = stratify(records, by="label")
    assert {k: len(v) for k, v in groups.items()} == {
        "certain": 2,
        "ambiguous": 2,
        "infeasible": 2,
    }


def test_stratify_unknown_key(tmp_path):
    path = tmp_path / "d.ndjson"
    write_ndjson(path, [row("a", "certain")])
    records = load_sagc(path)
    with pytest.raises(MetricError):
        stratify(records, by="color")


def test_stratify_concatenation_is_permutation(data_dir):
    records = load_sagc(data_dir / "sagc_fixture.ndjson")
    groups = stratify(records, by="scene_id")
    flattened = [r for group in groups.values() for r in group]
    assert sorted(id(r) for r in flattened) == sorted(id(r) for r in records)
    assert len(groups) == 15


# -- report -------------------------------------------------------------------------


def test_report_serialization_round_trip():
    report = MetricsReport(
        auroc={"context_sampling": 1.0, "predictive_entropy": "unsupported"},
        accuracy3=0.5,
        confusion=[[1, 0, 0], [0, 1, 0], [0, 0, 1]],
        timing=1.0,
        a_gap=40.0,
        n={"certain": 2},
    )
    data = report.to_dict()
    assert data["auroc"]["predictive_entropy"] == "unsupported"
    assert data["confusion_labels"] == list(LABELS)
    table = report.to_table()
    assert "auroc[context_sampling]" in table
    assert "+40.0" in table
