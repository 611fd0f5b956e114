"""Tests for metrics, model evaluation and the gradient check suite."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epimatch import evaluation as ev
from epimatch import geometry as geo
from epimatch.pipeline import ModelParams
from epimatch.scenes import SceneConfig, gen_dataset

from conftest import TINY_MODEL


# ----------------------------------------------------------- match metrics ----

def test_classify_threshold():
    logits = np.array([-1.0, 0.0, 1e-9, 5.0])
    np.testing.assert_array_equal(ev.classify(logits), [False, False, True, True])


def test_match_metrics_perfect():
    labels = np.array([1, 0, 1], dtype=bool)
    m = ev.match_metrics(labels, labels)
    assert (m.precision, m.recall, m.fscore) == (1.0, 1.0, 1.0)


def test_match_metrics_all_positive_baseline():
    labels = np.array([1, 1, 0, 0], dtype=bool)
    m = ev.match_metrics(np.ones(4, dtype=bool), labels)
    assert m.precision == 0.5
    assert m.recall == 1.0
    assert m.fscore == pytest.approx(2 / 3)


def test_match_metrics_counting_case():
    # TP=3, FP=1, FN=2
    labels = np.array([1, 1, 1, 1, 1, 0], dtype=bool)
    pred = np.array([1, 1, 1, 0, 0, 1], dtype=bool)
    m = ev.match_metrics(pred, labels)
    assert m.precision == pytest.approx(0.75, abs=1e-12)
    assert m.recall == pytest.approx(0.6, abs=1e-12)
    assert m.fscore == pytest.approx(2 / 3, abs=1e-12)


def test_match_metrics_zero_denominators():
    none = np.zeros(4, dtype=bool)
    m = ev.match_metrics(none, none)
    assert (m.precision, m.recall, m.fscore) == (0.0, 0.0, 0.0)
    m = ev.match_metrics(none, np.array([1, 0, 0, 0], dtype=bool))
    assert (m.precision, m.recall, m.fscore) == (0.0, 0.0, 0.0)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
@settings(max_examples=80, deadline=None)
def test_match_metrics_bounds(pairs):
    pred = np.array([p for p, _ in pairs], dtype=bool)
    labels = np.array([l for _, l in pairs], dtype=bool)
    m = ev.match_metrics(pred, labels)
    for v in (m.precision, m.recall, m.fscore):
        assert 0.0 <= v <= 1.0


# ------------------------------------------------------------ pose metrics ----

def _per_record_fn(records, make):
    """predict_fn dispatching on the coords buffer of each record."""
    table = {rec.coords.tobytes(): make(rec) for rec in records}
    return lambda coords: table[coords.tobytes()]


def test_pose_metrics_oracle_weights():
    records = gen_dataset(SceneConfig(seed=8, pairs=5, n=32, outlier_ratio=0.3,
                                      noise_sigma=0.0))
    fn = _per_record_fn(records, lambda rec: (
        np.where(rec.labels, 1.0, -1.0),
        geo.weighted_eight_point(rec.coords, rec.labels.astype(np.float64)),
    ))
    pm = ev.pose_metrics(fn, records)
    assert pm.map5 == 1.0
    # outlier rows that happen to fall under the label threshold keep the
    # oracle fit from being exact, but it stays far inside the 5 degree gate
    assert max(pm.rot_errors) < 1.0


def test_pose_metrics_uniform_weights_mostly_outliers():
    records = gen_dataset(SceneConfig(seed=9, pairs=50, n=128, outlier_ratio=0.9,
                                      noise_sigma=1e-3))
    fn = _per_record_fn(records, lambda rec: (
        np.ones(rec.coords.shape[0]),
        geo.weighted_eight_point(rec.coords, np.ones(rec.coords.shape[0])),
    ))
    pm = ev.pose_metrics(fn, records)
    assert pm.map5 < 0.1


def test_pose_metrics_ten_degree_rotation_misses_threshold():
    records = gen_dataset(SceneConfig(seed=10, pairs=3, n=32, outlier_ratio=0.0,
                                      noise_sigma=0.0))
    off = geo.rotation_about_axis(np.array([0.0, 0.0, 1.0]), np.deg2rad(10.0))
    fn = _per_record_fn(records, lambda rec: (
        np.where(rec.labels, 1.0, -1.0),
        geo.essential_from_pose(geo.Pose(r=rec.pose.r @ off, t=rec.pose.t)),
    ))
    pm = ev.pose_metrics(fn, records)
    assert pm.map5 == 0.0
    for rot in pm.rot_errors:
        assert rot == pytest.approx(10.0, abs=0.05)


def test_pose_metrics_failures_are_infinite():
    records = gen_dataset(SceneConfig(seed=11, pairs=2, n=16, outlier_ratio=0.0))
    fn = _per_record_fn(records, lambda rec: (
        -np.ones(rec.coords.shape[0]),  # nothing classified as inlier
        geo.weighted_eight_point(rec.coords, np.ones(rec.coords.shape[0])),
    ))
    pm = ev.pose_metrics(fn, records)
    assert pm.map5 == 0.0
    assert all(np.isinf(pm.rot_errors))


# -------------------------------------------------------------- summaries ----

def test_all_positive_baseline_formula():
    records = gen_dataset(SceneConfig(seed=12, pairs=4, n=32, outlier_ratio=0.4))
    total = sum(r.labels.shape[0] for r in records)
    q = sum(int(r.labels.sum()) for r in records) / total
    assert ev.all_positive_baseline_fscore(records) == pytest.approx(
        2 * q / (1 + q), abs=1e-12)


def test_evaluate_params_summary(tiny_records, tiny_params):
    summary = ev.evaluate_params(tiny_params, tiny_records)
    assert summary.pairs == len(tiny_records)
    for v in (summary.precision, summary.recall, summary.fscore, summary.map5):
        assert 0.0 <= v <= 1.0
    assert 0.0 < summary.inlier_fraction < 1.0
    # the match side must agree with a by-hand pass over the records
    fn = ev.model_predict_fn(tiny_params)
    precisions = []
    for rec in tiny_records:
        logits, _ = fn(rec.coords)
        precisions.append(ev.match_metrics(ev.classify(logits), rec.labels).precision)
    assert summary.precision == pytest.approx(float(np.mean(precisions)), abs=1e-12)


def test_evaluate_params_without_pose(tiny_records, tiny_params):
    summary = ev.evaluate_params(tiny_params, tiny_records, with_pose=False)
    assert np.isnan(summary.map5)


def test_evaluate_params_empty():
    with pytest.raises(ValueError):
        ev.evaluate_params(ModelParams.init(TINY_MODEL, seed=0), [])


# ---------------------------------------------------------- gradient suite ----

def test_gradient_suite_passes():
    reports = ev.gradient_suite()
    expected = {"lfc_block", "loss_cls", "loss_reg", "loss_total",
                "siamese_loss_a", "siamese_loss_b"}
    assert set(reports) == expected
    for name, report in reports.items():
        assert report.passed, f"{name}: {report}"
