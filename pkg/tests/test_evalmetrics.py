"""Tests for error metrics, coverage, and calibration sweeps."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from enfc import models
from enfc.encoding import EncodedTrial, MultiLabelVocab, ZScoreState
from enfc.errors import DegenerateDataError, DomainError, StructuralError
from enfc.evalmetrics import (CALIBRATION_HEADER, DEFAULT_SIGNIFICANCES,
                              PairedOutcomes, calibration_csv,
                              calibration_sweep, interval_metrics, mae, medae,
                              metrics_report, r2, window_coverage)

VOCAB = MultiLabelVocab(("phase",), (("I", "II", "III"),))
ZSCORE = ZScoreState(("planned_participants", "planned_sites"),
                     (100.0, 20.0), (40.0, 8.0))
SMALL = models.BackboneConfig(d_emb=6, d_cat=5, d_num=2, hidden=8, heads=2)


def pairs_with_errors(errors):
    truths = np.full(len(errors), 50.0)
    return PairedOutcomes(truths, truths - np.asarray(errors, dtype=float))


def gamma_checkpoint(seed=3):
    gen = np.random.default_rng(seed)
    weights = {name: gen.normal(0.0, 0.4, size=shape)
               for name, shape in
               models.expected_weight_shapes(SMALL, "gamma").items()}
    return models.ModelCheckpoint(config=SMALL, head_kind="gamma",
                                  weights=weights, vocab=VOCAB, zscore=ZSCORE)


def random_trials(gen, n):
    return [EncodedTrial(x_emb=gen.normal(size=SMALL.d_emb),
                         x_cat=(gen.random(SMALL.d_cat) > 0.5).astype(np.float64),
                         x_num=gen.normal(size=SMALL.d_num))
            for _ in range(n)]


class TestPairedOutcomes:
    def test_length_mismatch_rejected(self):
        with pytest.raises(StructuralError, match="2 truths vs 3"):
            PairedOutcomes([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_negative_truth_rejected(self):
        with pytest.raises(StructuralError, match=">= 0"):
            PairedOutcomes([-1.0], [0.0])

    def test_interval_count_mismatch_rejected(self):
        interval = SimpleNamespace(lower=0.0, upper=1.0)
        with pytest.raises(StructuralError, match="1 intervals vs 2"):
            PairedOutcomes([1.0, 2.0], [1.0, 2.0], intervals=[interval])


class TestAbsoluteErrors:
    def test_perfect_predictions(self):
        pairs = pairs_with_errors([0.0, 0.0, 0.0])
        assert mae(pairs) == 0.0
        assert medae(pairs) == 0.0

    def test_known_error_set(self):
        pairs = pairs_with_errors([1.0, 3.0, 100.0])
        assert math.isclose(mae(pairs), 104.0 / 3.0, rel_tol=1e-12)
        assert medae(pairs) == 3.0

    def test_medae_ignores_outlier_doubling(self):
        assert medae(pairs_with_errors([1.0, 3.0, 200.0])) == 3.0

    def test_sign_of_error_irrelevant(self):
        pairs = PairedOutcomes([10.0, 10.0], [7.0, 13.0])
        assert mae(pairs) == 3.0

    def test_empty_rejected(self):
        with pytest.raises(StructuralError, match="no pairs"):
            mae(PairedOutcomes([], []))
        with pytest.raises(StructuralError, match="no pairs"):
            medae(PairedOutcomes([], []))

    def test_permutation_invariant(self):
        gen = np.random.default_rng(0)
        truths = gen.uniform(0, 100, size=40)
        preds = gen.uniform(0, 100, size=40)
        order = gen.permutation(40)
        direct = PairedOutcomes(truths, preds)
        shuffled = PairedOutcomes(truths[order], preds[order])
        assert mae(direct) == pytest.approx(mae(shuffled), rel=1e-12)
        assert medae(direct) == medae(shuffled)


class TestR2:
    def test_perfect_fit(self):
        truths = np.array([3.0, 7.0, 11.0])
        assert r2(PairedOutcomes(truths, truths)) == 1.0

    def test_mean_predictor_scores_zero(self):
        truths = np.array([2.0, 4.0, 6.0, 8.0])
        pairs = PairedOutcomes(truths, np.full(4, truths.mean()))
        assert r2(pairs) == 0.0

    def test_worse_than_mean_goes_negative(self):
        truths = np.array([2.0, 4.0, 6.0])
        assert r2(PairedOutcomes(truths, truths[::-1] * 3)) < 0.0

    def test_never_exceeds_one(self):
        gen = np.random.default_rng(5)
        for _ in range(20):
            truths = gen.uniform(0, 50, size=12)
            preds = gen.uniform(0, 50, size=12)
            assert r2(PairedOutcomes(truths, preds)) <= 1.0

    def test_zero_variance_rejected(self):
        with pytest.raises(DegenerateDataError, match="zero variance"):
            r2(PairedOutcomes([5.0, 5.0, 5.0], [4.0, 5.0, 6.0]))

    def test_single_pair_rejected(self):
        with pytest.raises(StructuralError):
            r2(PairedOutcomes([5.0], [4.0]))


class TestWindowCoverage:
    def test_exact_predictions_cover_everything(self):
        pairs = pairs_with_errors([0.0, 0.0])
        assert window_coverage(pairs, 6.0) == 1.0

    def test_boundary_error_counts(self):
        # error exactly half the window sits on the closed bound
        assert window_coverage(pairs_with_errors([3.0]), 6.0) == 1.0

    def test_just_outside_does_not_count(self):
        assert window_coverage(pairs_with_errors([3.1]), 6.0) == 0.0

    def test_monotone_in_window(self):
        pairs = pairs_with_errors([0.5, 1.5, 2.5, 4.0, 7.0])
        coverages = [window_coverage(pairs, w) for w in (1.0, 2.0, 4.0, 6.0, 15.0)]
        assert coverages == sorted(coverages)
        assert coverages[-1] == 1.0

    def test_nonpositive_window_rejected(self):
        with pytest.raises(DomainError):
            window_coverage(pairs_with_errors([1.0]), 0.0)

    def test_empty_rejected(self):
        with pytest.raises(StructuralError):
            window_coverage(PairedOutcomes([], []), 6.0)


class TestIntervalMetrics:
    def test_truths_always_inside(self):
        intervals = [SimpleNamespace(lower=0.0, upper=10.0)] * 3
        pairs = PairedOutcomes([1.0, 5.0, 9.0], [5.0, 5.0, 5.0], intervals)
        accuracy, _ = interval_metrics(pairs)
        assert accuracy == 1.0

    def test_median_width(self):
        intervals = [SimpleNamespace(lower=0.0, upper=w) for w in (10.0, 20.0, 30.0)]
        pairs = PairedOutcomes([1.0, 1.0, 1.0], [1.0, 1.0, 1.0], intervals)
        _, width = interval_metrics(pairs)
        assert width == 20.0

    def test_degenerate_interval_counts_inside(self):
        intervals = [SimpleNamespace(lower=5.0, upper=5.0)]
        pairs = PairedOutcomes([5.0], [5.0], intervals)
        accuracy, width = interval_metrics(pairs)
        assert accuracy == 1.0
        assert width == 0.0

    def test_closed_bounds(self):
        intervals = [SimpleNamespace(lower=2.0, upper=4.0)] * 2
        pairs = PairedOutcomes([2.0, 4.0], [3.0, 3.0], intervals)
        assert interval_metrics(pairs)[0] == 1.0

    def test_missing_intervals_rejected(self):
        with pytest.raises(StructuralError, match="no intervals"):
            interval_metrics(PairedOutcomes([1.0], [1.0]))


class TestCalibrationSweep:
    def test_level_is_one_minus_significance(self):
        checkpoint = gamma_checkpoint()
        gen = np.random.default_rng(1)
        rows = calibration_sweep(checkpoint, random_trials(gen, 6),
                                 gen.uniform(0, 200, size=6))
        assert [row.significance for row in rows] == list(DEFAULT_SIGNIFICANCES)
        for row in rows:
            assert row.level == 1.0 - row.significance

    def test_accuracy_and_width_monotone_in_level(self):
        checkpoint = gamma_checkpoint()
        gen = np.random.default_rng(2)
        rows = calibration_sweep(checkpoint, random_trials(gen, 24),
                                 gen.uniform(0, 150, size=24))
        by_level = sorted(rows, key=lambda row: row.level)
        accuracies = [row.accuracy for row in by_level]
        widths = [row.median_width for row in by_level]
        assert accuracies == sorted(accuracies)
        assert widths == sorted(widths)

    def test_truth_count_must_match(self):
        checkpoint = gamma_checkpoint()
        gen = np.random.default_rng(3)
        with pytest.raises(StructuralError, match="2 truths vs 3 trials"):
            calibration_sweep(checkpoint, random_trials(gen, 3), [1.0, 2.0])

    def test_empty_rejected(self):
        with pytest.raises(StructuralError):
            calibration_sweep(gamma_checkpoint(), [], [])

    def test_csv_shape(self):
        checkpoint = gamma_checkpoint()
        gen = np.random.default_rng(4)
        rows = calibration_sweep(checkpoint, random_trials(gen, 4),
                                 gen.uniform(0, 100, size=4),
                                 significances=(0.2, 0.1))
        text = calibration_csv(rows)
        lines = text.splitlines()
        assert lines[0] == CALIBRATION_HEADER
        assert len(lines) == 3
        assert lines[1].startswith("0.2,0.8,")
        assert text.endswith("\n")


class TestMetricsReport:
    def test_plain_report_keys(self):
        pairs = PairedOutcomes([10.0, 20.0, 30.0], [12.0, 18.0, 33.0])
        report = metrics_report(pairs)
        assert set(report) == {"mae", "r2", "medae", "coverage_6mo"}
        assert report["mae"] == pytest.approx(7.0 / 3.0)

    def test_interval_block_when_present(self):
        intervals = [SimpleNamespace(lower=0.0, upper=40.0, level=0.9)] * 3
        pairs = PairedOutcomes([10.0, 20.0, 30.0], [12.0, 18.0, 33.0], intervals)
        report = metrics_report(pairs)
        assert set(report["interval"]) == {"level", "accuracy", "median_width"}
        assert report["interval"]["level"] == 0.9
        assert report["interval"]["accuracy"] == 1.0
