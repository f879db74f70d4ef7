"""Tests for accuracy, entropy, calibration error, and record persistence.

The brute-force calibration oracle below re-implements the binned error
from its definition with explicit loops; the library implementation must
agree with it to 1e-12 on arbitrary record sets.
"""

import math

import numpy as np
import pytest

from cqkd import calibration_metrics as cm
from cqkd import prob_math as pm
from cqkd.exceptions import RecordParseError


def ece_brute_force(records, num_bins):
    """Straight-line reimplementation of the binned calibration error."""
    n = len(records)
    total = 0.0
    for b in range(1, num_bins + 1):
        lower = (b - 1) / num_bins
        upper = b / num_bins
        members = []
        for r in records:
            c = r.confidence
            if (b == 1 and c <= upper) or (lower < c <= upper):
                members.append(r)
        if not members:
            continue
        m = len(members)
        acc = sum(1.0 for r in members if r.predicted == r.actual) / m
        conf = sum(r.confidence for r in members) / m
        total += (m / n) * abs(acc - conf)
    return total


def random_records(rng, n, k=6):
    records = []
    for _ in range(n):
        probs = rng.dirichlet(np.ones(k) * rng.uniform(0.2, 3.0))
        records.append(cm.record_from_probs(probs, int(rng.integers(0, k))))
    return records


def confidence_only_records(rng, n):
    """Records with adversarial confidences: bin edges, 0, and 1 included."""
    records = []
    for _ in range(n):
        kind = rng.integers(0, 4)
        if kind == 0:
            c = float(rng.uniform(0, 1))
        elif kind == 1:
            c = float(rng.integers(0, 16)) / 15.0
        elif kind == 2:
            c = float(rng.integers(0, 11)) / 10.0
        else:
            c = float(rng.choice([0.0, 1.0]))
        records.append(cm.PredictionRecord(
            predicted=0, confidence=c, actual=int(rng.integers(0, 2))))
    return records


class TestPredictionRecord:
    def test_from_probs_sets_argmax_and_confidence(self):
        r = cm.record_from_probs([0.1, 0.6, 0.3], actual=2)
        assert r.predicted == 1
        assert r.confidence == 0.6
        assert r.actual == 2

    def test_tie_breaks_to_lowest_index(self):
        r = cm.record_from_probs([0.4, 0.4, 0.2], actual=0)
        assert r.predicted == 0

    def test_rejects_inconsistent_fields(self):
        with pytest.raises(ValueError):
            cm.PredictionRecord(predicted=0, confidence=1.5, actual=0)
        with pytest.raises(ValueError):
            cm.PredictionRecord(predicted=1, confidence=0.5,
                                actual=0, probs=np.array([0.5, 0.3, 0.2]))
        with pytest.raises(ValueError):
            cm.PredictionRecord(predicted=0, confidence=0.4,
                                actual=0, probs=np.array([0.5, 0.3, 0.2]))


class TestAccuracy:
    def test_all_correct(self):
        records = [cm.PredictionRecord(1, 0.9, 1)] * 4
        assert cm.accuracy(records) == 1.0

    def test_none_correct(self):
        records = [cm.PredictionRecord(1, 0.9, 0)] * 4
        assert cm.accuracy(records) == 0.0

    def test_three_of_four(self):
        records = [cm.PredictionRecord(1, 0.9, 1)] * 3 + [cm.PredictionRecord(1, 0.9, 0)]
        assert cm.accuracy(records) == 0.75

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            cm.accuracy([])


class TestMeanEntropy:
    def test_one_hot_records(self):
        records = [cm.record_from_probs([1.0, 0.0, 0.0], 0)] * 3
        assert cm.mean_entropy(records) == 0.0

    def test_uniform_records(self):
        records = [cm.record_from_probs([0.25] * 4, 1)] * 5
        assert cm.mean_entropy(records) == pytest.approx(math.log(4), abs=1e-12)

    def test_mixture_of_two_known_distributions(self):
        a, b = [0.5, 0.5, 0.0], [0.25, 0.25, 0.5]
        records = [cm.record_from_probs(a, 0), cm.record_from_probs(b, 2)]
        expected = 0.5 * (pm.entropy(a) + pm.entropy(b))
        assert cm.mean_entropy(records) == pytest.approx(expected, abs=1e-14)

    def test_rejects_missing_probs(self):
        with pytest.raises(ValueError):
            cm.mean_entropy([cm.PredictionRecord(0, 0.5, 0)])


class TestComputeBins:
    def test_single_bin_aggregates_everything(self):
        rng = np.random.default_rng(0)
        records = random_records(rng, 40)
        bins = cm.compute_bins(records, 1)
        assert len(bins) == 1
        assert bins[0].count == 40
        assert bins[0].avg_accuracy == pytest.approx(cm.accuracy(records))
        assert bins[0].avg_confidence == pytest.approx(
            np.mean([r.confidence for r in records]))

    def test_boundary_conventions(self):
        def bin_of(c):
            record = cm.PredictionRecord(0, c, 0)
            bins = cm.compute_bins([record], 10)
            return next(b.index for b in bins if b.count == 1)

        assert bin_of(1.0) == 10
        assert bin_of(0.0) == 1
        assert bin_of(0.65) == 7
        assert bin_of(0.6) == 6
        assert bin_of(0.05) == 1

    def test_partition_property(self):
        rng = np.random.default_rng(1)
        for num_bins in (1, 5, 10, 15):
            records = confidence_only_records(rng, 137)
            bins = cm.compute_bins(records, num_bins)
            assert sum(b.count for b in bins) == len(records)

    def test_empty_bins_report_zero(self):
        records = [cm.PredictionRecord(0, 0.95, 0)]
        bins = cm.compute_bins(records, 10)
        for b in bins[:-1]:
            assert b.count == 0
            assert b.avg_accuracy == 0.0
            assert b.avg_confidence == 0.0

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            cm.compute_bins([], 10)
        with pytest.raises(ValueError):
            cm.compute_bins([cm.PredictionRecord(0, 0.5, 0)], 0)


class TestEce:
    def test_full_confidence_half_correct_is_exactly_half(self):
        records = [cm.PredictionRecord(0, 1.0, 0 if i % 2 == 0 else 1)
                   for i in range(400)]
        assert cm.ece(records, 10) == 0.5

    def test_perfectly_calibrated_bin_is_zero(self):
        # Confidence 0.75 with exactly 75% correct in one bin.
        records = ([cm.PredictionRecord(0, 0.75, 0)] * 3
                   + [cm.PredictionRecord(0, 0.75, 1)])
        assert cm.ece(records, 10) == 0.0

    def test_two_occupied_bins_hand_case(self):
        records = ([cm.PredictionRecord(0, 0.95, 0)] * 2        # acc 1, conf 0.95
                   + [cm.PredictionRecord(0, 0.55, 1)] * 2)     # acc 0, conf 0.55
        expected = 0.5 * abs(1.0 - 0.95) + 0.5 * abs(0.0 - 0.55)
        assert cm.ece(records, 10) == pytest.approx(expected, abs=1e-15)
        assert cm.ece(records, 10) == pytest.approx(ece_brute_force(records, 10), abs=1e-15)

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(23)
        for trial in range(200):
            n = int(rng.integers(1, 200))
            records = (random_records(rng, n) if trial % 2 == 0
                       else confidence_only_records(rng, n))
            for num_bins in (1, 5, 10, 15):
                fast = cm.ece(records, num_bins)
                slow = ece_brute_force(records, num_bins)
                assert abs(fast - slow) <= 1e-12

    def test_bounds(self):
        rng = np.random.default_rng(29)
        records = random_records(rng, 100)
        for num_bins in (1, 5, 10):
            value = cm.ece(records, num_bins)
            bins = cm.compute_bins(records, num_bins)
            assert 0.0 <= value <= 1.0
            assert value <= max(abs(b.avg_accuracy - b.avg_confidence) for b in bins) + 1e-15

    def test_refinement_consistency(self):
        rng = np.random.default_rng(31)
        records = random_records(rng, 150)
        for num_bins in (1, 5, 10, 15):
            bins = cm.compute_bins(records, num_bins)
            assert cm.ece_from_bins(bins, len(records)) == cm.ece(records, num_bins)


class TestReport:
    def test_perfect_predictions(self):
        records = [cm.record_from_probs(np.eye(4)[i % 4], i % 4) for i in range(20)]
        report = cm.make_report(records, 10)
        assert report.accuracy == 1.0
        assert report.mean_entropy == 0.0
        assert report.ece == 0.0
        assert report.n == 20

    def test_bin_report_file(self, tmp_path):
        rng = np.random.default_rng(2)
        report = cm.make_report(random_records(rng, 30), 5)
        path = tmp_path / "bins.txt"
        cm.write_bin_report(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "n 30"
        assert lines[5] == "bin lower upper count avg_accuracy avg_confidence"
        assert len(lines) == 6 + 5


class TestRecordsIO:
    def test_round_trip_preserves_everything(self, tmp_path):
        rng = np.random.default_rng(3)
        records = random_records(rng, 25)
        path = tmp_path / "records.csv"
        cm.write_records(records, path)
        loaded = cm.read_records(path)
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert a.predicted == b.predicted
            assert a.actual == b.actual
            assert a.confidence == b.confidence
            np.testing.assert_array_equal(a.probs, b.probs)

    def test_round_trip_preserves_calibration_error(self, tmp_path):
        rng = np.random.default_rng(4)
        records = random_records(rng, 200)
        path = tmp_path / "records.csv"
        cm.write_records(records, path)
        loaded = cm.read_records(path)
        for num_bins in (1, 5, 10, 15):
            assert abs(cm.ece(loaded, num_bins) - cm.ece(records, num_bins)) <= 1e-12

    def test_header_is_first_line(self, tmp_path):
        records = [cm.record_from_probs([0.8, 0.2], 0)]
        path = tmp_path / "records.csv"
        cm.write_records(records, path)
        assert path.read_text().splitlines()[0] == "sample_id,actual,predicted,confidence,p_0,p_1"

    def test_confidence_above_one_is_line_numbered_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "sample_id,actual,predicted,confidence\n"
            "0,1,1,0.4\n"
            "1,0,0,1.7\n")
        with pytest.raises(RecordParseError) as err:
            cm.read_records(path)
        assert err.value.line_number == 3
        assert "confidence" in str(err.value)

    def test_wrong_field_count_is_line_numbered_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "sample_id,actual,predicted,confidence\n"
            "0,1,1\n")
        with pytest.raises(RecordParseError) as err:
            cm.read_records(path)
        assert err.value.line_number == 2

    def test_non_numeric_field_is_line_numbered_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "sample_id,actual,predicted,confidence\n"
            "0,1,one,0.5\n")
        with pytest.raises(RecordParseError) as err:
            cm.read_records(path)
        assert err.value.line_number == 2

    def test_unexpected_header_is_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,actual,predicted,confidence\n0,1,1,0.4\n")
        with pytest.raises(RecordParseError) as err:
            cm.read_records(path)
        assert err.value.line_number == 1

    def test_inconsistent_probs_are_line_numbered_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "sample_id,actual,predicted,confidence,p_0,p_1\n"
            "0,0,0,0.4,0.6,0.4\n")
        with pytest.raises(RecordParseError) as err:
            cm.read_records(path)
        assert err.value.line_number == 2
