"""Majority vote, agreement categories, Krippendorff's alpha."""

import itertools
import math

import numpy as np
import pytest

from repscore.labels import (
    AgreementResult,
    RatingRecord,
    aggregate,
    build_labeled_dataset,
    krippendorff_alpha,
)

from oracles import expected_category_shares, krippendorff_alpha_hand


def records_from_matrix(matrix):
    """rows = units, columns = raters; None marks a missing rating."""
    records = []
    for u, row in enumerate(matrix):
        for r, score in enumerate(row):
            if score is not None:
                records.append(RatingRecord(f"u{u}", f"R{r}", score))
    return records


class TestAggregate:
    def test_unanimous(self):
        assert aggregate((2, 2, 2)) == AgreementResult(2, "unambiguous")

    def test_majority_minor(self):
        assert aggregate((2, 2, 3)) == AgreementResult(2, "majority_minor")

    def test_majority_major(self):
        assert aggregate((1, 3, 3)) == AgreementResult(3, "majority_major")

    def test_no_majority_excluded(self):
        result = aggregate((1, 2, 3))
        assert result.final_label is None
        assert result.category == "no_majority"

    def test_permutation_invariance(self):
        for scores in itertools.product((1, 2, 3), repeat=3):
            results = {aggregate(p) for p in itertools.permutations(scores)}
            assert len(results) == 1

    def test_invalid_scores_rejected(self):
        with pytest.raises(ValueError):
            aggregate((0, 2, 2))
        with pytest.raises(ValueError):
            aggregate((1, 2))


class TestKrippendorffAlpha:
    def test_perfect_agreement(self):
        matrix = [[1, 1, 1], [3, 3, 3], [2, 2, 2], [1, 1, 1]]
        assert krippendorff_alpha(records_from_matrix(matrix)) == 1.0

    def test_all_identical_warns_and_returns_one(self):
        matrix = [[2, 2, 2], [2, 2, 2]]
        with pytest.warns(UserWarning):
            assert krippendorff_alpha(records_from_matrix(matrix)) == 1.0

    def test_matches_hand_oracle_on_fixed_matrix(self):
        matrix = [
            [1, 1, 2],
            [2, 2, 2],
            [3, 3, 2],
            [3, 3, 3],
            [2, 1, 1],
            [1, 2, 3],
        ]
        units = {f"u{i}": row for i, row in enumerate(matrix)}
        for metric in ("ordinal", "nominal"):
            lib = krippendorff_alpha(records_from_matrix(matrix), metric=metric)
            hand = krippendorff_alpha_hand(units, metric=metric)
            assert abs(lib - hand) < 1e-10

    def test_matches_hand_oracle_with_missing_ratings(self):
        matrix = [
            [1, 1, None],
            [2, None, 2],
            [3, 2, 2],
            [None, None, 3],  # single rating: ignored by both paths
            [1, 3, 3],
            [2, 2, 1],
        ]
        units = {
            f"u{i}": [v for v in row if v is not None]
            for i, row in enumerate(matrix)
        }
        lib = krippendorff_alpha(records_from_matrix(matrix))
        hand = krippendorff_alpha_hand(units)
        assert abs(lib - hand) < 1e-10

    def test_random_ratings_give_alpha_near_zero(self):
        rng = np.random.default_rng(123)
        matrix = rng.integers(1, 4, size=(10_000, 3)).tolist()
        alpha = krippendorff_alpha(records_from_matrix(matrix))
        assert abs(alpha) < 0.05

    def test_invariant_under_rater_and_unit_permutation(self):
        rng = np.random.default_rng(5)
        matrix = rng.integers(1, 4, size=(30, 3)).tolist()
        base = krippendorff_alpha(records_from_matrix(matrix))
        shuffled_units = list(matrix)
        rng.shuffle(shuffled_units)
        permuted = [[row[2], row[0], row[1]] for row in shuffled_units]
        assert abs(base - krippendorff_alpha(records_from_matrix(permuted))) < 1e-12

    def test_lone_dissent_lowers_alpha(self):
        matrix = [[1, 1, 1], [2, 2, 2], [3, 3, 3], [1, 1, 1]]
        base = krippendorff_alpha(records_from_matrix(matrix))
        with_dissent = matrix + [[2, 2, 3]]
        lower = krippendorff_alpha(records_from_matrix(with_dissent))
        assert lower < base

    def test_ordinal_at_least_nominal_for_adjacent_disagreements(self):
        # disagreements are adjacent-category only
        matrix = [
            [1, 1, 2], [2, 2, 3], [2, 2, 1], [3, 3, 2],
            [1, 1, 1], [3, 3, 3], [2, 2, 2], [2, 3, 3],
        ]
        records = records_from_matrix(matrix)
        ordinal = krippendorff_alpha(records, metric="ordinal")
        nominal = krippendorff_alpha(records, metric="nominal")
        assert ordinal >= nominal
        assert ordinal != pytest.approx(nominal, abs=1e-6)

    def test_too_few_units_rejected(self):
        with pytest.raises(ValueError):
            krippendorff_alpha(records_from_matrix([[1, 2, 3]]))

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError):
            krippendorff_alpha(records_from_matrix([[1, 1, 1], [2, 2, 2]]), metric="interval")


class _FakeRep:
    def __init__(self, rep_id, exercise="DS", side="none"):
        self.rep_id = rep_id
        self.exercise = exercise
        self.side = side
        self.final_label = None


class _FakeDataset:
    def __init__(self, reps, ratings):
        self.repetitions = reps
        self.ratings = ratings


class TestBuildLabeledDataset:
    def test_all_unanimous_zero_exclusions(self):
        reps = [_FakeRep(f"u{i}") for i in range(5)]
        records = records_from_matrix([[2, 2, 2]] * 5)
        _, summary = build_labeled_dataset(_FakeDataset(reps, records))
        assert summary["excluded"] == []
        assert summary["retained"] == 5
        assert summary["categories"]["unambiguous"] == 5

    def test_one_no_majority_among_ten(self):
        reps = [_FakeRep(f"u{i}") for i in range(10)]
        matrix = [[2, 2, 2]] * 9 + [[1, 2, 3]]
        _, summary = build_labeled_dataset(_FakeDataset(reps, records_from_matrix(matrix)))
        assert summary["retained"] == 9
        assert summary["excluded"] == ["u9"]
        assert reps[9].final_label is None

    def test_missing_ratings_excluded_with_warning(self):
        reps = [_FakeRep("u0"), _FakeRep("u1"), _FakeRep("u2")]
        records = records_from_matrix([[2, 2, 2], [3, 3, None]])
        with pytest.warns(UserWarning):
            _, summary = build_labeled_dataset(_FakeDataset(reps, records))
        assert summary["retained"] == 1
        assert set(summary["excluded"]) == {"u1", "u2"}

    def test_histograms_grouped_by_exercise_and_side(self):
        reps = [
            _FakeRep("u0", exercise="HS", side="left"),
            _FakeRep("u1", exercise="HS", side="left"),
            _FakeRep("u2", exercise="DS", side="none"),
        ]
        matrix = [[2, 2, 2], [3, 3, 3], [1, 1, 1]]
        _, summary = build_labeled_dataset(_FakeDataset(reps, records_from_matrix(matrix)))
        assert summary["histograms"]["HS-left"] == {2: 1, 3: 1}
        assert summary["histograms"]["DS"] == {1: 1}

    def test_exclusion_fraction_matches_closed_form(self):
        # simulated raters with known confusion rates; P(no majority) is exact
        from repscore.synthgen import simulate_raters

        rng = np.random.default_rng(77)
        n = 10_000
        adjacent, two_step = 0.2, 0.05
        true_labels = {f"u{i:05d}": int(rng.integers(1, 4)) for i in range(n)}
        records = simulate_raters(true_labels, adjacent, two_step, seed=11)
        reps = [_FakeRep(rep_id) for rep_id in true_labels]
        _, summary = build_labeled_dataset(_FakeDataset(reps, records))

        label_counts = {}
        for y in true_labels.values():
            label_counts[y] = label_counts.get(y, 0) + 1
        shares = expected_category_shares(label_counts, adjacent, two_step)
        p = shares["no_majority"]
        observed = len(summary["excluded"])
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(observed - n * p) < 3 * sigma
