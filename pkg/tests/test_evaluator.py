import numpy as np
import pytest

from core.clipstore import DomainTag
from core.errors import LabelAlignmentError, NoGroundTruthError
from core.evaluator import (
    EvalResult,
    GroundTruth,
    Prediction,
    accuracy_of,
    average_precision,
    confusion_matrix,
    evaluate,
    ground_truths,
    mean_ap,
    predict_boxes,
    predict_labels,
)
from core.geometry import Box, iou
from core.model import ModelParams, feature_dim, init_params
from tests.factories import make_clip, make_dataset, make_sample

A = Box(0, 0, 10, 10)
B = Box(20, 20, 30, 30)
FAR = Box(50, 50, 60, 60)


def _brute_force_ap(preds, gts, class_id, threshold):
    """每个名次单独重算前 k 个预测的匹配，累加精度 × 召回增量"""
    gt = [g for g in gts if g.class_id == class_id]
    ranked = sorted((p for p in preds if p.class_id == class_id), key=lambda p: -p.score)

    def true_positives(k):
        used = set()
        hits = 0
        for p in ranked[:k]:
            best, best_iou = None, -1.0
            for j, g in enumerate(gt):
                if j in used or g.sample_id != p.sample_id:
                    continue
                if iou(p.box, g.box) > best_iou:
                    best, best_iou = j, iou(p.box, g.box)
            if best is not None and best_iou >= threshold:
                used.add(best)
                hits += 1
        return hits

    ap = 0.0
    for k in range(1, len(ranked) + 1):
        gained = true_positives(k) - true_positives(k - 1)
        ap += gained * (true_positives(k) / k) / len(gt)
    return ap


class TestAveragePrecision:
    def test_single_match(self):
        assert average_precision([Prediction("s", A, 0, 0.7)], [GroundTruth("s", A, 0)], 0) == 1.0

    def test_ranks_one_and_three(self):
        preds = [Prediction("s", A, 0, 0.9), Prediction("s", FAR, 0, 0.8), Prediction("s", B, 0, 0.7)]
        gts = [GroundTruth("s", A, 0), GroundTruth("s", B, 0)]
        assert average_precision(preds, gts, 0) == pytest.approx((1 / 1 + 2 / 3) / 2)

    def test_below_threshold(self):
        preds = [Prediction("s", Box(5, 5, 15, 15), 0, 0.9)]
        assert average_precision(preds, [GroundTruth("s", A, 0)], 0) == 0.0

    def test_other_sample_does_not_match(self):
        assert average_precision([Prediction("t", A, 0, 0.9)], [GroundTruth("s", A, 0)], 0) == 0.0

    def test_duplicate_detection_is_false_positive(self):
        preds = [Prediction("s", A, 0, 0.9), Prediction("s", A, 0, 0.8)]
        gts = [GroundTruth("s", A, 0), GroundTruth("s", B, 0)]
        assert average_precision(preds, gts, 0) == pytest.approx(0.5)

    def test_ties_keep_input_order(self):
        gts = [GroundTruth("s", A, 0)]
        hit_first = [Prediction("s", A, 0, 0.5), Prediction("s", FAR, 0, 0.5)]
        hit_second = [Prediction("s", FAR, 0, 0.5), Prediction("s", A, 0, 0.5)]
        assert average_precision(hit_first, gts, 0) == 1.0
        assert average_precision(hit_second, gts, 0) == 0.5

    def test_no_ground_truth(self):
        with pytest.raises(NoGroundTruthError):
            average_precision([Prediction("s", A, 1, 0.9)], [GroundTruth("s", A, 0)], 1)

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            average_precision([], [GroundTruth("s", A, 0)], 0, iou_threshold=0.0)

    def test_score_out_of_range(self):
        with pytest.raises(ValueError):
            Prediction("s", A, 0, 1.5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(99)
        slots = [Box(x, y, x + 10, y + 10) for x in (0, 20, 40) for y in (0, 20)]
        for _ in range(200):
            gts = [
                GroundTruth(f"s{rng.integers(0, 2)}", slots[j], int(rng.integers(0, 2)))
                for j in rng.choice(len(slots), size=int(rng.integers(1, 5)), replace=False)
            ]
            scores = rng.permutation(10)[: int(rng.integers(1, 11))] / 10 + 0.05
            preds = []
            for score in scores:
                box = slots[int(rng.integers(0, len(slots)))]
                if rng.random() < 0.3:
                    box = box.translate(4, 0)
                preds.append(Prediction(f"s{rng.integers(0, 2)}", box, int(rng.integers(0, 2)), float(score)))
            for k in {g.class_id for g in gts}:
                assert average_precision(preds, gts, k) == pytest.approx(_brute_force_ap(preds, gts, k, 0.5), abs=1e-12)

    def test_lowest_false_positive_never_raises_ap(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            gts = [GroundTruth("s", A, 0), GroundTruth("s", B, 0)]
            preds = [
                Prediction("s", [A, B, FAR][int(rng.integers(0, 3))], 0, float(rng.uniform(0.1, 1.0)))
                for _ in range(int(rng.integers(1, 6)))
            ]
            before = average_precision(preds, gts, 0)
            after = average_precision(preds + [Prediction("s", FAR, 0, 0.0)], gts, 0)
            assert after <= before

    def test_order_independent_for_distinct_scores(self):
        preds = [Prediction("s", A, 0, 0.3), Prediction("s", FAR, 0, 0.9), Prediction("s", B, 0, 0.6)]
        gts = [GroundTruth("s", A, 0), GroundTruth("s", B, 0)]
        assert average_precision(preds, gts, 0) == average_precision(preds[::-1], gts, 0)


class TestMeanAp:
    def test_perfect_predictor(self):
        gts = [GroundTruth("s", A, 0), GroundTruth("s", B, 1), GroundTruth("t", A, 2)]
        preds = [Prediction(g.sample_id, g.box, k, 1.0 if k == g.class_id else 0.0) for g in gts for k in range(3)]
        assert mean_ap(preds, gts, 3).map == 1.0

    def test_mean_of_listed_classes(self):
        gts = [GroundTruth("s", A, 0), GroundTruth("s", B, 0), GroundTruth("s", A, 1)]
        preds = [Prediction("s", A, 0, 0.9), Prediction("s", A, 1, 0.8)]
        result = mean_ap(preds, gts, 3)
        assert result.per_class_ap == {0: 0.5, 1: 1.0}
        assert result.map == 0.75
        assert result.support == [2, 1, 0]

    def test_no_ground_truth_at_all(self):
        assert mean_ap([], [], 3).map == 0.0

    def test_sample_id_relabeling(self):
        gts = [GroundTruth("s", A, 0), GroundTruth("t", B, 1)]
        preds = [Prediction("s", A, 0, 0.9), Prediction("t", B, 0, 0.4), Prediction("t", B, 1, 0.6)]
        rename = {"s": "x", "t": "y"}
        renamed = mean_ap(
            [Prediction(rename[p.sample_id], p.box, p.class_id, p.score) for p in preds],
            [GroundTruth(rename[g.sample_id], g.box, g.class_id) for g in gts],
            2,
        )
        assert renamed.map == mean_ap(preds, gts, 2).map

    def test_to_dict_uses_names(self):
        result = EvalResult({1: 0.5}, 0.5, [0, 2])
        assert result.to_dict(["walk", "run"]) == {"map": 0.5, "per_class_ap": {"run": 0.5}, "support": {"walk": 0, "run": 2}}


class TestConfusionMatrix:
    def test_perfect_is_diagonal(self):
        counts, normalized = confusion_matrix([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert np.array_equal(counts, np.diag([1, 2, 1]))
        assert np.array_equal(normalized, np.eye(3))

    def test_collapsed_to_class_zero(self):
        counts, _ = confusion_matrix([0, 0, 0, 0], [0, 1, 2, 2], 3)
        assert np.count_nonzero(counts[:, 1:]) == 0
        assert counts[:, 0].tolist() == [1, 1, 2]

    def test_trace_matches_accuracy(self, rng):
        truth = rng.integers(0, 4, size=50)
        pseudo = np.where(rng.random(50) < 0.6, truth, rng.integers(0, 4, size=50))
        counts, normalized = confusion_matrix(pseudo.tolist(), truth.tolist(), 4)
        assert accuracy_of(counts) == pytest.approx(float(np.mean(pseudo == truth)))
        for i in range(4):
            if counts[i].sum():
                assert normalized[i].sum() == pytest.approx(1.0)

    def test_empty(self):
        counts, normalized = confusion_matrix([], [], 2)
        assert counts.sum() == 0
        assert accuracy_of(counts) == 0.0
        assert np.all(normalized == 0)

    def test_length_mismatch(self):
        with pytest.raises(LabelAlignmentError):
            confusion_matrix([0, 1], [0], 2)


class TestModelEvaluation:
    @staticmethod
    def _dataset():
        samples = [
            make_sample([(0, 0, 10, 10), (16, 16, 30, 30)], [0, 1], clip=make_clip(seed=1), sample_id="a"),
            make_sample([(4, 4, 20, 20)], [2], clip=make_clip(seed=2), sample_id="b"),
            make_sample([], [], clip=make_clip(seed=3), sample_id="c"),
        ]
        return make_dataset(samples, num_classes=3, domain=DomainTag.TARGET)

    def test_one_prediction_per_box_and_class(self, rng):
        ds = self._dataset()
        params = init_params(feature_dim(2, 3), 4, 3, rng)
        preds = predict_boxes(params, ds, pool_grid=2)
        assert len(preds) == 3 * 3
        assert len(ground_truths(ds)) == 3
        for i in range(0, len(preds), 3):
            assert sum(p.score for p in preds[i:i + 3]) == pytest.approx(1.0)

    def test_predict_labels_aligned(self, rng):
        ds = self._dataset()
        predicted, truth = predict_labels(init_params(feature_dim(2, 3), 4, 3, rng), ds, pool_grid=2)
        assert len(predicted) == len(truth) == 3
        assert truth == [0, 1, 2]

    def test_bias_towards_true_class_scores_perfectly(self):
        ds = make_dataset(
            [make_sample([(0, 0, 10, 10)], [1], clip=make_clip(seed=4), sample_id="only")],
            num_classes=2,
            domain=DomainTag.TARGET,
        )
        D = feature_dim(2, 3)
        params = ModelParams(np.zeros((2, D)), np.zeros(2), np.zeros((2, 2)), np.array([0.0, 5.0]))
        result = evaluate(params, ds, pool_grid=2)
        assert result.per_class_ap == {1: 1.0}
        assert result.map == 1.0

    def test_parallel_matches_serial(self, rng):
        ds = self._dataset()
        params = init_params(feature_dim(2, 3), 4, 3, rng)
        serial = evaluate(params, ds, pool_grid=2, workers=1)
        parallel = evaluate(params, ds, pool_grid=2, workers=3)
        assert serial.per_class_ap == parallel.per_class_ap
