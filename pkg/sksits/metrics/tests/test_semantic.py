import numpy as np
import pytest

from ...core import nomenclature
from ...exceptions import EmptyEvaluation, ShapeError
from .._semantic import ConfusionMatrix, scores_from_matrix, semantic_metrics


def test_confusion_matrix_values():
    cm = ConfusionMatrix(np.array([[3, 1], [2, 4]]))
    assert cm.total == 10
    assert cm.overall_accuracy == pytest.approx(0.7)
    np.testing.assert_allclose(cm.iou.values, [0.5, 4 / 7])
    assert cm.miou == pytest.approx((0.5 + 4 / 7) / 2)


def test_from_predictions_counts():
    truth = np.array([[0, 1, 1], [2, 2, 5]])
    pred = np.array([[0, 1, 2], [2, 2, 3]])
    cm = ConfusionMatrix.from_predictions(pred, truth, n_labels=6, void_label=5)
    assert cm.total == 5
    assert cm.counts[1, 2] == 1 and cm.counts[2, 2] == 2
    assert cm.counts[5].sum() == 0
    assert cm.class_names == list(nomenclature(4))


def test_perfect_prediction():
    rng = np.random.RandomState(0)
    truth = rng.randint(0, 20, size=(32, 32))
    scores = semantic_metrics(truth, truth)
    assert scores.oa == 1.0
    assert scores.miou == 1.0
    assert "Void label" not in scores.iou.index


def test_absent_classes_are_skipped():
    truth = np.array([0, 0, 1, 1])
    pred = np.array([0, 3, 1, 1])
    scores = semantic_metrics(pred, truth, n_labels=6, void_label=5, class_names="abcdef")
    # class 3 is only predicted, it counts with IoU 0
    assert list(scores.iou.index) == ["a", "b", "d"]
    np.testing.assert_allclose(scores.iou.values, [0.5, 1.0, 0.0])


def test_void_pixels_are_skipped():
    truth = np.array([1, 1, 19, 19])
    pred = np.array([1, 1, 2, 3])
    scores = semantic_metrics(pred, truth)
    assert scores.oa == 1.0
    assert scores.matrix.total == 2


def test_all_void():
    truth = np.full((4, 4), 19)
    with pytest.raises(EmptyEvaluation):
        semantic_metrics(np.zeros((4, 4), dtype=int), truth)
    with pytest.raises(EmptyEvaluation):
        semantic_metrics([], [])


def test_class_permutation():
    rng = np.random.RandomState(3)
    truth = rng.randint(0, 6, size=500)
    pred = np.where(rng.uniform(size=500) < 0.7, truth, rng.randint(0, 6, size=500))
    perm = np.append(rng.permutation(5), 5)
    ref = semantic_metrics(pred, truth, n_labels=6, void_label=5)
    permuted = semantic_metrics(perm[pred], perm[truth], n_labels=6, void_label=5)
    assert permuted.miou == pytest.approx(ref.miou)
    assert permuted.oa == pytest.approx(ref.oa)


def test_merge_matches_concatenation():
    rng = np.random.RandomState(1)
    preds = [rng.randint(0, 20, size=(8, 8)) for _ in range(3)]
    truths = [rng.randint(0, 20, size=(8, 8)) for _ in range(3)]
    merged = semantic_metrics(preds, truths)
    whole = semantic_metrics(np.concatenate(preds), np.concatenate(truths))
    assert merged.matrix == whole.matrix
    assert merged.miou == pytest.approx(whole.miou)
    assert scores_from_matrix(whole.matrix).oa == whole.oa


def test_invalid_inputs():
    with pytest.raises(ShapeError):
        ConfusionMatrix.from_predictions(np.zeros(3, dtype=int), np.zeros(4, dtype=int))
    with pytest.raises(ValueError):
        ConfusionMatrix.from_predictions(np.array([20]), np.array([0]))
    with pytest.raises(ShapeError):
        ConfusionMatrix(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        ConfusionMatrix(np.zeros((2, 2))) + ConfusionMatrix(np.zeros((3, 3)))


def test_to_dict():
    scores = semantic_metrics(np.array([1, 2]), np.array([1, 1]), n_labels=4, void_label=3, class_names="bxyv")
    assert scores.to_dict() == dict(OA=0.5, mIoU=0.25, IoU={"x": 0.5, "y": 0.0})
