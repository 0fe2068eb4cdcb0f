import numpy as np
import pytest

from ppac.metrics import (MetricReport, boundary_band, eval_flow,
                          eval_segmentation)


def test_perfect_flow_is_zero_error():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(2, 2, 8, 10))
    rep = eval_flow(gt.copy(), gt)
    assert rep.aee == 0.0
    assert rep.outlier_rate_3px == 0.0
    assert len(rep.per_image) == 2
    assert rep.per_image[0]["aee"] == 0.0


def test_aee_hand_value():
    gt = np.zeros((1, 2, 2, 2))
    pred = np.zeros((1, 2, 2, 2))
    pred[0, 0, 0, 0] = 3.0
    pred[0, 1, 0, 0] = 4.0  # epe 5 at one of four pixels
    rep = eval_flow(pred, gt)
    np.testing.assert_allclose(rep.aee, 1.25, rtol=1e-12)


def test_outlier_requires_both_conditions():
    # epe 3.1 against gt magnitude 10: 3.1 > 3 and 3.1 > 0.5 -> outlier
    gt = np.zeros((1, 2, 1, 1))
    gt[0, 0] = 10.0
    pred = gt.copy()
    pred[0, 1] = 3.1
    assert eval_flow(pred, gt).outlier_rate_3px == 1.0
    # epe 4 against gt magnitude 100: 4 > 3 but 4 < 5 -> not an outlier
    gt[0, 0] = 100.0
    pred = gt.copy()
    pred[0, 1] = 4.0
    assert eval_flow(pred, gt).outlier_rate_3px == 0.0
    # epe 2.9 over zero-magnitude gt: relative test passes, absolute fails
    gt[0, 0] = 0.0
    pred = gt.copy()
    pred[0, 1] = 2.9
    assert eval_flow(pred, gt).outlier_rate_3px == 0.0


def test_translation_equivariance():
    rng = np.random.default_rng(1)
    gt = rng.normal(size=(1, 2, 6, 7))
    pred = gt + rng.normal(scale=0.5, size=gt.shape)
    shift = np.array([10.0, -4.0])[None, :, None, None]
    a = eval_flow(pred, gt)
    b = eval_flow(pred + shift, gt + shift)
    np.testing.assert_allclose(a.aee, b.aee, rtol=1e-12)


def test_valid_mask_restricts_mean():
    gt = np.zeros((1, 2, 2, 2))
    pred = np.zeros((1, 2, 2, 2))
    pred[0, 0, 0, 0] = 8.0
    mask = np.ones((1, 2, 2), dtype=bool)
    mask[0, 0, 0] = False  # hide the only error pixel
    assert eval_flow(pred, gt, valid_mask=mask).aee == 0.0
    with pytest.raises(ValueError):
        eval_flow(pred, gt, valid_mask=np.zeros((1, 2, 2), dtype=bool))


def test_flow_shape_validation():
    with pytest.raises(ValueError):
        eval_flow(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 4, 5)))
    with pytest.raises(ValueError):
        eval_flow(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 4)))


def test_boundary_band_and_boundary_aee():
    labels = np.zeros((10, 10), dtype=np.int32)
    labels[:, 5:] = 1  # vertical boundary between columns 4 and 5
    band = boundary_band(labels, radius=2.0)
    assert band[0, 4] and band[0, 6]
    assert not band[0, 0]
    # uniform labels: no boundary, empty band
    assert not boundary_band(np.zeros((5, 5))).any()

    gt = np.zeros((1, 2, 10, 10))
    pred = np.zeros((1, 2, 10, 10))
    pred[0, 0, :, :2] = 6.0  # error far from the boundary only
    rep = eval_flow(pred, gt, labels=labels[None], boundary_radius=2.0)
    assert rep.boundary_aee == 0.0
    assert rep.aee > 0.0
    assert rep.per_image[0]["boundary_aee"] == 0.0


def test_miou_hand_case():
    # 2x2, classes {0, 1}: gt [[0,0],[1,1]], pred [[0,1],[1,1]]
    # class 0: inter 1, union 2; class 1: inter 2, union 3 -> mean 7/12
    gt = np.array([[[0, 0], [1, 1]]])
    logits = np.zeros((1, 2, 2, 2))
    logits[0, 0, 0, 0] = 1.0
    logits[0, 1, 0, 1] = 1.0
    logits[0, 1, 1, 0] = 1.0
    logits[0, 1, 1, 1] = 1.0
    rep = eval_segmentation(logits, gt)
    np.testing.assert_allclose(rep.miou, 7.0 / 12.0, rtol=1e-12)


def test_miou_perfect_prediction():
    rng = np.random.default_rng(2)
    gt = rng.integers(0, 4, size=(2, 6, 6))
    logits = np.zeros((2, 5, 6, 6))
    for c in range(5):
        logits[:, c][gt == c] = 9.0
    rep = eval_segmentation(logits, gt)
    assert rep.miou == 1.0
    assert all(e["miou"] == 1.0 for e in rep.per_image)


def test_miou_ignores_absent_classes():
    # only classes 0 and 1 appear anywhere; class 2's slot must not dilute
    gt = np.array([[[0, 1]]])
    logits = np.zeros((1, 3, 1, 2))
    logits[0, 0, 0, 0] = 1.0
    logits[0, 1, 0, 1] = 1.0
    assert eval_segmentation(logits, gt).miou == 1.0
    # a class predicted but absent from gt contributes zero, not skipped
    logits = np.zeros((1, 3, 1, 2))
    logits[0, 0, 0, 0] = 1.0
    logits[0, 2, 0, 1] = 1.0
    rep = eval_segmentation(logits, gt)
    # class 0: 1/1; class 1: 0/1; class 2: 0/1
    np.testing.assert_allclose(rep.miou, 1.0 / 3.0, rtol=1e-12)


def test_miou_class_permutation_invariance():
    rng = np.random.default_rng(3)
    gt = rng.integers(0, 3, size=(1, 8, 8))
    logits = rng.normal(size=(1, 3, 8, 8))
    base = eval_segmentation(logits, gt).miou
    perm = np.array([2, 0, 1])
    gt_p = perm[gt]
    logits_p = logits[:, np.argsort(perm)]
    np.testing.assert_allclose(eval_segmentation(logits_p, gt_p).miou, base,
                               rtol=1e-12)


def test_ignore_label_handling():
    gt = np.array([[[0, 255], [255, 255]]])
    logits = np.zeros((1, 2, 2, 2))
    logits[0, 1] = 1.0  # wrong everywhere, but only one pixel counts
    logits[0, 0, 0, 0] = 2.0
    assert eval_segmentation(logits, gt).miou == 1.0
    with pytest.raises(ValueError, match="ignored"):
        eval_segmentation(logits, np.full((1, 2, 2), 255))
    with pytest.raises(ValueError, match="range"):
        eval_segmentation(logits, np.array([[[0, 7], [0, 0]]]))


def test_report_defaults():
    rep = MetricReport()
    assert rep.aee is None and rep.miou is None and rep.per_image == []
