"""Evaluation metrics for dense flow and segmentation estimates.

Flow: average endpoint error over valid pixels, the 3-pixel outlier rate
(outlier iff epe > 3 px and epe > 5% of the true magnitude, the joint
rule used by automotive benchmarks), and optionally the AEE restricted
to a band around object boundaries.  Segmentation: mean intersection
over union across the classes present in ground truth or prediction.
All functions pool over the full batch and also report per-image values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .tensor import Tensor

OUTLIER_ABS_PX = 3.0
OUTLIER_REL = 0.05
DEFAULT_BOUNDARY_RADIUS = 10.0
DEFAULT_IGNORE_LABEL = 255


@dataclass
class MetricReport:
    """Pooled metrics plus a per-image breakdown; unused fields stay None."""

    aee: float | None = None
    outlier_rate_3px: float | None = None
    boundary_aee: float | None = None
    miou: float | None = None
    per_image: list[dict] = field(default_factory=list)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def boundary_band(labels: np.ndarray, radius: float = DEFAULT_BOUNDARY_RADIUS) -> np.ndarray:
    """Boolean mask of pixels within ``radius`` of a label boundary."""
    labels = np.asarray(labels)
    boundary = np.zeros(labels.shape, dtype=bool)
    boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
    boundary[1:, :] |= labels[:-1, :] != labels[1:, :]
    boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    boundary[:, 1:] |= labels[:, :-1] != labels[:, 1:]
    if not boundary.any():
        return np.zeros(labels.shape, dtype=bool)
    return distance_transform_edt(~boundary) <= radius


def eval_flow(pred, gt, valid_mask=None, labels=None,
              boundary_radius: float = DEFAULT_BOUNDARY_RADIUS) -> MetricReport:
    """AEE and outlier statistics of a flow estimate.

    ``pred`` and ``gt`` are (n, 2, h, w); ``valid_mask`` (n, h, w) boolean
    selects pixels entering the means (None means all).  ``labels``
    (n, h, w) integer object maps enable the boundary-band AEE.
    """
    pred = _as_array(pred).astype(np.float64)
    gt = _as_array(gt).astype(np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim != 4 or pred.shape[1] != 2:
        raise ValueError("flow arrays must be (n, 2, h, w)")
    n, _, h, w = pred.shape
    if valid_mask is None:
        valid = np.ones((n, h, w), dtype=bool)
    else:
        valid = _as_array(valid_mask).astype(bool).reshape(n, h, w)
    if not valid.any():
        raise ValueError("empty valid mask")

    diff = pred - gt
    epe = np.sqrt((diff * diff).sum(axis=1))
    mag = np.sqrt((gt * gt).sum(axis=1))
    outlier = (epe > OUTLIER_ABS_PX) & (epe > OUTLIER_REL * mag)

    band = None
    if labels is not None:
        lab = _as_array(labels).reshape(n, h, w)
        band = np.stack([boundary_band(lab[i], boundary_radius) for i in range(n)])
        band &= valid

    per_image = []
    for i in range(n):
        v = valid[i]
        if not v.any():
            per_image.append({"aee": None, "outlier_rate_3px": None,
                              "boundary_aee": None})
            continue
        entry = {
            "aee": float(epe[i][v].mean()),
            "outlier_rate_3px": float(outlier[i][v].mean()),
            "boundary_aee": None,
        }
        if band is not None and band[i].any():
            entry["boundary_aee"] = float(epe[i][band[i]].mean())
        per_image.append(entry)

    report = MetricReport(
        aee=float(epe[valid].mean()),
        outlier_rate_3px=float(outlier[valid].mean()),
        per_image=per_image,
    )
    if band is not None and band.any():
        report.boundary_aee = float(epe[band].mean())
    return report


def eval_segmentation(pred_logits, gt_labels,
                      ignore_label: int = DEFAULT_IGNORE_LABEL,
                      labels=None,
                      boundary_radius: float = DEFAULT_BOUNDARY_RADIUS) -> MetricReport:
    """Mean IoU of argmax predictions against integer ground-truth labels.

    Classes absent from both ground truth and prediction are excluded from
    the mean; a class present on only one side contributes IoU 0.  Pixels
    whose ground truth equals ``ignore_label`` never count.
    """
    logits = _as_array(pred_logits)
    gt = _as_array(gt_labels)
    if logits.ndim != 4:
        raise ValueError("pred_logits must be (n, classes, h, w)")
    n, n_classes, h, w = logits.shape
    gt = gt.reshape(n, h, w).astype(np.int64)
    pred = np.argmax(logits, axis=1)

    keep = gt != ignore_label
    if not keep.any():
        raise ValueError("all pixels ignored")
    bad = keep & ((gt < 0) | (gt >= n_classes))
    if bad.any():
        raise ValueError("ground-truth label out of class range")

    def miou_of(p, g, k):
        p = p[k]
        g = g[k]
        ious = []
        for c in range(n_classes):
            in_p = p == c
            in_g = g == c
            union = int(np.count_nonzero(in_p | in_g))
            if union == 0:
                continue
            inter = int(np.count_nonzero(in_p & in_g))
            ious.append(inter / union)
        return float(np.mean(ious)) if ious else None

    per_image = []
    for i in range(n):
        entry = {"miou": miou_of(pred[i], gt[i], keep[i]), "boundary_miou": None}
        if labels is not None:
            band = boundary_band(_as_array(labels).reshape(n, h, w)[i],
                                 boundary_radius)
            band &= keep[i]
            if band.any():
                entry["boundary_miou"] = miou_of(pred[i], gt[i], band)
        per_image.append(entry)

    return MetricReport(miou=miou_of(pred, gt, keep), per_image=per_image)
