"""Loss functions, the training loop, and scene evaluation helpers.

Training is deterministic given the seed: per-epoch shuffling, per-sample
crop offsets, and initialization all derive from it.  The loop records one
log row per epoch and keeps the parameters of the best validation epoch
(earlier epoch wins ties), restoring them into the network at the end.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor
from .datagen import SyntheticScene
from .metrics import MetricReport, eval_flow, eval_segmentation
from .networks import NetInputs, RefinementNet, oracle_confidence
from .optim import LrSchedule, adam_step

EPE_TINY = 1e-12


class TrainingDiverged(RuntimeError):
    """Non-finite loss; carries the epoch where training blew up."""

    def __init__(self, epoch: int, message: str):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("nan")
    val_metric: str = "aee"
    final_params: dict = field(default_factory=dict)  # last-epoch values


def aee_loss(pred: Tensor, gt: Tensor, valid_mask=None):
    """Mean endpoint error over valid pixels and its gradient w.r.t. pred.

    Returns (loss, grad Tensor).  ``valid_mask`` is an (n, h, w) boolean
    array; None counts every pixel.
    """
    p = pred.data.astype(np.float64)
    t = gt.data.astype(np.float64)
    if p.shape != t.shape:
        raise ValueError("pred and gt shapes must match")
    diff = p - t
    epe = np.sqrt((diff * diff).sum(axis=1, keepdims=True))
    if valid_mask is None:
        valid = np.ones((p.shape[0], p.shape[2], p.shape[3]), dtype=bool)
    else:
        valid = np.asarray(valid_mask, dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("empty valid mask")
    vm = valid[:, None]
    loss = float((epe * vm).sum() / n_valid)
    grad = diff / (np.maximum(epe, EPE_TINY) * n_valid) * vm
    return loss, Tensor(grad.astype(pred.dtype))


def cross_entropy_loss(logits: Tensor, labels, ignore_label: int = 255):
    """Mean cross entropy over labeled pixels and its gradient.

    ``labels`` is an (n, h, w) integer array; pixels equal to
    ``ignore_label`` are skipped.
    """
    z = logits.data.astype(np.float64)
    y = np.asarray(labels).reshape(z.shape[0], z.shape[2], z.shape[3]).astype(np.int64)
    keep = y != ignore_label
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise ValueError("all pixels ignored")
    if np.any(keep & ((y < 0) | (y >= z.shape[1]))):
        raise ValueError("label out of class range")

    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    se = ez.sum(axis=1, keepdims=True)
    log_softmax = z - m - np.log(se)
    y_safe = np.where(keep, y, 0)
    picked = np.take_along_axis(log_softmax, y_safe[:, None], axis=1)[:, 0]
    loss = float(-(picked * keep).sum() / n_keep)

    grad = ez / se
    n_idx, h_idx, w_idx = np.nonzero(keep)
    grad[n_idx, y_safe[n_idx, h_idx, w_idx], h_idx, w_idx] -= 1.0
    grad *= keep[:, None] / n_keep
    return loss, Tensor(grad.astype(logits.dtype))


def scene_inputs(scene: SyntheticScene, dtype=np.float32,
                 use_oracle_confidence: bool = False,
                 arrays: tuple | None = None) -> NetInputs:
    """Assemble network inputs from a scene (or pre-cropped arrays).

    Guidance colors are shifted from [0, 1] to [-1, 1].  With
    ``use_oracle_confidence`` the probability stack is replaced by the
    logarithm of the ideal confidence 1/(epe + 1e-2), tiled to the
    expected channel count.
    """
    estimate, log_prob, guidance, gt = arrays if arrays is not None else (
        scene.corrupted, scene.log_prob_stack, scene.guidance, scene.gt_field)
    if use_oracle_confidence:
        if scene.spec.task != "flow":
            raise ValueError("oracle confidence is defined for flow only")
        oc = oracle_confidence(Tensor(estimate[None].astype(np.float64)),
                               Tensor(gt[None].astype(np.float64)))
        log_prob = np.repeat(np.log(oc.data[0]), log_prob.shape[0], axis=0)
    return NetInputs(
        estimate=Tensor(estimate[None].astype(dtype)),
        log_probability=Tensor(log_prob[None].astype(dtype)),
        guidance=Tensor(((guidance[None] - 0.5) * 2.0).astype(dtype)),
    )


def _batch_inputs(scenes, idxs, crop, dtype, use_oracle, rng) -> tuple[NetInputs, np.ndarray]:
    """Stack per-sample (optionally cropped) inputs; returns inputs and targets."""
    ests, lps, gds, gts = [], [], [], []
    for i in idxs:
        s = scenes[i]
        est, lp, gd, gt = s.corrupted, s.log_prob_stack, s.guidance, s.gt_field
        if crop is not None:
            ch, cw = crop
            h, w = est.shape[1:]
            if ch > h or cw > w:
                raise ValueError("crop larger than scene")
            oy = int(rng.integers(0, h - ch + 1))
            ox = int(rng.integers(0, w - cw + 1))
            sl = (slice(None), slice(oy, oy + ch), slice(ox, ox + cw))
            est, lp, gd, gt = est[sl], lp[sl], gd[sl], gt[sl]
        single = scene_inputs(s, dtype, use_oracle, arrays=(est, lp, gd, gt))
        ests.append(single.estimate.data)
        lps.append(single.log_probability.data)
        gds.append(single.guidance.data)
        gts.append(gt)
    inputs = NetInputs(Tensor(np.concatenate(ests)),
                       Tensor(np.concatenate(lps)),
                       Tensor(np.concatenate(gds)))
    return inputs, np.stack(gts)


def refine_scene(net: RefinementNet, scene: SyntheticScene,
                 use_oracle_confidence: bool = False) -> np.ndarray:
    """Full-resolution refined estimate of one scene, (c, h, w)."""
    inputs = scene_inputs(scene, net.dtype, use_oracle_confidence)
    out, _ = net.forward(inputs)
    return out.data[0]


def evaluate_scenes(net: RefinementNet, scenes, use_oracle_confidence: bool = False,
                    boundary_radius: float = 10.0) -> MetricReport:
    """Pooled metric report of the refined estimates over a scene list."""
    if not scenes:
        raise ValueError("no scenes to evaluate")
    preds = np.stack([refine_scene(net, s, use_oracle_confidence) for s in scenes])
    gts = np.stack([s.gt_field for s in scenes])
    labels = np.stack([s.labels for s in scenes])
    if net.task == "flow":
        return eval_flow(preds, gts, labels=labels, boundary_radius=boundary_radius)
    return eval_segmentation(preds, gts[:, 0], labels=labels,
                             boundary_radius=boundary_radius)


def evaluate_unrefined(scenes, boundary_radius: float = 10.0) -> MetricReport:
    """Metrics of the corrupted estimates themselves, as a baseline."""
    gts = np.stack([s.gt_field for s in scenes])
    preds = np.stack([s.corrupted for s in scenes])
    labels = np.stack([s.labels for s in scenes])
    if scenes[0].spec.task == "flow":
        return eval_flow(preds, gts, labels=labels, boundary_radius=boundary_radius)
    return eval_segmentation(preds, gts[:, 0], labels=labels,
                             boundary_radius=boundary_radius)


def train_epochs(net: RefinementNet, train_scenes, val_scenes,
                 schedule: LrSchedule, epochs: int,
                 loss: str = "aee", batch_size: int = 8,
                 crop: tuple[int, int] | None = None, seed: int = 0,
                 use_oracle_confidence: bool = False) -> TrainResult:
    """Adam training with best-on-validation parameter selection.

    ``loss`` is "aee" (flow) or "cross_entropy" (segmentation); the
    validation metric is pooled AEE (lower is better) or mIoU (higher is
    better) accordingly.  Raises TrainingDiverged on a non-finite loss.
    """
    if not train_scenes:
        raise ValueError("empty training set")
    if loss not in ("aee", "cross_entropy"):
        raise ValueError(f"unknown loss {loss!r}")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")

    for g, gb in schedule.group_base.items():
        net.store.lr_multipliers[g] = gb / schedule.base_lr

    metric_name = "aee" if loss == "aee" else "miou"
    better = (lambda a, b: a < b) if metric_name == "aee" else (lambda a, b: a > b)
    result = TrainResult(val_metric=metric_name)
    best_params = None

    for epoch in range(epochs):
        lr = schedule.lr(epoch)
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(train_scenes))
        losses = []
        for start in range(0, len(order), batch_size):
            idxs = order[start:start + batch_size]
            inputs, gts = _batch_inputs(train_scenes, idxs, crop, net.dtype,
                                        use_oracle_confidence, rng)
            try:
                out, cache = net.forward(inputs)
                if loss == "aee":
                    step_loss, grad = aee_loss(out, Tensor(gts.astype(np.float64)))
                else:
                    step_loss, grad = cross_entropy_loss(out, gts[:, 0])
            except ValueError as e:
                # inputs were validated finite above, so a non-finite tensor
                # inside the step means the parameters blew up
                if "non-finite" in str(e):
                    raise TrainingDiverged(epoch, f"epoch {epoch}: {e}") from None
                raise
            if not np.isfinite(step_loss):
                raise TrainingDiverged(epoch, f"non-finite loss at epoch {epoch}")
            net.store.clear_grads()
            net.backward(cache, grad)
            adam_step(net.store, lr)
            losses.append(step_loss)

        if val_scenes:
            try:
                report = evaluate_scenes(net, val_scenes, use_oracle_confidence)
            except ValueError as e:
                if "non-finite" in str(e):
                    raise TrainingDiverged(epoch, f"epoch {epoch}: {e}") from None
                raise
            val = report.aee if metric_name == "aee" else report.miou
        else:
            val = float("nan")
        if val_scenes and not np.isfinite(val):
            raise TrainingDiverged(epoch, f"non-finite validation metric at epoch {epoch}")

        result.log.append({"epoch": epoch, "lr": lr,
                           "train_loss": float(np.mean(losses)),
                           "val_metric": float(val)})
        if val_scenes and (best_params is None or better(val, result.best_val)):
            result.best_epoch = epoch
            result.best_val = float(val)
            best_params = {p.name: p.value.copy() for p in net.store}

    result.final_params = {p.name: p.value.copy() for p in net.store}
    if best_params is not None:
        for p in net.store:
            np.copyto(p.value, best_params[p.name])
    return result
