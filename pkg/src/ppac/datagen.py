"""Synthetic scenes with piecewise-constant fields, blur, and outlier blobs.

Each scene is a Voronoi partition of the image into colored objects.  The
ground-truth field is constant per object (a random flow vector, or a
class id for segmentation).  The corrupted estimate is a Gaussian-blurred
copy of the ground truth, overwritten inside randomly placed disk blobs
by resampled outlier values.  The confidence map tracks the corruption by
construction: blob pixels get confidence below 0.2, everything else stays
above 0.8, decaying toward object boundaries where blur hurts most.
The log-probability stack fabricates a network-style uncertainty input:
channel 0 is the exact log confidence, later channels are increasingly
noisy copies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

FLOW_MAX = 8.0          # per-object flow components drawn from [-8, 8]
LOGIT_SCALE = 6.0       # magnitude of ideal one-hot class logits
N_CLASSES = 21
CONF_MAX = 0.995
CONF_FLOOR = 0.805      # high-confidence region stays above 0.8
BLOB_CONF = (0.02, 0.18)
BLOB_RADIUS = (2.0, 5.0)


@dataclass
class SceneSpec:
    """Generator knobs; defaults give a desk-scale flow scene."""

    h: int = 96
    w: int = 128
    n_objects: int = 5
    outlier_density: float = 0.05
    blur_radius: float = 2.0
    task: str = "flow"

    def __post_init__(self):
        if self.h < 32 or self.w < 32:
            raise ValueError("scene size must be at least 32x32")
        if self.n_objects < 2:
            raise ValueError("need at least 2 objects")
        if not 0.0 <= self.outlier_density < 1.0:
            raise ValueError("outlier_density must be in [0, 1)")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")
        if self.task not in ("flow", "segmentation"):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def field_channels(self) -> int:
        return 2 if self.task == "flow" else N_CLASSES

    @property
    def probability_channels(self) -> int:
        return 5 if self.task == "flow" else N_CLASSES


@dataclass
class SyntheticScene:
    spec: SceneSpec
    seed: int
    guidance: np.ndarray        # (3, h, w) float32 colors in [0, 1]
    labels: np.ndarray          # (h, w) int32 object ids
    gt_field: np.ndarray        # flow (2, h, w) f32 | segmentation (1, h, w) i32
    corrupted: np.ndarray       # flow (2, h, w) f32 | logits (21, h, w) f32
    confidence: np.ndarray      # (1, h, w) float32 in (0, 1]
    log_prob_stack: np.ndarray  # (5 | 21, h, w) float32, values <= 0


def _voronoi_labels(h: int, w: int, n: int, rng) -> np.ndarray:
    sites_y = rng.uniform(0, h, size=n)
    sites_x = rng.uniform(0, w, size=n)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = ((yy[None] - sites_y[:, None, None]) ** 2
          + (xx[None] - sites_x[:, None, None]) ** 2)
    return np.argmin(d2, axis=0).astype(np.int32)


def _boundary_distance(labels: np.ndarray) -> np.ndarray:
    """Per-pixel Euclidean distance to the nearest object boundary."""
    boundary = np.zeros(labels.shape, dtype=bool)
    boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
    boundary[1:, :] |= labels[:-1, :] != labels[1:, :]
    boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    boundary[:, 1:] |= labels[:, :-1] != labels[:, 1:]
    if not boundary.any():
        return np.full(labels.shape, np.inf)
    return distance_transform_edt(~boundary)


def _sample_blobs(spec: SceneSpec, rng):
    """Disk blobs covering roughly outlier_density of the image."""
    h, w = spec.h, spec.w
    target = spec.outlier_density * h * w
    if target <= 0:
        return []
    yy, xx = np.mgrid[0:h, 0:w]
    blobs = []
    covered = np.zeros((h, w), dtype=bool)
    for _ in range(1000):
        if covered.sum() >= target:
            break
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        rad = rng.uniform(*BLOB_RADIUS)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad
        if not mask.any():
            continue
        blobs.append(mask)
        covered |= mask
    return blobs


def generate_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """One deterministic scene per (spec, seed)."""
    rng = np.random.default_rng(seed)
    h, w = spec.h, spec.w
    n = spec.n_objects

    labels = _voronoi_labels(h, w, n, rng)

    colors = rng.uniform(0.1, 0.9, size=(n, 3))
    guidance = colors[labels].transpose(2, 0, 1)
    guidance = guidance + rng.normal(scale=0.02, size=guidance.shape)
    guidance = np.clip(guidance, 0.0, 1.0)

    if spec.task == "flow":
        flows = rng.uniform(-FLOW_MAX, FLOW_MAX, size=(n, 2))
        gt = flows[labels].transpose(2, 0, 1)
        ideal = gt
    else:
        if n <= N_CLASSES:
            classes = rng.choice(N_CLASSES, size=n, replace=False)
        else:
            classes = rng.integers(0, N_CLASSES, size=n)
        class_map = classes[labels].astype(np.int32)
        gt = class_map[None]
        onehot = np.zeros((N_CLASSES, h, w))
        onehot[class_map, np.arange(h)[:, None], np.arange(w)[None, :]] = 1.0
        ideal = onehot * LOGIT_SCALE

    if spec.blur_radius > 0:
        corrupted = np.stack([gaussian_filter(ch, sigma=spec.blur_radius)
                              for ch in ideal])
    else:
        corrupted = ideal.copy()

    dist = _boundary_distance(labels)
    if spec.blur_radius > 0:
        falloff = np.minimum(1.0, dist / (4.0 * spec.blur_radius))
        confidence = CONF_FLOOR + (CONF_MAX - CONF_FLOOR) * falloff
    else:
        confidence = np.full((h, w), CONF_MAX)

    for mask in _sample_blobs(spec, rng):
        if spec.task == "flow":
            outlier = rng.uniform(-FLOW_MAX, FLOW_MAX, size=2)
            corrupted[:, mask] = outlier[:, None]
        else:
            wrong = rng.integers(0, N_CLASSES)
            vec = np.zeros(N_CLASSES)
            vec[wrong] = LOGIT_SCALE
            corrupted[:, mask] = vec[:, None]
        confidence[mask] = rng.uniform(*BLOB_CONF)

    log_conf = np.log(confidence)
    k = spec.probability_channels
    stack = np.empty((k, h, w))
    stack[0] = log_conf
    for i in range(1, k):
        noise = rng.normal(scale=0.25 * i, size=(h, w))
        stack[i] = np.minimum(log_conf + noise, 0.0)

    if spec.task == "flow":
        gt_out = gt.astype(np.float32)
    else:
        gt_out = gt.astype(np.int32)
    return SyntheticScene(
        spec=spec, seed=seed,
        guidance=guidance.astype(np.float32),
        labels=labels,
        gt_field=gt_out,
        corrupted=corrupted.astype(np.float32),
        confidence=confidence[None].astype(np.float32),
        log_prob_stack=stack.astype(np.float32),
    )


def generate_dataset(spec: SceneSpec, count: int, seed: int) -> list[SyntheticScene]:
    """``count`` scenes with independent per-scene streams from one seed."""
    if count < 0:
        raise ValueError("count must be >= 0")
    seeds = np.random.SeedSequence(seed).generate_state(count) if count else []
    return [generate_scene(spec, int(s)) for s in seeds]
