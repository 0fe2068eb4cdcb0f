"""Finite-difference verification of analytic gradients.

The engine takes a scalar loss callable plus (name, array, analytic
gradient) triples and compares each analytic coordinate against a central
difference.  Perturbations scale with the coordinate magnitude
(h = max(1e-6, 1e-5 * |value|)) and the comparison is relative with a
unit floor, so tiny gradients do not blow up the error ratio.  Arrays
with more than ``max_coords`` entries are checked on a seeded random
subsample.  64-bit inputs only: float32 finite differences are noise at
these tolerances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor
from .adaptive_conv import (AdaptiveConvConfig, AdaptiveKernelParams,
                            NormalizationMode, adaptive_conv_forward,
                            adaptive_conv_backward)

DEFAULT_TOLERANCE = 1e-4
SUBSAMPLE_THRESHOLD = 10000


@dataclass
class CoordinateError:
    """Worst or failing coordinate of one checked array."""

    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float
    n_coords: int
    worst: CoordinateError | None = None
    non_finite: list[str] = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        loc = ""
        if self.worst is not None:
            loc = f" worst {self.worst.name}{list(self.worst.index)}"
        nf = f" non-finite at {self.non_finite}" if self.non_finite else ""
        return (f"gradcheck {status}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.1e}, {self.n_coords} coords){loc}{nf}")


def check_gradients(loss_fn, arrays, tolerance: float = DEFAULT_TOLERANCE,
                    max_coords: int = SUBSAMPLE_THRESHOLD,
                    seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` evaluates the scalar loss at the current contents of the
    arrays; ``arrays`` is an iterable of (name, value_array, analytic_grad)
    where value_array is mutated in place during probing and restored.
    Requires float64 values.
    """
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    worst = None
    non_finite: list[str] = []
    n_checked = 0

    for name, value, analytic in arrays:
        if value.dtype != np.float64:
            raise ValueError(f"{name}: grad check requires float64, got {value.dtype}")
        if analytic.shape != value.shape:
            raise ValueError(f"{name}: analytic gradient shape mismatch")
        flat_v = value.ravel()
        flat_g = np.asarray(analytic, dtype=np.float64).ravel()
        size = flat_v.size
        if size > max_coords:
            coords = rng.choice(size, size=max_coords, replace=False)
        else:
            coords = np.arange(size)
        for i in coords:
            i = int(i)
            ana = float(flat_g[i])
            old = flat_v[i]
            h = max(1e-6, 1e-5 * abs(old))
            flat_v[i] = old + h
            lp = float(loss_fn())
            flat_v[i] = old - h
            lm = float(loss_fn())
            flat_v[i] = old
            num = (lp - lm) / (2.0 * h)
            n_checked += 1
            idx = tuple(int(k) for k in np.unravel_index(i, value.shape))
            if not (np.isfinite(ana) and np.isfinite(num)):
                non_finite.append(f"{name}{list(idx)}")
                continue
            rel = abs(ana - num) / max(1.0, abs(ana) + abs(num))
            if rel > max_rel:
                max_rel = rel
                worst = CoordinateError(name, idx, ana, num, rel)

    passed = not non_finite and max_rel < tolerance
    return GradCheckReport(passed=passed, max_rel_error=max_rel,
                           tolerance=tolerance, n_coords=n_checked,
                           worst=worst, non_finite=non_finite)


def check_adaptive_conv(params: AdaptiveKernelParams, cfg: AdaptiveConvConfig,
                        input: Tensor, tolerance: float = DEFAULT_TOLERANCE,
                        seed: int = 0,
                        max_coords: int = SUBSAMPLE_THRESHOLD) -> GradCheckReport:
    """Full-coordinate check of one adaptive convolution layer.

    Uses a fixed random projection of the output as the loss, so the
    analytic gradient is exactly one backward call.  Also checks feature
    and confidence gradients when the config carries them.
    """
    if input.dtype != np.float64:
        raise ValueError("grad check requires float64 tensors")
    rng = np.random.default_rng(seed)
    out, cache = adaptive_conv_forward(input, params, cfg)
    proj = rng.normal(size=out.shape)
    grads = adaptive_conv_backward(cache, Tensor(proj))

    def loss_fn():
        o, _ = adaptive_conv_forward(input, params, cfg)
        return float((o.data * proj).sum())

    arrays = [
        ("input", input.data, grads.input),
        ("weight", params.weight, grads.weight),
        ("bias", params.bias, grads.bias),
    ]
    if params.log_norm_weight is not None and grads.log_norm_weight is not None:
        arrays.append(("log_norm_weight", params.log_norm_weight, grads.log_norm_weight))
    if cfg.features is not None:
        arrays.append(("features", cfg.features.data, grads.features))
    if cfg.confidences is not None:
        arrays.append(("confidences", cfg.confidences.data, grads.confidences))
    return check_gradients(loss_fn, arrays, tolerance=tolerance,
                           max_coords=max_coords, seed=seed)


def check_network(net, inputs, tolerance: float = DEFAULT_TOLERANCE,
                  seed: int = 0,
                  max_coords: int = SUBSAMPLE_THRESHOLD) -> GradCheckReport:
    """Check every parameter of a refinement network at once.

    ``net`` must expose forward(inputs) -> (Tensor, cache),
    backward(cache, grad) populating parameter grads, and a ``store``
    of named parameters.  Projection loss as in check_adaptive_conv.
    """
    rng = np.random.default_rng(seed)
    out, cache = net.forward(inputs)
    proj = rng.normal(size=out.shape)
    net.store.clear_grads()
    net.backward(cache, Tensor(proj))

    arrays = [(p.name, p.value, p.grad.copy()) for p in net.store]
    net.store.clear_grads()

    def loss_fn():
        o, _ = net.forward(inputs)
        return float((o.data * proj).sum())

    return check_gradients(loss_fn, arrays, tolerance=tolerance,
                           max_coords=max_coords, seed=seed)
