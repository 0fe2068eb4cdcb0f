"""Content- and confidence-adaptive convolution with analytic gradients.

One forward operator covers the whole family: a plain zero-padded
convolution, a pixel-adaptive convolution (PAC) whose taps are modulated
by a Gaussian RBF kernel over per-pixel feature embeddings, and its
probabilistic extension (PPAC) where each neighbor is additionally scaled
by a scalar confidence.  Three normalization modes are supported:

* ``NONE``     -- the raw weighted sum plus bias.
* ``KERNEL``   -- the RBF kernel is rescaled so that it sums to one over
  each pixel's neighborhood before being applied.
* ``ADVANCED`` -- the output is divided by an auxiliary pass over an
  all-ones input that uses a separate, strictly positive normalization
  weight (stored in log-space), making output magnitudes consistent
  across neighborhoods of very different effective support.

Out-of-image neighbors contribute to neither the numerator nor the
denominator: the input is zero-padded and the kernel/confidence maps
carry explicit zeros at invalid taps.

The backward pass is hand-derived reverse-mode differentiation of the
forward graph and accumulates in float64 scratch regardless of the input
precision.  Forward and backward are plain functions over a cache object,
so layers and networks can compose them without a tape.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import Tensor


class NormalizationMode(Enum):
    NONE = "none"
    KERNEL = "kernel"
    ADVANCED = "advanced"


def default_epsilon_denom(dtype) -> float:
    """Denominator guard: 1e-8 in float64, 1e-5 in float32."""
    return 1e-5 if np.dtype(dtype) == np.float32 else 1e-8


@dataclass
class AdaptiveKernelParams:
    """Learnable triple (weight, log normalization weight, bias) of one layer.

    ``weight`` has shape (d_out, d_in, s, s), or (1, 1, s, s) when
    ``shared_channels`` is set, in which case the single spatial kernel is
    applied depthwise to every channel and d_out == d_in.  The
    normalization weight is stored as its logarithm so that the effective
    weight exp(log_norm_weight) stays positive under unconstrained
    gradient updates; it may be None for layers that never normalize.
    """

    weight: np.ndarray
    log_norm_weight: np.ndarray | None
    bias: np.ndarray
    shared_channels: bool = False

    def __post_init__(self):
        w = self.weight
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"weight must be (d_out, d_in, s, s), got {w.shape}")
        if w.shape[2] % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {w.shape[2]}")
        if self.shared_channels and w.shape[:2] != (1, 1):
            raise ValueError("shared_channels requires a (1, 1, s, s) weight")
        if self.log_norm_weight is not None and self.log_norm_weight.shape != w.shape:
            raise ValueError("log_norm_weight must match weight shape")
        if self.bias.ndim != 1:
            raise ValueError("bias must be a vector")
        if not self.shared_channels and self.bias.shape[0] != w.shape[0]:
            raise ValueError("bias length must equal the number of output channels")

    @property
    def size(self) -> int:
        return self.weight.shape[2]


@dataclass
class AdaptiveConvConfig:
    """Per-call configuration: normalization mode and the optional adaptive inputs.

    ``features`` (n, k, h, w) drive the RBF kernel; ``confidences``
    (n, 1, h, w) scale each neighbor's contribution.  Either may be None,
    which reduces the operator to PAC / plain convolution respectively.
    """

    mode: NormalizationMode = NormalizationMode.NONE
    features: Tensor | None = None
    confidences: Tensor | None = None
    epsilon_denom: float | None = None

    def __post_init__(self):
        if self.epsilon_denom is not None and self.epsilon_denom <= 0:
            raise ValueError("epsilon_denom must be positive")
        if self.confidences is not None and self.confidences.shape[1] != 1:
            raise ValueError("confidences must have exactly one channel")


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one forward call."""

    params: AdaptiveKernelParams
    cfg: AdaptiveConvConfig
    in_shape: tuple
    out_dtype: object
    v_pad: np.ndarray
    valid: np.ndarray                     # (s*s, h, w) 0/1 mask of in-image taps
    kernel_raw: np.ndarray | None         # (n, s*s, h, w) RBF values, zeros off-image
    kernel_sum: np.ndarray | None         # (n, 1, h, w) pre-clamp sum, KERNEL mode
    conf_taps: np.ndarray | None          # (n, s*s, h, w) per-tap confidences
    tap_weights: np.ndarray | None        # (n, s*s, h, w) c * K per tap; None on the
                                          # plain-conv fast path where it would be 0/1
    num: np.ndarray | None                # pre-division numerator, ADVANCED mode
    den_raw: np.ndarray | None
    den: np.ndarray | None                # clamped denominator
    f_pad: np.ndarray | None = None
    eps: float = 0.0


@dataclass
class ConvGradients:
    """Gradients for every differentiable forward argument; None where absent."""

    input: np.ndarray
    weight: np.ndarray
    log_norm_weight: np.ndarray | None
    bias: np.ndarray
    features: np.ndarray | None = None
    confidences: np.ndarray | None = None


def rbf_kernel(fi, fj) -> float:
    """Gaussian RBF similarity exp(-0.5 * ||fi - fj||^2) of two feature vectors."""
    fi = np.asarray(fi, dtype=np.float64)
    fj = np.asarray(fj, dtype=np.float64)
    if fi.shape != fj.shape:
        raise ValueError(f"feature length mismatch: {fi.shape} vs {fj.shape}")
    d = fi - fj
    return float(np.exp(-0.5 * np.dot(d.ravel(), d.ravel())))


def _tap_offsets(s: int):
    """Row-major (tap index, ky, kx) triples scanning the s x s window."""
    return [(ky * s + kx, ky, kx) for ky in range(s) for kx in range(s)]


def _valid_mask(h: int, w: int, s: int, dtype) -> np.ndarray:
    """(s*s, h, w) indicator of taps whose neighbor lies inside the image."""
    r = s // 2
    pad = np.pad(np.ones((h, w), dtype=dtype), ((r, r), (r, r)))
    out = np.empty((s * s, h, w), dtype=dtype)
    for t, ky, kx in _tap_offsets(s):
        out[t] = pad[ky:ky + h, kx:kx + w]
    return out


def _kernel_map(f: np.ndarray, s: int, valid: np.ndarray) -> np.ndarray:
    """Raw RBF kernel per tap, (n, s*s, h, w), zero at out-of-image taps."""
    n, k, h, w = f.shape
    r = s // 2
    f_pad = np.pad(f, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.empty((n, s * s, h, w), dtype=f.dtype)
    for t, ky, kx in _tap_offsets(s):
        diff = f - f_pad[:, :, ky:ky + h, kx:kx + w]
        d2 = np.einsum("nkhw,nkhw->nhw", diff, diff)
        out[:, t] = np.exp(-0.5 * d2)
    out *= valid[None]
    return out


def kernel_tensor(features: Tensor, size: int,
                  mode: NormalizationMode = NormalizationMode.NONE,
                  epsilon_denom: float | None = None) -> Tensor:
    """Materialize the RBF kernel over each pixel's s x s neighborhood.

    Output shape (n, s*s, h, w); taps scan the window row-major from the
    top-left offset.  Out-of-image taps are zero.  In KERNEL mode each
    pixel's slice is rescaled to sum to one (guarded by ``epsilon_denom``).
    """
    if size % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {size}")
    f = features.data
    n, k, h, w = f.shape
    valid = _valid_mask(h, w, size, f.dtype)
    km = _kernel_map(f, size, valid)
    if mode is NormalizationMode.KERNEL:
        eps = epsilon_denom if epsilon_denom is not None else default_epsilon_denom(f.dtype)
        km = km / np.maximum(km.sum(axis=1, keepdims=True), eps)
    return Tensor(km)


def _clamp_denominator(den: np.ndarray, eps: float) -> np.ndarray:
    # keep |den| >= eps with the sign preserved; exact zeros go to +eps
    return np.where(den >= 0, np.maximum(den, eps), np.minimum(den, -eps))


def adaptive_conv_forward(input: Tensor, params: AdaptiveKernelParams,
                          cfg: AdaptiveConvConfig) -> tuple[Tensor, ForwardCache]:
    """Stride-1, zero-padded adaptive convolution.

    Per output pixel i the pre-normalization response is
    ``sum_j c_j * K(f_i, f_j) * W[i - j] v_j`` over the s x s neighborhood,
    with missing confidences treated as 1 and a missing feature kernel as 1.
    The selected normalization is applied, then the bias is added.  Returns
    the output tensor and a cache for :func:`adaptive_conv_backward`.
    """
    v = input.data
    n, d, h, w = v.shape
    W = params.weight
    s = params.size
    r = s // 2
    mode = cfg.mode

    if params.shared_channels:
        d_out = d
    else:
        d_out = W.shape[0]
        if W.shape[1] != d:
            raise ValueError(f"weight expects {W.shape[1]} input channels, input has {d}")
    if params.bias.shape[0] != d_out:
        raise ValueError(f"bias length {params.bias.shape[0]} != output channels {d_out}")
    if mode is NormalizationMode.ADVANCED and params.log_norm_weight is None:
        raise ValueError("ADVANCED normalization requires log_norm_weight")

    f = cfg.features.data if cfg.features is not None else None
    c = cfg.confidences.data if cfg.confidences is not None else None
    if f is not None and (f.shape[0] != n or f.shape[2:] != (h, w)):
        raise ValueError("features must match the input batch and spatial size")
    if c is not None and (c.shape[0] != n or c.shape[2:] != (h, w)):
        raise ValueError("confidences must match the input batch and spatial size")
    eps = cfg.epsilon_denom if cfg.epsilon_denom is not None else default_epsilon_denom(v.dtype)

    taps = _tap_offsets(s)
    valid = _valid_mask(h, w, s, v.dtype)
    v_pad = np.pad(v, ((0, 0), (0, 0), (r, r), (r, r)))

    # Plain convolution needs no per-tap modulation at all: the zero padding
    # already encodes the valid mask, so skip building A entirely.
    plain = f is None and c is None and mode is NormalizationMode.NONE

    kernel_raw = None
    kernel_sum = None
    conf_taps = None
    A = None
    if not plain:
        if f is not None:
            kernel_raw = _kernel_map(f, s, valid)
            k_eff = kernel_raw
        else:
            k_eff = np.broadcast_to(valid[None], (n, s * s, h, w))
        if mode is NormalizationMode.KERNEL:
            kernel_sum = np.ascontiguousarray(k_eff.sum(axis=1, keepdims=True))
            k_eff = k_eff / np.maximum(kernel_sum, eps)
        if c is not None:
            c_pad = np.pad(c, ((0, 0), (0, 0), (r, r), (r, r)))
            conf_taps = np.empty((n, s * s, h, w), dtype=v.dtype)
            for t, ky, kx in taps:
                conf_taps[:, t] = c_pad[:, 0, ky:ky + h, kx:kx + w]
            A = conf_taps * k_eff
        else:
            A = np.ascontiguousarray(k_eff)

    num = np.zeros((n, d_out, h, w), dtype=v.dtype)
    if params.shared_channels:
        for t, ky, kx in taps:
            win = v_pad[:, :, ky:ky + h, kx:kx + w]
            contrib = win if A is None else A[:, t, None] * win
            num += W[0, 0, ky, kx] * contrib
    else:
        for t, ky, kx in taps:
            win = v_pad[:, :, ky:ky + h, kx:kx + w]
            wv = win if A is None else A[:, t, None] * win
            num += np.tensordot(wv, W[:, :, ky, kx], axes=([1], [1])).transpose(0, 3, 1, 2)

    den_raw = None
    den = None
    if mode is NormalizationMode.ADVANCED:
        Wp = np.exp(params.log_norm_weight)
        if params.shared_channels:
            row = Wp[0, 0].reshape(s * s)                        # (t,)
            den_one = np.einsum("nthw,t->nhw", A, row)
            den_raw = np.repeat(den_one[:, None], d_out, axis=1)
        else:
            rows = Wp.sum(axis=1).reshape(d_out, s * s)          # (o, t)
            den_raw = np.einsum("nthw,ot->nohw", A, rows)
        den = _clamp_denominator(den_raw, eps).astype(v.dtype)
        out = num / den
    else:
        out = num

    out = out + params.bias.astype(v.dtype)[None, :, None, None]

    cache = ForwardCache(
        params=params, cfg=cfg, in_shape=v.shape, out_dtype=v.dtype,
        v_pad=v_pad, valid=valid, kernel_raw=kernel_raw, kernel_sum=kernel_sum,
        conf_taps=conf_taps, tap_weights=A,
        num=num if mode is NormalizationMode.ADVANCED else None,
        den_raw=den_raw, den=den, eps=eps,
    )
    if f is not None:
        cache.f_pad = np.pad(f, ((0, 0), (0, 0), (r, r), (r, r)))
    return Tensor(out), cache


def adaptive_conv_backward(cache: ForwardCache, grad_output: Tensor) -> ConvGradients:
    """Analytic gradients of a scalar loss through one forward call.

    ``grad_output`` is dL/d(output).  Gradients are returned for the input,
    the weights, the bias, and (when present in the forward call) the log
    normalization weight, features, and confidences.  All accumulation
    happens in float64 and results are cast back to the argument dtypes.
    """
    params = cache.params
    cfg = cache.cfg
    n, d, h, w = cache.in_shape
    s = params.size
    r = s // 2
    mode = cfg.mode
    g = grad_output.data
    d_out = d if params.shared_channels else params.weight.shape[0]
    if g.shape != (n, d_out, h, w):
        raise ValueError(f"grad_output shape {g.shape} != output shape {(n, d_out, h, w)}")

    taps = _tap_offsets(s)
    g = g.astype(np.float64)
    v_pad = cache.v_pad.astype(np.float64)
    W = params.weight.astype(np.float64)
    A = cache.tap_weights.astype(np.float64) if cache.tap_weights is not None else None

    g_bias = g.sum(axis=(0, 2, 3))

    if mode is NormalizationMode.ADVANCED:
        den = cache.den.astype(np.float64)
        num = cache.num.astype(np.float64)
        g_num = g / den
        # no gradient through the denominator where the clamp is active
        live = np.abs(cache.den_raw.astype(np.float64)) >= cache.eps
        g_den = -(g * num) / (den * den) * live
        Wp = np.exp(params.log_norm_weight.astype(np.float64))
    else:
        g_num = g
        g_den = None
        Wp = None

    g_W = np.zeros_like(W)
    g_Wp = np.zeros_like(W) if g_den is not None else None
    g_vpad = np.zeros_like(v_pad)
    g_A = np.empty((n, s * s, h, w), dtype=np.float64) if A is not None else None

    for t, ky, kx in taps:
        win = v_pad[:, :, ky:ky + h, kx:kx + w]
        if params.shared_channels:
            w_t = W[0, 0, ky, kx]
            if A is None:
                g_W[0, 0, ky, kx] += np.einsum("nohw,nohw->", g_num, win)
                g_vpad[:, :, ky:ky + h, kx:kx + w] += w_t * g_num
                continue
            A_t = A[:, t]
            gA_t = w_t * np.einsum("nohw,nohw->nhw", g_num, win)
            g_W[0, 0, ky, kx] += np.einsum("nohw,nhw,nohw->", g_num, A_t, win)
            g_vpad[:, :, ky:ky + h, kx:kx + w] += (A_t[:, None] * g_num) * w_t
            if g_den is not None:
                gA_t += Wp[0, 0, ky, kx] * g_den.sum(axis=1)
                g_Wp[0, 0, ky, kx] += np.einsum("nohw,nhw->", g_den, A_t)
            g_A[:, t] = gA_t
        else:
            Wt = W[:, :, ky, kx]                                  # (o, d)
            P = np.tensordot(g_num, Wt, axes=([1], [0])).transpose(0, 3, 1, 2)
            if A is None:
                g_W[:, :, ky, kx] += np.tensordot(g_num, win, axes=([0, 2, 3], [0, 2, 3]))
                g_vpad[:, :, ky:ky + h, kx:kx + w] += P
                continue
            A_t = A[:, t]
            gA_t = np.einsum("ndhw,ndhw->nhw", P, win)
            g_W[:, :, ky, kx] += np.tensordot(g_num * A_t[:, None], win,
                                              axes=([0, 2, 3], [0, 2, 3]))
            g_vpad[:, :, ky:ky + h, kx:kx + w] += A_t[:, None] * P
            if g_den is not None:
                rows_p = Wp[:, :, ky, kx].sum(axis=1)             # (o,)
                gA_t += np.einsum("nohw,o->nhw", g_den, rows_p)
                g_Wp[:, :, ky, kx] += np.einsum("nohw,nhw->o", g_den, A_t)[:, None]
            g_A[:, t] = gA_t

    g_input = g_vpad[:, :, r:r + h, r:r + w]

    # split A = conf * k_eff back into its factors
    k_raw = cache.kernel_raw.astype(np.float64) if cache.kernel_raw is not None else None
    ks = None
    if cache.kernel_sum is not None:
        ks = np.maximum(cache.kernel_sum.astype(np.float64), cache.eps)
    g_conf_taps = None
    g_keff = None
    if g_A is not None:
        if cache.conf_taps is not None:
            if k_raw is not None:
                k_eff = k_raw / ks if ks is not None else k_raw
            else:
                k_eff = cache.valid[None].astype(np.float64)
                if ks is not None:
                    k_eff = k_eff / ks
            g_conf_taps = g_A * k_eff
            g_keff = g_A * cache.conf_taps.astype(np.float64)
        else:
            g_keff = g_A

    g_features = None
    if k_raw is not None:
        if mode is NormalizationMode.KERNEL:
            # k_eff = k_raw / max(sum_t k_raw, eps)
            live = cache.kernel_sum.astype(np.float64) > cache.eps
            inner = (g_keff * k_raw).sum(axis=1, keepdims=True)
            g_kraw = g_keff / ks - live * inner / (ks * ks)
        else:
            g_kraw = g_keff
        f_pad = cache.f_pad.astype(np.float64)
        f_ctr = f_pad[:, :, r:r + h, r:r + w]
        g_f = np.zeros_like(f_ctr)
        g_fpad = np.zeros_like(f_pad)
        for t, ky, kx in taps:
            diff = f_ctr - f_pad[:, :, ky:ky + h, kx:kx + w]
            common = (g_kraw[:, t] * k_raw[:, t])[:, None]
            g_f -= common * diff
            g_fpad[:, :, ky:ky + h, kx:kx + w] += common * diff
        g_features = g_f + g_fpad[:, :, r:r + h, r:r + w]

    g_confidences = None
    if g_conf_taps is not None:
        g_cpad = np.zeros((n, 1, h + 2 * r, w + 2 * r), dtype=np.float64)
        for t, ky, kx in taps:
            g_cpad[:, 0, ky:ky + h, kx:kx + w] += g_conf_taps[:, t]
        g_confidences = g_cpad[:, :, r:r + h, r:r + w]

    in_dtype = cache.out_dtype
    w_dtype = params.weight.dtype
    return ConvGradients(
        input=g_input.astype(in_dtype),
        weight=g_W.astype(w_dtype),
        log_norm_weight=(g_Wp * Wp).astype(w_dtype) if g_Wp is not None else None,
        bias=g_bias.astype(params.bias.dtype),
        features=g_features.astype(cfg.features.dtype) if g_features is not None else None,
        confidences=g_confidences.astype(cfg.confidences.dtype) if g_confidences is not None else None,
    )
