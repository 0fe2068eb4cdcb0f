"""Refinement networks that denoise a dense estimate under guidance.

Three architectures share one interface:

* ``ppac``   -- a guidance branch (standard convs) produces per-pixel
  feature embeddings, a probability branch (standard convs ending in a
  sigmoid) turns log-probability inputs into per-pixel confidences, and a
  combination branch of two channel-shared 7x7 confidence-adaptive
  convolutions refines the estimate.
* ``pac``    -- no probability branch; the log-probabilities are
  concatenated to the guidance image and fed to the guidance branch, and
  the combination branch ignores confidences.
* ``simple`` -- estimate, log-probabilities, and guidance are concatenated
  and pushed through three plain 7x7 convolutions.

Layer widths follow a fixed recipe per (kind, task) so that parameter
counts are reproducible; see ``build_net``.  The guidance branch always
emits 10 channels, split as channels 0-4 for the first adaptive layer and
5-9 for the second; the probability branch emits 2 channels, one
confidence map per adaptive layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor
from .adaptive_conv import (AdaptiveConvConfig, AdaptiveKernelParams,
                            NormalizationMode, adaptive_conv_forward,
                            adaptive_conv_backward, default_epsilon_denom)
from .optim import Parameter, ParamStore

KINDS = ("ppac", "pac", "simple")
TASKS = ("flow", "segmentation")

# estimate / log-probability channel counts per task
ESTIMATE_CHANNELS = {"flow": 2, "segmentation": 21}
PROBABILITY_CHANNELS = {"flow": 5, "segmentation": 21}
GUIDANCE_CHANNELS = 3

ORACLE_EPS = 1e-2


@dataclass
class NetInputs:
    """Full-resolution inputs: the estimate to refine plus its context.

    ``log_probability`` carries logarithms of probability-like maps (5
    channels for flow, 21 log-softmax channels for segmentation);
    ``guidance`` is the 3-channel image already normalized to [-1, 1].
    """

    estimate: Tensor
    log_probability: Tensor
    guidance: Tensor

    def __post_init__(self):
        e, p, g = self.estimate, self.log_probability, self.guidance
        if not (e.shape[2:] == p.shape[2:] == g.shape[2:]):
            raise ValueError("inputs must share spatial size")
        if not (e.shape[0] == p.shape[0] == g.shape[0]):
            raise ValueError("inputs must share batch size")
        if g.shape[1] != GUIDANCE_CHANNELS:
            raise ValueError(f"guidance must have {GUIDANCE_CHANNELS} channels")


class StandardConvLayer:
    """Zero-padded stride-1 convolution with an optional pointwise activation."""

    def __init__(self, weight: Parameter, bias: Parameter, activation: str = "none"):
        if activation not in ("none", "relu", "sigmoid"):
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = weight
        self.bias = bias
        self.activation = activation

    def _kernel_params(self) -> AdaptiveKernelParams:
        return AdaptiveKernelParams(self.weight.value, None, self.bias.value)

    def forward(self, x: Tensor):
        out, cache = adaptive_conv_forward(x, self._kernel_params(),
                                           AdaptiveConvConfig())
        act = None
        if self.activation == "relu":
            act = out.data > 0
            out = Tensor(np.where(act, out.data, 0.0))
        elif self.activation == "sigmoid":
            with np.errstate(over="ignore"):
                sig = 1.0 / (1.0 + np.exp(-out.data))
            act = sig
            out = Tensor(sig)
        return out, (cache, act)

    def backward(self, cache, grad_out: Tensor) -> Tensor:
        conv_cache, act = cache
        g = grad_out.data
        if self.activation == "relu":
            g = g * act
        elif self.activation == "sigmoid":
            g = g * act * (1.0 - act)
        grads = adaptive_conv_backward(conv_cache, Tensor(g))
        _accumulate(self.weight, grads.weight)
        _accumulate(self.bias, grads.bias)
        return Tensor(grads.input)


class AdaptiveConvLayer:
    """Channel-shared adaptive convolution used in the combination branch."""

    def __init__(self, weight: Parameter, log_norm_weight: Parameter | None,
                 bias: Parameter, mode: NormalizationMode,
                 epsilon_denom: float | None = None):
        self.weight = weight
        self.log_norm_weight = log_norm_weight
        self.bias = bias
        self.mode = mode
        self.epsilon_denom = epsilon_denom

    def _kernel_params(self) -> AdaptiveKernelParams:
        lw = self.log_norm_weight.value if self.log_norm_weight is not None else None
        return AdaptiveKernelParams(self.weight.value, lw, self.bias.value,
                                    shared_channels=True)

    def forward(self, x: Tensor, features: Tensor | None,
                confidences: Tensor | None):
        cfg = AdaptiveConvConfig(mode=self.mode, features=features,
                                 confidences=confidences,
                                 epsilon_denom=self.epsilon_denom)
        return adaptive_conv_forward(x, self._kernel_params(), cfg)

    def backward(self, cache, grad_out: Tensor):
        grads = adaptive_conv_backward(cache, grad_out)
        _accumulate(self.weight, grads.weight)
        _accumulate(self.bias, grads.bias)
        if self.log_norm_weight is not None:
            if grads.log_norm_weight is not None:
                _accumulate(self.log_norm_weight, grads.log_norm_weight)
            else:
                # outside ADVANCED mode the output never reads this
                # parameter, so its gradient is exactly zero; the optimizer
                # still expects an entry for it
                _accumulate(self.log_norm_weight,
                            np.zeros_like(self.log_norm_weight.value))
        g_f = Tensor(grads.features) if grads.features is not None else None
        g_c = Tensor(grads.confidences) if grads.confidences is not None else None
        return Tensor(grads.input), g_f, g_c


def _accumulate(param: Parameter, grad: np.ndarray) -> None:
    if param.grad is None:
        param.grad = grad.astype(param.value.dtype, copy=True)
    else:
        param.grad += grad.astype(param.value.dtype, copy=False)


def _standard_layer(store: ParamStore, name: str, group: str, rng,
                    in_ch: int, out_ch: int, size: int, activation: str,
                    dtype) -> StandardConvLayer:
    k = 1.0 / np.sqrt(in_ch * size * size)
    w = rng.uniform(-k, k, size=(out_ch, in_ch, size, size)).astype(dtype)
    b = rng.uniform(-k, k, size=(out_ch,)).astype(dtype)
    wp = store.add(Parameter(f"{name}.weight", w, group))
    bp = store.add(Parameter(f"{name}.bias", b, group))
    return StandardConvLayer(wp, bp, activation)


def _adaptive_layer(store: ParamStore, name: str, rng, channels: int,
                    size: int, mode: NormalizationMode, dtype,
                    epsilon_denom: float | None) -> AdaptiveConvLayer:
    # positive random start; the normalization weight matches it exactly so
    # the layer begins close to a confidence-weighted average
    w0 = rng.uniform(0.05, 0.15, size=(1, 1, size, size))
    w = w0.astype(dtype)
    lw = np.log(w0).astype(dtype)
    b = np.zeros(channels, dtype=dtype)
    wp = store.add(Parameter(f"{name}.weight", w, "combination"))
    lp = store.add(Parameter(f"{name}.log_norm_weight", lw, "combination"))
    bp = store.add(Parameter(f"{name}.bias", b, "combination"))
    return AdaptiveConvLayer(wp, lp, bp, mode, epsilon_denom)


class RefinementNet:
    """One of the three refinement architectures with its parameter store."""

    def __init__(self, kind: str, task: str, store: ParamStore,
                 guidance_branch, probability_branch, combination_branch,
                 mode: NormalizationMode, dtype):
        self.kind = kind
        self.task = task
        self.store = store
        self.guidance_branch = guidance_branch
        self.probability_branch = probability_branch
        self.combination_branch = combination_branch
        self.mode = mode
        self.dtype = dtype

    @property
    def estimate_channels(self) -> int:
        return ESTIMATE_CHANNELS[self.task]

    @property
    def probability_channels(self) -> int:
        return PROBABILITY_CHANNELS[self.task]

    def parameter_count(self) -> int:
        return self.store.total_size()

    def _check_inputs(self, inputs: NetInputs) -> None:
        if inputs.estimate.shape[1] != self.estimate_channels:
            raise ValueError(f"{self.task} estimate must have "
                             f"{self.estimate_channels} channels, got "
                             f"{inputs.estimate.shape[1]}")
        if inputs.log_probability.shape[1] != self.probability_channels:
            raise ValueError(f"{self.task} log_probability must have "
                             f"{self.probability_channels} channels, got "
                             f"{inputs.log_probability.shape[1]}")

    def forward(self, inputs: NetInputs):
        """Refine the estimate; returns (output, cache) for backward."""
        self._check_inputs(inputs)
        cache = {"inputs": inputs}

        if self.kind == "simple":
            x = Tensor(np.concatenate([inputs.estimate.data,
                                       inputs.log_probability.data,
                                       inputs.guidance.data], axis=1))
            caches = []
            for layer in self.combination_branch:
                x, c = layer.forward(x)
                caches.append(c)
            cache["combination"] = caches
            return x, cache

        if self.kind == "pac":
            g_in = Tensor(np.concatenate([inputs.guidance.data,
                                          inputs.log_probability.data], axis=1))
        else:
            g_in = inputs.guidance
        feat = g_in
        g_caches = []
        for layer in self.guidance_branch:
            feat, c = layer.forward(feat)
            g_caches.append(c)
        cache["guidance"] = g_caches

        conf = None
        if self.kind == "ppac":
            p = inputs.log_probability
            p_caches = []
            for layer in self.probability_branch:
                p, c = layer.forward(p)
                p_caches.append(c)
            cache["probability"] = p_caches
            conf = p

        nf = feat.shape[1] // len(self.combination_branch)
        x = inputs.estimate
        comb_caches = []
        for li, layer in enumerate(self.combination_branch):
            f_li = Tensor(np.ascontiguousarray(feat.data[:, li * nf:(li + 1) * nf]))
            c_li = None
            if conf is not None:
                c_li = Tensor(np.ascontiguousarray(conf.data[:, li:li + 1]))
            x, c = layer.forward(x, f_li, c_li)
            comb_caches.append(c)
        cache["combination"] = comb_caches
        cache["n_feat"] = nf
        return x, cache

    def backward(self, cache, grad_out: Tensor) -> None:
        """Accumulate parameter gradients; input gradients are discarded."""
        if self.kind == "simple":
            g = grad_out
            for layer, c in zip(reversed(self.combination_branch),
                                reversed(cache["combination"])):
                g = layer.backward(c, g)
            return

        nf = cache["n_feat"]
        inputs = cache["inputs"]
        n, _, h, w = inputs.estimate.shape
        g_feat = np.zeros((n, nf * len(self.combination_branch), h, w),
                          dtype=np.float64)
        g_conf = None
        if self.kind == "ppac":
            g_conf = np.zeros((n, len(self.combination_branch), h, w),
                              dtype=np.float64)

        g = grad_out
        for li in reversed(range(len(self.combination_branch))):
            layer = self.combination_branch[li]
            g, g_f, g_c = layer.backward(cache["combination"][li], g)
            if g_f is not None:
                g_feat[:, li * nf:(li + 1) * nf] += g_f.data
            if g_c is not None and g_conf is not None:
                g_conf[:, li:li + 1] += g_c.data

        gt = Tensor(g_feat.astype(self.dtype))
        for layer, c in zip(reversed(self.guidance_branch),
                            reversed(cache["guidance"])):
            gt = layer.backward(c, gt)

        if self.kind == "ppac":
            gp = Tensor(g_conf.astype(self.dtype))
            for layer, c in zip(reversed(self.probability_branch),
                                reversed(cache["probability"])):
                gp = layer.backward(c, gp)


def build_net(kind: str, task: str, seed: int = 0,
              mode: NormalizationMode = NormalizationMode.ADVANCED,
              dtype=np.float32,
              epsilon_denom: float | None = None) -> RefinementNet:
    """Construct one refinement network with seeded initialization.

    Standard convolutions start from fan-in-scaled uniform values; the
    adaptive layers start from positive uniform(0.05, 0.15) weights with
    the normalization weight matched exactly and a zero bias.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}, expected one of {KINDS}")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")

    rng = np.random.default_rng(seed)
    store = ParamStore()
    est_ch = ESTIMATE_CHANNELS[task]
    prob_ch = PROBABILITY_CHANNELS[task]

    guidance = None
    probability = None

    if kind == "simple":
        in_ch = est_ch + prob_ch + GUIDANCE_CHANNELS
        hidden = 11 if task == "flow" else 4
        combination = [
            _standard_layer(store, "combination.0", "combination", rng,
                            in_ch, hidden, 7, "relu", dtype),
            _standard_layer(store, "combination.1", "combination", rng,
                            hidden, hidden, 7, "relu", dtype),
            _standard_layer(store, "combination.2", "combination", rng,
                            hidden, est_ch, 7, "none", dtype),
        ]
        return RefinementNet(kind, task, store, guidance, probability,
                             combination, NormalizationMode.NONE, dtype)

    if kind == "ppac":
        g_in, g_hidden = GUIDANCE_CHANNELS, 15
    elif task == "flow":
        g_in, g_hidden = GUIDANCE_CHANNELS + prob_ch, 15
    else:
        g_in, g_hidden = GUIDANCE_CHANNELS + prob_ch, 13
    guidance = [
        _standard_layer(store, "guidance.0", "branch", rng,
                        g_in, g_hidden, 5, "relu", dtype),
        _standard_layer(store, "guidance.1", "branch", rng,
                        g_hidden, g_hidden, 5, "relu", dtype),
        _standard_layer(store, "guidance.2", "branch", rng,
                        g_hidden, 10, 5, "none", dtype),
    ]

    if kind == "ppac":
        probability = [
            _standard_layer(store, "probability.0", "branch", rng,
                            prob_ch, 5, 5, "relu", dtype),
            _standard_layer(store, "probability.1", "branch", rng,
                            5, 5, 5, "relu", dtype),
            _standard_layer(store, "probability.2", "branch", rng,
                            5, 2, 5, "sigmoid", dtype),
        ]

    combination = [
        _adaptive_layer(store, "combination.0", rng, est_ch, 7, mode,
                        dtype, epsilon_denom),
        _adaptive_layer(store, "combination.1", rng, est_ch, 7, mode,
                        dtype, epsilon_denom),
    ]
    return RefinementNet(kind, task, store, guidance, probability,
                         combination, mode, dtype)


def parameter_count(kind: str, task: str) -> int:
    """Total learnable scalar count of one architecture."""
    return build_net(kind, task, seed=0).parameter_count()


def oracle_confidence(estimate: Tensor, ground_truth: Tensor) -> Tensor:
    """Idealized per-pixel confidence 1 / (endpoint error + 1e-2).

    Zero error maps to the capped maximum 100.  Shapes must match; the
    endpoint error is the channel-wise L2 norm of the difference.
    """
    if estimate.shape != ground_truth.shape:
        raise ValueError("estimate and ground truth shapes must match")
    diff = estimate.data.astype(np.float64) - ground_truth.data.astype(np.float64)
    epe = np.sqrt((diff * diff).sum(axis=1, keepdims=True))
    return Tensor((1.0 / (epe + ORACLE_EPS)).astype(estimate.dtype))
