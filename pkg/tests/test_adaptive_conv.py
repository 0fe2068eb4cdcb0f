import numpy as np
import pytest

from ppac.adaptive_conv import (AdaptiveConvConfig, AdaptiveKernelParams,
                                NormalizationMode, adaptive_conv_backward,
                                adaptive_conv_forward, default_epsilon_denom,
                                kernel_tensor, rbf_kernel)
from ppac.tensor import Tensor

from reference_conv import reference_adaptive_conv

MODES = (NormalizationMode.NONE, NormalizationMode.KERNEL, NormalizationMode.ADVANCED)


def _params(rng, d_out, d_in, s, shared=False, with_norm=True, dtype=np.float64):
    if shared:
        w = rng.uniform(0.05, 0.15, size=(1, 1, s, s)).astype(dtype)
        b = rng.normal(size=d_in).astype(dtype)
    else:
        w = rng.normal(size=(d_out, d_in, s, s)).astype(dtype)
        b = rng.normal(size=d_out).astype(dtype)
    lw = rng.normal(scale=0.5, size=w.shape).astype(dtype) if with_norm else None
    return AdaptiveKernelParams(weight=w, log_norm_weight=lw, bias=b,
                                shared_channels=shared)


def test_rbf_kernel_values():
    assert rbf_kernel([1.0, 2.0], [1.0, 2.0]) == 1.0
    np.testing.assert_allclose(rbf_kernel([1.0], [0.0]), np.exp(-0.5), rtol=1e-15)
    np.testing.assert_allclose(rbf_kernel([1.0, 1.0], [0.0, 0.0]), np.exp(-1.0), rtol=1e-15)
    with pytest.raises(ValueError):
        rbf_kernel([1.0], [1.0, 2.0])


def test_default_epsilon_denom():
    assert default_epsilon_denom(np.float32) == 1e-5
    assert default_epsilon_denom(np.float64) == 1e-8


def test_center_impulse_average():
    # 3x3 image, single 9 at the center, 3x3 box average: every window
    # contains the center pixel exactly once, so the output is 1 everywhere
    v = np.zeros((1, 1, 3, 3))
    v[0, 0, 1, 1] = 9.0
    params = AdaptiveKernelParams(weight=np.full((1, 1, 3, 3), 1.0 / 9.0),
                                  log_norm_weight=None, bias=np.zeros(1))
    out, _ = adaptive_conv_forward(Tensor(v), params, AdaptiveConvConfig())
    np.testing.assert_allclose(out.data, 1.0, rtol=0, atol=1e-15)


def test_constant_reproduction_advanced():
    """W' = W reproduces a constant input exactly, borders included."""
    rng = np.random.default_rng(5)
    w = rng.uniform(0.05, 0.15, size=(3, 2, 3, 3))
    params = AdaptiveKernelParams(weight=w, log_norm_weight=np.log(w),
                                  bias=np.full(3, 0.5))
    v = Tensor(np.full((1, 2, 5, 6), 5.0))
    cfg = AdaptiveConvConfig(mode=NormalizationMode.ADVANCED)
    out, _ = adaptive_conv_forward(v, params, cfg)
    np.testing.assert_allclose(out.data, 5.5, rtol=1e-13)

    # still exact with arbitrary features and confidences: both cancel
    f = Tensor(rng.normal(size=(1, 4, 5, 6)))
    c = Tensor(rng.uniform(0.1, 1.0, size=(1, 1, 5, 6)))
    cfg = AdaptiveConvConfig(mode=NormalizationMode.ADVANCED, features=f, confidences=c)
    out, _ = adaptive_conv_forward(v, params, cfg)
    np.testing.assert_allclose(out.data, 5.5, rtol=1e-12)


def test_kernel_tensor_constant_features():
    # equal features: raw kernel is the valid-tap indicator, so kernel
    # normalization turns each tap into 1 / (number of in-image neighbors)
    f = Tensor(np.ones((1, 2, 4, 5)))
    km = kernel_tensor(f, 3).data
    assert km.shape == (1, 9, 4, 5)
    assert km[0, 4].min() == 1.0                      # center tap always valid
    assert km[0, 0, 0, 0] == 0.0                      # top-left tap off-image at corner
    kn = kernel_tensor(f, 3, mode=NormalizationMode.KERNEL).data
    np.testing.assert_allclose(kn[0, :, 0, 0].sum(), 1.0, rtol=1e-15)
    np.testing.assert_allclose(kn[0, 4, 0, 0], 0.25, rtol=1e-15)   # corner: 4 neighbors
    np.testing.assert_allclose(kn[0, 4, 0, 2], 1.0 / 6.0, rtol=1e-15)  # edge: 6
    np.testing.assert_allclose(kn[0, 4, 1, 2], 1.0 / 9.0, rtol=1e-15)  # interior: 9


def test_kernel_tensor_sums_to_one():
    rng = np.random.default_rng(11)
    f = Tensor(rng.normal(size=(2, 3, 6, 7)))
    for s in (3, 5):
        km = kernel_tensor(f, s, mode=NormalizationMode.KERNEL).data
        np.testing.assert_allclose(km.sum(axis=1), 1.0, rtol=1e-12)
    with pytest.raises(ValueError):
        kernel_tensor(f, 4)


def test_forward_matches_reference():
    """Vectorized forward against the nested-loop oracle, all option combos."""
    rng = np.random.default_rng(42)
    for mode in MODES:
        for shared in (False, True):
            for use_f in (False, True):
                for use_c in (False, True):
                    d = 3 if not shared else 2
                    d_out = 2 if not shared else d
                    h, w, s = 5, 6, 3
                    params = _params(rng, d_out, d, s, shared=shared)
                    v = rng.normal(size=(2, d, h, w))
                    f = rng.normal(size=(2, 2, h, w)) if use_f else None
                    c = rng.uniform(0.0, 1.0, size=(2, 1, h, w)) if use_c else None
                    cfg = AdaptiveConvConfig(
                        mode=mode,
                        features=Tensor(f) if use_f else None,
                        confidences=Tensor(c) if use_c else None)
                    out, _ = adaptive_conv_forward(Tensor(v), params, cfg)
                    ref = reference_adaptive_conv(
                        v, params.weight, params.bias,
                        log_norm_weight=params.log_norm_weight,
                        features=f, confidences=c, mode=mode.value,
                        shared_channels=shared)
                    np.testing.assert_allclose(out.data, ref, rtol=1e-10, atol=1e-12)


def test_plain_conv_fast_path():
    # no features, no confidences, no normalization: the tap-weight tensor
    # is never materialized and the result still matches the oracle
    rng = np.random.default_rng(7)
    params = _params(rng, 4, 3, 5)
    v = rng.normal(size=(2, 3, 6, 8))
    out, cache = adaptive_conv_forward(Tensor(v), params, AdaptiveConvConfig())
    assert cache.tap_weights is None
    ref = reference_adaptive_conv(v, params.weight, params.bias)
    np.testing.assert_allclose(out.data, ref, rtol=1e-10, atol=1e-12)

    # backward through the fast path agrees with central differences
    g = rng.normal(size=out.data.shape)
    grads = adaptive_conv_backward(cache, Tensor(g))
    for idx in [(0, 0, 0, 0), (2, 1, 3, 4), (3, 2, 2, 2)]:
        h = 1e-6
        wp = params.weight.copy()
        wp[idx] += h
        pp = AdaptiveKernelParams(weight=wp, log_norm_weight=None, bias=params.bias)
        op, _ = adaptive_conv_forward(Tensor(v), pp, AdaptiveConvConfig())
        wm = params.weight.copy()
        wm[idx] -= h
        pm = AdaptiveKernelParams(weight=wm, log_norm_weight=None, bias=params.bias)
        om, _ = adaptive_conv_forward(Tensor(v), pm, AdaptiveConvConfig())
        fd = float(((op.data - om.data) * g).sum()) / (2 * h)
        np.testing.assert_allclose(grads.weight[idx], fd, rtol=1e-6)


def test_bias_gradient_is_grad_sum():
    rng = np.random.default_rng(13)
    params = _params(rng, 2, 3, 3)
    v = rng.normal(size=(2, 3, 5, 5))
    out, cache = adaptive_conv_forward(Tensor(v), params, AdaptiveConvConfig())
    g = rng.normal(size=out.data.shape)
    grads = adaptive_conv_backward(cache, Tensor(g))
    np.testing.assert_allclose(grads.bias, g.sum(axis=(0, 2, 3)), rtol=1e-12)


def test_backward_matches_finite_differences():
    """Full-option backward spot check against central differences."""
    rng = np.random.default_rng(99)
    h_img, w_img = 4, 5
    for mode in MODES:
        params = _params(rng, 2, 2, 3)
        v = rng.normal(size=(1, 2, h_img, w_img))
        f = rng.normal(scale=0.5, size=(1, 2, h_img, w_img))
        c = rng.uniform(0.1, 1.0, size=(1, 1, h_img, w_img))
        proj = rng.normal(size=(1, 2, h_img, w_img))

        def run(vv, ff, cc, ww, lw, bb):
            p = AdaptiveKernelParams(weight=ww, log_norm_weight=lw, bias=bb)
            cfg = AdaptiveConvConfig(mode=mode, features=Tensor(ff),
                                     confidences=Tensor(cc))
            o, cache = adaptive_conv_forward(Tensor(vv), p, cfg)
            return float((o.data * proj).sum()), cache

        _, cache = run(v, f, c, params.weight, params.log_norm_weight, params.bias)
        grads = adaptive_conv_backward(cache, Tensor(proj))

        arrays = {"input": (v, grads.input), "features": (f, grads.features),
                  "confidences": (c, grads.confidences),
                  "weight": (params.weight, grads.weight),
                  "bias": (params.bias, grads.bias)}
        if mode is NormalizationMode.ADVANCED:
            arrays["log_norm_weight"] = (params.log_norm_weight, grads.log_norm_weight)
        for name, (arr, ana) in arrays.items():
            flat = arr.reshape(-1)
            for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                step = max(1e-6, 1e-5 * abs(flat[i]))
                old = flat[i]
                flat[i] = old + step
                lp, _ = run(v, f, c, params.weight, params.log_norm_weight, params.bias)
                flat[i] = old - step
                lm, _ = run(v, f, c, params.weight, params.log_norm_weight, params.bias)
                flat[i] = old
                fd = (lp - lm) / (2 * step)
                got = ana.reshape(-1)[i]
                assert abs(got - fd) / max(1.0, abs(got) + abs(fd)) < 1e-6, \
                    f"{mode.value} {name}[{i}]: analytic {got} vs fd {fd}"


def test_confidence_scale_invariance_advanced():
    # scaling all confidences by a constant cancels between numerator and
    # denominator under advanced normalization
    rng = np.random.default_rng(21)
    params = _params(rng, 2, 2, 3)
    v = Tensor(rng.normal(size=(1, 2, 6, 7)))
    f = Tensor(rng.normal(size=(1, 1, 6, 7)))
    c = rng.uniform(0.2, 1.0, size=(1, 1, 6, 7))
    base = None
    for lam in (1.0, 0.1, 3.7):
        cfg = AdaptiveConvConfig(mode=NormalizationMode.ADVANCED, features=f,
                                 confidences=Tensor(c * lam))
        out, _ = adaptive_conv_forward(v, params, cfg)
        if base is None:
            base = out.data
        else:
            np.testing.assert_allclose(out.data, base, rtol=1e-12)


def test_confidence_scaling_linear_without_normalization():
    # with no normalization the pre-bias response is linear in the confidences
    rng = np.random.default_rng(22)
    params = _params(rng, 2, 2, 3)
    v = Tensor(rng.normal(size=(1, 2, 5, 5)))
    c = rng.uniform(0.2, 1.0, size=(1, 1, 5, 5))
    lam = 2.5
    cfg1 = AdaptiveConvConfig(confidences=Tensor(c))
    cfg2 = AdaptiveConvConfig(confidences=Tensor(c * lam))
    out1, _ = adaptive_conv_forward(v, params, cfg1)
    out2, _ = adaptive_conv_forward(v, params, cfg2)
    b = params.bias[None, :, None, None]
    np.testing.assert_allclose(out2.data - b, lam * (out1.data - b), rtol=1e-12)


def test_unit_confidence_reduces_to_no_confidence():
    rng = np.random.default_rng(23)
    params = _params(rng, 2, 2, 3)
    v = Tensor(rng.normal(size=(1, 2, 5, 6)))
    f = Tensor(rng.normal(size=(1, 2, 5, 6)))
    ones = Tensor(np.ones((1, 1, 5, 6)))
    for mode in MODES:
        with_c, _ = adaptive_conv_forward(
            v, params, AdaptiveConvConfig(mode=mode, features=f, confidences=ones))
        without, _ = adaptive_conv_forward(
            v, params, AdaptiveConvConfig(mode=mode, features=f))
        np.testing.assert_allclose(with_c.data, without.data, rtol=1e-13)


def test_constant_features_reduce_to_plain_conv():
    rng = np.random.default_rng(24)
    params = _params(rng, 3, 2, 3)
    v = Tensor(rng.normal(size=(2, 2, 5, 5)))
    f = Tensor(np.full((2, 1, 5, 5), 0.7))
    out_f, _ = adaptive_conv_forward(v, params, AdaptiveConvConfig(features=f))
    out_p, _ = adaptive_conv_forward(v, params, AdaptiveConvConfig())
    np.testing.assert_allclose(out_f.data, out_p.data, rtol=1e-13)


def test_zero_confidence_yields_bias():
    # dead denominator is clamped to +eps, numerator is exactly zero
    rng = np.random.default_rng(25)
    params = _params(rng, 2, 2, 3)
    v = Tensor(rng.normal(size=(1, 2, 4, 4)))
    c = Tensor(np.zeros((1, 1, 4, 4)))
    cfg = AdaptiveConvConfig(mode=NormalizationMode.ADVANCED, confidences=c)
    out, cache = adaptive_conv_forward(v, params, cfg)
    expect = np.broadcast_to(params.bias[None, :, None, None], out.data.shape)
    np.testing.assert_allclose(out.data, expect, rtol=0, atol=1e-15)
    assert cache.den.min() > 0

    # backward stays finite through the clamp
    grads = adaptive_conv_backward(cache, Tensor(np.ones_like(out.data)))
    assert np.all(np.isfinite(grads.input))
    assert np.all(np.isfinite(grads.confidences))


def test_float32_dtypes_roundtrip():
    rng = np.random.default_rng(31)
    params = _params(rng, 2, 2, 3, dtype=np.float32)
    v = Tensor(rng.normal(size=(1, 2, 5, 5)).astype(np.float32))
    f = Tensor(rng.normal(size=(1, 1, 5, 5)).astype(np.float32))
    cfg = AdaptiveConvConfig(mode=NormalizationMode.ADVANCED, features=f)
    out, cache = adaptive_conv_forward(v, params, cfg)
    assert out.dtype == np.float32
    grads = adaptive_conv_backward(cache, Tensor(np.ones_like(out.data)))
    assert grads.input.dtype == np.float32
    assert grads.weight.dtype == np.float32
    assert grads.features.dtype == np.float32
    # float32 run agrees with the float64 oracle to single precision
    ref = reference_adaptive_conv(v.data, params.weight, params.bias,
                                  log_norm_weight=params.log_norm_weight,
                                  features=f.data, mode="advanced",
                                  epsilon_denom=default_epsilon_denom(np.float32))
    np.testing.assert_allclose(out.data, ref, rtol=2e-5, atol=2e-5)


def test_param_validation():
    with pytest.raises(ValueError):
        AdaptiveKernelParams(weight=np.zeros((2, 2, 4, 4)),
                             log_norm_weight=None, bias=np.zeros(2))
    with pytest.raises(ValueError):
        AdaptiveKernelParams(weight=np.zeros((2, 2, 3, 3)),
                             log_norm_weight=None, bias=np.zeros(3))
    with pytest.raises(ValueError):
        AdaptiveKernelParams(weight=np.zeros((2, 2, 3, 3)),
                             log_norm_weight=np.zeros((1, 1, 3, 3)), bias=np.zeros(2))
    with pytest.raises(ValueError):
        AdaptiveKernelParams(weight=np.zeros((2, 2, 3, 3)),
                             log_norm_weight=None, bias=np.zeros(2),
                             shared_channels=True)


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptiveConvConfig(confidences=Tensor(np.ones((1, 2, 4, 4))))
    with pytest.raises(ValueError):
        AdaptiveConvConfig(epsilon_denom=0.0)
    with pytest.raises(ValueError):
        AdaptiveConvConfig(epsilon_denom=-1e-8)
