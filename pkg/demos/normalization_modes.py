"""How the three normalization modes treat borders and uneven kernels.

The filtered value at a pixel divides (or does not) by different masses:

  none     raw weighted sum; whatever mass the kernel and the window
           deliver is what you get
  kernel   the RBF feature kernel is rescaled to sum to 1 per pixel
           before the convolution weight touches it
  advanced the whole response is divided by an auxiliary pass over an
           all-ones input using a positive weight W' = exp(log W')

The probe is a constant-1 image: a filter that claims to be an average
should return 1 everywhere, including corners.

Run: python3 demos/normalization_modes.py
"""
import numpy as np

from ppac.adaptive_conv import (AdaptiveConvConfig, AdaptiveKernelParams,
                                NormalizationMode, adaptive_conv_forward,
                                kernel_tensor)
from ppac.tensor import Tensor

rng = np.random.default_rng(0)
h = w = 6

ones = Tensor(np.ones((1, 1, h, w)))
features = Tensor(rng.normal(scale=0.6, size=(1, 2, h, w)))


def run(weight_value, mode):
    w3 = np.full((1, 1, 3, 3), weight_value)
    params = AdaptiveKernelParams(weight=w3, log_norm_weight=np.log(w3),
                                  bias=np.zeros(1), shared_channels=True)
    out, _ = adaptive_conv_forward(ones, params,
                                   AdaptiveConvConfig(mode=mode, features=features))
    return out.data[0, 0]


print("constant-1 input, 3x3 kernel, RBF features from a random image\n")
print(f"{'mode':<10}{'W':>6}{'corner':>10}{'edge':>10}{'interior':>10}")
for mode, wv in [(NormalizationMode.NONE, 1 / 9), (NormalizationMode.NONE, 1.0),
                 (NormalizationMode.KERNEL, 1.0),
                 (NormalizationMode.ADVANCED, 1 / 9)]:
    o = run(wv, mode)
    wl = "1/9" if wv != 1.0 else "1"
    print(f"{mode.value:<10}{wl:>6}{o[0, 0]:>10.4f}{o[0, 3]:>10.4f}{o[3, 3]:>10.4f}")

print("""
Without normalization the response depends on how many neighbors the
window catches and how well their features agree: a box average dims
and W = 1 overshoots, differently at every pixel.  Kernel normalization
gives the feature kernel unit mass per pixel, so W = 1 becomes an exact
average everywhere, borders included.  Advanced normalization divides
out whatever mass there is, so even an uneven positive W reproduces the
constant exactly.
""")

# kernel mode really does produce per-pixel unit tap mass
km = kernel_tensor(features, 3, mode=NormalizationMode.KERNEL)
sums = km.data.sum(axis=1)
print("kernel-mode tap sums: min", round(sums.min(), 12),
      "max", round(sums.max(), 12))

# the advanced denominator is what makes arbitrary positive kernels
# usable as averages
w_rand = rng.uniform(0.05, 0.3, size=(1, 1, 3, 3))
p_rand = AdaptiveKernelParams(weight=w_rand, log_norm_weight=np.log(w_rand),
                              bias=np.zeros(1), shared_channels=True)
out, _ = adaptive_conv_forward(ones, p_rand,
                               AdaptiveConvConfig(mode=NormalizationMode.ADVANCED,
                                                  features=features))
print("random positive kernel, advanced mode, constant input:",
      "max |out - 1| =", f"{np.abs(out.data - 1).max():.2e}")
