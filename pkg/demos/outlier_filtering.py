"""Confidence-weighted filtering removing an outlier a plain blur cannot.

A 7x7 two-object image carries one corrupted center pixel (value 10
instead of 1) that a downstream consumer flagged with confidence 0.02.
The same 5x5 averaging kernel is applied three ways:

  1. plain convolution: the outlier smears into its neighborhood
  2. feature-adaptive: object boundaries are respected, the outlier stays
  3. confidence-adaptive with advanced normalization: the outlier is
     written over by its trusted neighbors

Run: python3 demos/outlier_filtering.py
"""
import numpy as np

from ppac.adaptive_conv import (AdaptiveConvConfig, AdaptiveKernelParams,
                                NormalizationMode, adaptive_conv_forward)
from ppac.tensor import Tensor

h = w = 7
labels = np.zeros((h, w))
labels[:, 4:] = 1.0  # object A: columns 0..3, object B: columns 4..6

values = np.where(labels == 0, 1.0, -3.0)
values[3, 3] = 10.0  # the corrupted measurement inside object A

confidence = np.where(labels == 0, 0.9, 0.9)
confidence[3, 3] = 0.02  # flagged as untrustworthy

# widely separated per-object features: the RBF kernel between objects
# underflows to zero, so filtering never mixes A with B
features = labels * 10.0

weight = np.full((1, 1, 5, 5), 1.0 / 25.0)
params = AdaptiveKernelParams(weight=weight, log_norm_weight=np.log(weight),
                              bias=np.zeros(1), shared_channels=True)

v = Tensor(values[None, None])
f = Tensor(features[None, None])
c = Tensor(confidence[None, None])


def filtered(cfg):
    out, _ = adaptive_conv_forward(v, params, cfg)
    return out.data[0, 0]


plain = filtered(AdaptiveConvConfig(mode=NormalizationMode.ADVANCED))
feature_only = filtered(AdaptiveConvConfig(mode=NormalizationMode.ADVANCED,
                                           features=f))
confidence_too = filtered(AdaptiveConvConfig(mode=NormalizationMode.ADVANCED,
                                             features=f, confidences=c))

print("input center value:          ", values[3, 3])
print("plain average:               ", round(plain[3, 3], 4))
print("feature-adaptive average:    ", round(feature_only[3, 3], 4))
print("confidence + feature average:", round(confidence_too[3, 3], 4))
print()
print("true object-A value is 1.0; only the confidence-weighted pass",
      "recovers it:", round(abs(confidence_too[3, 3] - 1.0), 4), "away")

# the boundary column of object B is untouched by A's values in both
# adaptive passes, while the plain average bleeds across
print()
print("object-B pixel next to the boundary (row 3, col 4):")
print("  plain:              ", round(plain[3, 4], 4))
print("  feature-adaptive:   ", round(feature_only[3, 4], 4))
print("  confidence-adaptive:", round(confidence_too[3, 4], 4), "(exactly -3)")
