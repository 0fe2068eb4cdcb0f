"""Check hand-written backward passes against finite differences.

Every gradient in this library is derived and coded by hand, so each
layer and each full network is verified against central finite
differences of a random projection loss.  This script runs the same
checks the CLI `gradcheck` subcommand uses, on a few representative
configurations, and prints the worst relative error for each.

It also prints the exact trainable parameter counts of the five
architecture variants; these are locked down in the test suite.

Run: python3 demos/gradient_verification.py
"""
import numpy as np

from ppac.adaptive_conv import (AdaptiveConvConfig, AdaptiveKernelParams,
                                NormalizationMode)
from ppac.gradcheck import check_adaptive_conv, check_network
from ppac.networks import NetInputs, build_net, parameter_count
from ppac.tensor import Tensor

rng = np.random.default_rng(42)
n, c, h, w = 1, 2, 5, 6

x = Tensor(rng.normal(size=(n, c, h, w)))
features = Tensor(rng.normal(size=(n, 3, h, w)))
confidences = Tensor(rng.uniform(0.1, 1.0, size=(n, 1, h, w)))

print("single adaptive layer, 3x3, all normalization modes:")
for mode in NormalizationMode:
    weight = rng.normal(scale=0.3, size=(c, c, 3, 3))
    params = AdaptiveKernelParams(
        weight=weight,
        log_norm_weight=rng.normal(scale=0.2, size=weight.shape),
        bias=rng.normal(scale=0.1, size=c))
    cfg = AdaptiveConvConfig(mode=mode, features=features,
                             confidences=confidences)
    print(f"  {mode.value:<10}", check_adaptive_conv(params, cfg, x, seed=0))

print("\nfull refinement networks (subsampled coordinates):")
for kind in ("ppac", "pac", "simple"):
    net = build_net(kind, "flow", seed=3, dtype=np.float64)
    inputs = NetInputs(
        estimate=Tensor(rng.normal(size=(1, 2, h, w))),
        log_probability=Tensor(rng.normal(size=(1, 5, h, w)) - 1.0),
        guidance=Tensor(rng.uniform(-1, 1, size=(1, 3, h, w))))
    print(f"  {kind:<10}", check_network(net, inputs, max_coords=200, seed=1))

print("\ntrainable parameter counts:")
for kind, task in [("ppac", "flow"), ("ppac", "segmentation"),
                   ("pac", "flow"), ("pac", "segmentation"),
                   ("simple", "flow")]:
    print(f"  {kind + '-' + task:<19} {parameter_count(kind, task):>6}")
