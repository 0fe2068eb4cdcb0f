"""The on-disk formats: flow fields, float maps, checkpoints, scenes.

Everything numeric round-trips bitwise, which the test suite enforces on
random payloads.  This script writes one of each into a scratch
directory and reads it back:

* ``.flo``        two-channel float32 flow, little-endian, magic-tagged
* ``.pfm``        single-channel float map, one file per channel for
                  multi-channel stacks (``.c<k>.pfm``)
* ``.ckpt``       network checkpoint: kind/task/mode tags, every
                  parameter, and Adam state, so training can resume
* scene + manifest  a full synthetic dataset directory

Run: python3 demos/file_roundtrips.py
"""
import tempfile
from pathlib import Path

import numpy as np

from ppac import fileio
from ppac.datagen import SceneSpec, generate_dataset
from ppac.networks import build_net

rng = np.random.default_rng(5)
root = Path(tempfile.mkdtemp(prefix="ppac-formats-"))
print("scratch dir:", root, "\n")

flow = rng.normal(scale=4.0, size=(2, 30, 40)).astype(np.float32)
fileio.write_flo(root / "field.flo", flow)
back = fileio.read_flo(root / "field.flo")
print("flo      ", flow.shape, "bitwise equal:", np.array_equal(back, flow))

fmap = rng.normal(size=(25, 35)).astype(np.float32)
fileio.write_float_map(root / "map.pfm", fmap)
back = fileio.read_float_map(root / "map.pfm")
print("float map", fmap.shape, "bitwise equal:", np.array_equal(back, fmap))

stack = rng.normal(size=(5, 16, 20)).astype(np.float32)
paths = fileio.write_channels(root / "logp", stack)
back = fileio.read_channels(root / "logp", count=5)
print("channels ", stack.shape, "bitwise equal:", np.array_equal(back, stack),
      f"({len(paths)} files)")

net = build_net("ppac", "flow", seed=4)
fileio.save_checkpoint(root / "net.ckpt", net)
again = fileio.load_checkpoint(root / "net.ckpt")
same = all(np.array_equal(p.value, q.value)
           for p, q in zip(net.store, again.store))
print("checkpoint", f"{root.joinpath('net.ckpt').stat().st_size} bytes,",
      "parameters bitwise equal:", same,
      f"(kind={again.kind}, task={again.task}, mode={again.mode.value})")

spec = SceneSpec(task="flow", h=32, w=40)
scenes = generate_dataset(spec, count=3, seed=8)
fileio.save_dataset(root / "data", scenes, spec, seed=8)
loaded = fileio.load_dataset(root / "data")
same_flow = np.array_equal(loaded[0].corrupted, scenes[0].corrupted)
print("dataset  ", len(loaded), "scenes, corrupted field bitwise equal:",
      same_flow)
n_files = sum(1 for _ in (root / "data").iterdir())
print("          manifest + per-scene files:", n_files)
