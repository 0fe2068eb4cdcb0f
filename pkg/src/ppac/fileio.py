"""File formats: flow fields, float maps, images, checkpoints, and scene bundles.

Flow fields use the Middlebury ``.flo`` layout (float32 magic 202021.25,
int32 width/height, row-major interleaved u,v float32, little-endian).
Scalar float maps use a PFM-style format, one channel per file with the
suffix ``.c<k>.pfm``: ASCII header ``Pf\\n<w> <h>\\n-1.0\\n`` followed by
little-endian float32 rows written bottom-up.  Images and label maps are
8-bit PNG.  Checkpoints are a versioned binary of named arrays.  All of
these round-trip bitwise.
"""
from __future__ import annotations

import os
import struct

import numpy as np
from PIL import Image

from .datagen import SceneSpec, SyntheticScene

FLO_MAGIC = 202021.25
CHECKPOINT_MAGIC = b"PPAC0001"

_DTYPE_TAGS = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8"),
               "i4": np.dtype("<i4"), "i8": np.dtype("<i8")}


class FileFormatError(ValueError):
    """Malformed or mismatched file content."""


# ---------------------------------------------------------------- .flo

def write_flo(path, flow: np.ndarray) -> None:
    """Write a (2, h, w) flow field."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must be (2, h, w), got {flow.shape}")
    _, h, w = flow.shape
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[:, :, 0] = flow[0]
    inter[:, :, 1] = flow[1]
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(inter.tobytes())


def read_flo(path) -> np.ndarray:
    """Read a flow field as (2, h, w) float32."""
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) != 12:
            raise FileFormatError(f"{path}: truncated header")
        magic, w, h = struct.unpack("<fii", header)
        if magic != np.float32(FLO_MAGIC):
            raise FileFormatError(f"{path}: bad magic {magic!r}")
        if w <= 0 or h <= 0:
            raise FileFormatError(f"{path}: bad dimensions {w}x{h}")
        payload = f.read(h * w * 2 * 4)
        if len(payload) != h * w * 2 * 4 or f.read(1):
            raise FileFormatError(f"{path}: payload length mismatch")
    inter = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return np.ascontiguousarray(inter.transpose(2, 0, 1))


# ---------------------------------------------------------- float maps

def write_float_map(path, data: np.ndarray) -> None:
    """Write one (h, w) float32 map in the PFM-style format."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f"float map must be 2-D, got {data.shape}")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(data[::-1].astype("<f4").tobytes())


def read_float_map(path) -> np.ndarray:
    """Read one (h, w) float32 map."""
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"Pf":
        raise FileFormatError(f"{path}: bad float map header")
    try:
        w, h = (int(t) for t in parts[1].split())
        scale = float(parts[2])
    except ValueError as e:
        raise FileFormatError(f"{path}: bad float map header") from e
    if scale != -1.0:
        raise FileFormatError(f"{path}: expected little-endian scale -1.0")
    payload = parts[3]
    if len(payload) != h * w * 4:
        raise FileFormatError(f"{path}: payload length mismatch")
    rows = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    return np.ascontiguousarray(rows[::-1])


def write_channels(prefix, data: np.ndarray) -> list[str]:
    """Write (c, h, w) as one float map per channel: <prefix>.c<k>.pfm."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected (c, h, w), got {data.shape}")
    paths = []
    for k in range(data.shape[0]):
        p = f"{prefix}.c{k}.pfm"
        write_float_map(p, data[k])
        paths.append(p)
    return paths


def read_channels(prefix, count: int) -> np.ndarray:
    """Read ``count`` per-channel float maps back into (c, h, w)."""
    chans = []
    for k in range(count):
        p = f"{prefix}.c{k}.pfm"
        if not os.path.exists(p):
            raise FileFormatError(f"missing channel file {p} (channel {k})")
        chans.append(read_float_map(p))
    return np.stack(chans)


# ---------------------------------------------------------------- PNG

def write_png_image(path, rgb01: np.ndarray) -> None:
    """Write a (3, h, w) float image with values in [0, 1] as 8-bit PNG."""
    rgb01 = np.asarray(rgb01)
    if rgb01.ndim != 3 or rgb01.shape[0] != 3:
        raise ValueError(f"expected (3, h, w), got {rgb01.shape}")
    u8 = np.clip(np.rint(rgb01 * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path)


def read_png_image(path) -> np.ndarray:
    """Read an RGB PNG back to (3, h, w) float32 in [0, 1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_png_labels(path, labels: np.ndarray) -> None:
    """Write an (h, w) integer label map (0..255) as 8-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"expected (h, w), got {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must fit in uint8")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def read_png_labels(path) -> np.ndarray:
    """Read an 8-bit label map as (h, w) int32."""
    return np.asarray(Image.open(path).convert("L"), dtype=np.int32)


# --------------------------------------------------------- checkpoints

def _write_record(f, name: str, arr: np.ndarray) -> None:
    tag = arr.dtype.str.lstrip("<>|=")
    if tag not in _DTYPE_TAGS:
        raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(tag.encode("ascii"))
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(np.ascontiguousarray(arr).astype(_DTYPE_TAGS[tag]).tobytes())


def _read_record(f):
    head = f.read(4)
    if not head:
        return None
    (name_len,) = struct.unpack("<I", head)
    name = f.read(name_len).decode("utf-8")
    tag = f.read(2).decode("ascii")
    if tag not in _DTYPE_TAGS:
        raise FileFormatError(f"record {name!r}: unknown dtype tag {tag!r}")
    (rank,) = struct.unpack("<I", f.read(4))
    dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
    dtype = _DTYPE_TAGS[tag]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    raw = f.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise FileFormatError(f"record {name!r}: truncated payload")
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return name, arr


def _write_tag(f, value: str) -> None:
    vb = value.encode("ascii")
    f.write(struct.pack("<I", len(vb)))
    f.write(vb)


def _read_tag(f) -> str:
    (n,) = struct.unpack("<I", f.read(4))
    return f.read(n).decode("ascii")


def save_checkpoint(path, net) -> None:
    """Binary checkpoint: header tags, parameters, then optimizer state.

    Header tags are kind, task, and normalization mode, enough to rebuild
    the architecture before loading values.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        _write_tag(f, net.kind)
        _write_tag(f, net.task)
        _write_tag(f, net.mode.value)
        params = list(net.store)
        f.write(struct.pack("<I", len(params)))
        for p in params:
            _write_record(f, p.name, p.value)
        state = net.store.state_arrays()
        f.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            _write_record(f, name, arr)


def load_checkpoint(path, build=None):
    """Rebuild the network stored at ``path``.

    ``build`` defaults to :func:`ppac.networks.build_net`; it is called as
    build(kind, task, mode=..., dtype=...) and the stored values are copied
    into the fresh network, optimizer state included.
    """
    from .networks import build_net
    from .adaptive_conv import NormalizationMode
    if build is None:
        build = build_net

    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FileFormatError(f"{path}: bad checkpoint magic {magic!r}")
        kind = _read_tag(f)
        task = _read_tag(f)
        mode = _read_tag(f)
        (n_params,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(n_params):
            rec = _read_record(f)
            if rec is None:
                raise FileFormatError(f"{path}: truncated parameter section")
            params[rec[0]] = rec[1]
        (n_state,) = struct.unpack("<I", f.read(4))
        state = {}
        for _ in range(n_state):
            rec = _read_record(f)
            if rec is None:
                raise FileFormatError(f"{path}: truncated state section")
            state[rec[0]] = rec[1]

    dtype = None
    for arr in params.values():
        dtype = arr.dtype
        break
    net = build(kind, task, mode=NormalizationMode(mode), dtype=dtype)
    stored = set(params)
    expected = set(net.store.names())
    if stored != expected:
        raise FileFormatError(f"{path}: parameter names do not match the "
                              f"{kind}/{task} architecture")
    for p in net.store:
        arr = params[p.name]
        if arr.shape != p.value.shape:
            raise FileFormatError(f"{path}: shape mismatch for {p.name}")
        np.copyto(p.value, arr)
    net.store.load_state_arrays(state)
    return net


# -------------------------------------------------------- scene bundles

def _scene_prefix(out_dir, index: int) -> str:
    return os.path.join(out_dir, f"scene_{index:04d}")


def save_scene(out_dir, index: int, scene: SyntheticScene) -> str:
    """Write one scene's files under ``out_dir``; returns the name prefix."""
    prefix = _scene_prefix(out_dir, index)
    write_png_image(prefix + "_guidance.png", scene.guidance)
    write_png_labels(prefix + "_labels.png", scene.labels)
    write_channels(prefix + "_confidence", scene.confidence)
    write_channels(prefix + "_logprob", scene.log_prob_stack)
    if scene.spec.task == "flow":
        write_flo(prefix + "_gt.flo", scene.gt_field)
        write_flo(prefix + "_corrupt.flo", scene.corrupted)
    else:
        write_png_labels(prefix + "_gt.png", scene.gt_field[0])
        write_channels(prefix + "_corrupt", scene.corrupted)
    return os.path.basename(prefix)


def load_scene(out_dir, index: int, spec: SceneSpec) -> SyntheticScene:
    """Inverse of :func:`save_scene` (guidance comes back 8-bit quantized)."""
    prefix = _scene_prefix(out_dir, index)
    guidance = read_png_image(prefix + "_guidance.png")
    labels = read_png_labels(prefix + "_labels.png")
    confidence = read_channels(prefix + "_confidence", 1)
    log_prob = read_channels(prefix + "_logprob", spec.probability_channels)
    if spec.task == "flow":
        gt = read_flo(prefix + "_gt.flo")
        corrupted = read_flo(prefix + "_corrupt.flo")
    else:
        gt = read_png_labels(prefix + "_gt.png")[None].astype(np.int32)
        corrupted = read_channels(prefix + "_corrupt", spec.field_channels)
    return SyntheticScene(spec=spec, seed=-1, guidance=guidance, labels=labels,
                          gt_field=gt, corrupted=corrupted,
                          confidence=confidence, log_prob_stack=log_prob)


MANIFEST_NAME = "manifest.txt"


def save_dataset(out_dir, scenes, spec: SceneSpec, seed: int) -> str:
    """Write scenes plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [
        f"task={spec.task}", f"h={spec.h}", f"w={spec.w}",
        f"n_objects={spec.n_objects}",
        f"outlier_density={spec.outlier_density!r}",
        f"blur_radius={spec.blur_radius!r}",
        f"seed={seed}", f"count={len(scenes)}",
    ]
    for i, scene in enumerate(scenes):
        lines.append(f"scene={save_scene(out_dir, i, scene)}")
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


def load_dataset(data_dir) -> list[SyntheticScene]:
    """Read back every scene listed in a dataset manifest."""
    path = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise FileFormatError(f"no {MANIFEST_NAME} in {data_dir}")
    meta = {}
    names = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key == "scene":
                names.append(value)
            else:
                meta[key] = value
    try:
        spec = SceneSpec(h=int(meta["h"]), w=int(meta["w"]),
                         n_objects=int(meta["n_objects"]),
                         outlier_density=float(meta["outlier_density"]),
                         blur_radius=float(meta["blur_radius"]),
                         task=meta["task"])
        count = int(meta["count"])
    except (KeyError, ValueError) as e:
        raise FileFormatError(f"{path}: bad manifest: {e}") from e
    if count != len(names):
        raise FileFormatError(f"{path}: count={count} but {len(names)} scenes listed")
    return [load_scene(data_dir, i, spec) for i in range(len(names))]
