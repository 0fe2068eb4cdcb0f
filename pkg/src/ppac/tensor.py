"""Minimal dense NCHW tensor with padding, resampling, and aligned cropping.

Everything downstream (filtering kernels, networks, data generation) moves
data around as 4-D (batch, channels, height, width) float arrays.  This
module pins down the one layout and the handful of shape operations they
all share.  Values are required to be finite; NaN/Inf anywhere is treated
as a bug and raised immediately rather than propagated.
"""
from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense 4-D array (batch, channels, height, width), float32 or float64.

    Data is stored row-major.  Tensors are treated as immutable by every
    public operation in this package; only the optimizer mutates parameter
    buffers, and those are kept as raw numpy arrays, not Tensors.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float64
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.ndim != 4:
            raise ValueError(f"expected 4-D (n, d, h, w) data, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        self.data = arr

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, dtype=dtype)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        n, d, h, w = self.shape
        return f"Tensor(n={n}, d={d}, h={h}, w={w}, dtype={self.data.dtype})"


def zero_pad(t: Tensor, margin: int) -> Tensor:
    """Pad the two spatial axes with `margin` zeros on every side."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if margin == 0:
        return Tensor(t.data)
    out = np.pad(t.data, ((0, 0), (0, 0), (margin, margin), (margin, margin)))
    return Tensor(out)


def center_crop(t: Tensor, margin: int) -> Tensor:
    """Remove `margin` pixels from every spatial side; inverse of zero_pad."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if margin == 0:
        return Tensor(t.data)
    n, d, h, w = t.shape
    if h <= 2 * margin or w <= 2 * margin:
        raise ValueError(f"cannot crop margin {margin} from {h}x{w}")
    return Tensor(t.data[:, :, margin:h - margin, margin:w - margin])


def _source_coords(out_size: int, in_size: int, dtype) -> np.ndarray:
    # align-corners-false: sample centers at (i + 0.5) * scale - 0.5
    scale = in_size / out_size
    coords = (np.arange(out_size, dtype=dtype) + 0.5) * scale - 0.5
    return coords


def resample(t: Tensor, out_h: int, out_w: int, mode: str = "bilinear") -> Tensor:
    """Spatially resize to (out_h, out_w) with nearest or bilinear sampling.

    Sample positions follow the align-corners-false convention and are
    clamped at the image border, so resampling to the input size is the
    identity in both modes.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resampling mode {mode!r}")
    n, d, h, w = t.shape
    if (out_h, out_w) == (h, w):
        return Tensor(t.data)

    ys = _source_coords(out_h, h, np.float64)
    xs = _source_coords(out_w, w, np.float64)
    if mode == "nearest":
        yi = np.clip(np.floor(ys + 0.5).astype(np.intp), 0, h - 1)
        xi = np.clip(np.floor(xs + 0.5).astype(np.intp), 0, w - 1)
        out = t.data[:, :, yi[:, None], xi[None, :]]
        return Tensor(out)

    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(t.data.dtype)
    fx = (xs - x0).astype(t.data.dtype)

    top = t.data[:, :, y0[:, None], x0[None, :]] * (1 - fx) + t.data[:, :, y0[:, None], x1[None, :]] * fx
    bot = t.data[:, :, y1[:, None], x0[None, :]] * (1 - fx) + t.data[:, :, y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy[:, None]) + bot * fy[:, None]
    return Tensor(out)


def random_crop_pair(tensors: list[Tensor], crop_h: int, crop_w: int, rng_seed: int) -> list[Tensor]:
    """Crop every tensor at one shared random offset.

    All inputs must have the same spatial size; the offset is drawn
    uniformly from the valid range under `rng_seed`, so a fixed seed gives
    the same crop every time and cross-tensor pixel alignment is preserved.
    """
    if not tensors:
        return []
    h, w = tensors[0].shape[2], tensors[0].shape[3]
    for t in tensors:
        if t.shape[2] != h or t.shape[3] != w:
            raise ValueError("all tensors must share spatial size for an aligned crop")
    if crop_h > h or crop_w > w:
        raise ValueError(f"crop {crop_h}x{crop_w} larger than input {h}x{w}")
    if crop_h < 1 or crop_w < 1:
        raise ValueError("crop size must be >= 1")
    rng = np.random.default_rng(rng_seed)
    oy = int(rng.integers(0, h - crop_h + 1))
    ox = int(rng.integers(0, w - crop_w + 1))
    return [Tensor(t.data[:, :, oy:oy + crop_h, ox:ox + crop_w]) for t in tensors]
