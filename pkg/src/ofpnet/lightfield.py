"""Light field container types and pixel-level operations.

Conventions used throughout the package:

* A light field is a float32 array of shape (U, V, H, W, C) with values in
  [0, 1]. (u, v) indexes the angular grid row-major from the top-left view,
  (y, x) the spatial grid, and C is 3 for RGB/YCbCr or 1 for luma only.
* Color conversion follows BT.601 with full-range quantization: Y spans
  [0, 1] and the chroma planes are offset by +0.5.
* Resampling is separable Catmull-Rom bicubic (a = -0.5) with half-pixel
  centre alignment, mirror padding without edge repetition, and kernel
  widening (antialiasing) on downscale. Weights are renormalized per output
  pixel so constants are preserved exactly and factor 1 is the identity.
* Epipolar plane images fix one angular and one spatial index: a horizontal
  EPI fixes (u, y) and stacks row y of each view v, giving a (V, W) image
  whose line slopes equal disparity in pixels per view.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BoundsError,
    ColorspaceError,
    InconsistentViews,
    MissingView,
    RangeError,
    SizeError,
)

VIEW_FILE_RE = re.compile(r"view_(\d+)_(\d+)\.png$")

# BT.601 luma weights; the chroma scales follow from Kr and Kb.
_KR, _KG, _KB = 0.299, 0.587, 0.114


class Colorspace(enum.Enum):
    RGB = "rgb"
    YCBCR = "ycbcr"
    Y = "y"


class ScaleTag(enum.Enum):
    GT = "gt"
    LR_X2 = "lr_x2"
    LR_X4 = "lr_x4"
    SR = "sr"


_CHANNELS = {Colorspace.RGB: 3, Colorspace.YCBCR: 3, Colorspace.Y: 1}


def scale_tag_for(factor: int) -> ScaleTag:
    """Map an integer downscaling factor to the directory tag."""
    tags = {1: ScaleTag.GT, 2: ScaleTag.LR_X2, 4: ScaleTag.LR_X4}
    if factor not in tags:
        raise ValueError(f"no scale tag for factor {factor}")
    return tags[factor]


@dataclass
class LightField:
    """A multi-view image block; see the module docstring for layout."""

    data: np.ndarray
    colorspace: Colorspace = Colorspace.RGB
    scale_tag: ScaleTag = ScaleTag.GT

    def __post_init__(self):
        if self.data.ndim != 5:
            raise SizeError(
                f"light field data must be (U, V, H, W, C), got shape {self.data.shape}"
            )
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        want = _CHANNELS[self.colorspace]
        if self.data.shape[-1] != want:
            raise ColorspaceError(
                f"{self.colorspace.value} expects {want} channels, got {self.data.shape[-1]}"
            )
        if not np.all(np.isfinite(self.data)):
            raise RangeError("light field contains non-finite samples")

    @property
    def angular_size(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def spatial_size(self) -> tuple[int, int]:
        return self.data.shape[2], self.data.shape[3]

    @property
    def num_views(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    def view(self, u: int, v: int) -> np.ndarray:
        """The (H, W, C) sub-aperture image at angular position (u, v)."""
        un, vn = self.angular_size
        if not (0 <= u < un and 0 <= v < vn):
            raise BoundsError(f"view ({u}, {v}) outside angular grid {un}x{vn}")
        return self.data[u, v]

    def clamped(self) -> "LightField":
        return replace(self, data=np.clip(self.data, 0.0, 1.0))


class EpiOrientation(enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass
class EpiImage:
    """A 2D epipolar slice; rows index views, columns index pixels."""

    data: np.ndarray
    orientation: EpiOrientation
    fixed_view: int
    fixed_line: int

    def __post_init__(self):
        if self.data.ndim != 2:
            raise SizeError(f"EPI data must be 2D, got shape {self.data.shape}")


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def load_lightfield(
    directory: str | Path,
    colorspace: Colorspace = Colorspace.RGB,
    scale_tag: ScaleTag = ScaleTag.GT,
) -> LightField:
    """Read a view directory of `view_{u}_{v}.png` files into a LightField.

    The angular grid is inferred from the largest indices present and must be
    complete. Views are decoded as 8-bit RGB and mapped to [0, 1]; the result
    is converted to the requested colorspace.
    """
    directory = Path(directory)
    found: dict[tuple[int, int], Path] = {}
    for path in directory.glob("view_*.png"):
        m = VIEW_FILE_RE.match(path.name)
        if m:
            found[(int(m.group(1)), int(m.group(2)))] = path
    if not found:
        raise MissingView(0, 0, str(directory))
    un = max(u for u, _ in found) + 1
    vn = max(v for _, v in found) + 1

    views = np.empty((un, vn), dtype=object)
    size = None
    for u in range(un):
        for v in range(vn):
            path = found.get((u, v))
            if path is None:
                raise MissingView(u, v, str(directory))
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            if size is None:
                size = arr.shape
            elif arr.shape != size:
                raise InconsistentViews(
                    f"view ({u}, {v}) has shape {arr.shape}, expected {size}"
                )
            views[u, v] = arr
    data = np.stack([np.stack(list(row)) for row in views])
    lf = LightField(data=data, colorspace=Colorspace.RGB, scale_tag=scale_tag)
    if colorspace is Colorspace.YCBCR:
        lf = rgb_to_ycbcr(lf)
    elif colorspace is Colorspace.Y:
        lf = extract_y(rgb_to_ycbcr(lf))
    return lf


def save_lightfield(lf: LightField, directory: str | Path) -> list[Path]:
    """Write each view as an 8-bit PNG, clamping to [0, 1] on quantization.

    YCbCr fields are converted back to RGB first; Y fields are written as
    grayscale.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if lf.colorspace is Colorspace.YCBCR:
        lf = ycbcr_to_rgb(lf)
    un, vn = lf.angular_size
    paths = []
    for u in range(un):
        for v in range(vn):
            arr = np.clip(lf.data[u, v], 0.0, 1.0)
            quant = np.round(arr * 255.0).astype(np.uint8)
            img = Image.fromarray(quant[..., 0] if quant.shape[-1] == 1 else quant)
            path = directory / f"view_{u}_{v}.png"
            img.save(path)
            paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Colorspace
# ---------------------------------------------------------------------------


def _ycbcr_matrices() -> tuple[np.ndarray, np.ndarray]:
    fwd = np.array(
        [
            [_KR, _KG, _KB],
            [-0.5 * _KR / (1 - _KB), -0.5 * _KG / (1 - _KB), 0.5],
            [0.5, -0.5 * _KG / (1 - _KR), -0.5 * _KB / (1 - _KR)],
        ],
        dtype=np.float64,
    )
    return fwd, np.linalg.inv(fwd)


_FWD, _INV = _ycbcr_matrices()
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5], dtype=np.float64)


def rgb_to_ycbcr(lf: LightField) -> LightField:
    """Full-range BT.601 conversion; chroma planes are offset to [0, 1]."""
    if lf.colorspace is not Colorspace.RGB:
        raise ColorspaceError(f"expected RGB input, got {lf.colorspace.value}")
    out = lf.data.astype(np.float64) @ _FWD.T + _CHROMA_OFFSET
    return LightField(
        data=out.astype(np.float32), colorspace=Colorspace.YCBCR, scale_tag=lf.scale_tag
    )


def ycbcr_to_rgb(lf: LightField) -> LightField:
    """Inverse of rgb_to_ycbcr; output clamped to [0, 1]."""
    if lf.colorspace is not Colorspace.YCBCR:
        raise ColorspaceError(f"expected YCbCr input, got {lf.colorspace.value}")
    out = (lf.data.astype(np.float64) - _CHROMA_OFFSET) @ _INV.T
    out = np.clip(out, 0.0, 1.0)
    return LightField(
        data=out.astype(np.float32), colorspace=Colorspace.RGB, scale_tag=lf.scale_tag
    )


def extract_y(lf: LightField) -> LightField:
    """Single-channel luma field from a YCbCr (or RGB) field."""
    if lf.colorspace is Colorspace.RGB:
        lf = rgb_to_ycbcr(lf)
    if lf.colorspace is Colorspace.Y:
        return lf
    return LightField(
        data=lf.data[..., :1].copy(), colorspace=Colorspace.Y, scale_tag=lf.scale_tag
    )


def replace_y(lf: LightField, y: LightField) -> LightField:
    """Swap the luma plane of a YCbCr field, keeping its chroma."""
    if lf.colorspace is not Colorspace.YCBCR:
        raise ColorspaceError("replace_y needs a YCbCr field")
    if y.colorspace is not Colorspace.Y:
        raise ColorspaceError("replacement plane must be Y")
    if y.data.shape[:4] != lf.data.shape[:4]:
        raise SizeError(f"luma shape {y.data.shape[:4]} != field shape {lf.data.shape[:4]}")
    data = lf.data.copy()
    data[..., 0] = y.data[..., 0]
    return LightField(data=data, colorspace=Colorspace.YCBCR, scale_tag=lf.scale_tag)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _catmull_rom(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    near = ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    far = ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    # Mirror without repeating the edge sample: ... 2 1 | 0 1 2 ... n-1 | n-2 ...
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic resampling operator for one axis."""
    factor = n_out / n_in
    scale = min(factor, 1.0)  # kernel widened on downscale
    support = 2.0 / scale
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    first = np.floor(src - support).astype(np.int64) + 1
    taps = int(np.ceil(2.0 * support))
    idx = first[:, None] + np.arange(taps)[None, :]
    w = _catmull_rom((idx - src[:, None]) * scale)
    w = w / w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(m, (rows, _reflect_index(idx, n_in).ravel()), w.ravel())
    return m


def _check_factor(n: int, factor: float, axis: str) -> int:
    out = n * factor
    if abs(out - round(out)) > 1e-9 or round(out) < 1:
        raise SizeError(f"factor {factor} gives non-integral {axis} size from {n}")
    return int(round(out))


def bicubic_resize(lf: LightField, factor: float) -> LightField:
    """Resample every view spatially by `factor` (same factor on both axes).

    Output dimensions must come out integral. Values may overshoot [0, 1];
    callers that persist results clamp at write time.
    """
    if factor <= 0:
        raise SizeError(f"resize factor must be positive, got {factor}")
    h, w = lf.spatial_size
    oh = _check_factor(h, factor, "height")
    ow = _check_factor(w, factor, "width")
    if factor == 1.0:
        return replace(lf, data=lf.data.copy())
    my = resize_matrix(h, oh)
    mx = resize_matrix(w, ow)
    data = lf.data.astype(np.float64)
    data = np.einsum("ij,uvjwc->uviwc", my, data)
    data = np.einsum("ij,uvhjc->uvhic", mx, data)
    return replace(lf, data=data.astype(np.float32))


def resize_views(views: np.ndarray, factor: float) -> np.ndarray:
    """bicubic_resize for a bare (..., H, W) float array."""
    h, w = views.shape[-2], views.shape[-1]
    oh = _check_factor(h, factor, "height")
    ow = _check_factor(w, factor, "width")
    if factor == 1.0:
        return views.copy()
    my = resize_matrix(h, oh)
    mx = resize_matrix(w, ow)
    out = np.einsum("ij,...jw->...iw", my, views.astype(np.float64))
    out = np.einsum("ij,...hj->...hi", mx, out)
    return out.astype(views.dtype)


# ---------------------------------------------------------------------------
# Patches and EPIs
# ---------------------------------------------------------------------------


def extract_patch(lf: LightField, y0: int, x0: int, size: int) -> LightField:
    """Crop a size x size window at (y0, x0) from every view."""
    h, w = lf.spatial_size
    if size < 1:
        raise BoundsError(f"patch size must be positive, got {size}")
    if y0 < 0 or x0 < 0 or y0 + size > h or x0 + size > w:
        raise BoundsError(
            f"patch ({y0}, {x0}, {size}) outside spatial extent {h}x{w}"
        )
    return replace(lf, data=lf.data[:, :, y0 : y0 + size, x0 : x0 + size].copy())


def extract_epi(
    lf: LightField,
    orientation: EpiOrientation,
    view_index: int,
    line_index: int,
) -> EpiImage:
    """Slice a single-channel field into an epipolar plane image.

    Horizontal: fix view row `view_index` (u) and image row `line_index` (y),
    stack across v -> (V, W). Vertical: fix view column (v) and image column
    (x), stack across u -> (U, H).
    """
    if lf.data.shape[-1] != 1:
        raise ColorspaceError("EPI extraction needs a single-channel (Y) field")
    un, vn = lf.angular_size
    h, w = lf.spatial_size
    if orientation is EpiOrientation.HORIZONTAL:
        if not 0 <= view_index < un:
            raise BoundsError(f"view row {view_index} outside 0..{un - 1}")
        if not 0 <= line_index < h:
            raise BoundsError(f"image row {line_index} outside 0..{h - 1}")
        data = lf.data[view_index, :, line_index, :, 0].copy()
    else:
        if not 0 <= view_index < vn:
            raise BoundsError(f"view column {view_index} outside 0..{vn - 1}")
        if not 0 <= line_index < w:
            raise BoundsError(f"image column {line_index} outside 0..{w - 1}")
        data = lf.data[:, view_index, :, line_index, 0].copy()
    return EpiImage(
        data=data,
        orientation=orientation,
        fixed_view=view_index,
        fixed_line=line_index,
    )
