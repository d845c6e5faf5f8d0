"""Depth-frame preprocessing: range classes, gray mapping, crop, resize.

Raw frames are single-channel depth maps in millimeters (Kinect-style,
512x424). Pixels are classed by range, mapped to an 8-bit-like gray code
in [1, 256], cropped to the person, resized to 144x56 with bilinear
interpolation, and replicated to three identical channels for the network.

The gray mapping, with offset t_o (default 56):

    too-near             -> 1
    too-far or unknown   -> 256
    background (mask 0)  -> 256
    normal d in [800, 4000]
                         -> round(1 + (d - 800) * (256 - t_o - 1) / 3200)

rounding half to even. The resize grid uses half-pixel centers: source
coordinate (i + 0.5) * in/out - 0.5, edges clamped, so an identity resize
returns the input bit for bit and a 2x downsample averages 2x2 blocks.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .validation import NonFiniteError, ShapeError, check_ndim

GRAY_OFFSET = 56
NETWORK_INPUT_HEIGHT = 144
NETWORK_INPUT_WIDTH = 56
NETWORK_INPUT_SHAPE = (3, NETWORK_INPUT_HEIGHT, NETWORK_INPUT_WIDTH)

# model-side standardization, recorded in checkpoints
STANDARDIZE_MEAN = 128.0
STANDARDIZE_SCALE = 128.0


class DepthRange(enum.IntEnum):
    UNKNOWN = 0
    TOO_NEAR = 1
    NORMAL = 2
    TOO_FAR = 3


def classify_range(depth_mm):
    """Classify depth values (mm) into sensor range classes.

    [0, 400) and (8000, inf) are unknown, [400, 800) too near,
    [800, 4000] normal, (4000, 8000] too far. Every nonnegative finite
    value falls in exactly one class; negatives and NaN are rejected.
    """
    d = np.asarray(depth_mm, dtype=np.float64)
    if not np.isfinite(d).all():
        raise NonFiniteError("depth: contains non-finite values")
    if d.size and d.min() < 0:
        raise ValueError("depth: negative millimeter values")
    out = np.full(d.shape, int(DepthRange.UNKNOWN), dtype=np.int64)
    out[(d >= 400) & (d < 800)] = int(DepthRange.TOO_NEAR)
    out[(d >= 800) & (d <= 4000)] = int(DepthRange.NORMAL)
    out[(d > 4000) & (d <= 8000)] = int(DepthRange.TOO_FAR)
    return out


def make_gray(depth_mm, mask=None, offset=GRAY_OFFSET):
    """Map a depth crop to gray codes in [1, 256].

    ``mask`` (same shape, nonzero = person) forces background pixels to
    256 regardless of their depth.
    """
    offset = int(offset)
    if not 0 <= offset <= 254:
        raise ValueError(f"gray offset must lie in [0, 254], got {offset}")
    d = np.asarray(depth_mm, dtype=np.float64)
    classes = classify_range(d)
    gray = np.full(d.shape, 256, dtype=np.int32)  # unknown / too far
    gray[classes == DepthRange.TOO_NEAR] = 1
    normal = classes == DepthRange.NORMAL
    scale = (256.0 - offset - 1.0) / 3200.0
    gray[normal] = np.round(1.0 + (d[normal] - 800.0) * scale).astype(np.int32)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != d.shape:
            raise ShapeError(
                f"mask: expected shape {d.shape}, got {mask.shape}"
            )
        gray[mask == 0] = 256
    return gray


@dataclass(frozen=True)
class CropRect:
    """Rectangle in frame coordinates; height/width must be positive."""

    top: int
    left: int
    height: int
    width: int

    def check_within(self, shape):
        h, w = shape[-2], shape[-1]
        if self.height < 1 or self.width < 1:
            raise ShapeError(f"crop rectangle is empty: {self}")
        if (self.top < 0 or self.left < 0
                or self.top + self.height > h or self.left + self.width > w):
            raise ShapeError(f"crop rectangle {self} exceeds frame {h}x{w}")


def mask_bbox(mask, margin=0.05):
    """Bounding box of nonzero mask pixels, padded by ``margin`` of the box
    extent on each side and clipped to the frame."""
    mask = check_ndim(np.asarray(mask), 2, "mask")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask: no foreground pixels, cannot derive a crop")
    top, bottom = int(rows[0]), int(rows[-1])
    left, right = int(cols[0]), int(cols[-1])
    pad_r = int(round((bottom - top + 1) * margin))
    pad_c = int(round((right - left + 1) * margin))
    top = max(0, top - pad_r)
    bottom = min(mask.shape[0] - 1, bottom + pad_r)
    left = max(0, left - pad_c)
    right = min(mask.shape[1] - 1, right + pad_c)
    return CropRect(top, left, bottom - top + 1, right - left + 1)


def crop_person(frame, mask=None, rect=None, margin=0.05):
    """Cut the person region out of a full frame.

    Either an explicit ``rect`` (dataset annotation) or a ``mask`` to take
    the padded bounding box from must be supplied. Returns (crop,
    mask_crop_or_None, rect).
    """
    frame = np.asarray(frame)
    check_ndim(frame, 2, "frame")
    if rect is None:
        if mask is None:
            raise ValueError("crop_person needs a mask or an explicit rect")
        rect = mask_bbox(mask, margin)
    rect.check_within(frame.shape)
    sl = (slice(rect.top, rect.top + rect.height),
          slice(rect.left, rect.left + rect.width))
    mask_crop = None if mask is None else np.asarray(mask)[sl]
    return frame[sl], mask_crop, rect


def bilinear_resize(img, out_h, out_w):
    """Bilinear resize of a 2-d image, half-pixel-center sampling grid."""
    img = np.asarray(img, dtype=np.float64)
    check_ndim(img, 2, "image")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be positive, got {out_h}x{out_w}")
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    rows = img[y0, :] * (1.0 - fy) + img[y1, :] * fy
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def make_network_input(gray):
    """Resize a gray crop to 144x56 and replicate to 3 identical channels.

    Values stay in [1, 256]; standardization (subtract 128, divide by 128)
    happens inside the model so checkpoints can record the constants.
    """
    gray = np.asarray(gray)
    check_ndim(gray, 2, "gray crop")
    if gray.size == 0:
        raise ShapeError("gray crop is empty")
    if gray.min() < 1 or gray.max() > 256:
        raise ValueError(
            f"gray values must lie in [1, 256], found [{gray.min()}, {gray.max()}]"
        )
    plane = bilinear_resize(gray, NETWORK_INPUT_HEIGHT, NETWORK_INPUT_WIDTH)
    return np.repeat(plane[None, :, :], 3, axis=0)


def expand_channels(x):
    """Broadcast a (B, 1, H, W) frame store to the 3-channel input layout;
    3-channel input passes through."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] not in (1, 3):
        raise ShapeError(f"frames: expected (B, 1|3, H, W), got {x.shape}")
    if x.shape[1] == 1:
        return np.repeat(x, 3, axis=1)
    return x


def depth_frame_to_network_input(depth_mm, mask=None, rect=None,
                                 offset=GRAY_OFFSET, margin=0.05):
    """Full depth route: crop, gray-map, resize, replicate."""
    crop, mask_crop, _ = crop_person(depth_mm, mask=mask, rect=rect,
                                     margin=margin)
    return make_network_input(make_gray(crop, mask_crop, offset))


def rgb_frame_to_network_input(rgb, mask=None, rect=None, margin=0.05):
    """RGB route used by the transfer source: crop, per-channel resize,
    and shift [0, 255] to [1, 256] so both routes share the model-side
    standardization constants."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"rgb frame: expected (H, W, 3), got {rgb.shape}")
    if rect is None:
        if mask is None:
            raise ValueError("rgb route needs a mask or an explicit rect")
        rect = mask_bbox(mask, margin)
    rect.check_within(rgb.shape[:2])
    sl = (slice(rect.top, rect.top + rect.height),
          slice(rect.left, rect.left + rect.width))
    channels = [
        bilinear_resize(rgb[sl + (c,)].astype(np.float64) + 1.0,
                        NETWORK_INPUT_HEIGHT, NETWORK_INPUT_WIDTH)
        for c in range(3)
    ]
    return np.stack(channels, axis=0)
