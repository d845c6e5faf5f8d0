"""Procedural articulated-silhouette depth videos for desk-scale runs.

Each class is a walking figure with its own body proportions (height,
torso width, limb length and thickness, head size, gait period, arm
swing). Frames are 512x424 16-bit depth maps in millimeters with the
person at 1.5 to 3.5 m, plus body-index masks. Classes are separated by
proportions rather than absolute size, since the preprocessing crop
normalizes scale away.

Corrupted frames model sensor dropout: every pixel moves beyond 4 m
(uniform far-range clutter) while the mask still marks the person, so
the gray mapping turns the whole crop into background. These are the
frames temporal attention should learn to discount.

RGB mode renders the same geometry as shaded color images (the transfer
source twin): a bright backdrop with the body's luminance following the
same distance trend the depth gray mapping produces, and the class color
carried in the channel ratios. That keeps the two modalities'
preprocessed inputs structurally alike, which is the point of a transfer
twin. Corruption is a depth artifact and does not affect RGB rendering.

Everything derives from one seed: the same seed yields bit-identical
files.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

FRAME_WIDTH = 512
FRAME_HEIGHT = 424
FOCAL_PX = 365.0
RENDER_MODES = ("depth", "rgb")
MIN_DISTANCE_M = 1.5
MAX_DISTANCE_M = 3.5
FAR_CLUTTER_MM = (4500.0, 7500.0)


@dataclass(frozen=True)
class SyntheticConfig:
    n_classes: int = 8
    sequences_per_class: int = 10
    frames_per_sequence: int = 12
    noise_mm: float = 12.0
    corruption_probability: float = 0.3
    render_mode: str = "depth"

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if min(self.sequences_per_class, self.frames_per_sequence) < 1:
            raise ValueError("sequence and frame counts must be positive")
        if not 0.0 <= self.corruption_probability <= 1.0:
            raise ValueError("corruption probability must lie in [0, 1]")
        if self.noise_mm < 0:
            raise ValueError("noise level must be nonnegative")
        if self.render_mode not in RENDER_MODES:
            raise ValueError(f"render mode must be one of {RENDER_MODES}")


def class_shape_params(config, rng):
    """Per-class body parameters, drawn once from the dataset stream.

    Values are spread over ranges wide enough that crops of different
    classes differ visibly after scale normalization.
    """
    stream = rng.child("classes")
    params = []
    for cls in range(config.n_classes):
        u = stream.uniform((7,))
        params.append({
            "height_m": 1.5 + 0.45 * u[0],
            "torso_width": 0.75 + 0.6 * u[1],
            "limb_length": 0.85 + 0.35 * u[2],
            "limb_thickness": 0.7 + 0.7 * u[3],
            "head_size": 0.75 + 0.55 * u[4],
            "gait_period": 7.0 + 5.0 * u[5],
            "arm_swing": 0.35 + 0.5 * u[6],
            "color": tuple(
                int(60 + 170 * c) for c in stream.uniform((3,))),
        })
    return params


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / max(ry, 1e-9)) ** 2 + ((xx - cx) / max(rx, 1e-9)) ** 2 <= 1.0


def _capsule(yy, xx, y0, x0, y1, x1, radius):
    """Pixels within ``radius`` of the segment (y0,x0)-(y1,x1)."""
    dy, dx = y1 - y0, x1 - x0
    norm2 = dy * dy + dx * dx
    if norm2 < 1e-12:
        return _ellipse(yy, xx, y0, x0, radius, radius)
    t = ((yy - y0) * dy + (xx - x0) * dx) / norm2
    t = np.clip(t, 0.0, 1.0)
    py, px = y0 + t * dy, x0 + t * dx
    return (yy - py) ** 2 + (xx - px) ** 2 <= radius * radius


def render_pose(shape, distance_m, lateral_px, phase):
    """Rasterize one pose. Returns (mask, depth_offset_mm) maps.

    ``depth_offset_mm`` holds per-pixel offsets from the body distance
    (arms swing toward and away from the camera); zero outside the mask.
    """
    yy, xx = np.mgrid[0:FRAME_HEIGHT, 0:FRAME_WIDTH].astype(np.float64)
    h_px = shape["height_m"] / distance_m * FOCAL_PX
    x_c = FRAME_WIDTH / 2.0 + lateral_px
    y_base = FRAME_HEIGHT / 2.0 + h_px / 2.0

    head_r = 0.075 * h_px * shape["head_size"]
    torso_ry = 0.26 * h_px
    torso_rx = 0.10 * h_px * shape["torso_width"]
    arm_len = 0.34 * h_px * shape["limb_length"]
    leg_len = 0.46 * h_px * shape["limb_length"]
    arm_r = max(0.022 * h_px * shape["limb_thickness"], 1.0)
    leg_r = max(0.034 * h_px * shape["limb_thickness"], 1.0)
    shoulder_y = y_base - 0.76 * h_px
    hip_y = y_base - 0.47 * h_px

    swing = shape["arm_swing"] * np.sin(phase)
    leg_swing = 0.55 * shape["arm_swing"] * np.sin(phase)

    mask = np.zeros((FRAME_HEIGHT, FRAME_WIDTH), dtype=bool)
    offsets = np.zeros((FRAME_HEIGHT, FRAME_WIDTH))

    def add(part, offset_mm):
        nonlocal mask
        fresh = part & ~mask
        offsets[fresh] = offset_mm
        mask |= part

    # draw near parts first so their depth offsets win on overlap
    add(_capsule(yy, xx, shoulder_y, x_c - torso_rx,
                 shoulder_y + arm_len * np.cos(swing),
                 x_c - torso_rx - arm_len * np.sin(swing) * 0.4, arm_r),
        -60.0 * np.sin(phase))
    add(_capsule(yy, xx, shoulder_y, x_c + torso_rx,
                 shoulder_y + arm_len * np.cos(swing),
                 x_c + torso_rx + arm_len * np.sin(swing) * 0.4, arm_r),
        60.0 * np.sin(phase))
    add(_capsule(yy, xx, hip_y, x_c - 0.4 * torso_rx,
                 hip_y + leg_len * np.cos(leg_swing),
                 x_c - 0.4 * torso_rx - leg_len * np.sin(leg_swing), leg_r),
        20.0 * np.sin(phase))
    add(_capsule(yy, xx, hip_y, x_c + 0.4 * torso_rx,
                 hip_y + leg_len * np.cos(leg_swing),
                 x_c + 0.4 * torso_rx + leg_len * np.sin(leg_swing), leg_r),
        -20.0 * np.sin(phase))
    add(_ellipse(yy, xx, y_base - 0.90 * h_px, x_c, head_r, head_r), 15.0)
    add(_ellipse(yy, xx, shoulder_y + torso_ry, x_c, torso_ry, torso_rx), 0.0)
    return mask, offsets


def _depth_frame(shape, distance_m, lateral_px, phase, noise_mm, corrupted,
                 stream):
    mask, offsets = render_pose(shape, distance_m, lateral_px, phase)
    depth = np.zeros((FRAME_HEIGHT, FRAME_WIDTH))
    if corrupted:
        lo, hi = FAR_CLUTTER_MM
        depth[:] = lo + (hi - lo) * stream.uniform(depth.shape)
    else:
        body = distance_m * 1000.0 + offsets
        if noise_mm > 0:
            body = body + noise_mm * stream.normal(depth.shape)
        depth[mask] = np.clip(body[mask], 900.0, 3900.0)
    return np.round(depth).astype(np.uint16), mask


def _rgb_frame(shape, distance_m, lateral_px, phase, stream):
    mask, offsets = render_pose(shape, distance_m, lateral_px, phase)
    img = np.empty((FRAME_HEIGHT, FRAME_WIDTH, 3))
    img[:] = 250.0 + 3.0 * stream.normal((FRAME_HEIGHT, FRAME_WIDTH, 1))
    # body luminance tracks distance the way the depth gray mapping does
    depth_like = np.clip(
        (distance_m * 1000.0 + offsets - 800.0) / 3200.0, 0.0, 1.0)
    for c, base in enumerate(shape["color"]):
        channel = img[..., c]
        channel[mask] = (40.0 + 120.0 * depth_like[mask]) * (base / 170.0)
    img += 4.0 * stream.normal(img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8), mask


def generate_synthetic(config, rng, out_root):
    """Write a synthetic dataset tree under ``out_root``.

    Layout follows the dataset grammar (person_<id>/seq_<id>/...), with
    zero-padded frame numbers. Returns the number of frames written.

    Poses draw from a stream separate from pixel noise, so depth and RGB
    renders of the same seed share frame-for-frame geometry.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    shapes = class_shape_params(config, rng)
    frames_n = config.frames_per_sequence
    written = 0
    for cls in range(config.n_classes):
        shape = shapes[cls]
        for seq in range(config.sequences_per_class):
            stream = rng.child(f"person{cls + 1}/seq{seq + 1}")
            pose = stream.child("pose")
            noise = stream.child("noise")
            seq_dir = out_root / f"person_{cls + 1}" / f"seq_{seq + 1}"
            seq_dir.mkdir(parents=True, exist_ok=True)
            distance = MIN_DISTANCE_M + (MAX_DISTANCE_M - MIN_DISTANCE_M - 0.2) \
                * float(pose.uniform(()))
            lateral = (float(pose.uniform(())) - 0.5) * 120.0
            phase0 = float(pose.uniform(())) * 2.0 * np.pi
            corrupt_draws = pose.uniform((frames_n,))
            dist_walk = 0.01 * pose.normal((frames_n,))
            lat_walk = 2.0 * pose.normal((frames_n,))
            for t in range(frames_n):
                phase = phase0 + 2.0 * np.pi * t / shape["gait_period"]
                dist_t = float(np.clip(distance + dist_walk[t],
                                       MIN_DISTANCE_M, MAX_DISTANCE_M))
                lat_t = lateral + lat_walk[t]
                corrupted = corrupt_draws[t] < config.corruption_probability
                if config.render_mode == "depth":
                    frame, mask = _depth_frame(
                        shape, dist_t, lat_t, phase, config.noise_mm,
                        corrupted, noise)
                    img = Image.fromarray(frame)
                else:
                    frame, mask = _rgb_frame(shape, dist_t, lat_t, phase,
                                             noise)
                    img = Image.fromarray(frame)
                img.save(seq_dir / f"frame_{t:03d}.png")
                mask_img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8))
                mask_img.save(seq_dir / f"mask_{t:03d}.png")
                written += 1
    return written
