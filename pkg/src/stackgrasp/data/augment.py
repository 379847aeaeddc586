"""Online augmentation: horizontal flip, isotropic scaling with centre crop/pad, HSV jitter.

Label transforms are exact; every coordinate goes through the same affine map
as the pixel grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..scene import GraspRect, ObjectBox, SceneAnnotation
from .images import hsv_to_rgb, resize, rgb_to_hsv


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    scale: float = 1.0
    hue_shift_deg: float = 0.0
    sat_gain: float = 1.0
    val_gain: float = 1.0


def sample_params(seed: int) -> AugmentParams:
    rng = np.random.default_rng(seed)
    return AugmentParams(
        flip=bool(rng.random() < 0.5),
        scale=float(rng.uniform(0.8, 1.25)),
        hue_shift_deg=float(rng.uniform(-10, 10)),
        sat_gain=float(rng.uniform(0.8, 1.2)),
        val_gain=float(rng.uniform(0.8, 1.2)),
    )


def flip_grasp(g: GraspRect, width: float) -> GraspRect:
    return GraspRect(width - g.cx, g.cy, g.w, g.h, -g.theta_deg, g.cls, g.confidence, g.owner)


def flip_box(o: ObjectBox, width: float) -> ObjectBox:
    return ObjectBox(o.id, o.cls, width - o.x2, o.y1, width - o.x1, o.y2, o.score)


def _affine_grasp(g: GraspRect, s: float, ox: float, oy: float) -> GraspRect:
    return GraspRect(g.cx * s - ox, g.cy * s - oy, g.w * s, g.h * s, g.theta_deg, g.cls, g.confidence, g.owner)


def _affine_box(o: ObjectBox, s: float, ox: float, oy: float, w: int, h: int) -> ObjectBox:
    x1 = min(max(o.x1 * s - ox, 0.0), w)
    y1 = min(max(o.y1 * s - oy, 0.0), h)
    x2 = min(max(o.x2 * s - ox, 0.0), w)
    y2 = min(max(o.y2 * s - oy, 0.0), h)
    # keep boxes valid even if scaled almost out of frame
    if x2 - x1 < 1.0:
        x1, x2 = (x1, x1 + 1.0) if x1 + 1.0 <= w else (x2 - 1.0, x2)
    if y2 - y1 < 1.0:
        y1, y2 = (y1, y1 + 1.0) if y1 + 1.0 <= h else (y2 - 1.0, y2)
    return ObjectBox(o.id, o.cls, x1, y1, x2, y2, o.score)


def _crop_or_pad(img: np.ndarray, out_hw: tuple[int, int], oy: int, ox: int, fill) -> np.ndarray:
    """Window of ``out_hw`` starting at (oy, ox) in ``img``; outside pixels get ``fill``."""
    h, w = out_hw
    out = np.empty((h, w, 3), dtype=np.uint8)
    out[:] = fill
    ys0, xs0 = max(oy, 0), max(ox, 0)
    ys1, xs1 = min(oy + h, img.shape[0]), min(ox + w, img.shape[1])
    if ys1 > ys0 and xs1 > xs0:
        out[ys0 - oy : ys1 - oy, xs0 - ox : xs1 - ox] = img[ys0:ys1, xs0:xs1]
    return out


def apply_augment(
    scene: SceneAnnotation, image: np.ndarray, p: AugmentParams, out_hw: Optional[tuple[int, int]] = None
) -> tuple[SceneAnnotation, np.ndarray]:
    out_hw = out_hw or (scene.height, scene.width)
    objects = list(scene.objects)
    grasps = list(scene.grasps)
    img = image
    if p.flip:
        objects = [flip_box(o, scene.width) for o in objects]
        grasps = [flip_grasp(g, scene.width) for g in grasps]
        img = img[:, ::-1]

    new_w = max(1, int(round(scene.width * p.scale)))
    s = new_w / scene.width
    new_h = max(1, int(round(scene.height * s)))
    if (new_h, new_w) != img.shape[:2]:
        img = resize(np.ascontiguousarray(img), (new_h, new_w))
    oy = (new_h - out_hw[0]) // 2
    ox = (new_w - out_hw[1]) // 2
    fill = tuple(int(v) for v in np.median(image.reshape(-1, 3), axis=0))
    img = _crop_or_pad(np.ascontiguousarray(img), out_hw, oy, ox, fill)
    objects = [_affine_box(o, s, ox, oy, out_hw[1], out_hw[0]) for o in objects]
    grasps = [_affine_grasp(g, s, ox, oy) for g in grasps]

    if p.hue_shift_deg or p.sat_gain != 1.0 or p.val_gain != 1.0:
        hsv = rgb_to_hsv(img.astype(float) / 255.0)
        hsv[..., 0] = (hsv[..., 0] + p.hue_shift_deg / 360.0) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * p.sat_gain, 0, 1)
        hsv[..., 2] = np.clip(hsv[..., 2] * p.val_gain, 0, 1)
        img = np.clip(np.round(hsv_to_rgb(hsv) * 255.0), 0, 255).astype(np.uint8)
    else:
        img = np.ascontiguousarray(img)

    out = scene.replace(width=out_hw[1], height=out_hw[0], objects=objects, grasps=grasps, pixels=img)
    return out, img


def augment(
    scene: SceneAnnotation, image: np.ndarray, seed: int, out_hw: Optional[tuple[int, int]] = None
) -> tuple[SceneAnnotation, np.ndarray]:
    """Seeded random flip / scale / colour jitter; relations are unchanged."""
    return apply_augment(scene, image, sample_params(seed), out_hw)


def eval_transform(
    scene: SceneAnnotation, image: np.ndarray, out_hw: tuple[int, int]
) -> tuple[SceneAnnotation, np.ndarray]:
    """Evaluation-time preprocessing: resize to ``out_hw`` only."""
    if image.shape[:2] == tuple(out_hw):
        return scene.replace(pixels=image), image
    sy = out_hw[0] / scene.height
    sx = out_hw[1] / scene.width
    img = resize(image, out_hw)
    objects = [ObjectBox(o.id, o.cls, o.x1 * sx, o.y1 * sy, o.x2 * sx, o.y2 * sy, o.score) for o in scene.objects]
    grasps = []
    for g in scene.grasps:
        # anisotropic resize: map the rectangle's axes and re-measure
        t = np.radians(g.theta_deg)
        ux, uy = np.cos(t) * sx, np.sin(t) * sy
        vx, vy = -np.sin(t) * sx, np.cos(t) * sy
        grasps.append(
            GraspRect(
                g.cx * sx,
                g.cy * sy,
                g.w * float(np.hypot(ux, uy)),
                g.h * float(np.hypot(vx, vy)),
                float(np.degrees(np.arctan2(uy, ux))),
                g.cls,
                g.confidence,
                g.owner,
            )
        )
    out = scene.replace(width=out_hw[1], height=out_hw[0], objects=objects, grasps=grasps, pixels=img)
    return out, img
