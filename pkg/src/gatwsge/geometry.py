"""Gaze vectors in the eye coordinate system.

Convention: +x points left and +y up as seen from the camera, +z points away
from the camera, so ``(0, 0, -1)`` looks straight into the lens. All
functions accept a single vector of shape ``(3,)`` or a stack ``(..., 3)``
and return float64 arrays.
"""
from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np

from .errors import AntipodalEndpoints, DegenerateVector, NearAxisGaze

NORM_EPS = 1e-12
XY_EPS = 1e-6
# Split thresholds are inclusive; this absorbs arccos round-off at exactly 20/90 deg.
BOUNDARY_TOL_DEG = 1e-9

CAMERA_AXIS = np.array([0.0, 0.0, -1.0])


class SplitTag(enum.Enum):
    FULL = "Full"
    FRONT180 = "Front180"
    FRONT40 = "Front40"
    BACK = "Back"


SPLIT_ORDER = (SplitTag.FULL, SplitTag.FRONT180, SplitTag.FRONT40, SplitTag.BACK)


class PseudoLabel(NamedTuple):
    vector: np.ndarray
    degenerate: np.ndarray | bool


def _as3(raw) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {arr.shape}")
    return arr


def _as2(raw) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape[-1:] != (2,):
        raise ValueError(f"expected trailing dimension 2, got shape {arr.shape}")
    return arr


def normalize3(raw) -> np.ndarray:
    """Scale ``raw`` to unit length; raises :class:`DegenerateVector` for ~zero input."""
    arr = _as3(raw)
    norm = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norm <= NORM_EPS) or not np.all(np.isfinite(norm)):
        raise DegenerateVector(f"cannot normalize vector with norm {np.min(norm):.3g}")
    return arr / norm


def normalize2(raw) -> np.ndarray:
    arr = _as2(raw)
    norm = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norm <= NORM_EPS) or not np.all(np.isfinite(norm)):
        raise DegenerateVector(f"cannot normalize vector with norm {np.min(norm):.3g}")
    return arr / norm


def angular_error_deg(a, b) -> np.ndarray | float:
    """Angle between unit vectors in degrees, in [0, 180]."""
    a, b = _as3(a), _as3(b)
    cos = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    out = np.degrees(np.arccos(cos))
    return float(out) if out.ndim == 0 else out


def project_to_2d(g) -> np.ndarray:
    """Image-plane direction of ``g`` (normalized ``(x, y)``)."""
    g = _as3(g)
    xy = g[..., :2]
    norm = np.linalg.norm(xy, axis=-1, keepdims=True)
    if np.any(norm <= XY_EPS):
        raise NearAxisGaze("gaze is along the optical axis; 2D direction is undefined")
    return xy / norm


def pseudo_label_3d(pred, v) -> PseudoLabel:
    """Rotate ``pred`` about the z-axis so its image-plane direction matches ``v``.

    The z component is copied bit-for-bit and the planar magnitude
    ``|(pred.x, pred.y)|`` is kept, so the result stays on the unit sphere.
    When that magnitude is at most ``XY_EPS`` the rotation is undefined; the
    prediction is returned unchanged and ``degenerate`` is set.

    Works elementwise on stacks: ``pred`` of shape ``(..., 3)`` with ``v`` of
    shape ``(..., 2)``; ``degenerate`` is then a boolean array.
    """
    pred, v = _as3(pred), _as2(v)
    r = np.hypot(pred[..., 0], pred[..., 1])
    degenerate = r <= XY_EPS
    out = np.empty(np.broadcast_shapes(pred.shape, v.shape[:-1] + (3,)))
    out[..., 0] = v[..., 0] * r
    out[..., 1] = v[..., 1] * r
    out[..., 2] = pred[..., 2]
    if np.any(degenerate):
        out[degenerate] = np.broadcast_to(pred, out.shape)[degenerate]
    if out.ndim == 1:
        return PseudoLabel(out, bool(degenerate))
    return PseudoLabel(out, degenerate)


def split_of(g) -> frozenset[SplitTag]:
    theta = angular_error_deg(g, CAMERA_AXIS)
    tags = {SplitTag.FULL}
    if theta <= 90.0 + BOUNDARY_TOL_DEG:
        tags.add(SplitTag.FRONT180)
        if theta <= 20.0 + BOUNDARY_TOL_DEG:
            tags.add(SplitTag.FRONT40)
    else:
        tags.add(SplitTag.BACK)
    return frozenset(tags)


def split_masks(gts) -> dict[SplitTag, np.ndarray]:
    """Vectorized :func:`split_of` over an ``(N, 3)`` stack."""
    gts = np.atleast_2d(_as3(gts))
    theta = np.atleast_1d(angular_error_deg(gts, CAMERA_AXIS))
    front = theta <= 90.0 + BOUNDARY_TOL_DEG
    return {
        SplitTag.FULL: np.ones(len(gts), dtype=bool),
        SplitTag.FRONT180: front,
        SplitTag.FRONT40: theta <= 20.0 + BOUNDARY_TOL_DEG,
        SplitTag.BACK: ~front,
    }


def flip_gaze_horizontal(g) -> np.ndarray:
    out = np.array(_as3(g), dtype=np.float64, copy=True)
    out[..., 0] = -out[..., 0]
    return out


def slerp_gaze(a, b, u: float) -> np.ndarray:
    """Great-circle interpolation from ``a`` (u=0) to ``b`` (u=1)."""
    a, b = _as3(a), _as3(b)
    if np.linalg.norm(a + b) <= 1e-6:
        raise AntipodalEndpoints("slerp endpoints are antipodal; the great circle is not unique")
    if u == 0:
        return a.copy()
    if u == 1:
        return b.copy()
    omega = np.arccos(np.clip(np.dot(a, b), -1.0, 1.0))
    if omega < 1e-9:
        return normalize3(a + u * (b - a))
    s = np.sin(omega)
    out = (np.sin((1.0 - u) * omega) / s) * a + (np.sin(u * omega) / s) * b
    return normalize3(out)


def gaze2d_from_pixels(origin, target) -> np.ndarray:
    """Unit 2D gaze from a pixel-space annotation (target minus origin).

    Pixel x grows to the right and y grows downward, while eye-coordinate x
    points left and y up, so both components change sign.
    """
    origin = np.asarray(origin, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return offset_to_gaze2d(target - origin)


def offset_to_gaze2d(offset) -> np.ndarray:
    return normalize2(-_as2(offset))


def gaze2d_to_offset(v, length: float = 1.0) -> np.ndarray:
    """Inverse of :func:`offset_to_gaze2d` for a given pixel length."""
    return -_as2(v) * length


def random_unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    return normalize3(rng.standard_normal((n, 3)))


def sample_cap(rng: np.random.Generator, n: int, center, half_angle_deg: float) -> np.ndarray:
    """Uniform samples on the spherical cap of ``half_angle_deg`` around ``center``."""
    center = normalize3(center)
    cos_max = np.cos(np.radians(half_angle_deg))
    cos_t = 1.0 - rng.random(n) * (1.0 - cos_max)
    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, None))
    phi = rng.random(n) * 2.0 * np.pi
    # orthonormal frame around center
    helper = np.array([1.0, 0.0, 0.0]) if abs(center[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = normalize3(np.cross(center, helper))
    e2 = np.cross(center, e1)
    local = (sin_t * np.cos(phi))[:, None] * e1 + (sin_t * np.sin(phi))[:, None] * e2
    return normalize3(local + cos_t[:, None] * center)


def cap_mean_angle_deg(half_angle_deg: float) -> float:
    """Mean angle to the cap center for the uniform distribution on a spherical cap."""
    a = np.radians(half_angle_deg)
    if a == 0:
        return 0.0
    return float(np.degrees((np.sin(a) - a * np.cos(a)) / (1.0 - np.cos(a))))
