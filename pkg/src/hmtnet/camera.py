"""Pinhole camera model linking depth pixels and 3D points in millimetres.

Image origin is the top-left corner, ``u`` grows rightward and ``v``
downward; pixel ``(u, v)`` is the centre of column ``u``, row ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidDepthError

CUBE_HALF_EXTENT_MM = 125.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def as_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class CubeCrop:
    """Axis-aligned cube around the hand centre; ``half_extent`` is per axis, mm."""

    center: tuple[float, float, float]
    half_extent: tuple[float, float, float] = (CUBE_HALF_EXTENT_MM,) * 3

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        he = self.half_extent
        if np.isscalar(he):
            he = (he, he, he)
        object.__setattr__(self, "half_extent", tuple(float(h) for h in he))
        if min(self.half_extent) <= 0:
            raise ConfigurationError(f"cube half extent must be positive, got {self.half_extent}")
        if self.center[2] <= 0:
            raise InvalidDepthError(f"cube centre depth must be positive, got {self.center[2]}")

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    @property
    def half_extent_array(self) -> np.ndarray:
        return np.asarray(self.half_extent, dtype=np.float64)


@dataclass(frozen=True)
class PixelBounds:
    u_min: float
    u_max: float
    v_min: float
    v_max: float
    z_min: float
    z_max: float


def unproject(u, v, d, k: Intrinsics) -> np.ndarray:
    """Pixel ``(u, v)`` at depth ``d`` (mm) to a camera-frame point; vectorised over inputs."""
    u, v, d = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(d, float))
    if np.any(d <= 0):
        raise InvalidDepthError("unproject needs strictly positive depth")
    return np.stack([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d], axis=-1)


def project(p, k: Intrinsics) -> np.ndarray:
    """Camera-frame point(s) ``(..., 3)`` to ``(..., 3)`` rows of ``(u, v, d)``."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise InvalidDepthError("project: point lies on or behind the camera plane")
    return np.stack([k.fx * p[..., 0] / z + k.cx, k.fy * p[..., 1] / z + k.cy, z], axis=-1)


def cube_pixel_bounds(crop: CubeCrop, k: Intrinsics) -> PixelBounds:
    """Image rectangle enclosing the projected cube plus the cube's depth range.

    The rectangle is the envelope of the eight projected corners. While the
    centre lies within one half extent of the optical axis (the usual case)
    this is exactly the front face's projection; further off axis the back
    face's near edge reaches closer to the principal point and widens it.
    """
    cx3, cy3, cz = crop.center
    hx, hy, hz = crop.half_extent
    front = cz - hz
    if front <= 0:
        raise InvalidDepthError(f"cube front face at depth {front} mm is not in front of the camera")
    us = [k.fx * (cx3 + sx * hx) / z + k.cx for sx in (-1, 1) for z in (front, cz + hz)]
    vs = [k.fy * (cy3 + sy * hy) / z + k.cy for sy in (-1, 1) for z in (front, cz + hz)]
    return PixelBounds(
        u_min=min(us),
        u_max=max(us),
        v_min=min(vs),
        v_max=max(vs),
        z_min=cz - hz,
        z_max=cz + hz,
    )
