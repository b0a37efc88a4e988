"""Depth frame -> normalised 96x96 patch, label normalisation and online augmentation."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .camera import CUBE_HALF_EXTENT_MM, CubeCrop, Intrinsics, cube_pixel_bounds, project, unproject
from .errors import ContractError, EmptyCropError, NoHandError

log = logging.getLogger(__name__)

PATCH_SIZE = 96
FOREGROUND_BAND_MM = 200.0
BACKGROUND = 1.0


@dataclass
class DepthFrame:
    """Depth raster in millimetres (0 marks a missing measurement)."""

    depth: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        self.depth = np.asarray(self.depth)
        if self.depth.ndim != 2:
            raise ContractError(f"depth raster must be 2-D, got shape {self.depth.shape}")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ContractError("depth values must be finite and non-negative")

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass
class NormalizedPatch:
    values: np.ndarray
    crop: CubeCrop


@dataclass(frozen=True)
class AugmentParams:
    rotation: float = 0.0  # degrees, in the image plane about the patch centre
    scale: float = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.scale <= 0:
            raise ContractError(f"augmentation scale must be positive, got {self.scale}")

    @property
    def is_identity(self) -> bool:
        return self.rotation == 0.0 and self.scale == 1.0 and not any(self.translation)


@dataclass(frozen=True)
class AugmentRanges:
    rotation: float = 180.0
    scale: tuple[float, float] = (0.9, 1.1)
    translation: float = 10.0

    def sample(self, rng: np.random.Generator) -> AugmentParams:
        return AugmentParams(
            rotation=float(rng.uniform(-self.rotation, self.rotation)),
            scale=float(rng.uniform(*self.scale)),
            translation=tuple(float(t) for t in rng.uniform(-self.translation, self.translation, 3)),
        )


# -- hand centre --------------------------------------------------------------------


def foreground_mask(frame: DepthFrame, band: float = FOREGROUND_BAND_MM) -> np.ndarray:
    d = frame.depth
    valid = d > 0
    if not valid.any():
        raise NoHandError("depth frame has no valid pixel")
    d_min = d[valid].min()
    return valid & (d <= d_min + band)


def compute_com(frame: DepthFrame, band: float = FOREGROUND_BAND_MM,
                half_extent: float = CUBE_HALF_EXTENT_MM) -> CubeCrop:
    """Centre of mass of the nearest depth band, assuming the hand is closest to the camera."""
    mask = foreground_mask(frame, band)
    v, u = np.nonzero(mask)
    pts = unproject(u, v, frame.depth[v, u].astype(np.float64), frame.intrinsics)
    return CubeCrop(center=tuple(pts.mean(axis=0)), half_extent=half_extent)


# -- crop & normalise -----------------------------------------------------------------


def _cell_centres(crop: CubeCrop, k: Intrinsics, size: int) -> tuple[np.ndarray, np.ndarray]:
    b = cube_pixel_bounds(crop, k)
    step_u = (b.u_max - b.u_min) / size
    step_v = (b.v_max - b.v_min) / size
    idx = np.arange(size) + 0.5
    return b.u_min + idx * step_u, b.v_min + idx * step_v


def crop_normalize(frame: DepthFrame, crop: CubeCrop, size: int = PATCH_SIZE) -> NormalizedPatch:
    """Nearest-neighbour resample of the cube footprint to ``size`` x ``size``.

    Depth maps linearly to ``(d - centre_z) / half_extent_z``; missing pixels
    and pixels outside the cube's depth range become +1.
    """
    k = frame.intrinsics
    b = cube_pixel_bounds(crop, k)
    H, W = frame.depth.shape
    if b.u_max < -0.5 or b.u_min > W - 0.5 or b.v_max < -0.5 or b.v_min > H - 0.5:
        raise EmptyCropError(f"crop rectangle {b} lies outside the {W}x{H} image")
    us, vs = _cell_centres(crop, k, size)
    cols = np.floor(us + 0.5).astype(np.int64)
    rows = np.floor(vs + 0.5).astype(np.int64)
    col_ok = (cols >= 0) & (cols < W)
    row_ok = (rows >= 0) & (rows < H)
    d = np.zeros((size, size), dtype=np.float64)
    d[np.ix_(row_ok, col_ok)] = frame.depth[np.ix_(rows[row_ok], cols[col_ok])]

    cz, hz = crop.center[2], crop.half_extent[2]
    values = np.full((size, size), BACKGROUND)
    inside = (d > 0) & (d >= b.z_min) & (d <= b.z_max)
    values[inside] = np.clip((d[inside] - cz) / hz, -1.0, 1.0)
    return NormalizedPatch(values=values, crop=crop)


def patch_to_points(patch: NormalizedPatch, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Back-project non-background cells: returns ``(points (N,3), cells (N,2) as (row, col))``."""
    size = patch.values.shape[0]
    us, vs = _cell_centres(patch.crop, k, size)
    rows, cols = np.nonzero(patch.values < BACKGROUND)
    depth = patch.values[rows, cols] * patch.crop.half_extent[2] + patch.crop.center[2]
    return unproject(us[cols], vs[rows], depth, k), np.stack([rows, cols], axis=1)


def points_to_patch(points, crop: CubeCrop, k: Intrinsics, size: int = PATCH_SIZE) -> np.ndarray:
    """Continuous patch coordinates ``(col, row)`` of 3D points (cell centres at integers)."""
    b = cube_pixel_bounds(crop, k)
    uvd = project(points, k)
    col = (uvd[..., 0] - b.u_min) / (b.u_max - b.u_min) * size - 0.5
    row = (uvd[..., 1] - b.v_min) / (b.v_max - b.v_min) * size - 0.5
    return np.stack([col, row], axis=-1)


def patch_to_image(cols_rows, crop: CubeCrop, k: Intrinsics, size: int = PATCH_SIZE) -> np.ndarray:
    b = cube_pixel_bounds(crop, k)
    cr = np.asarray(cols_rows, dtype=np.float64)
    u = (cr[..., 0] + 0.5) / size * (b.u_max - b.u_min) + b.u_min
    v = (cr[..., 1] + 0.5) / size * (b.v_max - b.v_min) + b.v_min
    return np.stack([u, v], axis=-1)


# -- labels -------------------------------------------------------------------------


def normalize_labels(joints, crop: CubeCrop) -> np.ndarray:
    """World-mm joints ``(J, 3)`` to a flat ``3J`` vector in cube units, clamped to [-1, 1]."""
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    rel = (joints - crop.center_array) / crop.half_extent_array
    if np.any(np.abs(rel) > 1.0):
        log.debug("clamping %d label coordinates outside the crop cube", int(np.sum(np.abs(rel) > 1.0)))
    return np.clip(rel, -1.0, 1.0).reshape(-1)


def denormalize_prediction(vec, crop: CubeCrop, J: int | None = None) -> np.ndarray:
    """Inverse of :func:`normalize_labels`: flat ``3J`` vector to world-mm ``(J, 3)``."""
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.size % 3 or (J is not None and vec.size != 3 * J):
        expected = f"3*{J}" if J is not None else "a multiple of 3"
        raise ContractError(f"prediction has {vec.size} values, expected {expected}")
    return vec.reshape(-1, 3) * crop.half_extent_array + crop.center_array


# -- augmentation ---------------------------------------------------------------------


def _rotate_patch(values: np.ndarray, degrees: float) -> np.ndarray:
    size = values.shape[0]
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    # output (row, col) pulls from input at the inverse rotation
    matrix = np.array([[c, -s], [s, c]])
    centre = np.array([(size - 1) / 2.0] * 2)
    offset = centre - matrix @ centre
    return ndimage.affine_transform(values, matrix, offset=offset, order=0, mode="constant", cval=BACKGROUND)


def rotate_patch_points(cols_rows, degrees: float, size: int = PATCH_SIZE) -> np.ndarray:
    """Rotate patch coordinates about the patch centre (x right, y down)."""
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    centre = (size - 1) / 2.0
    p = np.asarray(cols_rows, dtype=np.float64) - centre
    return np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1]], axis=-1) + centre


def augment(frame: DepthFrame, crop: CubeCrop, joints, params: AugmentParams,
            size: int = PATCH_SIZE) -> tuple[np.ndarray, np.ndarray, CubeCrop]:
    """Crop with perturbed cube, then rotate image and labels together.

    Returns ``(patch values, normalised labels, crop used)``. Translation
    moves the cube centre, scale multiplies its half extent, rotation turns
    the patch and the joints' image positions about the patch centre while
    keeping each joint's depth.
    """
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    new_crop = CubeCrop(
        center=tuple(crop.center_array + np.asarray(params.translation)),
        half_extent=tuple(crop.half_extent_array * params.scale),
    )
    patch = crop_normalize(frame, new_crop, size)
    values = patch.values
    if params.rotation:
        k = frame.intrinsics
        values = _rotate_patch(values, params.rotation)
        cr = rotate_patch_points(points_to_patch(joints, new_crop, k, size), params.rotation, size)
        uv = patch_to_image(cr, new_crop, k, size)
        joints = unproject(uv[:, 0], uv[:, 1], joints[:, 2], k)
    return values, normalize_labels(joints, new_crop), new_crop


# -- patch dump -----------------------------------------------------------------------

_PATCH_MAGIC = b"HMTP"


def save_patch(path, patch: NormalizedPatch) -> None:
    """Debug dump: magic, uint32 size, 6 float64 (centre, half extent), then <f4 values."""
    size = patch.values.shape[0]
    header = _PATCH_MAGIC + struct.pack("<I6d", size, *patch.crop.center, *patch.crop.half_extent)
    Path(path).write_bytes(header + np.ascontiguousarray(patch.values, dtype="<f4").tobytes())


def load_patch(path) -> NormalizedPatch:
    buf = Path(path).read_bytes()
    if buf[:4] != _PATCH_MAGIC:
        raise ContractError(f"{path}: not a patch dump")
    size, *vals = struct.unpack_from("<I6d", buf, 4)
    values = np.frombuffer(buf, dtype="<f4", offset=4 + struct.calcsize("<I6d")).reshape(size, size)
    return NormalizedPatch(values=values.astype(np.float64), crop=CubeCrop(tuple(vals[:3]), tuple(vals[3:])))
