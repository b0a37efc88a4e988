"""Gaussian joint heatmaps on the 24x24 supervision grid."""

from __future__ import annotations

import numpy as np

HEATMAP_SIZE = 24
DEFAULT_SIGMA = 1.5


def render(joint_uv, sigma: float = DEFAULT_SIGMA, size: int = HEATMAP_SIZE) -> np.ndarray:
    """Amplitude-1 Gaussian centred at continuous grid coordinates ``(u, v)``.

    Returns an array indexed ``[v, u]`` (row, column).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    ju, jv = float(joint_uv[0]), float(joint_uv[1])
    grid = np.arange(size, dtype=np.float64)
    gu = np.exp(-((grid - ju) ** 2) / (2.0 * sigma**2))
    gv = np.exp(-((grid - jv) ** 2) / (2.0 * sigma**2))
    return np.outer(gv, gu)


def render_many(joints_uv: np.ndarray, sigma: float = DEFAULT_SIGMA, size: int = HEATMAP_SIZE) -> np.ndarray:
    """``(J, 2)`` grid coordinates to ``(J, size, size)`` maps."""
    joints_uv = np.asarray(joints_uv, dtype=np.float64)
    grid = np.arange(size, dtype=np.float64)
    gu = np.exp(-((grid[None, :] - joints_uv[:, 0:1]) ** 2) / (2.0 * sigma**2))
    gv = np.exp(-((grid[None, :] - joints_uv[:, 1:2]) ** 2) / (2.0 * sigma**2))
    return gv[:, :, None] * gu[:, None, :]


def decode_argmax(h: np.ndarray) -> tuple[int, int]:
    """Integer ``(u, v)`` of the maximal cell; ties go to the smallest ``(v, u)``."""
    h = np.asarray(h)
    v, u = np.unravel_index(int(np.argmax(h)), h.shape)
    return int(u), int(v)


def patch_to_grid(xy, size: int = HEATMAP_SIZE) -> np.ndarray:
    """Normalised in-plane label(s) in [-1, 1] to grid coordinates in [0, size-1]."""
    xy = np.asarray(xy, dtype=np.float64)
    return (xy + 1.0) * 0.5 * (size - 1)


def labels_to_heatmaps(labels: np.ndarray, J: int, sigma: float = DEFAULT_SIGMA,
                       size: int = HEATMAP_SIZE) -> np.ndarray:
    """Ground-truth maps from a normalised ``3J`` label vector (x, y only)."""
    xy = np.asarray(labels, dtype=np.float64).reshape(J, 3)[:, :2]
    return render_many(patch_to_grid(xy, size), sigma, size)


def save_heatmap_image(h: np.ndarray, path) -> None:
    """Write a map as an 8-bit grayscale image (values clipped to [0, 1])."""
    from PIL import Image

    img = (np.clip(np.asarray(h, dtype=np.float64), 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
