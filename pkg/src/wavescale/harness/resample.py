"""Area-averaging resampling and image file I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..wavelet import as_channels


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages the input interval covered by output pixel i."""
    edges_in = np.arange(n_in + 1, dtype=np.float64)
    edges_out = np.linspace(0.0, n_in, n_out + 1)
    lo = np.maximum(edges_out[:-1, None], edges_in[None, :-1])
    hi = np.minimum(edges_out[1:, None], edges_in[None, 1:])
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def resize_area(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Downsample by exact area averaging (each output pixel is the mean of its footprint)."""
    arr = np.asarray(image, dtype=np.float64)
    h, w = arr.shape[:2]
    oh, ow = shape
    if oh > h or ow > w:
        raise NotImplementedError("area resampling only supports downsampling")
    if (oh, ow) == (h, w):
        return arr.copy()
    rows = _area_matrix(h, oh)
    cols = _area_matrix(w, ow)
    chans = as_channels(arr)
    out = np.stack([rows @ chans[:, :, k] @ cols.T for k in range(chans.shape[2])], axis=-1)
    return out[:, :, 0] if arr.ndim == 2 else out


def resample_gsd(image: np.ndarray, from_gsd: float, to_gsd: float) -> np.ndarray:
    """Resample an image from one ground sampling distance (cm/px) to a coarser one."""
    if from_gsd <= 0 or to_gsd <= 0:
        raise ValueError(f"ground sampling distances must be positive, got {from_gsd} -> {to_gsd}")
    if to_gsd < from_gsd:
        raise NotImplementedError(
            f"upsampling from {from_gsd} to {to_gsd} cm/px is not supported"
        )
    h, w = np.asarray(image).shape[:2]
    ratio = from_gsd / to_gsd
    return resize_area(image, (max(1, round(h * ratio)), max(1, round(w * ratio))))


def load_image(path: str | Path) -> np.ndarray:
    """Read a raster file as an H x W x 3 float array in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path: str | Path) -> Path:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.round(np.clip(as_channels(image), 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)
    return path
