"""Wavelet scale attribution maps (WCAM).

Every subband of a ``levels``-deep decomposition (approximation plus three
orientations per level) is tiled into ``g x g`` cells. Each cell is one input
variable of the sensitivity analysis: masking it zeroes all of its
coefficients, identically across channels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sensitivity import MaskPlan, SobolEstimate, estimate_cell_importance
from .wavelet import (
    APPROXIMATION,
    ORIENTATIONS,
    WaveletFilter,
    WaveletPyramid,
    as_channels,
    idwt_stack,
    get_filter,
)

logger = logging.getLogger(__name__)


def subband_order(levels: int) -> list[tuple[int, str]]:
    keys = [(levels, APPROXIMATION)]
    for j in range(levels, 0, -1):
        keys.extend((j, o) for o in ORIENTATIONS)
    return keys


def subband_label(level: int, orientation: str) -> str:
    if orientation == APPROXIMATION:
        return f"approximation-L{level}"
    return f"L{level}-{orientation}"


@dataclass(frozen=True)
class WaveletGrid:
    """Flat ``g x g`` tiling of every subband of an ``H x W`` decomposition."""

    levels: int
    cells_per_side: int
    image_shape: tuple[int, int]

    def __post_init__(self):
        if self.levels < 1 or self.cells_per_side < 1:
            raise ValueError("levels and cells_per_side must be >= 1")
        h, w = self.image_shape
        ch, cw = h >> self.levels, w >> self.levels
        if (ch << self.levels, cw << self.levels) != (h, w):
            raise ValueError(f"image shape {self.image_shape} not divisible by 2**{self.levels}")
        g = self.cells_per_side
        if ch % g or cw % g:
            raise ValueError(
                f"grid {g}x{g} does not divide the coarsest subband shape {(ch, cw)}"
            )

    @property
    def subbands(self) -> list[tuple[int, str]]:
        return subband_order(self.levels)

    @property
    def cells_per_subband(self) -> int:
        return self.cells_per_side**2

    @property
    def grid_cells(self) -> int:
        return len(self.subbands) * self.cells_per_subband

    def subband_shape(self, level: int) -> tuple[int, int]:
        h, w = self.image_shape
        return h >> level, w >> level

    def cell_map(self, level: int) -> np.ndarray:
        """Local cell index (0..g*g-1) of every coefficient of a level-``level`` subband."""
        h, w = self.subband_shape(level)
        g = self.cells_per_side
        rows = np.arange(h) // (h // g)
        cols = np.arange(w) // (w // g)
        return rows[:, None] * g + cols[None, :]

    def subband_cells(self, importance: np.ndarray) -> list[np.ndarray]:
        """Split a K-vector into one ``g x g`` array per subband."""
        g = self.cells_per_side
        importance = np.asarray(importance, dtype=np.float64)
        if importance.shape != (self.grid_cells,):
            raise ValueError(f"expected {self.grid_cells} cell values, got {importance.shape}")
        return [importance[s * g * g:(s + 1) * g * g].reshape(g, g) for s in range(len(self.subbands))]

    def subband_heatmap(self, values: np.ndarray, level: int) -> np.ndarray:
        """Piecewise-constant upsampling of ``g x g`` cell values onto a subband."""
        return values.reshape(-1)[self.cell_map(level)]

    def check_pyramid(self, pyramid: WaveletPyramid):
        if pyramid.levels != self.levels or tuple(pyramid.source_shape) != tuple(self.image_shape):
            raise ValueError(
                f"grid expects {self.levels} levels over {self.image_shape}, pyramid has "
                f"{pyramid.levels} levels over {pyramid.source_shape}"
            )

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "cells_per_side": self.cells_per_side,
            "image_shape": list(self.image_shape),
            "grid_cells": self.grid_cells,
            "subbands": [subband_label(*s) for s in self.subbands],
        }


@dataclass
class ScaleEmbedding:
    values: np.ndarray
    labels: list[str]

    def __len__(self):
        return len(self.values)


def scale_embedding(importance: np.ndarray, grid: WaveletGrid) -> ScaleEmbedding:
    per_band = grid.subband_cells(importance)
    values = np.array([float(np.sum(b)) for b in per_band])
    return ScaleEmbedding(values, [subband_label(*s) for s in grid.subbands])


def embedding_distance(a: ScaleEmbedding | np.ndarray, b: ScaleEmbedding | np.ndarray) -> float:
    va = np.asarray(getattr(a, "values", a), dtype=np.float64)
    vb = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"embedding lengths differ: {va.shape} vs {vb.shape}")
    return float(np.linalg.norm(va - vb))


def apply_mask(pyramids: list[WaveletPyramid], grid: WaveletGrid, mask: np.ndarray,
               filt: WaveletFilter | str = "haar") -> np.ndarray:
    """Zero the coefficients of masked-out cells and reconstruct the image.

    The same mask is used for every channel. The result is clipped to [0, 1].
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (grid.grid_cells,):
        raise ValueError(f"mask must have {grid.grid_cells} entries, got shape {mask.shape}")
    return apply_masks(pyramids, grid, mask[None, :], filt)[0]


# largest K x H x W x C basis of single-cell reconstructions kept in memory
BASIS_LIMIT = 16_000_000


def apply_masks(pyramids: list[WaveletPyramid], grid: WaveletGrid, masks: np.ndarray,
                filt: WaveletFilter | str = "haar") -> np.ndarray:
    """Batched :func:`apply_mask`: ``B x K`` masks to a ``B x H x W x C`` stack.

    Reconstruction is linear in the mask, so for batches larger than K the
    K single-cell reconstructions are computed once and combined by a matrix
    product; otherwise each masked pyramid is inverted directly.
    """
    filt = get_filter(filt)
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim != 2 or masks.shape[1] != grid.grid_cells:
        raise ValueError(f"masks must have shape (B, {grid.grid_cells}), got {masks.shape}")
    for pyr in pyramids:
        grid.check_pyramid(pyr)
        if pyr.filter_name != filt.name:
            raise ValueError(f"pyramid was built with {pyr.filter_name!r} but inverted with {filt.name!r}")
    k = grid.grid_cells
    h, w = grid.image_shape
    if masks.shape[0] > k and k * h * w * len(pyramids) <= BASIS_LIMIT:
        basis = _reconstruct(pyramids, grid, np.eye(k), filt)
        images = (masks @ basis.reshape(k, -1)).reshape((len(masks),) + basis.shape[1:])
    else:
        images = _reconstruct(pyramids, grid, masks, filt)
    return np.clip(images, 0.0, 1.0)


def _reconstruct(pyramids, grid: WaveletGrid, masks: np.ndarray, filt: WaveletFilter) -> np.ndarray:
    """Unclipped ``B x H x W x C`` inverses of the masked pyramids, in one pass."""
    g2 = grid.cells_per_subband
    scaled = {}
    for s, (level, orient) in enumerate(grid.subbands):
        # (B, g*g) cell values -> (h, w, 1, B) coefficient multipliers
        mult = masks[:, s * g2:(s + 1) * g2][:, grid.cell_map(level)]
        mult = np.moveaxis(mult, 0, -1)[:, :, None, :]
        if orient == APPROXIMATION:
            band = np.stack([p.approximation for p in pyramids], axis=-1)
        else:
            band = np.stack([p.details[level - 1][orient] for p in pyramids], axis=-1)
        scaled[level, orient] = band[:, :, :, None] * mult
    details = [{o: scaled[j, o] for o in ORIENTATIONS} for j in range(1, grid.levels + 1)]
    return np.moveaxis(idwt_stack(scaled[grid.levels, APPROXIMATION], details, filt), -1, 0)


def wavelet_heatmap(importance: np.ndarray, grid: WaveletGrid) -> np.ndarray:
    """Importance laid out like a dyadic decomposition image.

    The approximation sits in the top-left corner; at every level the
    horizontal band is to its right, the vertical band below it and the
    diagonal band diagonally opposite.
    """
    h, w = grid.image_shape
    out = np.zeros((h, w))
    for (level, orient), cells in zip(grid.subbands, grid.subband_cells(importance)):
        sh, sw = grid.subband_shape(level)
        r0, c0 = {
            APPROXIMATION: (0, 0),
            "horizontal": (0, sw),
            "vertical": (sh, 0),
            "diagonal": (sh, sw),
        }[orient]
        out[r0:r0 + sh, c0:c0 + sw] = grid.subband_heatmap(cells, level)
    return out


def spatial_project(importance: np.ndarray, grid: WaveletGrid) -> np.ndarray:
    """Nearest-neighbour upsample every subband heatmap to H x W and sum them."""
    h, w = grid.image_shape
    out = np.zeros((h, w))
    for (level, _), cells in zip(grid.subbands, grid.subband_cells(importance)):
        band = grid.subband_heatmap(cells, level)
        f = 2**level
        out += np.repeat(np.repeat(band, f, axis=0), f, axis=1)
    return out


@dataclass
class WCAMResult:
    grid: WaveletGrid
    importance: np.ndarray
    wavelet_heatmap: np.ndarray
    spatial_projection: np.ndarray
    scale_embedding: ScaleEmbedding
    seed: int
    budget: int
    degenerate: bool = False
    filter_name: str = "haar"
    sample_count: int = 0
    sequence_kind: str = "sobol"
    output_variance: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "importance": [float(v) for v in self.importance],
            "embedding": {
                "labels": list(self.scale_embedding.labels),
                "values": [float(v) for v in self.scale_embedding.values],
            },
            "seed": self.seed,
            "budget": self.budget,
            "samples": self.sample_count,
            "sequence": self.sequence_kind,
            "filter": self.filter_name,
            "degenerate": self.degenerate,
            "output_variance": float(self.output_variance),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "WCAMResult":
        g = data["grid"]
        grid = WaveletGrid(g["levels"], g["cells_per_side"], tuple(g["image_shape"]))
        return build_result(
            grid, np.array(data["importance"]), seed=data["seed"], budget=data["budget"],
            degenerate=data["degenerate"], filter_name=data["filter"],
            sample_count=data["samples"], sequence_kind=data["sequence"],
            output_variance=data.get("output_variance", 0.0), meta=data.get("meta", {}),
        )


def build_result(grid: WaveletGrid, importance: np.ndarray, **kwargs) -> WCAMResult:
    importance = np.asarray(importance, dtype=np.float64)
    return WCAMResult(
        grid=grid,
        importance=importance,
        wavelet_heatmap=wavelet_heatmap(importance, grid),
        spatial_projection=spatial_project(importance, grid),
        scale_embedding=scale_embedding(importance, grid),
        **kwargs,
    )


def wcam_distance(a: WCAMResult, b: WCAMResult) -> float:
    """Euclidean distance between two raw cell-importance vectors."""
    if a.importance.shape != b.importance.shape:
        raise ValueError("WCAM results use different grids")
    return float(np.linalg.norm(a.importance - b.importance))


def compute_wcam(model, image: np.ndarray, plan: MaskPlan | None = None, grid: WaveletGrid | None = None,
                 filt: WaveletFilter | str = "haar", *, levels: int = 3, cells_per_side: int = 4,
                 workers: int = 1) -> WCAMResult:
    """Attribute ``model``'s prediction on ``image`` to wavelet-domain cells."""
    img = as_channels(image)
    filt = get_filter(filt)
    if grid is None:
        grid = WaveletGrid(levels, cells_per_side, img.shape[:2])
    if plan is None:
        plan = MaskPlan(grid.grid_cells)
    est: SobolEstimate = estimate_cell_importance(model, img, plan, grid, filt, workers=workers)
    return build_result(
        grid, est.total_indices, seed=plan.seed, budget=est.budget_used,
        degenerate=est.degenerate, filter_name=filt.name, sample_count=plan.sample_count,
        sequence_kind=plan.sequence_kind, output_variance=est.output_variance,
    )


def _colorize(values: np.ndarray, vmax: float, cmap: str) -> np.ndarray:
    from matplotlib import colormaps

    scaled = np.clip(values / vmax, 0.0, 1.0) if vmax > 0 else np.zeros_like(values)
    return colormaps[cmap](scaled)[..., :3]


def _to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_heatmaps(result: WCAMResult, image: np.ndarray, out_prefix: str | Path, alpha: float = 0.5,
                    cmap: str = "inferno") -> tuple[Path, Path]:
    """Write ``<prefix>_wavelet.png`` and ``<prefix>_overlay.png``; return both paths."""
    from PIL import Image

    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    vmax = float(np.max(result.importance)) if result.importance.size else 0.0
    if result.degenerate or vmax <= 0:
        logger.warning("degenerate WCAM result; rendering uniform heatmaps")
        vmax = 0.0

    wav = _colorize(result.wavelet_heatmap, vmax, cmap)
    grid = result.grid
    for level in range(1, grid.levels + 1):
        sh, sw = grid.subband_shape(level)
        wav[sh, :2 * sw] = 1.0
        wav[:2 * sh, sw] = 1.0
    wavelet_path = out_prefix.with_name(out_prefix.name + "_wavelet.png")
    Image.fromarray(_to_uint8(wav)).save(wavelet_path)

    base = as_channels(image)
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    base = base[:, :, :3]
    proj = result.spatial_projection
    pmax = float(proj.max()) if vmax > 0 else 0.0
    overlay = (1 - alpha) * base + alpha * _colorize(proj, pmax, cmap)
    overlay_path = out_prefix.with_name(out_prefix.name + "_overlay.png")
    Image.fromarray(_to_uint8(overlay)).save(overlay_path)
    return wavelet_path, overlay_path
