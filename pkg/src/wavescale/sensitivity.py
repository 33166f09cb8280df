"""Binary QMC mask designs and Jansen total Sobol index estimation.

The design follows the usual pick-freeze layout: two independent ``N x K``
mask blocks ``A`` and ``B``, and for every cell ``i`` a block equal to ``A``
with column ``i`` taken from ``B``. A black-box model is therefore queried
exactly ``N * (K + 2)`` times.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

logger = logging.getLogger(__name__)

SEQUENCE_KINDS = ("sobol", "halton", "random")
NEGATIVE_TOLERANCE = 0.05
DEFAULT_SAMPLES = 128


@dataclass(frozen=True)
class MaskPlan:
    grid_cells: int
    sample_count: int = DEFAULT_SAMPLES
    sequence_kind: str = "sobol"
    seed: int = 0

    def __post_init__(self):
        if self.grid_cells < 1:
            raise ValueError(f"grid_cells must be >= 1, got {self.grid_cells}")
        if self.sample_count < 2:
            raise ValueError(f"sample_count must be >= 2, got {self.sample_count}")
        if self.sequence_kind not in SEQUENCE_KINDS:
            raise ValueError(f"unknown sequence kind {self.sequence_kind!r}; choose from {SEQUENCE_KINDS}")

    @property
    def budget(self) -> int:
        return self.sample_count * (self.grid_cells + 2)


@dataclass(frozen=True)
class MaskBatch:
    a_block: np.ndarray
    b_block: np.ndarray

    @property
    def sample_count(self) -> int:
        return self.a_block.shape[0]

    @property
    def grid_cells(self) -> int:
        return self.a_block.shape[1]

    def pick_block(self, i: int) -> np.ndarray:
        """``a_block`` with column ``i`` replaced by the same column of ``b_block``."""
        block = self.a_block.copy()
        block[:, i] = self.b_block[:, i]
        return block

    @property
    def pick_blocks(self) -> list[np.ndarray]:
        return [self.pick_block(i) for i in range(self.grid_cells)]

    def all_masks(self) -> np.ndarray:
        """Every mask in evaluation order: A, B, then the K pick blocks."""
        return np.concatenate([self.a_block, self.b_block, *self.pick_blocks], axis=0)


@dataclass
class SobolEstimate:
    total_indices: np.ndarray
    output_variance: float
    budget_used: int
    degenerate: bool = False
    has_negative: bool = False
    outputs: np.ndarray | None = field(default=None, repr=False)


def _unit_points(kind: str, n: int, dim: int, seed: int) -> np.ndarray:
    if kind == "random":
        return np.random.default_rng(seed).random((n, dim))
    if kind == "halton":
        return qmc.Halton(d=dim, scramble=True, seed=seed).random(n)
    engine = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # balance properties need a power of two; other sizes are still usable
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(n)


def duplicated_columns(masks: np.ndarray) -> int:
    """Number of columns equal to (or the complement of) an earlier column."""
    seen = set()
    dup = 0
    for col in masks.T.astype(np.uint8):
        key = (col if col[0] == 0 else 1 - col).tobytes()
        dup += key in seen
        seen.add(key)
    return dup


def generate_masks(plan: MaskPlan) -> MaskBatch:
    k, n = plan.grid_cells, plan.sample_count
    points = _unit_points(plan.sequence_kind, n, 2 * k, plan.seed)
    masks = (points >= 0.5).astype(np.float64)
    dup = duplicated_columns(masks)
    if dup:
        # leading bits of a 2**m point digital net span at most 2**m - 1 distinct columns
        logger.warning(
            "%d of %d mask columns are duplicated (N=%d, K=%d, %s); cells sharing a "
            "column are confounded, increase N or reduce K",
            dup, 2 * k, n, k, plan.sequence_kind,
        )
    return MaskBatch(masks[:, :k], masks[:, k:])


def jansen_total_indices(f_a: Sequence[float], f_pick: Sequence[Sequence[float]]) -> SobolEstimate:
    f_a = np.asarray(f_a, dtype=np.float64)
    f_pick = np.asarray(f_pick, dtype=np.float64)
    if f_a.ndim != 1 or f_a.size < 2:
        raise ValueError("f_a must be a vector with at least two entries")
    if f_pick.ndim != 2 or f_pick.shape[1] != f_a.size:
        raise ValueError(f"f_pick must have shape (K, {f_a.size}), got {f_pick.shape}")
    k, n = f_pick.shape
    var = float(np.var(f_a, ddof=1))
    budget = n * (k + 2)
    if not var > 0.0:
        return SobolEstimate(np.zeros(k), 0.0, budget, degenerate=True)
    sti = np.sum((f_a[None, :] - f_pick) ** 2, axis=1) / (2 * n * var)
    return SobolEstimate(sti, var, budget, has_negative=bool(np.any(sti < 0)))


def evaluate(fn: Callable, items: Sequence, workers: int = 1, thread_safe: bool = False) -> np.ndarray:
    """Apply ``fn`` to every item, preserving order; threads only if allowed."""
    if workers > 1 and thread_safe:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(fn, items)), dtype=np.float64)
    return np.array([fn(item) for item in items], dtype=np.float64)


def _from_outputs(outputs: np.ndarray, batch: MaskBatch) -> SobolEstimate:
    n, k = batch.a_block.shape
    est = jansen_total_indices(outputs[:n], outputs[2 * n:].reshape(k, n))
    est.outputs = outputs
    return est


def estimate_from_masks(f: Callable[[np.ndarray], float], batch: MaskBatch, workers: int = 1,
                        thread_safe: bool = False) -> SobolEstimate:
    """Estimate total indices of an arbitrary mask function ``f(mask_row)``."""
    return _from_outputs(evaluate(f, batch.all_masks(), workers, thread_safe), batch)


# masked images per reconstruction chunk, sized to keep each chunk near 32 MB
CHUNK_VALUES = 4_000_000


def estimate_cell_importance(model, image: np.ndarray, plan: MaskPlan, grid, filt="haar",
                             workers: int = 1) -> SobolEstimate:
    """Total Sobol indices of the wavelet-grid cells of ``image`` for ``model``.

    ``model`` must expose ``predict(image) -> float``; a ``thread_safe``
    attribute set to True allows threaded evaluation when ``workers > 1``.
    Models that also expose ``predict_batch(images) -> sequence`` receive
    whole chunks of masked images instead.
    """
    from .wavelet import as_channels, dwt_image, get_filter
    from .wcam import apply_masks

    filt = get_filter(filt)
    if grid.grid_cells != plan.grid_cells:
        raise ValueError(f"plan has {plan.grid_cells} cells but the grid has {grid.grid_cells}")
    img = as_channels(image)
    squeeze = np.asarray(image).ndim == 2
    pyramids = dwt_image(img, filt, grid.levels)
    batch = generate_masks(plan)
    masks = batch.all_masks()
    chunk = max(1, CHUNK_VALUES // img.size)
    batched = getattr(model, "predict_batch", None)
    outputs = []
    for start in range(0, len(masks), chunk):
        images = apply_masks(pyramids, grid, masks[start:start + chunk], filt)
        if squeeze:
            images = images[..., 0]
        if batched is not None:
            outputs.append(np.asarray(batched(images), dtype=np.float64))
        else:
            outputs.append(evaluate(model.predict, list(images), workers, getattr(model, "thread_safe", False)))
    est = _from_outputs(np.concatenate(outputs), batch)
    if est.degenerate:
        logger.warning("model output has zero variance over the mask design; indices set to 0")
    return est
