"""Multi-level 2D dyadic wavelet transform with periodic boundaries.

Subbands are addressed by ``(level, orientation)`` where level 1 is the
finest scale and orientation is one of ``"horizontal"``, ``"vertical"``,
``"diagonal"``. The approximation band lives at the coarsest level and is
addressed with orientation ``"approximation"``.

Orientation naming follows the usual image convention: the horizontal
detail band is low-pass along columns and high-pass along rows, so it
responds to horizontal edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORIENTATIONS = ("horizontal", "vertical", "diagonal")
APPROXIMATION = "approximation"


class DimensionError(ValueError):
    """Raised when an array shape is not admissible for the transform."""


@dataclass(frozen=True)
class WaveletFilter:
    """Orthonormal two-channel filter pair.

    ``high_pass`` is derived from ``low_pass`` through the quadrature mirror
    relation when not given explicitly.
    """

    name: str
    low_pass: np.ndarray
    high_pass: np.ndarray
    orthonormal: bool = True

    def __post_init__(self):
        low = np.asarray(self.low_pass, dtype=np.float64)
        high = np.asarray(self.high_pass, dtype=np.float64)
        if low.ndim != 1 or low.shape != high.shape:
            raise ValueError("low_pass and high_pass must be 1D and of equal length")
        if len(low) % 2:
            raise ValueError("filter length must be even")
        object.__setattr__(self, "low_pass", low)
        object.__setattr__(self, "high_pass", high)

    @classmethod
    def from_low_pass(cls, name: str, low_pass) -> "WaveletFilter":
        low = np.asarray(low_pass, dtype=np.float64)
        n = len(low)
        high = np.array([(-1) ** k * low[n - 1 - k] for k in range(n)])
        return cls(name, low, high)

    def __len__(self) -> int:
        return len(self.low_pass)


_SQ3 = np.sqrt(3.0)

HAAR = WaveletFilter.from_low_pass("haar", np.array([1.0, 1.0]) / np.sqrt(2.0))
DB2 = WaveletFilter.from_low_pass(
    "db2",
    np.array([1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3]) / (4 * np.sqrt(2.0)),
)

FILTERS = {"haar": HAAR, "db2": DB2}


def get_filter(name: str | WaveletFilter) -> WaveletFilter:
    if isinstance(name, WaveletFilter):
        return name
    try:
        return FILTERS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown wavelet filter {name!r}; choose from {sorted(FILTERS)}") from None


@dataclass
class WaveletPyramid:
    """Coefficients of a ``levels``-deep dyadic decomposition of one channel.

    ``details[j - 1]`` holds the three oriented bands of level ``j`` as a dict
    keyed by orientation.
    """

    levels: int
    approximation: np.ndarray
    details: list[dict[str, np.ndarray]]
    source_shape: tuple[int, int]
    filter_name: str = field(default="haar")

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.details) != self.levels:
            raise ValueError("details must hold one entry per level")
        h, w = self.source_shape
        for j, bands in enumerate(self.details, start=1):
            expected = (h >> j, w >> j)
            for o in ORIENTATIONS:
                if o not in bands or bands[o].shape != expected:
                    raise DimensionError(f"level {j} {o} band must have shape {expected}")
        if self.approximation.shape != (h >> self.levels, w >> self.levels):
            raise DimensionError("approximation band has the wrong shape")

    def subband_keys(self) -> list[tuple[int, str]]:
        """Subbands ordered approximation first, then coarse to fine levels."""
        keys = [(self.levels, APPROXIMATION)]
        for j in range(self.levels, 0, -1):
            keys.extend((j, o) for o in ORIENTATIONS)
        return keys

    def energy(self) -> float:
        total = float(np.sum(self.approximation**2))
        for bands in self.details:
            total += sum(float(np.sum(b**2)) for b in bands.values())
        return total

    def copy(self) -> "WaveletPyramid":
        return WaveletPyramid(
            self.levels,
            self.approximation.copy(),
            [{o: b.copy() for o, b in bands.items()} for bands in self.details],
            self.source_shape,
            self.filter_name,
        )

    def zeros_like(self) -> "WaveletPyramid":
        out = self.copy()
        out.approximation[...] = 0.0
        for bands in out.details:
            for b in bands.values():
                b[...] = 0.0
        return out


def _phase(x: np.ndarray, parity: int, axis: int) -> np.ndarray:
    index = [slice(None)] * x.ndim
    index[axis] = slice(parity, None, 2)
    return x[tuple(index)]


def _analysis_1d(x: np.ndarray, filt: WaveletFilter, axis: int):
    # polyphase form: tap k reads sample 2n + k, i.e. phase k % 2 shifted by k // 2
    phases = (_phase(x, 0, axis), _phase(x, 1, axis))
    low = high = None
    for k, (g, h) in enumerate(zip(filt.low_pass, filt.high_pass)):
        src = phases[k % 2]
        if k // 2:
            src = np.roll(src, -(k // 2), axis=axis)
        if low is None:
            low, high = g * src, h * src
        else:
            low += g * src
            high += h * src
    return low, high


def _synthesis_1d(low: np.ndarray, high: np.ndarray, filt: WaveletFilter, axis: int):
    shape = list(low.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.float64)
    filled = [False, False]
    for k, (g, h) in enumerate(zip(filt.low_pass, filt.high_pass)):
        part = g * low
        part += h * high
        if k // 2:
            part = np.roll(part, k // 2, axis=axis)
        target = _phase(out, k % 2, axis)
        if filled[k % 2]:
            target += part
        else:
            target[...] = part
            filled[k % 2] = True
    return out


def _check_levels(shape, levels: int):
    if not isinstance(levels, (int, np.integer)) or levels < 1:
        raise ValueError(f"levels must be an integer >= 1, got {levels!r}")
    step = 2**levels
    for axis, name in enumerate(("height", "width")):
        if shape[axis] % step:
            raise DimensionError(
                f"{name} {shape[axis]} (axis {axis}) is not divisible by 2**{levels} = {step}"
            )


def dwt_forward(channel: np.ndarray, filt: WaveletFilter | str = HAAR, levels: int = 1) -> WaveletPyramid:
    """Decompose a 2D array into a ``levels``-deep wavelet pyramid."""
    filt = get_filter(filt)
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2D array, got shape {x.shape}")
    approx, details = dwt_stack(x, filt, levels)
    return WaveletPyramid(levels, approx, details, x.shape, filt.name)


def dwt_stack(x: np.ndarray, filt: WaveletFilter | str = HAAR, levels: int = 1) -> tuple[np.ndarray, list[dict]]:
    """Transform axes 0 and 1 of an array with any number of trailing axes.

    Returns ``(approximation, details)`` laid out like a pyramid, every band
    keeping the trailing axes; useful for whole batches of images at once.
    """
    filt = get_filter(filt)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError(f"expected at least 2 axes, got shape {x.shape}")
    _check_levels(x.shape, levels)
    details = []
    approx = x
    for _ in range(levels):
        lo_r, hi_r = _analysis_1d(approx, filt, axis=0)
        ll, lh = _analysis_1d(lo_r, filt, axis=1)
        hl, hh = _analysis_1d(hi_r, filt, axis=1)
        details.append({"horizontal": hl, "vertical": lh, "diagonal": hh})
        approx = ll
    return approx, details


def dwt_inverse(pyramid: WaveletPyramid, filt: WaveletFilter | str = HAAR) -> np.ndarray:
    """Reconstruct the 2D array encoded by ``pyramid``."""
    filt = get_filter(filt)
    if pyramid.filter_name != filt.name:
        raise ValueError(
            f"pyramid was built with {pyramid.filter_name!r} but inverted with {filt.name!r}"
        )
    return idwt_stack(pyramid.approximation, pyramid.details, filt)


def idwt_stack(approx: np.ndarray, details: list[dict], filt: WaveletFilter | str = HAAR) -> np.ndarray:
    """Inverse of :func:`dwt_stack`; bands may carry any trailing axes."""
    filt = get_filter(filt)
    for bands in reversed(details):
        lo_r = _synthesis_1d(approx, bands["vertical"], filt, axis=1)
        hi_r = _synthesis_1d(bands["horizontal"], bands["diagonal"], filt, axis=1)
        approx = _synthesis_1d(lo_r, hi_r, filt, axis=0)
    return approx


def as_channels(image: np.ndarray) -> np.ndarray:
    """View an image as H x W x C, promoting 2D grayscale input to one channel."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"expected H x W or H x W x C image, got shape {arr.shape}")
    return arr


def dwt_image(image: np.ndarray, filt: WaveletFilter | str = HAAR, levels: int = 1) -> list[WaveletPyramid]:
    """Channel-wise decomposition; returns one pyramid per channel."""
    arr = as_channels(image)
    return [dwt_forward(arr[:, :, c], filt, levels) for c in range(arr.shape[2])]


def idwt_image(pyramids: list[WaveletPyramid], filt: WaveletFilter | str = HAAR) -> np.ndarray:
    """Reconstruct an H x W x C image from per-channel pyramids."""
    return np.stack([dwt_inverse(p, filt) for p in pyramids], axis=-1)


def subband_view(pyramid: WaveletPyramid, level: int | None, orientation: str) -> np.ndarray:
    """Return the named subband array itself (not a copy).

    Writing into the returned array modifies the pyramid. ``level`` may be
    None for the approximation band.
    """
    if orientation == APPROXIMATION:
        if level is not None and level != pyramid.levels:
            raise ValueError(
                f"approximation band lives at level {pyramid.levels}, not {level}"
            )
        return pyramid.approximation
    if orientation not in ORIENTATIONS:
        raise ValueError(f"unknown orientation {orientation!r}")
    if not 1 <= level <= pyramid.levels:
        raise ValueError(f"level {level} outside 1..{pyramid.levels}")
    return pyramid.details[level - 1][orientation]
