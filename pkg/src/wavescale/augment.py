"""Scale-targeted augmentations: Gaussian blur and wavelet coefficient cancellation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .wavelet import (
    ORIENTATIONS,
    WaveletPyramid,
    as_channels,
    dwt_forward,
    dwt_inverse,
    get_filter,
)


@dataclass(frozen=True)
class BlurConfig:
    sigma: float = 2.0
    truncate: float = 3.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")

    @property
    def radius(self) -> int:
        return int(math.ceil(self.truncate * self.sigma))

    def kernel(self) -> np.ndarray:
        x = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        k = np.exp(-0.5 * (x / self.sigma) ** 2)
        return k / k.sum()


@dataclass(frozen=True)
class WaveletPerturbConfig:
    cancel_fraction: float = 0.2
    target_levels: tuple[int, ...] = (1,)
    levels: int = 3
    filter: str = "haar"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cancel_fraction <= 1.0:
            raise ValueError(f"cancel_fraction must be in [0, 1], got {self.cancel_fraction}")
        if not self.target_levels:
            raise ValueError("target_levels must not be empty")
        bad = [j for j in self.target_levels if not 1 <= j <= self.levels]
        if bad:
            raise ValueError(f"target levels {bad} outside 1..{self.levels}")
        object.__setattr__(self, "target_levels", tuple(sorted(set(self.target_levels))))


def gaussian_blur(image: np.ndarray, cfg: BlurConfig = BlurConfig()) -> np.ndarray:
    """Separable Gaussian blur per channel with mirrored boundaries."""
    arr = np.asarray(image, dtype=np.float64)
    k = cfg.kernel()
    out = convolve1d(arr, k, axis=0, mode="reflect")
    return convolve1d(out, k, axis=1, mode="reflect")


def _target_bands(pyr: WaveletPyramid, levels) -> list[np.ndarray]:
    return [pyr.details[j - 1][o] for j in levels for o in ORIENTATIONS]


def perturb_pyramid(pyr: WaveletPyramid, cfg: WaveletPerturbConfig, rng: np.random.Generator) -> int:
    """Zero ``floor(fraction * n)`` uniformly chosen target coefficients in place.

    Sampling is without replacement over the union of the target subbands.
    Returns the number of cancelled coefficients.
    """
    bands = _target_bands(pyr, cfg.target_levels)
    sizes = np.array([b.size for b in bands])
    n = int(sizes.sum())
    count = int(math.floor(cfg.cancel_fraction * n))
    if count == 0:
        return 0
    chosen = rng.choice(n, size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for b, lo, hi in zip(bands, offsets[:-1], offsets[1:]):
        local = chosen[(chosen >= lo) & (chosen < hi)] - lo
        b.reshape(-1)[local] = 0.0
    return count


def wavelet_perturb(image: np.ndarray, cfg: WaveletPerturbConfig = WaveletPerturbConfig()) -> np.ndarray:
    """Cancel random wavelet coefficients at the target scales, channel by channel."""
    arr = np.asarray(image, dtype=np.float64)
    chans = as_channels(arr)
    filt = get_filter(cfg.filter)
    rng = np.random.default_rng(cfg.seed)
    out = np.empty_like(chans)
    for c in range(chans.shape[2]):
        pyr = dwt_forward(chans[:, :, c], filt, cfg.levels)
        perturb_pyramid(pyr, cfg, rng)
        out[:, :, c] = dwt_inverse(pyr, filt)
    out = np.clip(out, 0.0, 1.0)
    return out[:, :, 0] if arr.ndim == 2 else out


def blur_then_perturb(image: np.ndarray, blur_cfg: BlurConfig = BlurConfig(),
                      wp_cfg: WaveletPerturbConfig = WaveletPerturbConfig()) -> np.ndarray:
    return wavelet_perturb(gaussian_blur(image, blur_cfg), wp_cfg)


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class AugmentationPipeline:
    """Ordered, serializable list of augmentation steps.

    Each step is ``{"op": name, **params}``. Supported ops: ``random_crop``
    (``size``), ``random_rot90``, ``blur`` (``sigma``), ``wavelet_perturb``
    (``fraction``, ``target_levels``, ``levels``, ``filter``) and
    ``normalize`` (``mean``, ``std``).
    """

    steps: list[dict] = field(default_factory=list)

    @classmethod
    def blur_wp(cls, sigma: float = 2.0, fraction: float = 0.2, crop: int | None = None,
                normalize: bool = False) -> "AugmentationPipeline":
        steps = []
        if crop:
            steps.append({"op": "random_crop", "size": crop})
        steps.append({"op": "random_rot90"})
        steps.append({"op": "blur", "sigma": sigma})
        steps.append({"op": "wavelet_perturb", "fraction": fraction, "target_levels": [1],
                      "levels": 3, "filter": "haar"})
        if normalize:
            steps.append({"op": "normalize", "mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)})
        return cls(steps)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AugmentationPipeline":
        return cls(json.loads(text)["steps"])

    def apply(self, image: np.ndarray, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        out = np.asarray(image, dtype=np.float64)
        for step in self.steps:
            op = step["op"]
            if op == "random_crop":
                size = int(step["size"])
                h, w = out.shape[:2]
                if size > min(h, w):
                    raise ValueError(f"crop size {size} larger than image {h}x{w}")
                r = int(rng.integers(0, h - size + 1))
                c = int(rng.integers(0, w - size + 1))
                out = out[r:r + size, c:c + size]
            elif op == "random_rot90":
                out = np.rot90(out, k=int(rng.integers(0, 4)), axes=(0, 1)).copy()
            elif op == "blur":
                out = gaussian_blur(out, BlurConfig(float(step["sigma"])))
            elif op == "wavelet_perturb":
                cfg = WaveletPerturbConfig(
                    float(step["fraction"]), tuple(step.get("target_levels", (1,))),
                    int(step.get("levels", 3)), step.get("filter", "haar"),
                    int(rng.integers(0, 2**31 - 1)),
                )
                out = wavelet_perturb(out, cfg)
            elif op == "normalize":
                out = (as_channels(out) - np.asarray(step["mean"])) / np.asarray(step["std"])
            else:
                raise ValueError(f"unknown augmentation op {op!r}")
        return out
