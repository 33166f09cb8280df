"""Synthetic rooftop dataset for smoke-testing the benchmark pipeline.

Scenes are rendered at 10 cm/px (128 x 128). Panels are dark rectangles
crossed by a bright grid with a 4-pixel pitch; most grids use 2-pixel lines,
which only become one-pixel texture once delivered at 20 cm/px. Negatives
hold a plain distractor instead (see ``_distractor``). The second provider
sees the same scenes at 20 cm/px through a softer acquisition chain
(``other_provider``) that mostly destroys the fine grid.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..augment import BlurConfig, gaussian_blur
from .manifest import DEFAULT_SPLITS, ManifestRecord, write_manifest
from .resample import resample_gsd, save_image

SIDE = 128
NATIVE_GSD = 10.0
TARGET_GSD = 20.0

TOY_MODEL = {"kind": "detail_energy", "detail_levels": [1], "levels": 1, "filter": "haar",
             "threshold": 1e-3, "gain": 4.0}


def _background(rng: np.random.Generator, region: str) -> np.ndarray:
    base = {"fr": (0.62, 0.42, 0.36), "be": (0.55, 0.50, 0.46), "de": (0.50, 0.40, 0.38)}[region]
    yy, xx = np.mgrid[0:SIDE, 0:SIDE] / SIDE
    shade = 0.08 * (yy - 0.5) + 0.04 * rng.standard_normal() * (xx - 0.5)
    img = np.asarray(base)[None, None, :] + shade[:, :, None]
    img = img + 0.01 * rng.standard_normal((SIDE, SIDE, 1))
    return img


def _panel(img: np.ndarray, rng: np.random.Generator, line_width: int):
    h, w = int(rng.integers(36, 56)), int(rng.integers(36, 56))
    # even offsets keep the grid aligned with the 20 cm/px pixel lattice
    r = 2 * int(rng.integers(6, (SIDE - h - 12) // 2))
    c = 2 * int(rng.integers(6, (SIDE - w - 12) // 2))
    img[r:r + h, c:c + w] = (0.10, 0.14, 0.30)
    grid = np.zeros((h, w), dtype=bool)
    for k in range(line_width):
        grid[k::4, :] = True
        grid[:, k::4] = True
    img[r:r + h, c:c + w][grid] = (0.70, 0.72, 0.78)


def _distractor(img: np.ndarray, rng: np.random.Generator, kind: int):
    if kind == 0:
        h, w = int(rng.integers(30, 50)), int(rng.integers(30, 50))
        r, c = int(rng.integers(12, SIDE - h - 12)), int(rng.integers(12, SIDE - w - 12))
        img[r:r + h, c:c + w] = (0.12, 0.16, 0.28)
    elif kind == 1:
        yy, xx = np.mgrid[0:SIDE, 0:SIDE]
        cy, cx = rng.integers(40, SIDE - 40, size=2)
        rad = int(rng.integers(18, 28))
        img[(yy - cy) ** 2 + (xx - cx) ** 2 < rad**2] = (0.25, 0.55, 0.75)
    else:
        tiles = (np.arange(SIDE) // 16) % 2
        img[:, :] -= 0.06 * tiles[:, None, None]


def render_scene(index: int, positive: bool, region: str) -> np.ndarray:
    rng = np.random.default_rng(1000 + index)
    img = _background(rng, region)
    if positive:
        _panel(img, rng, 1 if index % 4 == 0 else 2)
    else:
        _distractor(img, rng, index % 3)
    return np.clip(img, 0.0, 1.0)


def other_provider(image_10cm: np.ndarray, index: int) -> np.ndarray:
    """Same scene from a different acquisition chain, delivered at 20 cm/px."""
    rng = np.random.default_rng(5000 + index)
    img = gaussian_blur(image_10cm, BlurConfig(sigma=0.3 + 0.3 * (index % 4)))
    img = resample_gsd(img, NATIVE_GSD, TARGET_GSD)
    contrast = 0.75 + 0.1 * rng.random()
    img = img.mean(axis=(0, 1), keepdims=True) + contrast * (img - img.mean(axis=(0, 1), keepdims=True))
    img = img + 0.03 + 0.005 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def make_toy_dataset(out_dir: str | Path) -> Path:
    """Write images, ``manifest.csv`` and ``config.json``; return the config path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    index = 0

    def add(rid, image, label, provider, gsd, region, pair=None):
        path = save_image(image, out / "images" / f"{rid}.png")
        records.append(ManifestRecord(rid, path.relative_to(out), label, provider, gsd, region, pair))

    for k in range(8):
        positive = k % 2 == 0
        label = "pv" if positive else "no_pv"
        scene = render_scene(index, positive, "fr")
        pid = f"p{k:02d}"
        add(f"pair{k:02d}_google", scene, label, "google", NATIVE_GSD, "fr", pid)
        add(f"pair{k:02d}_ign", other_provider(scene, index), label, "ign", TARGET_GSD, "fr", pid)
        index += 1
    for k in range(8):
        positive = k % 2 == 0
        add(f"gsd{k:02d}", render_scene(index, positive, "fr"), "pv" if positive else "no_pv",
            "google", NATIVE_GSD, "fr")
        index += 1
    for k in range(8):
        positive = k % 2 == 0
        region = "be" if k < 4 else "de"
        add(f"ood{k:02d}", render_scene(index, positive, region), "pv" if positive else "no_pv",
            "google", NATIVE_GSD, region)
        index += 1

    write_manifest(records, out / "manifest.csv")
    config = {
        "model": TOY_MODEL,
        "manifest": "manifest.csv",
        "splits": DEFAULT_SPLITS,
        "threshold": 0.5,
        "paired": {"levels": 3, "filter": "haar", "resample_to_gsd": TARGET_GSD},
        "wcam": {"samples": 256, "grid": 2, "levels": 3, "filter": "haar", "seed": 0,
                 "sequence": "sobol", "top_k": 1},
        "augment": {"preview": True, "blur_sigma": 2.0, "wp_fraction": 0.2, "seed": 0},
        "output_dir": "out",
        "workers": 1,
    }
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return path
