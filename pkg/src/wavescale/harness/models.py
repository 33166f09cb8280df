"""Black-box model adapters.

A model maps an H x W x C image in [0, 1] to a probability. Models that can
be called concurrently set ``thread_safe = True``; everything else is
evaluated sequentially.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..wavelet import APPROXIMATION, as_channels, dwt_stack


class ModelLoadError(RuntimeError):
    pass


class BlackBoxModel:
    """Adapter interface. Subclasses may add ``predict_batch(images)`` taking a
    ``B x H x W [x C]`` stack when a vectorized path exists."""

    name = "model"
    thread_safe = False

    def predict(self, image: np.ndarray) -> float:
        raise NotImplementedError

    def predict_record(self, record, image: np.ndarray) -> float:
        """Prediction with access to the manifest record; plain models ignore it."""
        return self.predict(image)

    def params(self) -> dict:
        return {}

    def fingerprint(self) -> str:
        blob = json.dumps({"name": self.name, **self.params()}, sort_keys=True)
        return f"{self.name}:{hashlib.sha256(blob.encode()).hexdigest()[:16]}"


class ConstantModel(BlackBoxModel):
    name = "constant"
    thread_safe = True

    def __init__(self, value: float = 0.5):
        if not 0.0 <= value <= 1.0:
            raise ValueError("constant output must be a probability")
        self.value = float(value)

    def predict(self, image):
        return self.value

    def predict_batch(self, images):
        return np.full(len(images), self.value)

    def params(self):
        return {"value": self.value}


class LabelOracleModel(BlackBoxModel):
    """Returns the ground-truth label of the record being evaluated."""

    name = "label_oracle"
    thread_safe = True

    def predict(self, image):
        raise RuntimeError("the label oracle only works through predict_record")

    def predict_record(self, record, image):
        return float(record.target)


def luminance(image: np.ndarray) -> np.ndarray:
    return as_channels(image).mean(axis=2)


def _luminance_stack(images) -> np.ndarray:
    """``B x H x W [x C]`` images to an ``H x W x B`` luminance stack."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr.mean(axis=3)
    if arr.ndim != 3:
        raise ValueError(f"expected a B x H x W [x C] stack, got shape {arr.shape}")
    return np.moveaxis(arr, 0, -1)


class SubbandEnergyModel(BlackBoxModel):
    """Output grows with the energy of one subband: ``E / (E + scale)``.

    ``cells`` optionally restricts the energy to a ``(row_slice, col_slice)``
    window of the subband.
    """

    name = "subband_energy"
    thread_safe = True

    def __init__(self, level: int, orientation: str, levels: int = 3, filt: str = "haar",
                 scale: float = 1.0, window: tuple[tuple[int, int], tuple[int, int]] | None = None):
        self.level, self.orientation, self.levels = level, orientation, levels
        self.filt, self.scale, self.window = filt, float(scale), window

    def energies(self, images) -> np.ndarray:
        approx, details = dwt_stack(_luminance_stack(images), self.filt, self.levels)
        band = approx if self.orientation == APPROXIMATION else details[self.level - 1][self.orientation]
        if self.window is not None:
            (r0, r1), (c0, c1) = self.window
            band = band[r0:r1, c0:c1]
        return np.sum(band**2, axis=(0, 1))

    def energy(self, image) -> float:
        return float(self.energies(np.asarray(image)[None])[0])

    def predict_batch(self, images) -> np.ndarray:
        e = self.energies(images)
        return e / (e + self.scale)

    def predict(self, image):
        return float(self.predict_batch(np.asarray(image)[None])[0])

    def params(self):
        return {"level": self.level, "orientation": self.orientation, "levels": self.levels,
                "filter": self.filt, "scale": self.scale, "window": self.window}


class DetailEnergyModel(BlackBoxModel):
    """Logistic response to the mean detail energy per pixel at chosen levels.

    Fine-scale texture raises the output, so blur and loss of detail lower it.
    """

    name = "detail_energy"
    thread_safe = True

    def __init__(self, detail_levels=(1,), levels: int = 3, filt: str = "haar",
                 threshold: float = 1e-3, gain: float = 4.0):
        self.detail_levels = tuple(detail_levels)
        self.levels, self.filt = levels, filt
        self.threshold, self.gain = float(threshold), float(gain)

    def detail_energies(self, images) -> np.ndarray:
        lum = _luminance_stack(images)
        _, details = dwt_stack(lum, self.filt, self.levels)
        e = sum(np.sum(b**2, axis=(0, 1)) for j in self.detail_levels for b in details[j - 1].values())
        return e / (lum.shape[0] * lum.shape[1])

    def detail_energy(self, image) -> float:
        return float(self.detail_energies(np.asarray(image)[None])[0])

    def predict_batch(self, images) -> np.ndarray:
        z = self.gain * (np.log(self.detail_energies(images) + 1e-12) - np.log(self.threshold))
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, image):
        return float(self.predict_batch(np.asarray(image)[None])[0])

    def params(self):
        return {"detail_levels": list(self.detail_levels), "levels": self.levels, "filter": self.filt,
                "threshold": self.threshold, "gain": self.gain}


class OnnxModel(BlackBoxModel):
    """Serialized CNN run through onnxruntime (optional dependency).

    Inputs are resized to ``input_size``, optionally ImageNet-normalized and
    fed as NCHW float32. The positive-class probability is read from a
    single logit (sigmoid) or from index ``positive_index`` of a softmax.
    """

    name = "onnx"
    thread_safe = True

    def __init__(self, path: str | Path, input_size: int = 224, normalize: bool = True,
                 positive_index: int = 1):
        self.path = Path(path)
        if not self.path.is_file():
            raise ModelLoadError(f"model file not found: {self.path}")
        try:
            import onnxruntime
        except ImportError as exc:
            raise ModelLoadError("onnxruntime is required for onnx models (pip install onnxruntime)") from exc
        self.session = onnxruntime.InferenceSession(str(self.path), providers=["CPUExecutionProvider"])
        self.input_name = self.session.get_inputs()[0].name
        self.input_size, self.normalize, self.positive_index = input_size, normalize, positive_index
        self._digest = hashlib.sha256(self.path.read_bytes()).hexdigest()[:16]

    def predict(self, image):
        from PIL import Image

        from ..augment import IMAGENET_MEAN, IMAGENET_STD

        arr = as_channels(image)
        if arr.shape[2] == 1:
            arr = np.repeat(arr, 3, axis=2)
        if arr.shape[:2] != (self.input_size, self.input_size):
            pil = Image.fromarray(np.round(arr * 255).astype(np.uint8))
            arr = np.asarray(pil.resize((self.input_size, self.input_size), Image.BILINEAR)) / 255.0
        if self.normalize:
            arr = (arr - np.asarray(IMAGENET_MEAN)) / np.asarray(IMAGENET_STD)
        x = arr.transpose(2, 0, 1)[None].astype(np.float32)
        out = np.asarray(self.session.run(None, {self.input_name: x})[0], dtype=np.float64).ravel()
        if out.size == 1:
            return float(1.0 / (1.0 + np.exp(-out[0])))
        e = np.exp(out - out.max())
        return float(e[self.positive_index] / e.sum())

    def params(self):
        return {"sha256": self._digest, "input_size": self.input_size, "normalize": self.normalize}


def load_model(spec: dict, base_dir: str | Path = ".") -> BlackBoxModel:
    """Build a model adapter from a config mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    base_dir = Path(base_dir)
    if "filter" in spec and kind in ("subband_energy", "detail_energy"):
        spec["filt"] = spec.pop("filter")
    try:
        if kind == "constant":
            return ConstantModel(**spec)
        if kind == "label_oracle":
            return LabelOracleModel()
        if kind == "subband_energy":
            return SubbandEnergyModel(**spec)
        if kind == "detail_energy":
            return DetailEnergyModel(**spec)
        if kind == "onnx":
            path = base_dir / spec.pop("path")
            return OnnxModel(path, **spec)
        if kind == "scattering":
            from ..scattering import LinearHead, ScatteringConfig, ScatteringModel

            head_path = base_dir / spec.pop("head")
            if not head_path.is_file():
                raise ModelLoadError(f"scattering head file not found: {head_path}")
            return ScatteringModel(LinearHead.from_json(head_path.read_text()), ScatteringConfig(**spec))
    except TypeError as exc:
        raise ModelLoadError(f"bad parameters for model kind {kind!r}: {exc}") from exc
    raise ModelLoadError(f"unknown model kind {kind!r}")
