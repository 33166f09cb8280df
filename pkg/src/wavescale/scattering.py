"""Scattering-transform features and a logistic-regression head.

The filter bank holds ``m`` dyadic scales and ``J`` orientations of Morlet
filters built in the Fourier domain. Emitted paths, per pooled location:

* first order ``|x * psi(j, t)|`` for every scale ``j`` and orientation ``t``
  (``m * J`` paths);
* second order ``||x * psi(j1, t1)| * psi(j2, t2)|`` for every ordered scale
  pair ``(j1, j2)`` and every orientation pair ``t1 < t2``
  (``m**2 * J * (J - 1) / 2`` paths).

This gives ``m*J + m**2 * J * (J - 1) / 2`` coefficients, e.g. 128 for
``m = 2, J = 8``. Convolutions are circular, so pooled features of a
circularly shifted image are unchanged.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .wavelet import as_channels


class TrainingError(RuntimeError):
    pass


class UntrainedHeadError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScatteringConfig:
    depth: int = 2
    orientations: int = 8
    input_size: int = 64
    pooling: int = 1
    xi0: float = 3 * np.pi / 4
    sigma0: float = 0.8
    slant: float = 0.5

    def __post_init__(self):
        if self.depth not in (1, 2, 3):
            raise ValueError(f"depth must be 1, 2 or 3, got {self.depth}")
        if self.orientations < 1:
            raise ValueError("orientations must be >= 1")
        if self.input_size % self.pooling:
            raise ValueError("pooling must divide input_size")
        if self.input_size < 2 ** (self.depth + 1):
            raise ValueError("input_size too small for the requested number of scales")

    @property
    def scales(self) -> int:
        return self.depth

    @property
    def paths_per_location(self) -> int:
        m, J = self.depth, self.orientations
        return m * J + m * m * J * (J - 1) // 2

    @property
    def feature_length(self) -> int:
        return self.paths_per_location * self.pooling**2

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ScatteringFeatures:
    values: np.ndarray
    paths: list[tuple]

    def __len__(self):
        return len(self.values)


def _morlet_hat(n: int, scale: int, theta: float, cfg: ScatteringConfig) -> np.ndarray:
    w = 2 * np.pi * np.fft.fftfreq(n)
    wy, wx = np.meshgrid(w, w, indexing="ij")
    xi = cfg.xi0 / 2**scale
    sigma = cfg.sigma0 * 2**scale
    # rotate frequencies so the wave vector points along theta
    u = np.cos(theta) * wx + np.sin(theta) * wy
    v = -np.sin(theta) * wx + np.cos(theta) * wy
    # spatial envelope std is sigma along theta and sigma / slant across it
    gabor = np.exp(-0.5 * sigma**2 * ((u - xi) ** 2 + (v / cfg.slant) ** 2))
    envelope = np.exp(-0.5 * sigma**2 * (u**2 + (v / cfg.slant) ** 2))
    kappa = gabor[0, 0] / envelope[0, 0]
    return gabor - kappa * envelope


def _gaussian_hat(n: int, scale: int, cfg: ScatteringConfig) -> np.ndarray:
    w = 2 * np.pi * np.fft.fftfreq(n)
    wy, wx = np.meshgrid(w, w, indexing="ij")
    sigma = cfg.sigma0 * 2**scale
    return np.exp(-0.5 * sigma**2 * (wx**2 + wy**2))


@lru_cache(maxsize=8)
def filter_bank(cfg: ScatteringConfig) -> dict:
    n = cfg.input_size
    psi = {
        (j, t): _morlet_hat(n, j, np.pi * t / cfg.orientations, cfg)
        for j in range(cfg.scales)
        for t in range(cfg.orientations)
    }
    for arr in psi.values():
        arr.setflags(write=False)
    phi = _gaussian_hat(n, cfg.scales, cfg)
    phi.setflags(write=False)
    return {"psi": psi, "phi": phi}


def path_list(cfg: ScatteringConfig) -> list[tuple]:
    m, J = cfg.scales, cfg.orientations
    paths: list[tuple] = [((j, t),) for j in range(m) for t in range(J)]
    for j1 in range(m):
        for j2 in range(m):
            for t1 in range(J):
                for t2 in range(t1 + 1, J):
                    paths.append(((j1, t1), (j2, t2)))
    return paths


def to_grayscale(image: np.ndarray, size: int) -> np.ndarray:
    """Channel mean, then area-average down to ``size x size``."""
    gray = as_channels(image).mean(axis=2)
    h, w = gray.shape
    if h != w:
        raise ValueError(f"scattering needs a square image, got {h}x{w}")
    if h % size:
        raise ValueError(f"image side {h} is not a multiple of the input size {size}")
    f = h // size
    return gray.reshape(size, f, size, f).mean(axis=(1, 3))


def _pool(u: np.ndarray, phi_hat: np.ndarray, pooling: int) -> np.ndarray:
    if pooling == 1:
        return np.array([u.mean()])
    smooth = np.real(np.fft.ifft2(np.fft.fft2(u) * phi_hat))
    n = u.shape[0]
    b = n // pooling
    return smooth.reshape(pooling, b, pooling, b).mean(axis=(1, 3)).ravel()


def scattering_forward(image: np.ndarray, cfg: ScatteringConfig = ScatteringConfig()) -> ScatteringFeatures:
    x = to_grayscale(image, cfg.input_size)
    bank = filter_bank(cfg)
    psi, phi = bank["psi"], bank["phi"]
    x_hat = np.fft.fft2(x)
    first = {key: np.abs(np.fft.ifft2(x_hat * f)) for key, f in psi.items()}
    first_hat = {}
    values = []
    paths = path_list(cfg)
    for path in paths:
        if len(path) == 1:
            u = first[path[0]]
        else:
            (l1, l2) = path
            if l1 not in first_hat:
                first_hat[l1] = np.fft.fft2(first[l1])
            u = np.abs(np.fft.ifft2(first_hat[l1] * psi[l2]))
        values.append(_pool(u, phi, cfg.pooling))
    values = np.concatenate(values)
    # pooled moduli are nonnegative up to FFT round-off in the low-pass branch
    values = np.maximum(values, 0.0)
    meta = [p for p in paths for _ in range(cfg.pooling**2)]
    return ScatteringFeatures(values, meta)


@dataclass(frozen=True)
class HeadHyperparams:
    learning_rate: float = 0.1
    l2: float = 1e-4
    epochs: int = 500
    standardize: bool = True


@dataclass
class LinearHead:
    weights: np.ndarray | None = None
    bias: float = 0.0
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    trained: bool = False
    config_fingerprint: str = ""
    loss_history: list[float] = field(default_factory=list, repr=False)

    def decision(self, x: np.ndarray) -> np.ndarray:
        if not self.trained or self.weights is None:
            raise UntrainedHeadError("the linear head has not been trained")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[0]:
            raise ValueError(f"expected {self.weights.shape[0]} features, got {x.shape[-1]}")
        if self.mean is not None:
            x = (x - self.mean) / self.scale
        return x @ self.weights + self.bias

    def to_json(self) -> str:
        if not self.trained:
            raise UntrainedHeadError("refusing to serialize an untrained head")
        return json.dumps({
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mean": None if self.mean is None else self.mean.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
            "config_fingerprint": self.config_fingerprint,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LinearHead":
        d = json.loads(text)
        return cls(
            weights=np.array(d["weights"], dtype=np.float64),
            bias=float(d["bias"]),
            mean=None if d.get("mean") is None else np.array(d["mean"]),
            scale=None if d.get("scale") is None else np.array(d["scale"]),
            trained=True,
            config_fingerprint=d.get("config_fingerprint", ""),
        )


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def logistic_loss(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean binary cross-entropy plus ``l2 / 2 * ||w||^2``."""
    z = x @ w + b
    # log(1 + exp(z)) - y z, computed stably
    ce = np.logaddexp(0.0, z) - y * z
    return float(np.mean(ce) + 0.5 * l2 * (w @ w))


def logistic_grad(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float):
    r = sigmoid(x @ w + b) - y
    return x.T @ r / len(y) + l2 * w, float(np.mean(r))


def fit_head(features, labels, hyper: HeadHyperparams = HeadHyperparams(),
             config_fingerprint: str = "") -> LinearHead:
    """Full-batch gradient descent on the L2-penalised logistic loss.

    Starting from zero, each epoch takes one step; the step is halved until
    the loss does not increase, so the loss history is non-increasing.
    """
    try:
        x = np.array([getattr(f, "values", f) for f in features], dtype=np.float64)
    except ValueError as exc:
        raise TrainingError("features must be equal-length vectors") from exc
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise TrainingError("features must be equal-length vectors, one per label")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise TrainingError("labels must be binary")
    if min(np.sum(y == 0), np.sum(y == 1)) < 2:
        raise TrainingError("need at least two examples of each class")
    mean = scale = None
    if hyper.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        x = (x - mean) / scale
    w = np.zeros(x.shape[1])
    b = 0.0
    loss = logistic_loss(w, b, x, y, hyper.l2)
    history = [loss]
    for _ in range(hyper.epochs):
        gw, gb = logistic_grad(w, b, x, y, hyper.l2)
        step = hyper.learning_rate
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss = logistic_loss(w_new, b_new, x, y, hyper.l2)
            if new_loss <= loss or step < 1e-12:
                break
            step /= 2
        if new_loss <= loss:
            w, b, loss = w_new, b_new, new_loss
        history.append(loss)
    return LinearHead(w, b, mean, scale, True, config_fingerprint, history)


def predict(head: LinearHead, features) -> float:
    x = getattr(features, "values", features)
    return float(sigmoid(head.decision(np.asarray(x))))


class ScatteringModel:
    """Black-box adapter: image -> scattering features -> logistic head."""

    thread_safe = True

    def __init__(self, head: LinearHead | None, cfg: ScatteringConfig = ScatteringConfig()):
        self.head = head
        self.cfg = cfg
        self.name = f"scattering-m{cfg.depth}-J{cfg.orientations}"

    def prepare(self, image: np.ndarray) -> np.ndarray:
        """Area-resize to a square multiple of ``input_size`` when needed."""
        gray = as_channels(image)
        size = self.cfg.input_size
        if gray.shape[0] != gray.shape[1] or gray.shape[0] % size:
            from .harness.resample import resize_area

            gray = resize_area(gray, (size, size))
        return gray

    def predict(self, image: np.ndarray) -> float:
        if self.head is None:
            raise UntrainedHeadError("the scattering model has no trained head")
        return predict(self.head, scattering_forward(self.prepare(image), self.cfg))

    def fingerprint(self) -> str:
        digest = hashlib.sha256(self.head.to_json().encode()).hexdigest()[:16]
        return f"{self.name}:{self.cfg.fingerprint()}:{digest}"
