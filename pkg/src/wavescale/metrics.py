"""Scalar diagnostics: confusion rates, SSIM, distances and Pearson correlation.

Statistics that are undefined for the given input (empty denominators, zero
variance) are reported as ``None`` rather than NaN.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.stats import t as t_dist

from .wavelet import as_channels

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW = 8


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, labels: Iterable[int], predicted: Iterable[int]) -> "ConfusionCounts":
        tp = fp = tn = fn = 0
        for y, p in zip(labels, predicted):
            if y and p:
                tp += 1
            elif y:
                fn += 1
            elif p:
                fp += 1
            else:
                tn += 1
        return cls(tp, fp, tn, fn)


def rates_and_f1(c: ConfusionCounts) -> dict[str, float | None]:
    pos = c.tp + c.fn
    neg = c.tn + c.fp
    tpr = c.tp / pos if pos else None
    tnr = c.tn / neg if neg else None
    f1_den = 2 * c.tp + c.fp + c.fn
    return {
        "tpr": tpr,
        "tnr": tnr,
        "fpr": None if tnr is None else c.fp / neg,
        "fnr": None if tpr is None else c.fn / pos,
        "f1": 2 * c.tp / f1_den if f1_den else None,
    }


@dataclass(frozen=True)
class ProbabilityShift:
    p_source: float
    p_target: float

    def __post_init__(self):
        for name in ("p_source", "p_target"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")

    @property
    def delta(self) -> float:
        return abs(self.p_target - self.p_source)


def _ssim_2d(a: np.ndarray, b: np.ndarray, window: int, data_range: float) -> float:
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    win = min(window, a.shape[0], a.shape[1])
    # valid windows only: the filter is centred, so trim half a window on each side
    mu_a = uniform_filter(a, win, mode="constant")
    mu_b = uniform_filter(b, win, mode="constant")
    e_aa = uniform_filter(a * a, win, mode="constant")
    e_bb = uniform_filter(b * b, win, mode="constant")
    e_ab = uniform_filter(a * b, win, mode="constant")
    lo = win // 2
    hi_r = a.shape[0] - (win - 1 - lo)
    hi_c = a.shape[1] - (win - 1 - lo)
    sl = (slice(lo, hi_r), slice(lo, hi_c))
    mu_a, mu_b, e_aa, e_bb, e_ab = (x[sl] for x in (mu_a, mu_b, e_aa, e_bb, e_ab))
    # unbiased window statistics, as in the reference implementation
    n = win * win
    corr = n / (n - 1) if n > 1 else 1.0
    var_a = (e_aa - mu_a**2) * corr
    var_b = (e_bb - mu_b**2) * corr
    cov = (e_ab - mu_a * mu_b) * corr
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over valid ``window x window`` uniform windows, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ca, cb = as_channels(a), as_channels(b)
    return float(np.mean([_ssim_2d(ca[:, :, i], cb[:, :, i], window, data_range)
                          for i in range(ca.shape[2])]))


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))


def student_t_two_sided_p(t: float, dof: int) -> float:
    return float(2.0 * t_dist.sf(abs(t), dof))


@dataclass(frozen=True)
class Correlation:
    r: float | None
    p_value: float | None
    n: int

    @property
    def defined(self) -> bool:
        return self.r is not None


def pearson(xs: Sequence[float], ys: Sequence[float]) -> Correlation:
    """Sample correlation with a two-sided t-test p-value (n - 2 degrees of freedom)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1D sequences of equal length")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 observations, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx <= 0.0 or syy <= 0.0:
        return Correlation(None, None, n)
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    dof = n - 2
    if abs(r) == 1.0:
        return Correlation(r, 0.0, n)
    t = r * math.sqrt(dof / (1.0 - r * r))
    return Correlation(r, student_t_two_sided_p(t, dof), n)


@dataclass(frozen=True)
class PairObservation:
    p_source: float
    p_target: float
    ssim_low_scale: float
    euclid_low_scale: float
    pair_id: str = ""

    @property
    def delta(self) -> float:
        return ProbabilityShift(self.p_source, self.p_target).delta


def probability_shift_analysis(pairs: Sequence[PairObservation]) -> dict:
    if len(pairs) < 3:
        raise ValueError(f"need at least 3 pairs, got {len(pairs)}")
    deltas = [p.delta for p in pairs]
    r_ssim = pearson([p.ssim_low_scale for p in pairs], deltas)
    r_euc = pearson([p.euclid_low_scale for p in pairs], deltas)
    return {
        "n": len(pairs),
        "delta_p": deltas,
        "mean_delta_p": float(np.mean(deltas)),
        "ssim_vs_delta_p": asdict(r_ssim),
        "euclid_vs_delta_p": asdict(r_euc),
        "undefined": [name for name, c in (("ssim_vs_delta_p", r_ssim), ("euclid_vs_delta_p", r_euc))
                      if not c.defined],
    }


RATE_COLUMNS = ("f1", "tpr", "tnr", "fpr", "fnr")


def report_rows_csv(rows: dict[str, ConfusionCounts]) -> str:
    """Delimiter-separated table of counts and rates, one row per named split."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["split", "tp", "fp", "tn", "fn", *RATE_COLUMNS])
    for name, c in rows.items():
        rates = rates_and_f1(c)
        writer.writerow([name, c.tp, c.fp, c.tn, c.fn,
                         *("" if rates[k] is None else f"{rates[k]:.6f}" for k in RATE_COLUMNS)])
    return buf.getvalue()
