"""Benchmark runner: split evaluation, paired probability shifts and reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..augment import BlurConfig, WaveletPerturbConfig, blur_then_perturb
from ..metrics import (
    ConfusionCounts,
    PairObservation,
    euclidean_distance,
    probability_shift_analysis,
    rates_and_f1,
    report_rows_csv,
    ssim,
)
from ..sensitivity import MaskPlan
from ..wavelet import dwt_image, get_filter
from ..wcam import WaveletGrid, compute_wcam, render_heatmaps
from .errors import StageError
from .manifest import DEFAULT_SPLITS, DatasetManifest, ManifestError, ManifestRecord, SplitRule, load_manifest
from .models import BlackBoxModel, ModelLoadError, load_model
from .resample import load_image, resample_gsd, resize_area, save_image

logger = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.05
PREDICTION_HEADER = ("id", "image_path", "label", "provider", "probability", "predicted", "error")


@dataclass
class PredictionRow:
    id: str
    image_path: str
    label: int
    provider: str
    probability: float | None
    predicted: int | None
    error: str = ""


@dataclass
class SplitEvaluation:
    name: str
    counts: ConfusionCounts
    predictions: list[PredictionRow]
    skipped: int = 0

    def summary(self) -> dict:
        return {
            "n": len(self.predictions),
            "skipped": self.skipped,
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "tn": self.counts.tn, "fn": self.counts.fn},
            "rates": rates_and_f1(self.counts),
        }


def load_for_rule(record: ManifestRecord, resample_to_gsd: float | None) -> np.ndarray:
    img = load_image(record.image_path)
    if resample_to_gsd is not None and resample_to_gsd != record.gsd_cm_per_px:
        img = resample_gsd(img, record.gsd_cm_per_px, resample_to_gsd)
    return img


def _map(fn, items, workers: int, thread_safe: bool) -> list:
    if workers > 1 and thread_safe:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _relative(path: Path, base: Path | None) -> str:
    try:
        return Path(path).relative_to(base).as_posix() if base else Path(path).as_posix()
    except ValueError:
        return Path(path).as_posix()


def evaluate_split(model: BlackBoxModel, manifest: DatasetManifest, rule: SplitRule,
                   threshold: float = 0.5, workers: int = 1) -> SplitEvaluation:
    """Threshold predictions on every record of the split and count outcomes.

    Records whose image or prediction fails are kept in the log with their
    error and left out of the counts; more than 5% failures abort the split.
    """
    records = rule.select(manifest)
    if not records:
        raise StageError("evaluate", f"split {rule.name!r} selects no records")
    base = manifest.source.parent if manifest.source else None

    def run(record: ManifestRecord) -> PredictionRow:
        rel = _relative(record.image_path, base)
        try:
            img = load_for_rule(record, rule.resample_to_gsd)
            p = float(model.predict_record(record, img))
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"model returned {p}, not a probability")
        except Exception as exc:  # noqa: BLE001 - any adapter failure is recorded
            logger.warning("split %s: record %s failed: %s", rule.name, record.id, exc)
            return PredictionRow(record.id, rel, record.target, record.provider, None, None,
                                 f"{type(exc).__name__}: {exc}")
        return PredictionRow(record.id, rel, record.target, record.provider, p, int(p >= threshold))

    rows = _map(run, records, workers, getattr(model, "thread_safe", False))
    skipped = sum(r.predicted is None for r in rows)
    if skipped > MAX_SKIP_FRACTION * len(rows):
        raise StageError("evaluate", f"split {rule.name!r}: {skipped}/{len(rows)} records failed")
    counts = replay_counts(rows)
    return SplitEvaluation(rule.name, counts, rows, skipped)


def replay_counts(rows: list[PredictionRow], threshold: float | None = None) -> ConfusionCounts:
    """Recount a prediction log, optionally re-thresholding the stored probabilities."""
    ok = [r for r in rows if r.probability is not None]
    if threshold is None:
        predicted = [r.predicted for r in ok]
    else:
        predicted = [int(r.probability >= threshold) for r in ok]
    return ConfusionCounts.from_predictions([r.label for r in ok], predicted)


def write_predictions(rows: list[PredictionRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for r in rows:
            w.writerow([r.id, r.image_path, "pv" if r.label else "no_pv", r.provider,
                        "" if r.probability is None else repr(r.probability),
                        "" if r.predicted is None else r.predicted, r.error])
    return path


def read_predictions(path: str | Path) -> list[PredictionRow]:
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("id", "label", "probability", "predicted") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: prediction log lacks columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            label = row["label"].strip()
            if label not in ("pv", "no_pv", "1", "0"):
                raise ValueError(f"{path}: row {lineno} has label {label!r}")
            prob = row["probability"].strip()
            pred = row["predicted"].strip()
            rows.append(PredictionRow(
                row["id"], row.get("image_path", ""), int(label in ("pv", "1")), row.get("provider", ""),
                float(prob) if prob else None, int(pred) if pred else None, row.get("error", ""),
            ))
    return rows


def low_scale_view(image: np.ndarray, levels: int, filt) -> np.ndarray:
    """Stack of per-channel approximation bands at depth ``levels``."""
    return np.stack([p.approximation for p in dwt_image(image, filt, levels)], axis=-1)


def paired_shift_run(model: BlackBoxModel, manifest: DatasetManifest, levels: int = 3, filt="haar",
                     resample_to_gsd: float | None = None, workers: int = 1) -> dict:
    """Probability shift versus low-scale similarity for every linked pair.

    Both images of a pair are brought to the coarser of their GSDs (or to
    ``resample_to_gsd`` if coarser still) before prediction and comparison.
    """
    filt = get_filter(filt)
    pairs = manifest.pairs()
    unpaired = sum(1 for r in manifest.records if not r.pair_id)

    def run(pair):
        src, tgt = pair
        gsd = max(src.gsd_cm_per_px, tgt.gsd_cm_per_px, resample_to_gsd or 0.0)
        a = load_for_rule(src, gsd)
        b = load_for_rule(tgt, gsd)
        if a.shape != b.shape:
            shape = (min(a.shape[0], b.shape[0]), min(a.shape[1], b.shape[1]))
            a, b = resize_area(a, shape), resize_area(b, shape)
        pa = float(model.predict_record(src, a))
        pb = float(model.predict_record(tgt, b))
        la, lb = low_scale_view(a, levels, filt), low_scale_view(b, levels, filt)
        return PairObservation(pa, pb, ssim(la, lb, data_range=2.0**levels), euclidean_distance(la, lb),
                               src.pair_id)

    try:
        obs = _map(run, pairs, workers, getattr(model, "thread_safe", False))
    except Exception as exc:  # noqa: BLE001
        raise StageError("paired", f"pair evaluation failed: {exc}") from exc
    block = {
        "n": len(obs),
        "unpaired_records": unpaired,
        "levels": levels,
        "filter": filt.name,
        "pairs": [{"pair_id": o.pair_id, "p_source": o.p_source, "p_target": o.p_target,
                   "delta_p": o.delta, "ssim_low_scale": o.ssim_low_scale,
                   "euclid_low_scale": o.euclid_low_scale} for o in obs],
        "analysis": probability_shift_analysis(obs) if len(obs) >= 3 else None,
    }
    return block


@dataclass
class EvalReport:
    splits: dict[str, dict]
    paired: dict | None
    metadata: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"splits": self.splits, "paired": self.paired, "metadata": self.metadata,
                "artifacts": self.artifacts}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


DEFAULT_WCAM = {"samples": 1024, "grid": 4, "levels": 3, "filter": "haar", "seed": 0,
                "sequence": "sobol", "top_k": 1}
DEFAULT_PAIRED = {"levels": 3, "filter": "haar", "resample_to_gsd": None}


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("config", f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise StageError("config", "config must be a mapping")
    for key in ("model", "manifest"):
        if key not in cfg:
            raise StageError("config", f"missing required section {key!r}")
    unknown = set(cfg) - {"model", "manifest", "splits", "threshold", "paired", "wcam", "augment",
                          "output_dir", "workers"}
    if unknown:
        raise StageError("config", f"unknown sections {sorted(unknown)}")
    cfg.setdefault("splits", DEFAULT_SPLITS)
    cfg.setdefault("threshold", 0.5)
    cfg["paired"] = {**DEFAULT_PAIRED, **(cfg.get("paired") or {})}
    if cfg.get("wcam") is not None:
        cfg["wcam"] = {**DEFAULT_WCAM, **cfg["wcam"]}
    cfg.setdefault("augment", None)
    cfg.setdefault("output_dir", "out")
    cfg.setdefault("workers", 1)
    return cfg


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_benchmark(config_path: str | Path) -> EvalReport:
    """Run every configured stage and write artifacts under ``output_dir``.

    On failure an ``INCOMPLETE`` marker is left in the output directory and
    any stale report is removed.
    """
    config_path = Path(config_path)
    cfg = load_config(config_path)
    base = config_path.parent
    out = base / cfg["output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "INCOMPLETE"
    report_path = out / "report.json"
    report_path.unlink(missing_ok=True)
    marker.write_text("run in progress\n")
    try:
        report = _run(cfg, base, out)
    except StageError as exc:
        marker.write_text(f"{exc}\n")
        raise
    except Exception as exc:  # noqa: BLE001
        marker.write_text(f"[report] {exc}\n")
        raise StageError("report", str(exc)) from exc
    report_path.write_text(report.to_json())
    marker.unlink()
    return report


def _run(cfg: dict, base: Path, out: Path) -> EvalReport:
    try:
        manifest = load_manifest(base / cfg["manifest"])
    except ManifestError as exc:
        raise StageError("manifest", str(exc)) from exc
    try:
        model = load_model(cfg["model"], base)
    except (ModelLoadError, ValueError) as exc:
        raise StageError("model", str(exc)) from exc
    try:
        rules = [SplitRule.from_dict(name, spec) for name, spec in cfg["splits"].items()]
    except (ValueError, TypeError) as exc:
        raise StageError("config", str(exc)) from exc
    owner = {}
    for rule in rules:
        for r in rule.select(manifest):
            if r.id in owner:
                raise StageError("config", f"record {r.id!r} selected by both {owner[r.id]!r} and {rule.name!r}")
            owner[r.id] = rule.name

    threshold = float(cfg["threshold"])
    workers = int(cfg["workers"])
    artifacts: dict[str, list[str]] = {"predictions": [], "heatmaps": [], "wcam": [], "augment": []}
    splits = {}
    for rule in rules:
        ev = evaluate_split(model, manifest, rule, threshold, workers)
        log = write_predictions(ev.predictions, out / "predictions" / f"{rule.name}.csv")
        artifacts["predictions"].append(log.relative_to(out).as_posix())
        splits[rule.name] = {**ev.summary(), "rule": rule.to_dict()}
    (out / "rates.csv").write_text(report_rows_csv(
        {name: ConfusionCounts(**s["counts"]) for name, s in splits.items()}))

    pc = cfg["paired"]
    paired = None
    if manifest.pairs():
        paired = paired_shift_run(model, manifest, int(pc["levels"]), pc["filter"], pc["resample_to_gsd"], workers)
        _write_pairs_csv(paired, out / "paired.csv")

    if cfg.get("wcam") and paired and paired["pairs"]:
        artifacts_wcam = _wcam_stage(cfg["wcam"], model, manifest, paired, pc, out, workers)
        artifacts["heatmaps"].extend(artifacts_wcam["heatmaps"])
        artifacts["wcam"].extend(artifacts_wcam["wcam"])

    if cfg.get("augment") and cfg["augment"].get("preview"):
        artifacts["augment"].extend(_augment_preview(cfg["augment"], manifest, out))

    metadata = {
        "version": __version__,
        "config": cfg,
        "model": model.fingerprint(),
        "manifest_sha256": _file_digest(manifest.source),
        "threshold": threshold,
        "records": len(manifest),
    }
    return EvalReport(splits, paired, metadata, artifacts)


def _write_pairs_csv(block: dict, path: Path):
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ("pair_id", "p_source", "p_target", "delta_p", "ssim_low_scale", "euclid_low_scale")
        w.writerow(cols)
        for p in block["pairs"]:
            w.writerow([p[c] if c == "pair_id" else repr(p[c]) for c in cols])


def _wcam_stage(wc: dict, model, manifest: DatasetManifest, paired: dict, pc: dict, out: Path,
                workers: int) -> dict:
    ranked = sorted(paired["pairs"], key=lambda p: (-p["delta_p"], p["pair_id"]))[: int(wc["top_k"])]
    by_pair = {a.pair_id: (a, b) for a, b in manifest.pairs()}
    made = {"heatmaps": [], "wcam": []}
    try:
        for entry in ranked:
            src, tgt = by_pair[entry["pair_id"]]
            gsd = max(src.gsd_cm_per_px, tgt.gsd_cm_per_px, pc["resample_to_gsd"] or 0.0)
            for rec in (src, tgt):
                img = load_for_rule(rec, gsd)
                grid = WaveletGrid(int(wc["levels"]), int(wc["grid"]), img.shape[:2])
                if wc.get("cells") not in (None, grid.grid_cells):
                    raise ValueError(f"configured K={wc['cells']} but the grid has {grid.grid_cells} cells")
                plan = MaskPlan(grid.grid_cells, int(wc["samples"]), wc["sequence"], int(wc["seed"]))
                result = compute_wcam(model, img, plan, grid, wc["filter"], workers=workers)
                result.meta = {"record": rec.id, "pair_id": rec.pair_id, "delta_p": entry["delta_p"]}
                stem = f"{rec.pair_id}_{rec.provider}"
                json_path = out / "wcam" / f"{stem}.json"
                json_path.parent.mkdir(parents=True, exist_ok=True)
                json_path.write_text(result.to_json() + "\n")
                paths = render_heatmaps(result, img, out / "heatmaps" / stem)
                made["wcam"].append(json_path.relative_to(out).as_posix())
                made["heatmaps"].extend(p.relative_to(out).as_posix() for p in paths)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise StageError("wcam", str(exc)) from exc
    return made


def _augment_preview(ac: dict, manifest: DatasetManifest, out: Path) -> list[str]:
    try:
        rec = manifest.records[0]
        img = load_image(rec.image_path)
        res = blur_then_perturb(img, BlurConfig(float(ac.get("blur_sigma", 2.0))),
                                WaveletPerturbConfig(float(ac.get("wp_fraction", 0.2)), seed=int(ac.get("seed", 0))))
        path = save_image(res, out / "augment" / f"{rec.id}_blur_wp.png")
    except Exception as exc:  # noqa: BLE001
        raise StageError("augment", str(exc)) from exc
    return [path.relative_to(out).as_posix()]
