"""Command line entry point: ``wavescale <group> <verb> ...``.

Every failure is reported as ``[stage] message`` on stderr and mapped to the
stage's exit code; success exits with 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import StageError

logger = logging.getLogger("wavescale")


def _model_spec(text: str) -> tuple[dict, Path]:
    """Adapter spec from a JSON file, an inline JSON object or a bare kind name."""
    path = Path(text)
    if path.suffix == ".json" and path.is_file():
        return json.loads(path.read_text(encoding="utf-8")), path.parent
    if text.lstrip().startswith("{"):
        return json.loads(text), Path(".")
    return {"kind": text}, Path(".")


def cmd_bench_run(args) -> int:
    from .runner import run_benchmark

    report = run_benchmark(args.config)
    for name, split in report.splits.items():
        rates = split["rates"]
        shown = " ".join(f"{k}={'n/a' if rates[k] is None else f'{rates[k]:.3f}'}"
                         for k in ("f1", "tpr", "tnr", "fpr", "fnr"))
        print(f"{name:<16} n={split['n']:<4} {shown}")
    if report.paired and report.paired.get("analysis"):
        a = report.paired["analysis"]
        for key in ("ssim_vs_delta_p", "euclid_vs_delta_p"):
            c = a[key]
            print(f"{key:<16} " + ("undefined" if c["r"] is None else f"r={c['r']:+.3f} p={c['p_value']:.3g} n={c['n']}"))
    return 0


def cmd_wcam_explain(args) -> int:
    from ..sensitivity import MaskPlan
    from ..wcam import WaveletGrid, compute_wcam, render_heatmaps
    from .models import ModelLoadError, load_model
    from .resample import load_image

    try:
        spec, base = _model_spec(args.model)
        model = load_model(spec, base)
    except (ModelLoadError, ValueError, OSError) as exc:
        raise StageError("model", str(exc)) from exc
    try:
        img = load_image(args.image)
        grid = WaveletGrid(args.levels, args.grid, img.shape[:2])
        plan = MaskPlan(grid.grid_cells, args.samples, args.sequence, args.seed)
        result = compute_wcam(model, img, plan, grid, args.filter, workers=args.workers)
        result.meta = {"image": Path(args.image).name}
        prefix = Path(args.out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        json_path = prefix.with_name(prefix.name + ".json")
        json_path.write_text(result.to_json() + "\n")
        paths = render_heatmaps(result, img, prefix)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise StageError("wcam", str(exc)) from exc
    emb = result.scale_embedding
    top = int(np.argmax(emb.values))
    print(f"budget={result.budget} degenerate={result.degenerate} dominant={emb.labels[top]}")
    for p in (json_path, *paths):
        print(p)
    return 0


def cmd_augment_apply(args) -> int:
    from ..augment import BlurConfig, WaveletPerturbConfig, blur_then_perturb, gaussian_blur, wavelet_perturb
    from .resample import load_image, save_image

    try:
        img = load_image(args.image)
        wp = WaveletPerturbConfig(args.wp_fraction, tuple(args.target_levels), args.levels, args.filter, args.seed)
        if args.blur_sigma > 0 and args.wp_fraction > 0:
            out = blur_then_perturb(img, BlurConfig(args.blur_sigma), wp)
        elif args.blur_sigma > 0:
            out = gaussian_blur(img, BlurConfig(args.blur_sigma))
        else:
            out = wavelet_perturb(img, wp)
        path = save_image(out, args.out)
    except Exception as exc:  # noqa: BLE001
        raise StageError("augment", str(exc)) from exc
    print(path)
    return 0


def _scatter_config(args):
    from ..scattering import ScatteringConfig

    return ScatteringConfig(depth=args.depth, orientations=args.orientations, input_size=args.input_size,
                            pooling=args.pooling)


def cmd_scatter_fit(args) -> int:
    from ..scattering import HeadHyperparams, ScatteringModel, TrainingError, fit_head, scattering_forward
    from .manifest import ManifestError, SplitRule, load_manifest
    from .runner import load_for_rule

    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        raise StageError("manifest", str(exc)) from exc
    try:
        cfg = _scatter_config(args)
        rule = SplitRule("train", tuple(args.provider) if args.provider else None,
                         resample_to_gsd=args.resample_to_gsd)
        records = rule.select(manifest)
        model = ScatteringModel(None, cfg)
        feats = []
        for r in records:
            img = load_for_rule(r, rule.resample_to_gsd)
            feats.append(scattering_forward(model.prepare(img), cfg))
        hyper = HeadHyperparams(args.lr, args.l2, args.epochs)
        head = fit_head(feats, [r.target for r in records], hyper, cfg.fingerprint())
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(head.to_json() + "\n")
    except (TrainingError, ValueError, OSError) as exc:
        raise StageError("scatter", str(exc)) from exc
    print(f"trained on {len(records)} records, final loss {head.loss_history[-1]:.4f}")
    print(args.out)
    return 0


def cmd_scatter_predict(args) -> int:
    from ..scattering import LinearHead, ScatteringModel
    from .resample import load_image

    try:
        cfg = _scatter_config(args)
        head = LinearHead.from_json(Path(args.head).read_text(encoding="utf-8"))
        if head.config_fingerprint and head.config_fingerprint != cfg.fingerprint():
            raise ValueError("head was trained with a different scattering configuration")
        model = ScatteringModel(head, cfg)
        for image in args.images:
            print(f"{image}\t{model.predict(load_image(image)):.6f}")
    except (ValueError, OSError, KeyError) as exc:
        raise StageError("scatter", str(exc)) from exc
    return 0


def cmd_metrics_replay(args) -> int:
    from ..metrics import RATE_COLUMNS, rates_and_f1
    from .runner import read_predictions, replay_counts

    try:
        rows = read_predictions(args.log)
        counts = replay_counts(rows, args.threshold)
    except (ValueError, OSError) as exc:
        raise StageError("replay", str(exc)) from exc
    rates = rates_and_f1(counts)
    doc = {"counts": {"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn},
           "rates": {k: rates[k] for k in RATE_COLUMNS}, "skipped": sum(r.probability is None for r in rows)}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_toy_make(args) -> int:
    from .toy import make_toy_dataset

    print(make_toy_dataset(args.directory))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavescale", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    groups = parser.add_subparsers(dest="group", required=True)

    bench = groups.add_parser("bench", help="distribution-shift benchmark").add_subparsers(dest="verb", required=True)
    p = bench.add_parser("run", help="run every stage of a benchmark config")
    p.add_argument("config")
    p.set_defaults(func=cmd_bench_run)

    wcam = groups.add_parser("wcam", help="wavelet-domain attribution").add_subparsers(dest="verb", required=True)
    p = wcam.add_parser("explain", help="explain one image")
    p.add_argument("image")
    p.add_argument("--model", required=True, help="adapter JSON file, inline JSON or model kind")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--grid", type=int, default=4, help="cells per subband side")
    p.add_argument("--samples", type=int, default=1024, help="base sample count N")
    p.add_argument("--sequence", default="sobol", choices=("sobol", "halton", "random"))
    p.add_argument("--filter", default="haar", choices=("haar", "db2"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="wcam", help="output prefix")
    p.set_defaults(func=cmd_wcam_explain)

    aug = groups.add_parser("augment", help="blur and wavelet perturbation").add_subparsers(dest="verb", required=True)
    p = aug.add_parser("apply", help="augment one image")
    p.add_argument("image")
    p.add_argument("--blur-sigma", type=float, default=2.0, help="0 disables the blur")
    p.add_argument("--wp-fraction", type=float, default=0.2, help="0 disables the perturbation")
    p.add_argument("--target-levels", type=int, nargs="+", default=[1])
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--filter", default="haar", choices=("haar", "db2"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="augmented.png")
    p.set_defaults(func=cmd_augment_apply)

    scat = groups.add_parser("scatter", help="scattering features and linear head").add_subparsers(
        dest="verb", required=True)
    for verb, func in (("fit", cmd_scatter_fit), ("predict", cmd_scatter_predict)):
        p = scat.add_parser(verb)
        if verb == "fit":
            p.add_argument("manifest")
            p.add_argument("--out", default="head.json")
            p.add_argument("--provider", nargs="+")
            p.add_argument("--resample-to-gsd", type=float)
            p.add_argument("--lr", type=float, default=0.1)
            p.add_argument("--l2", type=float, default=1e-4)
            p.add_argument("--epochs", type=int, default=500)
        else:
            p.add_argument("images", nargs="+")
            p.add_argument("--head", required=True)
        p.add_argument("--depth", type=int, default=2, help="number of scales m")
        p.add_argument("--orientations", type=int, default=8)
        p.add_argument("--input-size", type=int, default=64)
        p.add_argument("--pooling", type=int, default=1)
        p.set_defaults(func=func)

    met = groups.add_parser("metrics", help="recount stored predictions").add_subparsers(dest="verb", required=True)
    p = met.add_parser("replay")
    p.add_argument("log")
    p.add_argument("--threshold", type=float, help="re-threshold stored probabilities")
    p.set_defaults(func=cmd_metrics_replay)

    toy = groups.add_parser("toy", help="bundled synthetic dataset").add_subparsers(dest="verb", required=True)
    p = toy.add_parser("make")
    p.add_argument("directory")
    p.set_defaults(func=cmd_toy_make)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
