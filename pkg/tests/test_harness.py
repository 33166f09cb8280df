import json
from pathlib import Path

import numpy as np
import pytest

from wavescale.harness.cli import main
from wavescale.harness.errors import StageError
from wavescale.harness.manifest import (
    DEFAULT_SPLITS,
    ManifestError,
    ManifestRecord,
    SplitRule,
    load_manifest,
    write_manifest,
)
from wavescale.harness.models import (
    BlackBoxModel,
    ConstantModel,
    DetailEnergyModel,
    LabelOracleModel,
    ModelLoadError,
    SubbandEnergyModel,
    load_model,
)
from wavescale.harness.resample import load_image, resample_gsd, resize_area, save_image
from wavescale.harness.runner import (
    evaluate_split,
    paired_shift_run,
    read_predictions,
    replay_counts,
    run_benchmark,
    write_predictions,
)
from wavescale.harness.toy import make_toy_dataset
from wavescale.metrics import rates_and_f1

HEADER = "id,image_path,label,provider,gsd_cm_per_px,region_tag,pair_id\n"
TABLE1 = Path(__file__).parent / "fixtures" / "table1"


def write_csv(path, rows):
    path.write_text(HEADER + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


def build_dataset(root: Path, n=8, paired=False, side=32) -> Path:
    """``n`` random images (alternating labels) and a manifest over them."""
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for k in range(n):
        img = np.random.default_rng(k).random((side, side, 3))
        path = save_image(img, root / "images" / f"r{k:02d}.png")
        provider = "ign" if paired and k % 2 else "google"
        pair = f"p{k // 2:02d}" if paired else None
        records.append(ManifestRecord(f"r{k:02d}", path.relative_to(root), "pv" if k % 2 == 0 else "no_pv",
                                      provider, 10.0, "fr", pair))
    return write_manifest(records, root / "manifest.csv")


# manifest


def test_empty_manifest(tmp_path):
    assert len(load_manifest(write_csv(tmp_path / "m.csv", []))) == 0


def test_negative_gsd_names_row(tmp_path):
    (tmp_path / "a.png").write_bytes(b"")
    path = write_csv(tmp_path / "m.csv", ["a,a.png,pv,google,-1,fr,"])
    with pytest.raises(ManifestError, match=r"row 2 field 'gsd_cm_per_px'"):
        load_manifest(path)


def test_pair_linking(tmp_path):
    for name in ("a", "b"):
        (tmp_path / f"{name}.png").write_bytes(b"")
    m = load_manifest(write_csv(tmp_path / "m.csv", ["b,b.png,pv,ign,20,fr,p1", "a,a.png,pv,google,10,fr,p1"]))
    [(src, tgt)] = m.pairs()
    assert (src.provider, tgt.provider) == ("google", "ign")
    assert [r.id for r in m.records] == ["a", "b"]


@pytest.mark.parametrize("rows,message", [
    (["a,a.png,pv,google,10,fr,p1"], "links 1 records"),
    (["a,a.png,pv,google,10,fr,p1", "b,b.png,pv,google,10,fr,p1"], "two 'google' records"),
    (["a,a.png,maybe,google,10,fr,"], "field 'label'"),
    (["a,a.png,pv,bing,10,fr,"], "field 'provider'"),
    (["a,a.png,pv,google,10,fr,", "a,b.png,pv,google,10,fr,"], "duplicate id"),
])
def test_manifest_schema_errors(tmp_path, rows, message):
    for name in ("a", "b"):
        (tmp_path / f"{name}.png").write_bytes(b"")
    with pytest.raises(ManifestError, match=message):
        load_manifest(write_csv(tmp_path / "m.csv", rows))


def test_missing_files_all_listed(tmp_path):
    path = write_csv(tmp_path / "m.csv", ["a,x.png,pv,google,10,fr,", "b,y.png,pv,google,10,fr,"])
    with pytest.raises(ManifestError) as info:
        load_manifest(path)
    assert "x.png" in str(info.value) and "y.png" in str(info.value)
    assert len(load_manifest(path, check_files=False)) == 2


def test_missing_header_columns(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,image_path\n")
    with pytest.raises(ManifestError, match="header lacks"):
        load_manifest(path)


def test_manifest_round_trip(tmp_path):
    path = build_dataset(tmp_path, 4, paired=True)
    again = write_manifest(load_manifest(path).records, tmp_path / "copy.csv")
    assert again.read_text() == path.read_text()


def test_default_splits_are_disjoint_on_toy(tmp_path):
    manifest = load_manifest(Path(make_toy_dataset(tmp_path)).parent / "manifest.csv")
    seen = {}
    for name, spec in DEFAULT_SPLITS.items():
        records = SplitRule.from_dict(name, spec).select(manifest)
        assert records, name
        for r in records:
            assert r.id not in seen, (r.id, name, seen.get(r.id))
            seen[r.id] = name


def test_split_rule_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown keys"):
        SplitRule.from_dict("x", {"provider": "google"})


# resampling


def test_resample_halves_side():
    assert resample_gsd(np.zeros((256, 256, 3)), 10, 20).shape == (128, 128, 3)


def test_resample_identity_and_constant():
    x = np.random.default_rng(0).random((30, 30))
    np.testing.assert_array_equal(resample_gsd(x, 10, 10), x)
    out = resample_gsd(np.full((40, 40), 0.3), 10, 30)
    assert out.shape == (13, 13)
    np.testing.assert_allclose(out, 0.3, atol=1e-12)


@pytest.mark.parametrize("to", [15.0, 20.0, 37.0])
def test_resample_preserves_mean(to):
    x = np.random.default_rng(1).random((64, 64, 3))
    assert abs(resample_gsd(x, 10, to).mean() - x.mean()) < 1e-3


def test_resample_errors():
    with pytest.raises(NotImplementedError):
        resample_gsd(np.zeros((8, 8)), 20, 10)
    with pytest.raises(ValueError):
        resample_gsd(np.zeros((8, 8)), 0, 10)
    with pytest.raises(NotImplementedError):
        resize_area(np.zeros((8, 8)), (9, 8))


def test_image_io_round_trip(tmp_path):
    x = np.round(np.random.default_rng(2).random((8, 8, 3)) * 255) / 255
    np.testing.assert_allclose(load_image(save_image(x, tmp_path / "x.png")), x, atol=1e-12)


# models


def test_load_model_kinds(tmp_path):
    assert isinstance(load_model({"kind": "constant", "value": 0.2}), ConstantModel)
    assert isinstance(load_model({"kind": "label_oracle"}), LabelOracleModel)
    m = load_model({"kind": "detail_energy", "filter": "db2", "detail_levels": [1, 2]})
    assert isinstance(m, DetailEnergyModel) and m.filt == "db2"
    assert isinstance(load_model({"kind": "subband_energy", "level": 1, "orientation": "vertical"}),
                      SubbandEnergyModel)
    with pytest.raises(ModelLoadError, match="unknown model kind"):
        load_model({"kind": "resnet"})
    with pytest.raises(ModelLoadError, match="bad parameters"):
        load_model({"kind": "constant", "colour": 1})
    with pytest.raises(ModelLoadError, match="not found"):
        load_model({"kind": "onnx", "path": "missing.onnx"}, tmp_path)
    with pytest.raises(ModelLoadError, match="not found"):
        load_model({"kind": "scattering", "head": "missing.json"}, tmp_path)


def test_batched_predictions_match_single():
    imgs = np.random.default_rng(3).random((5, 16, 16, 3))
    for model in (SubbandEnergyModel(2, "diagonal", levels=2), DetailEnergyModel((1, 2), levels=2)):
        np.testing.assert_allclose(model.predict_batch(imgs), [model.predict(im) for im in imgs], atol=1e-15)


def test_fingerprint_tracks_params():
    assert ConstantModel(0.2).fingerprint() != ConstantModel(0.3).fingerprint()
    assert ConstantModel(0.2).fingerprint() == ConstantModel(0.2).fingerprint()


def test_detail_model_drops_under_blur():
    from wavescale.augment import gaussian_blur

    x = np.random.default_rng(4).random((32, 32))
    m = DetailEnergyModel()
    assert m.predict(gaussian_blur(x)) < m.predict(x)


# split evaluation


def test_oracle_model_is_perfect(tmp_path):
    m = load_manifest(build_dataset(tmp_path))
    ev = evaluate_split(LabelOracleModel(), m, SplitRule("all"))
    r = rates_and_f1(ev.counts)
    assert r["fpr"] == 0.0 and r["fnr"] == 0.0


def test_constant_model_predicts_all_positive(tmp_path):
    m = load_manifest(build_dataset(tmp_path))
    r = rates_and_f1(evaluate_split(ConstantModel(0.7), m, SplitRule("all"), threshold=0.5).counts)
    assert r["tnr"] == 0.0 and r["tpr"] == 1.0


class FlakyModel(BlackBoxModel):
    name = "flaky"

    def __init__(self, broken):
        self.broken = set(broken)

    def predict_record(self, record, image):
        if record.id in self.broken:
            raise RuntimeError("inference failed")
        return 0.6


def test_failures_are_logged_and_skipped(tmp_path):
    m = load_manifest(build_dataset(tmp_path, n=40))
    ev = evaluate_split(FlakyModel({"r03", "r07"}), m, SplitRule("all"))
    assert ev.skipped == 2 and ev.counts.total == 38
    bad = [r for r in ev.predictions if r.error]
    assert [r.id for r in bad] == ["r03", "r07"] and "inference failed" in bad[0].error


def test_too_many_failures_abort(tmp_path):
    m = load_manifest(build_dataset(tmp_path, n=40))
    with pytest.raises(StageError) as info:
        evaluate_split(FlakyModel({"r01", "r02", "r03"}), m, SplitRule("all"))
    assert info.value.stage == "evaluate" and info.value.exit_code == 13


def test_out_of_range_probability_is_a_failure(tmp_path):
    class Bad(BlackBoxModel):
        def predict(self, image):
            return 1.5

    with pytest.raises(StageError, match="8/8"):
        evaluate_split(Bad(), load_manifest(build_dataset(tmp_path)), SplitRule("all"))


def test_empty_split_rejected(tmp_path):
    with pytest.raises(StageError, match="selects no records"):
        evaluate_split(ConstantModel(), load_manifest(build_dataset(tmp_path)), SplitRule("x", ("other",)))


def test_replay_equivalence(tmp_path):
    m = load_manifest(build_dataset(tmp_path, n=12))
    ev = evaluate_split(DetailEnergyModel(threshold=0.05), m, SplitRule("all"))
    rows = read_predictions(write_predictions(ev.predictions, tmp_path / "log.csv"))
    assert replay_counts(rows) == ev.counts
    assert [r.probability for r in rows] == [r.probability for r in ev.predictions]


@pytest.mark.parametrize("split", ["baseline", "provider_shift"])
def test_threshold_monotonicity(split):
    rows = read_predictions(TABLE1 / f"{split}.csv")
    last = None
    for t in np.linspace(0.0, 1.0, 21):
        r = rates_and_f1(replay_counts(rows, float(t)))
        if last is not None:
            assert r["tpr"] <= last["tpr"] and r["tnr"] >= last["tnr"]
        last = r


def test_thread_count_does_not_change_results(tmp_path):
    m = load_manifest(build_dataset(tmp_path, n=16))
    model = DetailEnergyModel(threshold=0.05)
    a = evaluate_split(model, m, SplitRule("all"), workers=1)
    b = evaluate_split(model, m, SplitRule("all"), workers=4)
    assert a.counts == b.counts and a.predictions == b.predictions


def test_prediction_log_rejects_bad_rows(tmp_path):
    path = tmp_path / "log.csv"
    path.write_text("id,label,probability,predicted\na,cat,0.5,1\n")
    with pytest.raises(ValueError, match="label"):
        read_predictions(path)
    path.write_text("id,label\n")
    with pytest.raises(ValueError, match="lacks columns"):
        read_predictions(path)


# paired shifts


def test_identical_pairs(tmp_path):
    records = []
    for k in range(3):
        img = np.random.default_rng(k).random((32, 32, 3))
        for prov in ("google", "ign"):
            p = save_image(img, tmp_path / f"{k}{prov}.png")
            records.append(ManifestRecord(f"{k}{prov}", p.relative_to(tmp_path), "pv", prov, 10.0, "fr", f"p{k}"))
    records.append(ManifestRecord("lone", Path("0google.png"), "pv", "google", 10.0, "fr"))
    m = load_manifest(write_manifest(records, tmp_path / "m.csv"))
    block = paired_shift_run(DetailEnergyModel(), m, levels=2)
    assert block["n"] == 3 and block["unpaired_records"] == 1
    assert all(p["delta_p"] == 0.0 and abs(p["ssim_low_scale"] - 1.0) < 1e-12 for p in block["pairs"])
    assert set(block["analysis"]["undefined"]) == {"ssim_vs_delta_p", "euclid_vs_delta_p"}


def test_pairs_are_compared_at_the_coarser_gsd(tmp_path):
    img = np.random.default_rng(0).random((64, 64, 3))
    a = save_image(img, tmp_path / "a.png")
    b = save_image(resample_gsd(img, 10, 20), tmp_path / "b.png")
    records = [ManifestRecord("a", Path("a.png"), "pv", "google", 10.0, "fr", "p"),
               ManifestRecord("b", Path("b.png"), "pv", "ign", 20.0, "fr", "p")]
    block = paired_shift_run(ConstantModel(), load_manifest(write_manifest(records, tmp_path / "m.csv")), levels=2)
    assert block["pairs"][0]["ssim_low_scale"] > 0.99
    assert block["analysis"] is None
    assert a.exists() and b.exists()


# full runs and the command line


def _config(root: Path, **overrides) -> Path:
    cfg = {"model": {"kind": "constant", "value": 0.7}, "manifest": "manifest.csv",
           "splits": {"all": {}}, "output_dir": "out"}
    cfg.update(overrides)
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_small_benchmark_writes_artifacts(tmp_path):
    build_dataset(tmp_path, n=8, paired=True)
    cfg = _config(tmp_path, wcam={"samples": 8, "levels": 2, "grid": 1, "top_k": 1},
                  augment={"preview": True})
    report = run_benchmark(cfg)
    out = tmp_path / "out"
    assert set(report.splits) == {"all"}
    assert report.paired["n"] == 4
    assert (out / "report.json").exists() and not (out / "INCOMPLETE").exists()
    assert report.artifacts["predictions"] == ["predictions/all.csv"]
    assert len(report.artifacts["heatmaps"]) == 4 and len(report.artifacts["augment"]) == 1
    assert json.loads((out / "report.json").read_text())["splits"]["all"]["rates"]["tnr"] == 0.0


def test_overlapping_splits_rejected(tmp_path):
    build_dataset(tmp_path)
    cfg = _config(tmp_path, splits={"a": {}, "b": {"providers": ["google"]}})
    with pytest.raises(StageError, match="selected by both") as info:
        run_benchmark(cfg)
    assert info.value.exit_code == 10
    assert (tmp_path / "out" / "INCOMPLETE").exists()


@pytest.mark.parametrize("setup,code", [
    (lambda root: _config(root, model={"kind": "onnx", "path": "missing.onnx"}), 12),
    (lambda root: _config(root, manifest="nope.csv"), 11),
    (lambda root: _config(root, colour="red"), 10),
    (lambda root: root / "absent.json", 10),
])
def test_cli_stage_exit_codes(tmp_path, capsys, setup, code):
    build_dataset(tmp_path)
    assert main(["bench", "run", str(setup(tmp_path))]) == code
    err = capsys.readouterr().err
    assert err.startswith("[")


def test_cli_bench_run_success(tmp_path, capsys):
    build_dataset(tmp_path)
    assert main(["bench", "run", str(_config(tmp_path))]) == 0
    assert "all" in capsys.readouterr().out


def test_cli_wcam_explain(tmp_path, capsys):
    img = save_image(np.random.default_rng(0).random((32, 32, 3)), tmp_path / "x.png")
    code = main(["wcam", "explain", str(img), "--model",
                 '{"kind": "subband_energy", "level": 1, "orientation": "horizontal"}',
                 "--grid", "2", "--samples", "16", "--out", str(tmp_path / "res" / "x")])
    assert code == 0
    out = capsys.readouterr().out
    assert "budget=" in out
    doc = json.loads((tmp_path / "res" / "x.json").read_text())
    assert doc["budget"] == 16 * (10 * 4 + 2)
    assert (tmp_path / "res" / "x_wavelet.png").exists() and (tmp_path / "res" / "x_overlay.png").exists()
    assert main(["wcam", "explain", str(img), "--model", "nonsense"]) == 12


def test_cli_augment_apply(tmp_path, capsys):
    img = save_image(np.random.default_rng(0).random((32, 32, 3)), tmp_path / "x.png")
    out = tmp_path / "aug.png"
    assert main(["augment", "apply", str(img), "--out", str(out)]) == 0
    assert load_image(out).shape == (32, 32, 3)
    assert main(["augment", "apply", str(tmp_path / "missing.png")]) == 16
    assert main(["augment", "apply", str(img), "--blur-sigma", "0", "--wp-fraction", "0.5",
                 "--out", str(out)]) == 0


def test_cli_metrics_replay(capsys):
    assert main(["metrics", "replay", str(TABLE1 / "provider_shift.csv")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["counts"] == {"tp": 32, "fp": 7, "tn": 133, "fn": 68}
    assert main(["metrics", "replay", str(TABLE1 / "provider_shift.csv"), "--threshold", "1.0"]) == 0
    assert json.loads(capsys.readouterr().out)["counts"]["tp"] == 0
    assert main(["metrics", "replay", "missing.csv"]) == 19


def test_cli_scatter_fit_and_predict(tmp_path, capsys):
    cfg_path = make_toy_dataset(tmp_path / "toy")
    head = tmp_path / "head.json"
    args = ["--depth", "1", "--orientations", "4"]
    assert main(["scatter", "fit", str(cfg_path.parent / "manifest.csv"), "--out", str(head),
                 "--provider", "google", "--epochs", "50", *args]) == 0
    assert "trained on 24 records" in capsys.readouterr().out
    image = cfg_path.parent / "images" / "gsd00.png"
    assert main(["scatter", "predict", str(image), "--head", str(head), *args]) == 0
    p = float(capsys.readouterr().out.split("\t")[1])
    assert 0.0 < p < 1.0
    assert main(["scatter", "predict", str(image), "--head", str(head)]) == 18
    assert main(["scatter", "fit", str(tmp_path / "none.csv")]) == 11
