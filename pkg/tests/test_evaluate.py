"""Metric oracles, report/table emission, and EPI slope estimation tests.

PSNR and SSIM are compared against scikit-image with matching settings
(Gaussian 11x11 window, sigma 1.5, population covariance, data range 1.0)
as an external cross-check; the acceptance suite carries its own
direct-formula oracle on top of this.
"""

import csv

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from ofpnet.data import synthesize_hr_scene
from ofpnet.errors import ColorspaceError, ReportError, SizeError
from ofpnet.evaluate import (
    PSNR_CAP_DB,
    MetricsReport,
    SceneMetrics,
    emit_table,
    estimate_epi_slope,
    estimate_lf_disparity,
    evaluate_baseline,
    evaluate_model,
    export_epi_strip,
    psnr_grid,
    psnr_y,
    report_to_json,
    ssim_grid,
    ssim_y,
    write_report,
)
from ofpnet.lightfield import (
    Colorspace,
    EpiOrientation,
    LightField,
    ScaleTag,
    extract_epi,
    extract_y,
)
from ofpnet.model import ModelConfig, build_model

from conftest import make_lf


def _pair(seed, shape=(1, 1, 32, 32, 1), noise=0.05):
    rng = np.random.default_rng(seed)
    gt = rng.random(shape).astype(np.float32)
    sr = np.clip(gt + rng.normal(0, noise, shape), 0, 1).astype(np.float32)
    return (
        LightField(sr, Colorspace.Y, ScaleTag.SR),
        LightField(gt, Colorspace.Y, ScaleTag.GT),
    )


# ---------------------------------------------------------------------------
# PSNR / SSIM
# ---------------------------------------------------------------------------

class TestMetrics:
    def test_psnr_matches_skimage(self):
        for seed in range(50):
            sr, gt = _pair(seed)
            ref = peak_signal_noise_ratio(
                gt.data[0, 0, :, :, 0], sr.data[0, 0, :, :, 0], data_range=1.0
            )
            assert abs(psnr_y(sr, gt) - ref) < 1e-6

    def test_ssim_matches_skimage(self):
        for seed in range(50):
            sr, gt = _pair(seed)
            ref = structural_similarity(
                gt.data[0, 0, :, :, 0], sr.data[0, 0, :, :, 0],
                data_range=1.0, gaussian_weights=True, sigma=1.5,
                use_sample_covariance=False, win_size=11,
            )
            assert abs(ssim_y(sr, gt) - ref) < 1e-4

    def test_uniform_one_lsb_error(self):
        gt = make_lf(seed=3)
        gt.data *= 0.9  # keep headroom for the +1/255 shift
        sr = LightField(
            gt.data + np.float32(1 / 255), Colorspace.Y, ScaleTag.SR
        )
        assert psnr_y(sr, gt) == pytest.approx(48.1308, abs=0.01)

    def test_identical_views_hit_cap(self, tiny_y):
        assert psnr_y(tiny_y, tiny_y) == PSNR_CAP_DB
        assert ssim_y(tiny_y, tiny_y) == pytest.approx(1.0)

    def test_grids_are_per_view(self, tiny_y):
        sr, gt = _pair(0, shape=(2, 2, 32, 32, 1))
        pg = psnr_grid(sr, gt)
        sg = ssim_grid(sr, gt)
        assert pg.shape == (2, 2) and sg.shape == (2, 2)
        assert psnr_y(sr, gt) == pytest.approx(pg.mean())
        assert ssim_y(sr, gt) == pytest.approx(sg.mean())

    def test_rejects_rgb(self, tiny_rgb):
        with pytest.raises(ColorspaceError):
            psnr_y(tiny_rgb, tiny_rgb)

    def test_rejects_size_mismatch(self, tiny_y):
        with pytest.raises(SizeError):
            psnr_y(tiny_y, make_lf(shape=(2, 2, 8, 8, 1)))

    def test_ssim_needs_window_sized_views(self):
        small = make_lf(shape=(1, 1, 8, 8, 1))
        with pytest.raises(SizeError):
            ssim_y(small, small)


# ---------------------------------------------------------------------------
# Scene evaluation and reports
# ---------------------------------------------------------------------------

class TestReports:
    def test_identity_model_equals_baseline(self, dataset):
        cfg = ModelConfig(
            channels=4, projection_depth_m=1, fusion_blocks=1, angular_size=(2, 2)
        )
        model = build_model(cfg, seed=0)  # zero head: exact identity
        via_model = evaluate_model(model, dataset, "test", 2)
        direct = evaluate_baseline(dataset, "test", 2)
        assert via_model.per_scene.keys() == direct.per_scene.keys()
        for sid in via_model.per_scene:
            a, b = via_model.per_scene[sid], direct.per_scene[sid]
            assert a.per_view_psnr == b.per_view_psnr
            assert a.per_view_ssim == b.per_view_ssim
        assert via_model.aggregate_psnr == direct.aggregate_psnr
        assert via_model.aggregate_ssim == direct.aggregate_ssim

    def test_aggregate_is_mean_of_scene_means(self, dataset):
        rep = evaluate_baseline(dataset, "train", 4)
        scene_means = [m.mean_psnr for m in rep.per_scene.values()]
        assert rep.aggregate_psnr == pytest.approx(np.mean(scene_means))

    def test_empty_split_rejected(self, tmp_path):
        from ofpnet.data import LightFieldDataset, write_synthetic_dataset

        write_synthetic_dataset(
            tmp_path, 2, height=16, width=16, angular_size=(2, 2),
            scales=(2,), split_counts=(2, 0, 0), seed=0,
        )
        ds = LightFieldDataset.from_root(tmp_path)
        with pytest.raises(ReportError):
            evaluate_baseline(ds, "test", 2)

    def test_report_json_round_trip(self, dataset):
        rep = evaluate_baseline(dataset, "test", 2)
        blob = report_to_json(rep)
        assert blob["variant_label"] == "identity"
        assert blob["scale"] == 2
        assert set(blob["per_scene"]) == set(rep.per_scene)

    def test_write_report_files(self, dataset, tmp_path):
        rep = evaluate_baseline(dataset, "test", 2)
        csv_path, txt_path = write_report(rep, tmp_path)
        with open(csv_path) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["scene"] for r in rows[:-1]] == list(rep.per_scene)
        assert rows[-1]["scene"] == "aggregate"
        assert float(rows[-1]["psnr_db"]) == pytest.approx(rep.aggregate_psnr)
        text = txt_path.read_text()
        assert "mean over all views" in text

    def test_sr_dump(self, dataset, tmp_path):
        cfg = ModelConfig(
            channels=4, projection_depth_m=1, fusion_blocks=1, angular_size=(2, 2)
        )
        model = build_model(cfg, seed=0)
        evaluate_model(model, dataset, "test", 2, dump_sr_dir=tmp_path)
        sid = dataset.scene_ids("test")[0]
        assert (tmp_path / sid / "view_0_0.png").exists()


def _fake_report(label, psnr, scale=4):
    metrics = SceneMetrics(
        per_view_psnr=((psnr,),), per_view_ssim=((0.9,),),
        mean_psnr=psnr, mean_ssim=0.9,
    )
    return MetricsReport(
        variant_label=label, config_fingerprint="cafe", scale=scale,
        split="test", per_scene={"s0": metrics},
        aggregate_psnr=psnr, aggregate_ssim=0.9,
        view_aggregation="mean over all views",
    )


class TestTables:
    def test_component_table_shape(self, tmp_path):
        labels = (
            "freq:h", "freq:mh", "freq:lmh",
            "proj:none", "proj:interact", "proj:fp", "proj:full",
        )
        reports = [_fake_report(lab, 30.0 + i) for i, lab in enumerate(labels)]
        paths = emit_table(reports, "table3", tmp_path, name="components")
        with open(paths[0]) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 7
        assert rows[0]["variant"] == "freq:h"
        full = rows[-1]
        assert (full["f_low"], full["f_mid"], full["f_high"]) == ("yes",) * 3
        assert (full["interaction"], full["projection"]) == ("yes", "yes")
        none = rows[3]
        assert (none["interaction"], none["projection"]) == ("no", "no")

    def test_scale_table_layouts(self, tmp_path):
        reports = [
            _fake_report("ofpnet", 31.0, scale=2),
            _fake_report("ofpnet", 28.0, scale=4),
            _fake_report("identity", 27.0, scale=4),
        ]
        for layout in ("table1", "table2"):
            paths = emit_table(reports, layout, tmp_path)
            with open(paths[0]) as fh:
                rows = list(csv.DictReader(fh))
            assert {r["method"] for r in rows} == {"ofpnet", "identity"}
            by_label = {r["method"]: r for r in rows}
            assert float(by_label["ofpnet"]["x4_psnr_db"]) == 28.0
            assert by_label["identity"]["x2_psnr_db"] == "-"

    def test_unknown_layout(self, tmp_path):
        with pytest.raises(ReportError):
            emit_table([_fake_report("a", 30.0)], "table9", tmp_path)

    def test_duplicate_rows_rejected(self, tmp_path):
        reports = [_fake_report("a", 30.0), _fake_report("a", 31.0)]
        with pytest.raises(ReportError):
            emit_table(reports, "table3", tmp_path)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ReportError):
            emit_table([], "table3", tmp_path)


# ---------------------------------------------------------------------------
# EPI export and slope estimation
# ---------------------------------------------------------------------------

class TestEpi:
    def test_export_writes_magnified_strips(self, tmp_path):
        lf = synthesize_hr_scene(height=32, width=32, disparity=0.5, seed=0)
        paths = export_epi_strip(lf, [(2, 10), (2, 20)], tmp_path, magnify=8)
        assert [p.name for p in paths] == [
            "epi_horizontal_v2_l10.png", "epi_horizontal_v2_l20.png"
        ]
        from PIL import Image

        with Image.open(paths[0]) as im:
            assert im.size == (32, 5 * 8)  # W x (views * magnify)

    @pytest.mark.parametrize("disparity", [-1.5, -0.7, 0.0, 0.4, 1.1, 1.5])
    def test_slope_recovers_disparity(self, disparity):
        lf = extract_y(
            synthesize_hr_scene(height=96, width=96, disparity=disparity, seed=11)
        )
        epi = extract_epi(lf, EpiOrientation.HORIZONTAL, 2, 48)
        assert abs(estimate_epi_slope(epi.data) - disparity) < 0.1

    @pytest.mark.parametrize("disparity", [-1.0, 0.6])
    def test_vertical_slope_matches(self, disparity):
        lf = extract_y(
            synthesize_hr_scene(height=96, width=96, disparity=disparity, seed=4)
        )
        epi = extract_epi(lf, EpiOrientation.VERTICAL, 2, 48)
        assert abs(estimate_epi_slope(epi.data) - disparity) < 0.1

    def test_field_level_estimate(self):
        lf = extract_y(
            synthesize_hr_scene(height=96, width=96, disparity=0.9, seed=2)
        )
        assert abs(estimate_lf_disparity(lf) - 0.9) < 0.1

    def test_slope_input_validation(self):
        with pytest.raises(SizeError):
            estimate_epi_slope(np.zeros((5, 5, 5)))
        with pytest.raises(SizeError):
            estimate_epi_slope(np.zeros((1, 16)))
